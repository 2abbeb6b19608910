#include "crel/mesh_kb.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "crel/errors.hpp"

namespace crel::mesh {

namespace {

// Parent position of a dotted tree number, empty when already a top segment.
std::string parent_position(const std::string& tree_number) {
    const auto pos = tree_number.rfind('.');
    if (pos == std::string::npos) return {};
    return tree_number.substr(0, pos);
}

void validate_tree_number(const std::string& tn, const std::string& code) {
    if (tn.empty()) throw ValidationError("record " + code + ": empty tree number");
    std::size_t start = 0;
    while (true) {
        const auto dot = tn.find('.', start);
        const auto len = (dot == std::string::npos ? tn.size() : dot) - start;
        if (len == 0) throw ValidationError("record " + code + ": tree number '" + tn + "' has an empty segment");
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
}

} // namespace

void MeshGraph::add_node(const std::string& code) {
    adjacency_.try_emplace(code);
}

void MeshGraph::add_edge(const std::string& a, const std::string& b) {
    if (a == b) return; // no self-loops
    add_node(a);
    add_node(b);
    if (adjacency_[a].insert(b).second) {
        adjacency_[b].insert(a);
        ++edge_count_;
    }
}

const std::set<std::string>& MeshGraph::neighbors(const std::string& code) const {
    auto it = adjacency_.find(code);
    if (it == adjacency_.end()) throw LookupError("unknown code: " + code);
    return it->second;
}

std::optional<int> MeshGraph::hop_distance(const std::string& a, const std::string& b, int cap) const {
    if (!has_node(a)) throw LookupError("unknown code: " + a);
    if (!has_node(b)) throw LookupError("unknown code: " + b);
    if (cap < 0) throw ConfigError("hop_distance cap must be >= 0");
    if (a == b) return 0;

    // Breadth-first search bounded by cap.
    std::unordered_map<std::string, int> dist{{a, 0}};
    std::deque<std::string> frontier{a};
    while (!frontier.empty()) {
        const std::string cur = frontier.front();
        frontier.pop_front();
        const int d = dist[cur];
        if (d >= cap) continue;
        for (const auto& next : adjacency_.at(cur)) {
            if (dist.count(next)) continue;
            if (next == b) return d + 1;
            dist[next] = d + 1;
            frontier.push_back(next);
        }
    }
    return std::nullopt;
}

KnowledgeBase::KnowledgeBase(std::vector<MeshRecord> records, std::string vocab_tag)
    : records_(std::move(records)), vocab_tag_(std::move(vocab_tag)) {
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& rec = records_[i];
        if (rec.code.empty()) throw ValidationError("record with empty code");
        if (!by_code_.emplace(rec.code, i).second)
            throw ValidationError("duplicate code: " + rec.code);
        for (const auto& tn : rec.tree_numbers) {
            validate_tree_number(tn, rec.code);
            if (!position_owner_.emplace(tn, rec.code).second)
                throw ValidationError("tree number '" + tn + "' owned by both " +
                                      position_owner_.at(tn) + " and " + rec.code);
        }
        if (rec.see_also.count(rec.code) || rec.pharm_actions.count(rec.code))
            throw ValidationError("record " + rec.code + " relates to itself");
    }
    build_graph();
}

void KnowledgeBase::build_graph() {
    for (const auto& rec : records_) graph_.add_node(rec.code);
    for (const auto& [position, code] : position_owner_) {
        const std::string parent = parent_position(position);
        if (parent.empty()) continue;
        auto it = position_owner_.find(parent);
        if (it == position_owner_.end()) continue; // orphan position acts as a root
        graph_.add_edge(it->second, code);
    }
}

const MeshRecord& KnowledgeBase::record(const std::string& code) const {
    auto it = by_code_.find(code);
    if (it == by_code_.end()) throw LookupError("unknown code: " + code);
    return records_[it->second];
}

std::string KnowledgeBase::token_for(const std::string& code) const {
    return concept_token(code, vocab_tag_);
}

std::unordered_set<std::string> KnowledgeBase::concept_tokens() const {
    std::unordered_set<std::string> out;
    out.reserve(records_.size());
    for (const auto& rec : records_) out.insert(concept_token(rec.code, vocab_tag_));
    return out;
}

std::size_t KnowledgeBase::total_tree_positions() const {
    return position_owner_.size();
}

std::vector<std::string> KnowledgeBase::traversal_positions() const {
    // position_owner_ is an ordered map, so child blocks are already sorted
    // by tree-number string. Children of position P are exactly the owned
    // positions of the form P.<segment>.
    std::vector<std::string> roots;
    std::map<std::string, std::vector<std::string>> children;
    for (const auto& [position, code] : position_owner_) {
        (void)code;
        const std::string parent = parent_position(position);
        if (!parent.empty() && position_owner_.count(parent))
            children[parent].push_back(position);
        else
            roots.push_back(position);
    }

    std::vector<std::string> order;
    order.reserve(position_owner_.size());
    std::function<void(const std::string&)> walk = [&](const std::string& position) {
        order.push_back(position);
        auto it = children.find(position);
        if (it == children.end()) return;
        for (const auto& child : it->second) walk(child);
    };
    for (const auto& root : roots) walk(root);
    return order;
}

std::vector<std::string> KnowledgeBase::traversal_order() const {
    std::vector<std::string> codes;
    const auto positions = traversal_positions();
    codes.reserve(positions.size());
    for (const auto& p : positions) codes.push_back(position_owner_.at(p));
    return codes;
}

std::string concept_token(const std::string& code, const std::string& vocab_tag) {
    if (code.empty() || vocab_tag.empty())
        throw ConfigError("concept_token requires non-empty code and vocabulary tag");
    return code + vocab_tag;
}

bool is_concept_token(const std::string& token, const std::string& vocab_tag) {
    if (vocab_tag.empty() || token.size() <= vocab_tag.size()) return false;
    return token.compare(token.size() - vocab_tag.size(), vocab_tag.size(), vocab_tag) == 0;
}

KnowledgeBase parse_knowledge_base(std::istream& in, const std::string& source_name,
                                   const std::string& vocab_tag) {
    std::vector<MeshRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source_name + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            MeshRecord rec;
            rec.code = obj.at("code").get<std::string>();
            rec.name = obj.at("name").get<std::string>();
            rec.definition = obj.value("definition", std::string{});
            for (const auto& tn : obj.value("tree_numbers", nlohmann::json::array()))
                rec.tree_numbers.push_back(tn.get<std::string>());
            for (const auto& c : obj.value("see_also", nlohmann::json::array()))
                rec.see_also.insert(c.get<std::string>());
            for (const auto& c : obj.value("pharm_actions", nlohmann::json::array()))
                rec.pharm_actions.insert(c.get<std::string>());
            if (rec.code.empty())
                throw ValidationError("empty code");
            records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source_name + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return KnowledgeBase(std::move(records), vocab_tag);
}

KnowledgeBase load_knowledge_base(const std::string& path, const std::string& vocab_tag) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open knowledge base: " + path);
    return parse_knowledge_base(in, path, vocab_tag);
}

} // namespace crel::mesh
