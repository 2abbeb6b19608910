#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace crel::mesh {

// One descriptor of a controlled vocabulary: code, preferred name, optional
// definition, the positions it occupies in the hierarchy, and the auxiliary
// see-also / pharmacological-action relations.
struct MeshRecord {
    std::string code;
    std::string name;
    std::string definition;
    std::vector<std::string> tree_numbers;
    std::set<std::string> see_also;
    std::set<std::string> pharm_actions;
};

// Undirected parent-child graph over codes. A tree position's parent is the
// record owning the position with the last dotted segment removed; positions
// whose parent path has no owning record act as roots.
class MeshGraph {
public:
    void add_node(const std::string& code);
    void add_edge(const std::string& a, const std::string& b);

    bool has_node(const std::string& code) const { return adjacency_.count(code) > 0; }
    std::size_t node_count() const { return adjacency_.size(); }
    std::size_t edge_count() const { return edge_count_; }
    const std::set<std::string>& neighbors(const std::string& code) const;

    // Shortest undirected path length up to cap; nullopt when farther.
    // Throws LookupError on unknown codes.
    std::optional<int> hop_distance(const std::string& a, const std::string& b, int cap) const;

private:
    std::unordered_map<std::string, std::set<std::string>> adjacency_;
    std::size_t edge_count_ = 0;
};

class KnowledgeBase {
public:
    KnowledgeBase() = default;
    KnowledgeBase(std::vector<MeshRecord> records, std::string vocab_tag);

    const std::vector<MeshRecord>& records() const { return records_; }
    const MeshRecord& record(const std::string& code) const;
    bool has_code(const std::string& code) const { return by_code_.count(code) > 0; }
    const MeshGraph& graph() const { return graph_; }
    const std::string& vocab_tag() const { return vocab_tag_; }
    std::size_t size() const { return records_.size(); }

    // Surface form of this KB's concept token for a code.
    std::string token_for(const std::string& code) const;

    // Set of all concept-token surface forms, used to flag vocabulary entries.
    std::unordered_set<std::string> concept_tokens() const;

    // Pre-order walk of the position forest: roots in lexicographic order,
    // children ordered by tree-number string. A code with several positions
    // appears once per position; the walk's length equals the total number of
    // tree numbers across records.
    std::vector<std::string> traversal_order() const;

    // Tree positions visited by traversal_order, parallel to its output.
    std::vector<std::string> traversal_positions() const;

    std::size_t total_tree_positions() const;

private:
    void build_graph();

    std::vector<MeshRecord> records_;
    std::unordered_map<std::string, std::size_t> by_code_;
    std::map<std::string, std::string> position_owner_; // tree number -> code
    MeshGraph graph_;
    std::string vocab_tag_ = "MeSH";
};

// Concept-token surface form: code immediately followed by the vocabulary
// tag, no separator, case preserved. Throws ConfigError on empty input.
std::string concept_token(const std::string& code, const std::string& vocab_tag);

// True when token ends with the tag and carries a non-empty code before it.
bool is_concept_token(const std::string& token, const std::string& vocab_tag);

// Loads a JSON-lines knowledge base: one object per line with keys
// "code" (required), "name" (required), "definition", "tree_numbers",
// "see_also", "pharm_actions". Duplicate codes and malformed lines are
// rejected with the offending line number.
KnowledgeBase load_knowledge_base(const std::string& path, const std::string& vocab_tag = "MeSH");
KnowledgeBase parse_knowledge_base(std::istream& in, const std::string& source_name,
                                   const std::string& vocab_tag = "MeSH");

} // namespace crel::mesh
