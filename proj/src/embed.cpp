#include "crel/embed.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace crel::embed {

Vocabulary::Vocabulary(std::vector<VocabEntry> entries, std::uint64_t total_scanned)
    : entries_(std::move(entries)), total_scanned_(total_scanned) {
    std::sort(entries_.begin(), entries_.end(), [](const VocabEntry& a, const VocabEntry& b) {
        if (a.frequency != b.frequency) return a.frequency > b.frequency;
        return a.token < b.token;
    });
    index_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!index_.emplace(entries_[i].token, static_cast<int>(i)).second)
            throw ValidationError("duplicate vocabulary token: " + entries_[i].token);
    }
}

Vocabulary build_vocabulary(const std::vector<corpus::Document>& docs,
                            const mesh::KnowledgeBase& kb, const TrainerConfig& config) {
    std::unordered_map<std::string, std::uint64_t> counts;
    std::uint64_t total = 0;
    for (const auto& doc : docs) {
        for (const auto& tok : doc) {
            if (tok.empty()) continue;
            ++counts[tok];
            ++total;
        }
    }

    const auto concepts = kb.concept_tokens();
    std::vector<VocabEntry> entries;
    entries.reserve(counts.size());
    for (auto& [token, freq] : counts) {
        const bool is_concept = concepts.count(token) > 0;
        if (!is_concept && freq < static_cast<std::uint64_t>(config.min_count)) continue;
        entries.push_back({token, freq, is_concept});
    }
    // Concepts the corpus never mentions still get an entry.
    for (const auto& token : concepts) {
        if (!counts.count(token)) entries.push_back({token, 0, true});
    }
    return Vocabulary(std::move(entries), total);
}

Vocabulary build_vocabulary_file(const std::string& corpus_path, const mesh::KnowledgeBase& kb,
                                 const TrainerConfig& config) {
    return build_vocabulary(load_corpus_documents(corpus_path), kb, config);
}

std::uint32_t fnv1a32(std::string_view bytes) {
    std::uint32_t h = 2166136261u;
    for (const char c : bytes) {
        h ^= static_cast<std::uint32_t>(static_cast<unsigned char>(c));
        h *= 16777619u;
    }
    return h;
}

namespace {

// Code-point boundaries of a UTF-8 string (byte offsets, plus final size).
std::vector<std::size_t> utf8_boundaries(const std::string& s) {
    std::vector<std::size_t> b;
    b.reserve(s.size() + 1);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) b.push_back(i);
    }
    b.push_back(s.size());
    return b;
}

} // namespace

std::vector<std::string> SubwordIndexer::ngrams(const std::string& word) const {
    const std::string wrapped = "<" + word + ">";
    const auto bounds = utf8_boundaries(wrapped);
    const std::size_t n_chars = bounds.size() - 1;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n_chars; ++i) {
        const std::size_t max_len = std::min<std::size_t>(static_cast<std::size_t>(maxn_), n_chars - i);
        for (std::size_t len = static_cast<std::size_t>(minn_); len <= max_len; ++len) {
            out.push_back(wrapped.substr(bounds[i], bounds[i + len] - bounds[i]));
        }
    }
    return out;
}

std::vector<std::uint32_t> SubwordIndexer::buckets(const std::string& word) const {
    std::vector<std::uint32_t> out;
    for (const auto& g : ngrams(word)) out.push_back(fnv1a32(g) % bucket_count_);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<corpus::Document> load_corpus_documents(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus: " + path);
    std::vector<corpus::Document> docs;
    std::string line;
    while (std::getline(in, line)) {
        corpus::Document doc;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && line[i] == ' ') ++i;
            const std::size_t begin = i;
            while (i < line.size() && line[i] != ' ') ++i;
            if (i > begin) doc.emplace_back(line, begin, i - begin);
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

void write_vec(std::ostream& out, const std::vector<std::string>& tokens, const Matrix<float>& vectors) {
    if (tokens.size() != vectors.rows())
        throw ValidationError("token count does not match vector rows");
    out << tokens.size() << ' ' << vectors.cols() << '\n';
    char buf[48];
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out << tokens[i];
        const auto row = vectors.row(i);
        for (const float x : row) {
            std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(x));
            out << buf;
        }
        out << '\n';
    }
}

void write_vec_file(const std::string& path, const std::vector<std::string>& tokens,
                    const Matrix<float>& vectors) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_vec(out, tokens, vectors);
    out.flush();
    if (!out) throw IoError("write failure: " + path);
}

VecFile read_vec(std::istream& in, const std::string& source_name) {
    std::string header;
    if (!std::getline(in, header)) throw ParseError(source_name + ": missing header");
    std::istringstream hs(header);
    std::size_t count = 0, dim = 0;
    if (!(hs >> count >> dim) || dim == 0)
        throw ParseError(source_name + ": bad header '" + header + "'");

    VecFile vf;
    vf.tokens.reserve(count);
    vf.vectors = Matrix<float>(count, dim);
    std::string line;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line))
            throw ParseError(source_name + ": expected " + std::to_string(count) +
                             " rows, got " + std::to_string(i));
        std::istringstream ls(line);
        std::string token;
        if (!(ls >> token)) throw ParseError(source_name + ":" + std::to_string(i + 2) + ": empty row");
        auto row = vf.vectors.row(i);
        for (std::size_t d = 0; d < dim; ++d) {
            if (!(ls >> row[d]))
                throw ParseError(source_name + ":" + std::to_string(i + 2) +
                                 ": expected " + std::to_string(dim) + " values");
        }
        vf.tokens.push_back(std::move(token));
    }
    return vf;
}

VecFile read_vec_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vectors: " + path);
    return read_vec(in, path);
}

namespace {
constexpr char kModelMagic[4] = {'C', 'R', 'L', 'M'};

void write_raw(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void read_raw(std::istream& in, void* p, std::size_t n, const std::string& path) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw ParseError(path + ": truncated model file");
}
} // namespace

void save_model_file(const std::string& path, const EmbeddingModel<float>& model,
                     const TrainerConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);

    nlohmann::json header;
    header["dim"] = config.dim;
    header["minn"] = config.minn;
    header["maxn"] = config.maxn;
    header["bucket_count"] = config.bucket_count;
    header["total_scanned"] = model.vocab().total_scanned();
    header["vocab_tag"] = model.vocab_tag_hint();
    auto& entries = header["vocab"] = nlohmann::json::array();
    for (const auto& e : model.vocab().entries())
        entries.push_back({e.token, e.frequency, e.is_concept});
    const std::string header_str = header.dump();

    write_raw(out, kModelMagic, 4);
    const std::uint32_t version = 1;
    write_raw(out, &version, 4);
    const std::uint64_t header_len = header_str.size();
    write_raw(out, &header_len, 8);
    write_raw(out, header_str.data(), header_str.size());
    write_raw(out, model.input().data(), model.input().size() * sizeof(float));
    write_raw(out, model.output().data(), model.output().size() * sizeof(float));
    out.flush();
    if (!out) throw IoError("write failure: " + path);
}

LoadedModel load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model: " + path);

    char magic[4];
    read_raw(in, magic, 4, path);
    if (std::memcmp(magic, kModelMagic, 4) != 0) throw ParseError(path + ": not a model file");
    std::uint32_t version = 0;
    read_raw(in, &version, 4, path);
    if (version != 1) throw ParseError(path + ": unsupported model version");
    std::uint64_t header_len = 0;
    read_raw(in, &header_len, 8, path);
    std::string header_str(header_len, '\0');
    read_raw(in, header_str.data(), header_len, path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": bad model header: " + e.what());
    }

    TrainerConfig config;
    config.dim = header.at("dim").get<int>();
    config.minn = header.at("minn").get<int>();
    config.maxn = header.at("maxn").get<int>();
    config.bucket_count = header.at("bucket_count").get<std::uint32_t>();

    std::vector<VocabEntry> entries;
    for (const auto& e : header.at("vocab"))
        entries.push_back({e.at(0).get<std::string>(), e.at(1).get<std::uint64_t>(), e.at(2).get<bool>()});
    Vocabulary vocab(std::move(entries), header.at("total_scanned").get<std::uint64_t>());

    LoadedModel loaded{EmbeddingModel<float>(std::move(vocab), config), config};
    loaded.model.set_vocab_tag_hint(header.value("vocab_tag", std::string("MeSH")));
    read_raw(in, loaded.model.input().data(), loaded.model.input().size() * sizeof(float), path);
    read_raw(in, loaded.model.output().data(), loaded.model.output().size() * sizeof(float), path);
    return loaded;
}

Matrix<float> composed_table(const EmbeddingModel<float>& model) {
    Matrix<float> out(model.vocab().size(), static_cast<std::size_t>(model.dim()));
    for (std::size_t i = 0; i < model.vocab().size(); ++i) {
        const auto v = model.composed_vector(model.vocab().entry(static_cast<int>(i)).token);
        std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
}

} // namespace crel::embed
