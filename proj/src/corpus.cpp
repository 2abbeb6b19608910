#include "crel/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "crel/errors.hpp"

namespace crel::corpus {

namespace {

bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_strippable(unsigned char c) {
    return c < 128 && std::ispunct(c);
}

// Strip surrounding ASCII punctuation, lowercase ASCII letters.
std::string clean_token(std::string_view raw) {
    std::size_t b = 0, e = raw.size();
    while (b < e && is_strippable(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && is_strippable(static_cast<unsigned char>(raw[e - 1]))) --e;
    std::string out;
    out.reserve(e - b);
    for (std::size_t i = b; i < e; ++i) {
        const unsigned char c = static_cast<unsigned char>(raw[i]);
        out.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : raw[i]);
    }
    return out;
}

} // namespace

TokenizedText tokenize_with_offsets(const std::string& text) {
    TokenizedText out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && is_space_byte(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= n) break;
        const std::size_t begin = i;
        while (i < n && !is_space_byte(static_cast<unsigned char>(text[i]))) ++i;
        std::string cleaned = clean_token(std::string_view(text).substr(begin, i - begin));
        out.piece_begin.push_back(begin);
        out.piece_end.push_back(i);
        if (!cleaned.empty()) out.tokens.push_back(std::move(cleaned));
        out.emitted_through.push_back(out.tokens.size());
    }
    return out;
}

std::vector<std::string> tokenize(const std::string& text) {
    return tokenize_with_offsets(text).tokens;
}

Document insert_concept_tokens(const Citation& citation) {
    const TokenizedText tt = tokenize_with_offsets(citation.text);

    // Validate spans and sort by start; overlaps were rejected at load but a
    // hand-built citation may still carry them.
    std::vector<const Annotation*> sorted;
    sorted.reserve(citation.annotations.size());
    for (const auto& ann : citation.annotations) {
        if (ann.start >= ann.end || ann.end > citation.text.size())
            throw ValidationError("citation " + citation.id + ": annotation [" +
                                  std::to_string(ann.start) + "," + std::to_string(ann.end) +
                                  ") out of range");
        sorted.push_back(&ann);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const Annotation* a, const Annotation* b) { return a->start < b->start; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i]->start < sorted[i - 1]->end)
            throw ValidationError("citation " + citation.id + ": overlapping annotations");
    }

    // The concept token goes right after the cleaned tokens of the raw piece
    // containing offset end-1.
    std::vector<std::pair<std::size_t, std::string>> insertions; // (token index, concept token)
    for (const Annotation* ann : sorted) {
        const std::size_t last_char = ann->end - 1;
        std::size_t piece = tt.piece_begin.size();
        for (std::size_t p = 0; p < tt.piece_begin.size(); ++p) {
            if (last_char < tt.piece_end[p]) {
                piece = p;
                break;
            }
        }
        if (piece == tt.piece_begin.size())
            throw ValidationError("citation " + citation.id + ": annotation ends in whitespace");
        insertions.emplace_back(tt.emitted_through[piece],
                                mesh::concept_token(ann->code, ann->vocab));
    }

    Document doc;
    doc.reserve(tt.tokens.size() + insertions.size());
    std::size_t next = 0;
    for (std::size_t t = 0; t <= tt.tokens.size(); ++t) {
        while (next < insertions.size() && insertions[next].first == t) {
            doc.push_back(insertions[next].second);
            ++next;
        }
        if (t < tt.tokens.size()) doc.push_back(tt.tokens[t]);
    }
    return doc;
}

std::vector<Document> serialize_definitions(const mesh::KnowledgeBase& kb) {
    std::vector<Document> docs;
    for (const auto& code : kb.traversal_order()) {
        const auto& rec = kb.record(code);
        Document doc = tokenize(rec.name);
        doc.push_back(kb.token_for(code));
        const Document def = tokenize(rec.definition);
        doc.insert(doc.end(), def.begin(), def.end());
        docs.push_back(std::move(doc));
    }
    return docs;
}

SamplePredicate min_annotation_predicate(std::size_t min_annotations) {
    return [min_annotations](const Citation& c) { return c.annotations.size() >= min_annotations; };
}

Citation parse_citation(const std::string& json_line, const std::string& source, std::size_t line_no) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(json_line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
        Citation c;
        c.id = obj.at("id").get<std::string>();
        c.text = obj.at("text").get<std::string>();
        for (const auto& a : obj.value("annotations", nlohmann::json::array())) {
            Annotation ann;
            ann.start = a.at("start").get<std::size_t>();
            ann.end = a.at("end").get<std::size_t>();
            ann.code = a.at("code").get<std::string>();
            ann.vocab = a.at("vocab").get<std::string>();
            c.annotations.push_back(std::move(ann));
        }
        for (const auto& h : obj.value("headings", nlohmann::json::array()))
            c.headings.insert(h.get<std::string>());

        auto sorted = c.annotations;
        std::sort(sorted.begin(), sorted.end(),
                  [](const Annotation& a, const Annotation& b) { return a.start < b.start; });
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i].start >= sorted[i].end || sorted[i].end > c.text.size())
                throw ValidationError(source + ":" + std::to_string(line_no) +
                                      ": annotation offsets out of range");
            if (i > 0 && sorted[i].start < sorted[i - 1].end)
                throw ValidationError(source + ":" + std::to_string(line_no) +
                                      ": overlapping annotations");
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
}

std::vector<Citation> load_citations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open citations: " + path);
    std::vector<Citation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        out.push_back(parse_citation(line, path, line_no));
    }
    return out;
}

void write_document(std::ostream& out, const Document& doc) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
        if (i) out << ' ';
        out << doc[i];
    }
    out << '\n';
}

CorpusStats build_corpus(std::istream& citations, const std::string& citations_name,
                         const mesh::KnowledgeBase& kb, std::ostream& out,
                         const SamplePredicate& keep) {
    CorpusStats stats;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(citations, line)) {
        ++line_no;
        if (line.empty()) continue;
        const Citation c = parse_citation(line, citations_name, line_no);
        ++stats.citations_seen;
        if (!keep(c)) continue;
        ++stats.citations_kept;
        write_document(out, insert_concept_tokens(c));
    }
    for (const auto& doc : serialize_definitions(kb)) {
        write_document(out, doc);
        ++stats.definition_documents;
    }
    if (!out) throw IoError("write failure while building corpus");
    return stats;
}

CorpusStats build_corpus_file(const std::string& citations_path, const mesh::KnowledgeBase& kb,
                              const std::string& out_path, const SamplePredicate& keep) {
    std::ifstream in(citations_path);
    if (!in) throw IoError("cannot open citations: " + citations_path);
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot open corpus output: " + out_path);
    auto stats = build_corpus(in, citations_path, kb, out, keep);
    out.flush();
    if (!out) throw IoError("write failure: " + out_path);
    return stats;
}

} // namespace crel::corpus
