#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "crel/mesh_kb.hpp"

namespace crel::corpus {

struct Annotation {
    std::size_t start = 0; // character offsets into Citation::text, [start, end)
    std::size_t end = 0;
    std::string code;
    std::string vocab;
};

struct Citation {
    std::string id;
    std::string text; // title + abstract
    std::vector<Annotation> annotations;
    std::set<std::string> headings; // human-assigned concept set
};

// A document is an ordered token list; concept tokens are interleaved with
// cleaned words.
using Document = std::vector<std::string>;

// Whitespace split, then per-token clean-up: strip surrounding ASCII
// punctuation, lowercase, drop empties. Internal hyphens and digits survive.
std::vector<std::string> tokenize(const std::string& text);

// Like tokenize but reports, for each raw whitespace piece, how many cleaned
// tokens were emitted up to and including that piece. Used for span mapping.
struct TokenizedText {
    std::vector<std::string> tokens;
    std::vector<std::size_t> piece_begin;     // char offset of each raw piece
    std::vector<std::size_t> piece_end;       // one past the raw piece
    std::vector<std::size_t> emitted_through; // cleaned tokens emitted through piece i
};
TokenizedText tokenize_with_offsets(const std::string& text);

// Tokenizes the citation text and inserts each annotation's concept token
// immediately after the token containing the span's last character.
Document insert_concept_tokens(const Citation& citation);

// One document per tree position, in traversal order: name tokens, concept
// token, then definition tokens.
std::vector<Document> serialize_definitions(const mesh::KnowledgeBase& kb);

using SamplePredicate = std::function<bool(const Citation&)>;

// Keeps citations with at least `min_annotations` concept annotations.
SamplePredicate min_annotation_predicate(std::size_t min_annotations = 2);

struct CorpusStats {
    std::uint64_t citations_seen = 0;
    std::uint64_t citations_kept = 0;
    std::uint64_t definition_documents = 0;
};

// Streams citations (JSON-lines), writes kept citation documents followed by
// the serialized definition documents, one document per line.
CorpusStats build_corpus(std::istream& citations, const std::string& citations_name,
                         const mesh::KnowledgeBase& kb, std::ostream& out,
                         const SamplePredicate& keep = min_annotation_predicate());
CorpusStats build_corpus_file(const std::string& citations_path, const mesh::KnowledgeBase& kb,
                              const std::string& out_path,
                              const SamplePredicate& keep = min_annotation_predicate());

Citation parse_citation(const std::string& json_line, const std::string& source, std::size_t line_no);
std::vector<Citation> load_citations(const std::string& path);

void write_document(std::ostream& out, const Document& doc);

} // namespace crel::corpus
