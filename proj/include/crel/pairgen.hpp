#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crel/corpus.hpp"
#include "crel/mesh_kb.hpp"

namespace crel::pairs {

enum class PairSource { corpus, hierarchy, see_also, pharm_action, negative };

const char* to_string(PairSource s);
PairSource pair_source_from_string(const std::string& s);

// Unordered code pair; codes are kept in lexicographic order so that sets of
// pairs deduplicate naturally.
struct CodePair {
    std::string a;
    std::string b;
    CodePair() = default;
    CodePair(std::string x, std::string y);
    auto operator<=>(const CodePair&) const = default;
};

struct PairExample {
    CodePair pair;
    int label = 0; // 1 unless the source is `negative`
    PairSource source = PairSource::negative;
};

// All unordered heading pairs co-assigned to at least one citation.
std::set<CodePair> pairs_from_citations(const std::vector<corpus::Citation>& citations);

// Pairs within two hops on the undirected hierarchy, plus the see-also and
// pharmacological-action relations. The per-source breakdown feeds example
// provenance; hierarchy wins when a pair is reachable both ways.
struct HierarchyPairs {
    std::set<CodePair> within_two_hops;
    std::set<CodePair> see_also;
    std::set<CodePair> pharm_action;
    std::set<CodePair> all() const;
};
HierarchyPairs pairs_from_hierarchy(const mesh::KnowledgeBase& kb);

// Frequency-proportional endpoint sampling of unique negative pairs that
// collide with no positive. Throws GenerationError when the space is
// exhausted within bounded retries.
std::set<CodePair> sample_negatives(const std::set<CodePair>& positives,
                                    const std::map<std::string, std::uint64_t>& frequency_table,
                                    std::size_t count, std::uint64_t seed);

std::vector<PairExample> assemble_examples(const std::vector<corpus::Citation>& citations,
                                           const mesh::KnowledgeBase& kb,
                                           const std::map<std::string, std::uint64_t>& frequency_table,
                                           std::uint64_t seed);

// Seeded shuffle, label-stratified holdout of `split_fraction`, TSV output
// (code_a, code_b, label, source).
struct DatasetSplit {
    std::vector<PairExample> train;
    std::vector<PairExample> validation;
};
DatasetSplit split_dataset(std::vector<PairExample> examples, double split_fraction,
                           std::uint64_t seed);

void write_pairs_tsv(std::ostream& out, const std::vector<PairExample>& examples);
void write_pairs_tsv_file(const std::string& path, const std::vector<PairExample>& examples);
std::vector<PairExample> read_pairs_tsv_file(const std::string& path);

} // namespace crel::pairs
