#include "crel/pairgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "crel/errors.hpp"
#include "crel/rng.hpp"

namespace crel::pairs {

const char* to_string(PairSource s) {
    switch (s) {
        case PairSource::corpus: return "corpus";
        case PairSource::hierarchy: return "hierarchy";
        case PairSource::see_also: return "see_also";
        case PairSource::pharm_action: return "pharm_action";
        case PairSource::negative: return "negative";
    }
    return "?";
}

PairSource pair_source_from_string(const std::string& s) {
    if (s == "corpus") return PairSource::corpus;
    if (s == "hierarchy") return PairSource::hierarchy;
    if (s == "see_also") return PairSource::see_also;
    if (s == "pharm_action") return PairSource::pharm_action;
    if (s == "negative") return PairSource::negative;
    throw ParseError("unknown pair source: " + s);
}

CodePair::CodePair(std::string x, std::string y) {
    if (x == y) throw ValidationError("pair endpoints must differ: " + x);
    if (x < y) {
        a = std::move(x);
        b = std::move(y);
    } else {
        a = std::move(y);
        b = std::move(x);
    }
}

std::set<CodePair> pairs_from_citations(const std::vector<corpus::Citation>& citations) {
    std::set<CodePair> out;
    for (const auto& c : citations) {
        for (auto i = c.headings.begin(); i != c.headings.end(); ++i) {
            for (auto j = std::next(i); j != c.headings.end(); ++j) {
                out.emplace(*i, *j);
            }
        }
    }
    return out;
}

std::set<CodePair> HierarchyPairs::all() const {
    std::set<CodePair> out = within_two_hops;
    out.insert(see_also.begin(), see_also.end());
    out.insert(pharm_action.begin(), pharm_action.end());
    return out;
}

HierarchyPairs pairs_from_hierarchy(const mesh::KnowledgeBase& kb) {
    HierarchyPairs out;
    const auto& graph = kb.graph();

    // Two-hop closure: neighbors, then neighbors of neighbors.
    for (const auto& rec : kb.records()) {
        const auto& near = graph.neighbors(rec.code);
        for (const auto& n : near) {
            out.within_two_hops.emplace(rec.code, n);
            for (const auto& nn : graph.neighbors(n)) {
                if (nn != rec.code) out.within_two_hops.emplace(rec.code, nn);
            }
        }
    }

    for (const auto& rec : kb.records()) {
        for (const auto& other : rec.see_also)
            if (kb.has_code(other)) out.see_also.emplace(rec.code, other);
        for (const auto& other : rec.pharm_actions)
            if (kb.has_code(other)) out.pharm_action.emplace(rec.code, other);
    }
    return out;
}

std::set<CodePair> sample_negatives(const std::set<CodePair>& positives,
                                    const std::map<std::string, std::uint64_t>& frequency_table,
                                    std::size_t count, std::uint64_t seed) {
    if (count == 0) return {};
    std::vector<std::string> codes;
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& [code, freq] : frequency_table) {
        codes.push_back(code);
        total += static_cast<double>(freq);
        cumulative.push_back(total);
    }
    if (codes.size() < 2 || total <= 0.0)
        throw GenerationError("cannot sample negatives: fewer than two weighted codes");

    Rng rng(seed);
    auto draw_code = [&]() -> const std::string& {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        const auto idx = std::min(static_cast<std::size_t>(it - cumulative.begin()),
                                  codes.size() - 1);
        return codes[idx];
    };

    std::set<CodePair> negatives;
    // Bounded retries: generation is infeasible once the non-positive pair
    // space is exhausted, which shows up as a long failure streak.
    const std::uint64_t max_failures = 1000 + 200 * static_cast<std::uint64_t>(count);
    std::uint64_t failures = 0;
    while (negatives.size() < count) {
        const std::string& x = draw_code();
        const std::string& y = draw_code();
        if (x != y) {
            CodePair p(x, y);
            if (!positives.count(p) && negatives.insert(std::move(p)).second) {
                failures = 0;
                continue;
            }
        }
        if (++failures > max_failures)
            throw GenerationError("cannot sample " + std::to_string(count) +
                                  " unique negatives: pair space exhausted after " +
                                  std::to_string(failures) + " consecutive rejections");
    }
    return negatives;
}

std::vector<PairExample> assemble_examples(const std::vector<corpus::Citation>& citations,
                                           const mesh::KnowledgeBase& kb,
                                           const std::map<std::string, std::uint64_t>& frequency_table,
                                           std::uint64_t seed) {
    const auto co = pairs_from_citations(citations);
    const auto hier = pairs_from_hierarchy(kb);

    // Provenance: citation co-occurrence wins, then hierarchy, then the
    // auxiliary relations.
    std::map<CodePair, PairSource> positives;
    for (const auto& p : hier.pharm_action) positives.emplace(p, PairSource::pharm_action);
    for (const auto& p : hier.see_also) positives[p] = PairSource::see_also;
    for (const auto& p : hier.within_two_hops) positives[p] = PairSource::hierarchy;
    for (const auto& p : co) positives[p] = PairSource::corpus;

    std::set<CodePair> positive_set;
    for (const auto& [p, src] : positives) {
        (void)src;
        positive_set.insert(p);
    }
    const auto negatives = sample_negatives(positive_set, frequency_table, positives.size(), seed);

    std::vector<PairExample> out;
    out.reserve(positives.size() + negatives.size());
    for (const auto& [p, src] : positives) out.push_back({p, 1, src});
    for (const auto& p : negatives) out.push_back({p, 0, PairSource::negative});
    return out;
}

DatasetSplit split_dataset(std::vector<PairExample> examples, double split_fraction,
                           std::uint64_t seed) {
    if (split_fraction < 0.0 || split_fraction >= 1.0)
        throw ConfigError("split fraction must be in [0, 1)");
    Rng rng(seed);
    rng.shuffle(examples);

    std::vector<PairExample> pos, neg;
    for (auto& e : examples) (e.label ? pos : neg).push_back(std::move(e));

    const auto take = [&](std::size_t n, double frac) {
        return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
    };
    const std::size_t total_valid = take(pos.size() + neg.size(), split_fraction);
    std::size_t pos_valid = std::min(take(pos.size(), split_fraction), total_valid);
    std::size_t neg_valid = std::min(total_valid - pos_valid, neg.size());

    DatasetSplit split;
    auto distribute = [&](std::vector<PairExample>& src, std::size_t n_valid) {
        for (std::size_t i = 0; i < src.size(); ++i)
            (i < n_valid ? split.validation : split.train).push_back(std::move(src[i]));
    };
    distribute(pos, pos_valid);
    distribute(neg, neg_valid);

    // Interleave deterministically rather than leaving labels blocked.
    rng.shuffle(split.train);
    rng.shuffle(split.validation);
    return split;
}

void write_pairs_tsv(std::ostream& out, const std::vector<PairExample>& examples) {
    for (const auto& e : examples) {
        out << e.pair.a << '\t' << e.pair.b << '\t' << e.label << '\t' << to_string(e.source)
            << '\n';
    }
}

void write_pairs_tsv_file(const std::string& path, const std::vector<PairExample>& examples) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_pairs_tsv(out, examples);
    out.flush();
    if (!out) throw IoError("write failure: " + path);
}

std::vector<PairExample> read_pairs_tsv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open pairs: " + path);
    std::vector<PairExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string a, b, label, source;
        if (!std::getline(ls, a, '\t') || !std::getline(ls, b, '\t') ||
            !std::getline(ls, label, '\t') || !std::getline(ls, source))
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields");
        PairExample e;
        e.pair = CodePair(a, b);
        e.label = std::stoi(label);
        e.source = pair_source_from_string(source);
        if ((e.label == 1) != (e.source != PairSource::negative))
            throw ValidationError(path + ":" + std::to_string(line_no) +
                                  ": label does not match source");
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace crel::pairs
