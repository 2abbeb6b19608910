#include <doctest.h>

#include <algorithm>
#include <map>

#include "crel/pairgen.hpp"
#include "test_support.hpp"

using namespace crel;
using test::record;

namespace {

corpus::Citation with_headings(std::initializer_list<std::string> headings) {
    corpus::Citation c;
    c.id = "c";
    c.text = "t";
    for (const auto& h : headings) c.headings.insert(h);
    return c;
}

// O(n^3) oracle: Floyd-Warshall distances, then every pair at distance <= 2,
// plus the auxiliary relations.
std::set<pairs::CodePair> brute_force_hierarchy(const mesh::KnowledgeBase& kb) {
    std::vector<std::string> codes;
    for (const auto& r : kb.records()) codes.push_back(r.code);
    const std::size_t n = codes.size();
    const int inf = 1 << 20;
    std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
    for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j && kb.graph().neighbors(codes[i]).count(codes[j])) d[i][j] = 1;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];

    std::set<pairs::CodePair> out;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (d[i][j] <= 2) out.emplace(codes[i], codes[j]);
    for (const auto& r : kb.records()) {
        for (const auto& o : r.see_also)
            if (kb.has_code(o)) out.emplace(r.code, o);
        for (const auto& o : r.pharm_actions)
            if (kb.has_code(o)) out.emplace(r.code, o);
    }
    return out;
}

} // namespace

TEST_CASE("three headings give three unordered pairs") {
    const auto got = pairs::pairs_from_citations({with_headings({"A", "B", "C"})});
    CHECK(got == std::set<pairs::CodePair>{{"A", "B"}, {"A", "C"}, {"B", "C"}});
}

TEST_CASE("one heading gives no pairs") {
    CHECK(pairs::pairs_from_citations({with_headings({"A"})}).empty());
}

TEST_CASE("pairs shared by citations appear once") {
    const auto got = pairs::pairs_from_citations(
        {with_headings({"A", "B"}), with_headings({"B", "A", "C"})});
    CHECK(got == std::set<pairs::CodePair>{{"A", "B"}, {"A", "C"}, {"B", "C"}});
}

TEST_CASE("citation pairs equal a brute-force union oracle on random inputs") {
    Rng rng(41);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<corpus::Citation> citations;
        std::set<pairs::CodePair> oracle;
        const int n_citations = static_cast<int>(rng.uniform_int(0, 20));
        for (int c = 0; c < n_citations; ++c) {
            corpus::Citation cit;
            cit.id = std::to_string(c);
            cit.text = "x";
            const int n_head = static_cast<int>(rng.uniform_int(0, 6));
            for (int h = 0; h < n_head; ++h)
                cit.headings.insert("M" + std::to_string(rng.uniform_int(0, 14)));
            std::vector<std::string> hs(cit.headings.begin(), cit.headings.end());
            for (std::size_t i = 0; i < hs.size(); ++i)
                for (std::size_t j = i + 1; j < hs.size(); ++j) oracle.emplace(hs[i], hs[j]);
            citations.push_back(std::move(cit));
        }
        CHECK(pairs::pairs_from_citations(citations) == oracle);
    }
}

TEST_CASE("chain hierarchy keeps pairs within two hops") {
    std::vector<mesh::MeshRecord> rs;
    rs.push_back(record("A", "a", {"R"}));
    rs.push_back(record("B", "b", {"R.1"}));
    rs.push_back(record("C", "c", {"R.1.1"}));
    rs.push_back(record("D", "d", {"R.1.1.1"}));
    const mesh::KnowledgeBase kb(std::move(rs), "MeSH");
    const auto got = pairs::pairs_from_hierarchy(kb).all();
    CHECK(got == std::set<pairs::CodePair>{
                     {"A", "B"}, {"B", "C"}, {"C", "D"}, {"A", "C"}, {"B", "D"}});
}

TEST_CASE("see-also links are positives even without hierarchy proximity") {
    std::vector<mesh::MeshRecord> rs;
    auto mm = record("D009101", "Multiple Myeloma", {"C04"});
    mm.see_also.insert("D009196");
    rs.push_back(std::move(mm));
    rs.push_back(record("D009196", "Myeloma Proteins", {"D12"}));
    const mesh::KnowledgeBase kb(std::move(rs), "MeSH");
    const auto hier = pairs::pairs_from_hierarchy(kb);
    CHECK(hier.all().count(pairs::CodePair("D009101", "D009196")) == 1);
    CHECK(hier.see_also.size() == 1);
}

TEST_CASE("single-node KB yields no hierarchy pairs") {
    std::vector<mesh::MeshRecord> rs{record("A", "a", {"R"})};
    const mesh::KnowledgeBase kb(std::move(rs), "MeSH");
    CHECK(pairs::pairs_from_hierarchy(kb).all().empty());
}

TEST_CASE("hierarchy pairs equal the brute-force oracle on random KBs") {
    Rng rng(43);
    for (int trial = 0; trial < 30; ++trial) {
        const auto kb = test::random_kb(rng, 2 + static_cast<std::size_t>(rng.uniform_int(0, 48)),
                                        0.6, 0.3);
        CHECK(pairs::pairs_from_hierarchy(kb).all() == brute_force_hierarchy(kb));
    }
}

TEST_CASE("negatives are impossible when positives cover the pair space") {
    std::set<pairs::CodePair> positives{{"A", "B"}, {"A", "C"}, {"B", "C"}};
    std::map<std::string, std::uint64_t> freq{{"A", 1}, {"B", 1}, {"C", 1}};
    CHECK_THROWS_AS(pairs::sample_negatives(positives, freq, 3, 1), GenerationError);
}

TEST_CASE("negative sampling is deterministic under a fixed seed") {
    std::map<std::string, std::uint64_t> freq;
    for (int i = 0; i < 30; ++i) freq["C" + std::to_string(i)] = 1 + static_cast<std::uint64_t>(i % 5);
    const auto a = pairs::sample_negatives({}, freq, 40, 77);
    const auto b = pairs::sample_negatives({}, freq, 40, 77);
    const auto c = pairs::sample_negatives({}, freq, 40, 78);
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("negatives avoid every positive and duplicate") {
    Rng rng(11);
    std::map<std::string, std::uint64_t> freq;
    for (int i = 0; i < 40; ++i) freq["C" + std::to_string(i)] = 1 + static_cast<std::uint64_t>(rng.uniform_int(0, 9));
    std::set<pairs::CodePair> positives;
    for (int i = 0; i < 60; ++i)
        positives.emplace("C" + std::to_string(rng.uniform_int(0, 19)),
                          "C" + std::to_string(rng.uniform_int(20, 39)));
    const auto negatives = pairs::sample_negatives(positives, freq, 100, 5);
    CHECK(negatives.size() == 100);
    for (const auto& p : negatives) CHECK(positives.count(p) == 0);
}

TEST_CASE("uniform frequencies give uniform endpoint shares within 3 sigma") {
    const std::size_t n = 200;
    std::map<std::string, std::uint64_t> freq;
    for (std::size_t i = 0; i < n; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "C%03zu", i);
        freq[buf] = 7;
    }
    const std::size_t draws = 5000; // pairs -> 10000 endpoints
    const auto negatives = pairs::sample_negatives({}, freq, draws, 2024);
    std::map<std::string, std::size_t> counts;
    for (const auto& p : negatives) {
        ++counts[p.a];
        ++counts[p.b];
    }
    const double p = 1.0 / static_cast<double>(n);
    const double endpoints = 2.0 * static_cast<double>(draws);
    const double sigma = std::sqrt(p * (1.0 - p) / endpoints);
    for (const auto& [code, count] : counts) {
        (void)code;
        const double share = static_cast<double>(count) / endpoints;
        CHECK(std::abs(share - p) <= 3.0 * sigma);
    }
}

TEST_CASE("frequency-weighted sampling respects the distribution shape") {
    // One code with 9x the frequency of the others must appear far more often.
    std::map<std::string, std::uint64_t> freq;
    for (int i = 0; i < 20; ++i) freq["C" + std::to_string(i)] = 1;
    freq["HOT"] = 60;
    const auto negatives = pairs::sample_negatives({}, freq, 600, 7);
    std::size_t hot = 0;
    for (const auto& p : negatives) hot += (p.a == "HOT") + (p.b == "HOT");
    CHECK(hot > 300); // weight 60/80 of endpoints, damped by uniqueness rejection
}

namespace {

std::vector<pairs::PairExample> synthetic_examples(std::size_t n_pos, std::size_t n_neg) {
    std::vector<pairs::PairExample> out;
    for (std::size_t i = 0; i < n_pos; ++i)
        out.push_back({pairs::CodePair("P" + std::to_string(i), "Q" + std::to_string(i)), 1,
                       pairs::PairSource::corpus});
    for (std::size_t i = 0; i < n_neg; ++i)
        out.push_back({pairs::CodePair("N" + std::to_string(i), "M" + std::to_string(i)), 0,
                       pairs::PairSource::negative});
    return out;
}

} // namespace

TEST_CASE("split holds out the requested fraction") {
    const auto ds = pairs::split_dataset(synthetic_examples(50, 50), 0.05, 3);
    CHECK(ds.train.size() == 95);
    CHECK(ds.validation.size() == 5);
    std::size_t pos = 0;
    for (const auto& e : ds.validation) pos += static_cast<std::size_t>(e.label);
    CHECK(pos >= 2); // stratified: both labels present
    CHECK(pos <= 3);
}

TEST_CASE("split zero keeps everything in train") {
    const auto ds = pairs::split_dataset(synthetic_examples(10, 10), 0.0, 3);
    CHECK(ds.train.size() == 20);
    CHECK(ds.validation.empty());
}

TEST_CASE("same seed gives byte-identical TSV files") {
    test::TempDir tmp("pairs");
    const auto ex = synthetic_examples(30, 30);
    const auto a = pairs::split_dataset(ex, 0.1, 99);
    const auto b = pairs::split_dataset(ex, 0.1, 99);
    pairs::write_pairs_tsv_file(tmp.file("a.tsv"), a.train);
    pairs::write_pairs_tsv_file(tmp.file("b.tsv"), b.train);
    CHECK(test::read_file(tmp.file("a.tsv")) == test::read_file(tmp.file("b.tsv")));
}

TEST_CASE("assembled dataset is label balanced with disjoint label sets") {
    Rng rng(4242);
    const auto kb = test::random_kb(rng, 20, 0.5, 0.2);
    std::vector<corpus::Citation> citations;
    for (int c = 0; c < 10; ++c) {
        corpus::Citation cit;
        cit.id = std::to_string(c);
        cit.text = "x";
        for (int h = 0; h < 3; ++h)
            cit.headings.insert("C" + std::to_string(100 + rng.uniform_int(0, 19)));
        citations.push_back(std::move(cit));
    }
    std::map<std::string, std::uint64_t> freq;
    for (const auto& r : kb.records()) freq[r.code] = 3;

    const auto examples = pairs::assemble_examples(citations, kb, freq, 1);
    std::set<pairs::CodePair> pos, neg;
    for (const auto& e : examples) {
        CHECK((e.label == 1) == (e.source != pairs::PairSource::negative));
        (e.label ? pos : neg).insert(e.pair);
    }
    CHECK(pos.size() == neg.size());
    for (const auto& p : neg) CHECK(pos.count(p) == 0);
}

TEST_CASE("pairs TSV round trip") {
    test::TempDir tmp("tsv");
    const auto ex = synthetic_examples(5, 5);
    pairs::write_pairs_tsv_file(tmp.file("p.tsv"), ex);
    const auto back = pairs::read_pairs_tsv_file(tmp.file("p.tsv"));
    REQUIRE(back.size() == ex.size());
    for (std::size_t i = 0; i < ex.size(); ++i) {
        CHECK(back[i].pair == ex[i].pair);
        CHECK(back[i].label == ex[i].label);
        CHECK(back[i].source == ex[i].source);
    }
}
