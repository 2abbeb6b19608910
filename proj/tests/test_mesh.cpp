#include <doctest.h>

#include <map>
#include <sstream>

#include "crel/errors.hpp"
#include "crel/mesh_kb.hpp"
#include "test_support.hpp"

using namespace crel;
using test::record;

namespace {

// Seven-node tree used for the hop-distance cases:
//        A
//      /   \
//     B     C
//    / \   / \
//   D   E F   G
mesh::KnowledgeBase seven_node_tree() {
    std::vector<mesh::MeshRecord> rs;
    rs.push_back(record("A", "a", {"T01"}));
    rs.push_back(record("B", "b", {"T01.1"}));
    rs.push_back(record("C", "c", {"T01.2"}));
    rs.push_back(record("D", "d", {"T01.1.1"}));
    rs.push_back(record("E", "e", {"T01.1.2"}));
    rs.push_back(record("F", "f", {"T01.2.1"}));
    rs.push_back(record("G", "g", {"T01.2.2"}));
    return mesh::KnowledgeBase(std::move(rs), "MeSH");
}

// Brute-force all-pairs shortest paths (Floyd-Warshall) on the parent-child
// graph, independent of the BFS in the library.
std::map<std::pair<std::string, std::string>, int> brute_force_distances(
    const mesh::KnowledgeBase& kb) {
    std::vector<std::string> codes;
    for (const auto& r : kb.records()) codes.push_back(r.code);
    const std::size_t n = codes.size();
    const int inf = 1 << 20;
    std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
    for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& nb : kb.graph().neighbors(codes[i])) {
            for (std::size_t j = 0; j < n; ++j)
                if (codes[j] == nb) d[i][j] = 1;
        }
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];

    std::map<std::pair<std::string, std::string>, int> out;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[{codes[i], codes[j]}] = d[i][j];
    return out;
}

} // namespace

TEST_CASE("concept_token concatenates code and tag") {
    CHECK(mesh::concept_token("D004958", "MeSH") == "D004958MeSH");
    CHECK(mesh::concept_token("D008654", "MeSH") == "D008654MeSH");
    CHECK(mesh::concept_token("X", "Y") == "XY");
    CHECK_THROWS_AS(mesh::concept_token("", "MeSH"), ConfigError);
    CHECK_THROWS_AS(mesh::concept_token("D1", ""), ConfigError);
}

TEST_CASE("is_concept_token") {
    CHECK(mesh::is_concept_token("D008654MeSH", "MeSH"));
    CHECK_FALSE(mesh::is_concept_token("MeSH", "MeSH"));
    CHECK_FALSE(mesh::is_concept_token("mesothelioma", "MeSH"));
}

TEST_CASE("load_knowledge_base parses JSON lines") {
    std::istringstream in(
        R"({"code":"D008654","name":"Mesothelioma","definition":"A tumor.","tree_numbers":["C04.557.470"]})"
        "\n");
    const auto kb = mesh::parse_knowledge_base(in, "test", "MeSH");
    CHECK(kb.size() == 1);
    CHECK(kb.graph().node_count() == 1);
    CHECK(kb.graph().edge_count() == 0);
    CHECK(kb.record("D008654").name == "Mesothelioma");
}

TEST_CASE("empty file gives empty knowledge base") {
    std::istringstream in("");
    const auto kb = mesh::parse_knowledge_base(in, "test", "MeSH");
    CHECK(kb.size() == 0);
    CHECK(kb.graph().edge_count() == 0);
}

TEST_CASE("parent/child tree numbers create exactly one edge") {
    std::istringstream in(
        R"({"code":"P","name":"p","tree_numbers":["A01"]})"
        "\n"
        R"({"code":"K","name":"k","tree_numbers":["A01.1"]})"
        "\n");
    const auto kb = mesh::parse_knowledge_base(in, "test", "MeSH");
    CHECK(kb.graph().edge_count() == 1);
    CHECK(kb.graph().neighbors("P").count("K") == 1);
    CHECK(kb.graph().neighbors("K").count("P") == 1);
}

TEST_CASE("malformed line reports its line number") {
    std::istringstream in(
        R"({"code":"A","name":"a"})"
        "\nnot json\n");
    CHECK_THROWS_WITH_AS(mesh::parse_knowledge_base(in, "kb.jsonl", "MeSH"),
                         doctest::Contains("kb.jsonl:2"), ParseError);
}

TEST_CASE("duplicate codes are rejected") {
    std::istringstream in(
        R"({"code":"A","name":"a"})"
        "\n"
        R"({"code":"A","name":"b"})"
        "\n");
    CHECK_THROWS_AS(mesh::parse_knowledge_base(in, "test", "MeSH"), ValidationError);
}

TEST_CASE("hop_distance basic cases") {
    const auto kb = seven_node_tree();
    const auto& g = kb.graph();
    CHECK(g.hop_distance("A", "A", 2) == 0);
    CHECK(g.hop_distance("A", "B", 2) == 1);   // parent/child
    CHECK(g.hop_distance("D", "E", 2) == 2);   // siblings
    CHECK(g.hop_distance("A", "D", 2) == 2);   // grandparent/child
    CHECK_FALSE(g.hop_distance("D", "F", 2));  // cousins are beyond two hops
    CHECK(g.hop_distance("D", "F", 4) == 4);
    CHECK_THROWS_AS(g.hop_distance("A", "Z", 2), LookupError);
}

TEST_CASE("hop_distance matches brute force and is symmetric") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto kb = test::random_kb(rng, 1 + static_cast<std::size_t>(rng.uniform_int(1, 25)));
        const auto oracle = brute_force_distances(kb);
        const int cap = 6;
        for (const auto& a : kb.records()) {
            for (const auto& b : kb.records()) {
                const auto got = kb.graph().hop_distance(a.code, b.code, cap);
                const auto rev = kb.graph().hop_distance(b.code, a.code, cap);
                CHECK(got == rev);
                const int expected = oracle.at({a.code, b.code});
                if (expected <= cap)
                    CHECK(got == expected);
                else
                    CHECK_FALSE(got.has_value());
            }
        }
    }
}

TEST_CASE("hop_distance triangle inequality within cap") {
    Rng rng(11);
    const auto kb = test::random_kb(rng, 20);
    const auto oracle = brute_force_distances(kb);
    const int inf = 1 << 20;
    for (const auto& a : kb.records())
        for (const auto& b : kb.records())
            for (const auto& c : kb.records()) {
                const int ab = oracle.at({a.code, b.code});
                const int bc = oracle.at({b.code, c.code});
                const int ac = oracle.at({a.code, c.code});
                if (ab < inf && bc < inf) CHECK(ac <= ab + bc);
            }
}

TEST_CASE("traversal_order single node") {
    std::vector<mesh::MeshRecord> rs{record("A", "a", {"T01"})};
    const mesh::KnowledgeBase kb(std::move(rs), "MeSH");
    CHECK(kb.traversal_order() == std::vector<std::string>{"A"});
}

TEST_CASE("traversal_order walks parents before children in position order") {
    std::vector<mesh::MeshRecord> rs;
    rs.push_back(record("P", "p", {"A01"}));
    rs.push_back(record("X", "x", {"A01.2"}));
    rs.push_back(record("Y", "y", {"A01.1"}));
    const mesh::KnowledgeBase kb(std::move(rs), "MeSH");
    CHECK(kb.traversal_order() == std::vector<std::string>{"P", "Y", "X"});
}

TEST_CASE("code with two tree positions appears twice") {
    std::vector<mesh::MeshRecord> rs;
    rs.push_back(record("R1", "r1", {"A01"}));
    rs.push_back(record("R2", "r2", {"B01"}));
    rs.push_back(record("M", "m", {"A01.1", "B01.1"}));
    rs.push_back(record("N", "n", {"B01.2"}));
    const mesh::KnowledgeBase kb(std::move(rs), "MeSH");
    CHECK(kb.traversal_order() == std::vector<std::string>{"R1", "M", "R2", "M", "N"});
}

TEST_CASE("orphan positions act as roots, ordered lexicographically") {
    std::vector<mesh::MeshRecord> rs;
    rs.push_back(record("B", "b", {"Z09.5"})); // parent Z09 unowned
    rs.push_back(record("A", "a", {"M01"}));
    const mesh::KnowledgeBase kb(std::move(rs), "MeSH");
    CHECK(kb.traversal_order() == std::vector<std::string>{"A", "B"});
}

TEST_CASE("traversal covers every tree position exactly once") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const auto kb = test::random_kb(rng, 1 + static_cast<std::size_t>(rng.uniform_int(1, 30)));
        const auto order = kb.traversal_order();
        CHECK(order.size() == kb.total_tree_positions());
        const auto positions = kb.traversal_positions();
        std::set<std::string> unique(positions.begin(), positions.end());
        CHECK(unique.size() == positions.size());
    }
}

TEST_CASE("edge count equals resolvable parent count on tree-shaped KBs") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const auto kb = test::random_kb(rng, 2 + static_cast<std::size_t>(rng.uniform_int(1, 30)));
        std::size_t resolvable = 0;
        std::set<std::string> owned;
        for (const auto& r : kb.records())
            for (const auto& tn : r.tree_numbers) owned.insert(tn);
        for (const auto& r : kb.records()) {
            for (const auto& tn : r.tree_numbers) {
                const auto dot = tn.rfind('.');
                if (dot != std::string::npos && owned.count(tn.substr(0, dot))) ++resolvable;
            }
        }
        CHECK(kb.graph().edge_count() == resolvable);
    }
}

TEST_CASE("records rejecting self-relations") {
    auto r = record("A", "a", {"T01"});
    r.see_also.insert("A");
    std::vector<mesh::MeshRecord> rs{std::move(r)};
    CHECK_THROWS_AS(mesh::KnowledgeBase(std::move(rs), "MeSH"), ValidationError);
}

TEST_CASE("empty tree number segment is rejected") {
    std::vector<mesh::MeshRecord> rs{record("A", "a", {"T01..2"})};
    CHECK_THROWS_AS(mesh::KnowledgeBase(std::move(rs), "MeSH"), ValidationError);
}
