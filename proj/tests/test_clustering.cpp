#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "voltreg/clustering.hpp"

using namespace voltreg;

TEST_CASE("partition validation on the line3 chain") {
  const FeederCase c = load_feeder(vt::fixture("line3.json"));

  SUBCASE("a full subtree below node 1 is valid") {
    const Partition p = partition_from_roots(c.feeder, {1});
    CHECK(validate_partition(c.feeder, p).empty());
    const ReducedNetwork r = reduce_network(c.feeder, p);
    CHECK(r.nodes == std::vector<int>{0, 1});
    REQUIRE(r.lines.size() == 1);
    CHECK(c.feeder.line(r.lines[0]).to == 1);
  }

  SUBCASE("omitting a descendant is reported") {
    Partition p;
    p.subtrees.push_back({1, {1}});
    p.unclustered = {2};
    const auto violations = validate_partition(c.feeder, p);
    REQUIRE_FALSE(violations.empty());
    bool found = false;
    for (const auto& v : violations) found |= v.find("missing descendant") != std::string::npos;
    CHECK(found);
  }

  SUBCASE("overlapping subtrees are reported") {
    Partition p;
    p.subtrees.push_back({1, {1, 2}});
    p.subtrees.push_back({2, {2}});
    const auto violations = validate_partition(c.feeder, p);
    REQUIRE_FALSE(violations.empty());
    bool found = false;
    for (const auto& v : violations) found |= v.find("non-disjoint") != std::string::npos;
    CHECK(found);
  }

  SUBCASE("uncovered nodes are reported") {
    Partition p;
    p.subtrees.push_back({2, {2}});
    CHECK_FALSE(validate_partition(c.feeder, p).empty());
  }
}

TEST_CASE("recommended cluster count follows the cube-root rule") {
  CHECK(recommend_cluster_count(1000) == 79);
  CHECK(recommend_cluster_count(1043) == 82);
  CHECK(recommend_cluster_count(1) == 1);
  CHECK(recommend_cluster_count(2) == 1);  // 1.26 rounds down
  CHECK(recommend_cluster_count(4096) == 203);
  CHECK_THROWS_AS((void)recommend_cluster_count(0), ConfigError);
}

TEST_CASE("cost model matches the closed-form totals") {
  SUBCASE("n=1000, k=79 is close to the idealized total") {
    const OpCount m = model_op_count(1000, 79);
    const double idealized = 2.0 * 1000.0 * 1000.0 / 79.0 + 1000.0 + 2.0 * 79.0 * 79.0;
    CHECK(std::abs(static_cast<double>(m.total()) - idealized) <= 1000.0);
    // breakdown adds up
    std::uint64_t mult_sum = 0, add_sum = 0;
    for (const ActorOps& a : m.per_actor) {
      mult_sum += a.mults;
      add_sum += a.adds;
    }
    CHECK(mult_sum == m.mults);
    CHECK(add_sum == m.adds);
    CHECK(m.per_actor.size() == 80);  // 79 regional actors plus the central one
  }

  SUBCASE("k=1 degenerates to the dense cost") {
    const OpCount m = model_op_count(1000, 1);
    CHECK(std::abs(static_cast<double>(m.total()) - (2e6 + 1000.0)) <= 1000.0);
  }

  SUBCASE("k=n is dominated by the central coordinator") {
    const int n = 500;
    const OpCount m = model_op_count(n, n);
    CHECK(std::abs(static_cast<double>(m.total()) - (2.0 * n * n + n)) <= n);
    const ActorOps& cc = m.per_actor.back();
    CHECK(cc.actor == "cc");
    CHECK(cc.mults + cc.adds > m.total() / 2);
  }

  SUBCASE("central baseline") {
    const OpCount m = central_op_count(1000);
    CHECK(m.mults == 1000000);
    CHECK(m.adds == 999000);
  }
}

TEST_CASE("cost at the recommended count scales like n^(4/3)") {
  for (int n : {64, 256, 1024, 4096}) {
    const OpCount m = model_op_count(n, recommend_cluster_count(n));
    const double ratio = static_cast<double>(m.total()) / std::pow(n, 4.0 / 3.0);
    CAPTURE(n);
    CHECK(ratio >= 1.0);
    CHECK(ratio <= 4.0);
  }
}

TEST_CASE("greedy partition on a balanced binary tree") {
  const auto c = vt::chain_case(vt::binary_parents(15), 0.05, 0.05);
  const Partition p = auto_partition(c.feeder, 2);
  REQUIRE(validate_partition(c.feeder, p).empty());
  REQUIRE(p.subtree_count() == 2);
  CHECK(p.subtrees[0].root == 1);
  CHECK(p.subtrees[1].root == 2);
  CHECK(p.subtrees[0].members.size() == 7);
  CHECK(p.subtrees[1].members.size() == 7);
  CHECK(p.unclustered.empty());
}

TEST_CASE("greedy partition on a star allows singleton leaves") {
  const FeederCase c = load_feeder(vt::fixture("star8.json"));
  const Partition p = auto_partition(c.feeder, 3);
  REQUIRE(validate_partition(c.feeder, p).empty());
  CHECK(p.subtree_count() == 3);
  for (const Subtree& s : p.subtrees) CHECK(s.members.size() == 1);
  CHECK(p.unclustered.size() == 5);

  SUBCASE("asking beyond the leaf count") {
    CHECK_THROWS_AS((void)auto_partition(c.feeder, 9, /*strict=*/true),
                    InfeasibleClusterError);
    const Partition best = auto_partition(c.feeder, 9);
    CHECK(best.subtree_count() == 8);  // every leaf became a singleton
    CHECK(validate_partition(c.feeder, best).empty());
  }
}

TEST_CASE("a chain admits exactly one subtree") {
  const auto c = vt::chain_case(vt::chain_parents(4), 0.1, 0.1);
  CHECK_THROWS_AS((void)auto_partition(c.feeder, 2, /*strict=*/true),
                  InfeasibleClusterError);
  const Partition p = auto_partition(c.feeder, 2);
  REQUIRE(p.subtree_count() == 1);
  CHECK(p.subtrees[0].root == 2);  // size 2 ties size 1, lower index wins
  CHECK(p.subtrees[0].members == std::vector<int>{2, 3});
  CHECK(p.unclustered == std::vector<int>{1});
  CHECK(validate_partition(c.feeder, p).empty());
}

TEST_CASE("cross-subtree pairs share the root pair's common path") {
  const auto c = vt::chain_case(vt::binary_parents(31), 0.03, 0.04);
  const Feeder& f = c.feeder;
  for (int k : {2, 3, 4}) {
    const Partition p = auto_partition(f, k);
    REQUIRE(validate_partition(f, p).empty());
    for (int h = 0; h < p.subtree_count(); ++h) {
      for (int g = h + 1; g < p.subtree_count(); ++g) {
        const auto root_i = f.path_lines(p.subtrees[h].root);
        const auto root_j = f.path_lines(p.subtrees[g].root);
        std::set<int> root_common;
        {
          const std::set<int> sj(root_j.begin(), root_j.end());
          for (int l : root_i) {
            if (sj.count(l)) root_common.insert(l);
          }
        }
        for (int i : p.subtrees[h].members) {
          for (int j : p.subtrees[g].members) {
            const auto pi = f.path_lines(i);
            const auto pj = f.path_lines(j);
            const std::set<int> sj(pj.begin(), pj.end());
            std::set<int> common;
            for (int l : pi) {
              if (sj.count(l)) common.insert(l);
            }
            CHECK(common == root_common);
          }
        }
      }
    }
  }
}

TEST_CASE("partitions declared in the feeder file are honored") {
  FeederCase c = load_feeder(vt::fixture("line3.json"));
  c.cluster_roots = {1};
  const Partition p = partition_from_roots(c.feeder, c.cluster_roots);
  CHECK(validate_partition(c.feeder, p).empty());
  CHECK(p.subtrees[0].members == std::vector<int>{1, 2});
}
