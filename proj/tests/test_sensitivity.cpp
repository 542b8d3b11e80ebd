#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <complex>
#include <set>

#include "test_util.hpp"
#include "voltreg/powerflow.hpp"
#include "voltreg/sensitivity.hpp"
#include "voltreg/synthetic.hpp"

using namespace voltreg;

namespace {

// Independent oracle: enumerate both root paths as line-id sets, intersect,
// and sum impedances in root-first order.
Eigen::Matrix3cd path_intersection_oracle(const Feeder& f, int i, int j) {
  const auto pi = f.path_lines(i);
  const auto pj = f.path_lines(j);
  const std::set<int> sj(pj.begin(), pj.end());
  Eigen::Matrix3cd z = Eigen::Matrix3cd::Zero();
  for (int l : pi) {
    if (sj.count(l)) z += f.line(l).z;
  }
  return z;
}

}  // namespace

TEST_CASE("common path impedance on the line3 chain") {
  const FeederCase c = load_feeder(vt::fixture("line3.json"));
  const auto z12 = common_path_impedance(c.feeder, 1, 2);
  CHECK(z12(0, 0) == std::complex<double>(0.1, 0.1));
  const auto z22 = common_path_impedance(c.feeder, 2, 2);
  CHECK(z22(0, 0).real() == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(z22(0, 0).imag() == doctest::Approx(0.3).epsilon(1e-15));

  for (int i = 1; i <= 2; ++i) {
    for (int j = 1; j <= 2; ++j) {
      const auto got = common_path_impedance(c.feeder, i, j);
      const auto want = path_intersection_oracle(c.feeder, i, j);
      CHECK((got - want).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("disjoint branches share no path") {
  const auto c = vt::chain_case(vt::star_parents(3), 0.1, 0.1);
  const auto z = common_path_impedance(c.feeder, 1, 2);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("common path impedance matches the intersection oracle on a random tree") {
  SyntheticSpec spec;
  spec.nodes = 40;
  spec.topology = Topology::random_tree;
  spec.phases = 3;
  spec.seed = 11;
  const FeederCase c = generate_case(spec);
  for (int i = 1; i <= spec.nodes; i += 3) {
    for (int j = i; j <= spec.nodes; j += 5) {
      const auto got = common_path_impedance(c.feeder, i, j);
      const auto want = path_intersection_oracle(c.feeder, i, j);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-15);
      // node symmetry is exact: same ancestor, same sum
      const auto rev = common_path_impedance(c.feeder, j, i);
      CHECK((got - rev).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("single-phase pack on line3 matches the hand-evaluated matrix") {
  const FeederCase c = load_feeder(vt::fixture("line3.json"));
  const SensitivityPack pack = build_single_phase(c.feeder);
  REQUIRE(pack.R.rows() == 2);
  CHECK(pack.R(0, 0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(pack.R(0, 1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(pack.R(1, 0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(pack.R(1, 1) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK((pack.R - pack.X).cwiseAbs().maxCoeff() == 0.0);  // r == x in the fixture
  CHECK(pack.v_base.isApproxToConstant(1.0));
}

TEST_CASE("single-phase pack on a star is diagonal") {
  const auto c = vt::chain_case(vt::star_parents(3), 0.1, 0.1);
  const SensitivityPack pack = build_single_phase(c.feeder);
  CHECK(pack.R(0, 0) == doctest::Approx(0.2));
  CHECK(pack.R(1, 1) == doctest::Approx(0.2));
  CHECK(pack.R(0, 1) == 0.0);
  CHECK(pack.R(1, 0) == 0.0);
}

TEST_CASE("single-phase builder rejects multi-phase feeders") {
  const FeederCase c = load_feeder(vt::fixture("tri2.json"));
  CHECK_THROWS_AS((void)build_single_phase(c.feeder), PhaseError);
}

TEST_CASE("multi-phase entries on tri2") {
  const FeederCase c = load_feeder(vt::fixture("tri2.json"));
  const SensitivityPack pack = build_multi_phase(c.feeder);
  REQUIRE(pack.R.rows() == 3);

  // same phase: rotation is 1 and conjugation cancels in the real part
  CHECK(pack.R(0, 0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(pack.X(0, 0) == doctest::Approx(0.6).epsilon(1e-15));

  // cross phase (voltage a, injection b), oracle evaluated right here
  const std::complex<double> zbar(0.05, -0.15);
  const std::complex<double> rot = std::exp(std::complex<double>(0, 2.0 * M_PI / 3.0));
  const std::complex<double> prod = zbar * rot;
  CHECK(pack.R(0, 1) == doctest::Approx(2.0 * prod.real()).epsilon(1e-12));
  CHECK(pack.R(0, 1) == doctest::Approx(0.2098076).epsilon(1e-5));
  CHECK(pack.X(0, 1) == doctest::Approx(-2.0 * prod.imag()).epsilon(1e-12));
}

TEST_CASE("zero mutual impedance kills every cross-phase entry") {
  SyntheticSpec spec;
  spec.nodes = 25;
  spec.topology = Topology::random_tree;
  spec.phases = 3;
  spec.seed = 4;
  spec.mutual_lo = 0.0;
  spec.mutual_hi = 0.0;
  const FeederCase c = generate_case(spec);
  const SensitivityPack pack = build_multi_phase(c.feeder);
  for (int r = 0; r < pack.index.size(); ++r) {
    for (int col = 0; col < pack.index.size(); ++col) {
      if (pack.index.coord(r).second != pack.index.coord(col).second) {
        CHECK(pack.R(r, col) == 0.0);
        CHECK(pack.X(r, col) == 0.0);
      }
    }
  }
  const SensitivityPack diag = diagonal_phase_pack(pack);
  CHECK((pack.R - diag.R).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("multi-phase same-phase entries equal the single-phase builder bitwise") {
  const auto c = vt::chain_case(vt::binary_parents(15), 0.07, 0.11);
  const SensitivityPack sp = build_single_phase(c.feeder);
  const SensitivityPack mp = build_multi_phase(c.feeder);
  CHECK((sp.R - mp.R).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sp.X - mp.X).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-phase packs are symmetric") {
  SyntheticSpec spec;
  spec.nodes = 30;
  spec.topology = Topology::random_tree;
  spec.seed = 9;
  const FeederCase c = generate_case(spec);
  const SensitivityPack pack = build_single_phase(c.feeder);
  CHECK((pack.R - pack.R.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pack.X - pack.X.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(pack.R.minCoeff() >= 0.0);
}

TEST_CASE("block structure holds for valid partitions and reports violations otherwise") {
  const auto c = vt::chain_case(vt::binary_parents(15), 0.05, 0.08);
  const SensitivityPack pack = build_multi_phase(c.feeder);

  SUBCASE("auto partitions pass") {
    for (int k = 1; k <= 4; ++k) {
      const Partition p = auto_partition(c.feeder, k);
      REQUIRE(validate_partition(c.feeder, p).empty());
      const auto report = check_block_structure(pack, c.feeder, p);
      CAPTURE(k);
      CHECK(report.ok);
    }
  }

  SUBCASE("single subtree covering everything passes vacuously") {
    const Partition p = partition_from_roots(c.feeder, {1});
    const auto report = check_block_structure(pack, c.feeder, p);
    CHECK(report.ok);
    CHECK(report.violations.empty());
  }

  SUBCASE("a subtree that omits a descendant is flagged") {
    // chain 0-1-2-3: claim {1,3} is a subtree and leave 2 unclustered
    const auto chain = vt::chain_case(vt::chain_parents(4), 0.1, 0.1);
    const SensitivityPack cp = build_multi_phase(chain.feeder);
    Partition bad;
    bad.subtrees.push_back({1, {1, 3}});
    bad.unclustered = {2};
    CHECK_FALSE(validate_partition(chain.feeder, bad).empty());
    const auto report = check_block_structure(cp, chain.feeder, bad);
    CHECK_FALSE(report.ok);
    CHECK_FALSE(report.violations.empty());
  }
}

TEST_CASE("linearized sensitivities track the nonlinear model at light loading") {
  const FeederCase c = load_feeder(vt::fixture("line3.json"));
  const SensitivityPack pack = build_multi_phase(c.feeder);
  const int n = pack.index.size();

  Eigen::VectorXd p = Eigen::VectorXd::Constant(n, -0.03);
  Eigen::VectorXd q = Eigen::VectorXd::Constant(n, -0.02);
  const double delta = 0.01;

  for (int col = 0; col < n; ++col) {
    const Eigen::VectorXd v0 = solve_power_flow(c.feeder, pack.index, p, q).state.v;
    Eigen::VectorXd p_plus = p;
    p_plus[col] += delta;
    const Eigen::VectorXd v1 = solve_power_flow(c.feeder, pack.index, p_plus, q).state.v;
    const Eigen::VectorXd fd = (v1 - v0) / delta;
    for (int row = 0; row < n; ++row) {
      CHECK(fd[row] == doctest::Approx(pack.R(row, col)).epsilon(0.05));
    }
  }
}

TEST_CASE("scoped impedance tables reject out-of-scope pairs and record access") {
  PathImpedanceTable table;
  Eigen::Matrix3cd z = Eigen::Matrix3cd::Zero();
  z(0, 0) = {1.0, 2.0};
  table.insert(3, 5, z);
  CHECK(table.contains(5, 3));
  CHECK(table.at(5, 3)(0, 0) == std::complex<double>(1.0, 2.0));
  CHECK_THROWS_AS((void)table.at(1, 2), ScopeError);

  table.start_recording();
  (void)table.at(3, 5);
  CHECK(table.accessed().size() == 1);
  CHECK(table.accessed()[0] == std::pair<int, int>(3, 5));
  table.stop_recording();
}
