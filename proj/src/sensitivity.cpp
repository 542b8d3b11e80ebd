#include "voltreg/sensitivity.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace voltreg {

std::complex<double> phase_rotation(int exponent) {
  static const double kHalfSqrt3 = std::sqrt(3.0) / 2.0;
  static const std::complex<double> table[3] = {
      {1.0, 0.0}, {-0.5, -kHalfSqrt3}, {-0.5, kHalfSqrt3}};
  return table[((exponent % 3) + 3) % 3];
}

std::vector<Eigen::Matrix3cd> cumulative_path_impedance(const Feeder& feeder) {
  std::vector<Eigen::Matrix3cd> cum(feeder.node_count());
  cum[0].setZero();
  for (int i = 1; i < feeder.node_count(); ++i) {
    const NodeInfo& nd = feeder.node(i);
    cum[i] = cum[nd.parent] + feeder.line(nd.parent_line).z;
  }
  return cum;
}

Eigen::Matrix3cd common_path_impedance(const Feeder& feeder, int i, int j) {
  if (i <= 0 || j <= 0) throw UnknownNodeError("common path requires non-slack nodes");
  // The common path runs from the slack down to the lowest common ancestor;
  // summing its lines root-first keeps the result deterministic.
  const int anc = feeder.lowest_common_ancestor(i, j);
  Eigen::Matrix3cd z = Eigen::Matrix3cd::Zero();
  if (anc != 0) {
    for (int line_id : feeder.path_lines(anc)) z += feeder.line(line_id).z;
  }
  return z;
}

namespace {

SensitivityPack make_pack_shell(const Feeder& feeder) {
  SensitivityPack pack;
  pack.index = PhaseIndexMap(feeder);
  const int n = pack.index.size();
  pack.R.setZero(n, n);
  pack.X.setZero(n, n);
  pack.v_base.resize(n);
  for (int k = 0; k < n; ++k) {
    pack.v_base[k] = feeder.slack_v2[static_cast<std::size_t>(pack.index.coord(k).second)];
  }
  return pack;
}

}  // namespace

SensitivityPack build_single_phase(const Feeder& feeder) {
  int common = -1;
  for (int i = 1; i < feeder.node_count(); ++i) {
    const PhaseSet ps = feeder.node(i).phases;
    if (ps.count() != 1) {
      throw PhaseError("single-phase builder given a multi-phase node");
    }
    int ph = 0;
    while (!ps.has(ph)) ++ph;
    if (common == -1) common = ph;
    if (ph != common) throw PhaseError("single-phase builder given mixed phases");
  }

  SensitivityPack pack = make_pack_shell(feeder);
  const auto cum = cumulative_path_impedance(feeder);
  const int n = feeder.node_count();
  for (int i = 1; i < n; ++i) {
    const int row = pack.index.index(i, common);
    for (int j = i; j < n; ++j) {
      const int col = pack.index.index(j, common);
      const std::complex<double> z = cum[feeder.lowest_common_ancestor(i, j)](common, common);
      pack.R(row, col) = 2.0 * z.real();
      pack.X(row, col) = 2.0 * z.imag();
      pack.R(col, row) = pack.R(row, col);
      pack.X(col, row) = pack.X(row, col);
    }
  }
  return pack;
}

SensitivityPack build_multi_phase(const Feeder& feeder) {
  SensitivityPack pack = make_pack_shell(feeder);
  const auto cum = cumulative_path_impedance(feeder);
  const int n = feeder.node_count();
  for (int i = 1; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      const Eigen::Matrix3cd& z = cum[feeder.lowest_common_ancestor(i, j)];
      for (int a = 0; a < kPhaseCount; ++a) {
        if (!feeder.node(i).phases.has(a)) continue;
        const int ia = pack.index.index(i, a);
        for (int b = 0; b < kPhaseCount; ++b) {
          if (!feeder.node(j).phases.has(b)) continue;
          const int jb = pack.index.index(j, b);
          const std::complex<double> fwd = std::conj(z(a, b)) * phase_rotation(a - b);
          pack.R(ia, jb) = 2.0 * fwd.real();
          pack.X(ia, jb) = -2.0 * fwd.imag();
          if (ia != jb) {
            const std::complex<double> rev = std::conj(z(b, a)) * phase_rotation(b - a);
            pack.R(jb, ia) = 2.0 * rev.real();
            pack.X(jb, ia) = -2.0 * rev.imag();
          }
        }
      }
    }
  }
  return pack;
}

SensitivityPack diagonal_phase_pack(const SensitivityPack& pack) {
  SensitivityPack out = pack;
  const int n = pack.index.size();
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (pack.index.coord(r).second != pack.index.coord(c).second) {
        out.R(r, c) = 0.0;
        out.X(r, c) = 0.0;
      }
    }
  }
  return out;
}

std::uint64_t PathImpedanceTable::key(int i, int j) {
  const std::uint32_t lo = static_cast<std::uint32_t>(std::min(i, j));
  const std::uint32_t hi = static_cast<std::uint32_t>(std::max(i, j));
  return (static_cast<std::uint64_t>(lo) << 32) | hi;
}

void PathImpedanceTable::insert(int i, int j, const Eigen::Matrix3cd& z) {
  entries_[key(i, j)] = z;
}

bool PathImpedanceTable::contains(int i, int j) const {
  return entries_.count(key(i, j)) != 0;
}

const Eigen::Matrix3cd& PathImpedanceTable::at(int i, int j) const {
  if (recording_) accessed_.emplace_back(i, j);
  auto it = entries_.find(key(i, j));
  if (it == entries_.end()) {
    throw ScopeError("impedance pair (" + std::to_string(i) + ", " + std::to_string(j) +
                     ") is outside this table's scope");
  }
  return it->second;
}

BlockStructureReport check_block_structure(const SensitivityPack& pack,
                                           const Feeder& feeder,
                                           const Partition& partition) {
  BlockStructureReport report;
  auto add = [&report](std::string msg) {
    report.ok = false;
    if (report.violations.size() < 100) report.violations.push_back(std::move(msg));
  };

  auto compare_pair = [&](int i, int ref_i, int j, int ref_j) {
    // every phase-expanded entry of (i, j) must equal the (ref_i, ref_j) entry
    for (int a = 0; a < kPhaseCount; ++a) {
      if (!feeder.node(i).phases.has(a)) continue;
      const int ra = pack.index.index(ref_i, a);
      if (ra < 0) continue;
      for (int b = 0; b < kPhaseCount; ++b) {
        if (!feeder.node(j).phases.has(b)) continue;
        const int rb = pack.index.index(ref_j, b);
        if (rb < 0) continue;
        const int ia = pack.index.index(i, a);
        const int jb = pack.index.index(j, b);
        if (pack.R(ia, jb) != pack.R(ra, rb) || pack.X(ia, jb) != pack.X(ra, rb)) {
          add("entry (" + feeder.node(i).name + ":" + phase_letter(a) + ", " +
              feeder.node(j).name + ":" + phase_letter(b) +
              ") differs from its root-pair value");
        }
      }
    }
  };

  const int k = partition.subtree_count();
  for (int h = 0; h < k; ++h) {
    for (int g = h + 1; g < k; ++g) {
      const Subtree &sh = partition.subtrees[h], &sg = partition.subtrees[g];
      for (int i : sh.members) {
        for (int j : sg.members) compare_pair(i, sh.root, j, sg.root);
      }
    }
  }
  for (int u : partition.unclustered) {
    for (const Subtree& s : partition.subtrees) {
      for (int j : s.members) compare_pair(u, u, j, s.root);
    }
  }
  return report;
}

void write_matrix_csv(std::ostream& os, const Feeder& feeder,
                      const PhaseIndexMap& index, const Eigen::MatrixXd& m) {
  os << "coord";
  for (int c = 0; c < index.size(); ++c) os << "," << index.label(feeder, c);
  os << "\n";
  char buf[64];
  for (int r = 0; r < m.rows(); ++r) {
    os << index.label(feeder, r);
    for (int c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      os << "," << buf;
    }
    os << "\n";
  }
}

}  // namespace voltreg
