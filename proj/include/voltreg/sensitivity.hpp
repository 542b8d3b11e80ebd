#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "voltreg/clustering.hpp"
#include "voltreg/feeder.hpp"

namespace voltreg {

/// Unit-magnitude rotation between phases, exact by table: exponent 0 -> 1,
/// 1 -> exp(-i*2*pi/3), 2 -> exp(+i*2*pi/3). Any integer exponent accepted.
std::complex<double> phase_rotation(int exponent);

/// Cumulative path impedance from the slack to every node, accumulated in
/// root-to-leaf order. Entry 0 is zero (the slack).
std::vector<Eigen::Matrix3cd> cumulative_path_impedance(const Feeder& feeder);

/// Summed phase impedance matrix of the common path of nodes i and j.
/// Entries for phases absent on a common-path line contribute zero.
Eigen::Matrix3cd common_path_impedance(const Feeder& feeder, int i, int j);

struct SensitivityPack {
  PhaseIndexMap index;
  Eigen::MatrixXd R;       // d v(row) / d p(col)
  Eigen::MatrixXd X;       // d v(row) / d q(col)
  Eigen::VectorXd v_base;  // voltage-squared offset per coordinate
};

/// Builder for feeders where every node carries the same single phase.
/// Throws PhaseError otherwise. R_ij is twice the summed resistance of the
/// common path of i and j; X_ij likewise with reactance.
SensitivityPack build_single_phase(const Feeder& feeder);

/// General builder. Row (i,phi), column (j,psi):
///   R = 2 Re{ conj(Z_ij(phi,psi)) * rotation(phi-psi) }
///   X = -2 Im{ conj(Z_ij(phi,psi)) * rotation(phi-psi) }
SensitivityPack build_multi_phase(const Feeder& feeder);

/// Copy of a pack with every cross-phase entry zeroed; models each phase as
/// an independent single-phase network.
SensitivityPack diagonal_phase_pack(const SensitivityPack& pack);

/// Impedance matrices for a restricted set of node pairs, keyed by unordered
/// pair. Lookups outside the stored scope throw ScopeError; an optional
/// recorder captures every queried pair for information-hiding checks.
class PathImpedanceTable {
 public:
  void insert(int i, int j, const Eigen::Matrix3cd& z);
  const Eigen::Matrix3cd& at(int i, int j) const;
  bool contains(int i, int j) const;
  std::size_t size() const { return entries_.size(); }

  void start_recording() const { recording_ = true; accessed_.clear(); }
  void stop_recording() const { recording_ = false; }
  const std::vector<std::pair<int, int>>& accessed() const { return accessed_; }

 private:
  static std::uint64_t key(int i, int j);
  std::unordered_map<std::uint64_t, Eigen::Matrix3cd> entries_;
  mutable bool recording_ = false;
  mutable std::vector<std::pair<int, int>> accessed_;
};

struct BlockStructureReport {
  bool ok = true;
  std::vector<std::string> violations;
};

/// Checks that all sensitivity entries between two distinct subtrees equal
/// the entry of their root pair exactly, and likewise for unclustered nodes
/// against subtree roots. Exact float comparison: valid partitions share the
/// common-path sum bitwise.
BlockStructureReport check_block_structure(const SensitivityPack& pack,
                                           const Feeder& feeder,
                                           const Partition& partition);

void write_matrix_csv(std::ostream& os, const Feeder& feeder,
                      const PhaseIndexMap& index, const Eigen::MatrixXd& m);

}  // namespace voltreg
