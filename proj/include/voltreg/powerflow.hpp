#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "voltreg/feeder.hpp"
#include "voltreg/sensitivity.hpp"

namespace voltreg {

struct PowerState {
  Eigen::VectorXd p;  // injections, generation positive
  Eigen::VectorXd q;
  Eigen::VectorXd v;  // squared voltage magnitudes
  double p0 = 0.0;    // substation active power into the feeder
};

struct BranchFlow {
  int line = -1;
  int phase = 0;
  double p = 0.0;  // sending-end complex power
  double q = 0.0;
  double ell = 0.0;  // squared current magnitude
};

struct BranchState {
  std::vector<BranchFlow> flows;  // ordered by (line, phase)
};

/// v = R p + X q + v_base. Throws DimensionError on size mismatch.
Eigen::VectorXd linear_voltages(const SensitivityPack& pack,
                                const Eigen::VectorXd& p,
                                const Eigen::VectorXd& q);

/// Substation power of the linear model: minus the inelastic total minus the
/// sum of all controllable injections.
double substation_power(const Feeder& feeder, const Eigen::VectorXd& p);

struct SweepOptions {
  double tol = 1e-10;   // max voltage-phasor change per sweep
  int max_sweeps = 100;
  bool lossless = false;
};

struct SweepResult {
  PowerState state;
  BranchState branches;
  int sweeps = 0;
};

/// Backward/forward sweep with constant-power injections and full phase
/// coupling through the line impedance matrices. Starts flat at the slack
/// phasors (phase b rotated by -2pi/3, phase c by +2pi/3) and iterates
/// current aggregation / voltage drops until the largest phasor change falls
/// below tol. Throws NoConvergenceError past max_sweeps or on voltage
/// collapse. With lossless=true a single power-summation sweep is run
/// instead, which reproduces the linear model exactly.
///
/// The inelastic totals have no per-node placement, so they enter the
/// substation power as a constant, the same bookkeeping the linear model
/// uses; the reported p0 therefore differs from the linear value by network
/// losses only.
SweepResult solve_power_flow(const Feeder& feeder, const PhaseIndexMap& index,
                             const Eigen::VectorXd& p,
                             const Eigen::VectorXd& q,
                             const SweepOptions& opts = {});

/// (||v_linear - v_sweep||_2, |p0_linear - p0_sweep|) at one operating point.
std::pair<double, double> model_discrepancy(const Feeder& feeder,
                                            const SensitivityPack& pack,
                                            const Eigen::VectorXd& p,
                                            const Eigen::VectorXd& q);

}  // namespace voltreg
