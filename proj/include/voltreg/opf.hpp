#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "voltreg/clustering.hpp"
#include "voltreg/feeder.hpp"
#include "voltreg/powerflow.hpp"
#include "voltreg/sensitivity.hpp"

namespace voltreg {

enum class SolveMode { linear, feedback };

struct SolverConfig {
  double eps = 3.5e-4;        // primal stepsize
  double dual_scale = 1.0;    // dual stepsize = eps * dual_scale
  double eta = 1e-3;          // dual regularization
  double v_min = 0.95 * 0.95;
  double v_max = 1.05 * 1.05;
  std::optional<Eigen::VectorXd> v_min_vec;  // per-coordinate overrides
  std::optional<Eigen::VectorXd> v_max_vec;
  int max_iters = 20000;
  double sigma_p0 = 1e-6;    // stop: substation power change
  double sigma_step = 1e-8;  // stop: max-norm of the iterate change
  SolveMode mode = SolveMode::linear;
  // -1: check when the coordinate count is at most 512; 0: never; 1: always.
  int stability_check = -1;
  bool record_states = false;

  void validate() const;  // ConfigError on violated bounds
};

struct IterateState {
  Eigen::VectorXd p, q;
  Eigen::VectorXd mu_lo, mu_hi;  // multipliers of the lower/upper voltage bounds
  Eigen::VectorXd v;
  double p0 = 0.0;
};

struct Tangent {
  Eigen::VectorXd p, q, mu_lo, mu_hi;

  Eigen::VectorXd stacked() const;
  double dot(const Tangent& o) const;
  double norm() const;
};

/// Euclidean projection onto a device's feasible set. Boxes clamp per axis;
/// disk-constrained sets are resolved by closed-form case analysis over the
/// clamped point, the disk boundary and the two interval edges. Equidistant
/// candidates resolve to the larger q.
std::pair<double, double> project_to_set(const Device& dev, double p, double q);

/// One primal coordinate update shared verbatim by both engines.
inline std::pair<double, double> primal_update(const Device* dev, double p, double q,
                                               double c0_prime, double coup_p,
                                               double coup_q, double eps) {
  if (dev == nullptr) return {p, q};  // fixed injection
  const double gp = dev->cost.grad_p(p) - c0_prime + coup_p;
  const double gq = dev->cost.grad_q(q) + coup_q;
  return project_to_set(*dev, p - eps * gp, q - eps * gq);
}

/// One dual coordinate update shared verbatim by both engines.
inline double dual_update_lower(double mu, double v, double v_min, double eps_d,
                                double eta) {
  return std::max(0.0, mu + eps_d * (v_min - v - eta * mu));
}
inline double dual_update_upper(double mu, double v, double v_max, double eps_d,
                                double eta) {
  return std::max(0.0, mu + eps_d * (v - v_max - eta * mu));
}

/// Everything a solve needs, assembled once: coordinate-indexed devices,
/// materialized voltage bounds, the sensitivity pack and configuration.
struct OpfContext {
  const Feeder* feeder = nullptr;
  const SensitivityPack* pack = nullptr;
  SubstationCost substation;
  std::vector<const Device*> device_by_coord;  // nullptr where no device sits
  Eigen::VectorXd v_min, v_max;
  SolverConfig config;

  int dim() const { return static_cast<int>(device_by_coord.size()); }
};

OpfContext make_context(const FeederCase& c, const SensitivityPack& pack,
                        const SolverConfig& config);

/// Nominal start (seed 0): projected cost nominal points, zero duals.
/// Otherwise: injections drawn uniformly and projected, duals uniform in
/// [0, 0.5]. Outputs v and p0 are refreshed per the configured mode.
IterateState initial_state(const OpfContext& ctx, unsigned seed = 0);

/// Recompute v and p0 from the current injections: the linear model in
/// linear mode, the power-flow sweep in feedback mode.
void refresh_state_outputs(const OpfContext& ctx, IterateState& state);

/// The saddle-flow operator: gradients of the regularized Lagrangian in the
/// primal block, negated gradients in the dual block. Reads v and p0 from
/// the state (linear or measured, per the engine that produced them).
Tangent gradient_operator(const OpfContext& ctx, const IterateState& state);

double lagrangian_value(const OpfContext& ctx, const IterateState& state);
double device_cost_total(const OpfContext& ctx, const IterateState& state);

/// One projected primal-dual step, then a v/p0 refresh.
IterateState primal_dual_step(const OpfContext& ctx, const IterateState& state);

struct TrajectoryRow {
  int iter = 0;
  double step_norm = 0.0;
  double p0 = 0.0;
  double max_undervolt = 0.0;
  double max_overvolt = 0.0;
  double lagrangian = 0.0;
};

TrajectoryRow make_trajectory_row(const OpfContext& ctx, const IterateState& state,
                                  int iter, double step_norm);

enum class ExitReason { converged, iter_limit, diverged };

struct SolveResult {
  IterateState final_state;
  std::vector<TrajectoryRow> trajectory;
  std::vector<IterateState> states;  // populated when config.record_states
  ExitReason exit = ExitReason::iter_limit;
  int iters = 0;
  std::vector<std::string> warnings;
  OpCount coupling_ops;
  double solve_seconds = 0.0;
  double per_iter_seconds = 0.0;
};

SolveResult solve_centralized(const OpfContext& ctx, const IterateState& init);

struct OperatorConstants {
  double monotonicity = 0.0;  // lower bound on the strong-monotonicity modulus
  double lipschitz = 0.0;     // spectral norm of the operator Jacobian

  double step_bound() const { return 2.0 * monotonicity / (lipschitz * lipschitz); }
  double contraction(double eps) const {
    return 1.0 + eps * eps * lipschitz * lipschitz - 2.0 * eps * monotonicity;
  }
};

/// Monotonicity from the smallest cost curvature and the regularization;
/// Lipschitz constant from power iteration (tolerance 1e-8) on the assembled
/// Jacobian: cost curvatures and the substation rank-one term on the primal
/// diagonal, the regularization on the dual diagonal, and the skew voltage
/// coupling off-diagonal. Throws CurvatureError on non-positive curvature.
OperatorConstants estimate_operator_constants(const OpfContext& ctx);

/// True when the step norm signals instability: non-finite, huge, or far
/// above its running minimum after the early iterations.
bool diverging_step(double step_norm, double min_step, int iter);

double max_undervoltage(const OpfContext& ctx, const Eigen::VectorXd& v);
double max_overvoltage(const OpfContext& ctx, const Eigen::VectorXd& v);

}  // namespace voltreg
