#include "voltreg/opf.hpp"

#include <chrono>
#include <cmath>
#include <random>

namespace voltreg {

void SolverConfig::validate() const {
  if (eps <= 0.0) throw ConfigError("eps must be positive");
  if (dual_scale <= 0.0) throw ConfigError("dual_scale must be positive");
  if (eta <= 0.0) throw ConfigError("eta must be positive");
  if (sigma_p0 <= 0.0 || sigma_step <= 0.0) throw ConfigError("stop thresholds must be positive");
  if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
  if (v_min_vec && v_max_vec) {
    if (v_min_vec->size() != v_max_vec->size()) throw ConfigError("bound vectors disagree in size");
    if (((*v_max_vec - *v_min_vec).array() <= 0.0).any()) {
      throw ConfigError("need v_min < v_max entrywise");
    }
  } else if (v_min >= v_max) {
    throw ConfigError("need v_min < v_max");
  }
}

Eigen::VectorXd Tangent::stacked() const {
  Eigen::VectorXd out(p.size() + q.size() + mu_lo.size() + mu_hi.size());
  out << p, q, mu_lo, mu_hi;
  return out;
}

double Tangent::dot(const Tangent& o) const {
  return p.dot(o.p) + q.dot(o.q) + mu_lo.dot(o.mu_lo) + mu_hi.dot(o.mu_hi);
}

double Tangent::norm() const { return std::sqrt(dot(*this)); }

std::pair<double, double> project_to_set(const Device& dev, double p, double q) {
  if (dev.kind == DeviceKind::box) {
    return {std::clamp(p, dev.p_min, dev.p_max), std::clamp(q, dev.q_min, dev.q_max)};
  }

  // p-interval cut down to where it meets the disk
  const double r = dev.cap;
  const double lo = std::max(dev.p_min, -r);
  const double hi = std::min(dev.p_max, r);

  const double pc = std::clamp(p, dev.p_min, dev.p_max);
  if (pc * pc + q * q <= r * r) return {pc, q};

  double best_p = 0.0, best_q = 0.0;
  double best_d = std::numeric_limits<double>::infinity();
  auto consider = [&](double cp, double cq) {
    const double d = (cp - p) * (cp - p) + (cq - q) * (cq - q);
    // ties resolve toward the larger q
    if (d < best_d || (d == best_d && cq > best_q)) {
      best_d = d;
      best_p = cp;
      best_q = cq;
    }
  };

  const double len = std::hypot(p, q);
  if (len > 0.0) {
    const double dp = r * p / len, dq = r * q / len;
    if (dp >= lo && dp <= hi) consider(dp, dq);
  }
  const double chord_lo = std::sqrt(std::max(r * r - lo * lo, 0.0));
  consider(lo, std::clamp(q, -chord_lo, chord_lo));
  const double chord_hi = std::sqrt(std::max(r * r - hi * hi, 0.0));
  consider(hi, std::clamp(q, -chord_hi, chord_hi));
  return {best_p, best_q};
}

OpfContext make_context(const FeederCase& c, const SensitivityPack& pack,
                        const SolverConfig& config) {
  config.validate();
  OpfContext ctx;
  ctx.feeder = &c.feeder;
  ctx.pack = &pack;
  ctx.substation = c.substation;
  ctx.config = config;

  const int n = pack.index.size();
  ctx.device_by_coord.assign(n, nullptr);
  for (const Device& d : c.devices) {
    const int idx = pack.index.index(d.node, d.phase);
    if (idx < 0) throw PhaseError("device coordinate missing from the index");
    ctx.device_by_coord[idx] = &d;
  }

  if (config.v_min_vec) {
    if (config.v_min_vec->size() != n) throw DimensionError("v_min vector size mismatch");
    ctx.v_min = *config.v_min_vec;
  } else {
    ctx.v_min = Eigen::VectorXd::Constant(n, config.v_min);
  }
  if (config.v_max_vec) {
    if (config.v_max_vec->size() != n) throw DimensionError("v_max vector size mismatch");
    ctx.v_max = *config.v_max_vec;
  } else {
    ctx.v_max = Eigen::VectorXd::Constant(n, config.v_max);
  }
  return ctx;
}

void refresh_state_outputs(const OpfContext& ctx, IterateState& state) {
  if (ctx.config.mode == SolveMode::linear) {
    state.v = linear_voltages(*ctx.pack, state.p, state.q);
    state.p0 = substation_power(*ctx.feeder, state.p);
  } else {
    const SweepResult sw = solve_power_flow(*ctx.feeder, ctx.pack->index, state.p, state.q);
    state.v = sw.state.v;
    state.p0 = sw.state.p0;
  }
}

IterateState initial_state(const OpfContext& ctx, unsigned seed) {
  const int n = ctx.dim();
  IterateState s;
  s.p.setZero(n);
  s.q.setZero(n);
  s.mu_lo.setZero(n);
  s.mu_hi.setZero(n);

  if (seed == 0) {
    for (int k = 0; k < n; ++k) {
      if (const Device* d = ctx.device_by_coord[k]) {
        auto [pp, qq] = project_to_set(*d, d->cost.p0, d->cost.q0);
        s.p[k] = pp;
        s.q[k] = qq;
      }
    }
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < n; ++k) {
      if (const Device* d = ctx.device_by_coord[k]) {
        const double span = std::max({std::abs(d->p_min), std::abs(d->p_max), d->cap, 0.1});
        auto [pp, qq] = project_to_set(*d, span * (2.0 * unit(rng) - 1.0),
                                       span * (2.0 * unit(rng) - 1.0));
        s.p[k] = pp;
        s.q[k] = qq;
      }
    }
    for (int k = 0; k < n; ++k) s.mu_lo[k] = 0.5 * unit(rng);
    for (int k = 0; k < n; ++k) s.mu_hi[k] = 0.5 * unit(rng);
  }
  refresh_state_outputs(ctx, s);
  return s;
}

Tangent gradient_operator(const OpfContext& ctx, const IterateState& state) {
  const int n = ctx.dim();
  if (state.p.size() != n || state.q.size() != n || state.mu_lo.size() != n ||
      state.mu_hi.size() != n || state.v.size() != n) {
    throw DimensionError("iterate state does not match the coordinate count");
  }
  Tangent t;
  const Eigen::VectorXd mudiff = state.mu_hi - state.mu_lo;
  t.p = ctx.pack->R.transpose() * mudiff;
  t.q = ctx.pack->X.transpose() * mudiff;
  const double c0p = ctx.substation.derivative(state.p0);
  for (int k = 0; k < n; ++k) {
    if (const Device* d = ctx.device_by_coord[k]) {
      t.p[k] += d->cost.grad_p(state.p[k]) - c0p;
      t.q[k] += d->cost.grad_q(state.q[k]);
    } else {
      t.p[k] += -c0p;
    }
  }
  const double eta = ctx.config.eta;
  t.mu_lo = -(ctx.v_min - state.v - eta * state.mu_lo);
  t.mu_hi = -(state.v - ctx.v_max - eta * state.mu_hi);
  return t;
}

double device_cost_total(const OpfContext& ctx, const IterateState& state) {
  double total = 0.0;
  for (int k = 0; k < ctx.dim(); ++k) {
    if (const Device* d = ctx.device_by_coord[k]) {
      total += d->cost.value(state.p[k], state.q[k]);
    }
  }
  return total;
}

double lagrangian_value(const OpfContext& ctx, const IterateState& state) {
  const double eta = ctx.config.eta;
  double value = device_cost_total(ctx, state) + ctx.substation.value(state.p0);
  value += state.mu_lo.dot(ctx.v_min - state.v);
  value += state.mu_hi.dot(state.v - ctx.v_max);
  value -= 0.5 * eta * (state.mu_lo.squaredNorm() + state.mu_hi.squaredNorm());
  return value;
}

IterateState primal_dual_step(const OpfContext& ctx, const IterateState& state) {
  const int n = ctx.dim();
  IterateState next;
  next.p.resize(n);
  next.q.resize(n);
  next.mu_lo.resize(n);
  next.mu_hi.resize(n);

  const Eigen::VectorXd mudiff = state.mu_hi - state.mu_lo;
  const Eigen::VectorXd coup_p = ctx.pack->R.transpose() * mudiff;
  const Eigen::VectorXd coup_q = ctx.pack->X.transpose() * mudiff;
  const double c0p = ctx.substation.derivative(state.p0);
  const double eps = ctx.config.eps;
  const double eps_d = ctx.config.eps * ctx.config.dual_scale;
  const double eta = ctx.config.eta;

  for (int k = 0; k < n; ++k) {
    auto [pp, qq] = primal_update(ctx.device_by_coord[k], state.p[k], state.q[k], c0p,
                                  coup_p[k], coup_q[k], eps);
    next.p[k] = pp;
    next.q[k] = qq;
    next.mu_lo[k] = dual_update_lower(state.mu_lo[k], state.v[k], ctx.v_min[k], eps_d, eta);
    next.mu_hi[k] = dual_update_upper(state.mu_hi[k], state.v[k], ctx.v_max[k], eps_d, eta);
  }
  refresh_state_outputs(ctx, next);
  return next;
}

double max_undervoltage(const OpfContext& ctx, const Eigen::VectorXd& v) {
  return std::max(0.0, (ctx.v_min - v).maxCoeff());
}

double max_overvoltage(const OpfContext& ctx, const Eigen::VectorXd& v) {
  return std::max(0.0, (v - ctx.v_max).maxCoeff());
}

TrajectoryRow make_trajectory_row(const OpfContext& ctx, const IterateState& state,
                                  int iter, double step_norm) {
  TrajectoryRow row;
  row.iter = iter;
  row.step_norm = step_norm;
  row.p0 = state.p0;
  row.max_undervolt = max_undervoltage(ctx, state.v);
  row.max_overvolt = max_overvoltage(ctx, state.v);
  row.lagrangian = lagrangian_value(ctx, state);
  return row;
}

namespace {

double state_step_norm(const IterateState& a, const IterateState& b) {
  double m = (a.p - b.p).cwiseAbs().maxCoeff();
  m = std::max(m, (a.q - b.q).cwiseAbs().maxCoeff());
  m = std::max(m, (a.mu_lo - b.mu_lo).cwiseAbs().maxCoeff());
  m = std::max(m, (a.mu_hi - b.mu_hi).cwiseAbs().maxCoeff());
  return m;
}

}  // namespace

// Projection keeps iterates bounded, so instability shows up as a step norm
// climbing far above its running minimum rather than as an overflow.
bool diverging_step(double step_norm, double min_step, int iter) {
  if (!std::isfinite(step_norm) || step_norm > 1e9) return true;
  return iter > 50 && step_norm > 1e-6 && step_norm > 1e3 * min_step;
}

SolveResult solve_centralized(const OpfContext& ctx, const IterateState& init) {
  ctx.config.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int n = ctx.dim();

  SolveResult result;
  const bool check =
      ctx.config.stability_check == 1 || (ctx.config.stability_check == -1 && n <= 512);
  if (check) {
    try {
      const OperatorConstants oc = estimate_operator_constants(ctx);
      if (ctx.config.eps >= oc.step_bound()) {
        result.warnings.push_back(
            "stepsize " + std::to_string(ctx.config.eps) +
            " is at or above the stability bound " + std::to_string(oc.step_bound()));
      }
    } catch (const CurvatureError& e) {
      result.warnings.push_back(std::string("stability check skipped: ") + e.what());
    }
  }

  IterateState state = init;
  refresh_state_outputs(ctx, state);
  result.trajectory.push_back(make_trajectory_row(ctx, state, 0, 0.0));
  if (ctx.config.record_states) result.states.push_back(state);

  result.exit = ExitReason::iter_limit;
  double min_step = std::numeric_limits<double>::infinity();
  int it = 0;
  for (it = 1; it <= ctx.config.max_iters; ++it) {
    IterateState next = primal_dual_step(ctx, state);
    // one op per (impedance entry, dual) pair, the same accounting the
    // hierarchical engine uses for its complex coupling products
    result.coupling_ops.mults += static_cast<std::uint64_t>(n) * n;
    result.coupling_ops.adds += static_cast<std::uint64_t>(n) * (n > 0 ? n - 1 : 0);

    const double step_norm = state_step_norm(next, state);
    result.trajectory.push_back(make_trajectory_row(ctx, next, it, step_norm));
    if (ctx.config.record_states) result.states.push_back(next);

    const double dp0 = std::abs(next.p0 - state.p0);
    state = std::move(next);

    if (diverging_step(step_norm, min_step, it)) {
      result.warnings.push_back("divergence detected: growing step norm");
      result.exit = ExitReason::diverged;
      break;
    }
    min_step = std::min(min_step, step_norm);
    if (dp0 < ctx.config.sigma_p0 && step_norm < ctx.config.sigma_step) {
      result.exit = ExitReason::converged;
      break;
    }
  }
  result.iters = std::min(it, ctx.config.max_iters);
  if (!result.coupling_ops.per_actor.empty()) result.coupling_ops.per_actor.clear();
  result.coupling_ops.per_actor.push_back(
      {"central", result.coupling_ops.mults, result.coupling_ops.adds});
  result.final_state = std::move(state);

  const auto t_end = std::chrono::steady_clock::now();
  result.solve_seconds = std::chrono::duration<double>(t_end - t_start).count();
  result.per_iter_seconds = result.iters > 0 ? result.solve_seconds / result.iters : 0.0;
  return result;
}

namespace {

// Jacobian of the operator for quadratic costs: cost curvatures plus the
// substation rank-one term on the primal diagonal, eta on the dual diagonal,
// skew voltage coupling off the diagonal.
struct OperatorJacobian {
  const OpfContext* ctx;
  Eigen::VectorXd hp, hq;
  double alpha2 = 0.0;

  explicit OperatorJacobian(const OpfContext& c) : ctx(&c) {
    const int n = c.dim();
    hp.setZero(n);
    hq.setZero(n);
    for (int k = 0; k < n; ++k) {
      if (const Device* d = c.device_by_coord[k]) {
        if (d->cost.cp <= 0.0 || d->cost.cq <= 0.0) {
          throw CurvatureError("device cost curvature must be positive");
        }
        hp[k] = 2.0 * d->cost.cp;
        hq[k] = 2.0 * d->cost.cq;
      }
    }
    alpha2 = 2.0 * c.substation.alpha;
  }

  Tangent apply(const Tangent& d) const {
    const Eigen::MatrixXd& R = ctx->pack->R;
    const Eigen::MatrixXd& X = ctx->pack->X;
    const double eta = ctx->config.eta;
    Tangent y;
    y.p = hp.cwiseProduct(d.p) + Eigen::VectorXd::Constant(d.p.size(), alpha2 * d.p.sum()) -
          R.transpose() * d.mu_lo + R.transpose() * d.mu_hi;
    y.q = hq.cwiseProduct(d.q) - X.transpose() * d.mu_lo + X.transpose() * d.mu_hi;
    y.mu_lo = R * d.p + X * d.q + eta * d.mu_lo;
    y.mu_hi = -(R * d.p) - X * d.q + eta * d.mu_hi;
    return y;
  }

  Tangent apply_transpose(const Tangent& d) const {
    const Eigen::MatrixXd& R = ctx->pack->R;
    const Eigen::MatrixXd& X = ctx->pack->X;
    const double eta = ctx->config.eta;
    Tangent y;
    y.p = hp.cwiseProduct(d.p) + Eigen::VectorXd::Constant(d.p.size(), alpha2 * d.p.sum()) +
          R.transpose() * d.mu_lo - R.transpose() * d.mu_hi;
    y.q = hq.cwiseProduct(d.q) + X.transpose() * d.mu_lo - X.transpose() * d.mu_hi;
    y.mu_lo = -(R * d.p) - X * d.q + eta * d.mu_lo;
    y.mu_hi = R * d.p + X * d.q + eta * d.mu_hi;
    return y;
  }
};

}  // namespace

OperatorConstants estimate_operator_constants(const OpfContext& ctx) {
  const int n = ctx.dim();
  OperatorJacobian jac(ctx);

  double min_curv = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) {
    if (const Device* d = ctx.device_by_coord[k]) {
      min_curv = std::min({min_curv, 2.0 * d->cost.cp, 2.0 * d->cost.cq});
    }
  }
  OperatorConstants out;
  out.monotonicity = std::min(min_curv, ctx.config.eta);

  // Power iteration for the top singular value, deterministic start.
  Tangent u;
  u.p.resize(n);
  u.q.resize(n);
  u.mu_lo.resize(n);
  u.mu_hi.resize(n);
  for (int k = 0; k < n; ++k) {
    u.p[k] = 1.0 + 1e-4 * k;
    u.q[k] = 1.0 - 1e-4 * k;
    u.mu_lo[k] = 0.5 + 1e-4 * k;
    u.mu_hi[k] = 0.5 - 1e-4 * k;
  }
  double nrm = u.norm();
  u.p /= nrm; u.q /= nrm; u.mu_lo /= nrm; u.mu_hi /= nrm;

  double sigma = 0.0;
  const double tol = 1e-8;
  for (int iter = 0; iter < 20000; ++iter) {
    Tangent w = jac.apply(u);
    const double s = w.norm();
    Tangent v = jac.apply_transpose(w);
    const double vn = v.norm();
    if (vn == 0.0) { sigma = 0.0; break; }
    u.p = v.p / vn; u.q = v.q / vn; u.mu_lo = v.mu_lo / vn; u.mu_hi = v.mu_hi / vn;
    if (std::abs(s - sigma) <= tol * std::max(1.0, s)) {
      sigma = s;
      break;
    }
    sigma = s;
  }
  out.lipschitz = sigma;
  if (out.monotonicity > out.lipschitz) {
    throw CurvatureError("estimated monotonicity exceeds the Lipschitz constant");
  }
  return out;
}

}  // namespace voltreg
