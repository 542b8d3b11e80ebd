#include "voltreg/powerflow.hpp"

#include <cmath>
#include <complex>

namespace voltreg {

namespace {
using Cplx = std::complex<double>;
}

Eigen::VectorXd linear_voltages(const SensitivityPack& pack, const Eigen::VectorXd& p,
                                const Eigen::VectorXd& q) {
  const int n = pack.index.size();
  if (p.size() != n || q.size() != n) {
    throw DimensionError("injection vectors must match the coordinate count");
  }
  return pack.R * p + pack.X * q + pack.v_base;
}

double substation_power(const Feeder& feeder, const Eigen::VectorXd& p) {
  double total = 0.0;
  for (int ph = 0; ph < kPhaseCount; ++ph) total += feeder.inelastic[ph];
  double injections = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) injections += p[k];
  return -total - injections;
}

namespace {

// One complex-power accumulation pass with the voltage-drop recursion applied
// to squared magnitudes; reproduces the linear model without iteration.
SweepResult lossless_sweep(const Feeder& feeder, const PhaseIndexMap& index,
                           const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  const int n = feeder.node_count();
  std::vector<std::array<Cplx, 3>> line_s(feeder.line_count(), {Cplx{}, Cplx{}, Cplx{}});

  for (int j = n - 1; j >= 1; --j) {
    const int l = feeder.node(j).parent_line;
    auto& s = line_s[l];
    for (int ph = 0; ph < kPhaseCount; ++ph) {
      if (!feeder.line(l).phases.has(ph)) continue;
      Cplx acc{};
      const int idx = index.index(j, ph);
      if (idx >= 0) acc -= Cplx(p[idx], q[idx]);
      for (int c : feeder.children_of(j)) {
        const int cl = feeder.node(c).parent_line;
        if (feeder.line(cl).phases.has(ph)) acc += line_s[cl][ph];
      }
      s[ph] = acc;
    }
  }

  SweepResult out;
  out.sweeps = 1;
  out.state.p = p;
  out.state.q = q;
  out.state.v.resize(index.size());
  std::vector<std::array<double, 3>> v(n, {0.0, 0.0, 0.0});
  for (int ph = 0; ph < kPhaseCount; ++ph) v[0][ph] = feeder.slack_v2[ph];
  for (int j = 1; j < n; ++j) {
    const int l = feeder.node(j).parent_line;
    const Line& ln = feeder.line(l);
    for (int a = 0; a < kPhaseCount; ++a) {
      if (!feeder.node(j).phases.has(a)) continue;
      Cplx drop{};
      for (int b = 0; b < kPhaseCount; ++b) {
        if (!ln.phases.has(b)) continue;
        drop += std::conj(ln.z(a, b)) * phase_rotation(a - b) * line_s[l][b];
      }
      v[j][a] = v[ln.from][a] - 2.0 * drop.real();
      const int idx = index.index(j, a);
      out.state.v[idx] = v[j][a];
    }
  }

  double grid_power = 0.0;
  for (int c : feeder.children_of(0)) {
    const int cl = feeder.node(c).parent_line;
    for (int ph = 0; ph < kPhaseCount; ++ph) {
      if (feeder.line(cl).phases.has(ph)) grid_power += line_s[cl][ph].real();
    }
  }
  double inelastic_total = 0.0;
  for (int ph = 0; ph < kPhaseCount; ++ph) inelastic_total += feeder.inelastic[ph];
  out.state.p0 = grid_power - inelastic_total;

  for (int l = 0; l < feeder.line_count(); ++l) {
    for (int ph = 0; ph < kPhaseCount; ++ph) {
      if (!feeder.line(l).phases.has(ph)) continue;
      out.branches.flows.push_back(
          {l, ph, line_s[l][ph].real(), line_s[l][ph].imag(), 0.0});
    }
  }
  return out;
}

}  // namespace

SweepResult solve_power_flow(const Feeder& feeder, const PhaseIndexMap& index,
                             const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                             const SweepOptions& opts) {
  if (p.size() != index.size() || q.size() != index.size()) {
    throw DimensionError("injection vectors must match the coordinate count");
  }
  if (opts.lossless) return lossless_sweep(feeder, index, p, q);

  const int n = feeder.node_count();
  std::vector<std::array<Cplx, 3>> volt(n), line_j(feeder.line_count());
  for (int ph = 0; ph < kPhaseCount; ++ph) {
    volt[0][ph] = std::sqrt(std::max(feeder.slack_v2[ph], 0.0)) * phase_rotation(ph);
  }
  for (int i = 1; i < n; ++i) {
    for (int ph = 0; ph < kPhaseCount; ++ph) volt[i][ph] = volt[0][ph];
  }

  int sweep = 0;
  for (; sweep < opts.max_sweeps; ++sweep) {
    // backward: aggregate currents toward the slack
    for (int j = n - 1; j >= 1; --j) {
      const int l = feeder.node(j).parent_line;
      const Line& ln = feeder.line(l);
      for (int ph = 0; ph < kPhaseCount; ++ph) {
        if (!ln.phases.has(ph)) continue;
        Cplx acc{};
        const int idx = index.index(j, ph);
        if (idx >= 0) {
          const Cplx s(p[idx], q[idx]);
          if (s != Cplx{}) acc -= std::conj(s / volt[j][ph]);
        }
        for (int c : feeder.children_of(j)) {
          const int cl = feeder.node(c).parent_line;
          if (feeder.line(cl).phases.has(ph)) acc += line_j[cl][ph];
        }
        line_j[l][ph] = acc;
      }
    }
    // forward: propagate voltage drops
    double delta = 0.0;
    for (int j = 1; j < n; ++j) {
      const int l = feeder.node(j).parent_line;
      const Line& ln = feeder.line(l);
      for (int a = 0; a < kPhaseCount; ++a) {
        if (!ln.phases.has(a)) continue;
        Cplx drop{};
        for (int b = 0; b < kPhaseCount; ++b) {
          if (ln.phases.has(b)) drop += ln.z(a, b) * line_j[l][b];
        }
        const Cplx next = volt[ln.from][a] - drop;
        delta = std::max(delta, std::abs(next - volt[j][a]));
        volt[j][a] = next;
      }
    }
    if (!std::isfinite(delta)) {
      throw NoConvergenceError("power-flow sweep lost finiteness (voltage collapse)");
    }
    if (delta < opts.tol) {
      ++sweep;
      break;
    }
  }
  if (sweep >= opts.max_sweeps) {
    throw NoConvergenceError("power-flow sweep did not reach tolerance in " +
                             std::to_string(opts.max_sweeps) + " sweeps");
  }

  SweepResult out;
  out.sweeps = sweep;
  out.state.p = p;
  out.state.q = q;
  out.state.v.resize(index.size());
  for (int k = 0; k < index.size(); ++k) {
    auto [node, ph] = index.coord(k);
    // rebased on the slack reference: a no-load sweep returns the base
    // profile exactly even though the rotated slack phasors round
    out.state.v[k] =
        feeder.slack_v2[ph] + (std::norm(volt[node][ph]) - std::norm(volt[0][ph]));
  }

  double grid_power = 0.0;
  for (int c : feeder.children_of(0)) {
    const int cl = feeder.node(c).parent_line;
    for (int ph = 0; ph < kPhaseCount; ++ph) {
      if (feeder.line(cl).phases.has(ph)) {
        grid_power += (volt[0][ph] * std::conj(line_j[cl][ph])).real();
      }
    }
  }
  double inelastic_total = 0.0;
  for (int ph = 0; ph < kPhaseCount; ++ph) inelastic_total += feeder.inelastic[ph];
  out.state.p0 = grid_power - inelastic_total;

  for (int l = 0; l < feeder.line_count(); ++l) {
    const Line& ln = feeder.line(l);
    for (int ph = 0; ph < kPhaseCount; ++ph) {
      if (!ln.phases.has(ph)) continue;
      const Cplx s = volt[ln.from][ph] * std::conj(line_j[l][ph]);
      out.branches.flows.push_back({l, ph, s.real(), s.imag(), std::norm(line_j[l][ph])});
    }
  }
  return out;
}

std::pair<double, double> model_discrepancy(const Feeder& feeder,
                                            const SensitivityPack& pack,
                                            const Eigen::VectorXd& p,
                                            const Eigen::VectorXd& q) {
  const Eigen::VectorXd v_lin = linear_voltages(pack, p, q);
  const double p0_lin = substation_power(feeder, p);
  const SweepResult sw = solve_power_flow(feeder, pack.index, p, q);
  return {(v_lin - sw.state.v).norm(), std::abs(p0_lin - sw.state.p0)};
}

}  // namespace voltreg
