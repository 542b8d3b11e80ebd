#include "voltreg/hierarchical.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

namespace voltreg {

std::string ActorId::str() const {
  switch (kind) {
    case Kind::cc: return "cc";
    case Kind::rc: return "rc:" + std::to_string(index);
    case Kind::node: return index < 0 ? "nodes:*" : "node:" + std::to_string(index);
    case Kind::grid: return "grid";
  }
  return "?";
}

const char* payload_kind(const Payload& p) {
  struct Visitor {
    const char* operator()(const DualReport&) const { return "dual_report"; }
    const char* operator()(const DualAggregate&) const { return "dual_aggregate"; }
    const char* operator()(const OutCoupling&) const { return "out_coupling"; }
    const char* operator()(const NodeCoupling&) const { return "node_coupling"; }
    const char* operator()(const SubstationBroadcast&) const { return "substation_broadcast"; }
    const char* operator()(const RootProvision&) const { return "root_provision"; }
    const char* operator()(const InjectionReport&) const { return "injection_report"; }
    const char* operator()(const VoltageUpdate&) const { return "voltage_update"; }
    const char* operator()(const SubstationPower&) const { return "substation_power"; }
  };
  return std::visit(Visitor{}, p);
}

RcTables build_rc_tables(const Feeder& feeder, const Subtree& subtree,
                         const Eigen::Matrix3cd& provisioned_root) {
  RcTables rc;
  rc.subtree = -1;
  rc.members = subtree.members;
  std::sort(rc.members.begin(), rc.members.end());

  // Cumulative impedance per member, seeded with the provisioned slack-to-root
  // segment and extended with subtree-local lines in root-to-leaf order.
  std::unordered_map<int, Eigen::Matrix3cd> cum;
  cum[subtree.root] = provisioned_root;
  for (int m : rc.members) {
    if (m == subtree.root) continue;
    const NodeInfo& nd = feeder.node(m);
    auto it = cum.find(nd.parent);
    if (it == cum.end()) {
      throw ConfigError("subtree member '" + feeder.node(m).name +
                        "' is detached from its root");
    }
    cum[m] = it->second + feeder.line(nd.parent_line).z;
  }
  for (std::size_t a = 0; a < rc.members.size(); ++a) {
    for (std::size_t b = a; b < rc.members.size(); ++b) {
      const int i = rc.members[a], j = rc.members[b];
      rc.table.insert(i, j, cum.at(feeder.lowest_common_ancestor(i, j)));
    }
  }
  return rc;
}

CcTables build_cc_tables(const Feeder& feeder, const Partition& partition) {
  CcTables cc;
  for (const Subtree& s : partition.subtrees) cc.roots.push_back(s.root);
  cc.unclustered = partition.unclustered;

  const ReducedNetwork reduced = reduce_network(feeder, partition);
  std::unordered_map<int, Eigen::Matrix3cd> cum;
  cum[0] = Eigen::Matrix3cd::Zero();
  for (int u : reduced.nodes) {  // ascending, parents first
    if (u == 0) continue;
    const NodeInfo& nd = feeder.node(u);
    auto it = cum.find(nd.parent);
    if (it == cum.end()) {
      throw ConfigError("reduced network is not ancestor-closed; partition invalid");
    }
    cum[u] = it->second + feeder.line(nd.parent_line).z;
  }
  for (std::size_t a = 1; a < reduced.nodes.size(); ++a) {
    for (std::size_t b = a; b < reduced.nodes.size(); ++b) {
      const int i = reduced.nodes[a], j = reduced.nodes[b];
      cc.table.insert(i, j, cum.at(feeder.lowest_common_ancestor(i, j)));
    }
  }
  for (int r : cc.roots) cc.root_z.push_back(cum.at(r));
  return cc;
}

DualAggregate rc_aggregate(const Feeder& feeder, const Subtree& subtree,
                           const std::vector<DualReport>& member_reports,
                           OpCounter& ops) {
  if (member_reports.size() != subtree.members.size()) {
    throw MissingMessageError("regional coordinator " + std::to_string(subtree.root) +
                              " is missing member dual reports");
  }
  DualAggregate agg;
  agg.sums = {0.0, 0.0, 0.0};
  for (int ph = 0; ph < kPhaseCount; ++ph) {
    int count = 0;
    for (const DualReport& r : member_reports) {  // caller keeps ascending order
      if (!feeder.node(r.node).phases.has(ph)) continue;
      agg.sums[ph] += r.diff[ph];
      ++count;
    }
    if (count > 1) ops.adds += static_cast<std::uint64_t>(count - 1);
  }
  return agg;
}

namespace {

// s = 2 * sum over source phases of rotation(source-target) * (sum over
// sources of conj(Z(source,target)) * dual). One multiplication is counted
// per (impedance entry, dual) product, one addition per accumulation.
struct CouplingAccumulator {
  std::complex<double> acc{};
  int terms = 0;

  void add(const Eigen::Matrix3cd& z, int sp, int tp, double dual,
           std::complex<double>& inner, OpCounter& ops) {
    inner += std::conj(z(sp, tp)) * dual;
    ops.mults += 1;
    ++terms;
  }
};

}  // namespace

void cc_compute_couplings(const Feeder& feeder, const Partition& partition,
                          const CcTables& cc,
                          const std::vector<DualAggregate>& aggregates,
                          const std::vector<DualReport>& unclustered_duals,
                          std::vector<OutCoupling>& out,
                          std::vector<NodeCoupling>& unclustered_out,
                          OpCounter& ops) {
  const int k_count = partition.subtree_count();
  if (static_cast<int>(aggregates.size()) != k_count) {
    throw MissingMessageError("central coordinator is missing subtree aggregates");
  }
  if (unclustered_duals.size() != partition.unclustered.size()) {
    throw MissingMessageError("central coordinator is missing unclustered duals");
  }

  out.assign(k_count, OutCoupling{});
  for (int k = 0; k < k_count; ++k) {
    const int root_k = cc.roots[k];
    out[k].subtree = k;
    for (int tp = 0; tp < kPhaseCount; ++tp) {
      if (!feeder.node(root_k).phases.has(tp)) continue;
      std::complex<double> acc{};
      int terms = 0;
      for (int sp = 0; sp < kPhaseCount; ++sp) {
        std::complex<double> inner{};
        int inner_terms = 0;
        for (int h = 0; h < k_count; ++h) {
          if (h == k || !feeder.node(cc.roots[h]).phases.has(sp)) continue;
          inner += std::conj(cc.table.at(cc.roots[h], root_k)(sp, tp)) * aggregates[h].sums[sp];
          ops.mults += 1;
          ++inner_terms;
        }
        for (const DualReport& r : unclustered_duals) {
          if (!feeder.node(r.node).phases.has(sp)) continue;
          inner += std::conj(cc.table.at(r.node, root_k)(sp, tp)) * r.diff[sp];
          ops.mults += 1;
          ++inner_terms;
        }
        if (inner_terms > 0) {
          acc += phase_rotation(sp - tp) * inner;
          terms += inner_terms;
        }
      }
      if (terms > 1) ops.adds += static_cast<std::uint64_t>(terms - 1);
      out[k].s[tp] = 2.0 * acc;
    }
  }

  unclustered_out.assign(unclustered_duals.size(), NodeCoupling{});
  for (std::size_t u = 0; u < unclustered_duals.size(); ++u) {
    const int i = unclustered_duals[u].node;
    unclustered_out[u].node = i;
    for (int tp = 0; tp < kPhaseCount; ++tp) {
      if (!feeder.node(i).phases.has(tp)) continue;
      std::complex<double> acc{};
      int terms = 0;
      for (int sp = 0; sp < kPhaseCount; ++sp) {
        std::complex<double> inner{};
        int inner_terms = 0;
        for (int k = 0; k < k_count; ++k) {
          if (!feeder.node(cc.roots[k]).phases.has(sp)) continue;
          inner += std::conj(cc.table.at(cc.roots[k], i)(sp, tp)) * aggregates[k].sums[sp];
          ops.mults += 1;
          ++inner_terms;
        }
        for (const DualReport& r : unclustered_duals) {
          if (!feeder.node(r.node).phases.has(sp)) continue;
          inner += std::conj(cc.table.at(r.node, i)(sp, tp)) * r.diff[sp];
          ops.mults += 1;
          ++inner_terms;
        }
        if (inner_terms > 0) {
          acc += phase_rotation(sp - tp) * inner;
          terms += inner_terms;
        }
      }
      if (terms > 1) ops.adds += static_cast<std::uint64_t>(terms - 1);
      unclustered_out[u].s[tp] = 2.0 * acc;
    }
  }
}

void rc_distribute(const Feeder& feeder, const RcTables& rc,
                   const std::vector<DualReport>& member_reports,
                   const OutCoupling& external, std::vector<NodeCoupling>& out,
                   OpCounter& ops) {
  if (member_reports.size() != rc.members.size()) {
    throw MissingMessageError("regional coordinator is missing member dual reports");
  }
  out.assign(rc.members.size(), NodeCoupling{});
  for (std::size_t a = 0; a < rc.members.size(); ++a) {
    const int i = rc.members[a];
    out[a].node = i;
    for (int tp = 0; tp < kPhaseCount; ++tp) {
      if (!feeder.node(i).phases.has(tp)) continue;
      std::complex<double> acc{};
      int terms = 0;
      for (int sp = 0; sp < kPhaseCount; ++sp) {
        std::complex<double> inner{};
        int inner_terms = 0;
        for (const DualReport& r : member_reports) {  // ascending member order
          if (!feeder.node(r.node).phases.has(sp)) continue;
          inner += std::conj(rc.table.at(r.node, i)(sp, tp)) * r.diff[sp];
          ops.mults += 1;
          ++inner_terms;
        }
        if (inner_terms > 0) {
          acc += phase_rotation(sp - tp) * inner;
          terms += inner_terms;
        }
      }
      if (terms > 1) ops.adds += static_cast<std::uint64_t>(terms - 1);
      out[a].s[tp] = 2.0 * acc + external.s[tp];
      ops.adds += 1;  // fold in the external part
    }
  }
}

namespace {

using Clock = std::chrono::steady_clock;

struct Permuter {
  std::mt19937_64 rng;
  bool active = false;

  explicit Permuter(unsigned seed) : rng(seed), active(seed != 0) {}

  std::vector<int> order(int count) {
    std::vector<int> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    if (active) std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
  }
};

struct MessageBuffer {
  std::vector<Message> buf;
  const std::function<void(const Message&)>* sink = nullptr;

  void emit(int iter, int step, ActorId from, ActorId to, Payload payload) {
    if (sink && *sink) buf.push_back({iter, step, from, to, std::move(payload)});
  }
  void flush() {
    if (!sink || !*sink) return;
    std::stable_sort(buf.begin(), buf.end(), [](const Message& a, const Message& b) {
      auto key = [](const Message& m) {
        return std::tuple(m.step, static_cast<int>(m.from.kind), m.from.index,
                          static_cast<int>(m.to.kind), m.to.index);
      };
      return key(a) < key(b);
    });
    for (const Message& m : buf) (*sink)(m);
    buf.clear();
  }
};

}  // namespace

HierarchicalResult run_hierarchical(const OpfContext& ctx, const Partition& partition,
                                    const IterateState& init,
                                    const HierarchicalOptions& opts) {
  ctx.config.validate();
  {
    const auto violations = validate_partition(*ctx.feeder, partition);
    if (!violations.empty()) {
      throw ConfigError("invalid partition: " + violations.front() + " (and " +
                        std::to_string(violations.size() - 1) + " more)");
    }
  }
  const Feeder& feeder = *ctx.feeder;
  const PhaseIndexMap& index = ctx.pack->index;
  const int n_coord = ctx.dim();
  const int k_count = partition.subtree_count();
  const auto t_start = Clock::now();

  // Simulated link latency: every superstep is one communication round.
  if (opts.link_latency_us > opts.barrier_timeout_us) {
    throw BarrierTimeoutError("configured link latency exceeds the barrier timeout");
  }

  HierarchicalResult result;
  SolveResult& solve = result.solve;

  const bool check = ctx.config.stability_check == 1 ||
                     (ctx.config.stability_check == -1 && n_coord <= 512);
  if (check) {
    try {
      const OperatorConstants oc = estimate_operator_constants(ctx);
      if (ctx.config.eps >= oc.step_bound()) {
        solve.warnings.push_back(
            "stepsize " + std::to_string(ctx.config.eps) +
            " is at or above the stability bound " + std::to_string(oc.step_bound()));
      }
    } catch (const CurvatureError& e) {
      solve.warnings.push_back(std::string("stability check skipped: ") + e.what());
    }
  }

  // --- actor construction -------------------------------------------------
  CcTables cc = build_cc_tables(feeder, partition);
  std::vector<RcTables> rcs;
  rcs.reserve(k_count);
  MessageBuffer log;
  log.sink = &opts.message_sink;
  const ActorId cc_id{ActorId::Kind::cc, 0};
  const ActorId grid_id{ActorId::Kind::grid, 0};
  for (int k = 0; k < k_count; ++k) {
    // the slack-to-root segment is provisioned by the CC once at setup
    log.emit(0, 0, cc_id, {ActorId::Kind::rc, k}, RootProvision{k, cc.root_z[k]});
    rcs.push_back(build_rc_tables(feeder, partition.subtrees[k], cc.root_z[k]));
    rcs.back().subtree = k;
  }

  std::vector<int> owner_rc(feeder.node_count(), -1);
  for (int k = 0; k < k_count; ++k) {
    for (int m : partition.subtrees[k].members) owner_rc[m] = k;
  }
  std::vector<char> is_unclustered(feeder.node_count(), 0);
  for (int u : partition.unclustered) is_unclustered[u] = 1;

  // Node-agent memory, coordinate-indexed; each agent owns its own slots.
  IterateState state = init;
  refresh_state_outputs(ctx, state);  // priming round of the grid actor
  std::vector<std::complex<double>> coupling(n_coord);
  double c0_prime = ctx.substation.derivative(state.p0);

  // Per-iteration message boxes.
  std::vector<std::vector<DualReport>> rc_inbox(k_count);
  std::vector<DualReport> cc_unclustered_inbox;
  std::vector<DualAggregate> cc_aggregates(k_count);
  std::vector<OutCoupling> out_couplings;
  std::vector<NodeCoupling> node_couplings;
  std::vector<OpCounter> rc_ops(k_count);
  OpCounter cc_ops;
  std::vector<OpCounter> rc_ops_prev(k_count);
  OpCounter cc_ops_prev;
  std::vector<double> rc_micros(k_count, 0.0);
  double cc_micros = 0.0;
  double parallel_seconds_total = 0.0;
  Permuter permuter(opts.schedule_seed);

  // List of non-slack nodes; the agent loop ranges over these.
  std::vector<int> node_list(feeder.node_count() - 1);
  std::iota(node_list.begin(), node_list.end(), 1);

  auto node_phase_coords = [&](int node, auto&& fn) {
    for (int ph = 0; ph < kPhaseCount; ++ph) {
      if (feeder.node(node).phases.has(ph)) fn(ph, index.index(node, ph));
    }
  };

  auto coupling_round = [&](int iter) {
    // step 2: members report duals, RCs aggregate
    for (auto& box : rc_inbox) box.clear();
    cc_unclustered_inbox.clear();
    for (int node : node_list) {
      DualReport rep;
      rep.node = node;
      rep.diff = {0.0, 0.0, 0.0};
      node_phase_coords(node, [&](int ph, int coord) {
        rep.diff[ph] = state.mu_hi[coord] - state.mu_lo[coord];
      });
      const ActorId from{ActorId::Kind::node, node};
      if (owner_rc[node] >= 0) {
        rc_inbox[owner_rc[node]].push_back(rep);
        log.emit(iter, 2, from, {ActorId::Kind::rc, owner_rc[node]}, rep);
      } else {
        cc_unclustered_inbox.push_back(rep);
        log.emit(iter, 2, from, cc_id, rep);
      }
    }
    for (int k : permuter.order(k_count)) {
      const auto t0 = Clock::now();
      cc_aggregates[k] = rc_aggregate(feeder, partition.subtrees[k], rc_inbox[k], rc_ops[k]);
      cc_aggregates[k].subtree = k;
      rc_micros[k] += std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
      log.emit(iter, 2, {ActorId::Kind::rc, k}, cc_id, cc_aggregates[k]);
    }

    // step 3: CC combines aggregates over the reduced network
    {
      const auto t0 = Clock::now();
      cc_compute_couplings(feeder, partition, cc, cc_aggregates, cc_unclustered_inbox,
                           out_couplings, node_couplings, cc_ops);
      cc_micros += std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
    }
    for (int k = 0; k < k_count; ++k) {
      log.emit(iter, 3, cc_id, {ActorId::Kind::rc, k}, out_couplings[k]);
    }
    for (const NodeCoupling& nc : node_couplings) {
      log.emit(iter, 3, cc_id, {ActorId::Kind::node, nc.node}, nc);
      node_phase_coords(nc.node, [&](int ph, int coord) { coupling[coord] = nc.s[ph]; });
    }

    // step 4: RCs distribute member couplings
    for (int k : permuter.order(k_count)) {
      const auto t0 = Clock::now();
      std::vector<NodeCoupling> member_couplings;
      rc_distribute(feeder, rcs[k], rc_inbox[k], out_couplings[k], member_couplings,
                    rc_ops[k]);
      rc_micros[k] += std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
      for (const NodeCoupling& nc : member_couplings) {
        log.emit(iter, 4, {ActorId::Kind::rc, k}, {ActorId::Kind::node, nc.node}, nc);
        node_phase_coords(nc.node, [&](int ph, int coord) { coupling[coord] = nc.s[ph]; });
      }
    }
  };

  auto physics_round = [&](int iter, IterateState& st) {
    // step 5: the grid actor refreshes voltages and substation power
    for (int node : node_list) {
      InjectionReport rep;
      rep.node = node;
      rep.p = rep.q = {0.0, 0.0, 0.0};
      node_phase_coords(node, [&](int ph, int coord) {
        rep.p[ph] = st.p[coord];
        rep.q[ph] = st.q[coord];
      });
      log.emit(iter, 5, {ActorId::Kind::node, node}, grid_id, rep);
    }
    refresh_state_outputs(ctx, st);
    for (int node : node_list) {
      VoltageUpdate vu;
      vu.node = node;
      vu.v = {0.0, 0.0, 0.0};
      node_phase_coords(node, [&](int ph, int coord) { vu.v[ph] = st.v[coord]; });
      log.emit(iter, 5, grid_id, {ActorId::Kind::node, node}, vu);
    }
    log.emit(iter, 5, grid_id, cc_id, SubstationPower{st.p0});
    // step 6: CC broadcasts the substation cost slope
    c0_prime = ctx.substation.derivative(st.p0);
    log.emit(iter, 6, cc_id, {ActorId::Kind::node, -1}, SubstationBroadcast{c0_prime});
  };

  // priming: couplings and broadcast for the initial iterate; setup work is
  // excluded from the per-iteration counters
  coupling_round(0);
  log.emit(0, 6, cc_id, {ActorId::Kind::node, -1}, SubstationBroadcast{c0_prime});
  log.flush();
  for (auto& ops : rc_ops) ops = OpCounter{};
  cc_ops = OpCounter{};
  std::fill(rc_micros.begin(), rc_micros.end(), 0.0);
  cc_micros = 0.0;

  solve.trajectory.push_back(make_trajectory_row(ctx, state, 0, 0.0));
  if (ctx.config.record_states) solve.states.push_back(state);

  const double eps = ctx.config.eps;
  const double eps_d = ctx.config.eps * ctx.config.dual_scale;
  const double eta = ctx.config.eta;

  solve.exit = ExitReason::iter_limit;
  double min_step = std::numeric_limits<double>::infinity();
  int it = 0;
  for (it = 1; it <= ctx.config.max_iters; ++it) {
    const double cc_micros0 = cc_micros;
    const std::vector<double> rc_micros0 = rc_micros;
    cc_ops_prev = cc_ops;
    rc_ops_prev = rc_ops;

    const IterateState prev = state;

    // step 1: node agents update their own primal and dual variables
    for (int ni : permuter.order(static_cast<int>(node_list.size()))) {
      const int node = node_list[ni];
      node_phase_coords(node, [&](int ph, int coord) {
        (void)ph;
        const double coup_p = coupling[coord].real();
        const double coup_q = -coupling[coord].imag();
        auto [pp, qq] = primal_update(ctx.device_by_coord[coord], prev.p[coord],
                                      prev.q[coord], c0_prime, coup_p, coup_q, eps);
        state.p[coord] = pp;
        state.q[coord] = qq;
        state.mu_lo[coord] =
            dual_update_lower(prev.mu_lo[coord], prev.v[coord], ctx.v_min[coord], eps_d, eta);
        state.mu_hi[coord] =
            dual_update_upper(prev.mu_hi[coord], prev.v[coord], ctx.v_max[coord], eps_d, eta);
      });
    }

    coupling_round(it);        // steps 2-4 with the fresh duals
    physics_round(it, state);  // steps 5-6
    log.flush();

    double step_norm = (state.p - prev.p).cwiseAbs().maxCoeff();
    step_norm = std::max(step_norm, (state.q - prev.q).cwiseAbs().maxCoeff());
    step_norm = std::max(step_norm, (state.mu_lo - prev.mu_lo).cwiseAbs().maxCoeff());
    step_norm = std::max(step_norm, (state.mu_hi - prev.mu_hi).cwiseAbs().maxCoeff());

    solve.trajectory.push_back(make_trajectory_row(ctx, state, it, step_norm));
    if (ctx.config.record_states) solve.states.push_back(state);

    double iter_parallel_micros = cc_micros - cc_micros0;
    for (int k = 0; k < k_count; ++k) {
      iter_parallel_micros = std::max(iter_parallel_micros, rc_micros[k] - rc_micros0[k]);
    }
    parallel_seconds_total += iter_parallel_micros * 1e-6;
    if (opts.record_actor_stats) {
      for (int k = 0; k < k_count; ++k) {
        result.actor_stats.push_back({it, "rc:" + std::to_string(k),
                                      rc_micros[k] - rc_micros0[k],
                                      rc_ops[k].mults - rc_ops_prev[k].mults,
                                      rc_ops[k].adds - rc_ops_prev[k].adds});
      }
      result.actor_stats.push_back({it, "cc", cc_micros - cc_micros0,
                                    cc_ops.mults - cc_ops_prev.mults,
                                    cc_ops.adds - cc_ops_prev.adds});
    }

    if (diverging_step(step_norm, min_step, it)) {
      solve.warnings.push_back("divergence detected: growing step norm");
      solve.exit = ExitReason::diverged;
      break;
    }
    min_step = std::min(min_step, step_norm);
    if (std::abs(state.p0 - prev.p0) < ctx.config.sigma_p0 &&
        step_norm < ctx.config.sigma_step) {
      solve.exit = ExitReason::converged;
      break;
    }
  }

  solve.iters = std::min(it, ctx.config.max_iters);
  solve.final_state = state;

  for (int k = 0; k < k_count; ++k) {
    solve.coupling_ops.add_actor("rc:" + std::to_string(k), rc_ops[k].mults, rc_ops[k].adds);
  }
  solve.coupling_ops.add_actor("cc", cc_ops.mults, cc_ops.adds);

  const auto t_end = Clock::now();
  solve.solve_seconds = std::chrono::duration<double>(t_end - t_start).count();
  solve.per_iter_seconds = solve.iters > 0 ? solve.solve_seconds / solve.iters : 0.0;
  result.per_iter_parallel_seconds =
      solve.iters > 0 ? parallel_seconds_total / solve.iters : 0.0;
  return result;
}

}  // namespace voltreg
