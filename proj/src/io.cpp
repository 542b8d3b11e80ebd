#include "voltreg/io.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "json.hpp"

namespace voltreg {

using nlohmann::json;

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryRow>& rows) {
  os << "iter,step_norm,P0,max_undervolt,max_overvolt,lagrangian\n";
  for (const TrajectoryRow& r : rows) {
    os << r.iter << ',' << format_double(r.step_norm) << ',' << format_double(r.p0)
       << ',' << format_double(r.max_undervolt) << ',' << format_double(r.max_overvolt)
       << ',' << format_double(r.lagrangian) << '\n';
  }
}

void write_final_state_json(std::ostream& os, const Feeder& feeder,
                            const PhaseIndexMap& index, const IterateState& state) {
  json doc = json::object();  // nlohmann objects keep keys sorted
  for (int k = 0; k < index.size(); ++k) {
    doc[index.label(feeder, k)] = {{"p", state.p[k]},
                                   {"q", state.q[k]},
                                   {"mu_lo", state.mu_lo[k]},
                                   {"mu_hi", state.mu_hi[k]},
                                   {"v", state.v[k]}};
  }
  os << doc.dump(2) << "\n";
}

void write_summary_json(std::ostream& os, const RunSummary& s) {
  json doc{{"iters", s.iters},
           {"final_cost", s.final_cost},
           {"max_violation", s.max_violation},
           {"exit", s.exit}};
  os << doc.dump(2) << "\n";
}

void write_timing_json(std::ostream& os, double solve_seconds, double per_iter_seconds,
                       double per_iter_parallel_seconds) {
  json doc{{"solve_seconds", solve_seconds},
           {"per_iter_seconds", per_iter_seconds},
           {"per_iter_parallel_seconds", per_iter_parallel_seconds}};
  os << doc.dump(2) << "\n";
}

void write_flows_csv(std::ostream& os, const Feeder& feeder, const BranchState& branches) {
  os << "line,phase,P,Q,ell\n";
  for (const BranchFlow& f : branches.flows) {
    const Line& ln = feeder.line(f.line);
    os << feeder.node(ln.from).name << '-' << feeder.node(ln.to).name << ','
       << phase_letter(f.phase) << ',' << format_double(f.p) << ','
       << format_double(f.q) << ',' << format_double(f.ell) << '\n';
  }
}

void write_partition_json(std::ostream& os, const Feeder& feeder, const Partition& p) {
  json subtrees = json::array();
  for (const Subtree& s : p.subtrees) {
    json members = json::array();
    for (int m : s.members) members.push_back(feeder.node(m).name);
    subtrees.push_back({{"root", feeder.node(s.root).name}, {"members", members}});
  }
  json unclustered = json::array();
  for (int u : p.unclustered) unclustered.push_back(feeder.node(u).name);
  json doc{{"subtrees", subtrees}, {"unclustered", unclustered}};
  os << doc.dump(2) << "\n";
}

Partition read_partition_json(const std::string& path, const Feeder& feeder) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open partition file '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid partition JSON: ") + e.what());
  }
  Partition p;
  try {
    for (const auto& js : doc.at("subtrees")) {
      Subtree s;
      s.root = feeder.index_of(js.at("root").get<std::string>());
      if (js.contains("members")) {
        for (const auto& jm : js.at("members")) {
          s.members.push_back(feeder.index_of(jm.get<std::string>()));
        }
        std::sort(s.members.begin(), s.members.end());
      } else {
        s.members = feeder.subtree_nodes(s.root);
      }
      p.subtrees.push_back(std::move(s));
    }
    std::sort(p.subtrees.begin(), p.subtrees.end(),
              [](const Subtree& a, const Subtree& b) { return a.root < b.root; });
    if (doc.contains("unclustered")) {
      for (const auto& ju : doc.at("unclustered")) {
        p.unclustered.push_back(feeder.index_of(ju.get<std::string>()));
      }
      std::sort(p.unclustered.begin(), p.unclustered.end());
    } else {
      std::vector<bool> covered(feeder.node_count(), false);
      for (const Subtree& s : p.subtrees) {
        for (int m : s.members) covered[m] = true;
      }
      for (int i = 1; i < feeder.node_count(); ++i) {
        if (!covered[i]) p.unclustered.push_back(i);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad partition document: ") + e.what());
  }
  return p;
}

void write_actor_stats_csv(std::ostream& os, const std::vector<ActorStat>& stats) {
  os << "iter,actor,micros,mults,adds\n";
  for (const ActorStat& s : stats) {
    os << s.iter << ',' << s.actor << ',' << format_double(s.micros) << ',' << s.mults
       << ',' << s.adds << '\n';
  }
}

namespace {

json real3_json(const Real3& r, PhaseSet phases) {
  json out = json::object();
  for (int ph = 0; ph < kPhaseCount; ++ph) {
    if (phases.has(ph)) out[std::string(1, phase_letter(ph))] = r[ph];
  }
  return out;
}

json complex3_json(const Complex3& c, PhaseSet phases) {
  json out = json::object();
  for (int ph = 0; ph < kPhaseCount; ++ph) {
    if (phases.has(ph)) {
      out[std::string(1, phase_letter(ph))] = {c[ph].real(), c[ph].imag()};
    }
  }
  return out;
}

}  // namespace

std::string message_to_jsonl(const Message& m, const Feeder& feeder) {
  auto node_phases = [&feeder](int node) {
    return node >= 0 && node < feeder.node_count() ? feeder.node(node).phases
                                                   : PhaseSet::all();
  };
  json payload;
  if (const auto* d = std::get_if<DualReport>(&m.payload)) {
    payload = {{"node", feeder.node(d->node).name},
               {"diff", real3_json(d->diff, node_phases(d->node))}};
  } else if (const auto* a = std::get_if<DualAggregate>(&m.payload)) {
    payload = {{"subtree", a->subtree}, {"sums", real3_json(a->sums, PhaseSet::all())}};
  } else if (const auto* o = std::get_if<OutCoupling>(&m.payload)) {
    payload = {{"subtree", o->subtree}, {"s", complex3_json(o->s, PhaseSet::all())}};
  } else if (const auto* nc = std::get_if<NodeCoupling>(&m.payload)) {
    payload = {{"node", feeder.node(nc->node).name},
               {"s", complex3_json(nc->s, node_phases(nc->node))}};
  } else if (const auto* b = std::get_if<SubstationBroadcast>(&m.payload)) {
    payload = {{"c0_prime", b->c0_prime}};
  } else if (const auto* rp = std::get_if<RootProvision>(&m.payload)) {
    json z = json::array();
    for (int a = 0; a < kPhaseCount; ++a) {
      json row = json::array();
      for (int b2 = 0; b2 < kPhaseCount; ++b2) {
        row.push_back({rp->z_root(a, b2).real(), rp->z_root(a, b2).imag()});
      }
      z.push_back(row);
    }
    payload = {{"subtree", rp->subtree}, {"z_root", z}};
  } else if (const auto* ir = std::get_if<InjectionReport>(&m.payload)) {
    payload = {{"node", feeder.node(ir->node).name},
               {"p", real3_json(ir->p, node_phases(ir->node))},
               {"q", real3_json(ir->q, node_phases(ir->node))}};
  } else if (const auto* vu = std::get_if<VoltageUpdate>(&m.payload)) {
    payload = {{"node", feeder.node(vu->node).name},
               {"v", real3_json(vu->v, node_phases(vu->node))}};
  } else if (const auto* sp = std::get_if<SubstationPower>(&m.payload)) {
    payload = {{"p0", sp->p0}};
  }
  json doc{{"iter", m.iter},  {"step", m.step},          {"from", m.from.str()},
           {"to", m.to.str()}, {"kind", payload_kind(m.payload)}, {"payload", payload}};
  return doc.dump();
}

}  // namespace voltreg
