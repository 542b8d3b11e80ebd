#include "voltreg/synthetic.hpp"

#include <cmath>
#include <random>

namespace voltreg {

Topology parse_topology(std::string_view s) {
  if (s == "dary") return Topology::dary;
  if (s == "chains") return Topology::chains;
  if (s == "random") return Topology::random_tree;
  throw ParseError("unknown topology '" + std::string(s) + "'");
}

namespace {

std::vector<int> build_parents(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const int n = spec.nodes;
  std::vector<int> parent(n + 1, -1);  // index 0 is the slack
  switch (spec.topology) {
    case Topology::dary: {
      for (int i = 1; i <= n; ++i) parent[i] = (i - 1) / std::max(1, spec.branching);
      break;
    }
    case Topology::chains: {
      const int branches = std::min(std::max(1, spec.branching), n);
      const int base = n / branches;
      const int extra = n % branches;
      int next = 1;
      for (int b = 0; b < branches; ++b) {
        const int len = base + (b < extra ? 1 : 0);
        int prev = 0;
        for (int j = 0; j < len; ++j) {
          parent[next] = prev;
          prev = next;
          ++next;
        }
      }
      break;
    }
    case Topology::random_tree: {
      for (int i = 1; i <= n; ++i) {
        std::uniform_int_distribution<int> pick(0, i - 1);
        parent[i] = pick(rng);
      }
      break;
    }
  }
  return parent;
}

}  // namespace

FeederCase generate_case(const SyntheticSpec& spec) {
  if (spec.nodes < 1) throw ConfigError("need at least one non-slack node");
  if (spec.phases != 1 && spec.phases != 3) throw ConfigError("phases must be 1 or 3");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto log_uniform = [&](double lo, double hi) {
    return lo * std::exp(unit(rng) * std::log(hi / lo));
  };

  const std::vector<int> parent = build_parents(spec, rng);
  const int n = spec.nodes;

  std::vector<NodeInfo> nodes(n + 1);
  nodes[0].name = "0";
  nodes[0].phases = spec.phases == 3 ? PhaseSet::all() : PhaseSet::single(0);
  for (int i = 1; i <= n; ++i) {
    nodes[i].name = "n" + std::to_string(i);
    if (spec.phases == 3) {
      // phases narrow going downstream; most nodes keep the full set
      const PhaseSet up = nodes[parent[i]].phases;
      if (up.count() > 1 && unit(rng) < 0.3) {
        std::vector<int> present;
        for (int ph = 0; ph < kPhaseCount; ++ph) {
          if (up.has(ph)) present.push_back(ph);
        }
        std::uniform_int_distribution<int> pick(0, static_cast<int>(present.size()) - 1);
        const int keep_count = 1 + (unit(rng) < 0.5 ? 1 : 0);
        PhaseSet ps;
        for (int c = 0; c < keep_count; ++c) ps.add(present[pick(rng)]);
        nodes[i].phases = ps;
      } else {
        nodes[i].phases = up;
      }
    } else {
      nodes[i].phases = PhaseSet::single(0);
    }
  }

  std::vector<Line> lines;
  lines.reserve(n);
  for (int i = 1; i <= n; ++i) {
    Line ln;
    ln.from = parent[i];
    ln.to = i;
    ln.phases = nodes[i].phases;
    const double r = log_uniform(spec.r_lo, spec.r_hi);
    const double x = log_uniform(spec.x_lo, spec.x_hi);
    const double mutual =
        spec.mutual_lo + (spec.mutual_hi - spec.mutual_lo) * unit(rng);
    for (int a = 0; a < kPhaseCount; ++a) {
      if (!ln.phases.has(a)) continue;
      for (int b = 0; b < kPhaseCount; ++b) {
        if (!ln.phases.has(b)) continue;
        ln.z(a, b) = a == b ? std::complex<double>(r, x)
                            : std::complex<double>(mutual * r, mutual * x);
      }
    }
    lines.push_back(std::move(ln));
  }

  FeederCase out;
  out.feeder = Feeder::build(nodes, lines, "0", {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, 1.0);

  for (int i = 1; i <= n; ++i) {
    for (int ph = 0; ph < kPhaseCount; ++ph) {
      if (!out.feeder.node(i).phases.has(ph)) continue;
      Device d;
      d.node = i;
      d.phase = ph;
      d.cost.cp = 0.5 + 1.5 * unit(rng);
      d.cost.cq = 0.5 + 1.5 * unit(rng);
      d.cost.p0 = -spec.load_scale * unit(rng);
      d.cost.q0 = 0.0;
      const double roll = unit(rng);
      if (roll < spec.pv_fraction) {
        d.kind = DeviceKind::pv_inverter;
        d.cost.p0 = spec.device_span * unit(rng);
        d.p_min = 0.0;
        d.p_max = d.cost.p0 + spec.device_span;
        d.cap = d.p_max * 1.25;
      } else if (roll < spec.pv_fraction + spec.storage_fraction) {
        d.kind = DeviceKind::storage;
        d.p_min = -spec.device_span;
        d.p_max = spec.device_span;
        d.cap = spec.device_span * 1.5;
      } else {
        d.kind = DeviceKind::box;
        d.p_min = d.cost.p0 - spec.device_span;
        d.p_max = d.cost.p0 + spec.device_span;
        d.q_min = -spec.device_span;
        d.q_max = spec.device_span;
      }
      d.validate();
      out.devices.push_back(d);
    }
  }
  out.substation.alpha = spec.alpha;
  out.substation.p0_target = 0.0;
  return out;
}

}  // namespace voltreg
