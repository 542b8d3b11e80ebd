#pragma once

#include <string>

#include "voltreg/feeder.hpp"

namespace voltreg {

enum class Topology {
  dary,     // balanced d-ary tree, breadth-first fill
  chains,   // `branching` equal-length chains hanging off the slack
  random_tree,  // each node attaches to a uniformly random earlier node
};

Topology parse_topology(std::string_view s);

struct SyntheticSpec {
  int nodes = 63;  // non-slack count
  Topology topology = Topology::dary;
  int branching = 2;  // arity (dary) or chain count (chains)
  int phases = 1;     // 1 or 3
  unsigned seed = 1;

  double r_lo = 0.01, r_hi = 0.2;          // log-uniform line resistance
  double x_lo = 0.01, x_hi = 0.2;          // log-uniform line reactance
  double mutual_lo = 0.2, mutual_hi = 0.5;  // off-diagonal fraction (3-phase)
  double load_scale = 0.02;   // nominal injections drawn in [-load_scale, 0]
  double device_span = 0.05;  // half-width of box bounds around the nominal
  double pv_fraction = 0.0;
  double storage_fraction = 0.0;
  double alpha = 5e-4;  // substation cost weight
};

/// Deterministic in the spec (seed included): repeated calls produce
/// identical cases field for field.
FeederCase generate_case(const SyntheticSpec& spec);

}  // namespace voltreg
