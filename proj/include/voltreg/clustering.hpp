#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voltreg/feeder.hpp"

namespace voltreg {

struct Subtree {
  int root = -1;
  std::vector<int> members;  // root plus all descendants, ascending
};

/// Assignment of every non-slack node to exactly one subtree or to the
/// unclustered set. The reduced network (subtree roots, unclustered nodes,
/// the slack, and their connecting lines) is derived on demand.
struct Partition {
  std::vector<Subtree> subtrees;   // sorted by root index
  std::vector<int> unclustered;    // ascending

  int subtree_count() const { return static_cast<int>(subtrees.size()); }
  /// Subtree index for a node, -1 for unclustered nodes and the slack.
  int subtree_of(const Feeder& feeder, int node) const;
};

Partition partition_from_roots(const Feeder& feeder, const std::vector<int>& roots);

/// Empty result means the partition is valid.
std::vector<std::string> validate_partition(const Feeder& feeder, const Partition& p);

struct ReducedNetwork {
  std::vector<int> nodes;  // slack first, then roots and unclustered ascending
  std::vector<int> lines;  // original line ids connecting reduced nodes
};

ReducedNetwork reduce_network(const Feeder& feeder, const Partition& p);

/// Cluster count minimizing the coordinator cost model, clamped to [1, n].
int recommend_cluster_count(int n);

/// Greedy subtree selection targeting n/k members each. Returns at most k
/// subtrees; fewer when the topology cannot support k disjoint subtrees
/// (the hard cap is the leaf count). With strict=true an unsatisfiable k
/// throws InfeasibleClusterError instead. Singleton leaves are allowed.
Partition auto_partition(const Feeder& feeder, int k, bool strict = false);

struct ActorOps {
  std::string actor;
  std::uint64_t mults = 0;
  std::uint64_t adds = 0;
};

struct OpCount {
  std::uint64_t mults = 0;
  std::uint64_t adds = 0;
  std::vector<ActorOps> per_actor;

  std::uint64_t total() const { return mults + adds; }
  void add_actor(const std::string& actor, std::uint64_t m, std::uint64_t a);
};

/// Coupling-arithmetic cost model for one iteration: each regional
/// coordinator performs 2*n_k^2 + n_k - 1 operations over its n_k members,
/// the central coordinator k^2 multiplications and (k-1)*k additions.
/// Sizes are split as evenly as possible when k does not divide n.
OpCount model_op_count(int n, int k);
OpCount model_op_count(const std::vector<int>& subtree_sizes);

/// Dense baseline: n^2 multiplications, n*(n-1) additions per iteration.
OpCount central_op_count(int n);

}  // namespace voltreg
