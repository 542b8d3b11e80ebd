#include "voltreg/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace voltreg {

int Partition::subtree_of(const Feeder& feeder, int node) const {
  (void)feeder;
  for (int k = 0; k < subtree_count(); ++k) {
    if (std::binary_search(subtrees[k].members.begin(), subtrees[k].members.end(), node)) {
      return k;
    }
  }
  return -1;
}

Partition partition_from_roots(const Feeder& feeder, const std::vector<int>& roots) {
  Partition p;
  std::vector<bool> covered(feeder.node_count(), false);
  std::vector<int> sorted_roots = roots;
  std::sort(sorted_roots.begin(), sorted_roots.end());
  for (int r : sorted_roots) {
    Subtree s;
    s.root = r;
    s.members = feeder.subtree_nodes(r);
    for (int m : s.members) covered[m] = true;
    p.subtrees.push_back(std::move(s));
  }
  for (int i = 1; i < feeder.node_count(); ++i) {
    if (!covered[i]) p.unclustered.push_back(i);
  }
  return p;
}

std::vector<std::string> validate_partition(const Feeder& feeder, const Partition& p) {
  std::vector<std::string> out;
  const int n = feeder.node_count();
  std::vector<int> owner(n, -1);

  auto name = [&feeder](int i) { return feeder.node(i).name; };

  for (int k = 0; k < p.subtree_count(); ++k) {
    const Subtree& s = p.subtrees[k];
    if (s.root <= 0 || s.root >= n) {
      out.push_back("subtree " + std::to_string(k) + ": root out of range");
      continue;
    }
    std::set<int> members(s.members.begin(), s.members.end());
    if (members.count(s.root) == 0) {
      out.push_back("subtree " + std::to_string(k) + ": root '" + name(s.root) +
                    "' not among its members");
    }
    for (int m : s.members) {
      if (m <= 0 || m >= n) {
        out.push_back("subtree " + std::to_string(k) + ": member out of range");
        continue;
      }
      if (!feeder.is_ancestor_or_self(s.root, m)) {
        out.push_back("subtree " + std::to_string(k) + ": member '" + name(m) +
                      "' is not a descendant of root '" + name(s.root) + "'");
      }
      if (owner[m] != -1) {
        out.push_back("node '" + name(m) + "' appears in subtrees " +
                      std::to_string(owner[m]) + " and " + std::to_string(k) +
                      " (non-disjoint)");
      }
      owner[m] = k;
    }
    // a subtree must hold every descendant of its root
    for (int d : feeder.subtree_nodes(s.root)) {
      if (members.count(d) == 0) {
        out.push_back("subtree " + std::to_string(k) + ": missing descendant '" +
                      name(d) + "'");
      }
    }
  }
  for (int h = 0; h < p.subtree_count(); ++h) {
    for (int k = 0; k < p.subtree_count(); ++k) {
      if (h != k && feeder.is_ancestor_or_self(p.subtrees[h].root, p.subtrees[k].root)) {
        out.push_back("subtree root '" + name(p.subtrees[k].root) +
                      "' lies inside subtree " + std::to_string(h));
      }
    }
  }
  std::vector<bool> seen(n, false);
  for (const Subtree& s : p.subtrees) {
    for (int m : s.members) {
      if (m > 0 && m < n) seen[m] = true;
    }
  }
  for (int u : p.unclustered) {
    if (u <= 0 || u >= n) {
      out.push_back("unclustered node out of range");
      continue;
    }
    if (seen[u]) out.push_back("node '" + name(u) + "' is both clustered and unclustered");
    seen[u] = true;
  }
  for (int i = 1; i < n; ++i) {
    if (!seen[i]) out.push_back("node '" + name(i) + "' is not covered by the partition");
  }
  return out;
}

ReducedNetwork reduce_network(const Feeder& feeder, const Partition& p) {
  ReducedNetwork r;
  r.nodes.push_back(0);
  std::vector<int> rest;
  for (const Subtree& s : p.subtrees) rest.push_back(s.root);
  rest.insert(rest.end(), p.unclustered.begin(), p.unclustered.end());
  std::sort(rest.begin(), rest.end());
  r.nodes.insert(r.nodes.end(), rest.begin(), rest.end());
  for (int u : rest) r.lines.push_back(feeder.node(u).parent_line);
  return r;
}

int recommend_cluster_count(int n) {
  if (n < 1) throw ConfigError("node count must be at least 1");
  const double k = std::cbrt(static_cast<double>(n) * n / 2.0);
  const int rounded = static_cast<int>(std::lround(k));
  return std::clamp(rounded, 1, n);
}

Partition auto_partition(const Feeder& feeder, int k, bool strict) {
  if (k < 1) throw ConfigError("cluster count must be at least 1");
  const int n = feeder.node_count();
  const int non_slack = n - 1;
  if (non_slack < 1) throw InfeasibleClusterError("feeder has no non-slack nodes");

  // Subtree size and leaf count per candidate root.
  std::vector<int> size(n, 1), leaf(n, 0);
  for (int i = n - 1; i >= 1; --i) {
    if (feeder.children_of(i).empty()) leaf[i] = 1;
    const int par = feeder.node(i).parent;
    size[par] += size[i];
    leaf[par] += leaf[i];
  }
  int total_leaves = 0;
  for (int i = 1; i < n; ++i) {
    if (feeder.children_of(i).empty()) ++total_leaves;
  }

  // Disjoint subtrees each consume at least one leaf, so the leaf count is a
  // hard cap on how many can coexist.
  const int k_max = std::min(k, total_leaves);
  if (strict && k_max < k) {
    throw InfeasibleClusterError("cannot form " + std::to_string(k) +
                                 " disjoint subtrees; this feeder supports at most " +
                                 std::to_string(total_leaves));
  }

  const double target = static_cast<double>(non_slack) / static_cast<double>(k);
  std::vector<int> roots;
  std::vector<bool> blocked(n, false);  // inside a chosen subtree or above one
  int leaves_outside = total_leaves;

  for (int pick = 0; pick < k_max; ++pick) {
    int best = -1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int cand = 1; cand < n; ++cand) {
      if (blocked[cand]) continue;
      // completion guard: enough leaves must remain for the picks still due
      if (leaves_outside - leaf[cand] < k_max - pick - 1) continue;
      const double gap = std::abs(static_cast<double>(size[cand]) - target);
      if (gap < best_gap) {
        best_gap = gap;
        best = cand;
      }
    }
    if (best == -1) break;  // cannot happen while pick < k_max, kept as a guard
    roots.push_back(best);
    leaves_outside -= leaf[best];
    for (int u = 1; u < n; ++u) {
      if (feeder.is_ancestor_or_self(best, u) || feeder.is_ancestor_or_self(u, best)) {
        blocked[u] = true;
      }
    }
  }
  return partition_from_roots(feeder, roots);
}

void OpCount::add_actor(const std::string& actor, std::uint64_t m, std::uint64_t a) {
  per_actor.push_back({actor, m, a});
  mults += m;
  adds += a;
}

OpCount model_op_count(const std::vector<int>& subtree_sizes) {
  OpCount out;
  const std::uint64_t k = subtree_sizes.size();
  for (std::size_t i = 0; i < subtree_sizes.size(); ++i) {
    const std::uint64_t nk = static_cast<std::uint64_t>(subtree_sizes[i]);
    // nk^2 products and nk*(nk-1) accumulations for the member couplings,
    // nk-1 accumulations for the dual aggregate, nk to fold in the external term
    out.add_actor("rc:" + std::to_string(i), nk * nk,
                  nk * (nk > 0 ? nk - 1 : 0) + (nk > 0 ? nk - 1 : 0) + nk);
  }
  out.add_actor("cc", k * k, (k > 0 ? k - 1 : 0) * k);
  return out;
}

OpCount model_op_count(int n, int k) {
  if (n < 1 || k < 1 || k > n) throw ConfigError("need 1 <= k <= n");
  std::vector<int> sizes(k, n / k);
  for (int i = 0; i < n % k; ++i) sizes[i] += 1;
  return model_op_count(sizes);
}

OpCount central_op_count(int n) {
  OpCount out;
  const std::uint64_t nn = static_cast<std::uint64_t>(n);
  out.add_actor("central", nn * nn, nn * (nn > 0 ? nn - 1 : 0));
  return out;
}

}  // namespace voltreg
