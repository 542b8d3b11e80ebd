#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "voltreg/clustering.hpp"
#include "voltreg/opf.hpp"
#include "voltreg/sensitivity.hpp"

namespace voltreg {

// Message-passing realization of the primal-dual iteration on a partitioned
// feeder. Node agents update their own primal/dual variables; each regional
// coordinator (RC) aggregates its subtree's duals and redistributes coupling
// terms; the central coordinator (CC) combines aggregates across subtrees
// using only reduced-network impedances; a grid actor stands in for the
// physical network when refreshing voltages and substation power. Supersteps
// are barrier-synchronized, every reduction runs in ascending index order,
// so trajectories are independent of actor scheduling.

struct ActorId {
  enum class Kind { cc, rc, node, grid } kind = Kind::cc;
  int index = -1;

  std::string str() const;
  friend bool operator==(const ActorId&, const ActorId&) = default;
};

using Complex3 = std::array<std::complex<double>, 3>;
using Real3 = std::array<double, 3>;

struct DualReport {        // node -> its RC (members) or CC (unclustered)
  int node = -1;
  Real3 diff{};            // mu_hi - mu_lo per phase
};
struct DualAggregate {     // RC -> CC
  int subtree = -1;
  Real3 sums{};
};
struct OutCoupling {       // CC -> RC: the subtree-external coupling
  int subtree = -1;
  Complex3 s{};
};
struct NodeCoupling {      // RC -> member, or CC -> unclustered node
  int node = -1;
  Complex3 s{};
};
struct SubstationBroadcast {  // CC -> all nodes
  double c0_prime = 0.0;
};
struct RootProvision {     // CC -> RC, once at setup: impedance of the
  int subtree = -1;        // slack-to-root segment
  Eigen::Matrix3cd z_root;
};
struct InjectionReport {   // node -> grid
  int node = -1;
  Real3 p{}, q{};
};
struct VoltageUpdate {     // grid -> node
  int node = -1;
  Real3 v{};
};
struct SubstationPower {   // grid -> CC
  double p0 = 0.0;
};

using Payload = std::variant<DualReport, DualAggregate, OutCoupling, NodeCoupling,
                             SubstationBroadcast, RootProvision, InjectionReport,
                             VoltageUpdate, SubstationPower>;

struct Message {
  int iter = 0;
  int step = 0;
  ActorId from, to;
  Payload payload;
};

const char* payload_kind(const Payload& p);

struct ActorStat {
  int iter = 0;
  std::string actor;
  double micros = 0.0;
  std::uint64_t mults = 0;
  std::uint64_t adds = 0;
};

struct HierarchicalOptions {
  unsigned schedule_seed = 0;  // permutes actor execution order per superstep
  bool record_actor_stats = false;
  std::function<void(const Message&)> message_sink;  // invoked per message when set
  double link_latency_us = 0.0;  // simulated per-link latency
  double barrier_timeout_us = std::numeric_limits<double>::infinity();
};

struct HierarchicalResult {
  SolveResult solve;
  std::vector<ActorStat> actor_stats;      // when record_actor_stats
  double per_iter_parallel_seconds = 0.0;  // mean over iterations of the
                                           // slowest coordinator's compute time
};

HierarchicalResult run_hierarchical(const OpfContext& ctx, const Partition& partition,
                                    const IterateState& init,
                                    const HierarchicalOptions& opts = {});

// Building blocks, exposed for direct verification ------------------------

struct RcTables {
  int subtree = -1;
  std::vector<int> members;      // ascending
  PathImpedanceTable table;      // member-pair impedances, root segment folded in
};

struct CcTables {
  std::vector<int> roots;        // subtree roots, ascending subtree order
  std::vector<int> unclustered;  // ascending
  PathImpedanceTable table;      // reduced-network pair impedances
  std::vector<Eigen::Matrix3cd> root_z;  // slack-to-root impedance per subtree
};

/// Built from the subtree's own lines plus the provisioned root impedance;
/// no global picture required.
RcTables build_rc_tables(const Feeder& feeder, const Subtree& subtree,
                         const Eigen::Matrix3cd& provisioned_root);

/// Built from the reduced network's lines only.
CcTables build_cc_tables(const Feeder& feeder, const Partition& partition);

struct OpCounter {
  std::uint64_t mults = 0;
  std::uint64_t adds = 0;
};

/// Per-phase sums of member dual differences, ascending member order.
DualAggregate rc_aggregate(const Feeder& feeder, const Subtree& subtree,
                           const std::vector<DualReport>& member_reports,
                           OpCounter& ops);

/// Subtree-external couplings for every subtree and full couplings for every
/// unclustered node, from aggregates and unclustered duals alone.
void cc_compute_couplings(const Feeder& feeder, const Partition& partition,
                          const CcTables& cc,
                          const std::vector<DualAggregate>& aggregates,
                          const std::vector<DualReport>& unclustered_duals,
                          std::vector<OutCoupling>& out,
                          std::vector<NodeCoupling>& unclustered_out,
                          OpCounter& ops);

/// Member couplings from the subtree-local table plus the external part.
void rc_distribute(const Feeder& feeder, const RcTables& rc,
                   const std::vector<DualReport>& member_reports,
                   const OutCoupling& external, std::vector<NodeCoupling>& out,
                   OpCounter& ops);

}  // namespace voltreg
