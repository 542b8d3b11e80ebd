#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "voltreg/clustering.hpp"
#include "voltreg/hierarchical.hpp"
#include "voltreg/opf.hpp"
#include "voltreg/powerflow.hpp"

namespace voltreg {

// Artifact writers. Output is deterministic: fixed column orders, sorted
// object keys, doubles printed with 17 significant digits. Timing data goes
// to dedicated files (timing.json, actors.csv) so the result artifacts stay
// byte-reproducible across runs.

std::string format_double(double x);  // %.17g

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryRow>& rows);

void write_final_state_json(std::ostream& os, const Feeder& feeder,
                            const PhaseIndexMap& index, const IterateState& state);

struct RunSummary {
  int iters = 0;
  double final_cost = 0.0;
  double max_violation = 0.0;
  std::string exit;
};

void write_summary_json(std::ostream& os, const RunSummary& s);
void write_timing_json(std::ostream& os, double solve_seconds, double per_iter_seconds,
                       double per_iter_parallel_seconds);

void write_flows_csv(std::ostream& os, const Feeder& feeder, const BranchState& braches);

void write_partition_json(std::ostream& os, const Feeder& feeder, const Partition& p);
Partition read_partition_json(const std::string& path, const Feeder& feeder);

void write_actor_stats_csv(std::ostream& os, const std::vector<ActorStat>& stats);

std::string message_to_jsonl(const Message& m, const Feeder& feeder);

}  // namespace voltreg
