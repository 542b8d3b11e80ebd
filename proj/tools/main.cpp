#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "voltreg/hierarchical.hpp"
#include "voltreg/io.hpp"
#include "voltreg/opf.hpp"
#include "voltreg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace voltreg;

namespace {

struct SolveArgs {
  std::string feeder_path;
  std::string engine = "central";
  std::string mode = "linear";
  std::string partition = "auto:0";  // auto:<k>, 0 = recommended; or file:<path>
  double eps = 3.5e-4;
  double eps_dual_mult = 1.0;
  double eta = 1e-3;
  double vmin = 0.95;
  double vmax = 1.05;
  int max_iters = 20000;
  double sigma = 1e-6;
  double sigma_step = 1e-8;
  unsigned seed = 0;
  unsigned schedule_seed = 0;
  std::string out_dir = "out";
  bool log_messages = false;
  bool dump_flows = false;
  bool dump_rx = false;
};

SolverConfig to_config(const SolveArgs& a) {
  SolverConfig cfg;
  cfg.eps = a.eps;
  cfg.dual_scale = a.eps_dual_mult;
  cfg.eta = a.eta;
  cfg.v_min = a.vmin * a.vmin;
  cfg.v_max = a.vmax * a.vmax;
  cfg.max_iters = a.max_iters;
  cfg.sigma_p0 = a.sigma;
  cfg.sigma_step = a.sigma_step;
  cfg.mode = a.mode == "feedback" ? SolveMode::feedback : SolveMode::linear;
  return cfg;
}

Partition resolve_partition(const std::string& spec, const FeederCase& c) {
  if (spec.rfind("file:", 0) == 0) {
    Partition p = read_partition_json(spec.substr(5), c.feeder);
    const auto violations = validate_partition(c.feeder, p);
    if (!violations.empty()) throw ConfigError("partition file invalid: " + violations.front());
    return p;
  }
  if (spec.rfind("auto:", 0) == 0) {
    int k = std::stoi(spec.substr(5));
    if (k <= 0) k = recommend_cluster_count(c.feeder.node_count() - 1);
    return auto_partition(c.feeder, k);
  }
  if (!c.cluster_roots.empty()) return partition_from_roots(c.feeder, c.cluster_roots);
  throw ConfigError("unrecognized partition spec '" + spec + "'");
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  fn(os);
}

int run_solve(const SolveArgs& args) {
  const FeederCase c = load_feeder(args.feeder_path);
  const SensitivityPack pack = build_multi_phase(c.feeder);
  const OpfContext ctx = make_context(c, pack, to_config(args));
  const IterateState init = initial_state(ctx, args.seed);

  fs::create_directories(args.out_dir);
  const fs::path out(args.out_dir);

  SolveResult result;
  double per_iter_parallel = 0.0;
  if (args.engine == "hier") {
    const Partition partition = resolve_partition(args.partition, c);
    write_file(out / "partition.json",
               [&](std::ostream& os) { write_partition_json(os, c.feeder, partition); });
    HierarchicalOptions opts;
    opts.schedule_seed = args.schedule_seed;
    opts.record_actor_stats = true;
    std::ofstream msg_stream;
    if (args.log_messages) {
      msg_stream.open(out / "messages.jsonl", std::ios::binary);
      opts.message_sink = [&](const Message& m) {
        msg_stream << message_to_jsonl(m, c.feeder) << "\n";
      };
    }
    HierarchicalResult hr = run_hierarchical(ctx, partition, init, opts);
    per_iter_parallel = hr.per_iter_parallel_seconds;
    write_file(out / "actors.csv",
               [&](std::ostream& os) { write_actor_stats_csv(os, hr.actor_stats); });
    result = std::move(hr.solve);
  } else if (args.engine == "central") {
    result = solve_centralized(ctx, init);
  } else {
    throw ConfigError("unknown engine '" + args.engine + "'");
  }

  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";

  write_file(out / "trajectory.csv",
             [&](std::ostream& os) { write_trajectory_csv(os, result.trajectory); });
  write_file(out / "final_state.json", [&](std::ostream& os) {
    write_final_state_json(os, c.feeder, pack.index, result.final_state);
  });

  RunSummary summary;
  summary.iters = result.iters;
  summary.final_cost = device_cost_total(ctx, result.final_state) +
                       ctx.substation.value(result.final_state.p0);
  summary.max_violation = std::max(max_undervoltage(ctx, result.final_state.v),
                                   max_overvoltage(ctx, result.final_state.v));
  summary.exit = result.exit == ExitReason::converged
                     ? "converged"
                     : (result.exit == ExitReason::diverged ? "diverged" : "iter_limit");
  write_file(out / "summary.json", [&](std::ostream& os) { write_summary_json(os, summary); });
  write_file(out / "timing.json", [&](std::ostream& os) {
    write_timing_json(os, result.solve_seconds, result.per_iter_seconds, per_iter_parallel);
  });

  if (args.dump_flows) {
    const SweepResult sw =
        solve_power_flow(c.feeder, pack.index, result.final_state.p, result.final_state.q);
    write_file(out / "flows.csv",
               [&](std::ostream& os) { write_flows_csv(os, c.feeder, sw.branches); });
  }
  if (args.dump_rx) {
    write_file(out / "R.csv",
               [&](std::ostream& os) { write_matrix_csv(os, c.feeder, pack.index, pack.R); });
    write_file(out / "X.csv",
               [&](std::ostream& os) { write_matrix_csv(os, c.feeder, pack.index, pack.X); });
  }

  std::cout << "exit=" << summary.exit << " iters=" << summary.iters
            << " final_cost=" << format_double(summary.final_cost)
            << " max_violation=" << format_double(summary.max_violation) << "\n";
  return result.exit == ExitReason::converged ? 0 : 2;
}

int run_cluster(const std::string& feeder_path, const std::string& k_spec,
                const std::string& out_path) {
  const FeederCase c = load_feeder(feeder_path);
  const int k = k_spec == "auto" ? recommend_cluster_count(c.feeder.node_count() - 1)
                                 : std::stoi(k_spec);
  const Partition p = auto_partition(c.feeder, k);
  if (out_path.empty()) {
    write_partition_json(std::cout, c.feeder, p);
  } else {
    write_file(out_path, [&](std::ostream& os) { write_partition_json(os, c.feeder, p); });
  }
  return 0;
}

struct BenchArgs {
  std::vector<int> sizes{256, 1024, 4096};
  std::string k_list = "auto";
  int iters = 5;
  unsigned seed = 7;
  std::string out_dir = "out";
  std::string topology = "chains";
  int branching = 0;  // chains: 0 = recommended branch count; dary: arity
};

int run_benchmark(const BenchArgs& args) {
  fs::create_directories(args.out_dir);
  std::ofstream os(fs::path(args.out_dir) / "benchmark.csv", std::ios::binary);
  os << "N,K,model_ops,measured_ops,central_ops,per_iter_wallclock_central,"
        "per_iter_wallclock_hier,per_iter_wallclock_hier_parallel\n";

  for (int n : args.sizes) {
    SyntheticSpec spec;
    spec.nodes = n;
    spec.topology = parse_topology(args.topology);
    spec.branching = args.branching > 0
                         ? args.branching
                         : (spec.topology == Topology::chains ? recommend_cluster_count(n) : 2);
    spec.seed = args.seed;
    spec.r_lo = 0.002;
    spec.r_hi = 0.02;
    spec.x_lo = 0.002;
    spec.x_hi = 0.02;
    const FeederCase c = generate_case(spec);
    const SensitivityPack pack = build_multi_phase(c.feeder);

    SolverConfig cfg;
    cfg.max_iters = args.iters;
    cfg.sigma_p0 = 1e-300;  // exhaust the iteration budget for stable timing
    cfg.sigma_step = 1e-300;
    cfg.eps = 1e-3;
    cfg.stability_check = 0;
    const OpfContext ctx = make_context(c, pack, cfg);
    const IterateState init = initial_state(ctx, args.seed + 1);

    const SolveResult central = solve_centralized(ctx, init);
    const double central_per_iter_ops =
        static_cast<double>(central.coupling_ops.total()) / central.iters;

    std::vector<int> ks;
    std::stringstream ss(args.k_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      ks.push_back(tok == "auto" ? recommend_cluster_count(n) : std::stoi(tok));
    }
    for (int k : ks) {
      Partition partition;
      try {
        partition = auto_partition(c.feeder, k, /*strict=*/true);
      } catch (const InfeasibleClusterError& e) {
        std::cerr << "skipping N=" << n << " K=" << k << ": " << e.what() << "\n";
        continue;
      }
      HierarchicalResult hier = run_hierarchical(ctx, partition, init, {});
      const double hier_per_iter_ops =
          static_cast<double>(hier.solve.coupling_ops.total()) / hier.solve.iters;
      os << n << ',' << k << ',' << model_op_count(n, k).total() << ','
         << format_double(hier_per_iter_ops) << ','
         << format_double(central_per_iter_ops) << ','
         << format_double(central.per_iter_seconds) << ','
         << format_double(hier.solve.per_iter_seconds) << ','
         << format_double(hier.per_iter_parallel_seconds) << '\n';
    }
  }
  std::cout << "wrote " << (fs::path(args.out_dir) / "benchmark.csv").string() << "\n";
  return 0;
}

struct CompareArgs {
  std::string feeder_path;
  double eps = 1e-2;
  double eta = 1e-3;
  double vmin = 0.95, vmax = 1.05;
  int max_iters = 60000;
  unsigned seed = 0;
  std::string out_dir = "out";
};

int run_compare(const CompareArgs& args) {
  const FeederCase c = load_feeder(args.feeder_path);
  const SensitivityPack full = build_multi_phase(c.feeder);
  const SensitivityPack diag = diagonal_phase_pack(full);

  SolverConfig cfg;
  cfg.eps = args.eps;
  cfg.eta = args.eta;
  cfg.v_min = args.vmin * args.vmin;
  cfg.v_max = args.vmax * args.vmax;
  cfg.max_iters = args.max_iters;
  cfg.mode = SolveMode::feedback;

  auto run_one = [&](const SensitivityPack& pack) {
    const OpfContext ctx = make_context(c, pack, cfg);
    SolveResult r = solve_centralized(ctx, initial_state(ctx, args.seed));
    return std::pair<OpfContext, SolveResult>(ctx, std::move(r));
  };
  const auto [ctx_full, res_full] = run_one(full);
  const auto [ctx_diag, res_diag] = run_one(diag);

  auto report = [](const OpfContext& ctx, const SolveResult& r) {
    nlohmann::json j;
    j["cost"] = device_cost_total(ctx, r.final_state) + ctx.substation.value(r.final_state.p0);
    j["max_violation"] = std::max(max_undervoltage(ctx, r.final_state.v),
                                  max_overvoltage(ctx, r.final_state.v));
    j["iters"] = r.iters;
    nlohmann::json p0 = nlohmann::json::array();
    for (const TrajectoryRow& row : r.trajectory) p0.push_back(row.p0);
    j["p0_series"] = p0;
    return j;
  };

  fs::create_directories(args.out_dir);
  nlohmann::json doc;
  doc["full_phase_model"] = report(ctx_full, res_full);
  doc["diagonal_phase_model"] = report(ctx_diag, res_diag);
  write_file(fs::path(args.out_dir) / "compare.json",
             [&](std::ostream& os) { os << doc.dump(2) << "\n"; });
  std::cout << "full cost=" << doc["full_phase_model"]["cost"]
            << " diagonal cost=" << doc["diagonal_phase_model"]["cost"] << "\n";
  return 0;
}

struct GenArgs {
  int nodes = 63;
  std::string topology = "dary";
  int branching = 2;
  int phases = 1;
  unsigned seed = 1;
  double load_scale = 0.02;
  std::string out_path = "feeder.json";
};

int run_gen(const GenArgs& args) {
  SyntheticSpec spec;
  spec.nodes = args.nodes;
  spec.topology = parse_topology(args.topology);
  spec.branching = args.branching;
  spec.phases = args.phases;
  spec.seed = args.seed;
  spec.load_scale = args.load_scale;
  const FeederCase c = generate_case(spec);
  write_file(args.out_path, [&](std::ostream& os) { os << save_feeder(c); });
  std::cout << "wrote " << args.out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voltage-regulation dispatch on radial multi-phase feeders"};
  app.require_subcommand(1);

  SolveArgs solve_args;
  CLI::App* solve = app.add_subcommand("solve", "run one engine on a feeder file");
  solve->add_option("--feeder", solve_args.feeder_path, "feeder JSON path")->required();
  solve->add_option("--engine", solve_args.engine, "central|hier");
  solve->add_option("--mode", solve_args.mode, "linear|feedback");
  solve->add_option("--partition", solve_args.partition,
                    "auto:<k> (0=recommended) or file:<path>");
  solve->add_option("--eps", solve_args.eps, "primal stepsize");
  solve->add_option("--eps-dual-mult", solve_args.eps_dual_mult, "dual stepsize multiplier");
  solve->add_option("--eta", solve_args.eta, "dual regularization");
  solve->add_option("--vmin", solve_args.vmin, "lower voltage bound, p.u.");
  solve->add_option("--vmax", solve_args.vmax, "upper voltage bound, p.u.");
  solve->add_option("--max-iters", solve_args.max_iters, "iteration cap");
  solve->add_option("--sigma", solve_args.sigma, "stop threshold on substation power");
  solve->add_option("--sigma-step", solve_args.sigma_step, "stop threshold on the step norm");
  solve->add_option("--seed", solve_args.seed, "initialization seed (0 = nominal start)");
  solve->add_option("--schedule-seed", solve_args.schedule_seed,
                    "actor scheduling permutation seed (hier)");
  solve->add_option("--out", solve_args.out_dir, "output directory");
  solve->add_flag("--log-messages", solve_args.log_messages, "write messages.jsonl (hier)");
  solve->add_flag("--dump-flows", solve_args.dump_flows, "write branch flows at the final point");
  solve->add_flag("--dump-rx", solve_args.dump_rx, "write the sensitivity matrices as CSV");

  std::string cluster_feeder, cluster_k = "auto", cluster_out;
  CLI::App* cluster = app.add_subcommand("cluster", "partition a feeder into subtrees");
  cluster->add_option("--feeder", cluster_feeder, "feeder JSON path")->required();
  cluster->add_option("--k", cluster_k, "auto or a cluster count");
  cluster->add_option("--out", cluster_out, "output path (default stdout)");

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("benchmark", "coupling-cost scaling benchmark");
  bench->add_option("--sizes", bench_args.sizes, "node counts");
  bench->add_option("--k-list", bench_args.k_list, "comma list of cluster counts / auto");
  bench->add_option("--iters", bench_args.iters, "iterations per timed run");
  bench->add_option("--seed", bench_args.seed, "generator seed");
  bench->add_option("--topology", bench_args.topology, "chains|dary");
  bench->add_option("--branching", bench_args.branching, "branch count or arity (0=auto)");
  bench->add_option("--out", bench_args.out_dir, "output directory");

  CompareArgs compare_args;
  CLI::App* compare = app.add_subcommand(
      "compare", "feedback-mode solve with full vs phase-diagonal sensitivities");
  compare->add_option("--feeder", compare_args.feeder_path, "feeder JSON path")->required();
  compare->add_option("--eps", compare_args.eps, "primal stepsize");
  compare->add_option("--eta", compare_args.eta, "dual regularization");
  compare->add_option("--vmin", compare_args.vmin, "lower voltage bound, p.u.");
  compare->add_option("--vmax", compare_args.vmax, "upper voltage bound, p.u.");
  compare->add_option("--max-iters", compare_args.max_iters, "iteration cap");
  compare->add_option("--seed", compare_args.seed, "initialization seed");
  compare->add_option("--out", compare_args.out_dir, "output directory");

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic feeder file");
  gen->add_option("--nodes", gen_args.nodes, "non-slack node count");
  gen->add_option("--topology", gen_args.topology, "dary|chains|random");
  gen->add_option("--branching", gen_args.branching, "arity or branch count");
  gen->add_option("--phases", gen_args.phases, "1 or 3");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--load-scale", gen_args.load_scale, "nominal load magnitude");
  gen->add_option("--out", gen_args.out_path, "output feeder path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return run_solve(solve_args);
    if (cluster->parsed()) return run_cluster(cluster_feeder, cluster_k, cluster_out);
    if (bench->parsed()) return run_benchmark(bench_args);
    if (compare->parsed()) return run_compare(compare_args);
    if (gen->parsed()) return run_gen(gen_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
