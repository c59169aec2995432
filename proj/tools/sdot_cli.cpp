// sdot: Monte-Carlo runner and diagnostics for entropic semi-discrete OT.
//
// Exit codes: 0 success, 1 check failure or run failure, 2 usage or config error.

#include "sdot/diagnostics.hpp"
#include "sdot/estimators.hpp"
#include "sdot/experiment.hpp"
#include "sdot/sinkhorn.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdot;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string snapshots;
  std::string truth;
};

ExperimentConfig load_config(const CommonOptions& o) {
  ExperimentConfig c = ExperimentConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.snapshots.empty()) {
    c.snapshots = parse_snapshot_list(o.snapshots);
    c.validate();
  }
  return c;
}

int cmd_run(const CommonOptions& o, const std::string& out_dir, std::optional<unsigned> threads) {
  const ExperimentConfig c = load_config(o);
  RunOptions ro;
  ro.threads = resolve_threads(threads);
  if (!o.truth.empty()) ro.truth_path = fs::path(o.truth);
  const auto result = monte_carlo(c, ro);
  const auto files = write_outputs(c, result, out_dir);
  for (const auto& f : files) std::cout << f.string() << "\n";
  for (const auto& e : result.per_eps) {
    for (const auto& a : e.aggregates) {
      if (a.n != c.n_max) continue;
      std::printf("eps=%-8g %-5s n=%-10lld mean|W-W*|=%-12s mean||V-v*||^2=%s\n", e.eps, a.algorithm.c_str(),
                  static_cast<long long>(a.n), a.mean_abs_w_err ? format_number(*a.mean_abs_w_err).c_str() : "-",
                  a.mean_v_err_sq ? format_number(*a.mean_v_err_sq).c_str() : "-");
    }
  }
  return kExitOk;
}

int cmd_sinkhorn(const CommonOptions& o, double tol) {
  const ExperimentConfig c = load_config(o);
  const Instance inst = build_instance(c);
  if (!inst.discrete) throw Error(ErrorCode::config, "field 'source.type': sinkhorn needs a discrete source");
  std::optional<TruthCache> cache;
  if (!o.truth.empty()) cache.emplace(fs::path(o.truth));
  json out = json::array();
  for (double eps : c.epsilons) {
    const DiscreteProblem p(*inst.discrete, inst.target, eps, inst.cost);
    SinkhornOptions so;
    so.tol = tol;
    const auto r = sinkhorn_solve(p, so);
    const std::string h = instance_hash(*inst.discrete, inst.target, eps, c.cost);
    if (cache) cache->insert(h, TruthEntry{r.W_eps, r.v_star, r.residual, eps});
    json vs = json::array();
    for (Index j = 0; j < r.v_star.size(); ++j) vs.push_back(r.v_star(j));
    out.push_back(json{{"eps", eps},
                       {"instance_hash", h},
                       {"W_eps", r.W_eps},
                       {"primal", primal_value(r.coupling, p)},
                       {"residual", r.residual},
                       {"iterations", r.iterations},
                       {"newton_steps", r.newton_steps},
                       {"converged", r.converged},
                       {"v_star", vs}});
  }
  if (cache) cache->save();
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_check(const CommonOptions& o, int points, bool as_json) {
  const ExperimentConfig c = load_config(o);
  const Instance inst = build_instance(c);
  if (!inst.discrete) throw Error(ErrorCode::config, "field 'source.type': check needs a discrete source");
  std::optional<TruthCache> cache;
  if (!o.truth.empty()) cache.emplace(fs::path(o.truth));
  const auto truths = ground_truths(c, inst, cache ? &*cache : nullptr);
  bool all = true;
  json out = json::array();
  for (double eps : c.epsilons) {
    const DiscreteProblem p(*inst.discrete, inst.target, eps, inst.cost);
    SuiteOptions so;
    so.points = points;
    so.seed = c.seed;
    const auto report = run_check_suite(p, truths.at(eps), so);
    all = all && suite_passes(report);
    if (as_json) {
      out.push_back(json{{"eps", eps}, {"checks", json::parse(report_to_json(report))}});
      continue;
    }
    std::printf("eps = %g  (W_eps = %.12g)\n", eps, truths.at(eps).W_eps);
    std::printf("  %-26s %16s %16s  %s\n", "check", "value", "bound", "result");
    for (const auto& r : report) {
      const char* verdict = !r.applicable ? "n/a" : r.pass ? "PASS" : r.gating ? "FAIL" : "FAIL (info)";
      std::printf("  %-26s %16.6g %16.6g  %s\n", r.check.c_str(), r.value, r.bound, verdict);
    }
  }
  if (as_json) std::cout << out.dump(2) << "\n";
  return all ? kExitOk : kExitFailure;
}

void write_histogram(const fs::path& path, const NormalitySummary& s) {
  std::ofstream out(path, std::ios::binary);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < s.histogram.counts.size(); ++b) {
    out << format_number(s.histogram.edges[b]) << "," << format_number(s.histogram.edges[b + 1]) << ","
        << s.histogram.counts[b] << "\n";
  }
}

int cmd_normality(const std::string& run_dir, const std::string& out_dir, int bins) {
  const fs::path dir(run_dir);
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorCode::config, "no manifest.json in " + run_dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, std::string("manifest.json: ") + e.what());
  }
  const fs::path out = out_dir.empty() ? dir : fs::path(out_dir);
  fs::create_directories(out);
  json summary = json::array();
  for (const auto& t : manifest.at("ground_truth")) {
    const double eps = t.at("eps").get<double>();
    const double w = t.at("W_eps").get<double>();
    const auto rows = read_runs_csv(dir / ("runs_eps_" + eps_tag(eps) + ".csv"));
    // Terminal row per (algorithm, replication): the largest n.
    std::map<std::string, std::map<std::int64_t, const CsvRow*>> last;
    for (const auto& r : rows) {
      auto& slot = last[r.algorithm][r.replication];
      if (!slot || r.n > slot->n) slot = &r;
    }
    for (const auto& [alg, reps] : last) {
      std::vector<double> w_tilde;
      std::vector<double> v_tilde;
      std::int64_t n = 0;
      for (const auto& [rep, row] : reps) {
        if (!row->w_hat || !row->sigma2_hat || *row->sigma2_hat <= 0.0) continue;
        n = row->n;
        const double rn = static_cast<double>(row->n);
        w_tilde.push_back(std::sqrt(rn) * (*row->w_hat - w) / std::sqrt(*row->sigma2_hat));
        if (row->v_err_sq) v_tilde.push_back(rn * *row->v_err_sq);
      }
      const auto ws = normality_stats(w_tilde, bins);
      write_histogram(out / ("normality_w_" + alg + "_eps_" + eps_tag(eps) + ".csv"), ws);
      json entry{{"eps", eps}, {"algorithm", alg}, {"n", n}, {"replications", ws.count},
                 {"w_tilde_mean", ws.mean}, {"w_tilde_std", ws.stddev}, {"w_tilde_ks", ws.ks_statistic}};
      if (v_tilde.size() >= kMinNormalityReplications) {
        const auto vs = normality_stats(v_tilde, bins);
        write_histogram(out / ("normality_v_" + alg + "_eps_" + eps_tag(eps) + ".csv"), vs);
        entry["v_tilde_mean"] = vs.mean;
        entry["v_tilde_std"] = vs.stddev;
      }
      summary.push_back(std::move(entry));
    }
  }
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic semi-dual solvers for entropic semi-discrete optimal transport"};
  app.require_subcommand(1);

  CommonOptions common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config, "Experiment config (JSON) or a manifest.json")->required();
    sub->add_option("--seed", common.seed, "Override the base seed");
    sub->add_option("--snapshots", common.snapshots, "Snapshot iterations, e.g. \"1e2,1e3,1e4\"");
    sub->add_option("--truth", common.truth, "Ground-truth cache file (JSON)");
  };

  auto* run = app.add_subcommand("run", "Run the Monte-Carlo protocol and write CSV files plus a manifest");
  add_common(run);
  std::string out_dir;
  std::optional<unsigned> threads;
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--threads", threads, "Worker threads (default: SDOT_THREADS, else 1)");

  auto* sink = app.add_subcommand("sinkhorn", "Compute (and cache) the Sinkhorn ground truth");
  add_common(sink);
  double tol = 1e-9;
  sink->add_option("--tol", tol, "l1 marginal residual tolerance");

  auto* check = app.add_subcommand("check", "Run the diagnostics suite on a discrete instance");
  add_common(check);
  int points = 100;
  bool as_json = false;
  check->add_option("--points", points, "Random evaluation points per instance");
  check->add_flag("--json", as_json, "Print the report as JSON");

  auto* norm = app.add_subcommand("normality", "Summarize terminal values of a finished run");
  std::string run_dir;
  std::string norm_out;
  int bins = 30;
  norm->add_option("--run", run_dir, "Directory written by `sdot run`")->required();
  norm->add_option("--out", norm_out, "Output directory for histogram CSVs (default: the run directory)");
  norm->add_option("--bins", bins, "Histogram bins");

  auto* version = app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (version->parsed()) {
      std::cout << "sdot " << kVersion << "\n";
      return kExitOk;
    }
    if (run->parsed()) return cmd_run(common, out_dir, threads);
    if (sink->parsed()) return cmd_sinkhorn(common, tol);
    if (check->parsed()) return cmd_check(common, points, as_json);
    if (norm->parsed()) return cmd_normality(run_dir, norm_out, bins);
  } catch (const Error& e) {
    std::cerr << "sdot: " << e.what() << "\n";
    return e.code() == ErrorCode::config || e.code() == ErrorCode::invalid_argument ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "sdot: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
