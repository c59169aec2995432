#ifndef SDOT_EXPERIMENT_HPP
#define SDOT_EXPERIMENT_HPP

// Config-driven Monte-Carlo protocol: instance construction, ground truth,
// parallel replications, CSV and manifest output.

#include "sdot/diagnostics.hpp"
#include "sdot/measures.hpp"
#include "sdot/objective.hpp"
#include "sdot/solvers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sdot {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

struct SourceSpec {
  /// empirical_mixture: I points drawn once from `mixture`, uniform weights.
  /// gaussian_mixture / uniform: continuous sources sampled on the fly.
  /// discrete: explicit points and weights.
  enum class Kind { empirical_mixture, gaussian_mixture, uniform, discrete };
  Kind kind = Kind::empirical_mixture;
  Index count = 1000;
  Index dim = 2;
  GaussianMixture mixture;
  Matrix points;
  Vector weights;
};

struct TargetSpec {
  /// uniform_random: J points uniform on [0,1]^d with weights 1/J.
  enum class Kind { uniform_random, explicit_points };
  Kind kind = Kind::uniform_random;
  Index count = 20;
  Index dim = 2;
  Matrix points;
  Vector weights;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  std::uint64_t instance_seed = 1;
  std::int64_t replications = 1;
  std::int64_t n_max = 0;
  std::vector<std::int64_t> snapshots;
  std::vector<double> epsilons{0.1};
  CostKind cost = CostKind::squared;
  SourceSpec source;
  TargetSpec target;
  std::vector<SolverConfig> algorithms;  // eps is filled per run
  bool record_wall_time = true;
  bool ground_truth = true;

  /// Throws ErrorCode::config naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Parses JSON text; syntax errors report line and column. A manifest
  /// (object with a "config" member) is accepted in place of a config.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Default two-component mixture used by desk instances.
GaussianMixture default_mixture(Index dim = 2);

/// Parses "1e2,1e3,1e4" into integers; throws ErrorCode::config.
std::vector<std::int64_t> parse_snapshot_list(const std::string& text);

struct Instance {
  SourceMeasure source;
  TargetMeasure target;
  Cost cost;
  /// Set when the source is discrete (exact ground truth available).
  std::optional<DiscreteMeasure> discrete;
};

Instance build_instance(const ExperimentConfig& config);

/// FNV-1a 64 over raw bytes, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::string config_hash(const ExperimentConfig& config);
std::string instance_hash(const DiscreteMeasure& source, const TargetMeasure& target, double eps, CostKind cost);

struct TruthEntry {
  double W_eps = 0.0;
  Vector v_star;
  double residual = 0.0;
  double eps = 0.0;
};

/// JSON file mapping instance hash -> {W_eps, v_star, residual, eps}.
class TruthCache {
 public:
  TruthCache() = default;
  explicit TruthCache(std::filesystem::path path);

  const TruthEntry* find(const std::string& hash) const;
  void insert(const std::string& hash, TruthEntry entry);
  void save() const;
  bool has_path() const { return !path_.empty(); }

 private:
  std::filesystem::path path_;
  std::map<std::string, TruthEntry> entries_;
};

/// Ground truth for each eps of a discrete instance, consulting the cache.
std::map<double, GroundTruth> ground_truths(const ExperimentConfig& config, const Instance& instance,
                                            TruthCache* cache = nullptr);

struct CsvRow {
  std::int64_t replication = 0;
  std::string algorithm;
  std::int64_t n = 0;
  std::optional<double> wall_time_s;
  std::optional<double> w_hat;
  std::optional<double> sigma2_hat;
  std::optional<double> v_err_sq;
  std::optional<double> sbar_err_fro;
};

struct AggregateRow {
  std::string algorithm;
  std::int64_t n = 0;
  std::int64_t replications = 0;
  std::optional<double> mean_abs_w_err;
  std::optional<double> mean_v_err_sq;
  std::optional<double> mean_wall_time_s;
  std::optional<double> mean_sbar_err_fro;
};

struct EpsilonResult {
  double eps = 0.0;
  std::optional<GroundTruth> truth;
  std::vector<CsvRow> rows;  // algorithm (config order), then replication, then n
  std::vector<AggregateRow> aggregates;
};

struct ExperimentResult {
  std::vector<EpsilonResult> per_eps;
};

struct RunOptions {
  unsigned threads = 1;
  std::optional<std::filesystem::path> truth_path;
};

/// Runs every (eps, algorithm, replication) job on a worker pool. Output is
/// independent of the thread count. Any failing job aborts the experiment
/// with ErrorCode::replication_failed naming seed, stream and algorithm.
ExperimentResult monte_carlo(const ExperimentConfig& config, const RunOptions& options = {});

/// Mean over replications in replication order with compensated summation.
std::vector<AggregateRow> aggregate(const std::vector<CsvRow>& rows, const std::optional<GroundTruth>& truth);

std::string csv_header();
std::string format_row(const CsvRow& row);
std::string format_number(double x);

/// "%g" rendering of eps used in output file names.
std::string eps_tag(double eps);

/// Writes runs_eps_<k>.csv, aggregate_eps_<k>.csv and manifest.json into `dir`.
/// Returns the list of files written.
std::vector<std::filesystem::path> write_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                                                 const std::filesystem::path& dir);

/// Manifest contents: config, its hash, seed, versions, ground-truth values.
nlohmann::json make_manifest(const ExperimentConfig& config, const ExperimentResult& result);

/// Reads a runs CSV written by write_outputs.
std::vector<CsvRow> read_runs_csv(const std::filesystem::path& path);

/// Worker count from an explicit value, else SDOT_THREADS, else 1.
unsigned resolve_threads(std::optional<unsigned> requested);

}  // namespace sdot

#endif  // SDOT_EXPERIMENT_HPP
