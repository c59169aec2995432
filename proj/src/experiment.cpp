#include "sdot/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace sdot {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& msg) {
  throw Error(ErrorCode::config, "field '" + path + "': " + msg);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) config_error(join(path, it.key()), "unknown field");
  }
}

double get_double(const json& obj, const std::string& key, const std::string& path, double def) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_number()) config_error(join(path, key), "expected a number");
  return v.get<double>();
}

std::int64_t get_int(const json& obj, const std::string& key, const std::string& path, std::int64_t def) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  // Allow 1e5-style literals when they are exact integers.
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9.0e15) return static_cast<std::int64_t>(d);
  }
  config_error(join(path, key), "expected an integer");
}

std::uint64_t get_u64(const json& obj, const std::string& key, const std::string& path, std::uint64_t def) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  config_error(join(path, key), "expected a non-negative integer");
}

bool get_bool(const json& obj, const std::string& key, const std::string& path, bool def) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) config_error(join(path, key), "expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& path, const std::string& def) {
  if (!obj.contains(key)) return def;
  const auto& v = obj.at(key);
  if (!v.is_string()) config_error(join(path, key), "expected a string");
  return v.get<std::string>();
}

Vector get_vector(const json& v, const std::string& path) {
  if (!v.is_array()) config_error(path, "expected an array of numbers");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) config_error(path + "[" + std::to_string(i) + "]", "expected a number");
    out(static_cast<Index>(i)) = v[i].get<double>();
  }
  return out;
}

Matrix get_matrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) config_error(path, "expected a non-empty array of points");
  Matrix out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vector row = get_vector(v[i], path + "[" + std::to_string(i) + "]");
    if (i == 0) out.resize(static_cast<Index>(v.size()), row.size());
    if (row.size() != out.cols()) config_error(path + "[" + std::to_string(i) + "]", "points differ in dimension");
    out.row(static_cast<Index>(i)) = row.transpose();
  }
  return out;
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json matrix_json(const Matrix& m) {
  json a = json::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

const char* cost_name(CostKind c) {
  switch (c) {
    case CostKind::squared: return "squared";
    case CostKind::normalized: return "normalized";
    case CostKind::custom: return "custom";
  }
  return "squared";
}

const char* source_kind_name(SourceSpec::Kind k) {
  switch (k) {
    case SourceSpec::Kind::empirical_mixture: return "empirical_mixture";
    case SourceSpec::Kind::gaussian_mixture: return "gaussian_mixture";
    case SourceSpec::Kind::uniform: return "uniform";
    case SourceSpec::Kind::discrete: return "discrete";
  }
  return "empirical_mixture";
}

GaussianMixture mixture_from_json(const json& j, const std::string& path, Index dim) {
  if (!j.is_object()) config_error(path, "expected an object");
  reject_unknown(j, path, {"weights", "means", "stds"});
  GaussianMixture m = default_mixture(dim);
  if (j.contains("weights")) m.weights = get_vector(j["weights"], join(path, "weights"));
  if (j.contains("means")) m.means = get_matrix(j["means"], join(path, "means"));
  if (j.contains("stds")) m.stds = get_vector(j["stds"], join(path, "stds"));
  try {
    m.validate();
  } catch (const Error& e) {
    config_error(path, e.what());
  }
  return m;
}

json mixture_json(const GaussianMixture& m) {
  return json{{"weights", vector_json(m.weights)}, {"means", matrix_json(m.means)}, {"stds", vector_json(m.stds)}};
}

SolverConfig algorithm_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) config_error(path, "expected an object");
  reject_unknown(j, path, {"name", "alpha", "sgd_scale", "adam_lr", "adam_beta1", "adam_beta2", "adam_eps", "gamma",
                           "beta", "indexing"});
  if (!j.contains("name")) config_error(join(path, "name"), "missing");
  Algorithm a;
  try {
    a = algorithm_from_string(get_string(j, "name", path, ""));
  } catch (const Error& e) {
    config_error(join(path, "name"), e.what());
  }
  SolverConfig c = SolverConfig::defaults(a, 1.0);
  c.alpha = get_double(j, "alpha", path, c.alpha);
  if (j.contains("sgd_scale") && !j["sgd_scale"].is_null()) c.sgd_scale = get_double(j, "sgd_scale", path, 0.0);
  c.adam_lr = get_double(j, "adam_lr", path, c.adam_lr);
  c.adam_beta1 = get_double(j, "adam_beta1", path, c.adam_beta1);
  c.adam_beta2 = get_double(j, "adam_beta2", path, c.adam_beta2);
  c.adam_eps = get_double(j, "adam_eps", path, c.adam_eps);
  c.gamma = get_double(j, "gamma", path, c.gamma);
  c.beta = get_double(j, "beta", path, c.beta);
  const std::string idx = get_string(j, "indexing", path, "literal");
  if (idx == "literal") {
    c.indexing = RegularizerIndexing::literal;
  } else if (idx == "blockwise") {
    c.indexing = RegularizerIndexing::blockwise;
  } else {
    config_error(join(path, "indexing"), "expected 'literal' or 'blockwise'");
  }
  try {
    c.validate();
  } catch (const Error& e) {
    config_error(path, e.what());
  }
  return c;
}

json algorithm_json(const SolverConfig& c) {
  json j{{"name", to_string(c.algorithm)}, {"alpha", c.alpha}};
  switch (c.algorithm) {
    case Algorithm::sgd:
      j["sgd_scale"] = c.sgd_scale ? json(*c.sgd_scale) : json(nullptr);
      break;
    case Algorithm::adam:
      j["adam_lr"] = c.adam_lr;
      j["adam_beta1"] = c.adam_beta1;
      j["adam_beta2"] = c.adam_beta2;
      j["adam_eps"] = c.adam_eps;
      break;
    case Algorithm::sgn:
      j["gamma"] = c.gamma;
      j["beta"] = c.beta;
      j["indexing"] = c.indexing == RegularizerIndexing::literal ? "literal" : "blockwise";
      break;
    case Algorithm::sn:
      break;
  }
  return j;
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

void append_bytes(std::string& s, const void* p, std::size_t n) { s.append(static_cast<const char*>(p), n); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::optional<double> parse_optional(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

std::string optional_field(const std::optional<double>& x) { return x ? format_number(*x) : std::string(); }

}  // namespace

std::string eps_tag(double eps) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", eps);
  return buf;
}

GaussianMixture default_mixture(Index dim) {
  GaussianMixture m;
  m.weights = Vector::Constant(2, 0.5);
  m.means = Matrix(2, dim);
  m.means.row(0).setConstant(0.3);
  m.means.row(1).setConstant(0.7);
  m.stds = Vector::Constant(2, 0.1);
  return m;
}

std::vector<std::int64_t> parse_snapshot_list(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
    if (item.empty()) continue;
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(item, &used);
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, "snapshots: cannot parse '" + item + "'");
    }
    if (used != item.size() || d < 0 || std::floor(d) != d || d > 9.0e15) {
      throw Error(ErrorCode::config, "snapshots: '" + item + "' is not a non-negative integer");
    }
    out.push_back(static_cast<std::int64_t>(d));
  }
  return out;
}

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    config_error("schema_version", "unsupported version " + std::to_string(schema_version));
  }
  if (replications < 1) config_error("replications", "must be >= 1");
  if (n_max < 0) config_error("n_max", "must be >= 0");
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (snapshots[i] < 0 || snapshots[i] > n_max) config_error("snapshots", "entries must lie in [0, n_max]");
    if (i > 0 && snapshots[i] <= snapshots[i - 1]) config_error("snapshots", "must be strictly increasing");
  }
  if (epsilons.empty()) config_error("epsilons", "must not be empty");
  std::set<double> seen;
  for (double e : epsilons) {
    if (!(e > 0.0) || !std::isfinite(e)) config_error("epsilons", "entries must be positive");
    if (!seen.insert(e).second) config_error("epsilons", "duplicate value");
  }
  if (algorithms.empty()) config_error("algorithms", "must not be empty");
  if (cost == CostKind::custom) config_error("cost", "custom costs are not available from a config file");
  if (source.kind == SourceSpec::Kind::empirical_mixture && source.count < 1) config_error("source.count", "must be >= 1");
  if (target.kind == TargetSpec::Kind::uniform_random && target.count < 1) config_error("target.count", "must be >= 1");
}

json ExperimentConfig::to_json() const {
  json src{{"type", source_kind_name(source.kind)}};
  switch (source.kind) {
    case SourceSpec::Kind::empirical_mixture:
      src["count"] = source.count;
      src["mixture"] = mixture_json(source.mixture);
      break;
    case SourceSpec::Kind::gaussian_mixture:
      src["mixture"] = mixture_json(source.mixture);
      break;
    case SourceSpec::Kind::uniform:
      src["dim"] = source.dim;
      break;
    case SourceSpec::Kind::discrete:
      src["points"] = matrix_json(source.points);
      src["weights"] = vector_json(source.weights);
      break;
  }
  json tgt;
  if (target.kind == TargetSpec::Kind::uniform_random) {
    tgt = json{{"type", "uniform_random"}, {"count", target.count}, {"dim", target.dim}};
  } else {
    tgt = json{{"type", "explicit"}, {"points", matrix_json(target.points)}, {"weights", vector_json(target.weights)}};
  }
  json algs = json::array();
  for (const auto& a : algorithms) algs.push_back(algorithm_json(a));
  return json{{"schema_version", schema_version},
              {"seed", seed},
              {"instance_seed", instance_seed},
              {"replications", replications},
              {"n_max", n_max},
              {"snapshots", snapshots},
              {"epsilons", epsilons},
              {"cost", cost_name(cost)},
              {"source", src},
              {"target", tgt},
              {"algorithms", algs},
              {"record_wall_time", record_wall_time},
              {"ground_truth", ground_truth}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) config_error("<root>", "expected a JSON object");
  reject_unknown(j, "", {"schema_version", "seed", "instance_seed", "replications", "n_max", "snapshots", "epsilons",
                         "cost", "source", "target", "algorithms", "record_wall_time", "ground_truth"});
  ExperimentConfig c;
  if (!j.contains("schema_version")) config_error("schema_version", "missing");
  c.schema_version = static_cast<int>(get_int(j, "schema_version", "", kSchemaVersion));
  c.seed = get_u64(j, "seed", "", c.seed);
  c.instance_seed = get_u64(j, "instance_seed", "", c.instance_seed);
  c.replications = get_int(j, "replications", "", c.replications);
  c.n_max = get_int(j, "n_max", "", c.n_max);
  if (j.contains("snapshots")) {
    const auto& s = j["snapshots"];
    if (s.is_string()) {
      c.snapshots = parse_snapshot_list(s.get<std::string>());
    } else if (s.is_array()) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        json wrap{{"v", s[i]}};
        c.snapshots.push_back(get_int(wrap, "v", "snapshots[" + std::to_string(i) + "]", 0));
      }
    } else {
      config_error("snapshots", "expected an array of integers or a comma-separated string");
    }
  }
  if (j.contains("epsilons")) {
    const Vector e = get_vector(j["epsilons"], "epsilons");
    c.epsilons.assign(e.data(), e.data() + e.size());
  }
  const std::string cost = get_string(j, "cost", "", "squared");
  if (cost == "squared") {
    c.cost = CostKind::squared;
  } else if (cost == "normalized") {
    c.cost = CostKind::normalized;
  } else {
    config_error("cost", "expected 'squared' or 'normalized'");
  }
  c.record_wall_time = get_bool(j, "record_wall_time", "", c.record_wall_time);
  c.ground_truth = get_bool(j, "ground_truth", "", c.ground_truth);

  if (j.contains("source")) {
    const auto& s = j["source"];
    if (!s.is_object()) config_error("source", "expected an object");
    reject_unknown(s, "source", {"type", "count", "dim", "mixture", "points", "weights"});
    const std::string type = get_string(s, "type", "source", "empirical_mixture");
    const Index dim = get_int(s, "dim", "source", 2);
    if (dim < 1) config_error("source.dim", "must be >= 1");
    c.source.dim = dim;
    if (type == "empirical_mixture" || type == "gaussian_mixture") {
      c.source.kind = type == "empirical_mixture" ? SourceSpec::Kind::empirical_mixture
                                                  : SourceSpec::Kind::gaussian_mixture;
      c.source.count = get_int(s, "count", "source", c.source.count);
      c.source.mixture = s.contains("mixture") ? mixture_from_json(s["mixture"], "source.mixture", dim)
                                               : default_mixture(dim);
      c.source.dim = c.source.mixture.dim();
    } else if (type == "uniform") {
      c.source.kind = SourceSpec::Kind::uniform;
    } else if (type == "discrete") {
      c.source.kind = SourceSpec::Kind::discrete;
      if (!s.contains("points")) config_error("source.points", "missing");
      c.source.points = get_matrix(s["points"], "source.points");
      c.source.weights = s.contains("weights")
                             ? get_vector(s["weights"], "source.weights")
                             : Vector::Constant(c.source.points.rows(), 1.0 / static_cast<double>(c.source.points.rows()));
      c.source.dim = c.source.points.cols();
    } else {
      config_error("source.type", "expected empirical_mixture, gaussian_mixture, uniform or discrete");
    }
  } else {
    c.source.mixture = default_mixture(2);
  }

  if (j.contains("target")) {
    const auto& t = j["target"];
    if (!t.is_object()) config_error("target", "expected an object");
    reject_unknown(t, "target", {"type", "count", "dim", "points", "weights"});
    const std::string type = get_string(t, "type", "target", "uniform_random");
    if (type == "uniform_random") {
      c.target.kind = TargetSpec::Kind::uniform_random;
      c.target.count = get_int(t, "count", "target", c.target.count);
      c.target.dim = get_int(t, "dim", "target", c.target.dim);
      if (c.target.dim < 1) config_error("target.dim", "must be >= 1");
    } else if (type == "explicit") {
      c.target.kind = TargetSpec::Kind::explicit_points;
      if (!t.contains("points")) config_error("target.points", "missing");
      c.target.points = get_matrix(t["points"], "target.points");
      c.target.weights = t.contains("weights")
                             ? get_vector(t["weights"], "target.weights")
                             : Vector::Constant(c.target.points.rows(), 1.0 / static_cast<double>(c.target.points.rows()));
      c.target.count = c.target.points.rows();
      c.target.dim = c.target.points.cols();
    } else {
      config_error("target.type", "expected uniform_random or explicit");
    }
  }

  if (!j.contains("algorithms")) config_error("algorithms", "missing");
  const auto& algs = j["algorithms"];
  if (!algs.is_array()) config_error("algorithms", "expected an array");
  for (std::size_t i = 0; i < algs.size(); ++i) {
    c.algorithms.push_back(algorithm_from_json(algs[i], "algorithms[" + std::to_string(i) + "]"));
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, "malformed JSON at " + line_col(text, e.byte) + ": " + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("config_hash")) return from_json(j["config"]);
  return from_json(j);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::config, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Instance build_instance(const ExperimentConfig& c) {
  Instance inst;
  inst.cost = c.cost == CostKind::normalized ? Cost::normalized() : Cost::squared();
  SeededStream src_stream(c.instance_seed, kReservedStreamBase);
  SeededStream tgt_stream(c.instance_seed, kReservedStreamBase + 1);
  try {
    if (c.target.kind == TargetSpec::Kind::uniform_random) {
      Matrix y(c.target.count, c.target.dim);
      for (Index i = 0; i < y.rows(); ++i) {
        for (Index k = 0; k < y.cols(); ++k) y(i, k) = tgt_stream.uniform();
      }
      inst.target = DiscreteMeasure::uniform(std::move(y));
    } else {
      inst.target = DiscreteMeasure(c.target.points, c.target.weights);
    }
    switch (c.source.kind) {
      case SourceSpec::Kind::empirical_mixture: {
        c.source.mixture.validate();
        inst.discrete = empirical_of_samples(sample_n(c.source.mixture, src_stream, c.source.count));
        inst.source = *inst.discrete;
        break;
      }
      case SourceSpec::Kind::gaussian_mixture:
        c.source.mixture.validate();
        inst.source = c.source.mixture;
        break;
      case SourceSpec::Kind::uniform:
        inst.source = UniformHypercube{c.source.dim};
        break;
      case SourceSpec::Kind::discrete:
        inst.discrete = DiscreteMeasure(c.source.points, c.source.weights);
        inst.source = *inst.discrete;
        break;
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config) throw;
    throw Error(ErrorCode::config, std::string("instance: ") + e.what());
  }
  if (dimension(inst.source) != inst.target.dim()) {
    throw Error(ErrorCode::config, "field 'target': dimension differs from the source dimension");
  }
  return inst;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& c) { return fnv1a_hex(c.to_json().dump()); }

std::string instance_hash(const DiscreteMeasure& source, const TargetMeasure& target, double eps, CostKind cost) {
  std::string bytes;
  for (const Matrix* m : {&source.points(), &target.points()}) {
    const std::int64_t r = m->rows(), k = m->cols();
    append_bytes(bytes, &r, sizeof r);
    append_bytes(bytes, &k, sizeof k);
    append_bytes(bytes, m->data(), sizeof(double) * static_cast<std::size_t>(m->size()));
  }
  for (const Vector* w : {&source.weights(), &target.weights()}) {
    append_bytes(bytes, w->data(), sizeof(double) * static_cast<std::size_t>(w->size()));
  }
  append_bytes(bytes, &eps, sizeof eps);
  const int ck = static_cast<int>(cost);
  append_bytes(bytes, &ck, sizeof ck);
  return fnv1a_hex(bytes);
}

TruthCache::TruthCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, "truth cache " + path_.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::config, "truth cache " + path_.string() + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& e = it.value();
    TruthEntry t;
    t.W_eps = e.at("W_eps").get<double>();
    t.v_star = get_vector(e.at("v_star"), "v_star");
    t.residual = e.at("residual").get<double>();
    t.eps = e.at("eps").get<double>();
    entries_[it.key()] = std::move(t);
  }
}

const TruthEntry* TruthCache::find(const std::string& hash) const {
  const auto it = entries_.find(hash);
  return it == entries_.end() ? nullptr : &it->second;
}

void TruthCache::insert(const std::string& hash, TruthEntry entry) { entries_[hash] = std::move(entry); }

void TruthCache::save() const {
  if (path_.empty()) return;
  json j = json::object();
  for (const auto& [k, t] : entries_) {
    j[k] = json{{"W_eps", t.W_eps}, {"v_star", vector_json(t.v_star)}, {"residual", t.residual}, {"eps", t.eps}};
  }
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_);
  out << j.dump(2) << "\n";
}

std::map<double, GroundTruth> ground_truths(const ExperimentConfig& c, const Instance& inst, TruthCache* cache) {
  std::map<double, GroundTruth> out;
  if (!inst.discrete) return out;
  bool dirty = false;
  for (double eps : c.epsilons) {
    const DiscreteProblem p(*inst.discrete, inst.target, eps, inst.cost);
    const std::string h = instance_hash(*inst.discrete, inst.target, eps, c.cost);
    const TruthEntry* hit = cache ? cache->find(h) : nullptr;
    if (hit && hit->v_star.size() == inst.target.size()) {
      out[eps] = ground_truth_at(p, hit->v_star, hit->residual);
      continue;
    }
    const auto s = sinkhorn_solve(p);
    out[eps] = ground_truth_at(p, s.v_star, s.residual);
    if (cache) {
      cache->insert(h, TruthEntry{out[eps].W_eps, s.v_star, s.residual, eps});
      dirty = true;
    }
  }
  if (cache && dirty) cache->save();
  return out;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_header() { return "replication,algorithm,n,wall_time_s,w_hat,sigma2_hat,v_err_sq,sbar_err_fro"; }

std::string format_row(const CsvRow& r) {
  return std::to_string(r.replication) + "," + r.algorithm + "," + std::to_string(r.n) + "," +
         optional_field(r.wall_time_s) + "," + optional_field(r.w_hat) + "," + optional_field(r.sigma2_hat) + "," +
         optional_field(r.v_err_sq) + "," + optional_field(r.sbar_err_fro);
}

std::vector<AggregateRow> aggregate(const std::vector<CsvRow>& rows, const std::optional<GroundTruth>& truth) {
  // Group key order follows first appearance: algorithm order, then n.
  std::vector<std::pair<std::string, std::int64_t>> keys;
  std::map<std::pair<std::string, std::int64_t>, std::vector<const CsvRow*>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.algorithm, r.n);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : keys) {
    auto members = groups[key];
    std::stable_sort(members.begin(), members.end(),
                     [](const CsvRow* a, const CsvRow* b) { return a->replication < b->replication; });
    AggregateRow a;
    a.algorithm = key.first;
    a.n = key.second;
    a.replications = static_cast<std::int64_t>(members.size());
    auto mean_of = [&](auto get) -> std::optional<double> {
      std::vector<double> xs;
      for (const CsvRow* m : members) {
        const std::optional<double> x = get(*m);
        if (!x) return std::nullopt;
        xs.push_back(*x);
      }
      if (xs.empty()) return std::nullopt;
      return compensated_sum(xs) / static_cast<double>(xs.size());
    };
    if (truth) {
      const double w = truth->W_eps;
      a.mean_abs_w_err = mean_of([w](const CsvRow& r) -> std::optional<double> {
        if (!r.w_hat) return std::nullopt;
        return std::abs(*r.w_hat - w);
      });
    }
    a.mean_v_err_sq = mean_of([](const CsvRow& r) { return r.v_err_sq; });
    a.mean_wall_time_s = mean_of([](const CsvRow& r) { return r.wall_time_s; });
    a.mean_sbar_err_fro = mean_of([](const CsvRow& r) { return r.sbar_err_fro; });
    out.push_back(std::move(a));
  }
  return out;
}

ExperimentResult monte_carlo(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const Instance inst = build_instance(config);
  std::optional<TruthCache> cache;
  if (options.truth_path) cache.emplace(*options.truth_path);
  std::map<double, GroundTruth> truths;
  if (config.ground_truth) truths = ground_truths(config, inst, cache ? &*cache : nullptr);

  std::vector<std::int64_t> snaps = config.snapshots;
  if (snaps.empty() || snaps.back() != config.n_max) snaps.push_back(config.n_max);
  snaps.erase(std::remove(snaps.begin(), snaps.end(), std::int64_t(0)), snaps.end());

  struct Job {
    std::size_t eps_index;
    std::size_t alg_index;
    std::int64_t replication;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < config.epsilons.size(); ++e) {
    for (std::size_t a = 0; a < config.algorithms.size(); ++a) {
      for (std::int64_t r = 0; r < config.replications; ++r) jobs.push_back({e, a, r});
    }
  }
  std::vector<std::vector<CsvRow>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto worker = [&]() {
    while (!failed.load()) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= jobs.size()) return;
      const Job& job = jobs[idx];
      try {
        const double eps = config.epsilons[job.eps_index];
        SolverConfig sc = config.algorithms[job.alg_index];
        sc.eps = eps;
        sc.n_max = config.n_max;
        const auto truth_it = truths.find(eps);
        const GroundTruth* truth = truth_it == truths.end() ? nullptr : &truth_it->second;
        const bool keep_sbar = truth && sc.algorithm == Algorithm::sgn;
        SeededStream stream(config.seed, static_cast<std::uint64_t>(job.replication));
        const auto record = run(sc, inst.source, inst.target, inst.cost, stream, snaps, keep_sbar);
        auto& rows = results[idx];
        for (const auto& s : record.snapshots) {
          CsvRow row;
          row.replication = job.replication;
          row.algorithm = to_string(sc.algorithm);
          row.n = s.n;
          if (config.record_wall_time) row.wall_time_s = s.wall_time_s;
          if (!std::isnan(s.w_hat)) row.w_hat = s.w_hat;
          if (!std::isnan(s.sigma2_hat)) row.sigma2_hat = s.sigma2_hat;
          if (truth) row.v_err_sq = (s.v - truth->v_star).squaredNorm();
          if (truth && s.s_bar) row.sbar_err_fro = (*s.s_bar - truth->G_star).norm();
          rows.push_back(std::move(row));
        }
      } catch (const std::exception& e) {
        errors[idx] = e.what();
        failed.store(true);
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (errors[i].empty()) continue;
    const Job& job = jobs[i];
    throw Error(ErrorCode::replication_failed,
                "replication " + std::to_string(job.replication) + " failed (seed " + std::to_string(config.seed) +
                    ", stream " + std::to_string(job.replication) + ", algorithm " +
                    to_string(config.algorithms[job.alg_index].algorithm) + ", eps " +
                    format_number(config.epsilons[job.eps_index]) + "): " + errors[i]);
  }

  ExperimentResult out;
  for (std::size_t e = 0; e < config.epsilons.size(); ++e) {
    EpsilonResult er;
    er.eps = config.epsilons[e];
    const auto t = truths.find(er.eps);
    if (t != truths.end()) er.truth = t->second;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].eps_index != e) continue;
      er.rows.insert(er.rows.end(), results[i].begin(), results[i].end());
    }
    er.aggregates = aggregate(er.rows, er.truth);
    out.per_eps.push_back(std::move(er));
  }
  return out;
}

json make_manifest(const ExperimentConfig& config, const ExperimentResult& result) {
  json truths = json::array();
  for (const auto& e : result.per_eps) {
    if (!e.truth) continue;
    truths.push_back(json{{"eps", e.eps}, {"W_eps", e.truth->W_eps}, {"residual", e.truth->residual},
                          {"v_star", vector_json(e.truth->v_star)}});
  }
  json files = json::array();
  for (const auto& e : result.per_eps) {
    files.push_back("runs_eps_" + eps_tag(e.eps) + ".csv");
    files.push_back("aggregate_eps_" + eps_tag(e.eps) + ".csv");
  }
  return json{{"tool", "sdot"},
              {"version", kVersion},
              {"schema_version", kSchemaVersion},
              {"config_hash", config_hash(config)},
              {"seed", config.seed},
              {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
              {"compiler", __VERSION__},
              {"rng", "mt19937_64 via seed_seq(seed_lo, seed_hi, stream_lo, stream_hi)"},
              {"ground_truth", truths},
              {"files", files},
              {"config", config.to_json()}};
}

std::vector<std::filesystem::path> write_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                                                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& e : result.per_eps) {
    const auto runs = dir / ("runs_eps_" + eps_tag(e.eps) + ".csv");
    {
      std::ofstream out(runs, std::ios::binary);
      out << csv_header() << "\n";
      for (const auto& r : e.rows) out << format_row(r) << "\n";
      if (!out) throw Error(ErrorCode::config, "cannot write " + runs.string());
    }
    written.push_back(runs);
    const auto agg = dir / ("aggregate_eps_" + eps_tag(e.eps) + ".csv");
    {
      std::ofstream out(agg, std::ios::binary);
      out << "algorithm,n,replications,mean_abs_w_err,mean_v_err_sq,mean_wall_time_s,mean_sbar_err_fro\n";
      for (const auto& a : e.aggregates) {
        out << a.algorithm << "," << a.n << "," << a.replications << "," << optional_field(a.mean_abs_w_err) << ","
            << optional_field(a.mean_v_err_sq) << "," << optional_field(a.mean_wall_time_s) << ","
            << optional_field(a.mean_sbar_err_fro) << "\n";
      }
      if (!out) throw Error(ErrorCode::config, "cannot write " + agg.string());
    }
    written.push_back(agg);
  }
  const auto manifest = dir / "manifest.json";
  {
    std::ofstream out(manifest, std::ios::binary);
    out << make_manifest(config, result).dump(2) << "\n";
  }
  written.push_back(manifest);
  return written;
}

std::vector<CsvRow> read_runs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != csv_header()) throw Error(ErrorCode::config, path.string() + ": unexpected header");
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8) throw Error(ErrorCode::config, path.string() + ": line " + std::to_string(lineno) + " has " +
                                                          std::to_string(f.size()) + " fields");
    CsvRow r;
    try {
      r.replication = std::stoll(f[0]);
      r.algorithm = f[1];
      r.n = std::stoll(f[2]);
      r.wall_time_s = parse_optional(f[3]);
      r.w_hat = parse_optional(f[4]);
      r.sigma2_hat = parse_optional(f[5]);
      r.v_err_sq = parse_optional(f[6]);
      r.sbar_err_fro = parse_optional(f[7]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, path.string() + ": line " + std::to_string(lineno) + " is malformed");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

unsigned resolve_threads(std::optional<unsigned> requested) {
  if (requested && *requested > 0) return *requested;
  if (const char* env = std::getenv("SDOT_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

}  // namespace sdot
