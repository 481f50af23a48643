#pragma once

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dsal/acquisition.hpp"
#include "dsal/checkpoint.hpp"
#include "dsal/core_types.hpp"
#include "dsal/datagen.hpp"
#include "dsal/error.hpp"
#include "dsal/io.hpp"
#include "dsal/metrics.hpp"
#include "dsal/rng.hpp"
#include "dsal/surrogate.hpp"

namespace dsal {

inline constexpr const char* kToolVersion = "0.1.0";

enum class StopRule { pool_exhausted, max_labeled, target_metric };

inline const char* to_string(StopRule s) {
  switch (s) {
    case StopRule::pool_exhausted: return "pool-exhausted";
    case StopRule::max_labeled: return "max-labeled";
    case StopRule::target_metric: return "target-metric";
  }
  return "?";
}

inline StopRule parse_stop_rule(const std::string& s) {
  if (s == "pool-exhausted" || s == "pool_exhausted") return StopRule::pool_exhausted;
  if (s == "max-labeled" || s == "max_labeled") return StopRule::max_labeled;
  if (s == "target-metric" || s == "target_metric") return StopRule::target_metric;
  throw ConfigError("unknown stop rule '" + s + "'");
}

/// Independent streams: initial labeled draw, model init/shuffles, acquisition.
struct ALSeeds {
  std::uint64_t data = 0, model = 0, acquisition = 0;
  static ALSeeds from(std::uint64_t s) { return {s, s, s}; }
  bool operator==(const ALSeeds&) const = default;
};

struct ALConfig {
  std::filesystem::path dataset;
  std::filesystem::path run_dir;
  Arch arch = Arch::unet;
  Strategy strategy = Strategy::random;
  std::optional<ModelSpec> spec;  ///< default: full-size spec at 100^2, desk spec otherwise
  std::size_t initial_labeled = 200;
  std::size_t round_batch = 0;  ///< 0 means "same as initial_labeled"
  StopRule stop = StopRule::pool_exhausted;
  std::size_t max_labeled = 0;  ///< S, for StopRule::max_labeled
  double target_wmae = 0.0;     ///< P, for StopRule::target_metric (test wmae_all)
  TrainConfig train;            ///< train.seed is replaced per round
  ALSeeds seeds;
  int entropy_k = 16;
  double entropy_dropout = 0.4;
  bool warm_start = false;
  bool deterministic = true;  ///< leave wall-clock cells out of the metrics CSV
  bool eval_val = false;      ///< also record val-split metrics per round
  unsigned threads = 1;       ///< acquisition scoring workers
  bool checked_load = true;

  void validate() const {
    if (initial_labeled < 1) throw ConfigError("initial_labeled must be >= 1");
    if (stop == StopRule::max_labeled && max_labeled < initial_labeled) {
      throw ConfigError("max_labeled must be >= initial_labeled");
    }
    if (stop == StopRule::target_metric && !(target_wmae > 0.0)) throw ConfigError("target metric must be positive");
    if (strategy == Strategy::entropy && entropy_k < 2) throw ConfigError("entropy_k must be >= 2");
    if (!(entropy_dropout > 0.0 && entropy_dropout < 1.0)) throw ConfigError("entropy_dropout must lie in (0, 1)");
    require_supported(arch, strategy);
    train.validate();
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (spec && spec->arch != arch) throw ConfigError("spec architecture does not match arch");
  }
};

/// Spec used for a run on lattices of `size`.
inline ModelSpec resolved_spec(const ALConfig& cfg, int size) {
  ModelSpec s;
  if (cfg.spec) {
    s = *cfg.spec;
  } else {
    s = size == 100 ? ModelSpec::full(cfg.arch) : ModelSpec::desk(cfg.arch);
    s.input_size = size;
  }
  if (s.input_size != size) {
    throw ConfigError("model input size " + std::to_string(s.input_size) + " does not match dataset size " + std::to_string(size));
  }
  if (cfg.strategy == Strategy::entropy && s.dropout_rate <= 0.0) s.dropout_rate = cfg.entropy_dropout;
  s.validate();
  return s;
}

inline std::size_t resolved_batch(const ALConfig& cfg) { return cfg.round_batch ? cfg.round_batch : cfg.initial_labeled; }

// ---- JSON mirrors ---------------------------------------------------------

inline nlohmann::json to_json(const TrainConfig& t, bool with_seed = true) {
  nlohmann::json j = {{"epochs", t.epochs},
                      {"batch_size", t.batch_size},
                      {"optimizer",
                       {{"kind", nn::to_string(t.optimizer.kind)},
                        {"learning_rate", t.optimizer.learning_rate},
                        {"beta1", t.optimizer.beta1},
                        {"beta2", t.optimizer.beta2},
                        {"eps", t.optimizer.eps}}},
                      {"loss_w", t.loss_w}};
  if (with_seed) j["seed"] = t.seed;
  return j;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

/// Overrides the fields of `t` present in `j`.
inline void apply_json(TrainConfig& t, const nlohmann::json& j) {
  detail::reject_unknown(j, {"epochs", "batch_size", "optimizer", "loss_w", "seed"}, "train");
  detail::take(j, "epochs", t.epochs);
  detail::take(j, "batch_size", t.batch_size);
  detail::take(j, "loss_w", t.loss_w);
  detail::take(j, "seed", t.seed);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    detail::reject_unknown(o, {"kind", "learning_rate", "beta1", "beta2", "eps"}, "train.optimizer");
    if (o.contains("kind")) t.optimizer.kind = nn::parse_optimizer(o.at("kind").get<std::string>());
    detail::take(o, "learning_rate", t.optimizer.learning_rate);
    detail::take(o, "beta1", t.optimizer.beta1);
    detail::take(o, "beta2", t.optimizer.beta2);
    detail::take(o, "eps", t.optimizer.eps);
  }
}

inline nlohmann::json to_json(const ALConfig& c) {
  nlohmann::json j = {{"dataset", c.dataset.string()},
                      {"run_dir", c.run_dir.string()},
                      {"arch", to_string(c.arch)},
                      {"strategy", to_string(c.strategy)},
                      {"initial_labeled", c.initial_labeled},
                      {"round_batch", c.round_batch},
                      {"stop", to_string(c.stop)},
                      {"max_labeled", c.max_labeled},
                      {"target_wmae", c.target_wmae},
                      {"train", to_json(c.train, false)},
                      {"seeds", {{"data", c.seeds.data}, {"model", c.seeds.model}, {"acquisition", c.seeds.acquisition}}},
                      {"entropy_k", c.entropy_k},
                      {"entropy_dropout", c.entropy_dropout},
                      {"warm_start", c.warm_start},
                      {"deterministic", c.deterministic},
                      {"eval_val", c.eval_val},
                      {"threads", c.threads},
                      {"checked_load", c.checked_load}};
  if (c.spec) j["spec"] = nn::to_json(*c.spec);
  return j;
}

/// Overrides the fields of `c` present in `j`; unknown keys are errors.
inline void apply_json(ALConfig& c, const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"dataset", "run_dir", "arch", "strategy", "spec", "initial_labeled", "round_batch", "stop",
                          "max_labeled", "target_wmae", "train", "seeds", "entropy_k", "entropy_dropout", "warm_start",
                          "deterministic", "eval_val", "threads", "checked_load"},
                         "config");
  try {
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("run_dir")) c.run_dir = j.at("run_dir").get<std::string>();
    if (j.contains("arch")) c.arch = nn::parse_arch(j.at("arch").get<std::string>());
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("stop")) c.stop = parse_stop_rule(j.at("stop").get<std::string>());
    if (j.contains("spec")) c.spec = nn::model_spec_from_json(j.at("spec"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  detail::take(j, "initial_labeled", c.initial_labeled);
  detail::take(j, "round_batch", c.round_batch);
  detail::take(j, "max_labeled", c.max_labeled);
  detail::take(j, "target_wmae", c.target_wmae);
  detail::take(j, "entropy_k", c.entropy_k);
  detail::take(j, "entropy_dropout", c.entropy_dropout);
  detail::take(j, "warm_start", c.warm_start);
  detail::take(j, "deterministic", c.deterministic);
  detail::take(j, "eval_val", c.eval_val);
  detail::take(j, "threads", c.threads);
  detail::take(j, "checked_load", c.checked_load);
  if (j.contains("train")) apply_json(c.train, j.at("train"));
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    if (s.is_number_unsigned() || s.is_number_integer()) {
      c.seeds = ALSeeds::from(s.get<std::uint64_t>());
    } else {
      detail::reject_unknown(s, {"data", "model", "acquisition"}, "seeds");
      detail::take(s, "data", c.seeds.data);
      detail::take(s, "model", c.seeds.model);
      detail::take(s, "acquisition", c.seeds.acquisition);
    }
  }
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"wmae_all", r.wmae_all},   {"mae_src", opt(r.mae_src)},     {"mae_ring1", opt(r.mae_ring1)},
          {"mae_ring2", opt(r.mae_ring2)}, {"mae_ring3", opt(r.mae_ring3)}, {"mae_field", opt(r.mae_field)},
          {"counts", {{"all", r.n_all}, {"src", r.n_src}, {"ring1", r.n_ring1}, {"ring2", r.n_ring2}, {"ring3", r.n_ring3}, {"field", r.n_field}}}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  MetricsReport r;
  r.wmae_all = j.at("wmae_all").get<double>();
  r.mae_src = opt("mae_src");
  r.mae_ring1 = opt("mae_ring1");
  r.mae_ring2 = opt("mae_ring2");
  r.mae_ring3 = opt("mae_ring3");
  r.mae_field = opt("mae_field");
  const auto& c = j.at("counts");
  r.n_all = c.at("all").get<std::size_t>();
  r.n_src = c.at("src").get<std::size_t>();
  r.n_ring1 = c.at("ring1").get<std::size_t>();
  r.n_ring2 = c.at("ring2").get<std::size_t>();
  r.n_ring3 = c.at("ring3").get<std::size_t>();
  r.n_field = c.at("field").get<std::size_t>();
  return r;
}

// ---- state ----------------------------------------------------------------

struct RoundRecord {
  int round = 0;
  std::size_t labeled_count = 0;
  double labeled_frac = 0.0;
  MetricsReport test;
  std::optional<MetricsReport> val;
  double train_wall_s = 0.0;
  double acq_wall_s = 0.0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<std::size_t> acquired;  ///< pick order; empty on the final round
  bool final_round = false;
  std::string stop_reason;            ///< set on the final round
};

struct ALState {
  int round = 0;                     ///< completed rounds
  std::vector<std::size_t> labeled;  ///< sorted
  std::vector<std::size_t> pool;     ///< sorted
  std::vector<RoundRecord> history;
  bool finished = false;
  std::string stop_reason;
};

inline nlohmann::json to_json(const RoundRecord& r) {
  nlohmann::json j = {{"round", r.round},
                      {"labeled_count", r.labeled_count},
                      {"labeled_frac", r.labeled_frac},
                      {"test", to_json(r.test)},
                      {"train_wall_s", r.train_wall_s},
                      {"acq_wall_s", r.acq_wall_s},
                      {"best_epoch", r.best_epoch},
                      {"best_val_loss", r.best_val_loss},
                      {"acquired_count", r.acquired.size()},
                      {"final", r.final_round},
                      {"stop_reason", r.stop_reason},
                      {"complete", true}};
  if (r.val) j["val"] = to_json(*r.val);
  return j;
}

inline RoundRecord round_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<int>();
  r.labeled_count = j.at("labeled_count").get<std::size_t>();
  r.labeled_frac = j.at("labeled_frac").get<double>();
  r.test = metrics_from_json(j.at("test"));
  if (j.contains("val")) r.val = metrics_from_json(j.at("val"));
  r.train_wall_s = j.at("train_wall_s").get<double>();
  r.acq_wall_s = j.at("acq_wall_s").get<double>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.best_val_loss = j.at("best_val_loss").get<double>();
  r.final_round = j.at("final").get<bool>();
  r.stop_reason = j.at("stop_reason").get<std::string>();
  if (!j.at("complete").get<bool>()) throw FormatError(FormatError::Kind::malformed, "record not marked complete");
  return r;
}

// ---- metrics CSV ----------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "arch,strategy,seed,round,labeled_count,labeled_frac,wmae_all,mae_src,mae_ring1,mae_ring2,mae_ring3,mae_field,"
    "train_wall_s,acq_wall_s";

inline constexpr std::size_t kMetricColumns = 6;
inline constexpr const char* kMetricNames[kMetricColumns] = {"wmae_all", "mae_src", "mae_ring1", "mae_ring2", "mae_ring3", "mae_field"};

/// One parsed metrics CSV row.
struct MetricsRow {
  std::string arch, strategy;
  std::uint64_t seed = 0;
  int round = 0;
  std::size_t labeled_count = 0;
  double labeled_frac = 0.0;
  std::optional<double> metric[kMetricColumns];
  std::optional<double> train_wall_s, acq_wall_s;

  std::optional<double> get(const std::string& name) const {
    for (std::size_t i = 0; i < kMetricColumns; ++i)
      if (name == kMetricNames[i]) return metric[i];
    throw ConfigError("unknown metric column '" + name + "'");
  }
};

inline MetricsRow make_row(const ALConfig& cfg, const RoundRecord& r) {
  MetricsRow row;
  row.arch = to_string(cfg.arch);
  row.strategy = to_string(cfg.strategy);
  row.seed = cfg.seeds.data;
  row.round = r.round;
  row.labeled_count = r.labeled_count;
  row.labeled_frac = r.labeled_frac;
  row.metric[0] = r.test.wmae_all;
  row.metric[1] = r.test.mae_src;
  row.metric[2] = r.test.mae_ring1;
  row.metric[3] = r.test.mae_ring2;
  row.metric[4] = r.test.mae_ring3;
  row.metric[5] = r.test.mae_field;
  if (!cfg.deterministic) {
    row.train_wall_s = r.train_wall_s;
    row.acq_wall_s = r.acq_wall_s;
  }
  return row;
}

inline std::string format_row(const MetricsRow& r) {
  auto cell = [](const std::optional<double>& v) { return v ? io::fmt_double(*v) : std::string(); };
  std::string s = r.arch + ',' + r.strategy + ',' + std::to_string(r.seed) + ',' + std::to_string(r.round) + ',' +
                  std::to_string(r.labeled_count) + ',' + io::fmt_double(r.labeled_frac);
  for (const auto& m : r.metric) s += ',' + cell(m);
  s += ',' + cell(r.train_wall_s) + ',' + cell(r.acq_wall_s);
  return s;
}

inline std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + '\n';
  for (const auto& r : rows) out += format_row(r) + '\n';
  return out;
}

/// Parses a metrics CSV; columns are located by header name.
inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text, const std::string& name = "metrics CSV") {
  auto lines = io::split(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw FormatError(FormatError::Kind::malformed, name + ": empty file");
  const auto header = io::split(lines.front(), ',');
  auto col = [&](const std::string& c) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == c) return i;
    throw FormatError(FormatError::Kind::malformed, name + ": missing column '" + c + "'");
  };
  const std::size_t c_arch = col("arch"), c_strat = col("strategy"), c_seed = col("seed"), c_round = col("round"),
                    c_count = col("labeled_count"), c_frac = col("labeled_frac");
  std::size_t c_metric[kMetricColumns];
  for (std::size_t i = 0; i < kMetricColumns; ++i) c_metric[i] = col(kMetricNames[i]);
  const std::size_t c_tw = col("train_wall_s"), c_aw = col("acq_wall_s");
  std::vector<MetricsRow> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = io::split(lines[li], ',');
    const auto where = name + " line " + std::to_string(li + 1);
    if (f.size() != header.size()) throw FormatError(FormatError::Kind::malformed, where + ": wrong field count");
    auto num = [&](std::size_t c) -> std::optional<double> {
      if (f[c].empty()) return std::nullopt;
      return detail::parse_double(f[c], where);
    };
    MetricsRow r;
    r.arch = f[c_arch];
    r.strategy = f[c_strat];
    try {
      r.seed = std::stoull(f[c_seed]);
      r.round = std::stoi(f[c_round]);
      r.labeled_count = std::stoull(f[c_count]);
    } catch (const std::exception&) {
      throw FormatError(FormatError::Kind::malformed, where + ": bad integer field");
    }
    r.labeled_frac = detail::parse_double(f[c_frac], where);
    for (std::size_t i = 0; i < kMetricColumns; ++i) r.metric[i] = num(c_metric[i]);
    r.train_wall_s = num(c_tw);
    r.acq_wall_s = num(c_aw);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Mean and sample standard deviation across seeds, per
/// (arch, strategy, labeled_count).
inline std::string summary_csv(std::span<const MetricsRow> rows) {
  using Key = std::tuple<std::string, std::string, std::size_t>;
  std::map<Key, std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) groups[{r.arch, r.strategy, r.labeled_count}].push_back(&r);
  std::string out = "arch,strategy,labeled_count,labeled_frac,n_seeds";
  for (const char* m : kMetricNames) out += std::string(",") + m + "_mean," + m + "_std";
  out += '\n';
  for (const auto& [key, g] : groups) {
    out += std::get<0>(key) + ',' + std::get<1>(key) + ',' + std::to_string(std::get<2>(key)) + ',' +
           io::fmt_double(g.front()->labeled_frac) + ',' + std::to_string(g.size());
    for (std::size_t i = 0; i < kMetricColumns; ++i) {
      std::vector<double> v;
      for (const auto* r : g)
        if (r->metric[i]) v.push_back(*r->metric[i]);
      out += ',';
      if (v.empty()) {
        out += ',';
        continue;
      }
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      out += io::fmt_double(mean) + ',';
      if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out += io::fmt_double(std::sqrt(ss / static_cast<double>(v.size() - 1)));
      }
    }
    out += '\n';
  }
  return out;
}

// ---- run directory plumbing -----------------------------------------------

/// Exclusive writer lock on a run directory. A lock left behind by a process
/// that no longer exists is taken over.
class RunLock {
 public:
  explicit RunLock(std::filesystem::path path) : path_(std::move(path)) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        return;
      }
      if (errno != EEXIST) throw Error("cannot create lock file " + path_.string());
      long owner = 0;
      try {
        owner = std::stol(io::read_file(path_));
      } catch (const std::exception&) {
        owner = 0;
      }
      if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM)) {
        throw ConfigError("run directory is locked by process " + std::to_string(owner) + " (" + path_.string() + ")");
      }
      std::filesystem::remove(path_);
    }
    throw ConfigError("could not acquire lock " + path_.string());
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path round_dir(const std::filesystem::path& run_dir, int r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "round_%03d", r);
  return run_dir / buf;
}

inline void write_atomic(const std::filesystem::path& path, std::string_view data) {
  auto tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, data);
  std::filesystem::rename(tmp, path);
}

inline std::string ids_csv(const char* header, std::span<const std::size_t> ids, bool ranked) {
  std::string out = std::string(header) + '\n';
  for (std::size_t i = 0; i < ids.size(); ++i)
    out += ranked ? std::to_string(i) + ',' + std::to_string(ids[i]) + '\n' : std::to_string(ids[i]) + '\n';
  return out;
}

inline std::vector<std::size_t> parse_ids_csv(const std::string& text, bool ranked, const std::string& name) {
  auto lines = io::split(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw FormatError(FormatError::Kind::malformed, name + ": missing header");
  std::vector<std::size_t> ids;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = io::split(lines[i], ',');
    try {
      ids.push_back(std::stoull(ranked ? f.at(1) : f.at(0)));
    } catch (const std::exception&) {
      throw FormatError(FormatError::Kind::malformed, name + ": bad line " + std::to_string(i + 1));
    }
  }
  return ids;
}

/// Content hash over grids, parameters and split assignment.
inline std::string dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = io::fnv1a("SSDS");
  std::string buf;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto& e = ds.entries[i];
    buf.clear();
    for (double v : e.input.values) io::put_le<float>(buf, static_cast<float>(v));
    for (double v : e.target.values) io::put_le<float>(buf, static_cast<float>(v));
    for (double v : {e.params.cx1, e.params.cy1, e.params.cx2, e.params.cy2, e.params.q2}) io::put_le<double>(buf, v);
    buf += static_cast<char>(ds.splits[i]);
    h = io::fnv1a(buf, h);
  }
  return io::hex64(h);
}

inline std::string host_name() {
  char buf[256] = {};
  if (::gethostname(buf, sizeof buf - 1) != 0) return "unknown";
  return buf;
}

/// Everything that steers results; run_dir, dataset path and thread count
/// may change between a run and its resumption.
inline nlohmann::json result_relevant(nlohmann::json cfg) {
  cfg.erase("run_dir");
  cfg.erase("dataset");
  cfg.erase("threads");
  return cfg;
}

/// Evaluates a model on the split indices.
inline MetricsReport evaluate_split(Surrogate& model, const Dataset& ds, std::span<const std::size_t> ids, double w) {
  MetricsAccumulator acc(w);
  for (std::size_t i : ids) {
    const auto& e = ds.entries[i];
    acc.add(predict_one(model, e.input), e.target, compute_region_masks(e.input, e.target));
  }
  return acc.report();
}

struct RunHooks {
  std::function<void(const ALConfig&, const RoundRecord&)> on_round;
};

namespace detail {

struct SplitIds {
  std::vector<std::size_t> train, val, test;
};

inline void check_partition(const ALState& st, const SplitIds& s) {
  std::vector<std::size_t> both;
  std::set_union(st.labeled.begin(), st.labeled.end(), st.pool.begin(), st.pool.end(), std::back_inserter(both));
  if (both.size() != st.labeled.size() + st.pool.size()) throw Error("labeled and pool sets overlap");
  if (both != s.train) throw Error("labeled and pool sets do not partition the training split");
}

inline std::vector<std::size_t> set_minus(const std::vector<std::size_t>& a, std::vector<std::size_t> b) {
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline std::vector<std::size_t> set_plus(const std::vector<std::size_t>& a, std::vector<std::size_t> b) {
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline std::vector<SampleRef> refs(const Dataset& ds, std::span<const std::size_t> ids) {
  std::vector<SampleRef> out;
  out.reserve(ids.size());
  for (std::size_t i : ids) out.push_back({&ds.entries[i].input, &ds.entries[i].target});
  return out;
}

inline AcquisitionResult acquire(const ALConfig& cfg, const Dataset& ds, const ALState& st, const TrainResult<float>& tr,
                                 std::size_t b, std::uint64_t seed) {
  const std::span<const std::size_t> pool(st.pool);
  std::vector<const FieldGrid*> inputs, targets;
  for (std::size_t i : st.pool) {
    inputs.push_back(&ds.entries[i].input);
    targets.push_back(&ds.entries[i].target);
  }
  switch (cfg.strategy) {
    case Strategy::random: {
      Rng rng(seed);
      return acquire_random(pool, b, rng);
    }
    case Strategy::entropy:
      return acquire_entropy(tr.best, pool, inputs, b, cfg.entropy_k, seed, cfg.threads);
    case Strategy::tod:
      return acquire_tod(tr.snapshots, pool, inputs, b, cfg.threads);
    case Strategy::true_loss:
      return acquire_true_loss(tr.best, pool, inputs, targets, b, cfg.train.loss_w, cfg.threads);
    case Strategy::diversity: {
      std::vector<ScenarioParams> all, lab, pp;
      for (const auto& e : ds.entries) all.push_back(e.params);
      for (std::size_t i : st.labeled) lab.push_back(ds.entries[i].params);
      for (std::size_t i : st.pool) pp.push_back(ds.entries[i].params);
      return acquire_diversity(lab, pool, pp, b, feature_bounds(std::span<const ScenarioParams>(all)));
    }
  }
  throw ConfigError("unhandled strategy");
}

inline std::string run_csv(const ALConfig& cfg, const ALState& st) {
  std::vector<MetricsRow> rows;
  for (const auto& r : st.history) rows.push_back(make_row(cfg, r));
  return metrics_csv(rows);
}

}  // namespace detail

/// Runs (or continues) an active-learning experiment in cfg.run_dir.
/// Committed rounds found on disk are replayed from their records; an
/// interrupted round is discarded and re-run from its start.
inline ALState run_active_learning(const ALConfig& cfg_in, const Dataset* preloaded = nullptr, const RunHooks& hooks = {}) {
  namespace fs = std::filesystem;
  ALConfig cfg = cfg_in;
  cfg.validate();
  if (cfg.run_dir.empty()) throw ConfigError("run_dir is required");

  std::optional<Dataset> owned;
  if (!preloaded) {
    if (cfg.dataset.empty()) throw ConfigError("dataset path is required");
    owned = load_dataset(cfg.dataset, cfg.checked_load);
    preloaded = &*owned;
  }
  const Dataset& ds = *preloaded;
  const ModelSpec spec = resolved_spec(cfg, ds.size);
  cfg.spec = spec;
  cfg.round_batch = resolved_batch(cfg);

  detail::SplitIds split{ds.indices_of(Split::train), ds.indices_of(Split::val), ds.indices_of(Split::test)};
  if (split.train.size() < cfg.initial_labeled) {
    throw ConfigError("initial_labeled " + std::to_string(cfg.initial_labeled) + " exceeds the training split (" +
                      std::to_string(split.train.size()) + ")");
  }
  if (split.val.empty() || split.test.empty()) throw ConfigError("dataset needs non-empty val and test splits");

  fs::create_directories(cfg.run_dir);
  RunLock lock(cfg.run_dir / "run.lock");

  const auto fingerprint = dataset_fingerprint(ds);
  const auto cfg_json = to_json(cfg);
  const auto manifest_path = cfg.run_dir / "run_manifest.json";
  if (fs::exists(manifest_path)) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(io::read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatError::Kind::malformed, "run_manifest.json: " + std::string(e.what()));
    }
    if (m.value("dataset_fingerprint", std::string()) != fingerprint) {
      throw ConfigError("run directory was created for a different dataset");
    }
    if (result_relevant(m.at("config")) != result_relevant(cfg_json)) {
      throw ConfigError("run directory was created with a different configuration");
    }
  } else {
    nlohmann::json m = {{"tool", "dsal"},
                        {"version", kToolVersion},
                        {"config", cfg_json},
                        {"dataset_fingerprint", fingerprint},
                        {"dataset",
                         {{"n", ds.n()},
                          {"size", ds.size},
                          {"seed", ds.seed},
                          {"train", split.train.size()},
                          {"val", split.val.size()},
                          {"test", split.test.size()},
                          {"physics", {{"D", ds.physics.D}, {"gamma", ds.physics.gamma}}}}},
                        {"seed_streams",
                         {{"initial_labeled", "derive_seed(seeds.data, {0x4c414231})"},
                          {"model_init", "seeds.model (same every round)"},
                          {"shuffle", "derive_seed(derive_seed(seeds.model, {0x54524e, round}), {epoch})"},
                          {"acquisition", "derive_seed(seeds.acquisition, {0x414351, round})"}}},
                        {"parameter_count", Surrogate(spec, 0).parameter_count()},
                        {"host",
                         {{"name", host_name()},
                          {"hardware_threads", std::thread::hardware_concurrency()},
                          {"compiler", __VERSION__}}}};
    write_atomic(manifest_path, m.dump(2) + "\n");
  }

  ALState st;
  {
    Rng rng(derive_seed(cfg.seeds.data, {0x4c414231ULL}));
    auto init = acquire_random(split.train, cfg.initial_labeled, rng).selected;
    std::sort(init.begin(), init.end());
    st.labeled = init;
    st.pool = detail::set_minus(split.train, init);
  }

  // replay committed rounds
  for (int r = 0;; ++r) {
    const auto dir = round_dir(cfg.run_dir, r);
    if (!fs::exists(dir)) break;
    const auto where = "round " + std::to_string(r) + " (" + dir.string() + ")";
    if (!fs::exists(dir / "metrics.json")) {
      fs::remove_all(dir);  // interrupted before commit
      for (int later = r + 1; fs::exists(round_dir(cfg.run_dir, later)); ++later) fs::remove_all(round_dir(cfg.run_dir, later));
      break;
    }
    if (st.finished) throw FormatError(FormatError::Kind::malformed, where + ": record follows the final round");
    RoundRecord rec;
    std::vector<std::size_t> labeled, acquired;
    try {
      rec = round_from_json(nlohmann::json::parse(io::read_file(dir / "metrics.json")));
      labeled = parse_ids_csv(io::read_file(dir / "labeled.csv"), false, "labeled.csv");
      if (!rec.final_round) acquired = parse_ids_csv(io::read_file(dir / "acquired.csv"), true, "acquired.csv");
      if (!fs::exists(dir / "checkpoint.ssck")) throw FormatError(FormatError::Kind::truncated, "checkpoint missing");
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatError::Kind::malformed, where + ": corrupt record: " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(e.kind(), where + ": corrupt record: " + e.what());
    }
    if (rec.round != r || labeled != st.labeled || rec.labeled_count != st.labeled.size()) {
      throw FormatError(FormatError::Kind::malformed, where + ": record is inconsistent with earlier rounds");
    }
    std::vector<std::size_t> sorted_acq(acquired);
    std::sort(sorted_acq.begin(), sorted_acq.end());
    if (std::adjacent_find(sorted_acq.begin(), sorted_acq.end()) != sorted_acq.end() ||
        !std::includes(st.pool.begin(), st.pool.end(), sorted_acq.begin(), sorted_acq.end())) {
      throw FormatError(FormatError::Kind::malformed, where + ": acquired ids are not drawn from the pool");
    }
    rec.acquired = acquired;
    st.labeled = detail::set_plus(st.labeled, acquired);
    st.pool = detail::set_minus(st.pool, acquired);
    st.history.push_back(rec);
    st.round = r + 1;
    if (rec.final_round) {
      st.finished = true;
      st.stop_reason = rec.stop_reason;
    }
  }
  write_atomic(cfg.run_dir / "metrics.csv", detail::run_csv(cfg, st));

  const auto val_refs = detail::refs(ds, split.val);
  const double frac_den = static_cast<double>(split.train.size());
  while (!st.finished) {
    const int r = st.round;
    detail::check_partition(st, split);
    const auto dir = round_dir(cfg.run_dir, r);
    fs::create_directories(dir);

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seeds.model, {0x54524eULL, static_cast<std::uint64_t>(r)});
    std::optional<ModelState<float>> warm;
    if (cfg.warm_start && r > 0) warm = load_checkpoint(round_dir(cfg.run_dir, r - 1) / "checkpoint.ssck").state();
    const auto lab_refs = detail::refs(ds, st.labeled);
    const auto t0 = std::chrono::steady_clock::now();
    auto tr = train_round<float>(spec, cfg.seeds.model, lab_refs, val_refs, tc, warm ? &*warm : nullptr);
    const double train_wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RoundRecord rec;
    rec.round = r;
    rec.labeled_count = st.labeled.size();
    rec.labeled_frac = static_cast<double>(st.labeled.size()) / frac_den;
    rec.test = evaluate_split(tr.best, ds, split.test, cfg.train.loss_w);
    if (cfg.eval_val) rec.val = evaluate_split(tr.best, ds, split.val, cfg.train.loss_w);
    rec.train_wall_s = train_wall;
    rec.best_epoch = tr.best_epoch;
    rec.best_val_loss = tr.best_val_loss;

    if (st.pool.empty()) {
      rec.stop_reason = "pool-exhausted";
    } else if (cfg.stop == StopRule::max_labeled && st.labeled.size() >= cfg.max_labeled) {
      rec.stop_reason = "max-labeled";
    } else if (cfg.stop == StopRule::target_metric && rec.test.wmae_all <= cfg.target_wmae) {
      rec.stop_reason = "target-metric";
    }
    rec.final_round = !rec.stop_reason.empty();

    save_checkpoint(tr.best, dir / "checkpoint.ssck");
    io::write_file(dir / "labeled.csv", ids_csv("idx", st.labeled, false));
    io::write_file(dir / "train_log.csv", training_log_csv(tr.log, !cfg.deterministic));
    if (!rec.final_round) {
      std::size_t b = std::min(cfg.round_batch, st.pool.size());
      if (cfg.stop == StopRule::max_labeled) b = std::min(b, cfg.max_labeled - st.labeled.size());
      const auto ta = std::chrono::steady_clock::now();
      const auto acq = detail::acquire(cfg, ds, st, tr, b, derive_seed(cfg.seeds.acquisition, {0x414351ULL, static_cast<std::uint64_t>(r)}));
      rec.acq_wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - ta).count();
      for (std::size_t id : acq.selected) {
        if (!std::binary_search(st.pool.begin(), st.pool.end(), id)) throw Error("acquisition selected an id outside the pool");
      }
      rec.acquired = acq.selected;
      io::write_file(dir / "acquired.csv", ids_csv("rank,idx", acq.selected, true));
      io::write_file(dir / "scores.csv", scores_csv(st.pool, acq));
    }
    write_atomic(dir / "metrics.json", to_json(rec).dump(2) + "\n");

    st.labeled = detail::set_plus(st.labeled, rec.acquired);
    st.pool = detail::set_minus(st.pool, rec.acquired);
    st.history.push_back(rec);
    st.round = r + 1;
    if (rec.final_round) {
      st.finished = true;
      st.stop_reason = rec.stop_reason;
    }
    write_atomic(cfg.run_dir / "metrics.csv", detail::run_csv(cfg, st));
    if (hooks.on_round) hooks.on_round(cfg, rec);
  }
  return st;
}

inline ALConfig config_from_manifest(const std::filesystem::path& run_dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(run_dir / "run_manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::malformed, "run_manifest.json: " + std::string(e.what()));
  }
  ALConfig cfg;
  apply_json(cfg, m.at("config"));
  cfg.run_dir = run_dir;
  return cfg;
}

/// Continues the run recorded in `run_dir` with the configuration stored in
/// its manifest.
inline ALState resume(const std::filesystem::path& run_dir, const Dataset* preloaded = nullptr, const RunHooks& hooks = {}) {
  return run_active_learning(config_from_manifest(run_dir), preloaded, hooks);
}

struct MatrixCell {
  ALConfig cfg;
  bool ok = false;
  std::string error;
  std::exception_ptr exception;
  ALState state;
  std::vector<MetricsRow> rows;  ///< committed rounds, also for failed cells
};

struct MatrixResult {
  std::vector<MatrixCell> cells;
  std::vector<MetricsRow> rows;
};

/// Default run directory of a cell inside a matrix output directory.
inline std::filesystem::path cell_dir(const std::filesystem::path& out, const ALConfig& c) {
  return out / (std::string(to_string(c.arch)) + "_" + to_string(c.strategy) + "_s" + std::to_string(c.seeds.data));
}

/// Runs every cell (cells with an empty run_dir go under `out_dir`) and
/// writes combined_metrics.csv and summary.csv there. A failing cell is
/// recorded and the others continue. `parallel` cells run at once.
inline MatrixResult run_matrix(std::vector<ALConfig> cfgs, const std::filesystem::path& out_dir, const Dataset* preloaded = nullptr,
                               unsigned parallel = 1, const RunHooks& hooks = {}) {
  if (cfgs.empty()) throw ConfigError("run_matrix: no cells");
  for (const auto& c : cfgs) {
    if (!preloaded && c.dataset != cfgs.front().dataset) throw ConfigError("run_matrix: cells must share one dataset");
  }
  std::optional<Dataset> owned;
  if (!preloaded) {
    owned = load_dataset(cfgs.front().dataset, cfgs.front().checked_load);
    preloaded = &*owned;
  }
  std::filesystem::create_directories(out_dir);
  MatrixResult res;
  res.cells.resize(cfgs.size());
  std::atomic<std::size_t> next{0};
  std::mutex hook_mu;
  RunHooks locked;
  if (hooks.on_round) {
    locked.on_round = [&](const ALConfig& c, const RoundRecord& r) {
      std::lock_guard g(hook_mu);
      hooks.on_round(c, r);
    };
  }
  auto work = [&] {
    for (std::size_t i = next++; i < cfgs.size(); i = next++) {
      auto& cell = res.cells[i];
      cell.cfg = cfgs[i];
      if (cell.cfg.run_dir.empty()) cell.cfg.run_dir = cell_dir(out_dir, cell.cfg);
      try {
        cell.state = run_active_learning(cell.cfg, preloaded, locked);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
        cell.exception = std::current_exception();
      }
      if (cell.ok) {
        for (const auto& r : cell.state.history) cell.rows.push_back(make_row(cell.cfg, r));
      } else {
        try {
          cell.rows = parse_metrics_csv(io::read_file(cell.cfg.run_dir / "metrics.csv"));
        } catch (const std::exception&) {
          cell.rows.clear();
        }
      }
    }
  };
  parallel = std::max(1u, std::min<unsigned>(parallel, static_cast<unsigned>(cfgs.size())));
  if (parallel == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    for (unsigned t = 0; t < parallel; ++t) threads.emplace_back(work);
  }
  for (const auto& cell : res.cells) res.rows.insert(res.rows.end(), cell.rows.begin(), cell.rows.end());
  write_atomic(out_dir / "combined_metrics.csv", metrics_csv(res.rows));
  write_atomic(out_dir / "summary.csv", summary_csv(res.rows));
  return res;
}

}  // namespace dsal
