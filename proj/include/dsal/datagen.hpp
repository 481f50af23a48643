#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dsal/core_types.hpp"
#include "dsal/error.hpp"
#include "dsal/io.hpp"
#include "dsal/rng.hpp"
#include "dsal/solver.hpp"
#include "json.hpp"

namespace dsal {

enum class Split : std::uint8_t { train, val, test, unassigned };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "";
  }
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s.empty()) return Split::unassigned;
  throw FormatError(FormatError::Kind::malformed, "unknown split '" + std::string(s) + "'");
}

struct DatasetEntry {
  ScenarioParams params;
  FieldGrid input;
  FieldGrid target;
  double residual = 0.0;  ///< relative residual of the solve that produced `target`

  bool operator==(const DatasetEntry&) const = default;
};

/// Aligned collection of scenarios, rendered inputs and stationary targets.
///
/// Grid values are float32-representable so that the binary container
/// round-trips them exactly.
struct Dataset {
  int size = 0;
  PhysicsConfig physics;
  SolverConfig solver;
  std::uint64_t seed = 0;
  bool allow_overlap = false;
  std::vector<DatasetEntry> entries;
  std::vector<Split> splits;

  std::size_t n() const { return entries.size(); }

  std::vector<std::size_t> indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(i);
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

/// Counts per split; either given directly or derived from fractions.
struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t total() const { return train + val + test; }
  bool operator==(const SplitCounts&) const = default;
};

/// Draws one admissible scenario: centers uniform on [r, size-1-r]^2,
/// re-drawn until d >= 2r unless overlap is allowed, q1 = 1, q2 ~ U[0,1).
/// q2 is rounded to float32 so the rendered input stores it exactly.
inline ScenarioParams sample_scenario(Rng& rng, int size, bool allow_overlap = false, double radius = 5.0) {
  const double lo = radius;
  const double hi = static_cast<double>(size) - 1.0 - radius;
  if (!(hi >= lo)) throw ConfigError("sample_scenario: admissible region empty for this lattice size and radius");
  if (!allow_overlap && std::hypot(hi - lo, hi - lo) < 2.0 * radius) {
    throw ConfigError("sample_scenario: admissible region cannot host two non-overlapping disks");
  }
  ScenarioParams p;
  p.r = radius;
  p.q1 = 1.0;
  do {
    p.cx1 = rng.uniform(lo, hi);
    p.cy1 = rng.uniform(lo, hi);
    p.cx2 = rng.uniform(lo, hi);
    p.cy2 = rng.uniform(lo, hi);
  } while (!allow_overlap && p.d() < 2.0 * radius);
  p.q2 = static_cast<double>(static_cast<float>(rng.uniform01()));
  return p;
}

inline void round_to_float(FieldGrid& g) {
  for (double& v : g.values) v = static_cast<double>(static_cast<float>(v));
}

inline DatasetEntry generate_entry(std::uint64_t seed, std::size_t index, int size, const PhysicsConfig& physics,
                                   const SolverConfig& solver, bool allow_overlap) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(index)}));
  DatasetEntry e;
  e.params = sample_scenario(rng, size, allow_overlap);
  e.input = render_input(e.params, size, allow_overlap);
  auto solved = solve_steady_state(e.input, physics, solver);
  e.residual = solved.residual;
  e.target = std::move(solved.field);
  round_to_float(e.target);
  return e;
}

/// Generates `n` entries. Entry i draws from the stream derive_seed(seed, {i}),
/// so the result is independent of `parallelism` and of scheduling order.
inline Dataset generate_dataset(std::size_t n, int size, const PhysicsConfig& physics, const SolverConfig& solver,
                                std::uint64_t seed, unsigned parallelism = 1, bool allow_overlap = false) {
  if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  physics.validate();
  solver.validate();
  Dataset ds;
  ds.size = size;
  ds.physics = physics;
  ds.solver = solver;
  ds.seed = seed;
  ds.allow_overlap = allow_overlap;
  ds.entries.resize(n);
  ds.splits.assign(n, Split::unassigned);

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::optional<std::size_t> failed;
  std::string failure;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        ds.entries[i] = generate_entry(seed, i, size, physics, solver, allow_overlap);
      } catch (const SolverError& e) {
        std::lock_guard lk(err_mu);
        if (!failed || i < *failed) {
          failed = i;
          failure = e.what();
        }
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(parallelism, static_cast<unsigned>(n)));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (failed) throw GenerationError("entry " + std::to_string(*failed) + ": " + failure, *failed);
  return ds;
}

inline SplitCounts counts_from_fractions(std::size_t n, double train, double val, double test) {
  for (double f : {train, val, test})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  SplitCounts c;
  c.val = static_cast<std::size_t>(std::llround(val * static_cast<double>(n)));
  c.test = static_cast<std::size_t>(std::llround(test * static_cast<double>(n)));
  if (c.val + c.test > n) throw ConfigError("split fractions exceed dataset size");
  c.train = n - c.val - c.test;
  return c;
}

/// Deterministic shuffled assignment with exact per-split counts.
inline void split_dataset(Dataset& ds, const SplitCounts& counts, std::uint64_t seed) {
  if (counts.total() != ds.n()) {
    throw ConfigError("split counts (" + std::to_string(counts.total()) + ") do not match dataset size (" +
                      std::to_string(ds.n()) + ")");
  }
  std::vector<std::size_t> order(ds.n());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x53504c4954ULL}));
  rng.shuffle(std::span<std::size_t>(order));
  ds.splits.assign(ds.n(), Split::unassigned);
  std::size_t k = 0;
  for (; k < counts.train; ++k) ds.splits[order[k]] = Split::train;
  for (; k < counts.train + counts.val; ++k) ds.splits[order[k]] = Split::val;
  for (; k < counts.total(); ++k) ds.splits[order[k]] = Split::test;
}

inline void split_dataset(Dataset& ds, double train, double val, double test, std::uint64_t seed) {
  split_dataset(ds, counts_from_fractions(ds.n(), train, val, test), seed);
}

// ---------------------------------------------------------------------------
// Container: <dir>/manifest.json, inputs.f32, targets.f32, params.csv.
// Binary files: "SSDS", u32 version, u32 count, u32 height, u32 width, then
// count*height*width little-endian float32 values, row-major, entry-major.

inline constexpr char kDatasetMagic[4] = {'S', 'S', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr const char* kParamsHeader = "idx,cx1,cy1,cx2,cy2,q2,d,split";

namespace detail {

inline std::string encode_grids(const Dataset& ds, bool targets) {
  std::string out;
  const auto n = static_cast<std::uint32_t>(ds.n());
  out.reserve(20 + ds.n() * static_cast<std::size_t>(ds.size * ds.size) * 4);
  out.append(kDatasetMagic, 4);
  io::put_le<std::uint32_t>(out, kDatasetVersion);
  io::put_le<std::uint32_t>(out, n);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size));
  for (const auto& e : ds.entries) {
    for (double v : (targets ? e.target : e.input).values) io::put_le<float>(out, static_cast<float>(v));
  }
  return out;
}

inline std::vector<FieldGrid> decode_grids(const std::string& bytes, const std::string& name, std::size_t expect_n,
                                           int expect_size) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::malformed, name + ": bad magic bytes");
  }
  io::ByteReader rd(std::string_view(bytes).substr(4), name);
  const auto version = rd.get<std::uint32_t>();
  if (version != kDatasetVersion) throw FormatError(FormatError::Kind::version, name + ": unsupported version " + std::to_string(version));
  const auto n = rd.get<std::uint32_t>();
  const auto h = rd.get<std::uint32_t>();
  const auto w = rd.get<std::uint32_t>();
  if (n != expect_n || h != static_cast<std::uint32_t>(expect_size) || w != h) {
    throw FormatError(FormatError::Kind::malformed, name + ": header disagrees with manifest");
  }
  const std::size_t per = static_cast<std::size_t>(h) * w;
  if (rd.remaining() < per * n * 4) {
    throw FormatError(FormatError::Kind::truncated, name + ": header announces " + std::to_string(n) + " records but payload holds " +
                                                        std::to_string(rd.remaining() / (per * 4)));
  }
  if (rd.remaining() > per * n * 4) throw FormatError(FormatError::Kind::malformed, name + ": trailing bytes after payload");
  std::vector<FieldGrid> grids(n, FieldGrid(static_cast<int>(h), static_cast<int>(w)));
  for (auto& g : grids)
    for (auto& v : g.values) v = static_cast<double>(rd.get<float>());
  return grids;
}

inline double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError(FormatError::Kind::malformed, where + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline nlohmann::json residual_summary(const Dataset& ds) {
  double worst = 0.0, sum = 0.0;
  std::vector<double> all;
  all.reserve(ds.n());
  for (const auto& e : ds.entries) {
    worst = std::max(worst, e.residual);
    sum += e.residual;
    all.push_back(e.residual);
  }
  return {{"max", worst}, {"mean", ds.n() ? sum / static_cast<double>(ds.n()) : 0.0}, {"values", all}};
}

inline nlohmann::json solver_to_json(const SolverConfig& s) {
  return {{"mode", to_string(s.mode)}, {"tolerance", s.tolerance}, {"max_iterations", s.max_iterations}, {"method", to_string(s.method)}};
}

inline SolverConfig solver_from_json(const nlohmann::json& j) {
  SolverConfig s;
  s.mode = parse_source_mode(j.at("mode").get<std::string>());
  s.tolerance = j.at("tolerance").get<double>();
  s.max_iterations = j.at("max_iterations").get<std::size_t>();
  s.method = parse_solve_method(j.at("method").get<std::string>());
  return s;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  SplitCounts counts;
  for (auto s : ds.splits) {
    if (s == Split::train) ++counts.train;
    if (s == Split::val) ++counts.val;
    if (s == Split::test) ++counts.test;
  }
  nlohmann::json m = {
      {"format", "SSDS"},
      {"version", kDatasetVersion},
      {"n", ds.n()},
      {"size", ds.size},
      {"allow_overlap", ds.allow_overlap},
      {"physics", {{"D", ds.physics.D}, {"gamma", ds.physics.gamma}, {"diffusion_length", ds.physics.diffusion_length()}}},
      {"solver", solver_to_json(ds.solver)},
      {"seed", ds.seed},
      {"split_counts", {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}},
      {"residuals", residual_summary(ds)},
  };
  io::write_file(dir / "manifest.json", m.dump(2) + "\n");
  io::write_file(dir / "inputs.f32", detail::encode_grids(ds, false));
  io::write_file(dir / "targets.f32", detail::encode_grids(ds, true));
  std::string csv = std::string(kParamsHeader) + "\n";
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto& p = ds.entries[i].params;
    csv += std::to_string(i) + "," + io::fmt_double(p.cx1) + "," + io::fmt_double(p.cy1) + "," + io::fmt_double(p.cx2) + "," +
           io::fmt_double(p.cy2) + "," + io::fmt_double(p.q2) + "," + io::fmt_double(p.d()) + "," + to_string(ds.splits[i]) + "\n";
  }
  io::write_file(dir / "params.csv", csv);
}

/// Loads a container. With `checked`, every stored input is compared against
/// a fresh rasterization of its parameters.
inline Dataset load_dataset(const std::filesystem::path& dir, bool checked = true) {
  using K = FormatError::Kind;
  Dataset ds;
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::malformed, std::string("manifest.json: ") + e.what());
  }
  std::size_t n = 0;
  std::vector<double> residuals;
  try {
    if (m.at("format").get<std::string>() != "SSDS") throw FormatError(K::malformed, "manifest.json: not an SSDS container");
    const auto version = m.at("version").get<std::uint32_t>();
    if (version != kDatasetVersion) throw FormatError(K::version, "manifest.json: unsupported version " + std::to_string(version));
    n = m.at("n").get<std::size_t>();
    ds.size = m.at("size").get<int>();
    ds.allow_overlap = m.value("allow_overlap", false);
    ds.physics.D = m.at("physics").at("D").get<double>();
    ds.physics.gamma = m.at("physics").at("gamma").get<double>();
    ds.solver = solver_from_json(m.at("solver"));
    ds.seed = m.at("seed").get<std::uint64_t>();
    residuals = m.at("residuals").at("values").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::malformed, std::string("manifest.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(K::malformed, std::string("manifest.json: ") + e.what());
  }
  if (residuals.size() != n) throw FormatError(K::truncated, "manifest.json: residual list shorter than n");

  auto inputs = detail::decode_grids(io::read_file(dir / "inputs.f32"), "inputs.f32", n, ds.size);
  auto targets = detail::decode_grids(io::read_file(dir / "targets.f32"), "targets.f32", n, ds.size);

  const auto csv = io::read_file(dir / "params.csv");
  auto lines = io::split(csv, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines.front() != kParamsHeader) throw FormatError(K::malformed, "params.csv: bad header");
  if (lines.size() - 1 < n) {
    throw FormatError(K::truncated, "params.csv: expected " + std::to_string(n) + " records, found " + std::to_string(lines.size() - 1));
  }
  if (lines.size() - 1 > n) throw FormatError(K::malformed, "params.csv: more records than announced");

  ds.entries.resize(n);
  ds.splits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto where = "params.csv line " + std::to_string(i + 2);
    const auto f = io::split(lines[i + 1], ',');
    if (f.size() != 8) throw FormatError(K::malformed, where + ": expected 8 fields");
    if (f[0] != std::to_string(i)) throw FormatError(K::malformed, where + ": index out of order");
    auto& e = ds.entries[i];
    e.params.cx1 = detail::parse_double(f[1], where);
    e.params.cy1 = detail::parse_double(f[2], where);
    e.params.cx2 = detail::parse_double(f[3], where);
    e.params.cy2 = detail::parse_double(f[4], where);
    e.params.q2 = detail::parse_double(f[5], where);
    ds.splits[i] = parse_split(f[7]);
    e.input = std::move(inputs[i]);
    e.target = std::move(targets[i]);
    e.residual = residuals[i];
    if (checked) {
      FieldGrid expect;
      try {
        expect = render_input(e.params, ds.size, ds.allow_overlap);
      } catch (const ConfigError& err) {
        throw FormatError(K::malformed, where + ": " + err.what());
      }
      if (!(expect == e.input)) throw FormatError(K::malformed, where + ": stored input does not match its parameters");
    }
  }
  return ds;
}

}  // namespace dsal
