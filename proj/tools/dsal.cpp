// Command-line front end: dataset generation, active-learning runs, plots.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dsal/dsal.hpp"

namespace fs = std::filesystem;
using namespace dsal;

namespace {

enum Exit { ok = 0, failure = 1, config = 2, solver = 3, divergence = 4 };

template <class T>
std::vector<T> parse_list(const std::string& s, T (*conv)(const std::string&)) {
  std::vector<T> out;
  for (const auto& part : io::split(s, ',')) {
    if (part.empty()) continue;
    out.push_back(conv(part));
  }
  return out;
}

std::uint64_t to_u64(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("not a non-negative integer: '" + s + "'");
  }
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

int classify(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const DivergenceError& x) {
    std::cerr << "error: training diverged: " << x.what() << "\n";
    return divergence;
  } catch (const GenerationError& x) {
    std::cerr << "error: solver failure at entry " << x.index() << ": " << x.what() << "\n";
    return solver;
  } catch (const SolverError& x) {
    std::cerr << "error: solver failure: " << x.what() << "\n";
    return solver;
  } catch (const ConfigError& x) {
    std::cerr << "error: " << x.what() << "\n";
    return config;
  } catch (const FormatError& x) {
    std::cerr << "error: " << x.what() << "\n";
    return config;
  } catch (const std::exception& x) {
    std::cerr << "error: " << x.what() << "\n";
    return failure;
  }
}

struct GenerateArgs {
  std::string profile = "desk";
  std::optional<std::size_t> n;
  std::optional<int> size;
  std::uint64_t seed = 0;
  std::string out;
  std::string mode = "fixed";
  std::string method = "cg";
  double tolerance = 1e-10;
  double D = 1.0, gamma = 1.0 / 400.0;
  std::optional<double> val_frac, test_frac;
  unsigned threads = 1;
  bool allow_overlap = false;
  bool quiet = false;
};

int cmd_generate(const GenerateArgs& a) {
  std::size_t n;
  int size;
  SplitCounts counts;
  if (a.profile == "desk") {
    n = 2600;
    size = 32;
    counts = {2000, 300, 300};
  } else if (a.profile == "full") {
    n = 20000;
    size = 100;
    counts = {16000, 2000, 2000};
  } else {
    throw ConfigError("unknown profile '" + a.profile + "' (expected desk or full)");
  }
  if (a.n) n = *a.n;
  if (a.size) size = *a.size;
  if (n < 1) throw ConfigError("--n must be >= 1");
  if (a.out.empty()) throw ConfigError("--out is required");
  PhysicsConfig phys{a.D, a.gamma};
  SolverConfig sc;
  sc.mode = parse_source_mode(a.mode);
  sc.method = parse_solve_method(a.method);
  sc.tolerance = a.tolerance;
  if (a.n || a.val_frac || a.test_frac) {
    const double vf = a.val_frac.value_or(0.1), tf = a.test_frac.value_or(0.1);
    counts = counts_from_fractions(n, 1.0 - vf - tf, vf, tf);
  }
  auto ds = generate_dataset(n, size, phys, sc, a.seed, a.threads, a.allow_overlap);
  split_dataset(ds, counts, a.seed);
  save_dataset(ds, a.out);
  const auto hs = report::parameter_histograms(ds);
  io::write_file(fs::path(a.out) / "param_hist.csv", report::histograms_csv(hs));
  if (!a.quiet) {
    std::cout << "wrote " << n << " scenarios (" << size << "x" << size << ", train " << counts.train << ", val " << counts.val
              << ", test " << counts.test << ") to " << a.out << "\n";
    std::cout << report::histograms_text(hs);
  }
  return ok;
}

struct AlArgs {
  std::string dataset, out, config_file;
  std::string archs, acqs, seeds, matrix;
  std::optional<int> epochs, batch_size;
  std::optional<std::size_t> initial, batch, max_labeled;
  std::optional<double> target, loss_w, lr;
  std::optional<unsigned> threads;
  unsigned parallel = 1;
  bool timing = false;
  bool quiet = false;
};

int cmd_al(const AlArgs& a) {
  ALConfig base;
  if (!a.config_file.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(a.config_file));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file: " + std::string(e.what()));
    }
    apply_json(base, j);
  }
  if (!a.dataset.empty()) base.dataset = a.dataset;
  if (base.dataset.empty()) throw ConfigError("--dataset is required");
  if (a.out.empty()) throw ConfigError("--out is required");
  if (a.epochs) base.train.epochs = *a.epochs;
  if (a.batch_size) base.train.batch_size = *a.batch_size;
  if (a.initial) base.initial_labeled = *a.initial;
  if (a.batch) base.round_batch = *a.batch;
  if (a.max_labeled) {
    base.stop = StopRule::max_labeled;
    base.max_labeled = *a.max_labeled;
  }
  if (a.target) {
    base.stop = StopRule::target_metric;
    base.target_wmae = *a.target;
  }
  if (a.loss_w) base.train.loss_w = *a.loss_w;
  if (a.lr) base.train.optimizer.learning_rate = *a.lr;
  if (a.threads) base.threads = *a.threads;
  if (a.timing) base.deterministic = false;

  std::vector<std::pair<Arch, Strategy>> cells;
  if (!a.matrix.empty()) {
    if (a.matrix != "full") throw ConfigError("unknown matrix '" + a.matrix + "' (expected full)");
    for (auto s : {Strategy::random, Strategy::diversity, Strategy::tod}) cells.push_back({Arch::unet, s});
    for (auto s : {Strategy::random, Strategy::diversity, Strategy::tod, Strategy::entropy}) cells.push_back({Arch::cnn_autoencoder, s});
  } else {
    const auto archs = a.archs.empty() ? std::vector<Arch>{base.arch} : parse_list<Arch>(a.archs, nn::parse_arch);
    const auto acqs = a.acqs.empty() ? std::vector<Strategy>{base.strategy} : parse_list<Strategy>(a.acqs, parse_strategy);
    for (auto ar : archs)
      for (auto s : acqs) {
        require_supported(ar, s);
        cells.push_back({ar, s});
      }
  }
  const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{base.seeds.data} : parse_list<std::uint64_t>(a.seeds, to_u64);
  if (seeds.empty()) throw ConfigError("--seeds is empty");

  std::vector<ALConfig> cfgs;
  for (const auto& [ar, s] : cells) {
    for (auto seed : seeds) {
      ALConfig c = base;
      c.arch = ar;
      c.strategy = s;
      if (c.spec && c.spec->arch != ar) c.spec.reset();
      if (!a.seeds.empty()) c.seeds = ALSeeds::from(seed);
      c.run_dir.clear();
      c.validate();
      cfgs.push_back(std::move(c));
    }
  }
  const auto ds = load_dataset(base.dataset, base.checked_load);
  RunHooks hooks;
  if (!a.quiet) {
    hooks.on_round = [](const ALConfig& c, const RoundRecord& r) {
      std::printf("%s/%s seed %llu round %d: labeled %zu (%.1f%%) test wmae %.6g%s\n", to_string(c.arch), to_string(c.strategy),
                  static_cast<unsigned long long>(c.seeds.data), r.round, r.labeled_count, 100.0 * r.labeled_frac, r.test.wmae_all,
                  r.final_round ? (" [stop: " + r.stop_reason + "]").c_str() : "");
      std::fflush(stdout);
    };
  }
  const auto res = run_matrix(cfgs, a.out, &ds, a.parallel, hooks);
  int code = ok;
  for (const auto& cell : res.cells) {
    if (cell.ok) continue;
    std::cerr << "cell " << to_string(cell.cfg.arch) << "/" << to_string(cell.cfg.strategy) << " seed " << cell.cfg.seeds.data
              << " failed (partial results kept in " << cell.cfg.run_dir.string() << ")\n";
    const int c = classify(cell.exception);
    if (code == ok || c == divergence) code = c;
  }
  if (!a.quiet) std::cout << "combined metrics: " << (fs::path(a.out) / "combined_metrics.csv").string() << "\n";
  return code;
}

int cmd_resume(const std::string& run, bool quiet) {
  RunHooks hooks;
  if (!quiet) {
    hooks.on_round = [](const ALConfig&, const RoundRecord& r) {
      std::printf("round %d: labeled %zu test wmae %.6g\n", r.round, r.labeled_count, r.test.wmae_all);
      std::fflush(stdout);
    };
  }
  const auto st = resume(run, nullptr, hooks);
  if (!quiet) std::cout << "run complete after " << st.round << " rounds (" << st.stop_reason << ")\n";
  return ok;
}

struct PlotArgs {
  std::vector<std::string> csvs;
  std::string out;
  std::string metric = "wmae_all";
  bool linear = false;
  bool regions = false;
  std::string dataset, checkpoint, samples;
  std::optional<double> error_range;
  std::string title;
};

int cmd_plot(const PlotArgs& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(a.out);
  int written = 0;
  if (!a.csvs.empty()) {
    std::vector<MetricsRow> rows;
    for (const auto& f : a.csvs) {
      auto r = parse_metrics_csv(io::read_file(f), f);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    std::vector<std::string> metrics{a.metric};
    if (a.regions)
      for (const char* m : kMetricNames)
        if (m != a.metric) metrics.emplace_back(m);
    for (const auto& m : metrics) {
      const auto cr = report::build_series(rows, m);
      for (const auto& w : cr.warnings) std::cerr << "warning: " << w << "\n";
      const auto path = fs::path(a.out) / ("curve_" + m + ".svg");
      io::write_file(path, report::learning_curve_svg(cr, m, !a.linear, a.title));
      std::cout << "wrote " << path.string() << "\n";
      ++written;
    }
  }
  if (!a.checkpoint.empty()) {
    if (a.dataset.empty()) throw ConfigError("--dataset is required with --checkpoint");
    const auto ds = load_dataset(a.dataset, false);
    auto model = load_checkpoint(a.checkpoint);
    std::vector<std::size_t> ids;
    if (a.samples.empty()) {
      const auto test = ds.indices_of(Split::test);
      ids.assign(test.begin(), test.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(3, test.size())));
    } else {
      ids = parse_list<std::size_t>(a.samples, to_size);
    }
    const double range = a.error_range.value_or(report::default_error_range(model.spec().arch));
    for (std::size_t i : ids) {
      if (i >= ds.n()) throw ConfigError("sample index " + std::to_string(i) + " out of range");
      const auto& e = ds.entries[i];
      const auto pred = predict_one(model, e.input);
      const auto path = fs::path(a.out) / ("error_map_" + std::to_string(i) + ".svg");
      io::write_file(path, report::error_map_svg(e.input, e.target, pred, model.spec().arch, range, "sample " + std::to_string(i)));
      std::cout << "wrote " << path.string() << "\n";
      ++written;
    }
  }
  if (written == 0) throw ConfigError("nothing to plot (give --csv and/or --checkpoint)");
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate active-learning toolkit for steady-state diffusion fields"};
  app.require_subcommand(1);

  GenerateArgs g;
  auto* gen = app.add_subcommand("generate", "Simulate a dataset of two-source scenarios");
  gen->add_option("--profile", g.profile, "Preset: desk (2600 x 32^2, 2000/300/300) or full (20000 x 100^2, 16000/2000/2000)")
      ->capture_default_str();
  gen->add_option("--n", g.n, "Number of scenarios (overrides the profile)");
  gen->add_option("--size", g.size, "Lattice side length (overrides the profile)");
  gen->add_option("--seed", g.seed, "Master seed")->capture_default_str();
  gen->add_option("--out", g.out, "Output directory")->required();
  gen->add_option("--mode", g.mode, "Source treatment: fixed or flux")->capture_default_str();
  gen->add_option("--method", g.method, "Linear solver: cg or direct")->capture_default_str();
  gen->add_option("--tolerance", g.tolerance, "Relative residual tolerance")->capture_default_str();
  gen->add_option("--D", g.D, "Diffusion coefficient")->capture_default_str();
  gen->add_option("--gamma", g.gamma, "Decay rate")->capture_default_str();
  gen->add_option("--val-frac", g.val_frac, "Validation fraction (default 0.1 unless the profile preset applies)");
  gen->add_option("--test-frac", g.test_frac, "Test fraction (default 0.1 unless the profile preset applies)");
  gen->add_option("--threads", g.threads, "Worker threads")->capture_default_str();
  gen->add_flag("--allow-overlap", g.allow_overlap, "Allow overlapping source disks");
  gen->add_flag("--quiet", g.quiet, "No summary output");

  AlArgs al;
  auto* alc = app.add_subcommand("al", "Run active-learning experiments");
  alc->add_option("--dataset", al.dataset, "Dataset directory");
  alc->add_option("--out", al.out, "Output directory (one run directory per cell)")->required();
  alc->add_option("--config", al.config_file, "JSON config; flags override it");
  alc->add_option("--arch", al.archs, "unet, cnn, or a comma list");
  alc->add_option("--acq", al.acqs, "random, entropy, tod, trueloss, diversity, or a comma list");
  alc->add_option("--seeds", al.seeds, "Comma-separated seeds");
  alc->add_option("--matrix", al.matrix, "Named cell set: full (unet x3 + cnn x4)");
  alc->add_option("--epochs", al.epochs, "Training epochs per round");
  alc->add_option("--batch-size", al.batch_size, "Mini-batch size");
  alc->add_option("--initial", al.initial, "Initial labeled count");
  alc->add_option("--round-batch", al.batch, "Samples acquired per round");
  alc->add_option("--max-labeled", al.max_labeled, "Stop once this many samples are labeled");
  alc->add_option("--target", al.target, "Stop once test wmae_all reaches this value");
  alc->add_option("--loss-w", al.loss_w, "Loss weight scale w");
  alc->add_option("--lr", al.lr, "Learning rate");
  alc->add_option("--threads", al.threads, "Scoring threads per run");
  alc->add_option("--parallel", al.parallel, "Cells run concurrently")->capture_default_str();
  alc->add_flag("--timing", al.timing, "Record wall-clock columns (CSV no longer byte-reproducible)");
  alc->add_flag("--quiet", al.quiet, "No progress output");

  std::string resume_dir;
  bool resume_quiet = false;
  auto* res = app.add_subcommand("resume", "Continue an interrupted run directory");
  res->add_option("run", resume_dir, "Run directory")->required();
  res->add_flag("--quiet", resume_quiet, "No progress output");

  PlotArgs pl;
  auto* plot = app.add_subcommand("plot", "Learning curves and error maps as SVG");
  plot->add_option("--csv", pl.csvs, "Metrics CSV (repeatable)");
  plot->add_option("--out", pl.out, "Output directory")->required();
  plot->add_option("--metric", pl.metric, "Metric column for the main chart")->capture_default_str();
  plot->add_flag("--linear", pl.linear, "Linear y axis (default is log scale)");
  plot->add_flag("--regions", pl.regions, "Also chart every region metric");
  plot->add_option("--title", pl.title, "Chart title");
  plot->add_option("--dataset", pl.dataset, "Dataset for error maps");
  plot->add_option("--checkpoint", pl.checkpoint, "Checkpoint for error maps");
  plot->add_option("--samples", pl.samples, "Comma-separated dataset indices (default: first 3 test samples)");
  plot->add_option("--error-range", pl.error_range, "Upper end of the error color scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : config;
  }

  try {
    if (*gen) return cmd_generate(g);
    if (*alc) return cmd_al(al);
    if (*res) return cmd_resume(resume_dir, resume_quiet);
    if (*plot) return cmd_plot(pl);
  } catch (...) {
    return classify(std::current_exception());
  }
  return ok;
}
