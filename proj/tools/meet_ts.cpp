// meet_ts: command-line front end for ingestion, training, sweeps and checks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meet/data.hpp"
#include "meet/errors.hpp"
#include "meet/eval.hpp"
#include "meet/gradcheck.hpp"
#include "meet/pipeline.hpp"
#include "meet/rng.hpp"

namespace fs = std::filesystem;
using namespace meet;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

// Thrown for usage problems that are not tied to a config field.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t default_workers() {
  if (const char* env = std::getenv("MEET_TS_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid MEET_TS_WORKERS=" << env << "\n";
  }
  return 1;
}

ExperimentConfig load_or_default(const std::string& path) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  cfg.validate();
  return cfg;
}

std::vector<std::string> psv_files_in(const std::string& dir) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".psv") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<RawWindow> slot_windows(const WindowArchive& archive, int slot) {
  auto w = archive.for_slot(slot);
  if (w.empty()) throw UsageError("archive has no windows for slot " + std::to_string(slot));
  return w;
}

// ---- ingest ----

struct IngestArgs {
  std::string data_dir, rules, scheme = "qsofa", out, report;
  std::string slots = "2-23";
};

int cmd_ingest(const IngestArgs& a) {
  const auto files = psv_files_in(a.data_dir);
  if (files.empty()) {
    std::cerr << "error: no PSV files in " << a.data_dir << "\n";
    return kExitUsage;
  }
  LabelRuleSet rules;
  if (!a.rules.empty()) {
    std::ifstream in(a.rules);
    if (!in) throw UsageError("cannot read rules file " + a.rules);
    std::stringstream ss;
    ss << in.rdbuf();
    rules = parse_label_rules(ss.str(), a.scheme);
  } else if (a.scheme == "qsofa") {
    rules = default_qsofa_rules();
  } else if (a.scheme == "sofa") {
    rules = default_sofa_rules();
  } else {
    throw ConfigError("scheme", "custom scheme requires --rules");
  }
  rules.validate();

  std::vector<PatientRecord> records;
  std::vector<int> labels;
  IngestReport report;
  for (const auto& f : files) {
    try {
      PatientRecord r = load_psv(f);
      const int label = rules.class_for(apply_label_rules(r, rules));
      records.push_back(std::move(r));
      labels.push_back(label);
    } catch (const std::exception& e) {
      std::cerr << "warning: " << f << ": " << e.what() << "\n";
      report.failed_files.push_back(fs::path(f).filename().string() + ": " + e.what());
    }
  }
  if (records.empty()) {
    std::cerr << "error: every PSV file failed to load\n";
    return kExitFailure;
  }
  // Feature columns: first record's header minus the label column.
  std::vector<std::string> columns;
  for (const auto& c : records.front().columns) {
    if (c != "SepsisLabel") columns.push_back(c);
  }
  const auto failed = report.failed_files;
  WindowArchive archive = build_archive(records, labels, columns, rules.n_classes, rules.scheme,
                                        parse_slot_list(a.slots), &report);
  report.failed_files = failed;
  save_archive(a.out, archive);
  const std::string text = report.to_text(rules.scheme);
  const std::string report_path = a.report.empty() ? a.out + ".report.txt" : a.report;
  write_file_bytes(report_path, text);
  std::cout << text;
  return 0;
}

// ---- synth ----

struct SynthArgs {
  SynthSpec spec;
  std::uint64_t seed = 0;
  std::string out, psv_dir, slots;
};

int cmd_synth(const SynthArgs& a) {
  const SynthDataset ds = synth_generate(a.spec, derive_seed(a.seed, "data"));
  if (!a.psv_dir.empty()) {
    fs::create_directories(a.psv_dir);
    for (const auto& r : ds.records) write_file_bytes((fs::path(a.psv_dir) / (r.id + ".psv")).string(), serialize_psv(r));
  }
  std::vector<int> slots;
  if (a.slots.empty()) {
    for (int s = 2; s <= std::min<int>(23, static_cast<int>(a.spec.hours)); ++s) slots.push_back(s);
  } else {
    slots = parse_slot_list(a.slots);
  }
  IngestReport report;
  WindowArchive archive =
      build_archive(ds.records, ds.labels, ds.records.front().columns, a.spec.n_classes, "synthetic", slots, &report);
  save_archive(a.out, archive);
  std::cout << report.to_text("synthetic");
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config, windows, variant = "full", out_checkpoint, history;
  int slot = 0;
  std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = load_or_default(a.config);
  if (a.seed >= 0) cfg.model.seed = static_cast<std::uint64_t>(a.seed);
  const Variant variant = parse_variant(a.variant);
  const WindowArchive archive = load_archive(a.windows);
  const auto windows = slot_windows(archive, a.slot);
  const SplitResult split = stratified_split(windows, cfg.train_ratio, derive_seed(cfg.model.seed, "split"));
  TrainedPipeline p = fit_pipeline(split.train, archive.columns, archive.n_classes, cfg, variant, cfg.model.seed,
                                   split.test);
  save_checkpoint(a.out_checkpoint, p);

  std::string csv = "epoch,l_mse,l_reg,l_pred,total,valid_acc\n";
  for (std::size_t e = 0; e < p.history.epochs.size(); ++e) {
    const auto& l = p.history.epochs[e];
    csv += std::to_string(e + 1) + "," + fmt17(l.l_mse) + "," + fmt17(l.l_reg) + "," + fmt17(l.l_pred) + "," +
           fmt17(l.total) + "," + fmt17(p.history.valid_accuracy[e]) + "\n";
    std::cerr << "epoch " << e + 1 << " total " << fmt(l.total, 6) << " valid_acc "
              << fmt(p.history.valid_accuracy[e], 4) << "\n";
  }
  write_file_bytes(a.history.empty() ? a.out_checkpoint + ".history.csv" : a.history, csv);

  const GbdtPrediction pred = predict_pipeline(p, split.test);
  std::vector<int> labels;
  for (const auto& w : split.test) labels.push_back(w.label);
  const RunMetrics m = compute_metrics(pred.classes, labels, archive.n_classes);
  std::cout << "slot " << a.slot << " variant " << to_string(variant) << " held-out accuracy " << fmt(m.accuracy, 6)
            << " macro_f1 " << fmt(m.macro_f1, 6) << " n_test " << m.n_test << "\n";
  return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string config, windows, variant = "full";
  int slot = 0;
  std::int64_t seed = -1;
};

int cmd_evaluate(const EvaluateArgs& a) {
  ExperimentConfig cfg = load_or_default(a.config);
  if (a.seed >= 0) cfg.model.seed = static_cast<std::uint64_t>(a.seed);
  const WindowArchive archive = load_archive(a.windows);
  const auto windows = slot_windows(archive, a.slot);
  const RunMetrics m =
      run_once(windows, archive.columns, archive.n_classes, parse_variant(a.variant), cfg, cfg.model.seed);
  std::cout << "accuracy," << fmt(m.accuracy, 6) << "\nmacro_f1," << fmt(m.macro_f1, 6) << "\n";
  for (std::size_t c = 0; c < m.per_class_f1.size(); ++c) {
    std::cout << "f1_class_" << c << "," << fmt(m.per_class_f1[c], 6) << "\n";
  }
  std::cout << "n_test," << m.n_test << "\n";
  return 0;
}

// ---- sweep / ablate ----

struct SweepArgs {
  std::string config, windows, variants, slots, out_dir;
  std::int64_t runs = -1;
  std::int64_t seed = -1;
  std::size_t workers = 1;
};

int finish_sweep(const std::vector<SweepCell>& cells, const std::string& out_dir) {
  write_sweep_reports(out_dir, cells);
  std::cout << sweep_csv(cells);
  bool any_failed = false;
  for (const auto& c : cells) {
    for (const auto& e : c.errors) std::cerr << "failed: slot " << c.slot << " " << to_string(c.variant) << " " << e << "\n";
    any_failed = any_failed || c.failed;
  }
  return any_failed ? kExitFailure : 0;
}

int cmd_sweep(const SweepArgs& a) {
  ExperimentConfig cfg = load_or_default(a.config);
  if (a.seed >= 0) cfg.model.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.variants.empty()) cfg.variants = parse_variant_list(a.variants);
  if (!a.slots.empty()) cfg.slots = parse_slot_list(a.slots);
  if (a.runs >= 0) cfg.runs = static_cast<std::size_t>(a.runs);
  cfg.workers = a.workers;
  cfg.validate();
  const WindowArchive archive = load_archive(a.windows);
  SweepOptions opts;
  opts.slots = cfg.slots.empty() ? archive.slots() : cfg.slots;
  opts.variants = cfg.variants;
  opts.runs = cfg.runs;
  opts.base_seed = cfg.model.seed;
  opts.workers = cfg.workers;
  return finish_sweep(sweep(archive, cfg, opts), a.out_dir);
}

struct AblateArgs {
  std::string config, windows, out_dir;
  int slot = 0;
  std::int64_t runs = -1;
  std::int64_t seed = -1;
  std::size_t workers = 1;
};

int cmd_ablate(const AblateArgs& a) {
  ExperimentConfig cfg = load_or_default(a.config);
  if (a.seed >= 0) cfg.model.seed = static_cast<std::uint64_t>(a.seed);
  if (a.runs >= 0) cfg.runs = static_cast<std::size_t>(a.runs);
  cfg.workers = a.workers;
  cfg.validate();
  const WindowArchive archive = load_archive(a.windows);
  SweepOptions opts;
  opts.slots = {a.slot};
  opts.variants = {Variant::full, Variant::no_mere, Variant::no_cdta, Variant::no_both};
  opts.runs = cfg.runs;
  opts.base_seed = cfg.model.seed;
  opts.workers = cfg.workers;
  const auto cells = sweep(archive, cfg, opts);
  fs::create_directories(a.out_dir);
  write_file_bytes((fs::path(a.out_dir) / "ablation.csv").string(), sweep_csv(cells));
  std::cout << "variant      accuracy            macro_f1\n";
  for (const auto& c : cells) {
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %.4f ± %.4f    %.4f ± %.4f%s\n", std::string(to_string(c.variant)).c_str(),
                  c.mean_accuracy, c.std_accuracy, c.mean_f1, c.std_f1, c.failed ? "  (failed runs)" : "");
    std::cout << line;
  }
  bool any_failed = false;
  for (const auto& c : cells) any_failed = any_failed || c.failed;
  return any_failed ? kExitFailure : 0;
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::string config, inject_fault;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  ModelConfig toy = gradcheck_toy_config();
  if (!a.config.empty()) toy = load_or_default(a.config).model;
  const auto checks = run_gradcheck_suite(toy, a.tolerance, a.inject_fault);
  bool ok = true;
  for (const auto& c : checks) {
    char line[160];
    std::snprintf(line, sizeof line, "%-28s max_rel_err %.3e  coords %5zu  %s\n", c.op.c_str(), c.max_rel_error,
                  c.coordinates, c.passed ? "PASS" : "FAIL");
    std::cout << line;
    ok = ok && c.passed;
  }
  if (!ok) {
    for (const auto& c : checks) {
      if (!c.passed) std::cerr << "gradient check failed: " << c.op << "\n";
    }
    return kExitFailure;
  }
  std::cout << "all " << checks.size() << " checks passed\n";
  return 0;
}

// ---- predict ----

struct PredictArgs {
  std::string checkpoint;
  std::vector<std::string> psv;
  int slot = 0;
};

int cmd_predict(const PredictArgs& a) {
  TrainedPipeline p = load_checkpoint(a.checkpoint);
  if (a.slot != 0 && a.slot != p.slot) {
    throw UsageError("checkpoint was trained for slot " + std::to_string(p.slot) + ", not " + std::to_string(a.slot));
  }
  std::vector<std::string> files;
  for (const auto& path : a.psv) {
    if (fs::is_directory(path)) {
      const auto inner = psv_files_in(path);
      files.insert(files.end(), inner.begin(), inner.end());
    } else {
      files.push_back(path);
    }
  }
  std::size_t emitted = 0;
  for (const auto& f : files) {
    std::optional<RawWindow> w;
    std::string id;
    try {
      const PatientRecord r = load_psv(f);
      id = r.id;
      w = make_windows(r, p.slot, 0, p.columns);
    } catch (const std::exception& e) {
      std::cerr << "warning: " << f << ": " << e.what() << "\n";
      continue;
    }
    if (!w) {
      std::cerr << "warning: " << id << ": record shorter than " << p.slot << " hours, skipped\n";
      continue;
    }
    const GbdtPrediction pred = predict_pipeline(p, std::span<const RawWindow>(&*w, 1));
    std::string line = id + "," + std::to_string(pred.classes[0]);
    for (double prob : pred.probabilities) line += "," + fmt(prob, 6);
    std::cout << line << "\n";
    ++emitted;
  }
  return emitted > 0 ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view temporal encoder with a tree-ensemble head for early sepsis classification"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Parse PSV records, label them and write a window archive");
  c_ingest->add_option("--data-dir", ingest.data_dir, "Directory of .psv files")->required();
  c_ingest->add_option("--rules", ingest.rules, "Label rule file (defaults to the scheme's built-in rules)");
  c_ingest->add_option("--scheme", ingest.scheme, "qsofa | sofa | custom")->capture_default_str();
  c_ingest->add_option("--out", ingest.out, "Output window archive")->required();
  c_ingest->add_option("--report", ingest.report, "Ingest report path (default <out>.report.txt)");
  c_ingest->add_option("--slots", ingest.slots, "Slot hours, e.g. 2-23")->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic planted-motif dataset as a window archive");
  c_synth->add_option("--out", synth.out, "Output window archive")->required();
  c_synth->add_option("--psv-dir", synth.psv_dir, "Also write one PSV file per record here");
  c_synth->add_option("--n-per-class", synth.spec.n_per_class)->capture_default_str();
  c_synth->add_option("--classes", synth.spec.n_classes)->capture_default_str();
  c_synth->add_option("--d-in", synth.spec.d_in)->capture_default_str();
  c_synth->add_option("--hours", synth.spec.hours)->capture_default_str();
  c_synth->add_option("--motif-strength", synth.spec.motif_strength)->capture_default_str();
  c_synth->add_option("--noise-sd", synth.spec.noise_sd)->capture_default_str();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--slots", synth.slots, "Slot hours (default 2..min(hours,23))");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train one pipeline at one slot and write a checkpoint");
  c_train->add_option("--config", train.config, "key = value config file");
  c_train->add_option("--windows", train.windows, "Window archive")->required();
  c_train->add_option("--slot", train.slot, "Slot hours")->required();
  c_train->add_option("--variant", train.variant, "full | no_mere | no_cdta | no_both")->capture_default_str();
  c_train->add_option("--seed", train.seed, "Overrides the config seed");
  c_train->add_option("--out-checkpoint", train.out_checkpoint)->required();
  c_train->add_option("--history", train.history, "Per-epoch history CSV (default <checkpoint>.history.csv)");

  EvaluateArgs evaluate;
  auto* c_eval = app.add_subcommand("evaluate", "One seeded train/test run at one slot; prints metrics");
  c_eval->add_option("--config", evaluate.config);
  c_eval->add_option("--windows", evaluate.windows)->required();
  c_eval->add_option("--slot", evaluate.slot)->required();
  c_eval->add_option("--variant", evaluate.variant)->capture_default_str();
  c_eval->add_option("--seed", evaluate.seed);

  SweepArgs sweep_args;
  sweep_args.workers = default_workers();
  auto* c_sweep = app.add_subcommand("sweep", "Slots × variants × runs sweep with CSV and SVG reports");
  c_sweep->add_option("--config", sweep_args.config);
  c_sweep->add_option("--windows", sweep_args.windows)->required();
  c_sweep->add_option("--variants", sweep_args.variants, "Comma list (default from config)");
  c_sweep->add_option("--slots", sweep_args.slots, "e.g. 2-23 (default: config, else every archive slot)");
  c_sweep->add_option("--runs", sweep_args.runs, "Runs per cell (default from config)");
  c_sweep->add_option("--seed", sweep_args.seed, "Base seed (default from config)");
  c_sweep->add_option("--workers", sweep_args.workers, "Parallel runs (default $MEET_TS_WORKERS or 1)")
      ->check(CLI::PositiveNumber);
  c_sweep->add_option("--out-dir", sweep_args.out_dir)->required();

  AblateArgs ablate;
  ablate.workers = default_workers();
  auto* c_ablate = app.add_subcommand("ablate", "All four variants at one slot");
  c_ablate->add_option("--config", ablate.config);
  c_ablate->add_option("--windows", ablate.windows)->required();
  c_ablate->add_option("--slot", ablate.slot)->required();
  c_ablate->add_option("--runs", ablate.runs);
  c_ablate->add_option("--seed", ablate.seed);
  c_ablate->add_option("--workers", ablate.workers)->check(CLI::PositiveNumber);
  c_ablate->add_option("--out-dir", ablate.out_dir)->required();

  GradcheckArgs gradcheck;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and the composed model");
  c_grad->add_option("--config", gradcheck.config, "Model shape to check instead of the built-in toy");
  c_grad->add_option("--tolerance", gradcheck.tolerance)->capture_default_str();
  c_grad->add_option("--inject-fault", gradcheck.inject_fault, "Corrupt one op's analytic gradient")
      ->group("");

  PredictArgs predict;
  auto* c_predict = app.add_subcommand("predict", "Score PSV records with a checkpoint");
  c_predict->add_option("--checkpoint", predict.checkpoint)->required();
  c_predict->add_option("--psv", predict.psv, "PSV file(s) or directories")->required();
  c_predict->add_option("--slot", predict.slot, "Must match the checkpoint slot (default: checkpoint's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_synth) return cmd_synth(synth);
    if (*c_train) return cmd_train(train);
    if (*c_eval) return cmd_evaluate(evaluate);
    if (*c_sweep) return cmd_sweep(sweep_args);
    if (*c_ablate) return cmd_ablate(ablate);
    if (*c_grad) return cmd_gradcheck(gradcheck);
    if (*c_predict) return cmd_predict(predict);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
