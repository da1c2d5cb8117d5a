#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "meet/config.hpp"
#include "meet/data.hpp"

namespace meet {

struct RunMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::size_t n_test = 0;
};

// Accuracy, per-class F1 (0 when precision+recall is 0) and their unweighted
// mean over all n_classes.
RunMetrics compute_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes);

// Splits the slot's windows with a seed-derived stratified split, fits the
// pipeline on the training side only, and scores the held-out side.
RunMetrics run_once(std::span<const RawWindow> windows, const std::vector<std::string>& columns, std::size_t n_classes,
                    Variant variant, const ExperimentConfig& cfg, std::uint64_t seed);

struct SweepCell {
  int slot = 0;
  Variant variant = Variant::full;
  std::size_t run_count = 0;  // successful runs aggregated
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population standard deviation
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
  bool failed = false;
  std::vector<std::string> errors;
  std::vector<RunMetrics> runs;
};

struct SweepOptions {
  std::vector<int> slots;
  std::vector<Variant> variants;
  std::size_t runs = 5;
  std::uint64_t base_seed = 0;
  std::size_t workers = 1;
  // Test hook: forces every run to use base_seed.
  bool same_seed_every_run = false;
};

// slots × variants × runs, run r seeded with base_seed + r. Cells come back
// in (slot, variant) order regardless of worker count. A failing run marks
// its cell failed; the sweep continues.
std::vector<SweepCell> sweep(const WindowArchive& archive, const ExperimentConfig& cfg, const SweepOptions& options);

// Population mean and standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);

std::string sweep_csv(const std::vector<SweepCell>& cells);
// One static line chart for accuracy or macro-F1 against slot hours 2..23.
std::string sweep_svg(const std::vector<SweepCell>& cells, bool f1);
// Writes sweep.csv, sweep_accuracy.svg, sweep_f1.svg (and failures.txt when needed).
void write_sweep_reports(const std::string& out_dir, const std::vector<SweepCell>& cells);

}  // namespace meet
