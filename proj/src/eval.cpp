#include "meet/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "meet/errors.hpp"
#include "meet/pipeline.hpp"
#include "meet/rng.hpp"

namespace meet {

RunMetrics compute_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes) {
  if (predictions.size() != labels.size()) throw DimensionError("compute_metrics: length mismatch");
  if (labels.empty()) throw std::invalid_argument("compute_metrics: no samples");
  std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], l = labels[i];
    if (p < 0 || l < 0 || static_cast<std::size_t>(p) >= n_classes || static_cast<std::size_t>(l) >= n_classes) {
      throw std::out_of_range("compute_metrics: class index outside [0, n_classes)");
    }
    if (p == l) {
      ++correct;
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[l];
    }
  }
  RunMetrics m;
  m.n_test = labels.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  m.per_class_f1.resize(n_classes);
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double precision = tp[c] + fp[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]) : 0.0;
    m.per_class_f1[c] = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    sum += m.per_class_f1[c];
  }
  m.macro_f1 = sum / static_cast<double>(n_classes);
  return m;
}

RunMetrics run_once(std::span<const RawWindow> windows, const std::vector<std::string>& columns, std::size_t n_classes,
                    Variant variant, const ExperimentConfig& cfg, std::uint64_t seed) {
  if (windows.empty()) throw std::invalid_argument("run_once: no windows for this slot");
  const SplitResult split = stratified_split(windows, cfg.train_ratio, derive_seed(seed, "split"));
  TrainedPipeline pipeline = fit_pipeline(split.train, columns, n_classes, cfg, variant, seed);
  const GbdtPrediction pred = predict_pipeline(pipeline, split.test);
  std::vector<int> labels;
  labels.reserve(split.test.size());
  for (const auto& w : split.test) labels.push_back(w.label);
  return compute_metrics(pred.classes, labels, n_classes);
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return {m, std::sqrt(s / static_cast<double>(values.size()))};
}

std::vector<SweepCell> sweep(const WindowArchive& archive, const ExperimentConfig& cfg, const SweepOptions& options) {
  std::vector<SweepCell> cells;
  for (int slot : options.slots) {
    for (Variant v : options.variants) {
      SweepCell c;
      c.slot = slot;
      c.variant = v;
      cells.push_back(std::move(c));
    }
  }
  struct Job {
    std::size_t cell;
    std::size_t run;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t r = 0; r < options.runs; ++r) jobs.push_back({c, r});
  }
  std::vector<std::vector<RawWindow>> slot_windows(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) slot_windows[c] = archive.for_slot(cells[c].slot);

  struct Outcome {
    bool ok = false;
    RunMetrics metrics;
    std::string error;
  };
  std::vector<Outcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const auto& job = jobs[j];
      const std::uint64_t seed = options.same_seed_every_run ? options.base_seed : options.base_seed + job.run;
      try {
        outcomes[j].metrics = run_once(slot_windows[job.cell], archive.columns, archive.n_classes,
                                       cells[job.cell].variant, cfg, seed);
        outcomes[j].ok = true;
      } catch (const std::exception& e) {
        outcomes[j].error = e.what();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(options.workers, jobs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto& cell = cells[jobs[j].cell];
    if (outcomes[j].ok) {
      cell.runs.push_back(std::move(outcomes[j].metrics));
    } else {
      cell.failed = true;
      cell.errors.push_back("run " + std::to_string(jobs[j].run) + ": " + outcomes[j].error);
    }
  }
  for (auto& cell : cells) {
    std::vector<double> acc, f1;
    for (const auto& r : cell.runs) {
      acc.push_back(r.accuracy);
      f1.push_back(r.macro_f1);
    }
    cell.run_count = cell.runs.size();
    std::tie(cell.mean_accuracy, cell.std_accuracy) = mean_std(acc);
    std::tie(cell.mean_f1, cell.std_f1) = mean_std(f1);
  }
  return cells;
}

namespace {

std::string fixed6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string out = "slot,variant,run_count,mean_acc,std_acc,mean_f1,std_f1\n";
  for (const auto& c : cells) {
    out += std::to_string(c.slot) + "," + std::string(to_string(c.variant)) + "," + std::to_string(c.run_count) + "," +
           fixed6(c.mean_accuracy) + "," + fixed6(c.std_accuracy) + "," + fixed6(c.mean_f1) + "," + fixed6(c.std_f1) +
           "\n";
  }
  return out;
}

std::string sweep_svg(const std::vector<SweepCell>& cells, bool f1) {
  const double W = 640, H = 400, left = 70, right = 150, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double slot) { return left + (slot - 2.0) / 21.0 * pw; };
  auto sy = [&](double v) { return top + (1.0 - v) * ph; };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  const std::string metric = f1 ? "Macro-F1" : "Accuracy";

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << metric << " by observation window (mean over runs)</text>\n";
  // axes
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  for (int s = 2; s <= 23; ++s) {
    os << "<line x1=\"" << fixed2(sx(s)) << "\" y1=\"" << top + ph << "\" x2=\"" << fixed2(sx(s)) << "\" y2=\""
       << top + ph + 4 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fixed2(sx(s)) << "\" y=\"" << top + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << s << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    os << "<line x1=\"" << left - 4 << "\" y1=\"" << fixed2(sy(v)) << "\" x2=\"" << left << "\" y2=\"" << fixed2(sy(v))
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << fixed2(sy(v) + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fixed2(v) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">Observation window (hours)</text>\n";
  os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
     << "transform=\"rotate(-90 18 " << top + ph / 2 << ")\">" << metric << "</text>\n";

  std::vector<Variant> variants;
  for (const auto& c : cells) {
    if (std::find(variants.begin(), variants.end(), c.variant) == variants.end()) variants.push_back(c.variant);
  }
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    std::vector<std::pair<int, double>> pts;
    for (const auto& c : cells) {
      const double v = f1 ? c.mean_f1 : c.mean_accuracy;
      if (c.variant == variants[vi] && c.run_count > 0 && !std::isnan(v)) pts.emplace_back(c.slot, v);
    }
    std::sort(pts.begin(), pts.end());
    const char* color = colors[static_cast<std::size_t>(variants[vi]) % 4];
    if (!pts.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i) {
        os << (i ? " " : "") << fixed2(sx(pts[i].first)) << ',' << fixed2(sy(pts[i].second));
      }
      os << "\"/>\n";
      for (const auto& [s, v] : pts) {
        os << "<circle cx=\"" << fixed2(sx(s)) << "\" cy=\"" << fixed2(sy(v)) << "\" r=\"3\" fill=\"" << color
           << "\"/>\n";
      }
    }
    const double ly = top + 10 + 20.0 * static_cast<double>(vi);
    os << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 45 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << to_string(variants[vi]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_sweep_reports(const std::string& out_dir, const std::vector<SweepCell>& cells) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + (dir / name).string());
    out << text;
  };
  write("sweep.csv", sweep_csv(cells));
  write("sweep_accuracy.svg", sweep_svg(cells, false));
  write("sweep_f1.svg", sweep_svg(cells, true));
  std::string failures;
  for (const auto& c : cells) {
    for (const auto& e : c.errors) {
      failures += std::to_string(c.slot) + "," + std::string(to_string(c.variant)) + ": " + e + "\n";
    }
  }
  if (!failures.empty()) write("failures.txt", failures);
}

}  // namespace meet
