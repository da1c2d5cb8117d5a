// Acceptance checks. Prints one [PASS]/[FAIL]/[SKIP] line per criterion and
// exits non-zero when any check fails. Pass criterion numbers as arguments to
// run a subset.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "meet/cdta.hpp"
#include "meet/data.hpp"
#include "meet/eval.hpp"
#include "meet/gbdt.hpp"
#include "meet/gradcheck.hpp"
#include "meet/mere.hpp"
#include "meet/model.hpp"
#include "meet/ops.hpp"
#include "meet/pipeline.hpp"
#include "meet/rng.hpp"
#include "test_support.hpp"

#ifndef MEET_TS_BIN
#error "MEET_TS_BIN must point at the meet_ts executable"
#endif
#ifndef MEET_SOURCE_DIR
#error "MEET_SOURCE_DIR must point at the source tree"
#endif

using namespace meet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  enum Status { pass, fail, skip } status = fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = "\"" MEET_TS_BIN "\" " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  if (output) *output = out;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& name) : path(fs::temp_directory_path() / ("meet_accept_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

ExperimentConfig ablation_config() { return load_config(MEET_SOURCE_DIR "/configs/synth_ablation.cfg"); }

// Synthetic weak-early-motif archive shared by the ablation and early-signal checks.
WindowArchive ablation_archive() {
  SynthSpec spec;
  spec.n_per_class = 150;
  spec.n_classes = 3;
  spec.d_in = 4;
  spec.hours = 16;
  spec.motif_strength = 1.6;
  const auto ds = synth_generate(spec, derive_seed(1, "data"));
  std::vector<int> slots;
  for (int s = 2; s <= 16; ++s) slots.push_back(s);
  return build_archive(ds.records, ds.labels, ds.records.front().columns, spec.n_classes, "synthetic", slots);
}

// ---- 1 ----

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  std::string out;
  const int code = run_cli("gradcheck", &out);
  const double cli_seconds = seconds_since(t0);
  const auto checks = run_gradcheck_suite(gradcheck_toy_config());
  double worst = 0.0;
  std::string worst_op;
  bool composed = false;
  for (const auto& c : checks) {
    if (c.max_rel_error >= worst) {
      worst = c.max_rel_error;
      worst_op = c.op;
    }
    composed = composed || c.op == "model.full";
  }
  const bool ok = code == 0 && composed && worst < 1e-4 && cli_seconds < 60.0;
  return verdict(ok, fmt("%zu checks, worst %s %.2e, cli exit %d in %.2fs", checks.size(), worst_op.c_str(), worst,
                         code, cli_seconds));
}

// ---- 2 ----

// Two-token (or one-token) attention written out by hand: per head a 2-way
// softmax is a logistic of the score difference.
std::vector<double> attention_hand(const std::vector<double>& x, const std::vector<double>& wq,
                                   const std::vector<double>& wk, const std::vector<double>& wv, std::size_t B,
                                   std::size_t T, std::size_t d, std::size_t heads) {
  auto proj = [&](const std::vector<double>& w, std::size_t b, std::size_t t, std::size_t col) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += x[(b * T + t) * d + i] * w[i * d + col];
    return s;
  };
  const std::size_t dh = d / heads;
  std::vector<double> out(B * T * d, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      auto score = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t e = h * dh; e < (h + 1) * dh; ++e) s += proj(wq, b, i, e) * proj(wk, b, j, e);
        return s / std::sqrt(static_cast<double>(dh));
      };
      for (std::size_t i = 0; i < T; ++i) {
        double p_other = 0.0;
        if (T == 2) p_other = 1.0 / (1.0 + std::exp(score(i, i) - score(i, 1 - i)));
        for (std::size_t e = h * dh; e < (h + 1) * dh; ++e) {
          double v = (1.0 - p_other) * proj(wv, b, i, e);
          if (T == 2) v += p_other * proj(wv, b, 1 - i, e);
          out[(b * T + i) * d + e] = v;
        }
      }
    }
  }
  return out;
}

Outcome oracle_equivalence() {
  Rng rng(2024);
  double conv_err = 0.0, attn_err = 0.0, metric_err = 0.0, split_err = 0.0;
  std::size_t split_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // conv1d vs direct summation
    const std::size_t B = 1 + rng.below(3), C = 1 + rng.below(4), O = 1 + rng.below(4);
    const std::size_t k = 1 + 2 * rng.below(3), S = k + rng.below(8);
    const bool same = rng.below(2) == 0;
    auto x = testing::random_tensor({B, C, S}, rng), w = testing::random_tensor({O, C, k}, rng),
         b = testing::random_tensor({O}, rng);
    auto y = conv1d(x, w, b, same ? Padding::same : Padding::valid);
    const auto ref = testing::conv_oracle(std::vector<double>(x.data().begin(), x.data().end()),
                                          std::vector<double>(w.data().begin(), w.data().end()),
                                          std::vector<double>(b.data().begin(), b.data().end()), B, C, S, O, k, same);
    conv_err = std::max(conv_err, testing::max_abs_diff(y.data(), ref));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng.below(2), T = 1 + rng.below(2), heads = 1 + rng.below(2);
    const std::size_t d = heads * (1 + rng.below(3));
    auto x = testing::random_tensor({B, T, d}, rng), wq = testing::random_tensor({d, d}, rng),
         wk = testing::random_tensor({d, d}, rng), wv = testing::random_tensor({d, d}, rng);
    auto y = multihead_self_attention(x, wq, wk, wv, heads);
    auto vec = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
    const auto ref = attention_hand(vec(x), vec(wq), vec(wk), vec(wv), B, T, d, heads);
    attn_err = std::max(attn_err, testing::max_abs_diff(y.data(), ref));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + rng.below(4), n = 1 + rng.below(40);
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.below(K));
      truth[i] = static_cast<int>(rng.below(K));
    }
    const auto m = compute_metrics(pred, truth, K);
    const auto [acc, f1] = testing::confusion_metrics(pred, truth, K);
    metric_err = std::max({metric_err, std::abs(m.accuracy - acc), std::abs(m.macro_f1 - f1)});
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.below(12), d = 1 + rng.below(4), K = 2 + rng.below(2);
    std::vector<double> x(n * d);
    for (auto& v : x) v = static_cast<double>(rng.below(6)) + (trial % 2 ? rng.uniform() : 0.0);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i < K ? i : rng.below(K));
    GbdtParams p;
    p.rounds = 1;
    p.depth = 1;
    p.min_samples_leaf = 1;
    const auto model = gbdt_fit(x, n, d, y, K, p);
    for (std::size_t c = 0; c < K; ++c) {
      std::vector<double> target(n);
      for (std::size_t i = 0; i < n; ++i) target[i] = (y[i] == static_cast<int>(c) ? 1.0 : 0.0) - 1.0 / K;
      const auto oracle = testing::exhaustive_split(x, n, d, target, 1);
      const auto& root = model.rounds[0][c].nodes[0];
      if (!oracle.found) {
        split_mismatch += root.feature != -1;
        continue;
      }
      if (root.feature < 0 || static_cast<std::size_t>(root.feature) != oracle.feature) {
        ++split_mismatch;
        continue;
      }
      split_err = std::max(split_err, std::abs(root.threshold - oracle.threshold));
    }
  }
  const bool ok = conv_err <= 1e-8 && attn_err <= 1e-8 && metric_err <= 1e-8 && split_err <= 1e-8 &&
                  split_mismatch == 0;
  return verdict(ok, fmt("conv %.1e, attention %.1e, metrics %.1e, split threshold %.1e, split mismatches %zu",
                         conv_err, attn_err, metric_err, split_err, split_mismatch));
}

// ---- 3 ----

Outcome shape_contract() {
  Rng rng(33);
  std::size_t configs = 0, violations = 0;
  std::string first;
  auto expect = [&](const Tensor& t, const Shape& s, const char* what) {
    if (t.shape() != s) {
      ++violations;
      if (first.empty()) first = std::string(what) + " " + shape_str(t.shape()) + " vs " + shape_str(s);
    }
  };
  while (configs < 20) {
    ModelConfig c;
    c.d_in = 1 + rng.below(5);
    c.seq_len = 2 + rng.below(9);
    c.n_views = 1 + rng.below(4);
    c.view_dim = 1 + rng.below(5);
    c.k = 1 + 2 * rng.below(3);
    c.k1 = 3 + 2 * rng.below(3);
    c.k2 = 1 + 2 * rng.below((c.k1 - 1) / 2);
    c.pool_stride = 1 + rng.below(std::min<std::size_t>(3, c.seq_len));
    c.f_long = 1 + rng.below(6);
    c.heads = 1 + rng.below(3);
    c.f_short = c.heads * (1 + rng.below(3));
    c.d_proj = 1 + rng.below(6);
    c.n_classes = 2 + rng.below(3);
    c.seed = configs;
    c.validate();
    ++configs;
    const std::size_t B = 1 + rng.below(3), S = c.seq_len, p = c.pool_stride;
    auto x = testing::random_tensor({B, c.d_in, S}, rng);

    auto mere = MereLayer::init(c, c.seed);
    const Tensor views = mere_forward(mere, x, Mode::train);
    expect(views, {B, c.n_views, S, c.view_dim}, "H^ev");
    Rng init_rng(c.seed);
    const auto cdta = CdtaLayer::init(c.n_views, c.view_dim, c, init_rng);
    std::vector<Tensor> shorts;
    for (std::size_t v = 0; v < c.n_views; ++v) {
      const auto enc = cdta_encode_view(cdta, select(views, 1, v));
      expect(enc.c_long, {B, c.f_long, S / p}, "C_long");
      expect(enc.c_short, {B, c.f_short}, "C_short");
      shorts.push_back(enc.c_short);
    }
    const auto fused = cdta_fuse(cdta, cdta_attend(cdta, shorts));
    expect(fused.attended, {B, c.n_views * c.f_short}, "A");
    expect(fused.z, {B, c.d_proj}, "Z");

    Model m(c);
    const auto out = m.forward(x, Mode::train);
    expect(out.fused.attended, {B, c.n_views * c.f_short}, "model A");
    expect(out.fused.z, {B, c.d_proj}, "model Z");
    expect(out.logits, {B, c.n_classes}, "logits");
    expect(out.recon, {B, c.d_in, S}, "reconstruction");
  }
  return verdict(violations == 0,
                 fmt("%zu configs, %zu violations%s%s", configs, violations, first.empty() ? "" : ": ", first.c_str()));
}

// ---- 4 ----

Outcome ablation_ordering() {
  const auto t0 = Clock::now();
  const auto archive = ablation_archive();
  const auto cfg = ablation_config();
  SweepOptions opts;
  opts.slots = {8};
  opts.variants = {Variant::full, Variant::no_mere, Variant::no_cdta, Variant::no_both};
  opts.runs = 5;
  opts.base_seed = cfg.model.seed;
  const auto cells = sweep(archive, cfg, opts);
  double acc[4];
  bool failed = false;
  for (std::size_t i = 0; i < 4; ++i) {
    acc[i] = cells[i].mean_accuracy;
    failed = failed || cells[i].failed;
  }
  const double secs = seconds_since(t0);
  const bool in_band = acc[3] >= 0.70 && acc[3] <= 0.85;
  const bool ok = !failed && in_band && acc[0] >= acc[1] && acc[0] >= acc[2] &&
                  std::min(acc[1], acc[2]) >= acc[3] - 0.02 && secs < 600.0;
  return verdict(ok, fmt("slot 8, 5 seeds: full %.4f no_mere %.4f no_cdta %.4f no_both %.4f, %.0fs", acc[0], acc[1],
                         acc[2], acc[3], secs));
}

// ---- 5 ----

Outcome early_signal() {
  const auto archive = ablation_archive();
  const auto cfg = ablation_config();
  SweepOptions opts;
  opts.slots = {4, 16};  // ⌈16/4⌉ and the final hour
  opts.variants = {Variant::full};
  opts.runs = 5;
  opts.base_seed = cfg.model.seed;
  const auto cells = sweep(archive, cfg, opts);
  const double early = cells[0].mean_accuracy, late = cells[1].mean_accuracy;
  const bool ok = !cells[0].failed && !cells[1].failed && std::abs(early - late) <= 0.05;
  return verdict(ok, fmt("full at slot 4 %.4f vs slot 16 %.4f (gap %.4f)", early, late, std::abs(early - late)));
}

// ---- 6 ----

Outcome determinism() {
  ScratchDir d("determinism");
  std::ofstream(d / "run.cfg") << "n_views = 3\nview_dim = 4\nk = 3\nf_long = 8\nf_short = 4\nheads = 2\n"
                                  "d_proj = 8\nepochs = 4\ngbdt_rounds = 10\n";
  if (run_cli("synth --out " + d / "s.bin --n-per-class 20 --classes 3 --hours 10 --seed 5") != 0)
    return verdict(false, "synth failed");
  const std::string train = "train --config " + d / "run.cfg" + " --windows " + d / "s.bin --slot 6 --seed 11 ";
  if (run_cli(train + "--out-checkpoint " + d / "a.ckpt") != 0 || run_cli(train + "--out-checkpoint " + d / "b.ckpt") != 0)
    return verdict(false, "train failed");
  const bool ckpt_same = slurp(d / "a.ckpt") == slurp(d / "b.ckpt") && !slurp(d / "a.ckpt").empty();
  const bool hist_same = slurp(d / "a.ckpt.history.csv") == slurp(d / "b.ckpt.history.csv");
  const std::string sweep = "sweep --config " + d / "run.cfg" + " --windows " + d / "s.bin" +
                            " --slots 4,8 --variants full,no_mere,no_both --runs 2 --seed 3 ";
  if (run_cli(sweep + "--out-dir " + d / "o1") != 0 || run_cli(sweep + "--workers 2 --out-dir " + d / "o2") != 0)
    return verdict(false, "sweep failed");
  bool reports_same = true;
  for (const char* f : {"sweep.csv", "sweep_accuracy.svg", "sweep_f1.svg"}) {
    reports_same = reports_same && slurp(d.path / "o1" / f) == slurp(d.path / "o2" / f);
  }
  return verdict(ckpt_same && hist_same && reports_same,
                 fmt("checkpoint identical %d, history identical %d, sweep reports identical %d", ckpt_same, hist_same,
                     reports_same));
}

// ---- 7 ----

Outcome training_sanity() {
  SynthSpec spec;
  spec.n_per_class = 40;
  spec.n_classes = 2;
  spec.d_in = 3;
  spec.hours = 8;
  spec.motif_strength = 4.0;
  spec.noise_sd = 0.25;
  const auto ds = synth_generate(spec, derive_seed(7, "data"));
  const auto archive = build_archive(ds.records, ds.labels, ds.records.front().columns, 2, "synthetic", {8});
  const auto windows = archive.for_slot(8);
  // Separability witness: the hyperplane sum(f0) - sum(f1) = 0.
  std::size_t violations = 0;
  for (const auto& w : windows) {
    double s0 = 0, s1 = 0;
    for (std::size_t t = 0; t < 8; ++t) {
      s0 += w.values[0 * 8 + t];
      s1 += w.values[1 * 8 + t];
    }
    violations += (s0 - s1 > 0) != (w.label == 0);
  }
  if (violations) return verdict(false, fmt("set not separable by the witness (%zu violations)", violations));

  auto split = stratified_split(windows, 0.8, derive_seed(7, "split"));
  const auto prep = Preprocessor::fit(split.train);
  const auto train = prep.transform_all(split.train), valid = prep.transform_all(split.test);
  ExperimentConfig cfg;
  cfg.model.n_views = 2;
  cfg.model.view_dim = 4;
  cfg.model.k = 3;
  cfg.model.f_long = 8;
  cfg.model.f_short = 4;
  cfg.model.heads = 2;
  cfg.model.d_proj = 8;
  cfg.model.epochs = 50;
  cfg.model.batch_size = 16;
  cfg.model.learning_rate = 3e-3;
  Model model(resolve_model_config(cfg, 3, 8, 2, Variant::full, 7));
  const ModelConfig& mc = model.config();
  double worst = 0.0;
  std::size_t steps = 0;
  TrainOptions opts;
  opts.on_step = [&](std::size_t, const LossBreakdown& l) {
    ++steps;
    worst = std::max(worst, std::abs(l.total - (l.l_mse + mc.alpha * l.l_reg + mc.beta * l.l_pred)));
  };
  const auto hist = train_alternating(model, train, &valid, opts);
  std::size_t first_perfect = 0;
  for (std::size_t e = 0; e < hist.valid_accuracy.size(); ++e) {
    if (hist.valid_accuracy[e] == 1.0) {
      first_perfect = e + 1;
      break;
    }
  }
  const bool ok = first_perfect > 0 && first_perfect <= 50 && worst <= 1e-10 && steps > 0;
  return verdict(ok, fmt("valid acc 1.0 first at epoch %zu of %zu; additivity worst %.1e over %zu steps",
                         first_perfect, hist.valid_accuracy.size(), worst, steps));
}

// ---- 8 ----

Outcome leakage_guard() {
  SynthSpec spec;
  spec.n_per_class = 30;
  spec.n_classes = 3;
  spec.hours = 16;
  spec.motif_strength = 1.6;
  const auto ds = synth_generate(spec, derive_seed(8, "data"));
  const int t = 6;
  auto truncated = ds.records;
  for (auto& r : truncated) {
    for (std::size_t h = t; h < r.rows.size(); ++h) std::fill(r.rows[h].begin(), r.rows[h].end(), 0.0);
  }
  const auto cols = ds.records.front().columns;
  const auto a = build_archive(ds.records, ds.labels, cols, 3, "synthetic", {t});
  const auto b = build_archive(truncated, ds.labels, cols, 3, "synthetic", {t});
  const bool windows_same = encode_archive(a) == encode_archive(b);

  ExperimentConfig cfg;
  cfg.model.n_views = 3;
  cfg.model.view_dim = 4;
  cfg.model.f_long = 8;
  cfg.model.f_short = 4;
  cfg.model.heads = 2;
  cfg.model.d_proj = 8;
  cfg.model.epochs = 5;
  cfg.gbdt.rounds = 10;
  const auto wa = a.for_slot(t), wb = b.for_slot(t);
  auto pa = fit_pipeline(wa, cols, 3, cfg, Variant::full, 3);
  auto pb = fit_pipeline(wb, cols, 3, cfg, Variant::full, 3);
  const bool training_same = encode_checkpoint(pa) == encode_checkpoint(pb);
  const auto ma = run_once(wa, cols, 3, Variant::full, cfg, 4), mb = run_once(wb, cols, 3, Variant::full, cfg, 4);
  const bool metrics_same = ma.accuracy == mb.accuracy && ma.macro_f1 == mb.macro_f1 &&
                            ma.per_class_f1 == mb.per_class_f1 && ma.n_test == mb.n_test;
  return verdict(windows_same && training_same && metrics_same,
                 fmt("slot %d: windows identical %d, checkpoint identical %d, metrics identical %d (acc %.4f)", t,
                     windows_same, training_same, metrics_same, ma.accuracy));
}

// ---- 9 ----

Outcome physionet_pipeline() {
  const char* dir = std::getenv("MEET_PSV_DIR");
  if (!dir || !*dir) return {Outcome::skip, "set MEET_PSV_DIR to a directory of PhysioNet-2019 PSV files"};
  ScratchDir d("physionet");
  std::string out;
  if (run_cli("ingest --data-dir \"" + std::string(dir) + "\" --scheme qsofa --out " + d / "w.bin", &out) != 0)
    return verdict(false, "ingest failed: " + out.substr(0, 200));
  std::size_t patients = 0;
  if (auto pos = out.find("patients: "); pos != std::string::npos) patients = std::stoul(out.substr(pos + 10));
  const char* cfg_env = std::getenv("MEET_PSV_CONFIG");
  const std::string cfg = cfg_env && *cfg_env ? cfg_env : MEET_SOURCE_DIR "/configs/physionet.cfg";
  const int code = run_cli("sweep --config \"" + cfg + "\" --windows " + d / "w.bin" +
                           " --slots 2-23 --variants full --runs 5 --out-dir " + d / "out");
  const auto csv = slurp(d.path / "out" / "sweep.csv");
  const auto lines = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
  bool svg_ok = true;
  for (const char* f : {"sweep_accuracy.svg", "sweep_f1.svg"}) {
    const auto svg = slurp(d.path / "out" / f);
    svg_ok = svg_ok && svg.rfind("<svg", 0) == 0 && svg.find("</svg>") != std::string::npos;
  }
  return verdict(patients >= 10000 && code == 0 && lines == 23 && svg_ok,
                 fmt("%zu patients, sweep exit %d, %zu csv rows, svg ok %d", patients, code, lines - 1, svg_ok));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"oracle equivalence", oracle_equivalence},
      {"shape contract", shape_contract},
      {"ablation ordering", ablation_ordering},
      {"early-signal property", early_signal},
      {"determinism", determinism},
      {"training sanity", training_sanity},
      {"leakage guard", leakage_guard},
      {"real-data pipeline", physionet_pipeline},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::skip ? "SKIP" : "FAIL";
    failures += o.status == Outcome::fail;
    std::cout << "[" << tag << "] criterion " << n << " " << criteria[i].first << ": " << o.detail
              << fmt(" [%.1fs]", seconds_since(t0)) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
