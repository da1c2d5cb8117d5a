#include <algorithm>
#include <climits>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "meet/data.hpp"
#include "meet/errors.hpp"
#include "meet/gbdt.hpp"
#include "meet/rng.hpp"

using namespace meet;

namespace {

PatientRecord record(std::vector<std::string> cols, std::vector<std::vector<double>> rows, std::string id = "p") {
  PatientRecord r;
  r.id = std::move(id);
  r.columns = std::move(cols);
  r.rows = std::move(rows);
  return r;
}

bool same_cells(const PatientRecord& a, const PatientRecord& b) {
  if (a.columns != b.columns || a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    for (std::size_t j = 0; j < a.rows[i].size(); ++j) {
      const double x = a.rows[i][j], y = b.rows[i][j];
      if (!(x == y || (std::isnan(x) && std::isnan(y)))) return false;
    }
  }
  return true;
}

std::vector<RawWindow> balanced_windows(std::size_t per_class, std::size_t classes) {
  std::vector<RawWindow> out;
  for (std::size_t i = 0; i < per_class * classes; ++i) {
    RawWindow w;
    w.patient_id = "p" + std::to_string(1000 + i);
    w.slot = 2;
    w.label = static_cast<int>(i % classes);
    w.d_in = 1;
    w.values = {static_cast<double>(i), 0.0};
    out.push_back(w);
  }
  return out;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("parse psv example") {
  auto r = parse_psv("HR|SBP\n80|120\n82|NaN", "x");
  CHECK(r.hours() == 2);
  CHECK(r.columns.size() == 2);
  CHECK(r.rows[0][1] == 120);
  CHECK(is_missing(r.rows[1][1]));
  CHECK(r.column_index("SBP") == 1);
  CHECK(r.column_index("Temp") == -1);
}

TEST_CASE("psv errors") {
  CHECK_THROWS_WITH_AS(parse_psv("HR|SBP\n"), doctest::Contains("no data rows"), FormatError);
  CHECK_THROWS_AS(parse_psv(""), FormatError);
  CHECK_THROWS_WITH_AS(parse_psv("HR|SBP\n1|2\n3\n"), doctest::Contains("line 3"), FormatError);
}

TEST_CASE("psv round trip on random tables") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cols = 1 + rng.below(6), rows = 1 + rng.below(10);
    std::vector<std::string> names;
    for (std::size_t c = 0; c < cols; ++c) names.push_back("c" + std::to_string(c));
    std::vector<std::vector<double>> data(rows, std::vector<double>(cols));
    for (auto& row : data)
      for (auto& v : row) v = rng.uniform() < 0.2 ? NAN : rng.normal() * std::pow(10.0, rng.uniform(-3, 4));
    auto r = record(names, data);
    auto back = parse_psv(serialize_psv(r));
    CHECK(same_cells(r, back));
    CHECK(serialize_psv(back) == serialize_psv(r));
  }
}

TEST_CASE("impute rules") {
  const std::vector<double> v{NAN, 5, NAN, 7};
  CHECK(impute(v, 1, 4, std::vector<double>{6.0}) == std::vector<double>{6, 5, 5, 7});
  const std::vector<double> full{1, 2, 3};
  CHECK(impute(full, 1, 3, std::vector<double>{9.0}) == full);
  const std::vector<double> none{NAN, NAN};
  CHECK(impute(none, 1, 2, std::vector<double>{NAN}) == std::vector<double>{0, 0});
}

TEST_CASE("z-scored training columns are standardized") {
  Rng rng(3);
  std::vector<RawWindow> train;
  for (int i = 0; i < 30; ++i) {
    RawWindow w;
    w.patient_id = std::to_string(i);
    w.slot = 5;
    w.d_in = 3;
    for (int j = 0; j < 15; ++j) w.values.push_back(rng.uniform() < 0.3 ? NAN : 50 + 10 * rng.normal());
    train.push_back(w);
  }
  auto p = Preprocessor::fit(train);
  auto set = p.transform_all(train);
  for (std::size_t f = 0; f < 3; ++f) {
    double m = 0, s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < set.size(); ++i)
      for (std::size_t t = 0; t < 5; ++t) {
        m += set.values[(i * 3 + f) * 5 + t];
        ++n;
      }
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < set.size(); ++i)
      for (std::size_t t = 0; t < 5; ++t) s += std::pow(set.values[(i * 3 + f) * 5 + t] - m, 2);
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(std::sqrt(s / static_cast<double>(n)) - 1.0) < 1e-10);
  }
  for (double v : set.values) CHECK(std::isfinite(v));
  ByteWriter w;
  p.serialize(w);
  ByteReader r(w.bytes());
  auto q = Preprocessor::deserialize(r);
  CHECK(q.means() == p.means());
  CHECK(q.stds() == p.stds());
}

TEST_CASE("label rules") {
  auto q = default_qsofa_rules();
  CHECK(q.n_classes == 4);
  auto r = record({"SBP", "Resp", "SepsisLabel"}, {{120, 18, 0}, {95, 24, 0}});
  CHECK(apply_label_rules(r, q) == 2);
  auto calm = record({"SBP", "Resp", "SepsisLabel"}, {{120, 18, 0}, {NAN, 20, 0}});
  CHECK(apply_label_rules(calm, q) == 0);
  CHECK(default_sofa_rules().n_classes == 3);
  CHECK_THROWS_AS(apply_label_rules(record({"HR"}, {{80}}), q), ConfigError);

  auto custom = parse_label_rules(
      "# three rules\n"
      "HR,>,100,1\n"
      "Temp,>=,38.5,2\n"
      "Lactate,>,2,1\n"
      "classmap,0:0;1:0;2:1;3+:2\n");
  CHECK(custom.n_classes == 3);
  auto hand = record({"HR", "Temp", "Lactate"}, {{90, 37.0, NAN}, {104, 38.5, 1.5}, {99, 37.2, 2.0}});
  // HR 104 > 100 (1) + Temp 38.5 >= 38.5 (2) + Lactate max 2.0 not > 2 (0) = 3 -> class 2
  CHECK(apply_label_rules(hand, custom) == 2);
  CHECK(custom.class_for(INT_MAX / 2) == 2);
  auto again = parse_label_rules(serialize_label_rules(custom));
  CHECK(again.rules.size() == 3);
  CHECK(again.n_classes == 3);
  CHECK_THROWS_AS(parse_label_rules("HR,>,100,1\nclassmap,0:0\n"), ConfigError);
  CHECK_THROWS_AS(parse_label_rules("HR,>,100,1\nSBP,<,90,1\nclassmap,0:0;1:1;2:2\n", "qsofa"), ConfigError);
}

TEST_CASE("windows") {
  std::vector<std::vector<double>> rows;
  for (int t = 0; t < 30; ++t) rows.push_back({static_cast<double>(t), 100.0 + t});
  auto r = record({"HR", "SBP"}, rows);
  auto w = make_windows(r, 5, 1, {"HR", "SBP"});
  REQUIRE(w);
  CHECK(w->values.size() == 10);
  CHECK(w->values[4] == 4);
  CHECK(w->values[5] == 100);
  auto shortrec = record({"HR"}, {{1}, {2}, {3}, {4}});
  CHECK_FALSE(make_windows(shortrec, 5, 0, {"HR"}));
  auto missing_col = make_windows(r, 3, 0, {"HR", "Temp"});
  CHECK(std::isnan(missing_col->values[3]));

  std::vector<PatientRecord> recs;
  std::vector<int> labels;
  for (int i = 0; i < 7; ++i) {
    std::vector<std::vector<double>> rr(static_cast<std::size_t>(1 + i), std::vector<double>{1.0});
    recs.push_back(record({"HR"}, rr, "id" + std::to_string(i)));
    labels.push_back(i % 2);
  }
  IngestReport rep;
  auto a = build_archive(recs, labels, {"HR"}, 2, "custom", {2, 5}, &rep);
  CHECK(rep.windows_per_slot[2] == 6);
  CHECK(rep.skipped_per_slot[2] == 1);
  CHECK(rep.windows_per_slot[5] == 3);
  CHECK(rep.patients == 7);
}

TEST_CASE("future rows never reach a window") {
  Rng rng(4);
  std::vector<std::vector<double>> rows(20, std::vector<double>(3));
  for (auto& row : rows)
    for (auto& v : row) v = rng.normal();
  auto r = record({"a", "b", "c"}, rows);
  auto z = r;
  for (std::size_t t = 6; t < z.rows.size(); ++t) std::fill(z.rows[t].begin(), z.rows[t].end(), 0.0);
  CHECK(make_windows(r, 6, 0, r.columns)->values == make_windows(z, 6, 0, z.columns)->values);
}

TEST_CASE("stratified split") {
  auto ws = balanced_windows(25, 4);
  auto s = stratified_split(ws, 0.8, 7);
  CHECK(s.train.size() == 80);
  CHECK(s.test.size() == 20);
  std::map<int, int> per;
  for (const auto& w : s.train) ++per[w.label];
  for (const auto& [c, n] : per) CHECK(std::abs(n - 20) <= 1);
  auto s2 = stratified_split(ws, 0.8, 7);
  CHECK(s2.train.size() == s.train.size());
  for (std::size_t i = 0; i < s.train.size(); ++i) CHECK(s.train[i].patient_id == s2.train[i].patient_id);

  // several windows per patient stay together
  std::vector<RawWindow> multi;
  for (int slot : {2, 3})
    for (auto w : balanced_windows(10, 2)) {
      w.slot = slot;
      w.values.resize(static_cast<std::size_t>(slot), 0.0);
      multi.push_back(w);
    }
  auto sm = stratified_split(multi, 0.7, 3);
  std::set<std::string> tr, te;
  for (const auto& w : sm.train) tr.insert(w.patient_id);
  for (const auto& w : sm.test) te.insert(w.patient_id);
  for (const auto& id : tr) CHECK(te.count(id) == 0);

  auto lonely = balanced_windows(5, 2);
  lonely.resize(6);  // class 1 keeps 3 patients, class 0 keeps 3
  lonely.push_back(lonely[0]);
  lonely.back().patient_id = "solo";
  lonely.back().label = 2;
  CHECK_THROWS(stratified_split(lonely, 0.8, 1));
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.n_per_class = 20;
  spec.n_classes = 3;
  auto a = synth_generate(spec, 5), b = synth_generate(spec, 5);
  REQUIRE(a.records.size() == 60);
  for (std::size_t i = 0; i < 60; ++i) CHECK(same_cells(a.records[i], b.records[i]));
  CHECK(a.labels == b.labels);
  auto shape = synth_motif_shape(3);
  CHECK(shape[1] == doctest::Approx(1.0));
}

TEST_CASE("strong motifs are separable from raw features") {
  SynthSpec spec;
  spec.n_per_class = 40;
  spec.n_classes = 3;
  spec.motif_strength = 10;
  spec.noise_sd = 0.1;
  auto ds = synth_generate(spec, 9);
  auto archive = build_archive(ds.records, ds.labels, ds.records[0].columns, 3, "synthetic", {16});
  auto split = stratified_split(archive.windows, 0.8, 1);
  auto prep = Preprocessor::fit(split.train);
  auto tr = prep.transform_all(split.train), te = prep.transform_all(split.test);
  GbdtParams p;
  p.rounds = 30;
  auto m = gbdt_fit(tr.values, tr.size(), 64, tr.labels, 3, p);
  auto pred = gbdt_predict(m, te.values, te.size());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < te.size(); ++i) ok += pred.classes[i] == te.labels[i];
  CHECK(static_cast<double>(ok) / static_cast<double>(te.size()) >= 0.95);
}

TEST_CASE("zero motif strength is near chance") {
  SynthSpec spec;
  spec.n_per_class = 60;
  spec.n_classes = 2;
  spec.motif_strength = 0;
  double mean_acc = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ds = synth_generate(spec, seed);
    auto archive = build_archive(ds.records, ds.labels, ds.records[0].columns, 2, "synthetic", {8});
    auto split = stratified_split(archive.windows, 0.7, seed);
    auto prep = Preprocessor::fit(split.train);
    auto tr = prep.transform_all(split.train), te = prep.transform_all(split.test);
    GbdtParams p;
    p.rounds = 20;
    auto m = gbdt_fit(tr.values, tr.size(), 32, tr.labels, 2, p);
    auto pred = gbdt_predict(m, te.values, te.size());
    std::size_t ok = 0;
    for (std::size_t i = 0; i < te.size(); ++i) ok += pred.classes[i] == te.labels[i];
    mean_acc += static_cast<double>(ok) / static_cast<double>(te.size()) / 5.0;
  }
  // 5 × 36 test windows: a 0.5-centred binomial mean stays within ±0.12 with overwhelming probability
  CHECK(std::abs(mean_acc - 0.5) < 0.12);
}

TEST_CASE("archive round trip") {
  SynthSpec spec;
  spec.n_per_class = 5;
  auto ds = synth_generate(spec, 1);
  ds.records[0].rows[1][2] = NAN;
  auto a = build_archive(ds.records, ds.labels, ds.records[0].columns, 2, "synthetic", {2, 3, 4});
  const auto bytes = encode_archive(a);
  auto b = decode_archive(bytes);
  CHECK(encode_archive(b) == bytes);
  CHECK(b.slots() == std::vector<int>{2, 3, 4});
  CHECK(b.for_slot(3).size() == 10);
  CHECK_THROWS_AS(decode_archive(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_archive("NOTANARCHIVE"), FormatError);
  const auto path = (std::filesystem::temp_directory_path() / "meet_archive_test.bin").string();
  save_archive(path, a);
  CHECK(encode_archive(load_archive(path)) == bytes);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
