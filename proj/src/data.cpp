#include "meet/data.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>

#include "meet/errors.hpp"
#include "meet/rng.hpp"

namespace meet {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_cell(const std::string& cell, int line) {
  if (cell == "NaN" || cell == "nan" || cell.empty()) return kMissing;
  double v = 0.0;
  auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || p != cell.data() + cell.size()) {
    throw FormatError("line " + std::to_string(line) + ": cannot parse value '" + cell + "'");
  }
  return v;
}

std::string format_cell(double v) {
  if (is_missing(v)) return "NaN";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

bool is_missing(double v) { return std::isnan(v); }

int PatientRecord::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  return -1;
}

PatientRecord parse_psv(std::string_view text, std::string id) {
  PatientRecord rec;
  rec.id = std::move(id);
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split(line, '|');
    if (!have_header) {
      rec.columns = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != rec.columns.size()) {
      throw FormatError("line " + std::to_string(lineno) + ": expected " + std::to_string(rec.columns.size()) +
                        " fields, found " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_cell(c, lineno));
    rec.rows.push_back(std::move(row));
  }
  if (!have_header) throw FormatError("empty file");
  if (rec.rows.empty()) throw FormatError("no data rows");
  return rec;
}

std::string serialize_psv(const PatientRecord& record) {
  std::string out;
  for (std::size_t i = 0; i < record.columns.size(); ++i) {
    if (i) out += '|';
    out += record.columns[i];
  }
  out += '\n';
  for (const auto& row : record.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += '|';
      out += format_cell(row[i]);
    }
    out += '\n';
  }
  return out;
}

PatientRecord load_psv(const std::string& path) {
  std::string text = read_file_bytes(path);
  try {
    return parse_psv(text, std::filesystem::path(path).stem().string());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// ---- label rules ----

namespace {

Comparator parse_comparator(const std::string& s) {
  if (s == "<=") return Comparator::le;
  if (s == "<") return Comparator::lt;
  if (s == ">=") return Comparator::ge;
  if (s == ">") return Comparator::gt;
  if (s == "==") return Comparator::eq;
  throw ConfigError("comparator", "unknown comparator '" + s + "'");
}

const char* comparator_str(Comparator c) {
  switch (c) {
    case Comparator::le: return "<=";
    case Comparator::lt: return "<";
    case Comparator::ge: return ">=";
    case Comparator::gt: return ">";
    case Comparator::eq: return "==";
  }
  return "==";
}

bool compare(double v, Comparator c, double t) {
  switch (c) {
    case Comparator::le: return v <= t;
    case Comparator::lt: return v < t;
    case Comparator::ge: return v >= t;
    case Comparator::gt: return v > t;
    case Comparator::eq: return v == t;
  }
  return false;
}

}  // namespace

int LabelRuleSet::class_for(int points) const {
  for (const auto& e : class_map) {
    if (points >= e.min_points && points <= e.max_points) return e.cls;
  }
  throw ConfigError("classmap", "no class for point total " + std::to_string(points));
}

void LabelRuleSet::validate() const {
  if (class_map.empty()) throw ConfigError("classmap", "missing classmap line");
  int max_cls = -1;
  for (const auto& e : class_map) {
    if (e.cls < 0) throw ConfigError("classmap", "negative class index");
    max_cls = std::max(max_cls, e.cls);
  }
  if (n_classes != static_cast<std::size_t>(max_cls + 1)) {
    throw ConfigError("classmap", "class indices must cover 0.." + std::to_string(n_classes - 1));
  }
  std::set<int> seen_classes;
  for (const auto& e : class_map) seen_classes.insert(e.cls);
  if (seen_classes.size() != n_classes) throw ConfigError("classmap", "class indices must be contiguous from 0");
  if (scheme == "qsofa" && n_classes != 4) throw ConfigError("classmap", "qsofa scheme requires 4 classes");
  if (scheme == "sofa" && n_classes != 3) throw ConfigError("classmap", "sofa scheme requires 3 classes");
  // Attainable totals are the subset sums of rule points.
  std::set<int> sums{0};
  for (const auto& r : rules) {
    std::set<int> next = sums;
    for (int s : sums) next.insert(s + r.points);
    sums = std::move(next);
  }
  for (int s : sums) class_for(s);
}

LabelRuleSet parse_label_rules(std::string_view text, std::string scheme) {
  LabelRuleSet set;
  set.scheme = std::move(scheme);
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  int max_cls = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    const std::string where = "rules line " + std::to_string(lineno);
    if (fields[0] == "classmap") {
      if (fields.size() != 2) throw ConfigError(where, "expected classmap,<points>:<class>;...");
      for (const auto& entry : split(fields[1], ';')) {
        if (entry.empty()) continue;
        const auto colon = entry.find(':');
        if (colon == std::string::npos) throw ConfigError(where, "bad classmap entry '" + entry + "'");
        std::string pts = trim(entry.substr(0, colon));
        bool open = !pts.empty() && pts.back() == '+';
        if (open) pts.pop_back();
        try {
          const int p = std::stoi(pts);
          const int c = std::stoi(entry.substr(colon + 1));
          set.class_map.push_back({p, open ? INT_MAX : p, c});
          max_cls = std::max(max_cls, c);
        } catch (const std::exception&) {
          throw ConfigError(where, "bad classmap entry '" + entry + "'");
        }
      }
      continue;
    }
    if (fields.size() != 4) throw ConfigError(where, "expected feature,comparator,threshold,points");
    LabelRule r;
    r.feature = fields[0];
    r.comparator = parse_comparator(fields[1]);
    try {
      r.threshold = std::stod(fields[2]);
      r.points = std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw ConfigError(where, "bad threshold or points");
    }
    if (r.points < 0) throw ConfigError(where, "points must be non-negative");
    set.rules.push_back(std::move(r));
  }
  set.n_classes = static_cast<std::size_t>(max_cls + 1);
  set.validate();
  return set;
}

std::string serialize_label_rules(const LabelRuleSet& rules) {
  std::ostringstream os;
  for (const auto& r : rules.rules) {
    os << r.feature << ',' << comparator_str(r.comparator) << ',' << r.threshold << ',' << r.points << '\n';
  }
  os << "classmap,";
  for (std::size_t i = 0; i < rules.class_map.size(); ++i) {
    const auto& e = rules.class_map[i];
    os << (i ? ";" : "") << e.min_points << (e.max_points == INT_MAX ? "+" : "") << ':' << e.cls;
  }
  os << '\n';
  return os.str();
}

LabelRuleSet default_qsofa_rules() {
  return parse_label_rules(
      "SBP,<=,100,1\n"
      "Resp,>=,22,1\n"
      "SepsisLabel,>=,1,1\n"
      "classmap,0:0;1:1;2:2;3:3\n",
      "qsofa");
}

LabelRuleSet default_sofa_rules() {
  return parse_label_rules(
      "MAP,<,70,1\n"
      "Platelets,<,150,1\n"
      "Bilirubin_total,>=,1.2,1\n"
      "Creatinine,>=,1.2,1\n"
      "classmap,0:0;1:1;2+:2\n",
      "sofa");
}

int apply_label_rules(const PatientRecord& record, const LabelRuleSet& rules) {
  int points = 0;
  for (const auto& r : rules.rules) {
    const int col = record.column_index(r.feature);
    if (col < 0) throw ConfigError(r.feature, "rule feature not present in record " + record.id);
    const bool low = r.comparator == Comparator::le || r.comparator == Comparator::lt;
    const bool high = r.comparator == Comparator::ge || r.comparator == Comparator::gt;
    bool fired = false;
    std::optional<double> extreme;
    for (const auto& row : record.rows) {
      const double v = row[static_cast<std::size_t>(col)];
      if (is_missing(v)) continue;
      if (low) {
        extreme = extreme ? std::min(*extreme, v) : v;
      } else if (high) {
        extreme = extreme ? std::max(*extreme, v) : v;
      } else if (compare(v, r.comparator, r.threshold)) {
        fired = true;
      }
    }
    if (extreme) fired = compare(*extreme, r.comparator, r.threshold);
    if (fired) points += r.points;
  }
  return rules.class_for(points);
}

// ---- windows ----

std::optional<RawWindow> make_windows(const PatientRecord& record, int slot, int label,
                                      const std::vector<std::string>& feature_columns) {
  if (slot < 1 || record.hours() < static_cast<std::size_t>(slot)) return std::nullopt;
  RawWindow w;
  w.patient_id = record.id;
  w.slot = slot;
  w.label = label;
  w.d_in = feature_columns.size();
  const auto S = static_cast<std::size_t>(slot);
  w.values.assign(w.d_in * S, kMissing);
  for (std::size_t f = 0; f < w.d_in; ++f) {
    const int col = record.column_index(feature_columns[f]);
    if (col < 0) continue;
    for (std::size_t t = 0; t < S; ++t) w.values[f * S + t] = record.rows[t][static_cast<std::size_t>(col)];
  }
  return w;
}

std::vector<double> impute(std::span<const double> values, std::size_t d, std::size_t s,
                           std::span<const double> medians) {
  if (values.size() != d * s || medians.size() != d) throw DimensionError("impute: size mismatch");
  std::vector<double> out(values.begin(), values.end());
  for (std::size_t f = 0; f < d; ++f) {
    const double fill = is_missing(medians[f]) ? 0.0 : medians[f];
    double last = fill;
    for (std::size_t t = 0; t < s; ++t) {
      double& v = out[f * s + t];
      if (is_missing(v)) {
        v = last;
      } else {
        last = v;
      }
    }
  }
  return out;
}

Preprocessor Preprocessor::fit(std::span<const RawWindow> train) {
  if (train.empty()) throw std::invalid_argument("Preprocessor::fit: no training windows");
  const std::size_t d = train[0].d_in;
  Preprocessor p;
  p.medians_.assign(d, kMissing);
  std::vector<double> observed;
  for (std::size_t f = 0; f < d; ++f) {
    observed.clear();
    for (const auto& w : train) {
      const auto S = static_cast<std::size_t>(w.slot);
      for (std::size_t t = 0; t < S; ++t) {
        const double v = w.values[f * S + t];
        if (!is_missing(v)) observed.push_back(v);
      }
    }
    if (observed.empty()) continue;
    std::sort(observed.begin(), observed.end());
    const std::size_t m = observed.size();
    p.medians_[f] = m % 2 ? observed[m / 2] : 0.5 * (observed[m / 2 - 1] + observed[m / 2]);
  }
  std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
  std::size_t count = 0;
  for (const auto& w : train) {
    if (w.d_in != d) throw DimensionError("Preprocessor::fit: mixed feature widths");
    const auto S = static_cast<std::size_t>(w.slot);
    const auto dense = impute(w.values, d, S, p.medians_);
    for (std::size_t f = 0; f < d; ++f) {
      for (std::size_t t = 0; t < S; ++t) sum[f] += dense[f * S + t];
    }
    count += S;
  }
  p.means_.resize(d);
  for (std::size_t f = 0; f < d; ++f) p.means_[f] = sum[f] / static_cast<double>(count);
  for (const auto& w : train) {
    const auto S = static_cast<std::size_t>(w.slot);
    const auto dense = impute(w.values, d, S, p.medians_);
    for (std::size_t f = 0; f < d; ++f) {
      for (std::size_t t = 0; t < S; ++t) {
        const double c = dense[f * S + t] - p.means_[f];
        sumsq[f] += c * c;
      }
    }
  }
  p.stds_.resize(d);
  for (std::size_t f = 0; f < d; ++f) {
    const double sd = std::sqrt(sumsq[f] / static_cast<double>(count));
    p.stds_[f] = sd > 1e-12 ? sd : 1.0;
  }
  return p;
}

std::vector<double> Preprocessor::transform(const RawWindow& w) const {
  const std::size_t d = medians_.size();
  if (w.d_in != d) throw DimensionError("Preprocessor::transform: feature width mismatch");
  const auto S = static_cast<std::size_t>(w.slot);
  auto dense = impute(w.values, d, S, medians_);
  for (std::size_t f = 0; f < d; ++f) {
    for (std::size_t t = 0; t < S; ++t) dense[f * S + t] = (dense[f * S + t] - means_[f]) / stds_[f];
  }
  return dense;
}

LabeledSet Preprocessor::transform_all(std::span<const RawWindow> windows) const {
  LabeledSet set;
  set.d_in = medians_.size();
  set.seq_len = windows.empty() ? 0 : static_cast<std::size_t>(windows[0].slot);
  for (const auto& w : windows) {
    if (static_cast<std::size_t>(w.slot) != set.seq_len) throw DimensionError("transform_all: mixed slots");
    auto dense = transform(w);
    set.values.insert(set.values.end(), dense.begin(), dense.end());
    set.labels.push_back(w.label);
  }
  return set;
}

void Preprocessor::serialize(ByteWriter& out) const {
  out.u64(medians_.size());
  out.f64s(medians_);
  out.f64s(means_);
  out.f64s(stds_);
}

Preprocessor Preprocessor::deserialize(ByteReader& in) {
  Preprocessor p;
  const auto d = in.u64();
  if (d > in.remaining() / 24) throw FormatError("corrupt preprocessing block");
  p.medians_ = in.f64s(d);
  p.means_ = in.f64s(d);
  p.stds_ = in.f64s(d);
  return p;
}

SplitResult stratified_split(std::span<const RawWindow> windows, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("stratified_split: ratio must lie in (0,1)");
  // patient -> (label, window indices); std::map keeps patients ordered by id.
  std::map<std::string, std::pair<int, std::vector<std::size_t>>> patients;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto [it, fresh] = patients.try_emplace(windows[i].patient_id, windows[i].label, std::vector<std::size_t>{});
    if (!fresh && it->second.first != windows[i].label) {
      throw std::invalid_argument("stratified_split: patient " + windows[i].patient_id + " carries two labels");
    }
    it->second.second.push_back(i);
  }
  std::map<int, std::vector<std::string>> by_class;
  for (const auto& [id, info] : patients) by_class[info.first].push_back(id);

  Rng rng(seed);
  std::set<std::string> train_ids;
  for (auto& [cls, ids] : by_class) {
    if (ids.size() < 2) {
      throw std::invalid_argument("stratified_split: class " + std::to_string(cls) + " has fewer than 2 patients");
    }
    rng.shuffle(ids);
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(ids.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
    train_ids.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  }
  SplitResult out;
  for (const auto& w : windows) (train_ids.count(w.patient_id) ? out.train : out.test).push_back(w);
  return out;
}

// ---- synthetic data ----

std::vector<double> synth_motif_shape(std::size_t length) {
  // Raised bump peaking at 1.
  std::vector<double> shape(length);
  for (std::size_t i = 0; i < length; ++i) {
    shape[i] = std::sin(3.14159265358979323846 * (static_cast<double>(i) + 1.0) / (static_cast<double>(length) + 1.0));
  }
  return shape;
}

SynthDataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n_per_class < 1 || spec.n_classes < 2 || spec.d_in < 1 || spec.hours < 1) {
    throw std::invalid_argument("synth_generate: spec sizes must be positive (and n_classes >= 2)");
  }
  Rng rng(seed);
  const std::size_t early = (spec.hours + 3) / 4;
  const std::size_t len = std::min<std::size_t>(3, early);
  const auto shape = synth_motif_shape(len);
  SynthDataset ds;
  std::vector<std::string> columns;
  for (std::size_t f = 0; f < spec.d_in; ++f) columns.push_back("f" + std::to_string(f));
  const std::size_t total = spec.n_per_class * spec.n_classes;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t cls = i % spec.n_classes;
    PatientRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%06zu", i);
    rec.id = id;
    rec.columns = columns;
    rec.rows.assign(spec.hours, std::vector<double>(spec.d_in));
    for (auto& row : rec.rows) {
      for (auto& v : row) v = spec.noise_sd * rng.normal();
    }
    const std::size_t channel = cls % spec.d_in;
    const double polarity = (cls / spec.d_in) % 2 == 0 ? 1.0 : -1.0;
    const std::size_t lag = static_cast<std::size_t>(rng.below(early - len + 1));
    for (std::size_t j = 0; j < len; ++j) rec.rows[lag + j][channel] += polarity * spec.motif_strength * shape[j];
    ds.records.push_back(std::move(rec));
    ds.labels.push_back(static_cast<int>(cls));
  }
  return ds;
}

// ---- archive ----

std::string IngestReport::to_text(const std::string& scheme) const {
  std::ostringstream os;
  os << "# ingest report\n";
  os << "scheme: " << scheme << "\n";
  os << "patients: " << patients << "\n";
  os << "failed_files: " << failed_files.size() << "\n";
  for (const auto& f : failed_files) os << "  failed: " << f << "\n";
  os << "class_counts:";
  for (const auto& [c, n] : class_counts) os << ' ' << c << '=' << n;
  os << "\nslot,windows,skipped\n";
  for (const auto& [slot, n] : windows_per_slot) {
    const auto it = skipped_per_slot.find(slot);
    os << slot << ',' << n << ',' << (it == skipped_per_slot.end() ? 0 : it->second) << "\n";
  }
  return os.str();
}

std::vector<int> WindowArchive::slots() const {
  std::set<int> s;
  for (const auto& w : windows) s.insert(w.slot);
  return {s.begin(), s.end()};
}

std::vector<RawWindow> WindowArchive::for_slot(int slot) const {
  std::vector<RawWindow> out;
  for (const auto& w : windows) {
    if (w.slot == slot) out.push_back(w);
  }
  return out;
}

WindowArchive build_archive(const std::vector<PatientRecord>& records, const std::vector<int>& labels,
                            const std::vector<std::string>& feature_columns, std::size_t n_classes,
                            const std::string& scheme, const std::vector<int>& slots, IngestReport* report) {
  if (records.size() != labels.size()) throw std::invalid_argument("build_archive: one label per record required");
  WindowArchive archive;
  archive.columns = feature_columns;
  archive.n_classes = n_classes;
  archive.scheme = scheme;
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return records[a].id < records[b].id; });
  if (report) report->patients += records.size();
  for (int slot : slots) {
    for (auto i : order) {
      auto w = make_windows(records[i], slot, labels[i], feature_columns);
      if (w) {
        archive.windows.push_back(std::move(*w));
        if (report) ++report->windows_per_slot[slot];
      } else if (report) {
        ++report->skipped_per_slot[slot];
        report->windows_per_slot.try_emplace(slot, 0);
      }
    }
  }
  if (report) {
    for (int l : labels) ++report->class_counts[l];
  }
  return archive;
}

namespace {
constexpr std::string_view kArchiveMagic = "MEETWNDW";
constexpr std::uint32_t kArchiveVersion = 1;
}  // namespace

std::string encode_archive(const WindowArchive& a) {
  ByteWriter w;
  w.raw(kArchiveMagic);
  w.u32(kArchiveVersion);
  w.str(a.scheme);
  w.u64(a.n_classes);
  w.u64(a.columns.size());
  for (const auto& c : a.columns) w.str(c);
  w.u64(a.windows.size());
  for (const auto& win : a.windows) {
    w.str(win.patient_id);
    w.u32(static_cast<std::uint32_t>(win.slot));
    w.u32(static_cast<std::uint32_t>(win.label));
    w.f64s(win.values);
  }
  return w.take();
}

WindowArchive decode_archive(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(kArchiveMagic.size()) != kArchiveMagic) throw FormatError("not a window archive (bad magic)");
  if (r.u32() != kArchiveVersion) throw FormatError("unsupported window archive version");
  WindowArchive a;
  a.scheme = r.str();
  a.n_classes = r.u64();
  const auto n_cols = r.u64();
  if (n_cols > r.remaining()) throw FormatError("corrupt archive column count");
  for (std::uint64_t i = 0; i < n_cols; ++i) a.columns.push_back(r.str());
  const auto n_windows = r.u64();
  if (n_windows > r.remaining()) throw FormatError("corrupt archive window count");
  for (std::uint64_t i = 0; i < n_windows; ++i) {
    RawWindow win;
    win.patient_id = r.str();
    win.slot = static_cast<int>(r.u32());
    win.label = static_cast<int>(r.u32());
    win.d_in = a.columns.size();
    win.values = r.f64s(win.d_in * static_cast<std::size_t>(win.slot));
    a.windows.push_back(std::move(win));
  }
  if (!r.done()) throw FormatError("trailing bytes after window archive");
  return a;
}

void save_archive(const std::string& path, const WindowArchive& archive) {
  write_file_bytes(path, encode_archive(archive));
}

WindowArchive load_archive(const std::string& path) { return decode_archive(read_file_bytes(path)); }

}  // namespace meet
