#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "meet/binio.hpp"
#include "meet/model.hpp"

namespace meet {

// One PhysioNet-2019 style hourly record. Missing cells hold NaN.
struct PatientRecord {
  std::string id;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t hours() const { return rows.size(); }
  // -1 when absent.
  int column_index(std::string_view name) const;
};

bool is_missing(double v);

// Pipe-separated header plus numeric rows, "NaN" for missing. Throws
// FormatError on an empty file, a header without rows, or ragged rows
// (naming the line).
PatientRecord parse_psv(std::string_view text, std::string id = {});
std::string serialize_psv(const PatientRecord& record);
// Patient id is the file stem.
PatientRecord load_psv(const std::string& path);

// ---- clinical label rules ----

enum class Comparator { le, lt, ge, gt, eq };

struct LabelRule {
  std::string feature;
  Comparator comparator = Comparator::ge;
  double threshold = 0.0;
  int points = 1;
};

struct ClassMapEntry {
  int min_points;
  int max_points;  // inclusive; INT_MAX for an open "N+" tail
  int cls;
};

struct LabelRuleSet {
  std::string scheme = "custom";
  std::vector<LabelRule> rules;
  std::vector<ClassMapEntry> class_map;
  std::size_t n_classes = 0;

  // Class for a point total; throws when the map does not cover it.
  int class_for(int points) const;
  // Every attainable point total maps to a class; scheme class counts hold.
  void validate() const;
};

// Lines `feature,comparator,threshold,points` and one
// `classmap,<points>:<class>;<points>+:<class>;...` line. `#` comments.
LabelRuleSet parse_label_rules(std::string_view text, std::string scheme = "custom");
std::string serialize_label_rules(const LabelRuleSet& rules);
// SBP <= 100, Resp >= 22, SepsisLabel >= 1 (one point each), totals 0..3 -> 4 classes.
LabelRuleSet default_qsofa_rules();
// Organ-dysfunction proxy points bucketed into {0, 1, >=2} -> 3 classes.
LabelRuleSet default_sofa_rules();

// Sums rule points, each rule judged on the most extreme observed value in
// the rule's direction over the whole record.
int apply_label_rules(const PatientRecord& record, const LabelRuleSet& rules);

// ---- windows ----

// First `slot` hours of a record as a d_in×slot matrix (feature-major), NaN where missing.
struct RawWindow {
  std::string patient_id;
  int slot = 0;
  int label = 0;
  std::size_t d_in = 0;
  std::vector<double> values;
};

// nullopt when the record is shorter than `slot`. Features follow
// `feature_columns`; a column the record lacks is all-missing.
std::optional<RawWindow> make_windows(const PatientRecord& record, int slot, int label,
                                      const std::vector<std::string>& feature_columns);

// Forward fill, leading gaps from `medians`; a NaN median (no training
// observations) fills 0. Operates on a d×s feature-major matrix.
std::vector<double> impute(std::span<const double> values, std::size_t d, std::size_t s,
                           std::span<const double> medians);

// Imputation medians and z-score statistics, fitted from training windows only.
class Preprocessor {
 public:
  static Preprocessor fit(std::span<const RawWindow> train);

  std::vector<double> transform(const RawWindow& window) const;
  LabeledSet transform_all(std::span<const RawWindow> windows) const;

  const std::vector<double>& medians() const { return medians_; }
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& stds() const { return stds_; }

  void serialize(ByteWriter& out) const;
  static Preprocessor deserialize(ByteReader& in);

 private:
  std::vector<double> medians_, means_, stds_;
};

struct SplitResult {
  std::vector<RawWindow> train;
  std::vector<RawWindow> test;
};

// Per-class seeded shuffle of patients, then a ratio cut; patients never
// straddle the split. Throws when a class has fewer than two patients.
SplitResult stratified_split(std::span<const RawWindow> windows, double ratio, std::uint64_t seed);

// ---- synthetic data ----

struct SynthSpec {
  std::size_t n_per_class = 50;
  std::size_t n_classes = 2;
  std::size_t d_in = 4;
  std::size_t hours = 16;
  double motif_strength = 1.0;
  double noise_sd = 1.0;
};

struct SynthDataset {
  std::vector<PatientRecord> records;
  std::vector<int> labels;
};

// Gaussian noise with one planted motif per record inside the first
// ⌈hours/4⌉ steps. The class picks the channel (class mod d_in) and the
// polarity (alternating once channels wrap); the lag is uniform.
SynthDataset synth_generate(const SynthSpec& spec, std::uint64_t seed);
std::vector<double> synth_motif_shape(std::size_t length);

// ---- window archive ----

struct IngestReport {
  std::size_t patients = 0;
  std::vector<std::string> failed_files;
  std::map<int, std::size_t> windows_per_slot;
  std::map<int, std::size_t> skipped_per_slot;
  std::map<int, std::size_t> class_counts;

  std::string to_text(const std::string& scheme) const;
};

struct WindowArchive {
  std::vector<std::string> columns;
  std::size_t n_classes = 0;
  std::string scheme;
  std::vector<RawWindow> windows;  // sorted by (slot, patient id)

  std::vector<int> slots() const;
  std::vector<RawWindow> for_slot(int slot) const;
};

WindowArchive build_archive(const std::vector<PatientRecord>& records, const std::vector<int>& labels,
                            const std::vector<std::string>& feature_columns, std::size_t n_classes,
                            const std::string& scheme, const std::vector<int>& slots, IngestReport* report = nullptr);

std::string encode_archive(const WindowArchive& archive);
WindowArchive decode_archive(std::string_view bytes);
void save_archive(const std::string& path, const WindowArchive& archive);
WindowArchive load_archive(const std::string& path);

}  // namespace meet
