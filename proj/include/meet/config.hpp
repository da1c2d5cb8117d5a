#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace meet {

enum class Variant { full, no_mere, no_cdta, no_both };
enum class MereGrouping { full_width, per_channel };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
std::string_view to_string(MereGrouping g);
MereGrouping parse_grouping(std::string_view s);

// Architecture and training hyperparameters. d_in, seq_len and n_classes are
// normally overwritten from the data (feature count, time slot, label scheme).
struct ModelConfig {
  std::size_t d_in = 40;
  std::size_t seq_len = 5;
  std::size_t n_views = 35;
  std::size_t view_dim = 8;
  std::size_t k = 5;
  std::size_t k1 = 5;
  std::size_t k2 = 3;
  std::size_t pool_stride = 2;
  std::size_t f_long = 64;
  std::size_t f_short = 32;
  std::size_t heads = 4;
  std::size_t d_proj = 64;
  std::size_t n_classes = 2;
  double alpha = 1e-4;
  double beta = 1.0;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  Variant ablation = Variant::full;
  MereGrouping mere_grouping = MereGrouping::full_width;

  // Throws ConfigError naming the first violated field.
  void validate() const;
};

struct GbdtParams {
  std::size_t rounds = 100;
  std::size_t depth = 3;
  double shrinkage = 0.1;
  std::size_t min_samples_leaf = 5;
};

// Everything a CLI config file can set.
struct ExperimentConfig {
  ModelConfig model;
  GbdtParams gbdt;
  std::vector<int> slots;  // empty: every slot in the archive
  std::vector<Variant> variants{Variant::full};
  std::size_t runs = 5;
  double train_ratio = 0.8;
  std::size_t workers = 1;

  void validate() const;
};

// `key = value` lines, `#` comments, unknown keys rejected (ConfigError).
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

// "2-23", "5", or "2,5,8".
std::vector<int> parse_slot_list(std::string_view s);
std::vector<Variant> parse_variant_list(std::string_view s);

}  // namespace meet
