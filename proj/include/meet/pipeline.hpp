#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meet/config.hpp"
#include "meet/data.hpp"
#include "meet/gbdt.hpp"
#include "meet/model.hpp"

namespace meet {

// Everything needed to score new windows at one time slot: preprocessing
// statistics, the trained encoder (absent for no_both) and the tree ensemble.
struct TrainedPipeline {
  ExperimentConfig config;  // model fields resolved to the data (d_in, seq_len, n_classes, ablation, seed)
  std::vector<std::string> columns;
  int slot = 0;
  Preprocessor prep;
  std::optional<Model> model;
  GbdtModel gbdt;
  TrainHistory history;
};

// Resolves data-driven model fields for one run.
ModelConfig resolve_model_config(const ExperimentConfig& cfg, std::size_t d_in, int slot, std::size_t n_classes,
                                 Variant variant, std::uint64_t seed);

// Preprocessing is fitted on `train` alone. `valid`, when given, only feeds
// the per-epoch accuracy log.
TrainedPipeline fit_pipeline(std::span<const RawWindow> train, const std::vector<std::string>& columns,
                             std::size_t n_classes, const ExperimentConfig& cfg, Variant variant, std::uint64_t seed,
                             std::span<const RawWindow> valid = {});

// Tree-ensemble input rows for `set`: Z from the encoder, or the flattened
// windows for no_both.
std::vector<double> head_features(TrainedPipeline& pipeline, const LabeledSet& set);

GbdtPrediction predict_pipeline(TrainedPipeline& pipeline, std::span<const RawWindow> windows);

// Versioned container: magic, version, then tagged sections
// (CONF, META, PREP, PARM, NORM, GBDT). PARM/NORM hold blobs in declaration
// order, each as name length, name, byte length, little-endian float64 data.
std::string encode_checkpoint(TrainedPipeline& pipeline);
TrainedPipeline decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, TrainedPipeline& pipeline);
TrainedPipeline load_checkpoint(const std::string& path);
// Section tags in file order.
std::vector<std::string> checkpoint_sections(std::string_view bytes);

}  // namespace meet
