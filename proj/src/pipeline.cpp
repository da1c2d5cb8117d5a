#include "meet/pipeline.hpp"

#include <map>

#include "meet/errors.hpp"
#include "meet/rng.hpp"

namespace meet {

ModelConfig resolve_model_config(const ExperimentConfig& cfg, std::size_t d_in, int slot, std::size_t n_classes,
                                 Variant variant, std::uint64_t seed) {
  ModelConfig m = cfg.model;
  m.d_in = d_in;
  m.seq_len = static_cast<std::size_t>(slot);
  m.n_classes = n_classes;
  m.ablation = variant;
  m.seed = seed;
  return m;
}

std::vector<double> head_features(TrainedPipeline& pipeline, const LabeledSet& set) {
  if (pipeline.model) return pipeline.model->encode(set);
  return set.values;
}

TrainedPipeline fit_pipeline(std::span<const RawWindow> train, const std::vector<std::string>& columns,
                             std::size_t n_classes, const ExperimentConfig& cfg, Variant variant, std::uint64_t seed,
                             std::span<const RawWindow> valid) {
  if (train.empty()) throw std::invalid_argument("fit_pipeline: no training windows");
  TrainedPipeline p;
  p.config = cfg;
  p.columns = columns;
  p.slot = train[0].slot;
  p.config.model = resolve_model_config(cfg, columns.size(), p.slot, n_classes, variant, seed);
  p.config.model.validate();
  p.prep = Preprocessor::fit(train);
  const LabeledSet train_set = p.prep.transform_all(train);
  if (variant != Variant::no_both) {
    p.model.emplace(p.config.model);
    std::optional<LabeledSet> valid_set;
    if (!valid.empty()) valid_set = p.prep.transform_all(valid);
    p.history = train_alternating(*p.model, train_set, valid_set ? &*valid_set : nullptr);
  }
  const auto features = head_features(p, train_set);
  const std::size_t width = features.size() / train_set.size();
  p.gbdt = gbdt_fit(features, train_set.size(), width, train_set.labels, n_classes, cfg.gbdt);
  return p;
}

GbdtPrediction predict_pipeline(TrainedPipeline& pipeline, std::span<const RawWindow> windows) {
  if (windows.empty()) return {};
  for (const auto& w : windows) {
    if (w.slot != pipeline.slot) {
      throw DimensionError("window slot " + std::to_string(w.slot) + " does not match trained slot " +
                           std::to_string(pipeline.slot));
    }
  }
  const LabeledSet set = pipeline.prep.transform_all(windows);
  return gbdt_predict(pipeline.gbdt, head_features(pipeline, set), set.size());
}

namespace {

constexpr std::string_view kMagic = "MEETCKPT";
constexpr std::uint32_t kVersion = 1;

void section(ByteWriter& out, std::string_view tag, const std::string& payload) {
  out.raw(tag);
  out.u64(payload.size());
  out.raw(payload);
}

void write_blob(ByteWriter& w, const std::string& name, std::span<const double> data) {
  w.u64(name.size());
  w.raw(name);
  w.u64(data.size() * 8);
  w.f64s(data);
}

std::vector<std::pair<std::string, std::vector<double>>> read_blobs(ByteReader& r) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  const auto count = r.u64();
  if (count > r.remaining()) throw FormatError("corrupt blob count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.u64();
    std::string name(r.raw(name_len));
    const auto bytes = r.u64();
    if (bytes % 8 != 0) throw FormatError("blob '" + name + "' is not a float64 array");
    out.emplace_back(std::move(name), r.f64s(bytes / 8));
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(TrainedPipeline& p) {
  ByteWriter out;
  out.raw(kMagic);
  out.u32(kVersion);

  section(out, "CONF", serialize_config(p.config));

  ByteWriter meta;
  meta.u32(static_cast<std::uint32_t>(p.slot));
  meta.u64(p.columns.size());
  for (const auto& c : p.columns) meta.str(c);
  section(out, "META", meta.take());

  ByteWriter prep;
  p.prep.serialize(prep);
  section(out, "PREP", prep.take());

  if (p.model) {
    auto params = p.model->parameters();
    ByteWriter pw;
    pw.u64(params.size());
    for (const auto& np : params) write_blob(pw, np.name, np.tensor.data());
    section(out, "PARM", pw.take());

    auto states = p.model->norm_states();
    ByteWriter nw;
    nw.u64(states.size() * 2);
    for (const auto& s : states) {
      if (!s.state->initialized) throw std::logic_error("checkpoint: batchnorm statistics never populated");
      write_blob(nw, s.name + ".running_mean", s.state->running_mean);
      write_blob(nw, s.name + ".running_var", s.state->running_var);
    }
    section(out, "NORM", nw.take());
  }

  ByteWriter gw;
  p.gbdt.serialize(gw);
  section(out, "GBDT", gw.take());
  return out.take();
}

std::vector<std::string> checkpoint_sections(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(kMagic.size()) != kMagic) throw FormatError("not a checkpoint (bad magic)");
  if (r.u32() != kVersion) throw FormatError("unsupported checkpoint version");
  std::vector<std::string> tags;
  while (!r.done()) {
    tags.emplace_back(r.raw(4));
    r.raw(r.u64());
  }
  return tags;
}

TrainedPipeline decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(kMagic.size()) != kMagic) throw FormatError("not a checkpoint (bad magic)");
  if (r.u32() != kVersion) throw FormatError("unsupported checkpoint version");
  std::map<std::string, std::string_view> sections;
  while (!r.done()) {
    std::string tag(r.raw(4));
    sections[tag] = r.raw(r.u64());
  }
  for (const char* required : {"CONF", "META", "PREP", "GBDT"}) {
    if (!sections.count(required)) throw FormatError(std::string("checkpoint lacks section ") + required);
  }
  TrainedPipeline p;
  p.config = parse_config(sections["CONF"]);
  {
    ByteReader m(sections["META"]);
    p.slot = static_cast<int>(m.u32());
    const auto n = m.u64();
    if (n > m.remaining()) throw FormatError("corrupt checkpoint metadata");
    for (std::uint64_t i = 0; i < n; ++i) p.columns.push_back(m.str());
  }
  {
    ByteReader pr(sections["PREP"]);
    p.prep = Preprocessor::deserialize(pr);
  }
  {
    ByteReader gr(sections["GBDT"]);
    p.gbdt = GbdtModel::deserialize(gr);
  }
  if (p.config.model.ablation != Variant::no_both) {
    if (!sections.count("PARM") || !sections.count("NORM")) throw FormatError("checkpoint lacks network sections");
    p.model.emplace(p.config.model);
    ByteReader pr(sections["PARM"]);
    const auto blobs = read_blobs(pr);
    auto params = p.model->parameters();
    if (blobs.size() != params.size()) throw FormatError("checkpoint parameter count does not match config");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (blobs[i].first != params[i].name || blobs[i].second.size() != params[i].tensor.numel()) {
        throw FormatError("checkpoint parameter '" + blobs[i].first + "' does not match '" + params[i].name + "'");
      }
      auto dst = params[i].tensor.data_mut();
      std::copy(blobs[i].second.begin(), blobs[i].second.end(), dst.begin());
    }
    ByteReader nr(sections["NORM"]);
    const auto norms = read_blobs(nr);
    auto states = p.model->norm_states();
    if (norms.size() != states.size() * 2) throw FormatError("checkpoint normalization count does not match config");
    for (std::size_t i = 0; i < states.size(); ++i) {
      states[i].state->running_mean = norms[2 * i].second;
      states[i].state->running_var = norms[2 * i + 1].second;
      states[i].state->initialized = true;
    }
  }
  return p;
}

void save_checkpoint(const std::string& path, TrainedPipeline& pipeline) {
  write_file_bytes(path, encode_checkpoint(pipeline));
}

TrainedPipeline load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace meet
