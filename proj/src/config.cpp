#include "meet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "meet/errors.hpp"

namespace meet {

namespace {

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

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_mere: return "no_mere";
    case Variant::no_cdta: return "no_cdta";
    case Variant::no_both: return "no_both";
  }
  return "full";
}

Variant parse_variant(std::string_view s) {
  if (s == "full") return Variant::full;
  if (s == "no_mere") return Variant::no_mere;
  if (s == "no_cdta") return Variant::no_cdta;
  if (s == "no_both") return Variant::no_both;
  throw ConfigError("variant", "unknown variant '" + std::string(s) + "'");
}

std::string_view to_string(MereGrouping g) {
  return g == MereGrouping::full_width ? "full_width" : "per_channel";
}

MereGrouping parse_grouping(std::string_view s) {
  if (s == "full_width") return MereGrouping::full_width;
  if (s == "per_channel") return MereGrouping::per_channel;
  throw ConfigError("mere_grouping", "unknown grouping '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  const std::pair<const char*, std::size_t> positive[] = {
      {"d_in", d_in},       {"seq_len", seq_len}, {"n_views", n_views},       {"view_dim", view_dim},
      {"k", k},             {"k1", k1},           {"k2", k2},                 {"pool_stride", pool_stride},
      {"f_long", f_long},   {"f_short", f_short}, {"heads", heads},           {"d_proj", d_proj},
      {"batch_size", batch_size}};
  for (const auto& [name, v] : positive) {
    if (v < 1) throw ConfigError(name, "must be at least 1");
  }
  if (n_classes < 2) throw ConfigError("n_classes", "must be at least 2");
  if (k % 2 == 0) throw ConfigError("k", "must be odd for same padding");
  if (k1 % 2 == 0) throw ConfigError("k1", "must be odd for same padding");
  if (k2 % 2 == 0) throw ConfigError("k2", "must be odd for same padding");
  if (!(k2 < k1)) throw ConfigError("k2", "short kernel must be smaller than long kernel k1");
  if (f_short % heads != 0) throw ConfigError("heads", "must divide f_short");
  if (!(alpha >= 0.0)) throw ConfigError("alpha", "must be non-negative");
  if (!(beta >= 0.0)) throw ConfigError("beta", "must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
  if (ablation != Variant::no_both && ablation != Variant::no_cdta && seq_len < pool_stride) {
    throw ConfigError("seq_len", "sequence shorter than pool stride");
  }
}

void ExperimentConfig::validate() const {
  model.validate();
  if (gbdt.depth < 1) throw ConfigError("gbdt_depth", "must be at least 1");
  if (gbdt.min_samples_leaf < 1) throw ConfigError("gbdt_min_samples_leaf", "must be at least 1");
  if (!(gbdt.shrinkage > 0.0)) throw ConfigError("gbdt_shrinkage", "must be positive");
  if (runs < 1) throw ConfigError("runs", "must be at least 1");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train_ratio", "must lie in (0,1)");
  if (workers < 1) throw ConfigError("workers", "must be at least 1");
  if (variants.empty()) throw ConfigError("variants", "at least one variant required");
  for (int s : slots) {
    if (s < 2 || s > 23) throw ConfigError("slots", "slot hours must lie in 2..23");
  }
}

std::vector<int> parse_slot_list(std::string_view s) {
  std::vector<int> out;
  for (const auto& part : split(s, ',')) {
    if (part.empty()) continue;
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoi(part));
      } else {
        const int a = std::stoi(part.substr(0, dash));
        const int b = std::stoi(part.substr(dash + 1));
        if (b < a) throw ConfigError("slots", "empty range '" + part + "'");
        for (int v = a; v <= b; ++v) out.push_back(v);
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("slots", "cannot parse '" + part + "'");
    }
  }
  return out;
}

std::vector<Variant> parse_variant_list(std::string_view s) {
  std::vector<Variant> out;
  for (const auto& part : split(s, ',')) {
    if (!part.empty()) out.push_back(parse_variant(part));
  }
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  auto& m = cfg.model;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto sz = [](std::size_t& field) -> Setter { return [&field](const std::string& k, const std::string& v) { field = parse_size(k, v); }; };
  auto dbl = [](double& field) -> Setter { return [&field](const std::string& k, const std::string& v) { field = parse_double(k, v); }; };
  const std::map<std::string, Setter> setters = {
      {"d_in", sz(m.d_in)},
      {"seq_len", sz(m.seq_len)},
      {"n_views", sz(m.n_views)},
      {"view_dim", sz(m.view_dim)},
      {"k", sz(m.k)},
      {"k1", sz(m.k1)},
      {"k2", sz(m.k2)},
      {"pool_stride", sz(m.pool_stride)},
      {"f_long", sz(m.f_long)},
      {"f_short", sz(m.f_short)},
      {"heads", sz(m.heads)},
      {"d_proj", sz(m.d_proj)},
      {"n_classes", sz(m.n_classes)},
      {"alpha", dbl(m.alpha)},
      {"beta", dbl(m.beta)},
      {"learning_rate", dbl(m.learning_rate)},
      {"epochs", sz(m.epochs)},
      {"batch_size", sz(m.batch_size)},
      {"seed", [&m](const std::string& k, const std::string& v) { m.seed = parse_u64(k, v); }},
      {"ablation", [&m](const std::string&, const std::string& v) { m.ablation = parse_variant(v); }},
      {"mere_grouping", [&m](const std::string&, const std::string& v) { m.mere_grouping = parse_grouping(v); }},
      {"gbdt_rounds", sz(cfg.gbdt.rounds)},
      {"gbdt_depth", sz(cfg.gbdt.depth)},
      {"gbdt_shrinkage", dbl(cfg.gbdt.shrinkage)},
      {"gbdt_min_samples_leaf", sz(cfg.gbdt.min_samples_leaf)},
      {"slots", [&cfg](const std::string&, const std::string& v) { cfg.slots = parse_slot_list(v); }},
      {"variants", [&cfg](const std::string&, const std::string& v) { cfg.variants = parse_variant_list(v); }},
      {"runs", sz(cfg.runs)},
      {"train_ratio", dbl(cfg.train_ratio)},
      {"workers", sz(cfg.workers)},
  };

  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(key, "unknown configuration key");
    it->second(key, value);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  const auto& m = cfg.model;
  std::ostringstream os;
  os << "d_in = " << m.d_in << "\n"
     << "seq_len = " << m.seq_len << "\n"
     << "n_views = " << m.n_views << "\n"
     << "view_dim = " << m.view_dim << "\n"
     << "k = " << m.k << "\n"
     << "k1 = " << m.k1 << "\n"
     << "k2 = " << m.k2 << "\n"
     << "pool_stride = " << m.pool_stride << "\n"
     << "f_long = " << m.f_long << "\n"
     << "f_short = " << m.f_short << "\n"
     << "heads = " << m.heads << "\n"
     << "d_proj = " << m.d_proj << "\n"
     << "n_classes = " << m.n_classes << "\n"
     << "alpha = " << fmt_double(m.alpha) << "\n"
     << "beta = " << fmt_double(m.beta) << "\n"
     << "learning_rate = " << fmt_double(m.learning_rate) << "\n"
     << "epochs = " << m.epochs << "\n"
     << "batch_size = " << m.batch_size << "\n"
     << "seed = " << m.seed << "\n"
     << "ablation = " << to_string(m.ablation) << "\n"
     << "mere_grouping = " << to_string(m.mere_grouping) << "\n"
     << "gbdt_rounds = " << cfg.gbdt.rounds << "\n"
     << "gbdt_depth = " << cfg.gbdt.depth << "\n"
     << "gbdt_shrinkage = " << fmt_double(cfg.gbdt.shrinkage) << "\n"
     << "gbdt_min_samples_leaf = " << cfg.gbdt.min_samples_leaf << "\n";
  if (!cfg.slots.empty()) {
    os << "slots = ";
    for (std::size_t i = 0; i < cfg.slots.size(); ++i) os << (i ? "," : "") << cfg.slots[i];
    os << "\n";
  }
  os << "variants = ";
  for (std::size_t i = 0; i < cfg.variants.size(); ++i) os << (i ? "," : "") << to_string(cfg.variants[i]);
  os << "\n"
     << "runs = " << cfg.runs << "\n"
     << "train_ratio = " << fmt_double(cfg.train_ratio) << "\n"
     << "workers = " << cfg.workers << "\n";
  return os.str();
}

}  // namespace meet
