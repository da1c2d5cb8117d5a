#include "meet/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "meet/ops.hpp"

namespace meet {

double RegressionTree::predict(const double* row) const {
  int i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = row[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes[i].value;
}

std::size_t RegressionTree::depth() const {
  std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
  std::size_t best = 0;
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (nodes[i].feature >= 0) {
      stack.emplace_back(nodes[i].left, d + 1);
      stack.emplace_back(nodes[i].right, d + 1);
    }
  }
  return best;
}

namespace {

struct SplitChoice {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(std::span<const double> x, std::size_t n, std::size_t d,
              const std::vector<std::vector<std::size_t>>& sorted, std::span<const double> target,
              const GbdtParams& params)
      : x_(x), n_(n), d_(d), sorted_(sorted), target_(target), params_(params), member_(n, 0) {}

  RegressionTree build() {
    RegressionTree tree;
    std::vector<std::size_t> all(n_);
    std::iota(all.begin(), all.end(), std::size_t{0});
    grow(tree, all, 0);
    return tree;
  }

 private:
  int grow(RegressionTree& tree, const std::vector<std::size_t>& rows, std::size_t depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double s = 0.0, ss = 0.0;
    for (auto r : rows) {
      s += target_[r];
      ss += target_[r] * target_[r];
    }
    const double cnt = static_cast<double>(rows.size());
    tree.nodes[id].value = s / cnt;
    const double sse = ss - s * s / cnt;
    if (depth >= params_.depth || rows.size() < 2 * params_.min_samples_leaf || sse <= 1e-14) return id;

    const SplitChoice split = best_split(rows, s);
    if (!split.found) return id;
    std::vector<std::size_t> left, right;
    for (auto r : rows) (x_[r * d_ + split.feature] <= split.threshold ? left : right).push_back(r);
    tree.nodes[id].feature = static_cast<int>(split.feature);
    tree.nodes[id].threshold = split.threshold;
    const int l = grow(tree, left, depth + 1);
    const int r = grow(tree, right, depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }

  SplitChoice best_split(const std::vector<std::size_t>& rows, double total) {
    for (auto r : rows) member_[r] = 1;
    const std::size_t n = rows.size();
    const double parent = total * total / static_cast<double>(n);
    const std::size_t min_leaf = params_.min_samples_leaf;
    SplitChoice best;
    for (std::size_t f = 0; f < d_; ++f) {
      double left_sum = 0.0;
      std::size_t left_n = 0;
      double prev = 0.0;
      bool have_prev = false;
      for (auto r : sorted_[f]) {
        if (!member_[r]) continue;
        const double v = x_[r * d_ + f];
        // Candidate boundary between the previous distinct value and v.
        if (have_prev && v > prev && left_n >= min_leaf && n - left_n >= min_leaf) {
          const double right_sum = total - left_sum;
          const double gain = left_sum * left_sum / static_cast<double>(left_n) +
                              right_sum * right_sum / static_cast<double>(n - left_n) - parent;
          if (!best.found || gain > best.gain + 1e-12) {
            best = {true, f, prev + 0.5 * (v - prev), gain};
          }
        }
        left_sum += target_[r];
        ++left_n;
        prev = v;
        have_prev = true;
      }
    }
    for (auto r : rows) member_[r] = 0;
    return best;
  }

  std::span<const double> x_;
  std::size_t n_, d_;
  const std::vector<std::vector<std::size_t>>& sorted_;
  std::span<const double> target_;
  const GbdtParams& params_;
  std::vector<char> member_;
};

double mean_nll(std::span<const double> scores, std::span<const int> labels, std::size_t n, std::size_t k) {
  const auto p = softmax_rows(scores, n, k);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s -= std::log(std::max(p[i * k + labels[i]], 1e-300));
  return s / static_cast<double>(n);
}

}  // namespace

GbdtModel gbdt_fit(std::span<const double> features, std::size_t n, std::size_t d, std::span<const int> labels,
                   std::size_t n_classes, const GbdtParams& params, std::vector<double>* round_loss) {
  if (n < 2) throw std::invalid_argument("gbdt_fit: need at least two samples");
  if (features.size() != n * d) throw DimensionError("gbdt_fit: feature matrix size mismatch");
  if (labels.size() != n) throw DimensionError("gbdt_fit: label count mismatch");
  if (params.depth < 1 || params.min_samples_leaf < 1 || !(params.shrinkage > 0.0)) {
    throw std::invalid_argument("gbdt_fit: invalid parameters");
  }
  std::set<int> distinct;
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes) {
      throw std::out_of_range("gbdt_fit: label " + std::to_string(l) + " outside class range");
    }
    distinct.insert(l);
  }
  if (distinct.size() < 2) throw std::invalid_argument("gbdt_fit: labels contain a single class");
  for (double v : features) {
    if (!std::isfinite(v)) throw std::invalid_argument("gbdt_fit: non-finite feature value");
  }

  std::vector<std::vector<std::size_t>> sorted(d);
  for (std::size_t f = 0; f < d; ++f) {
    auto& idx = sorted[f];
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return features[a * d + f] < features[b * d + f]; });
  }

  GbdtModel model;
  model.n_classes = n_classes;
  model.n_features = d;
  model.shrinkage = params.shrinkage;
  const std::size_t K = n_classes;
  std::vector<double> scores(n * K, 0.0);
  std::vector<double> residual(n);
  for (std::size_t round = 0; round < params.rounds; ++round) {
    const auto p = softmax_rows(scores, n, K);
    std::vector<RegressionTree> trees;
    trees.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        residual[i] = (labels[i] == static_cast<int>(k) ? 1.0 : 0.0) - p[i * K + k];
      }
      TreeBuilder builder(features, n, d, sorted, residual, params);
      trees.push_back(builder.build());
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < n; ++i) scores[i * K + k] += params.shrinkage * trees[k].predict(&features[i * d]);
    }
    model.rounds.push_back(std::move(trees));
    if (round_loss) round_loss->push_back(mean_nll(scores, labels, n, K));
  }
  return model;
}

GbdtPrediction gbdt_predict(const GbdtModel& model, std::span<const double> features, std::size_t m) {
  const std::size_t d = model.n_features, K = model.n_classes;
  if (features.size() != m * d) {
    throw DimensionError("gbdt_predict: expected width " + std::to_string(d) + " for " + std::to_string(m) + " rows");
  }
  std::vector<double> scores(m * K, 0.0);
  for (const auto& round : model.rounds) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < m; ++i) scores[i * K + k] += model.shrinkage * round[k].predict(&features[i * d]);
    }
  }
  GbdtPrediction out;
  out.probabilities = softmax_rows(scores, m, K);
  out.classes.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = out.probabilities.data() + i * K;
    out.classes[i] = static_cast<int>(std::max_element(row, row + K) - row);
  }
  return out;
}

void GbdtModel::serialize(ByteWriter& out) const {
  out.u64(n_classes);
  out.u64(n_features);
  out.f64(shrinkage);
  out.u64(rounds.size());
  for (const auto& round : rounds) {
    for (const auto& tree : round) {
      out.u64(tree.nodes.size());
      for (const auto& nd : tree.nodes) {
        out.i64(nd.feature);
        out.f64(nd.threshold);
        out.i64(nd.left);
        out.i64(nd.right);
        out.f64(nd.value);
      }
    }
  }
}

GbdtModel GbdtModel::deserialize(ByteReader& in) {
  GbdtModel m;
  m.n_classes = in.u64();
  m.n_features = in.u64();
  m.shrinkage = in.f64();
  const auto n_rounds = in.u64();
  if (m.n_classes < 2 || n_rounds > (1u << 24)) throw FormatError("corrupt tree ensemble header");
  for (std::uint64_t r = 0; r < n_rounds; ++r) {
    std::vector<RegressionTree> round(m.n_classes);
    for (auto& tree : round) {
      const auto count = in.u64();
      if (count == 0 || count > in.remaining() / 40) throw FormatError("corrupt tree node count");
      tree.nodes.resize(count);
      for (auto& nd : tree.nodes) {
        nd.feature = static_cast<int>(in.i64());
        nd.threshold = in.f64();
        nd.left = static_cast<int>(in.i64());
        nd.right = static_cast<int>(in.i64());
        nd.value = in.f64();
      }
      for (std::size_t i = 0; i < count; ++i) {
        const auto& nd = tree.nodes[i];
        const auto self = static_cast<int>(i);
        if (nd.feature >= 0 &&
            (static_cast<std::size_t>(nd.feature) >= m.n_features || nd.left <= self || nd.right <= self ||
             static_cast<std::size_t>(nd.left) >= count || static_cast<std::size_t>(nd.right) >= count)) {
          throw FormatError("corrupt tree node");
        }
      }
    }
    m.rounds.push_back(std::move(round));
  }
  return m;
}

}  // namespace meet
