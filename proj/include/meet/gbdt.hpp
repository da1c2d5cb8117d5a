#pragma once

#include <span>
#include <vector>

#include "meet/binio.hpp"
#include "meet/config.hpp"

namespace meet {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;   // value <= threshold
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(const double* row) const;
  std::size_t depth() const;
};

// Softmax-objective gradient boosting: one regression tree per class per round.
struct GbdtModel {
  std::size_t n_classes = 0;
  std::size_t n_features = 0;
  double shrinkage = 0.1;
  std::vector<std::vector<RegressionTree>> rounds;  // rounds[r][k]

  void serialize(ByteWriter& out) const;
  static GbdtModel deserialize(ByteReader& in);
};

// features: N×D row-major. Each round fits, per class, a tree to
// onehot − softmax(score) with exact greedy variance-reduction splits (ties:
// lowest feature, then lowest threshold), mean-residual leaves, and adds
// shrinkage·tree to the score. `round_loss`, when given, receives the
// training negative log-likelihood after every round.
GbdtModel gbdt_fit(std::span<const double> features, std::size_t n, std::size_t d, std::span<const int> labels,
                   std::size_t n_classes, const GbdtParams& params, std::vector<double>* round_loss = nullptr);

struct GbdtPrediction {
  std::vector<int> classes;
  std::vector<double> probabilities;  // M×K
};

GbdtPrediction gbdt_predict(const GbdtModel& model, std::span<const double> features, std::size_t m);

}  // namespace meet
