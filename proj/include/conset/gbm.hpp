#pragma once

// Gradient-boosted regression trees for binary classification on the
// log-odds scale.
//
// Stagewise fit with logistic loss: each tree regresses the current residual
// y - sigmoid(F) with squared-error splits; leaf values are one Newton step
// (sum residual / sum sigma(1-sigma)). A tree that cannot produce a valid
// split contributes exactly zero. After each stage the training log-loss is
// checked; leaf values are halved until the stage is non-increasing, so the
// loss trace is monotone by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "conset/common.hpp"
#include "conset/core.hpp"
#include "conset/rng.hpp"

namespace conset {

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

// Flat node array; node 0 is the root. Internal nodes route x[feature] <=
// threshold to `left`, otherwise `right`; leaves have left == right == -1.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return left < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  int max_depth = 0;

  double predict(const std::vector<double>& x) const {
    int node = 0;
    while (!nodes[node].is_leaf())
      node = x[nodes[node].feature] <= nodes[node].threshold ? nodes[node].left
                                                             : nodes[node].right;
    return nodes[node].value;
  }
};

// ---------------------------------------------------------------------------
// Binary task
// ---------------------------------------------------------------------------

struct BinaryTask {
  Matrix x;                  // n x p design rows
  std::vector<int> labels;   // 1 = positive category
  std::vector<std::string> feature_names;
  std::string positive_label;
  std::string negative_label;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
};

inline BinaryTask make_binary_task(const Dataset& data, CategoryId positive, CategoryId negative) {
  if (positive >= data.num_categories() || negative >= data.num_categories())
    throw DataError("make_binary_task: category id out of range");
  if (positive == negative) throw DataError("make_binary_task: identical categories");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const CategoryId c = data.observations[i].category;
    if (c == positive || c == negative) keep.push_back(i);
  }
  BinaryTask task;
  task.feature_names = data.covariate_names;
  task.positive_label = format_set_literal(data.rps.category(positive), data.options);
  task.negative_label = format_set_literal(data.rps.category(negative), data.options);
  task.x = Matrix(keep.size(), data.num_covariates());
  task.labels.resize(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const Observation& obs = data.observations[keep[r]];
    std::copy(obs.covariates.begin(), obs.covariates.end(), task.x.row_ptr(r));
    const int y = obs.category == positive ? 1 : 0;
    task.labels[r] = y;
    if (y) ++task.n_positive;
    else ++task.n_negative;
  }
  if (task.n_positive == 0)
    throw DataError("make_binary_task: positive class '" + task.positive_label + "' is empty");
  if (task.n_negative == 0)
    throw DataError("make_binary_task: negative class '" + task.negative_label + "' is empty");
  return task;
}

// ---------------------------------------------------------------------------
// Boosting
// ---------------------------------------------------------------------------

struct GbmHyperparams {
  std::size_t n_trees = 200;
  int max_depth = 3;
  double learning_rate = 0.1;
  std::size_t min_leaf = 5;
  std::uint64_t seed = 0;
  bool balance_classes = false;  // weight classes inversely to their frequency
};

struct GbmModel {
  std::vector<RegressionTree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;  // initial log-odds
  std::vector<std::string> feature_names;
  std::vector<double> train_log_loss;  // after each stage, stage 0 = base only

  // Log-odds output.
  double predict(const std::vector<double>& x) const {
    double f = base_score;
    for (const RegressionTree& t : trees) f += learning_rate * t.predict(x);
    return f;
  }

  double predict_probability(const std::vector<double>& x) const {
    return 1.0 / (1.0 + std::exp(-predict(x)));
  }
};

namespace detail {

struct SplitCandidate {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Best squared-error split of `rows` on any feature; gain must be strictly
// positive and both children need min_leaf rows.
inline SplitCandidate best_split(const Matrix& x, const std::vector<double>& residual,
                                 const std::vector<double>& weight,
                                 const std::vector<std::size_t>& rows, std::size_t min_leaf) {
  SplitCandidate best;
  const std::size_t p = x.cols();
  double w_total = 0.0, wr_total = 0.0;
  for (std::size_t i : rows) {
    w_total += weight[i];
    wr_total += weight[i] * residual[i];
  }
  if (rows.size() < 2 * min_leaf || w_total <= 0.0) return best;
  const double parent_score = wr_total * wr_total / w_total;

  std::vector<std::pair<double, std::size_t>> order(rows.size());
  for (std::size_t f = 0; f < p; ++f) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      order[r] = {x(rows[r], f), rows[r]};
    std::sort(order.begin(), order.end());
    if (order.front().first == order.back().first) continue;  // constant feature

    double w_left = 0.0, wr_left = 0.0;
    for (std::size_t r = 0; r + 1 < rows.size(); ++r) {
      const std::size_t i = order[r].second;
      w_left += weight[i];
      wr_left += weight[i] * residual[i];
      if (order[r].first == order[r + 1].first) continue;
      const std::size_t n_left = r + 1;
      const std::size_t n_right = rows.size() - n_left;
      if (n_left < min_leaf || n_right < min_leaf) continue;
      const double w_right = w_total - w_left;
      if (w_left <= 0.0 || w_right <= 0.0) continue;
      const double wr_right = wr_total - wr_left;
      const double gain =
          wr_left * wr_left / w_left + wr_right * wr_right / w_right - parent_score;
      if (gain > best.gain + 1e-12 || (!best.found && gain > 1e-12)) {
        best.found = true;
        best.feature = static_cast<int>(f);
        best.threshold = 0.5 * (order[r].first + order[r + 1].first);
        best.gain = gain;
      }
    }
  }
  return best;
}

inline int grow_node(RegressionTree& tree, const Matrix& x, const std::vector<double>& residual,
                     const std::vector<double>& hessian, const std::vector<double>& weight,
                     std::vector<std::size_t>& rows, int depth, const GbmHyperparams& hp) {
  const int node_id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();

  SplitCandidate split;
  if (depth < hp.max_depth) split = best_split(x, residual, weight, rows, hp.min_leaf);

  if (!split.found) {
    double num = 0.0, den = 0.0;
    for (std::size_t i : rows) {
      num += weight[i] * residual[i];
      den += weight[i] * hessian[i];
    }
    tree.nodes[node_id].value = num / std::max(den, 1e-12);
    return node_id;
  }

  std::vector<std::size_t> left_rows, right_rows;
  for (std::size_t i : rows) {
    if (x(i, split.feature) <= split.threshold) left_rows.push_back(i);
    else right_rows.push_back(i);
  }
  rows.clear();
  rows.shrink_to_fit();

  tree.nodes[node_id].feature = split.feature;
  tree.nodes[node_id].threshold = split.threshold;
  const int left = grow_node(tree, x, residual, hessian, weight, left_rows, depth + 1, hp);
  tree.nodes[node_id].left = left;
  const int right = grow_node(tree, x, residual, hessian, weight, right_rows, depth + 1, hp);
  tree.nodes[node_id].right = right;
  return node_id;
}

}  // namespace detail

inline double log_loss(const GbmModel& model, const Matrix& x, const std::vector<int>& labels,
                       const std::vector<double>& weight) {
  double total = 0.0, w_total = 0.0;
  std::vector<double> row(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    row.assign(x.row_ptr(i), x.row_ptr(i) + x.cols());
    const double f = model.predict(row);
    // log(1 + exp(-z)) without overflow
    const double z = labels[i] ? f : -f;
    const double l = z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    total += weight[i] * l;
    w_total += weight[i];
  }
  return w_total > 0 ? total / w_total : 0.0;
}

inline double error_rate(const GbmModel& model, const Matrix& x, const std::vector<int>& labels) {
  std::size_t wrong = 0;
  std::vector<double> row(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    row.assign(x.row_ptr(i), x.row_ptr(i) + x.cols());
    const int pred = model.predict(row) > 0.0 ? 1 : 0;
    if (pred != labels[i]) ++wrong;
  }
  return x.rows() == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(x.rows());
}

inline GbmModel train_gbm(const BinaryTask& task, const GbmHyperparams& hp = {}) {
  const std::size_t n = task.x.rows();
  if (n == 0) throw DataError("train_gbm: empty task");
  if (hp.learning_rate <= 0.0 || hp.learning_rate > 1.0)
    throw DataError("train_gbm: learning_rate must be in (0, 1]");

  std::vector<double> weight(n, 1.0);
  if (hp.balance_classes) {
    const double w_pos = static_cast<double>(n) / (2.0 * static_cast<double>(task.n_positive));
    const double w_neg = static_cast<double>(n) / (2.0 * static_cast<double>(task.n_negative));
    for (std::size_t i = 0; i < n; ++i) weight[i] = task.labels[i] ? w_pos : w_neg;
  }

  GbmModel model;
  model.learning_rate = hp.learning_rate;
  model.feature_names = task.feature_names;

  double w_sum = 0.0, wy_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w_sum += weight[i];
    wy_sum += weight[i] * task.labels[i];
  }
  const double mean = std::clamp(wy_sum / w_sum, 1e-6, 1.0 - 1e-6);
  model.base_score = std::log(mean / (1.0 - mean));

  std::vector<double> f(n, model.base_score);
  std::vector<double> residual(n), hessian(n);
  model.train_log_loss.push_back(log_loss(model, task.x, task.labels, weight));

  for (std::size_t stage = 0; stage < hp.n_trees; ++stage) {
    for (std::size_t i = 0; i < n; ++i) {
      const double prob = 1.0 / (1.0 + std::exp(-f[i]));
      residual[i] = static_cast<double>(task.labels[i]) - prob;
      hessian[i] = std::max(prob * (1.0 - prob), 1e-12);
    }

    RegressionTree tree;
    tree.max_depth = hp.max_depth;
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    detail::grow_node(tree, task.x, residual, hessian, weight, rows, 0, hp);

    // A tree that could not split is dead weight; it contributes zero.
    if (tree.nodes.size() == 1) tree.nodes[0].value = 0.0;

    // Monotonicity guard: damp the stage until the training loss does not
    // increase. With all-zero leaves the loss is bit-identical to the
    // previous stage, so this terminates.
    const double prev_loss = model.train_log_loss.back();
    std::vector<double> row(task.x.cols());
    for (int halvings = 0; halvings <= 60; ++halvings) {
      double loss = 0.0, lw = 0.0;
      std::vector<double> f_new(n);
      for (std::size_t i = 0; i < n; ++i) {
        row.assign(task.x.row_ptr(i), task.x.row_ptr(i) + task.x.cols());
        f_new[i] = f[i] + hp.learning_rate * tree.predict(row);
        const double z = task.labels[i] ? f_new[i] : -f_new[i];
        const double l = z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
        loss += weight[i] * l;
        lw += weight[i];
      }
      loss = lw > 0 ? loss / lw : 0.0;
      if (loss <= prev_loss || halvings == 60) {
        f = std::move(f_new);
        model.trees.push_back(std::move(tree));
        model.train_log_loss.push_back(loss);
        break;
      }
      for (TreeNode& node : tree.nodes)
        if (node.is_leaf()) node.value *= 0.5;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Serialization: self-describing JSON tree dump
// ---------------------------------------------------------------------------

inline nlohmann::json gbm_to_json(const GbmModel& model) {
  nlohmann::json j;
  j["format"] = "gbm-trees";
  j["version"] = 1;
  j["output"] = "log_odds";
  j["base_score"] = model.base_score;
  j["learning_rate"] = model.learning_rate;
  j["feature_names"] = model.feature_names;
  nlohmann::json trees = nlohmann::json::array();
  for (const RegressionTree& tree : model.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const TreeNode& node : tree.nodes) {
      if (node.is_leaf()) {
        nodes.push_back({{"value", node.value}});
      } else {
        nodes.push_back({{"feature", node.feature},
                         {"threshold", node.threshold},
                         {"left", node.left},
                         {"right", node.right}});
      }
    }
    trees.push_back({{"nodes", nodes}});
  }
  j["trees"] = std::move(trees);
  return j;
}

inline GbmModel gbm_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "gbm-trees")
    throw DataError("gbm_from_json: not a gbm-trees dump");
  GbmModel model;
  model.base_score = j.at("base_score").get<double>();
  model.learning_rate = j.at("learning_rate").get<double>();
  model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& tj : j.at("trees")) {
    RegressionTree tree;
    for (const auto& nj : tj.at("nodes")) {
      TreeNode node;
      if (nj.contains("feature")) {
        node.feature = nj.at("feature").get<int>();
        node.threshold = nj.at("threshold").get<double>();
        node.left = nj.at("left").get<int>();
        node.right = nj.at("right").get<int>();
      } else {
        node.value = nj.at("value").get<double>();
      }
      tree.nodes.push_back(node);
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

}  // namespace conset
