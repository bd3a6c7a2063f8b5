#pragma once

// Feature attribution for the boosted-tree classifier.
//
// SHAP values are interventional Shapley values of the model's log-odds
// output: the coalition value v(C) is the mean over background rows b of the
// model evaluated at x on C and b elsewhere. For a single tree and a single
// background row the game is determined by the path constraints at which x
// and b diverge, so each reachable leaf reduces to an AND-game over the
// features that must be inside the coalition (U) and outside it (V); the
// Shapley value of such a game has a closed form in |U|, |V| and p. Tree
// values sum and background rows average by linearity.
//
// exact_shapley_oracle enumerates all 2^p coalitions with the same value
// function; it is the reference the recursion is checked against.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "conset/common.hpp"
#include "conset/csv.hpp"
#include "conset/gbm.hpp"
#include "conset/parallel.hpp"
#include "conset/rng.hpp"

namespace conset {

struct ShapExplanation {
  std::vector<double> phi;  // per-feature contribution, log-odds units
  double base = 0.0;        // phi_0 = mean model output over the background
};

namespace detail {

inline double binom(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i)
    r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

// Shapley coalition weight w(s) = s! (p-1-s)! / p! = 1 / (p * C(p-1, s)).
inline double shapley_weight(std::size_t p, std::size_t s) {
  return 1.0 / (static_cast<double>(p) * binom(p - 1, s));
}

// Closed-form Shapley values of the game u(C) = 1{U subset of C, V disjoint
// from C}, tabulated over a = |U|, d = |V|:
//   j in U:  phi_j =  sum_k C(r,k) w(a-1+k)
//   j in V:  phi_j = -sum_k C(r,k) w(a+k)       with r = p - a - d free features.
struct AndGameTables {
  std::size_t p = 0;
  std::vector<std::vector<double>> in_weight;   // [a][d], a >= 1
  std::vector<std::vector<double>> out_weight;  // [a][d], d >= 1

  explicit AndGameTables(std::size_t p_) : p(p_) {
    in_weight.assign(p + 1, std::vector<double>(p + 1, 0.0));
    out_weight.assign(p + 1, std::vector<double>(p + 1, 0.0));
    for (std::size_t a = 0; a <= p; ++a) {
      for (std::size_t d = 0; a + d <= p; ++d) {
        const std::size_t r = p - a - d;
        if (a >= 1) {
          double s = 0.0;
          for (std::size_t k = 0; k <= r; ++k) s += binom(r, k) * shapley_weight(p, a - 1 + k);
          in_weight[a][d] = s;
        }
        if (d >= 1) {
          double s = 0.0;
          for (std::size_t k = 0; k <= r; ++k) s += binom(r, k) * shapley_weight(p, a + k);
          out_weight[a][d] = s;
        }
      }
    }
  }
};

// Walks one tree for one (x, background) pair, accumulating leaf AND-games.
inline void tree_shap_walk(const RegressionTree& tree, int node, const std::vector<double>& x,
                           const double* bg, std::uint64_t u_mask, std::uint64_t v_mask,
                           double scale, const AndGameTables& tables, std::vector<double>& phi) {
  const TreeNode& nd = tree.nodes[node];
  if (nd.is_leaf()) {
    const std::size_t a = static_cast<std::size_t>(std::popcount(u_mask));
    const std::size_t d = static_cast<std::size_t>(std::popcount(v_mask));
    if (a == 0 && d == 0) return;  // constant leaf: no attribution
    const double contrib = scale * nd.value;
    if (a > 0) {
      const double w = tables.in_weight[a][d];
      std::uint64_t m = u_mask;
      while (m) {
        const int j = std::countr_zero(m);
        phi[j] += contrib * w;
        m &= m - 1;
      }
    }
    if (d > 0) {
      const double w = tables.out_weight[a][d];
      std::uint64_t m = v_mask;
      while (m) {
        const int j = std::countr_zero(m);
        phi[j] -= contrib * w;
        m &= m - 1;
      }
    }
    return;
  }

  const std::uint64_t bit = std::uint64_t{1} << nd.feature;
  const bool x_left = x[nd.feature] <= nd.threshold;
  const bool b_left = bg[nd.feature] <= nd.threshold;
  if (x_left == b_left) {
    tree_shap_walk(tree, x_left ? nd.left : nd.right, x, bg, u_mask, v_mask, scale, tables, phi);
    return;
  }
  // Paths diverge: following x requires the feature in the coalition,
  // following the background requires it out. Contradictory requirements
  // prune the branch.
  if (!(v_mask & bit))
    tree_shap_walk(tree, x_left ? nd.left : nd.right, x, bg, u_mask | bit, v_mask, scale, tables,
                   phi);
  if (!(u_mask & bit))
    tree_shap_walk(tree, b_left ? nd.left : nd.right, x, bg, u_mask, v_mask | bit, scale, tables,
                   phi);
}

}  // namespace detail

inline ShapExplanation shap_values(const GbmModel& model, const std::vector<double>& x,
                                   const Matrix& background) {
  if (background.rows() == 0) throw DataError("shap_values: empty background");
  const std::size_t p = x.size();
  if (background.cols() != p) throw DataError("shap_values: dimension mismatch");
  if (p > 64) throw DataError("shap_values: more than 64 features");

  const detail::AndGameTables tables(p);
  ShapExplanation out;
  out.phi.assign(p, 0.0);
  std::vector<double> bg_row(p);
  for (std::size_t b = 0; b < background.rows(); ++b) {
    const double* bg = background.row_ptr(b);
    for (const RegressionTree& tree : model.trees)
      detail::tree_shap_walk(tree, 0, x, bg, 0, 0, model.learning_rate, tables, out.phi);
    bg_row.assign(bg, bg + p);
    out.base += model.predict(bg_row);
  }
  const double inv = 1.0 / static_cast<double>(background.rows());
  for (double& v : out.phi) v *= inv;
  out.base *= inv;
  return out;
}

// Brute-force interventional Shapley values by coalition enumeration.
// Reference implementation for p <= 12.
inline std::vector<double> exact_shapley_oracle(const GbmModel& model,
                                                const std::vector<double>& x,
                                                const Matrix& background) {
  const std::size_t p = x.size();
  if (p > 12) throw DataError("exact_shapley_oracle: p too large (limit 12)");
  if (background.rows() == 0) throw DataError("exact_shapley_oracle: empty background");
  if (background.cols() != p) throw DataError("exact_shapley_oracle: dimension mismatch");

  const std::size_t n_coalitions = std::size_t{1} << p;
  std::vector<double> value(n_coalitions, 0.0);
  std::vector<double> z(p);
  for (std::size_t b = 0; b < background.rows(); ++b) {
    const double* bg = background.row_ptr(b);
    for (std::size_t mask = 0; mask < n_coalitions; ++mask) {
      for (std::size_t j = 0; j < p; ++j) z[j] = (mask >> j) & 1 ? x[j] : bg[j];
      value[mask] += model.predict(z);
    }
  }
  const double inv = 1.0 / static_cast<double>(background.rows());
  for (double& v : value) v *= inv;

  std::vector<double> phi(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    const std::size_t bit = std::size_t{1} << j;
    for (std::size_t mask = 0; mask < n_coalitions; ++mask) {
      if (mask & bit) continue;
      const std::size_t s = static_cast<std::size_t>(std::popcount(mask));
      phi[j] += detail::shapley_weight(p, s) * (value[mask | bit] - value[mask]);
    }
  }
  return phi;
}

// ---------------------------------------------------------------------------
// Permutation feature importance
// ---------------------------------------------------------------------------

enum class PfiMetric { LogLoss, ErrorRate };

struct FeatureImportance {
  std::vector<double> mean;  // metric increase when the column is permuted
  std::vector<double> sd;
};

inline FeatureImportance permutation_importance(const GbmModel& model, const BinaryTask& task,
                                                PfiMetric metric, std::size_t n_repeats,
                                                std::uint64_t seed) {
  const std::size_t n = task.x.rows();
  const std::size_t p = task.x.cols();
  if (n == 0) throw DataError("permutation_importance: empty task");
  if (n_repeats == 0) throw DataError("permutation_importance: n_repeats must be positive");

  const std::vector<double> unit_weight(n, 1.0);
  auto eval = [&](const Matrix& x) {
    return metric == PfiMetric::LogLoss ? log_loss(model, x, task.labels, unit_weight)
                                        : error_rate(model, x, task.labels);
  };
  const double baseline = eval(task.x);

  FeatureImportance out;
  out.mean.assign(p, 0.0);
  out.sd.assign(p, 0.0);
  Matrix permuted = task.x;
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> samples(n_repeats);
    for (std::size_t r = 0; r < n_repeats; ++r) {
      Rng rng = Rng::substream(seed, j * 1000003ULL + r);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (std::size_t i = 0; i < n; ++i) permuted(i, j) = task.x(perm[i], j);
      samples[r] = eval(permuted) - baseline;
    }
    for (std::size_t i = 0; i < n; ++i) permuted(i, j) = task.x(i, j);
    double mean = std::accumulate(samples.begin(), samples.end(), 0.0) /
                  static_cast<double>(n_repeats);
    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    out.mean[j] = mean;
    out.sd[j] = n_repeats > 1 ? std::sqrt(var / static_cast<double>(n_repeats - 1)) : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary table
// ---------------------------------------------------------------------------

struct ShapSummary {
  std::vector<std::string> feature_order;  // descending mean |phi|
  std::vector<std::size_t> feature_index;  // original column index per output column
  Matrix phi;                              // n x p, columns in feature_order
  Matrix values;                           // matching feature values
  double base = 0.0;
};

inline ShapSummary shap_summary(const GbmModel& model, const Matrix& rows,
                                const Matrix& background, unsigned n_threads = 1) {
  const std::size_t n = rows.rows();
  const std::size_t p = rows.cols();
  Matrix raw_phi(n, p);
  double base = 0.0;
  std::vector<double> bases(n, 0.0);
  parallel_for(n, n_threads, [&](std::size_t i) {
    std::vector<double> x(rows.row_ptr(i), rows.row_ptr(i) + p);
    const ShapExplanation ex = shap_values(model, x, background);
    std::copy(ex.phi.begin(), ex.phi.end(), raw_phi.row_ptr(i));
    bases[i] = ex.base;
  });
  if (n > 0) base = bases[0];

  std::vector<double> mean_abs(p, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) mean_abs[j] += std::abs(raw_phi(i, j));
  for (double& v : mean_abs) v /= std::max<std::size_t>(n, 1);

  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_abs[a] > mean_abs[b]; });

  ShapSummary summary;
  summary.base = base;
  summary.feature_index = order;
  summary.phi = Matrix(n, p);
  summary.values = Matrix(n, p);
  for (std::size_t j = 0; j < p; ++j) {
    summary.feature_order.push_back(model.feature_names.empty()
                                        ? "f" + std::to_string(order[j])
                                        : model.feature_names[order[j]]);
    for (std::size_t i = 0; i < n; ++i) {
      summary.phi(i, j) = raw_phi(i, order[j]);
      summary.values(i, j) = rows(i, order[j]);
    }
  }
  return summary;
}

// CSV layout: p SHAP columns, p feature-value columns, one base column.
inline CsvTable shap_summary_table(const ShapSummary& summary) {
  CsvTable table;
  for (const std::string& f : summary.feature_order) table.header.push_back("shap_" + f);
  for (const std::string& f : summary.feature_order) table.header.push_back("value_" + f);
  table.header.push_back("base_value");
  const std::size_t n = summary.phi.rows();
  const std::size_t p = summary.phi.cols();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> row;
    row.reserve(2 * p + 1);
    for (std::size_t j = 0; j < p; ++j) row.push_back(format_double(summary.phi(i, j)));
    for (std::size_t j = 0; j < p; ++j) row.push_back(format_double(summary.values(i, j)));
    row.push_back(format_double(summary.base));
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace conset
