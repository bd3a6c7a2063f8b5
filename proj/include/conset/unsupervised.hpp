#pragma once

// Tree-based dissimilarity and k-medoids clustering.
//
// A classification forest separates the observed covariate rows from
// synthetic rows drawn column-wise from the empirical marginals (so the
// synthetic part keeps the marginals but loses the dependence structure).
// The proximity of two observed rows is the fraction of trees in which they
// land in the same terminal node; dissimilarity is sqrt(1 - proximity).
// PAM (BUILD + SWAP) clusters the precomputed dissimilarity, and position
// profiles report the category mix inside each cluster.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "conset/common.hpp"
#include "conset/core.hpp"
#include "conset/parallel.hpp"
#include "conset/rng.hpp"

namespace conset {

// Packed symmetric matrix with a fixed diagonal; stores the strict upper
// triangle only.
template <typename T>
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  SymmetricMatrix(std::size_t n, T diag, T fill = T{})
      : n_(n), diag_(diag), tri_(n > 1 ? n * (n - 1) / 2 : 0, fill) {}

  std::size_t size() const { return n_; }
  T diag() const { return diag_; }

  T at(std::size_t i, std::size_t j) const {
    if (i == j) return diag_;
    if (i > j) std::swap(i, j);
    return tri_[index(i, j)];
  }
  void set(std::size_t i, std::size_t j, T v) {
    if (i == j) return;
    if (i > j) std::swap(i, j);
    tri_[index(i, j)] = v;
  }

  std::vector<T>& raw() { return tri_; }
  const std::vector<T>& raw() const { return tri_; }

 private:
  std::size_t index(std::size_t i, std::size_t j) const {
    return i * (n_ - 1) - i * (i - 1) / 2 + (j - i - 1);
  }
  std::size_t n_ = 0;
  T diag_{};
  std::vector<T> tri_;
};

struct ProximityMatrix {
  SymmetricMatrix<float> values;  // diagonal fixed at 1
  std::size_t n_trees = 0;

  std::size_t size() const { return values.size(); }
  double at(std::size_t i, std::size_t j) const { return values.at(i, j); }
};

using DissimilarityMatrix = SymmetricMatrix<float>;  // diagonal fixed at 0

inline DissimilarityMatrix dissimilarity_from_proximity(const ProximityMatrix& prox) {
  DissimilarityMatrix d(prox.size(), 0.0f);
  for (std::size_t i = 0; i < prox.size(); ++i)
    for (std::size_t j = i + 1; j < prox.size(); ++j)
      d.set(i, j, std::sqrt(std::max(0.0f, 1.0f - static_cast<float>(prox.at(i, j)))));
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic contrast sample
// ---------------------------------------------------------------------------

struct ContrastSample {
  Matrix rows;             // 2n x p: originals first, then synthetic
  std::vector<int> labels; // 1 = original, 0 = synthetic
};

inline ContrastSample synthetic_contrast(const Matrix& rows, std::uint64_t seed) {
  const std::size_t n = rows.rows();
  const std::size_t p = rows.cols();
  if (n < 2) throw DataError("synthetic_contrast: need at least 2 rows");
  ContrastSample out;
  out.rows = Matrix(2 * n, p);
  out.labels.assign(2 * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(rows.row_ptr(i), rows.row_ptr(i) + p, out.rows.row_ptr(i));
    out.labels[i] = 1;
  }
  Rng rng = Rng::substream(seed, 0xC0717A57);
  for (std::size_t i = 0; i < n; ++i) {
    double* dst = out.rows.row_ptr(n + i);
    for (std::size_t j = 0; j < p; ++j)
      dst[j] = rows(static_cast<std::size_t>(rng.uniform_int(n)), j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proximity forest
// ---------------------------------------------------------------------------

struct ForestOptions {
  std::size_t n_trees = 500;
  int max_depth = 0;     // 0 = unlimited
  std::size_t mtry = 0;  // 0 = ceil(sqrt(p))
  std::uint64_t seed = 0;
  unsigned n_threads = 1;
};

namespace detail {

struct ClassTreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  bool is_leaf() const { return left < 0; }
};

struct GiniSplit {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Best gini split among `mtry` randomly drawn features. Features with few
// distinct values are evaluated by bucket counting, the general case sorts.
inline GiniSplit best_gini_split(const Matrix& x, const std::vector<int>& labels,
                                 const std::vector<std::size_t>& rows, std::size_t mtry,
                                 Rng& rng) {
  const std::size_t p = x.cols();
  const std::size_t n = rows.size();
  GiniSplit best;

  std::size_t pos_total = 0;
  for (std::size_t i : rows) pos_total += static_cast<std::size_t>(labels[i]);
  if (pos_total == 0 || pos_total == n) return best;  // pure node

  const double parent_impurity =
      static_cast<double>(n) -
      (static_cast<double>(pos_total) * pos_total +
       static_cast<double>(n - pos_total) * (n - pos_total)) /
          static_cast<double>(n);

  // Sample mtry distinct feature indices.
  std::vector<std::size_t> features(p);
  std::iota(features.begin(), features.end(), 0);
  for (std::size_t t = 0; t < std::min(mtry, p); ++t) {
    const std::size_t j = t + static_cast<std::size_t>(rng.uniform_int(p - t));
    std::swap(features[t], features[j]);
  }
  features.resize(std::min(mtry, p));

  std::vector<std::pair<double, int>> sorted;
  for (std::size_t f : features) {
    // Try bucket counting over a small set of distinct values first.
    constexpr std::size_t kMaxBuckets = 16;
    double distinct[kMaxBuckets];
    std::size_t bucket_n[kMaxBuckets], bucket_pos[kMaxBuckets];
    std::size_t n_distinct = 0;
    bool small = true;
    for (std::size_t i : rows) {
      const double v = x(i, f);
      std::size_t b = 0;
      while (b < n_distinct && distinct[b] != v) ++b;
      if (b == n_distinct) {
        if (n_distinct == kMaxBuckets) {
          small = false;
          break;
        }
        distinct[n_distinct] = v;
        bucket_n[n_distinct] = 0;
        bucket_pos[n_distinct] = 0;
        ++n_distinct;
      }
      bucket_n[b] += 1;
      bucket_pos[b] += static_cast<std::size_t>(labels[i]);
    }

    auto consider = [&](double threshold, std::size_t n_left, std::size_t pos_left) {
      if (n_left == 0 || n_left == n) return;
      const std::size_t n_right = n - n_left;
      const std::size_t pos_right = pos_total - pos_left;
      const double imp_left =
          static_cast<double>(n_left) -
          (static_cast<double>(pos_left) * pos_left +
           static_cast<double>(n_left - pos_left) * (n_left - pos_left)) /
              static_cast<double>(n_left);
      const double imp_right =
          static_cast<double>(n_right) -
          (static_cast<double>(pos_right) * pos_right +
           static_cast<double>(n_right - pos_right) * (n_right - pos_right)) /
              static_cast<double>(n_right);
      const double gain = parent_impurity - imp_left - imp_right;
      if (gain > best.gain + 1e-12) {
        best.found = true;
        best.feature = static_cast<int>(f);
        best.threshold = threshold;
        best.gain = gain;
      }
    };

    if (small) {
      if (n_distinct < 2) continue;
      std::vector<std::size_t> order(n_distinct);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return distinct[a] < distinct[b]; });
      std::size_t n_left = 0, pos_left = 0;
      for (std::size_t t = 0; t + 1 < n_distinct; ++t) {
        n_left += bucket_n[order[t]];
        pos_left += bucket_pos[order[t]];
        consider(0.5 * (distinct[order[t]] + distinct[order[t + 1]]), n_left, pos_left);
      }
    } else {
      sorted.clear();
      sorted.reserve(n);
      for (std::size_t i : rows) sorted.emplace_back(x(i, f), labels[i]);
      std::sort(sorted.begin(), sorted.end());
      std::size_t n_left = 0, pos_left = 0;
      for (std::size_t t = 0; t + 1 < n; ++t) {
        n_left += 1;
        pos_left += static_cast<std::size_t>(sorted[t].second);
        if (sorted[t].first == sorted[t + 1].first) continue;
        consider(0.5 * (sorted[t].first + sorted[t + 1].first), n_left, pos_left);
      }
    }
  }
  return best;
}

inline int grow_gini_node(std::vector<ClassTreeNode>& nodes, const Matrix& x,
                          const std::vector<int>& labels, std::vector<std::size_t>& rows,
                          int depth, int max_depth, std::size_t mtry, Rng& rng) {
  const int node_id = static_cast<int>(nodes.size());
  nodes.emplace_back();

  GiniSplit split;
  if (rows.size() >= 2 && (max_depth == 0 || depth < max_depth))
    split = best_gini_split(x, labels, rows, mtry, rng);
  if (!split.found) return node_id;  // leaf

  std::vector<std::size_t> left_rows, right_rows;
  for (std::size_t i : rows) {
    if (x(i, split.feature) <= split.threshold) left_rows.push_back(i);
    else right_rows.push_back(i);
  }
  rows.clear();
  rows.shrink_to_fit();

  nodes[node_id].feature = split.feature;
  nodes[node_id].threshold = split.threshold;
  const int left = grow_gini_node(nodes, x, labels, left_rows, depth + 1, max_depth, mtry, rng);
  nodes[node_id].left = left;
  const int right = grow_gini_node(nodes, x, labels, right_rows, depth + 1, max_depth, mtry, rng);
  nodes[node_id].right = right;
  return node_id;
}

inline int tree_leaf_id(const std::vector<ClassTreeNode>& nodes, const double* row) {
  int node = 0;
  while (!nodes[node].is_leaf())
    node = row[nodes[node].feature] <= nodes[node].threshold ? nodes[node].left
                                                             : nodes[node].right;
  return node;
}

}  // namespace detail

inline ProximityMatrix proximity_forest(const Matrix& rows, const ForestOptions& opts = {}) {
  const std::size_t n = rows.rows();
  const std::size_t p = rows.cols();
  if (n < 2) throw DataError("proximity_forest: need at least 2 rows");
  if (opts.n_trees == 0 || opts.n_trees > 65535)
    throw DataError("proximity_forest: n_trees must be in [1, 65535]");
  const std::size_t mtry =
      opts.mtry > 0 ? opts.mtry
                    : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))));

  // Leaf id of every original row in every tree; trees are independent tasks.
  std::vector<std::vector<int>> leaf_ids(opts.n_trees);
  parallel_for(opts.n_trees, opts.n_threads, [&](std::size_t t) {
    Rng rng = Rng::substream(opts.seed, t);
    const ContrastSample sample = synthetic_contrast(rows, opts.seed ^ (t * 0x9E3779B97F4A7C15ULL));
    // Bootstrap over the labeled 2n rows.
    std::vector<std::size_t> boot(sample.rows.rows());
    for (std::size_t& b : boot)
      b = static_cast<std::size_t>(rng.uniform_int(sample.rows.rows()));
    std::vector<detail::ClassTreeNode> nodes;
    detail::grow_gini_node(nodes, sample.rows, sample.labels, boot, 0, opts.max_depth, mtry, rng);
    std::vector<int>& ids = leaf_ids[t];
    ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = detail::tree_leaf_id(nodes, rows.row_ptr(i));
  });

  // Co-occurrence counts, merged tree by tree.
  SymmetricMatrix<std::uint16_t> counts(n, 0);
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t t = 0; t < opts.n_trees; ++t) {
    const std::vector<int>& ids = leaf_ids[t];
    const int max_id = *std::max_element(ids.begin(), ids.end());
    groups.assign(static_cast<std::size_t>(max_id) + 1, {});
    for (std::size_t i = 0; i < n; ++i) groups[static_cast<std::size_t>(ids[i])].push_back(i);
    for (const auto& members : groups) {
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b)
          counts.set(members[a], members[b],
                     static_cast<std::uint16_t>(counts.at(members[a], members[b]) + 1));
    }
  }

  ProximityMatrix prox;
  prox.values = SymmetricMatrix<float>(n, 1.0f);
  prox.n_trees = opts.n_trees;
  const float inv = 1.0f / static_cast<float>(opts.n_trees);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      prox.values.set(i, j, static_cast<float>(counts.at(i, j)) * inv);
  return prox;
}

// ---------------------------------------------------------------------------
// PAM (k-medoids)
// ---------------------------------------------------------------------------

struct Clustering {
  std::vector<std::size_t> assignment;  // cluster id per row
  std::vector<std::size_t> medoids;     // row index per cluster
  std::size_t k = 0;
};

namespace detail {

// Rows at zero dissimilarity are indistinguishable to PAM; count the
// equivalence classes.
inline std::size_t count_distinct_rows(const DissimilarityMatrix& d) {
  const std::size_t n = d.size();
  std::vector<bool> duplicate(n, false);
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (duplicate[i]) continue;
    ++distinct;
    for (std::size_t j = i + 1; j < n; ++j)
      if (!duplicate[j] && d.at(i, j) == 0.0f) duplicate[j] = true;
  }
  return distinct;
}

}  // namespace detail

inline Clustering pam_cluster(const DissimilarityMatrix& d, std::size_t k,
                              [[maybe_unused]] std::uint64_t seed) {
  // BUILD and SWAP are deterministic (ties broken by index); the seed is
  // part of the interface for provenance only.
  const std::size_t n = d.size();
  if (k < 2) throw DataError("pam_cluster: k must be at least 2");
  if (k > n) throw DataError("pam_cluster: k exceeds number of rows");
  if (k > detail::count_distinct_rows(d))
    throw DataError("pam_cluster: k exceeds number of distinct rows");

  std::vector<bool> is_medoid(n, false);
  std::vector<std::size_t> medoids;

  // BUILD: start from the most central point, then greedily add the point
  // that reduces the total dissimilarity most.
  std::vector<double> nearest(n, 0.0);
  {
    std::size_t best_i = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double cost = 0.0;
      for (std::size_t j = 0; j < n; ++j) cost += d.at(i, j);
      if (cost < best_cost) {
        best_cost = cost;
        best_i = i;
      }
    }
    medoids.push_back(best_i);
    is_medoid[best_i] = true;
    for (std::size_t j = 0; j < n; ++j) nearest[j] = d.at(best_i, j);
  }
  while (medoids.size() < k) {
    std::size_t best_c = n;
    double best_gain = -1.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (is_medoid[c]) continue;
      bool dup = false;
      for (std::size_t m : medoids)
        if (d.at(c, m) == 0.0f) { dup = true; break; }
      if (dup) continue;
      double gain = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double dj = d.at(c, j);
        if (dj < nearest[j]) gain += nearest[j] - dj;
      }
      if (gain > best_gain) {
        best_gain = gain;
        best_c = c;
      }
    }
    medoids.push_back(best_c);
    is_medoid[best_c] = true;
    for (std::size_t j = 0; j < n; ++j)
      nearest[j] = std::min(nearest[j], static_cast<double>(d.at(best_c, j)));
  }

  auto total_cost = [&](const std::vector<std::size_t>& meds) {
    double cost = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double dn = std::numeric_limits<double>::infinity();
      for (std::size_t m : meds) dn = std::min(dn, static_cast<double>(d.at(m, j)));
      cost += dn;
    }
    return cost;
  };

  // SWAP: apply the best improving (medoid, candidate) exchange until none
  // improves.
  double cost = total_cost(medoids);
  while (true) {
    double best_cost = cost;
    std::size_t best_slot = k, best_h = n;
    for (std::size_t slot = 0; slot < k; ++slot) {
      std::vector<std::size_t> trial = medoids;
      for (std::size_t h = 0; h < n; ++h) {
        if (is_medoid[h]) continue;
        bool dup = false;
        for (std::size_t s = 0; s < k; ++s)
          if (s != slot && d.at(h, medoids[s]) == 0.0f) { dup = true; break; }
        if (dup) continue;
        trial[slot] = h;
        const double c = total_cost(trial);
        if (c < best_cost - 1e-12) {
          best_cost = c;
          best_slot = slot;
          best_h = h;
        }
      }
    }
    if (best_slot == k) break;
    is_medoid[medoids[best_slot]] = false;
    is_medoid[best_h] = true;
    medoids[best_slot] = best_h;
    cost = best_cost;
  }

  Clustering result;
  result.k = k;
  result.medoids = medoids;
  result.assignment.assign(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dj = d.at(medoids[c], j);
      if (dj < best_d) {
        best_d = dj;
        best = c;
      }
    }
    result.assignment[j] = best;
  }
  return result;
}

inline double pam_objective(const DissimilarityMatrix& d, const Clustering& clustering) {
  double cost = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j)
    cost += d.at(clustering.medoids[clustering.assignment[j]], j);
  return cost;
}

// ---------------------------------------------------------------------------
// Position profiles
// ---------------------------------------------------------------------------

struct PositionProfile {
  Matrix proportions;  // k x K, rows sum to 1
  std::vector<std::size_t> cluster_sizes;
};

inline PositionProfile position_profile(const Clustering& clustering, const Dataset& data) {
  if (clustering.assignment.size() != data.n())
    throw DataError("position_profile: assignment length mismatch");
  const std::size_t K = data.num_categories();
  PositionProfile profile;
  profile.proportions = Matrix(clustering.k, K);
  profile.cluster_sizes.assign(clustering.k, 0);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const std::size_t c = clustering.assignment[i];
    profile.proportions(c, data.observations[i].category) += 1.0;
    profile.cluster_sizes[c] += 1;
  }
  for (std::size_t c = 0; c < clustering.k; ++c) {
    if (profile.cluster_sizes[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(profile.cluster_sizes[c]);
    for (std::size_t q = 0; q < K; ++q) profile.proportions(c, q) *= inv;
  }
  return profile;
}

// Chance-corrected partition agreement, used to score cluster recovery.
inline double adjusted_rand_index(const std::vector<std::size_t>& a,
                                  const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw DataError("adjusted_rand_index: length mismatch");
  const std::size_t n = a.size();
  const std::size_t ka = a.empty() ? 0 : *std::max_element(a.begin(), a.end()) + 1;
  const std::size_t kb = b.empty() ? 0 : *std::max_element(b.begin(), b.end()) + 1;
  Matrix table(ka, kb);
  std::vector<double> row_sum(ka, 0.0), col_sum(kb, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    table(a[i], b[i]) += 1.0;
    row_sum[a[i]] += 1.0;
    col_sum[b[i]] += 1.0;
  }
  auto choose2 = [](double m) { return m * (m - 1.0) / 2.0; };
  double sum_cells = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (std::size_t i = 0; i < ka; ++i)
    for (std::size_t j = 0; j < kb; ++j) sum_cells += choose2(table(i, j));
  for (double r : row_sum) sum_rows += choose2(r);
  for (double c : col_sum) sum_cols += choose2(c);
  const double expected = sum_rows * sum_cols / choose2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (sum_cells - expected) / (max_index - expected);
}

}  // namespace conset
