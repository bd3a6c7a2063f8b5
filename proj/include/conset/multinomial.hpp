#pragma once

// Multinomial estimation over set categories.
//
// Two layers: the marginal MLE (relative frequencies of the categories) and a
// multinomial logit with category-specific coefficient vectors, fitted by
// maximizing
//
//     sum_i log P(y_i | x_i)  -  lambda * sum_{j>=1} ||beta[., j]||_2
//
// The group penalty ties all K coefficients of one covariate together, so a
// covariate leaves the model entirely or not at all; the intercept column is
// never penalized. Identifiability comes from the symmetric side constraint
// (every column of beta sums to zero), imposed by centering. The softmax is
// invariant under per-column shifts while centering minimizes each column's
// norm, so the unconstrained optimum is automatically centered.
//
// Optimizer: proximal block-coordinate ascent over covariate columns with a
// quadratic majorization of the smooth part (initial curvature bound
// 0.25 * ||x_col||^2, doubled on backtracking) and a group soft-threshold
// update per column.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "conset/common.hpp"
#include "conset/core.hpp"
#include "conset/parallel.hpp"
#include "conset/rng.hpp"

namespace conset {

// ---------------------------------------------------------------------------
// Marginal MLE
// ---------------------------------------------------------------------------

struct ProportionEstimate {
  std::vector<double> pi;
  std::size_t n = 0;
};

inline ProportionEstimate mle_proportions(const CountStatistic& counts) {
  if (counts.n == 0) throw DataError("mle_proportions: empty sample");
  ProportionEstimate est;
  est.n = counts.n;
  est.pi.reserve(counts.counts.size());
  for (std::size_t c : counts.counts)
    est.pi.push_back(static_cast<double>(c) / static_cast<double>(counts.n));
  return est;
}

// Multinomial log-likelihood of a probability vector given counts, up to the
// multinomial coefficient. Zero counts contribute nothing even at pi = 0.
inline double multinomial_log_likelihood(const std::vector<double>& pi,
                                         const std::vector<std::size_t>& counts) {
  double ll = 0.0;
  for (std::size_t q = 0; q < counts.size(); ++q) {
    if (counts[q] == 0) continue;
    ll += static_cast<double>(counts[q]) * std::log(pi[q]);
  }
  return ll;
}

// ---------------------------------------------------------------------------
// Logit model
// ---------------------------------------------------------------------------

struct LogitModel {
  Matrix beta;  // K x p, row q = beta_q, column 0 = intercept
  double lambda = 0.0;
  bool converged = false;
  bool separation_warning = false;
  std::vector<double> objective_trace;  // penalized objective per sweep
  std::vector<std::string> category_labels;
  std::vector<std::string> covariate_names;
  std::vector<std::string> warnings;
};

// Softmax over x^T beta_q with log-sum-exp stabilization.
inline std::vector<double> predict_probabilities(const Matrix& beta, const std::vector<double>& x) {
  const std::size_t K = beta.rows();
  const std::size_t p = beta.cols();
  if (x.size() != p) throw DataError("predict_probabilities: dimension mismatch");
  std::vector<double> eta(K, 0.0);
  for (std::size_t q = 0; q < K; ++q) {
    const double* b = beta.row_ptr(q);
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) s += b[j] * x[j];
    eta[q] = s;
  }
  const double m = *std::max_element(eta.begin(), eta.end());
  double denom = 0.0;
  for (std::size_t q = 0; q < K; ++q) {
    eta[q] = std::exp(eta[q] - m);
    denom += eta[q];
  }
  for (std::size_t q = 0; q < K; ++q) eta[q] /= denom;
  return eta;
}

inline std::vector<double> predict_probabilities(const LogitModel& model,
                                                 const std::vector<double>& x) {
  return predict_probabilities(model.beta, x);
}

inline double log_likelihood(const Matrix& beta, const Dataset& data) {
  double ll = 0.0;
  const std::size_t K = beta.rows();
  std::vector<double> eta(K);
  for (const Observation& obs : data.observations) {
    if (obs.covariates.size() != beta.cols())
      throw DataError("log_likelihood: dimension mismatch");
    for (std::size_t q = 0; q < K; ++q) {
      const double* b = beta.row_ptr(q);
      double s = 0.0;
      for (std::size_t j = 0; j < beta.cols(); ++j) s += b[j] * obs.covariates[j];
      eta[q] = s;
    }
    const double m = *std::max_element(eta.begin(), eta.end());
    double denom = 0.0;
    for (std::size_t q = 0; q < K; ++q) denom += std::exp(eta[q] - m);
    ll += (eta[obs.category] - m) - std::log(denom);
  }
  return ll;
}

inline double log_likelihood(const LogitModel& model, const Dataset& data) {
  return log_likelihood(model.beta, data);
}

// d l / d beta[q][j] = sum_i x[i][j] * (1{y_i = q} - P(q | x_i))
inline Matrix gradient(const Matrix& beta, const Dataset& data) {
  const std::size_t K = beta.rows();
  const std::size_t p = beta.cols();
  Matrix grad(K, p);
  for (const Observation& obs : data.observations) {
    const std::vector<double> probs = predict_probabilities(beta, obs.covariates);
    for (std::size_t q = 0; q < K; ++q) {
      const double r = (obs.category == q ? 1.0 : 0.0) - probs[q];
      double* g = grad.row_ptr(q);
      for (std::size_t j = 0; j < p; ++j) g[j] += r * obs.covariates[j];
    }
  }
  return grad;
}

inline Matrix gradient(const LogitModel& model, const Dataset& data) {
  return gradient(model.beta, data);
}

// Group penalty J(beta) = sum over non-intercept columns of the Euclidean
// norm across categories.
inline double group_penalty(const Matrix& beta) {
  double J = 0.0;
  for (std::size_t j = 1; j < beta.cols(); ++j) {
    double ss = 0.0;
    for (std::size_t q = 0; q < beta.rows(); ++q) ss += beta(q, j) * beta(q, j);
    J += std::sqrt(ss);
  }
  return J;
}

// Total deviance -2 * log-likelihood.
inline double deviance(const Matrix& beta, const Dataset& data) {
  return -2.0 * log_likelihood(beta, data);
}

// ---------------------------------------------------------------------------
// Penalized fit
// ---------------------------------------------------------------------------

struct FitOptions {
  std::size_t max_iter = 10000;  // full sweeps over the columns
  double tol = 1e-7;             // max absolute parameter change per sweep
  const Matrix* init = nullptr;  // warm start (K x p), default zeros
};

namespace detail {

// Scratch state for the block-coordinate solver. eta holds X * beta and is
// updated incrementally as columns change.
struct FitState {
  const Dataset& data;
  Matrix beta;              // K x p
  std::vector<double> eta;  // n x K, row-major
  std::size_t n, K, p;

  FitState(const Dataset& d, const Matrix& init)
      : data(d), beta(init), n(d.n()), K(d.num_categories()), p(d.num_covariates()) {
    eta.assign(n * K, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& x = data.observations[i].covariates;
      double* e = eta.data() + i * K;
      for (std::size_t q = 0; q < K; ++q) {
        const double* b = beta.row_ptr(q);
        double s = 0.0;
        for (std::size_t j = 0; j < p; ++j) s += b[j] * x[j];
        e[q] = s;
      }
    }
  }

  // Log-likelihood from eta; optionally also the gradient of column j and
  // the per-row probabilities are folded into one pass.
  double log_lik_and_column_grad(std::size_t j, std::vector<double>* grad_out) const {
    double ll = 0.0;
    if (grad_out) grad_out->assign(K, 0.0);
    std::vector<double> probs(K);
    for (std::size_t i = 0; i < n; ++i) {
      const double* e = eta.data() + i * K;
      double m = e[0];
      for (std::size_t q = 1; q < K; ++q) m = std::max(m, e[q]);
      double denom = 0.0;
      for (std::size_t q = 0; q < K; ++q) {
        probs[q] = std::exp(e[q] - m);
        denom += probs[q];
      }
      const std::size_t y = data.observations[i].category;
      ll += (e[y] - m) - std::log(denom);
      if (grad_out) {
        const double xij = data.observations[i].covariates[j];
        if (xij != 0.0) {
          for (std::size_t q = 0; q < K; ++q) {
            const double pq = probs[q] / denom;
            (*grad_out)[q] += xij * ((y == q ? 1.0 : 0.0) - pq);
          }
        }
      }
    }
    return ll;
  }

  void apply_column_delta(std::size_t j, const std::vector<double>& delta) {
    for (std::size_t i = 0; i < n; ++i) {
      const double xij = data.observations[i].covariates[j];
      if (xij == 0.0) continue;
      double* e = eta.data() + i * K;
      for (std::size_t q = 0; q < K; ++q) e[q] += xij * delta[q];
    }
  }
};

}  // namespace detail

inline LogitModel fit_penalized(const Dataset& data, double lambda, const FitOptions& opts = {}) {
  if (lambda < 0.0) throw DataError("fit_penalized: negative lambda");
  if (data.n() == 0) throw DataError("fit_penalized: empty dataset");
  const std::size_t K = data.num_categories();
  const std::size_t p = data.num_covariates();

  LogitModel model;
  model.lambda = lambda;
  model.covariate_names = data.covariate_names;
  for (CategoryId q = 0; q < K; ++q)
    model.category_labels.push_back(format_set_literal(data.rps.category(q), data.options));
  if (data.n() < K)
    model.warnings.push_back("fewer observations than categories (n=" + std::to_string(data.n()) +
                             ", K=" + std::to_string(K) + ")");

  Matrix init(K, p, 0.0);
  if (opts.init) {
    if (opts.init->rows() != K || opts.init->cols() != p)
      throw DataError("fit_penalized: init dimension mismatch");
    init = *opts.init;
  }
  detail::FitState state(data, init);

  // Initial curvature bound per column: 0.25 * ||x_col||^2, doubled whenever
  // a proposed step fails to increase the penalized objective.
  std::vector<double> curvature(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double ss = 0.0;
    for (const Observation& obs : data.observations) ss += obs.covariates[j] * obs.covariates[j];
    curvature[j] = std::max(0.25 * ss, 1e-12);
  }

  std::vector<double> col_norms(p, 0.0);
  auto column_norm = [&](std::size_t j) {
    double ss = 0.0;
    for (std::size_t q = 0; q < K; ++q) ss += state.beta(q, j) * state.beta(q, j);
    return std::sqrt(ss);
  };
  for (std::size_t j = 0; j < p; ++j) col_norms[j] = column_norm(j);

  auto penalty_total = [&]() {
    double J = 0.0;
    for (std::size_t j = 1; j < p; ++j) J += col_norms[j];
    return J;
  };

  double cur_ll = state.log_lik_and_column_grad(0, nullptr);
  constexpr double kSlack = 1e-10;

  std::vector<double> grad_col(K), proposal(K), delta(K), undo(K);
  bool converged = false;

  for (std::size_t sweep = 0; sweep < opts.max_iter; ++sweep) {
    double max_change = 0.0;

    for (std::size_t j = 0; j < p; ++j) {
      cur_ll = state.log_lik_and_column_grad(j, &grad_col);
      double L = curvature[j];

      for (int attempt = 0; attempt < 60; ++attempt) {
        // Proximal step on column j.
        double znorm = 0.0;
        for (std::size_t q = 0; q < K; ++q) {
          proposal[q] = state.beta(q, j) + grad_col[q] / L;
          znorm += proposal[q] * proposal[q];
        }
        znorm = std::sqrt(znorm);
        if (j >= 1) {
          // Shrink factors within rounding error of zero snap the whole
          // group to exact zero, so lambda >= lambda_max gives bitwise-zero
          // coefficients instead of 1e-17 residue.
          const double shrink =
              (lambda > 0.0 && znorm > 0.0) ? std::max(0.0, 1.0 - lambda / (L * znorm)) : 1.0;
          if (lambda > 0.0 && (znorm == 0.0 || shrink <= 1e-12)) {
            for (std::size_t q = 0; q < K; ++q) proposal[q] = 0.0;
          } else {
            for (std::size_t q = 0; q < K; ++q) proposal[q] *= shrink;
          }
        }
        // Re-impose the symmetric constraint on the proposal. An all-zero
        // column stays exactly zero.
        double mean = 0.0;
        for (std::size_t q = 0; q < K; ++q) mean += proposal[q];
        mean /= static_cast<double>(K);
        bool all_zero = true;
        for (std::size_t q = 0; q < K; ++q)
          if (proposal[q] != 0.0) all_zero = false;
        if (!all_zero)
          for (std::size_t q = 0; q < K; ++q) proposal[q] -= mean;

        bool no_move = true;
        for (std::size_t q = 0; q < K; ++q) {
          delta[q] = proposal[q] - state.beta(q, j);
          if (delta[q] != 0.0) no_move = false;
        }
        if (no_move) break;

        const double old_norm = col_norms[j];
        double new_norm = 0.0;
        for (std::size_t q = 0; q < K; ++q) new_norm += proposal[q] * proposal[q];
        new_norm = std::sqrt(new_norm);

        state.apply_column_delta(j, delta);
        const double new_ll = state.log_lik_and_column_grad(j, nullptr);
        const double old_obj = cur_ll - (j >= 1 ? lambda * old_norm : 0.0);
        const double new_obj = new_ll - (j >= 1 ? lambda * new_norm : 0.0);

        if (new_obj + kSlack >= old_obj) {
          for (std::size_t q = 0; q < K; ++q) {
            max_change = std::max(max_change, std::abs(delta[q]));
            state.beta(q, j) = proposal[q];
          }
          col_norms[j] = new_norm;
          cur_ll = new_ll;
          break;
        }
        // Reject: roll eta back and retry with doubled curvature.
        for (std::size_t q = 0; q < K; ++q) undo[q] = -delta[q];
        state.apply_column_delta(j, undo);
        L *= 2.0;
        curvature[j] = L;
      }
    }

    model.objective_trace.push_back(cur_ll - lambda * penalty_total());
    if (max_change < opts.tol) {
      converged = true;
      break;
    }
  }

  // Prefer exact zeros: drop any group whose removal does not lower the
  // penalized objective. Groups carrying only numerical residue (possible
  // when a group activates transiently on the way to a null fit) are
  // eliminated bitwise; genuinely active groups never pass the test.
  if (lambda > 0.0) {
    for (std::size_t j = 1; j < p; ++j) {
      if (col_norms[j] == 0.0) continue;
      for (std::size_t q = 0; q < K; ++q) delta[q] = -state.beta(q, j);
      state.apply_column_delta(j, delta);
      const double zero_ll = state.log_lik_and_column_grad(j, nullptr);
      if (zero_ll >= cur_ll - lambda * col_norms[j] - 1e-12 * (1.0 + std::abs(cur_ll))) {
        for (std::size_t q = 0; q < K; ++q) state.beta(q, j) = 0.0;
        col_norms[j] = 0.0;
        cur_ll = zero_ll;
      } else {
        for (std::size_t q = 0; q < K; ++q) undo[q] = -delta[q];
        state.apply_column_delta(j, undo);
      }
    }
  }

  model.beta = std::move(state.beta);
  model.converged = converged;
  if (lambda == 0.0 && data.n() > 0) {
    // When every observation's own category is fitted almost perfectly the
    // unpenalized likelihood has its supremum at infinity and the reported
    // coefficients are only a stall point of the solver.
    double max_misfit = 0.0;
    for (const auto& obs : data.observations) {
      const std::vector<double> pi = predict_probabilities(model.beta, obs.covariates);
      max_misfit = std::max(max_misfit, 1.0 - pi[obs.category]);
    }
    if (max_misfit < 1e-2) {
      model.separation_warning = true;
      model.warnings.push_back("possible separation: all fitted class probabilities near 1");
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Regularization path and cross-validation
// ---------------------------------------------------------------------------

// Smallest lambda that keeps every non-intercept group at zero: the largest
// group gradient norm at the intercept-only fit.
inline double lambda_max(const Dataset& data) {
  FitOptions opts;
  opts.tol = 1e-10;
  const LogitModel null_fit = fit_penalized(data, std::numeric_limits<double>::max(), opts);
  const Matrix grad = gradient(null_fit.beta, data);
  double lmax = 0.0;
  for (std::size_t j = 1; j < grad.cols(); ++j) {
    double ss = 0.0;
    for (std::size_t q = 0; q < grad.rows(); ++q) ss += grad(q, j) * grad(q, j);
    lmax = std::max(lmax, std::sqrt(ss));
  }
  return lmax;
}

// Geometric grid from lambda_max down to ratio * lambda_max.
inline std::vector<double> lambda_path(const Dataset& data, std::size_t n_lambda, double ratio) {
  if (n_lambda < 1) throw DataError("lambda_path: need at least one grid point");
  if (ratio <= 0.0 || ratio > 1.0) throw DataError("lambda_path: ratio must be in (0, 1]");
  const double lmax = lambda_max(data);
  if (lmax <= 0.0) throw DataError("lambda_path: degenerate grid (lambda_max = 0)");
  std::vector<double> grid;
  grid.reserve(n_lambda);
  if (n_lambda == 1) {
    grid.push_back(lmax);
    return grid;
  }
  const double step = std::log(ratio) / static_cast<double>(n_lambda - 1);
  for (std::size_t t = 0; t < n_lambda; ++t)
    grid.push_back(lmax * std::exp(step * static_cast<double>(t)));
  return grid;
}

struct CvResult {
  std::vector<double> lambda_grid;
  std::vector<double> mean_deviance;  // per-observation deviance, mean across folds
  std::vector<double> se;             // standard error across folds
  double lambda_min = 0.0;
  double lambda_1se = 0.0;
  std::vector<std::size_t> fold_assignment;
};

// Stratified by category when every category has at least n_folds members,
// plain random otherwise.
inline std::vector<std::size_t> make_folds(const Dataset& data, std::size_t n_folds,
                                           std::uint64_t seed) {
  const std::size_t n = data.n();
  std::vector<std::size_t> fold(n, 0);
  const CountStatistic counts = count_statistics(data);
  const bool stratify =
      std::all_of(counts.counts.begin(), counts.counts.end(),
                  [&](std::size_t c) { return c >= n_folds; });
  Rng rng = Rng::substream(seed, 0xF01D);
  if (stratify) {
    std::vector<std::vector<std::size_t>> per_category(data.num_categories());
    for (std::size_t i = 0; i < n; ++i) per_category[data.observations[i].category].push_back(i);
    for (auto& members : per_category) {
      rng.shuffle(members);
      for (std::size_t r = 0; r < members.size(); ++r) fold[members[r]] = r % n_folds;
    }
  } else {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t r = 0; r < n; ++r) fold[order[r]] = r % n_folds;
  }
  return fold;
}

struct CvOptions {
  FitOptions fit;
  unsigned n_threads = 1;
};

inline CvResult cross_validate(const Dataset& data, const std::vector<double>& grid,
                               std::size_t n_folds, std::uint64_t seed,
                               const CvOptions& cv_opts = {}) {
  if (n_folds < 2) throw DataError("cross_validate: need at least 2 folds");
  if (grid.empty()) throw DataError("cross_validate: empty lambda grid");
  for (std::size_t t = 1; t < grid.size(); ++t)
    if (grid[t] >= grid[t - 1]) throw DataError("cross_validate: grid must be descending");

  CvResult result;
  result.lambda_grid = grid;
  result.fold_assignment = make_folds(data, n_folds, seed);

  // dev[fold][t]: per-observation deviance of fold's held-out rows at grid[t].
  std::vector<std::vector<double>> dev(n_folds, std::vector<double>(grid.size(), 0.0));

  parallel_for(n_folds, cv_opts.n_threads, [&](std::size_t f) {
    Dataset train{data.options, data.rps, {}, data.covariate_names};
    std::vector<const Observation*> held_out;
    for (std::size_t i = 0; i < data.n(); ++i) {
      if (result.fold_assignment[i] == f)
        held_out.push_back(&data.observations[i]);
      else
        train.observations.push_back(data.observations[i]);
    }
    Matrix warm(data.num_categories(), data.num_covariates(), 0.0);
    for (std::size_t t = 0; t < grid.size(); ++t) {
      FitOptions fo = cv_opts.fit;
      fo.init = &warm;
      const LogitModel fit = fit_penalized(train, grid[t], fo);
      warm = fit.beta;
      double d = 0.0;
      for (const Observation* obs : held_out) {
        const auto probs = predict_probabilities(fit.beta, obs->covariates);
        d += -2.0 * std::log(probs[obs->category]);
      }
      dev[f][t] = held_out.empty() ? 0.0 : d / static_cast<double>(held_out.size());
    }
  });

  result.mean_deviance.resize(grid.size());
  result.se.resize(grid.size());
  for (std::size_t t = 0; t < grid.size(); ++t) {
    double mean = 0.0;
    for (std::size_t f = 0; f < n_folds; ++f) mean += dev[f][t];
    mean /= static_cast<double>(n_folds);
    double var = 0.0;
    for (std::size_t f = 0; f < n_folds; ++f) var += (dev[f][t] - mean) * (dev[f][t] - mean);
    var /= static_cast<double>(n_folds - 1);
    result.mean_deviance[t] = mean;
    result.se[t] = std::sqrt(var / static_cast<double>(n_folds));
  }

  // Grid is descending, so the first index achieving the minimum is the most
  // regularized among ties.
  std::size_t t_min = 0;
  for (std::size_t t = 1; t < grid.size(); ++t)
    if (result.mean_deviance[t] < result.mean_deviance[t_min]) t_min = t;
  result.lambda_min = grid[t_min];

  const double threshold = result.mean_deviance[t_min] + result.se[t_min];
  std::size_t t_1se = t_min;
  for (std::size_t t = 0; t <= t_min; ++t) {
    if (result.mean_deviance[t] <= threshold) {
      t_1se = t;
      break;
    }
  }
  result.lambda_1se = grid[t_1se];
  return result;
}

}  // namespace conset
