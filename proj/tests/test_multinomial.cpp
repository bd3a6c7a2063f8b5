#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "conset/multinomial.hpp"
#include "conset/rng.hpp"

using namespace conset;

namespace {

// n=9, K=3, p=2 (intercept + binary x); saturated, so the MLE is analytic.
Dataset tiny_dataset() {
  OptionSpace opts({"a", "b", "c"});
  std::vector<ConsiderationSet> cats = {ConsiderationSet::singleton(0),
                                        ConsiderationSet::singleton(1),
                                        ConsiderationSet::singleton(2)};
  Dataset data{opts, ReducedPowerSet(opts, cats), {}, {"(Intercept)", "x"}};
  const double xs[] = {0, 0, 0, 0, 1, 1, 1, 1, 1};
  const CategoryId ys[] = {0, 0, 1, 2, 0, 1, 1, 2, 2};
  for (int i = 0; i < 9; ++i)
    data.observations.push_back(Observation{ys[i], {1.0, xs[i]}});
  return data;
}

Dataset random_dataset(std::size_t n, std::size_t K, std::size_t p, std::uint64_t seed) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < K; ++i) labels.push_back("o" + std::to_string(i));
  OptionSpace opts(labels);
  std::vector<ConsiderationSet> cats;
  for (std::size_t i = 0; i < K; ++i) cats.push_back(ConsiderationSet::singleton(i));
  std::vector<std::string> names{"(Intercept)"};
  for (std::size_t j = 1; j < p; ++j) names.push_back("x" + std::to_string(j));
  Dataset data{opts, ReducedPowerSet(opts, cats), {}, names};
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x{1.0};
    for (std::size_t j = 1; j < p; ++j) x.push_back(rng.normal());
    data.observations.push_back(
        Observation{static_cast<CategoryId>(rng.uniform_int(K)), std::move(x)});
  }
  return data;
}

}  // namespace

TEST_CASE("mle_proportions is the count ratio and dominates in likelihood", "[multinomial]") {
  CountStatistic counts{{3, 1, 0, 4}, 8};
  const ProportionEstimate est = mle_proportions(counts);
  CHECK(est.pi == std::vector<double>{3.0 / 8, 1.0 / 8, 0.0, 4.0 / 8});

  const double ll_hat = multinomial_log_likelihood(est.pi, counts.counts);
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> q(4);
    double total = 0.0;
    for (double& v : q) total += (v = -std::log(rng.uniform()));
    for (double& v : q) v /= total;
    CHECK(multinomial_log_likelihood(q, counts.counts) <= ll_hat + 1e-12);
  }
  CHECK_THROWS_AS(mle_proportions(CountStatistic{{0, 0}, 0}), DataError);
}

TEST_CASE("multinomial log-likelihood matches frozen values", "[multinomial]") {
  CHECK(multinomial_log_likelihood({0.5, 0.25, 0.25}, {3, 1, 0}) ==
        Catch::Approx(-3.465735902799726).margin(1e-12));
  CHECK(multinomial_log_likelihood({0.2, 0.3, 0.5}, {2, 3, 5}) ==
        Catch::Approx(-10.296530140645736).margin(1e-12));
  // Zero-probability category with zero count contributes nothing.
  CHECK(std::isfinite(multinomial_log_likelihood({1.0, 0.0}, {2, 0})));
}

TEST_CASE("softmax predictions are shift-invariant and stable", "[multinomial]") {
  Matrix beta(3, 2);
  beta(0, 0) = 0.3; beta(0, 1) = -1.0;
  beta(1, 0) = -0.2; beta(1, 1) = 0.4;
  beta(2, 0) = -0.1; beta(2, 1) = 0.6;
  const std::vector<double> x{1.0, 2.0};
  const std::vector<double> p1 = predict_probabilities(beta, x);
  Matrix shifted = beta;
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t j = 0; j < 2; ++j) shifted(q, j) += (j == 0 ? 5.0 : -3.0);
  const std::vector<double> p2 = predict_probabilities(shifted, x);
  double sum = 0.0;
  for (std::size_t q = 0; q < 3; ++q) {
    CHECK(p1[q] == Catch::Approx(p2[q]).margin(1e-12));
    sum += p1[q];
  }
  CHECK(sum == Catch::Approx(1.0).margin(1e-12));

  Matrix extreme(2, 1);
  extreme(0, 0) = 800.0;
  extreme(1, 0) = -800.0;
  const std::vector<double> pe = predict_probabilities(extreme, {1.0});
  CHECK(pe[0] == Catch::Approx(1.0));
  CHECK(std::isfinite(pe[1]));
}

TEST_CASE("analytic gradient matches central finite differences", "[multinomial]") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const Dataset data = random_dataset(60, 4, 3, seed);
    Matrix beta(4, 3);
    Rng rng(seed + 100);
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t j = 0; j < 3; ++j) beta(q, j) = 0.5 * rng.normal();
    const Matrix grad = gradient(beta, data);
    const double h = 1e-5;
    for (std::size_t q = 0; q < 4; ++q) {
      for (std::size_t j = 0; j < 3; ++j) {
        Matrix up = beta, dn = beta;
        up(q, j) += h;
        dn(q, j) -= h;
        const double fd = (log_likelihood(up, data) - log_likelihood(dn, data)) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(grad(q, j)), 1e-8});
        CHECK(std::abs(grad(q, j) - fd) / scale < 1e-6);
      }
    }
  }
}

TEST_CASE("unpenalized fit recovers the analytic MLE of the tiny dataset", "[multinomial]") {
  const Dataset data = tiny_dataset();
  FitOptions opts;
  opts.tol = 1e-12;
  const LogitModel fit = fit_penalized(data, 0.0, opts);
  CHECK(fit.converged);

  const double expected[3][2] = {{0.462098140592, -0.924196284971},
                                 {-0.231049071901, 0.462098137562},
                                 {-0.231049068692, 0.462098147410}};
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(fit.beta(q, j) == Catch::Approx(expected[q][j]).margin(1e-6));
  CHECK(log_likelihood(fit, data) == Catch::Approx(-9.433483923290396).margin(1e-9));
  CHECK(deviance(fit.beta, data) == Catch::Approx(2 * 9.433483923290396).margin(1e-8));

  // Columns satisfy the sum-to-zero side constraint.
  for (std::size_t j = 0; j < 2; ++j) {
    double sum = 0.0;
    for (std::size_t q = 0; q < 3; ++q) sum += fit.beta(q, j);
    CHECK(std::abs(sum) < 1e-12);
  }
}

TEST_CASE("objective trace is non-decreasing", "[multinomial]") {
  const Dataset data = random_dataset(300, 4, 4, 9);
  for (double lambda : {0.0, 1.0, 10.0}) {
    const LogitModel fit = fit_penalized(data, lambda);
    REQUIRE(fit.objective_trace.size() >= 2);
    for (std::size_t t = 1; t < fit.objective_trace.size(); ++t)
      CHECK(fit.objective_trace[t] >= fit.objective_trace[t - 1] - 1e-9);
  }
}

TEST_CASE("lambda_max matches the frozen oracle and kills all groups", "[multinomial]") {
  const Dataset data = tiny_dataset();
  const double lmax = lambda_max(data);
  CHECK(lmax == Catch::Approx(0.816496580927726).margin(1e-9));

  FitOptions opts;
  opts.tol = 1e-10;
  for (double lambda : {lmax, 2 * lmax, 100.0}) {
    const LogitModel fit = fit_penalized(data, lambda, opts);
    for (std::size_t q = 0; q < 3; ++q) CHECK(fit.beta(q, 1) == 0.0);  // bitwise zero
  }
  // Just below lambda_max the group re-enters.
  const LogitModel below = fit_penalized(data, 0.8 * lmax, opts);
  double norm = 0.0;
  for (std::size_t q = 0; q < 3; ++q) norm += below.beta(q, 1) * below.beta(q, 1);
  CHECK(norm > 0.0);
}

TEST_CASE("intercept-only fit reproduces sample proportions", "[multinomial]") {
  const Dataset data = tiny_dataset();
  FitOptions opts;
  opts.tol = 1e-12;
  const LogitModel fit = fit_penalized(data, 10.0, opts);
  const ProportionEstimate marginal = mle_proportions(count_statistics(data));
  const std::vector<double> pred = predict_probabilities(fit, {1.0, 0.0});
  const std::vector<double> pred1 = predict_probabilities(fit, {1.0, 1.0});
  for (std::size_t q = 0; q < 3; ++q) {
    CHECK(pred[q] == Catch::Approx(marginal.pi[q]).margin(1e-8));
    CHECK(pred1[q] == Catch::Approx(marginal.pi[q]).margin(1e-8));
  }
}

TEST_CASE("penalized objective matches the frozen oracle", "[multinomial]") {
  const Dataset data = tiny_dataset();
  FitOptions opts;
  opts.tol = 1e-12;
  const LogitModel fit = fit_penalized(data, 0.5, opts);
  const double objective = log_likelihood(fit, data) - 0.5 * group_penalty(fit.beta);
  CHECK(objective == Catch::Approx(-9.82007297656586).margin(1e-6));
}

TEST_CASE("group penalty skips the intercept", "[multinomial]") {
  Matrix beta(2, 3);
  beta(0, 0) = 100.0;  // intercept, unpenalized
  beta(1, 0) = -100.0;
  beta(0, 1) = 3.0;
  beta(1, 1) = 4.0;
  beta(0, 2) = 0.0;
  beta(1, 2) = 0.0;
  CHECK(group_penalty(beta) == Catch::Approx(5.0));
}

TEST_CASE("heavier penalties never increase the active-set size", "[multinomial]") {
  const Dataset data = random_dataset(400, 3, 4, 21);
  const double lmax = lambda_max(data);
  std::size_t prev_active = 100;
  for (double frac : {0.05, 0.2, 0.5, 1.0}) {
    const LogitModel fit = fit_penalized(data, frac * lmax);
    std::size_t active = 0;
    for (std::size_t j = 1; j < fit.beta.cols(); ++j) {
      double norm = 0.0;
      for (std::size_t q = 0; q < fit.beta.rows(); ++q) norm += fit.beta(q, j) * fit.beta(q, j);
      if (norm > 0.0) ++active;
    }
    CHECK(active <= prev_active);
    prev_active = active;
  }
}

TEST_CASE("lambda_path is geometric from lambda_max", "[multinomial]") {
  const Dataset data = tiny_dataset();
  const std::vector<double> grid = lambda_path(data, 5, 0.01);
  REQUIRE(grid.size() == 5);
  CHECK(grid.front() == Catch::Approx(lambda_max(data)));
  CHECK(grid.back() == Catch::Approx(0.01 * lambda_max(data)));
  for (std::size_t t = 1; t < grid.size(); ++t) {
    CHECK(grid[t] < grid[t - 1]);
    CHECK(grid[t] / grid[t - 1] == Catch::Approx(grid[1] / grid[0]).margin(1e-12));
  }
  CHECK_THROWS_AS(lambda_path(data, 0, 0.01), DataError);
  CHECK_THROWS_AS(lambda_path(data, 5, 1.5), DataError);
}

TEST_CASE("fold assignment is deterministic and balanced", "[multinomial]") {
  const Dataset data = random_dataset(100, 3, 2, 5);
  const std::vector<std::size_t> folds = make_folds(data, 5, 42);
  CHECK(folds == make_folds(data, 5, 42));
  CHECK(folds != make_folds(data, 5, 43));
  std::vector<std::size_t> sizes(5, 0);
  for (std::size_t f : folds) {
    REQUIRE(f < 5);
    ++sizes[f];
  }
  for (std::size_t s : sizes) CHECK(s >= 15);
}

TEST_CASE("cross-validation selects sane lambdas", "[multinomial]") {
  const Dataset data = random_dataset(200, 3, 3, 77);
  const std::vector<double> grid = lambda_path(data, 8, 0.05);
  CvOptions opts;
  opts.fit.tol = 1e-6;
  const CvResult cv = cross_validate(data, grid, 4, 99, opts);
  REQUIRE(cv.mean_deviance.size() == grid.size());
  CHECK(cv.lambda_1se >= cv.lambda_min);
  for (double se : cv.se) CHECK(se >= 0.0);
  CHECK(cv.fold_assignment.size() == data.n());

  std::vector<double> ascending(grid.rbegin(), grid.rend());
  CHECK_THROWS_AS(cross_validate(data, ascending, 4, 99, opts), DataError);
  CHECK_THROWS_AS(cross_validate(data, grid, 1, 99, opts), DataError);
}

TEST_CASE("separation triggers a warning at lambda zero", "[multinomial]") {
  OptionSpace opts({"a", "b"});
  std::vector<ConsiderationSet> cats = {ConsiderationSet::singleton(0),
                                        ConsiderationSet::singleton(1)};
  Dataset data{opts, ReducedPowerSet(opts, cats), {}, {"(Intercept)", "x"}};
  for (int i = 0; i < 30; ++i) {
    const double x = i < 15 ? -1.0 : 1.0;
    data.observations.push_back(Observation{i < 15 ? CategoryId{0} : CategoryId{1}, {1.0, x}});
  }
  FitOptions fopts;
  fopts.max_iter = 3000;
  const LogitModel fit = fit_penalized(data, 0.0, fopts);
  CHECK(fit.separation_warning);
}
