// Acceptance checks, one line per criterion. Usage:
//   acceptance <cli-binary> <configs-dir> <work-dir>
// Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "conset/conset.hpp"

using namespace conset;
namespace fs = std::filesystem;

namespace {

std::string g_cli, g_configs, g_work;
int g_failures = 0;

void run_criterion(int number, const std::string& name, const std::function<bool(std::string&)>& body) {
  std::string detail;
  const auto start = std::chrono::steady_clock::now();
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s  criterion %d: %s (%.1f s)%s%s\n", ok ? "PASS" : "FAIL", number, name.c_str(),
              secs, detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

// --- shared synthetic builders ----------------------------------------------

Dataset singleton_dataset(std::size_t K, std::size_t p, std::size_t n, std::uint64_t seed) {
  std::vector<std::string> labels;
  for (std::size_t q = 0; q < K; ++q) labels.push_back("o" + std::to_string(q));
  OptionSpace options(labels);
  std::vector<ConsiderationSet> cats;
  for (std::size_t q = 0; q < K; ++q) cats.push_back(ConsiderationSet::singleton(q));
  std::vector<std::string> names{"(Intercept)"};
  for (std::size_t j = 1; j < p; ++j) names.push_back("x" + std::to_string(j));
  Dataset data{options, ReducedPowerSet(options, cats), {}, names};

  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(p, 1.0);
    for (std::size_t j = 1; j < p; ++j) x[j] = 2.0 * rng.uniform() - 1.0;
    data.observations.push_back(Observation{rng.uniform_int(K), x});
  }
  return data;
}

BinaryTask margin_task(std::size_t n, std::uint64_t seed, std::size_t p = 4) {
  BinaryTask task;
  task.x = Matrix(n, p);
  task.positive_label = "pos";
  task.negative_label = "neg";
  for (std::size_t j = 0; j < p; ++j) task.feature_names.push_back("f" + std::to_string(j));
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    double x0 = 0.0;
    do {
      x0 = 2.0 * rng.uniform() - 1.0;
    } while (std::abs(x0) < 0.2);
    task.x(i, 0) = x0;
    for (std::size_t j = 1; j < p; ++j) task.x(i, j) = 2.0 * rng.uniform() - 1.0;
    const int y = x0 > 0.0 ? 1 : 0;
    task.labels.push_back(y);
    y ? ++task.n_positive : ++task.n_negative;
  }
  return task;
}

Matrix blob_rows(std::size_t n, std::vector<std::size_t>& truth, std::uint64_t seed) {
  const std::vector<std::vector<double>> centers = {
      {0.0, 5.0, -3.0, 2.0}, {6.0, -4.0, 4.0, -5.0}, {-6.0, -4.0, -5.0, -2.0}};
  Matrix rows(n, 4);
  truth.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % 3;
    truth[i] = c;
    for (std::size_t j = 0; j < 4; ++j) rows(i, j) = centers[c][j] + 0.5 * rng.normal();
  }
  return rows;
}

GenerativeSpec recovery_spec(std::size_t p, std::uint64_t seed, std::size_t n) {
  OptionSpace options({"a", "b", "c", "d"});
  std::vector<ConsiderationSet> cats;
  for (std::size_t q = 0; q < 4; ++q) cats.push_back(ConsiderationSet::singleton(q));
  Matrix beta(4, p, 0.0);
  const double truth[4][3] = {{0.3, 0.8, -0.6}, {-0.1, -0.5, 0.7}, {0.05, 0.1, -0.3},
                              {-0.25, -0.4, 0.2}};
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t j = 0; j < 3; ++j) beta(q, j) = truth[q][j];
  std::vector<CovariateModel> covs;
  for (std::size_t j = 1; j < p; ++j) {
    CovariateModel c;
    c.kind = CovariateModel::Kind::Bernoulli;
    c.name = "x" + std::to_string(j);
    c.prob = 0.5;
    covs.push_back(c);
  }
  ReducedPowerSet rps(options, cats);
  return GenerativeSpec{std::move(options), std::move(rps), std::move(beta),
                        std::move(covs), n, seed};
}

// --- criterion bodies ---------------------------------------------------------

bool c1_mle_identity(std::string& detail) {
  Rng rng(101);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t K = 2 + rng.uniform_int(7);
    CountStatistic stat;
    stat.counts.resize(K);
    stat.n = 0;
    for (std::size_t q = 0; q < K; ++q) {
      stat.counts[q] = rng.uniform_int(51);
      stat.n += stat.counts[q];
    }
    if (stat.n == 0) {
      stat.counts[0] = 1;
      stat.n = 1;
    }
    const ProportionEstimate est = mle_proportions(stat);
    for (std::size_t q = 0; q < K; ++q) {
      const double expect = static_cast<double>(stat.counts[q]) / static_cast<double>(stat.n);
      if (est.pi[q] != expect) {
        detail = "proportion not exact at rep " + std::to_string(rep);
        return false;
      }
    }
    const double best = multinomial_log_likelihood(est.pi, stat.counts);
    for (int alt = 0; alt < 1000; ++alt) {
      std::vector<double> pi(K);
      double total = 0.0;
      for (std::size_t q = 0; q < K; ++q) total += pi[q] = 0.01 + rng.uniform();
      for (double& v : pi) v /= total;
      if (multinomial_log_likelihood(pi, stat.counts) > best) {
        detail = "random pi beats MLE at rep " + std::to_string(rep);
        return false;
      }
    }
  }
  return true;
}

bool c2_gradient(std::string& detail) {
  Rng rng(202);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t K = 2 + rng.uniform_int(5);
    const std::size_t p = 1 + rng.uniform_int(5);
    const std::size_t n = 20 + rng.uniform_int(81);
    const Dataset data = singleton_dataset(K, p, n, 4000 + rep);
    Matrix beta(K, p);
    for (std::size_t q = 0; q < K; ++q)
      for (std::size_t j = 0; j < p; ++j) beta(q, j) = rng.normal() * 0.5;

    const Matrix grad = gradient(beta, data);
    const double h = 1e-5;
    double max_abs = 1.0, max_err = 0.0;
    for (std::size_t q = 0; q < K; ++q)
      for (std::size_t j = 0; j < p; ++j) max_abs = std::max(max_abs, std::abs(grad(q, j)));
    for (std::size_t q = 0; q < K; ++q) {
      for (std::size_t j = 0; j < p; ++j) {
        Matrix up = beta, dn = beta;
        up(q, j) += h;
        dn(q, j) -= h;
        const double fd = (log_likelihood(up, data) - log_likelihood(dn, data)) / (2 * h);
        max_err = std::max(max_err, std::abs(grad(q, j) - fd));
      }
    }
    if (max_err / max_abs >= 1e-6) {
      detail = "relative error " + std::to_string(max_err / max_abs) + " at rep " +
               std::to_string(rep);
      return false;
    }
  }
  return true;
}

bool c3_exact_zero(std::string& detail) {
  const Dataset data = singleton_dataset(4, 3, 200, 303);
  const double lmax = lambda_max(data);
  for (double lambda : {lmax, 1.5 * lmax, 10.0 * lmax}) {
    const LogitModel fit = fit_penalized(data, lambda);
    for (std::size_t q = 0; q < 4; ++q) {
      for (std::size_t j = 1; j < 3; ++j) {
        if (fit.beta(q, j) != 0.0) {
          detail = "non-intercept coefficient not bitwise zero at lambda=" +
                   format_double(lambda);
          return false;
        }
      }
    }
    const std::vector<double> pi =
        predict_probabilities(fit.beta, std::vector<double>{1.0, 0.0, 0.0});
    const ProportionEstimate sample = mle_proportions(count_statistics(data));
    for (std::size_t q = 0; q < 4; ++q) {
      if (std::abs(pi[q] - sample.pi[q]) >= 1e-8) {
        detail = "marginal prediction off sample proportion by " +
                 format_double(std::abs(pi[q] - sample.pi[q]));
        return false;
      }
    }
  }
  return true;
}

bool c4_recovery(std::string& detail) {
  const GenerativeSpec spec = recovery_spec(3, 20260814, 20000);
  const SimulatedSurvey survey = generate(spec);
  FitOptions opts;
  opts.tol = 1e-6;
  const LogitModel fit = fit_penalized(survey.data, 0.0, opts);
  double max_err = 0.0;
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t j = 0; j < 3; ++j)
      max_err = std::max(max_err, std::abs(fit.beta(q, j) - spec.true_beta(q, j)));
  if (max_err >= 0.1) {
    detail = "refit max-abs error " + format_double(max_err);
    return false;
  }

  int zeroed = 0;
  for (int s = 0; s < 10; ++s) {
    const GenerativeSpec null_spec = recovery_spec(5, 100 + s, 20000);
    const SimulatedSurvey sim = generate(null_spec);
    const std::vector<double> grid = lambda_path(sim.data, 10, 0.05);
    CvOptions copts;
    copts.fit.tol = 1e-5;
    copts.fit.max_iter = 3000;
    const CvResult cv = cross_validate(sim.data, grid, 4, 7 + s, copts);
    FitOptions fopts;
    fopts.tol = 1e-6;
    const LogitModel sel = fit_penalized(sim.data, cv.lambda_1se, fopts);
    bool both_zero = true;
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t j = 3; j < 5; ++j)
        if (sel.beta(q, j) != 0.0) both_zero = false;
    zeroed += both_zero ? 1 : 0;
  }
  if (zeroed < 8) {
    detail = "null groups zeroed in only " + std::to_string(zeroed) + "/10 seeds";
    return false;
  }
  detail = "recovery error " + format_double(max_err) + ", nulls zeroed " +
           std::to_string(zeroed) + "/10";
  return true;
}

bool c5_shap(std::string& detail) {
  const BinaryTask task = margin_task(250, 505, 8);
  GbmHyperparams hp;
  hp.n_trees = 60;
  const GbmModel model = train_gbm(task, hp);

  Matrix background(25, task.x.cols());
  for (std::size_t i = 0; i < 25; ++i)
    for (std::size_t j = 0; j < task.x.cols(); ++j) background(i, j) = task.x(i * 7 % 250, j);
  double base_mean = 0.0;
  std::vector<double> row(task.x.cols());
  for (std::size_t i = 0; i < 25; ++i) {
    std::copy(background.row_ptr(i), background.row_ptr(i) + task.x.cols(), row.begin());
    base_mean += model.predict(row);
  }
  base_mean /= 25.0;

  for (std::size_t i = 0; i < task.x.rows(); ++i) {
    std::copy(task.x.row_ptr(i), task.x.row_ptr(i) + task.x.cols(), row.begin());
    const ShapExplanation ex = shap_values(model, row, background);
    double total = ex.base;
    for (double v : ex.phi) total += v;
    if (std::abs(total - model.predict(row)) >= 1e-8) {
      detail = "local accuracy violated at row " + std::to_string(i);
      return false;
    }
    if (i < 50) {
      const std::vector<double> oracle = exact_shapley_oracle(model, row, background);
      for (std::size_t j = 0; j < oracle.size(); ++j) {
        if (std::abs(ex.phi[j] - oracle[j]) >= 1e-8) {
          detail = "oracle mismatch " + format_double(std::abs(ex.phi[j] - oracle[j])) +
                   " at row " + std::to_string(i);
          return false;
        }
      }
    }
    (void)base_mean;
  }
  return true;
}

bool c6_gbm(std::string& detail) {
  const BinaryTask task = margin_task(500, 606);
  GbmHyperparams hp;
  hp.n_trees = 100;
  const GbmModel model = train_gbm(task, hp);
  const double err = error_rate(model, task.x, task.labels);
  if (err >= 0.05) {
    detail = "training error " + format_double(err);
    return false;
  }
  for (std::size_t t = 1; t < model.train_log_loss.size(); ++t) {
    if (model.train_log_loss[t] > model.train_log_loss[t - 1] + 1e-12) {
      detail = "log-loss increased at stage " + std::to_string(t);
      return false;
    }
  }
  detail = "training error " + format_double(err);
  return true;
}

bool c7_clustering(std::string& detail) {
  std::vector<std::size_t> truth;
  double worst_ari = 1.0;
  for (std::uint64_t seed : {3ull, 11ull, 29ull}) {
    const Matrix rows = blob_rows(300, truth, seed);
    ForestOptions fo;
    fo.n_trees = 200;
    fo.seed = seed;
    const ProximityMatrix prox = proximity_forest(rows, fo);
    for (std::size_t i = 0; i < 300; ++i) {
      if (prox.values.at(i, i) != 1.0f) {
        detail = "diagonal not 1";
        return false;
      }
      for (std::size_t j = i + 1; j < 300; ++j) {
        if (prox.values.at(i, j) != prox.values.at(j, i)) {
          detail = "asymmetry at (" + std::to_string(i) + "," + std::to_string(j) + ")";
          return false;
        }
      }
    }
    const Clustering cl = pam_cluster(dissimilarity_from_proximity(prox), 3, 0);
    worst_ari = std::min(worst_ari, adjusted_rand_index(cl.assignment, truth));

    Dataset data = singleton_dataset(4, 2, 300, seed);
    const PositionProfile profile = position_profile(cl, data);
    for (std::size_t c = 0; c < profile.proportions.rows(); ++c) {
      double sum = 0.0;
      for (std::size_t q = 0; q < profile.proportions.cols(); ++q)
        sum += profile.proportions(c, q);
      if (std::abs(sum - 1.0) >= 1e-12) {
        detail = "profile row sums to " + format_double(sum);
        return false;
      }
    }
  }
  if (worst_ari <= 0.9) {
    detail = "worst ARI " + format_double(worst_ari);
    return false;
  }
  detail = "worst ARI " + format_double(worst_ari);
  return true;
}

// --- criterion 8: the CLI pipeline ---------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = "\"" + g_cli + "\" " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool run_pipeline(const fs::path& dir, std::string& detail) {
  fs::create_directories(dir);
  const std::string out = " --out-dir \"" + dir.string() + "\"";
  const std::string survey = " --input \"" + (dir / "survey.csv").string() + "\"";
  const std::string analysis = " --config \"" + g_configs + "/analysis.json\" --quiet";
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"simulate", " --config \"" + g_configs + "/eba_survey.json\" --quiet" + out},
      {"summarize", survey + analysis + out},
      {"fit", survey + analysis + out + " --lambda 0"},
      {"cv", survey + analysis + out + " --seed 11 --n-lambda 12 --lambda-ratio 0.01 --tol 1e-5"},
      {"explain", survey + analysis + out +
                      " --seed 5 --positive Green --negative Green+SPD --background sample:100"},
      {"cluster", survey + analysis + out + " --seed 9 --k 4"}};
  for (const auto& [sub, args] : steps) {
    if (run_cli(sub + args) != 0) {
      detail = sub + " failed";
      return false;
    }
  }
  return true;
}

bool c8_pipeline(std::string& detail) {
  const fs::path run1 = fs::path(g_work) / "run1";
  const fs::path run2 = fs::path(g_work) / "run2";
  fs::remove_all(run1);
  fs::remove_all(run2);
  if (!run_pipeline(run1, detail)) return false;

  nlohmann::json summary;
  {
    std::ifstream in(run1 / "summary.json");
    in >> summary;
  }
  const std::size_t K = summary.at("num_categories").get<std::size_t>();
  const double undecided = summary.at("undecided_share").get<double>();
  if (K != 9) {
    detail = "expected 9 categories, got " + std::to_string(K);
    return false;
  }
  std::size_t non_singletons = 0;
  {
    const CsvTable counts = read_csv((run1 / "counts.csv").string());
    for (const auto& row : counts.rows)
      if (row[0].find('+') != std::string::npos) ++non_singletons;
  }
  if (non_singletons != 3) {
    detail = "expected 3 non-singleton categories, got " + std::to_string(non_singletons);
    return false;
  }
  if (std::abs(undecided - 0.228) >= 0.05) {
    detail = "undecided share " + format_double(undecided);
    return false;
  }

  if (!run_pipeline(run2, detail)) return false;
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(run1)) {
    const fs::path other = run2 / entry.path().filename();
    if (!fs::exists(other)) {
      detail = entry.path().filename().string() + " missing on rerun";
      return false;
    }
    if (slurp(entry.path()) != slurp(other)) {
      detail = entry.path().filename().string() + " differs between reruns";
      return false;
    }
    ++compared;
  }
  detail = "undecided share " + format_double(undecided) + ", " + std::to_string(compared) +
           " files byte-identical";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 4) {
    std::fprintf(stderr, "usage: acceptance <cli-binary> <configs-dir> <work-dir>\n");
    return 64;
  }
  g_cli = argv[1];
  g_configs = argv[2];
  g_work = argv[3];

  run_criterion(1, "MLE identity and dominance", c1_mle_identity);
  run_criterion(2, "analytic gradient matches finite differences", c2_gradient);
  run_criterion(3, "exact zeros at and above lambda_max", c3_exact_zero);
  run_criterion(4, "estimator recovery and null-group selection", c4_recovery);
  run_criterion(5, "SHAP local accuracy and oracle equivalence", c5_shap);
  run_criterion(6, "GBM separable-task error and monotone loss", c6_gbm);
  run_criterion(7, "proximity invariants and blob clustering", c7_clustering);
  run_criterion(8, "end-to-end pipeline on the shipped configs", c8_pipeline);

  std::printf("%d/8 criteria passed\n", 8 - g_failures);
  return g_failures;
}
