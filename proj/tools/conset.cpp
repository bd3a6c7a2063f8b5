// conset: command line front end for the consideration-set toolkit.
//
// Subcommands
//   simulate   draw a synthetic survey from a generator config
//   summarize  category counts, proportions, undecided share
//   fit        penalized multinomial logit at one lambda
//   cv         cross-validated lambda path
//   explain    boosted binary classifier with SHAP and PFI tables
//   cluster    forest proximity, PAM medoids, position profiles
//
// Every file a subcommand writes gets a "<file>.meta.json" sidecar carrying
// the library version, the seed, and a hash of the config file. Outputs
// contain no timestamps, so the same config and seed reproduce every file
// byte for byte.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "conset/conset.hpp"

namespace {

using conset::BinarizationScheme;
using conset::CategoryId;
using conset::ConvergenceError;
using conset::CsvTable;
using conset::Dataset;
using conset::DataError;
using conset::DropPolicy;
using conset::DropReport;
using conset::Matrix;
using conset::OptionSpace;
using conset::RawSurveyTable;
using nlohmann::json;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

json parse_json(const std::string& text, const std::string& path) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError("'" + path + "': " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

// Flags shared by all subcommands. threads == 0 means hardware default.
struct Common {
  std::string input;
  std::string out_dir = ".";
  std::string config;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool quiet = false;

  std::string config_text;
  std::uint64_t config_hash = 0;

  unsigned effective_threads() const {
    return threads == 0 ? conset::default_threads() : threads;
  }
};

void add_common(CLI::App* sub, Common& c, bool needs_input) {
  auto* input = sub->add_option("--input", c.input, "survey CSV");
  if (needs_input) input->required();
  sub->add_option("--out-dir", c.out_dir, "output directory (created if missing)");
  sub->add_option("--config", c.config, "JSON config")->required();
  sub->add_option("--seed", c.seed, "RNG seed");
  sub->add_option("--threads", c.threads, "worker threads, 0 = hardware default");
  sub->add_flag("--quiet", c.quiet, "suppress progress messages");
}

std::string out_path(const Common& c, const std::string& name) {
  std::filesystem::create_directories(c.out_dir);
  return (std::filesystem::path(c.out_dir) / name).string();
}

void note(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << "\n";
}

void write_sidecar(const Common& c, const std::string& path, std::uint64_t seed,
                   json extra = json::object()) {
  json j = extra;
  j["version"] = conset::kVersion;
  j["seed"] = seed;
  j["config_hash"] = hex64(c.config_hash);
  write_text(path + ".meta.json", j.dump(2) + "\n");
}

void write_csv_artifact(const Common& c, const std::string& name, const CsvTable& table,
                        std::uint64_t seed, json extra = json::object()) {
  const std::string path = out_path(c, name);
  conset::write_csv(path, table);
  write_sidecar(c, path, seed, std::move(extra));
  note(c, "wrote " + path);
}

void write_json_artifact(const Common& c, const std::string& name, const json& j,
                         std::uint64_t seed, json extra = json::object()) {
  const std::string path = out_path(c, name);
  write_text(path, j.dump(2) + "\n");
  write_sidecar(c, path, seed, std::move(extra));
  note(c, "wrote " + path);
}

// Analysis config: option labels, binarization scheme (inline object or a
// path relative to the config file), reduced-power-set cutoff, drop policy.
struct AnalysisConfig {
  OptionSpace options;
  BinarizationScheme scheme;
  std::size_t min_count = 1;
  DropPolicy drop_policy = DropPolicy::Drop;
};

AnalysisConfig load_analysis_config(const Common& c) {
  const json j = parse_json(c.config_text, c.config);
  if (!j.contains("options")) throw DataError("'" + c.config + "': missing \"options\"");
  AnalysisConfig cfg{conset::options_from_json(j.at("options")), BinarizationScheme{}, 1,
                     DropPolicy::Drop};
  cfg.min_count = j.value("min_count", std::size_t{1});
  const std::string policy = j.value("drop_policy", "drop");
  if (policy == "drop")
    cfg.drop_policy = DropPolicy::Drop;
  else if (policy == "error")
    cfg.drop_policy = DropPolicy::Error;
  else
    throw DataError("'" + c.config + "': drop_policy must be \"drop\" or \"error\"");

  if (!j.contains("scheme")) throw DataError("'" + c.config + "': missing \"scheme\"");
  const json& s = j.at("scheme");
  if (s.is_string()) {
    const auto path = std::filesystem::path(c.config).parent_path() / s.get<std::string>();
    cfg.scheme = conset::scheme_from_json(parse_json(read_file(path.string()), path.string()));
  } else {
    cfg.scheme = conset::scheme_from_json(s);
  }
  return cfg;
}

struct LoadedSurvey {
  Dataset data;
  DropReport dropped;
  std::vector<std::size_t> kept_rows;  // 1-based input rows surviving ingest
};

LoadedSurvey load_survey(const Common& c, const AnalysisConfig& cfg) {
  const RawSurveyTable table = conset::parse_survey_csv(c.input, cfg.options);
  auto [data, report] =
      conset::assemble_dataset(cfg.options, table, cfg.scheme, cfg.min_count, cfg.drop_policy);
  std::vector<std::size_t> kept;
  kept.reserve(data.n());
  std::size_t next_drop = 0;
  for (std::size_t r = 1; r <= table.sets.size(); ++r) {
    if (next_drop < report.dropped_rows.size() && report.dropped_rows[next_drop] == r) {
      ++next_drop;
      continue;
    }
    kept.push_back(r);
  }
  return LoadedSurvey{std::move(data), std::move(report), std::move(kept)};
}

std::vector<std::string> category_literals(const Dataset& data) {
  std::vector<std::string> out;
  out.reserve(data.num_categories());
  for (CategoryId q = 0; q < data.num_categories(); ++q)
    out.push_back(conset::format_set_literal(data.rps.category(q), data.options));
  return out;
}

json ingest_report(const LoadedSurvey& survey) {
  return json{{"n", survey.data.n()},
              {"n_dropped", survey.dropped.n_dropped},
              {"dropped_rows", survey.dropped.dropped_rows}};
}

// --- simulate ---------------------------------------------------------------

int run_simulate(const Common& c, std::size_t n_override, bool seed_given) {
  const json j = parse_json(c.config_text, c.config);
  conset::GeneratorConfig gen = conset::generator_from_json(j);
  const bool is_logit = gen.kind == conset::GeneratorConfig::Kind::Logit;
  std::uint64_t& seed = is_logit ? gen.logit->seed : gen.eba->seed;
  std::size_t& n = is_logit ? gen.logit->n : gen.eba->n;
  if (seed_given) seed = c.seed;
  if (n_override > 0) n = n_override;

  const conset::SimulatedSurvey survey = conset::run_generator(gen);
  const OptionSpace& options = is_logit ? gen.logit->options : gen.eba->options;

  json extra{{"generator", is_logit ? "logit" : "eba"}, {"n", n}};
  write_csv_artifact(c, "survey.csv", conset::survey_to_csv(survey.raw, options), seed, extra);
  write_json_artifact(c, "scheme.json", conset::scheme_to_json(conset::generator_covariates(gen)),
                      seed, extra);
  return 0;
}

// --- summarize ---------------------------------------------------------------

int run_summarize(const Common& c) {
  const AnalysisConfig cfg = load_analysis_config(c);
  const LoadedSurvey survey = load_survey(c, cfg);
  const conset::CountStatistic counts = conset::count_statistics(survey.data);
  const conset::ProportionEstimate est = conset::mle_proportions(counts);
  const std::vector<std::string> literals = category_literals(survey.data);

  CsvTable table;
  table.header = {"category", "count", "proportion"};
  for (CategoryId q = 0; q < literals.size(); ++q)
    table.rows.push_back(
        {literals[q], std::to_string(counts.counts[q]), conset::format_double(est.pi[q])});
  write_csv_artifact(c, "counts.csv", table, c.seed);

  json summary = ingest_report(survey);
  summary["num_categories"] = survey.data.num_categories();
  summary["undecided_share"] = conset::undecided_share(survey.data);
  write_json_artifact(c, "summary.json", summary, c.seed);
  return 0;
}

// --- fit ---------------------------------------------------------------------

CsvTable coefficient_table(const Matrix& beta, const Dataset& data,
                           const std::vector<std::string>& literals) {
  CsvTable table;
  table.header.push_back("covariate");
  for (const auto& l : literals) table.header.push_back(l);
  for (std::size_t j = 0; j < beta.cols(); ++j) {
    std::vector<std::string> row{data.covariate_names[j]};
    for (CategoryId q = 0; q < beta.rows(); ++q)
      row.push_back(conset::format_double(beta(q, j)));
    table.rows.push_back(std::move(row));
  }
  return table;
}

int run_fit(const Common& c, double lambda, std::size_t max_iter, double tol) {
  const AnalysisConfig cfg = load_analysis_config(c);
  const LoadedSurvey survey = load_survey(c, cfg);
  conset::FitOptions opts;
  opts.max_iter = max_iter;
  opts.tol = tol;
  const conset::LogitModel model = conset::fit_penalized(survey.data, lambda, opts);
  if (!model.converged)
    throw ConvergenceError("fit at lambda=" + conset::format_double(lambda) +
                           " did not converge in " + std::to_string(max_iter) + " sweeps");

  const std::vector<std::string> literals = category_literals(survey.data);
  write_csv_artifact(c, "coefficients.csv", coefficient_table(model.beta, survey.data, literals),
                     c.seed);

  json info = ingest_report(survey);
  info["lambda"] = lambda;
  info["converged"] = model.converged;
  info["objective"] = model.objective_trace.back();
  info["log_likelihood"] = conset::log_likelihood(model.beta, survey.data);
  info["penalty"] = conset::group_penalty(model.beta);
  info["separation_warning"] = model.separation_warning;
  info["warnings"] = model.warnings;
  write_json_artifact(c, "fit.json", info, c.seed);
  return 0;
}

// --- cv ----------------------------------------------------------------------

int run_cv(const Common& c, std::size_t folds, std::size_t n_lambda, double ratio,
           std::size_t max_iter, double tol) {
  const AnalysisConfig cfg = load_analysis_config(c);
  const LoadedSurvey survey = load_survey(c, cfg);
  const std::vector<double> grid = conset::lambda_path(survey.data, n_lambda, ratio);
  conset::CvOptions opts;
  opts.fit.max_iter = max_iter;
  opts.fit.tol = tol;
  opts.n_threads = c.effective_threads();
  const conset::CvResult cv = conset::cross_validate(survey.data, grid, folds, c.seed, opts);

  CsvTable table;
  table.header = {"lambda", "mean_deviance", "se"};
  for (std::size_t i = 0; i < cv.lambda_grid.size(); ++i)
    table.rows.push_back({conset::format_double(cv.lambda_grid[i]),
                          conset::format_double(cv.mean_deviance[i]),
                          conset::format_double(cv.se[i])});
  write_csv_artifact(c, "cv_path.csv", table, c.seed);

  json info = ingest_report(survey);
  info["lambda_min"] = cv.lambda_min;
  info["lambda_1se"] = cv.lambda_1se;
  info["n_folds"] = folds;
  write_json_artifact(c, "cv.json", info, c.seed);
  return 0;
}

// --- explain -------------------------------------------------------------------

Matrix background_rows(const Matrix& x, const std::string& spec, std::uint64_t seed) {
  if (spec == "train") return x;
  const std::string prefix = "sample:";
  if (spec.rfind(prefix, 0) != 0)
    throw DataError("--background must be 'train' or 'sample:N', got '" + spec + "'");
  std::size_t count = 0;
  try {
    count = std::stoul(spec.substr(prefix.size()));
  } catch (const std::exception&) {
    throw DataError("--background must be 'train' or 'sample:N', got '" + spec + "'");
  }
  if (count == 0) throw DataError("--background sample size must be positive");
  if (count >= x.rows()) return x;
  conset::Rng rng = conset::Rng::substream(seed, 0xBAC6);
  Matrix out(count, x.cols());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r = static_cast<std::size_t>(rng.uniform_int(x.rows()));
    std::copy(x.row_ptr(r), x.row_ptr(r) + x.cols(), out.row_ptr(i));
  }
  return out;
}

int run_explain(const Common& c, const std::string& positive, const std::string& negative,
                const std::string& background, conset::GbmHyperparams hp,
                std::size_t pfi_repeats) {
  const AnalysisConfig cfg = load_analysis_config(c);
  const LoadedSurvey survey = load_survey(c, cfg);
  const auto encode = [&](const std::string& literal) {
    const auto id = survey.data.rps.encode(conset::parse_set_literal(literal, cfg.options));
    if (!id) throw DataError("category '" + literal + "' is not in the reduced power set");
    return *id;
  };
  const conset::BinaryTask task = make_binary_task(survey.data, encode(positive),
                                                   encode(negative));
  hp.seed = c.seed;
  const conset::GbmModel model = conset::train_gbm(task, hp);

  write_json_artifact(c, "model.json", conset::gbm_to_json(model), c.seed);

  const Matrix bg = background_rows(task.x, background, c.seed);
  const conset::ShapSummary summary =
      conset::shap_summary(model, task.x, bg, c.effective_threads());
  write_csv_artifact(c, "shap.csv", conset::shap_summary_table(summary), c.seed);

  const conset::FeatureImportance pfi = conset::permutation_importance(
      model, task, conset::PfiMetric::LogLoss, pfi_repeats, c.seed);
  std::vector<std::size_t> order(pfi.mean.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pfi.mean[a] > pfi.mean[b]; });
  CsvTable table;
  table.header = {"feature", "mean_importance", "sd"};
  for (std::size_t j : order)
    table.rows.push_back({task.feature_names[j], conset::format_double(pfi.mean[j]),
                          conset::format_double(pfi.sd[j])});
  write_csv_artifact(c, "pfi.csv", table, c.seed);

  json info = ingest_report(survey);
  info["positive"] = positive;
  info["negative"] = negative;
  info["n_positive"] = task.n_positive;
  info["n_negative"] = task.n_negative;
  info["train_log_loss"] = model.train_log_loss.back();
  info["train_error_rate"] = conset::error_rate(model, task.x, task.labels);
  write_json_artifact(c, "explain.json", info, c.seed);
  return 0;
}

// --- cluster ---------------------------------------------------------------------

int run_cluster(const Common& c, std::size_t k, std::size_t n_trees) {
  const AnalysisConfig cfg = load_analysis_config(c);
  const LoadedSurvey survey = load_survey(c, cfg);
  const Dataset& data = survey.data;
  if (data.num_covariates() < 2)
    throw DataError("cluster needs at least one non-intercept covariate");

  Matrix rows(data.n(), data.num_covariates() - 1);
  for (std::size_t i = 0; i < data.n(); ++i)
    for (std::size_t j = 1; j < data.num_covariates(); ++j)
      rows(i, j - 1) = data.observations[i].covariates[j];

  conset::ForestOptions fo;
  fo.n_trees = n_trees;
  fo.seed = c.seed;
  fo.n_threads = c.effective_threads();
  const conset::ProximityMatrix prox = conset::proximity_forest(rows, fo);
  const conset::DissimilarityMatrix d = conset::dissimilarity_from_proximity(prox);
  const conset::Clustering clustering = conset::pam_cluster(d, k, c.seed);

  CsvTable assign;
  assign.header = {"row", "cluster"};
  for (std::size_t i = 0; i < data.n(); ++i)
    assign.rows.push_back(
        {std::to_string(survey.kept_rows[i]), std::to_string(clustering.assignment[i])});
  write_csv_artifact(c, "assignment.csv", assign, c.seed);

  const conset::PositionProfile profile = conset::position_profile(clustering, data);
  const std::vector<std::string> literals = category_literals(data);
  CsvTable prof;
  prof.header = {"cluster", "size"};
  for (const auto& l : literals) prof.header.push_back(l);
  for (std::size_t cl = 0; cl < clustering.k; ++cl) {
    std::vector<std::string> row{std::to_string(cl), std::to_string(profile.cluster_sizes[cl])};
    for (CategoryId q = 0; q < literals.size(); ++q)
      row.push_back(conset::format_double(profile.proportions(cl, q)));
    prof.rows.push_back(std::move(row));
  }
  write_csv_artifact(c, "profile.csv", prof, c.seed);

  std::vector<std::size_t> medoid_rows;
  for (std::size_t m : clustering.medoids) medoid_rows.push_back(survey.kept_rows[m]);
  json info = ingest_report(survey);
  info["k"] = k;
  info["n_trees"] = n_trees;
  info["objective"] = conset::pam_objective(d, clustering);
  info["medoid_rows"] = medoid_rows;
  write_json_artifact(c, "cluster.json", info, c.seed);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"consideration-set survey toolkit"};
  app.set_version_flag("--version", conset::kVersion);
  app.require_subcommand(1);

  Common c;

  auto* simulate = app.add_subcommand("simulate", "draw a synthetic survey");
  add_common(simulate, c, false);
  std::size_t sim_n = 0;
  simulate->add_option("--n", sim_n, "override the configured sample size");

  auto* summarize = app.add_subcommand("summarize", "category counts and proportions");
  add_common(summarize, c, true);

  auto* fit = app.add_subcommand("fit", "penalized multinomial logit at one lambda");
  add_common(fit, c, true);
  double lambda = 0.0;
  std::size_t fit_max_iter = 10000;
  double fit_tol = 1e-7;
  fit->add_option("--lambda", lambda, "group-lasso penalty weight")
      ->check(CLI::NonNegativeNumber);
  fit->add_option("--max-iter", fit_max_iter, "maximum coordinate sweeps");
  fit->add_option("--tol", fit_tol, "convergence tolerance");

  auto* cv = app.add_subcommand("cv", "cross-validated lambda path");
  add_common(cv, c, true);
  std::size_t folds = 5, n_lambda = 20, cv_max_iter = 5000;
  double ratio = 1e-3, cv_tol = 1e-6;
  cv->add_option("--folds", folds, "number of folds");
  cv->add_option("--n-lambda", n_lambda, "grid size");
  cv->add_option("--lambda-ratio", ratio, "smallest grid value as a fraction of lambda_max");
  cv->add_option("--max-iter", cv_max_iter, "maximum coordinate sweeps per fit");
  cv->add_option("--tol", cv_tol, "convergence tolerance per fit");

  auto* explain = app.add_subcommand("explain", "boosted classifier with SHAP and PFI");
  add_common(explain, c, true);
  std::string positive, negative, background = "train";
  conset::GbmHyperparams hp;
  std::size_t pfi_repeats = 10;
  explain->add_option("--positive", positive, "set literal of the positive class")->required();
  explain->add_option("--negative", negative, "set literal of the negative class")->required();
  explain->add_option("--background", background, "SHAP background: train or sample:N");
  explain->add_option("--trees", hp.n_trees, "boosting stages");
  explain->add_option("--depth", hp.max_depth, "tree depth");
  explain->add_option("--learning-rate", hp.learning_rate, "shrinkage");
  explain->add_option("--min-leaf", hp.min_leaf, "minimum rows per leaf");
  explain->add_flag("--balance", hp.balance_classes, "weight classes inversely to frequency");
  explain->add_option("--pfi-repeats", pfi_repeats, "permutation repeats per feature");

  auto* cluster = app.add_subcommand("cluster", "proximity forest + PAM medoids");
  add_common(cluster, c, true);
  std::size_t k = 0, cluster_trees = 500;
  cluster->add_option("--k", k, "number of clusters")->required();
  cluster->add_option("--trees", cluster_trees, "forest size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    c.config_text = read_file(c.config);
    c.config_hash = fnv1a(c.config_text);
    if (sub == simulate) return run_simulate(c, sim_n, simulate->count("--seed") > 0);
    if (sub == summarize) return run_summarize(c);
    if (sub == fit) return run_fit(c, lambda, fit_max_iter, fit_tol);
    if (sub == cv) return run_cv(c, folds, n_lambda, ratio, cv_max_iter, cv_tol);
    if (sub == explain)
      return run_explain(c, positive, negative, background, hp, pfi_repeats);
    if (sub == cluster) return run_cluster(c, k, cluster_trees);
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
