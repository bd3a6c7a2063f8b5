#pragma once

// Synthetic consideration-set surveys with known ground truth.
//
// Two generators share the covariate machinery. `generate` draws each
// respondent's category from a multinomial logit over a fixed reduced power
// set, which makes it the reference data source for estimator recovery
// checks. `eba_generate` builds the set by elimination: an orientation stage
// restricts the respondent to a bloc of options, gated refinement screens
// intersect further aspects, and a final decisiveness gate collapses the
// survivors to the single best option under noisy utilities. Respondents
// whose set keeps two or more options are the undecided.
//
// Both generators draw row i from Rng::substream(seed, i) with a fixed
// within-row draw order, so parallel and sequential generation agree and the
// whole survey is reproducible from (spec, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conset/core.hpp"
#include "conset/csv.hpp"
#include "conset/ingest.hpp"
#include "conset/multinomial.hpp"
#include "conset/rng.hpp"

namespace conset {

// ---------------------------------------------------------------------------
// Covariate models
// ---------------------------------------------------------------------------

// One raw covariate and its single design column. Bernoulli writes "0"/"1"
// and passes the draw through; categorical writes a level string and maps it
// to an indicator via one_levels.
struct CovariateModel {
  enum class Kind { Bernoulli, Categorical };
  Kind kind = Kind::Bernoulli;
  std::string name;    // raw CSV column name
  std::string column;  // generated design column name
  double prob = 0.5;
  std::vector<std::string> levels;
  std::vector<double> probs;
  std::set<std::string> one_levels;
};

inline void validate_covariate(const CovariateModel& model) {
  if (model.name.empty()) throw DataError("covariate model: empty name");
  if (model.kind == CovariateModel::Kind::Bernoulli) {
    if (!(model.prob >= 0.0 && model.prob <= 1.0))
      throw DataError("covariate '" + model.name + "': prob outside [0,1]");
    return;
  }
  if (model.levels.size() < 2)
    throw DataError("covariate '" + model.name + "': needs at least 2 levels");
  if (model.levels.size() != model.probs.size())
    throw DataError("covariate '" + model.name + "': levels/probs length mismatch");
  double total = 0.0;
  for (double p : model.probs) {
    if (!(p >= 0.0)) throw DataError("covariate '" + model.name + "': negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw DataError("covariate '" + model.name + "': probabilities do not sum to 1");
  if (model.one_levels.empty())
    throw DataError("covariate '" + model.name + "': one_levels empty");
  for (const auto& lv : model.one_levels)
    if (std::find(model.levels.begin(), model.levels.end(), lv) == model.levels.end())
      throw DataError("covariate '" + model.name + "': one_level '" + lv + "' not a level");
}

// Draws one value; appends the raw string and the design value.
inline void draw_covariate(const CovariateModel& model, Rng& rng, std::vector<std::string>& raw,
                           std::vector<double>& design) {
  if (model.kind == CovariateModel::Kind::Bernoulli) {
    const bool v = rng.bernoulli(model.prob);
    raw.push_back(v ? "1" : "0");
    design.push_back(v ? 1.0 : 0.0);
    return;
  }
  const std::size_t idx = rng.categorical(model.probs);
  raw.push_back(model.levels[idx]);
  design.push_back(model.one_levels.count(model.levels[idx]) ? 1.0 : 0.0);
}

inline std::vector<std::string> design_names(const std::vector<CovariateModel>& covariates) {
  std::vector<std::string> names{"(Intercept)"};
  for (const auto& c : covariates) names.push_back(c.column.empty() ? c.name : c.column);
  return names;
}

// The binarization scheme under which re-ingesting the written CSV
// reproduces the generator's design matrix exactly.
inline BinarizationScheme scheme_for(const std::vector<CovariateModel>& covariates) {
  BinarizationScheme scheme;
  for (const auto& c : covariates) {
    CovariateRule rule;
    rule.column_name = c.column.empty() ? c.name : c.column;
    if (c.kind == CovariateModel::Kind::Bernoulli) {
      rule.kind = CovariateRule::Kind::Numeric;
    } else {
      rule.kind = CovariateRule::Kind::Indicator;
      rule.one_levels = c.one_levels;
      for (const auto& lv : c.levels)
        if (!c.one_levels.count(lv)) rule.zero_levels.insert(lv);
    }
    scheme.rules[c.name] = std::move(rule);
  }
  return scheme;
}

inline nlohmann::json scheme_to_json(const std::vector<CovariateModel>& covariates) {
  nlohmann::json covs = nlohmann::json::object();
  for (const auto& c : covariates) {
    nlohmann::json rule;
    rule["name"] = c.column.empty() ? c.name : c.column;
    if (c.kind == CovariateModel::Kind::Bernoulli) {
      rule["type"] = "numeric";
    } else {
      rule["type"] = "indicator";
      rule["one_levels"] = c.one_levels;
      std::vector<std::string> zeros;
      for (const auto& lv : c.levels)
        if (!c.one_levels.count(lv)) zeros.push_back(lv);
      rule["zero_levels"] = zeros;
    }
    covs[c.name] = std::move(rule);
  }
  return nlohmann::json{{"covariates", std::move(covs)}};
}

// ---------------------------------------------------------------------------
// Logit-faithful generator
// ---------------------------------------------------------------------------

struct GenerativeSpec {
  OptionSpace options;
  ReducedPowerSet rps;
  Matrix true_beta;  // K x p including the intercept column; columns sum to 0
  std::vector<CovariateModel> covariates;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

struct SimulatedSurvey {
  Dataset data;
  RawSurveyTable raw;
  DropReport dropped;
};

inline void validate_generative_spec(const GenerativeSpec& spec) {
  const std::size_t K = spec.rps.size();
  const std::size_t p = spec.covariates.size() + 1;
  if (spec.true_beta.rows() != K || spec.true_beta.cols() != p)
    throw DataError("generate: true_beta must be " + std::to_string(K) + "x" +
                    std::to_string(p));
  for (std::size_t j = 0; j < p; ++j) {
    double sum = 0.0;
    for (std::size_t q = 0; q < K; ++q) sum += spec.true_beta(q, j);
    if (std::abs(sum) > 1e-8)
      throw DataError("generate: true_beta column " + std::to_string(j) + " does not sum to 0");
  }
  if (spec.n == 0) throw DataError("generate: n must be positive");
  for (const auto& c : spec.covariates) validate_covariate(c);
}

inline SimulatedSurvey generate(const GenerativeSpec& spec) {
  validate_generative_spec(spec);

  SimulatedSurvey out{Dataset{spec.options, spec.rps, {}, design_names(spec.covariates)},
                      RawSurveyTable{}, DropReport{}};
  for (const auto& c : spec.covariates) out.raw.covariate_names.push_back(c.name);
  out.data.observations.reserve(spec.n);
  out.raw.sets.reserve(spec.n);
  out.raw.covariates.reserve(spec.n);

  std::vector<double> x;
  for (std::size_t i = 0; i < spec.n; ++i) {
    Rng rng = Rng::substream(spec.seed, i);
    std::vector<std::string> raw_row;
    x.assign(1, 1.0);
    for (const auto& c : spec.covariates) draw_covariate(c, rng, raw_row, x);

    const std::vector<double> pi = predict_probabilities(spec.true_beta, x);
    const CategoryId q = rng.categorical(pi);

    out.data.observations.push_back(Observation{q, x});
    out.raw.sets.push_back(spec.rps.category(q));
    out.raw.covariates.push_back(std::move(raw_row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elimination-by-aspects generator
// ---------------------------------------------------------------------------

// A gated aspect: with probability sigma(weights . x) the respondent applies
// it and keeps only the intersection with `keep` (skipped if that would
// empty the set).
struct AspectScreen {
  std::string name;
  ConsiderationSet keep;
  std::vector<double> weights;
};

struct EbaSpec {
  OptionSpace options;
  std::vector<CovariateModel> covariates;
  Matrix utility;                  // options x p deterministic utilities
  std::vector<AspectScreen> blocs;        // orientation: softmax over blocs + "none"
  std::vector<AspectScreen> refinements;  // applied in order after orientation
  std::vector<double> decisive;           // gate for collapsing to the best option
  double gumbel_scale = 1.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t min_count = 1;
  DropPolicy drop_policy = DropPolicy::Drop;
};

inline void validate_eba_spec(const EbaSpec& spec) {
  const std::size_t p = spec.covariates.size() + 1;
  const std::size_t m = spec.options.size();
  if (spec.utility.rows() != m || spec.utility.cols() != p)
    throw DataError("eba_generate: utility must be " + std::to_string(m) + "x" +
                    std::to_string(p));
  for (const auto& c : spec.covariates) validate_covariate(c);
  auto check_screen = [&](const AspectScreen& s) {
    if (!s.keep.valid_for(spec.options))
      throw DataError("eba_generate: screen '" + s.name + "' keeps an invalid set");
    if (s.weights.size() != p)
      throw DataError("eba_generate: screen '" + s.name + "' weight length mismatch");
  };
  for (const auto& s : spec.blocs) check_screen(s);
  for (const auto& s : spec.refinements) check_screen(s);
  if (spec.decisive.size() != p)
    throw DataError("eba_generate: decisive weight length mismatch");
  if (spec.n == 0) throw DataError("eba_generate: n must be positive");
  if (!(spec.gumbel_scale >= 0.0)) throw DataError("eba_generate: negative gumbel_scale");
}

namespace detail {

inline double dot(const std::vector<double>& w, const std::vector<double>& x) {
  double s = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
  return s;
}

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace detail

// Raw sets only; Dataset assembly goes through the ingest policy.
inline RawSurveyTable eba_generate_raw(const EbaSpec& spec) {
  validate_eba_spec(spec);
  const std::size_t m = spec.options.size();

  RawSurveyTable table;
  for (const auto& c : spec.covariates) table.covariate_names.push_back(c.name);
  table.sets.reserve(spec.n);
  table.covariates.reserve(spec.n);

  const Mask full = m == 32 ? ~Mask{0} : ((Mask{1} << m) - 1);
  std::vector<double> x, utility(m), bloc_weight;
  for (std::size_t i = 0; i < spec.n; ++i) {
    Rng rng = Rng::substream(spec.seed, i);
    std::vector<std::string> raw_row;
    x.assign(1, 1.0);
    for (const auto& c : spec.covariates) draw_covariate(c, rng, raw_row, x);

    for (std::size_t o = 0; o < m; ++o) {
      utility[o] = spec.gumbel_scale * rng.gumbel();
      for (std::size_t j = 0; j < x.size(); ++j) utility[o] += spec.utility(o, j) * x[j];
    }

    Mask survivors = full;

    // Orientation: softmax over the blocs with a zero-utility "none" slot.
    if (!spec.blocs.empty()) {
      bloc_weight.assign(spec.blocs.size() + 1, 0.0);
      double eta_max = 0.0;  // the "none" slot has eta = 0
      for (std::size_t b = 0; b < spec.blocs.size(); ++b) {
        bloc_weight[b] = detail::dot(spec.blocs[b].weights, x);
        eta_max = std::max(eta_max, bloc_weight[b]);
      }
      for (std::size_t b = 0; b < spec.blocs.size(); ++b)
        bloc_weight[b] = std::exp(bloc_weight[b] - eta_max);
      bloc_weight.back() = std::exp(-eta_max);
      const std::size_t pick = rng.categorical(bloc_weight);
      if (pick < spec.blocs.size()) survivors &= spec.blocs[pick].keep.mask;
    }

    for (const auto& screen : spec.refinements) {
      const bool applies = rng.bernoulli(detail::sigmoid(detail::dot(screen.weights, x)));
      const Mask cut = survivors & screen.keep.mask;
      if (applies && cut != 0) survivors = cut;
    }

    const bool decides = rng.bernoulli(detail::sigmoid(detail::dot(spec.decisive, x)));
    if (survivors == 0 || decides) {
      Mask pool = survivors == 0 ? full : survivors;
      std::size_t best = 0;
      double best_u = -std::numeric_limits<double>::infinity();
      for (std::size_t o = 0; o < m; ++o) {
        if (!((pool >> o) & 1u)) continue;
        if (utility[o] > best_u) {
          best_u = utility[o];
          best = o;
        }
      }
      survivors = Mask{1} << best;
    }

    table.sets.push_back(ConsiderationSet(survivors));
    table.covariates.push_back(std::move(raw_row));
  }
  return table;
}

inline SimulatedSurvey eba_generate(const EbaSpec& spec) {
  RawSurveyTable table = eba_generate_raw(spec);
  auto [data, report] = assemble_dataset(spec.options, table, scheme_for(spec.covariates),
                                         spec.min_count, spec.drop_policy);
  return SimulatedSurvey{std::move(data), std::move(table), std::move(report)};
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline CsvTable survey_to_csv(const RawSurveyTable& table, const OptionSpace& options) {
  CsvTable csv;
  csv.header.push_back("consideration_set");
  for (const auto& name : table.covariate_names) csv.header.push_back(name);
  csv.rows.reserve(table.sets.size());
  for (std::size_t i = 0; i < table.sets.size(); ++i) {
    std::vector<std::string> row;
    row.push_back(format_set_literal(table.sets[i], options));
    for (const auto& v : table.covariates[i]) row.push_back(v);
    csv.rows.push_back(std::move(row));
  }
  return csv;
}

// ---------------------------------------------------------------------------
// JSON loaders
// ---------------------------------------------------------------------------

inline std::vector<CovariateModel> covariates_from_json(const nlohmann::json& arr) {
  std::vector<CovariateModel> out;
  for (const auto& j : arr) {
    CovariateModel c;
    c.name = j.at("name").get<std::string>();
    c.column = j.value("column", c.name);
    const std::string kind = j.value("kind", "bernoulli");
    if (kind == "bernoulli") {
      c.kind = CovariateModel::Kind::Bernoulli;
      c.prob = j.at("prob").get<double>();
    } else if (kind == "categorical") {
      c.kind = CovariateModel::Kind::Categorical;
      for (const auto& lv : j.at("levels")) c.levels.push_back(lv.get<std::string>());
      for (const auto& p : j.at("probs")) c.probs.push_back(p.get<double>());
      for (const auto& lv : j.at("one_levels")) c.one_levels.insert(lv.get<std::string>());
    } else {
      throw DataError("covariate '" + c.name + "': unknown kind '" + kind + "'");
    }
    validate_covariate(c);
    out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

inline Matrix matrix_from_json(const nlohmann::json& arr, const std::string& what) {
  if (!arr.is_array() || arr.empty()) throw DataError(what + ": expected a non-empty 2d array");
  const std::size_t rows = arr.size();
  const std::size_t cols = arr.at(0).size();
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (arr.at(i).size() != cols) throw DataError(what + ": ragged rows");
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = arr.at(i).at(j).get<double>();
  }
  return m;
}

inline std::vector<double> vector_from_json(const nlohmann::json& arr, const std::string& what) {
  if (!arr.is_array()) throw DataError(what + ": expected an array");
  std::vector<double> v;
  for (const auto& e : arr) v.push_back(e.get<double>());
  return v;
}

inline AspectScreen screen_from_json(const nlohmann::json& j, const OptionSpace& options) {
  AspectScreen s;
  s.name = j.value("name", std::string("screen"));
  Mask keep = 0;
  for (const auto& lv : j.at("keep")) {
    const auto idx = options.find(lv.get<std::string>());
    if (!idx) throw DataError("screen '" + s.name + "': unknown option '" +
                              lv.get<std::string>() + "'");
    keep |= Mask{1} << *idx;
  }
  s.keep = ConsiderationSet(keep);
  s.weights = vector_from_json(j.at("weights"), "screen '" + s.name + "' weights");
  return s;
}

}  // namespace detail

inline OptionSpace options_from_json(const nlohmann::json& j) {
  std::vector<std::string> labels;
  for (const auto& lv : j) labels.push_back(lv.get<std::string>());
  return OptionSpace(std::move(labels));
}

inline GenerativeSpec generative_spec_from_json(const nlohmann::json& j) {
  OptionSpace options = options_from_json(j.at("options"));
  std::vector<ConsiderationSet> categories;
  for (const auto& lit : j.at("categories"))
    categories.push_back(parse_set_literal(lit.get<std::string>(), options));
  ReducedPowerSet rps(options, std::move(categories));
  GenerativeSpec spec{std::move(options), std::move(rps),
                      detail::matrix_from_json(j.at("beta"), "beta"),
                      j.contains("covariates") ? covariates_from_json(j.at("covariates"))
                                               : std::vector<CovariateModel>{},
                      j.at("n").get<std::size_t>(), j.at("seed").get<std::uint64_t>()};
  validate_generative_spec(spec);
  return spec;
}

inline EbaSpec eba_spec_from_json(const nlohmann::json& j) {
  EbaSpec spec{options_from_json(j.at("options")),
               j.contains("covariates") ? covariates_from_json(j.at("covariates"))
                                        : std::vector<CovariateModel>{},
               Matrix{}, {}, {}, {}, 1.0,
               j.at("n").get<std::size_t>(), j.at("seed").get<std::uint64_t>(),
               1, DropPolicy::Drop};
  const auto& model = j.at("model");
  spec.utility = detail::matrix_from_json(model.at("utilities"), "utilities");
  for (const auto& b : model.at("blocs")) spec.blocs.push_back(detail::screen_from_json(b, spec.options));
  if (model.contains("refinements"))
    for (const auto& r : model.at("refinements"))
      spec.refinements.push_back(detail::screen_from_json(r, spec.options));
  spec.decisive = detail::vector_from_json(model.at("decisive"), "decisive");
  spec.gumbel_scale = model.value("gumbel_scale", 1.0);
  spec.min_count = model.value("min_count", std::size_t{1});
  if (model.value("drop_policy", "drop") == "error") spec.drop_policy = DropPolicy::Error;
  validate_eba_spec(spec);
  return spec;
}

// Dispatches on the "generator" field: "logit" or "eba".
struct GeneratorConfig {
  enum class Kind { Logit, Eba };
  Kind kind = Kind::Logit;
  std::optional<GenerativeSpec> logit;
  std::optional<EbaSpec> eba;
};

inline GeneratorConfig generator_from_json(const nlohmann::json& j) {
  const std::string kind = j.value("generator", "logit");
  GeneratorConfig config;
  if (kind == "logit") {
    config.kind = GeneratorConfig::Kind::Logit;
    config.logit = generative_spec_from_json(j);
  } else if (kind == "eba") {
    config.kind = GeneratorConfig::Kind::Eba;
    config.eba = eba_spec_from_json(j);
  } else {
    throw DataError("unknown generator '" + kind + "'");
  }
  return config;
}

inline SimulatedSurvey run_generator(const GeneratorConfig& config) {
  return config.kind == GeneratorConfig::Kind::Logit ? generate(*config.logit)
                                                     : eba_generate(*config.eba);
}

inline const std::vector<CovariateModel>& generator_covariates(const GeneratorConfig& config) {
  return config.kind == GeneratorConfig::Kind::Logit ? config.logit->covariates
                                                     : config.eba->covariates;
}

}  // namespace conset
