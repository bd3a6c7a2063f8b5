#pragma once

// Survey ingestion: CSV -> validated raw table -> binarized design matrix ->
// Dataset restricted to the admissible set family.
//
// Input CSV: header row required, first column `consideration_set` holding
// '+'-joined set literals, remaining columns raw covariates (categorical or
// numeric). The binarization scheme is external (JSON): each raw covariate is
// either passed through numerically or mapped to one 0/1 indicator with an
// explicit level partition.

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "conset/core.hpp"
#include "conset/csv.hpp"

namespace conset {

// ---------------------------------------------------------------------------
// Raw survey table
// ---------------------------------------------------------------------------

struct RawSurveyTable {
  std::vector<ConsiderationSet> sets;                // one per row
  std::vector<std::string> covariate_names;          // header minus set column
  std::vector<std::vector<std::string>> covariates;  // raw values, row-major
};

inline RawSurveyTable parse_survey_csv(const std::string& path, const OptionSpace& options) {
  const CsvTable csv = read_csv(path);
  if (csv.header.empty() || csv.header[0] != "consideration_set")
    throw DataError("'" + path + "': first column must be 'consideration_set'");
  std::set<std::string> seen;
  for (std::size_t j = 1; j < csv.header.size(); ++j) {
    if (!seen.insert(csv.header[j]).second)
      throw DataError("'" + path + "': duplicate covariate column '" + csv.header[j] + "'");
  }

  RawSurveyTable table;
  table.covariate_names.assign(csv.header.begin() + 1, csv.header.end());
  table.sets.reserve(csv.rows.size());
  table.covariates.reserve(csv.rows.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    try {
      table.sets.push_back(parse_set_literal(row[0], options));
    } catch (const DataError& e) {
      throw DataError("row " + std::to_string(r + 1) + ": " + e.what());
    }
    table.covariates.emplace_back(row.begin() + 1, row.end());
  }
  return table;
}

// ---------------------------------------------------------------------------
// Binarization
// ---------------------------------------------------------------------------

// Rule for one raw covariate. Indicator rules must name every admissible
// level: one_levels map to 1, zero_levels to 0, anything else is an error.
struct CovariateRule {
  enum class Kind { Numeric, Indicator };
  Kind kind = Kind::Numeric;
  std::string column_name;  // generated design column name
  std::set<std::string> one_levels;
  std::set<std::string> zero_levels;
};

struct BinarizationScheme {
  // Rules keyed by raw covariate name.
  std::map<std::string, CovariateRule> rules;
};

inline BinarizationScheme scheme_from_json(const nlohmann::json& j) {
  BinarizationScheme scheme;
  const auto& covs = j.contains("covariates") ? j.at("covariates") : j;
  for (auto it = covs.begin(); it != covs.end(); ++it) {
    CovariateRule rule;
    const auto& spec = it.value();
    const std::string type = spec.at("type").get<std::string>();
    if (type == "numeric") {
      rule.kind = CovariateRule::Kind::Numeric;
      rule.column_name = spec.value("name", it.key());
    } else if (type == "indicator") {
      rule.kind = CovariateRule::Kind::Indicator;
      rule.column_name = spec.value("name", it.key());
      for (const auto& lv : spec.at("one_levels")) rule.one_levels.insert(lv.get<std::string>());
      for (const auto& lv : spec.at("zero_levels")) rule.zero_levels.insert(lv.get<std::string>());
    } else {
      throw DataError("binarization scheme: unknown type '" + type + "' for covariate '" +
                      it.key() + "'");
    }
    scheme.rules[it.key()] = std::move(rule);
  }
  return scheme;
}

inline BinarizationScheme load_scheme(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scheme '" + path + "'");
  nlohmann::json j;
  in >> j;
  return scheme_from_json(j);
}

// Applies the scheme; output rows are (1, b_1, ..., b_{p-1}) with the
// intercept always prepended. Column order follows the raw table.
inline Matrix binarize(const RawSurveyTable& table, const BinarizationScheme& scheme,
                       std::vector<std::string>* design_names = nullptr) {
  const std::size_t n_raw = table.covariate_names.size();
  std::vector<const CovariateRule*> rules(n_raw, nullptr);
  for (std::size_t j = 0; j < n_raw; ++j) {
    auto it = scheme.rules.find(table.covariate_names[j]);
    if (it == scheme.rules.end())
      throw DataError("binarization scheme does not cover covariate '" +
                      table.covariate_names[j] + "'");
    rules[j] = &it->second;
  }

  if (design_names) {
    design_names->clear();
    design_names->push_back("(Intercept)");
    for (std::size_t j = 0; j < n_raw; ++j) design_names->push_back(rules[j]->column_name);
  }

  Matrix design(table.covariates.size(), n_raw + 1);
  for (std::size_t r = 0; r < table.covariates.size(); ++r) {
    design(r, 0) = 1.0;
    for (std::size_t j = 0; j < n_raw; ++j) {
      const std::string& raw = table.covariates[r][j];
      const CovariateRule& rule = *rules[j];
      if (rule.kind == CovariateRule::Kind::Numeric) {
        char* end = nullptr;
        const double v = std::strtod(raw.c_str(), &end);
        if (end == raw.c_str() || *end != '\0')
          throw DataError("row " + std::to_string(r + 1) + ": covariate '" +
                          table.covariate_names[j] + "' value '" + raw + "' is not numeric");
        design(r, j + 1) = v;
      } else {
        if (rule.one_levels.count(raw)) {
          design(r, j + 1) = 1.0;
        } else if (rule.zero_levels.count(raw)) {
          design(r, j + 1) = 0.0;
        } else {
          throw DataError("row " + std::to_string(r + 1) + ": covariate '" +
                          table.covariate_names[j] + "' level '" + raw +
                          "' not covered by scheme");
        }
      }
    }
  }
  return design;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

enum class DropPolicy { Drop, Error };

struct DropReport {
  std::size_t n_dropped = 0;
  std::vector<std::size_t> dropped_rows;  // 1-based row indices
};

// Builds the reduced power set from the observed sets, binarizes, and keeps
// the rows whose set is admissible. Rows outside the family are dropped with
// a report, or raise an error, per policy.
inline std::pair<Dataset, DropReport> assemble_dataset(const OptionSpace& options,
                                                       const RawSurveyTable& table,
                                                       const BinarizationScheme& scheme,
                                                       std::size_t min_count,
                                                       DropPolicy drop_policy) {
  ReducedPowerSet rps = build_reduced_power_set(options, table.sets, min_count);
  std::vector<std::string> design_names;
  const Matrix design = binarize(table, scheme, &design_names);

  Dataset data{options, std::move(rps), {}, std::move(design_names)};
  DropReport report;
  for (std::size_t r = 0; r < table.sets.size(); ++r) {
    const auto id = data.rps.encode(table.sets[r]);
    if (!id) {
      report.n_dropped++;
      report.dropped_rows.push_back(r + 1);
      continue;
    }
    Observation obs;
    obs.category = *id;
    obs.covariates.assign(design.row_ptr(r), design.row_ptr(r) + design.cols());
    data.observations.push_back(std::move(obs));
  }

  if (drop_policy == DropPolicy::Error && report.n_dropped > 0) {
    std::ostringstream msg;
    msg << report.n_dropped << " rows outside the reduced power set (rows";
    for (std::size_t r : report.dropped_rows) msg << ' ' << r;
    msg << ")";
    throw DataError(msg.str());
  }
  return {std::move(data), std::move(report)};
}

}  // namespace conset
