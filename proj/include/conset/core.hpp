#pragma once

// Option spaces, consideration sets and the reduced power set.
//
// A consideration set is the set of options a respondent is still pondering
// between; a decided respondent contributes a singleton. Sets are ontic: each
// admissible set is a category of its own, with no set-theoretic relation to
// the others. The admissible family (all singletons plus frequent
// non-singleton sets, empty set excluded) indexes the categorical outcome.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "conset/common.hpp"

namespace conset {

using Mask = std::uint32_t;
using CategoryId = std::size_t;

// ---------------------------------------------------------------------------
// OptionSpace
// ---------------------------------------------------------------------------

// The finite set of options (e.g. parties). Order is significant: it fixes
// bit positions and the canonical category order. At most 32 options so a
// set fits a fixed-width bitmask.
class OptionSpace {
 public:
  explicit OptionSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw DataError("OptionSpace: no options given");
    if (labels_.size() > 32) throw DataError("OptionSpace: more than 32 options");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].empty()) throw DataError("OptionSpace: empty option label");
      if (!index_.emplace(labels_[i], i).second)
        throw DataError("OptionSpace: duplicate option label '" + labels_[i] + "'");
    }
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t i) const { return labels_[i]; }

  std::optional<std::size_t> find(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> labels_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// ConsiderationSet
// ---------------------------------------------------------------------------

// Non-empty subset of an OptionSpace, stored as a bitmask.
struct ConsiderationSet {
  Mask mask = 0;

  ConsiderationSet() = default;
  explicit ConsiderationSet(Mask m) : mask(m) {}

  std::size_t cardinality() const { return static_cast<std::size_t>(std::popcount(mask)); }
  bool is_singleton() const { return cardinality() == 1; }
  bool contains(std::size_t option) const { return (mask >> option) & 1u; }

  bool valid_for(const OptionSpace& options) const {
    if (mask == 0) return false;
    const Mask allowed = options.size() == 32 ? ~Mask{0} : ((Mask{1} << options.size()) - 1);
    return (mask & ~allowed) == 0;
  }

  static ConsiderationSet singleton(std::size_t option) {
    return ConsiderationSet(Mask{1} << option);
  }

  bool operator==(const ConsiderationSet& o) const { return mask == o.mask; }
  bool operator!=(const ConsiderationSet& o) const { return mask != o.mask; }
};

// Set literal format: option labels joined by '+', e.g. "SPD+Green".
// Matching is case-sensitive; tokens must be distinct.
inline ConsiderationSet parse_set_literal(const std::string& text, const OptionSpace& options) {
  Mask mask = 0;
  std::size_t start = 0;
  if (text.empty()) throw DataError("empty set literal");
  while (true) {
    const std::size_t plus = text.find('+', start);
    const std::string token =
        plus == std::string::npos ? text.substr(start) : text.substr(start, plus - start);
    if (token.empty()) throw DataError("empty token in set literal '" + text + "'");
    const auto idx = options.find(token);
    if (!idx) throw DataError("unknown option '" + token + "' in set literal '" + text + "'");
    const Mask bit = Mask{1} << *idx;
    if (mask & bit) throw DataError("duplicate option '" + token + "' in set literal '" + text + "'");
    mask |= bit;
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return ConsiderationSet(mask);
}

inline std::string format_set_literal(ConsiderationSet set, const OptionSpace& options) {
  std::ostringstream out;
  bool first = true;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (!set.contains(i)) continue;
    if (!first) out << '+';
    out << options.label(i);
    first = false;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// ReducedPowerSet
// ---------------------------------------------------------------------------

// The admissible family of consideration sets, densely indexed. Always
// contains every singleton; never contains the empty set. Canonical order:
// singletons in option order, then non-singletons by cardinality, ties by
// ascending mask value.
class ReducedPowerSet {
 public:
  ReducedPowerSet(const OptionSpace& options, std::vector<ConsiderationSet> categories)
      : categories_(std::move(categories)) {
    for (std::size_t i = 0; i < options.size(); ++i) {
      if (i >= categories_.size() || categories_[i].mask != (Mask{1} << i))
        throw DataError("ReducedPowerSet: singletons missing or out of order");
    }
    for (std::size_t j = 0; j < categories_.size(); ++j) {
      if (!categories_[j].valid_for(options))
        throw DataError("ReducedPowerSet: invalid category mask");
      if (!index_.emplace(categories_[j].mask, j).second)
        throw DataError("ReducedPowerSet: duplicate category");
    }
  }

  std::size_t size() const { return categories_.size(); }
  const std::vector<ConsiderationSet>& categories() const { return categories_; }
  ConsiderationSet category(CategoryId q) const { return categories_[q]; }

  std::optional<CategoryId> encode(ConsiderationSet set) const {
    auto it = index_.find(set.mask);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<ConsiderationSet> categories_;
  std::map<Mask, CategoryId> index_;
};

// Builds the admissible family from observed sets: all singletons are kept
// unconditionally, a non-singleton set is kept when it occurs at least
// min_count times.
inline ReducedPowerSet build_reduced_power_set(const OptionSpace& options,
                                               const std::vector<ConsiderationSet>& observed_sets,
                                               std::size_t min_count) {
  std::map<Mask, std::size_t> freq;
  for (std::size_t i = 0; i < observed_sets.size(); ++i) {
    if (!observed_sets[i].valid_for(options))
      throw DataError("build_reduced_power_set: invalid set at index " + std::to_string(i));
    ++freq[observed_sets[i].mask];
  }

  std::vector<ConsiderationSet> categories;
  for (std::size_t i = 0; i < options.size(); ++i)
    categories.push_back(ConsiderationSet::singleton(i));

  std::vector<ConsiderationSet> extra;
  for (const auto& [mask, count] : freq) {
    ConsiderationSet set(mask);
    if (set.is_singleton()) continue;
    if (count >= min_count) extra.push_back(set);
  }
  std::sort(extra.begin(), extra.end(), [](ConsiderationSet a, ConsiderationSet b) {
    if (a.cardinality() != b.cardinality()) return a.cardinality() < b.cardinality();
    return a.mask < b.mask;
  });
  categories.insert(categories.end(), extra.begin(), extra.end());
  return ReducedPowerSet(options, std::move(categories));
}

// encode_set: dense id when the set belongs to the family, nullopt otherwise.
// The caller decides the drop policy.
inline std::optional<CategoryId> encode_set(ConsiderationSet set, const ReducedPowerSet& rps) {
  return rps.encode(set);
}

// ---------------------------------------------------------------------------
// Observations and datasets
// ---------------------------------------------------------------------------

// One respondent: category id plus the binarized design row. The design row
// always starts with the intercept entry 1.
struct Observation {
  CategoryId category = 0;
  std::vector<double> covariates;
};

struct Dataset {
  OptionSpace options;
  ReducedPowerSet rps;
  std::vector<Observation> observations;
  std::vector<std::string> covariate_names;  // length p, first entry "(Intercept)"

  std::size_t n() const { return observations.size(); }
  std::size_t num_categories() const { return rps.size(); }
  std::size_t num_covariates() const { return covariate_names.size(); }
};

// Count statistic over categories: counts[q] respondents per category.
struct CountStatistic {
  std::vector<std::size_t> counts;
  std::size_t n = 0;
};

inline CountStatistic count_statistics(const Dataset& data) {
  CountStatistic stat;
  stat.counts.assign(data.num_categories(), 0);
  for (const Observation& obs : data.observations) {
    ++stat.counts[obs.category];
    ++stat.n;
  }
  return stat;
}

// Share of observations whose category is a non-singleton set.
inline double undecided_share(const Dataset& data) {
  if (data.observations.empty()) return 0.0;
  std::size_t undecided = 0;
  for (const Observation& obs : data.observations)
    if (!data.rps.category(obs.category).is_singleton()) ++undecided;
  return static_cast<double>(undecided) / static_cast<double>(data.n());
}

}  // namespace conset
