#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowrisk/error.hpp"
#include "flowrisk/feature_table.hpp"
#include "flowrisk/logistic.hpp"

namespace flowrisk {

// Simple glob match: '*' matches any run of characters, '?' any single one.
// Case-sensitive; used for name-based column exclusion.
inline bool glob_match(std::string_view pattern, std::string_view name) {
  std::size_t p = 0, n = 0;
  std::size_t star = std::string_view::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

struct ScreenConfig {
  std::vector<std::string> exclusion_patterns;  // glob patterns on column names
  double constant_tolerance = 1e-12;            // variance at or below => constant
  double correlation_threshold = 0.95;          // |pearson r| above => redundant
  double importance_cutoff = 0.01;              // stage-2 coefficient-importance floor
};

enum class RemovalReason { pattern, constant, correlated };

inline std::string to_string(RemovalReason reason) {
  switch (reason) {
    case RemovalReason::pattern: return "pattern";
    case RemovalReason::constant: return "constant";
    case RemovalReason::correlated: return "correlated";
  }
  return {};
}

struct RemovalRecord {
  std::string column;
  RemovalReason reason;
  std::string detail;
};

struct ScreenResult {
  std::vector<std::string> retained;  // input order preserved
  std::vector<RemovalRecord> removed;
};

namespace detail {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population
};

inline Moments column_moments(std::span<const double> column,
                              std::span<const std::size_t> rows) {
  Moments m;
  double sum = 0.0;
  for (std::size_t idx : rows) sum += column[idx];
  m.mean = sum / static_cast<double>(rows.size());
  double ss = 0.0;
  for (std::size_t idx : rows) {
    const double d = column[idx] - m.mean;
    ss += d * d;
  }
  m.variance = ss / static_cast<double>(rows.size());
  return m;
}

}  // namespace detail

// Stage-1 structural screen over training rows: name-pattern exclusions,
// then (near-)constant columns, then one of each highly correlated pair.
// Correlation pruning is greedy in priority order (higher variance first,
// names as tie-break): a column is dropped if it correlates above the
// threshold with an already-kept column, so the kept set is self-consistent
// and rescreening it is a no-op.
inline ScreenResult screen_columns(const FeatureTable& table,
                                   std::span<const std::size_t> rows,
                                   const ScreenConfig& config) {
  if (rows.empty()) fail("degenerate-data", "no rows to screen on");
  ScreenResult result;
  std::vector<std::size_t> survivors;  // column indices past pattern+constant stages
  std::vector<detail::Moments> moments(table.column_names.size());

  for (std::size_t j = 0; j < table.column_names.size(); ++j) {
    const std::string& name = table.column_names[j];
    std::string matched;
    for (const auto& pattern : config.exclusion_patterns) {
      if (glob_match(pattern, name)) {
        matched = pattern;
        break;
      }
    }
    if (!matched.empty()) {
      result.removed.push_back({name, RemovalReason::pattern, "matched '" + matched + "'"});
      continue;
    }
    moments[j] = detail::column_moments(table.columns[j], rows);
    if (moments[j].variance <= config.constant_tolerance) {
      result.removed.push_back(
          {name, RemovalReason::constant, "variance " + format_double(moments[j].variance)});
      continue;
    }
    survivors.push_back(j);
  }

  // Priority order for the correlation pass.
  std::vector<std::size_t> priority = survivors;
  std::sort(priority.begin(), priority.end(), [&](std::size_t a, std::size_t b) {
    if (moments[a].variance != moments[b].variance)
      return moments[a].variance > moments[b].variance;
    return table.column_names[a] < table.column_names[b];
  });

  std::vector<std::size_t> kept;
  std::vector<std::pair<std::string, std::string>> correlated_with(table.column_names.size());
  std::vector<bool> dropped(table.column_names.size(), false);
  const double nrows = static_cast<double>(rows.size());
  for (std::size_t candidate : priority) {
    bool redundant = false;
    for (std::size_t keeper : kept) {
      double cross = 0.0;
      const auto& ca = table.columns[candidate];
      const auto& cb = table.columns[keeper];
      const double ma = moments[candidate].mean, mb = moments[keeper].mean;
      for (std::size_t idx : rows) cross += (ca[idx] - ma) * (cb[idx] - mb);
      const double r = cross / nrows /
                       std::sqrt(moments[candidate].variance * moments[keeper].variance);
      if (std::abs(r) > config.correlation_threshold) {
        dropped[candidate] = true;
        correlated_with[candidate] = {table.column_names[keeper],
                                      "r=" + format_double(r) + " with " +
                                          table.column_names[keeper]};
        redundant = true;
        break;
      }
    }
    if (!redundant) kept.push_back(candidate);
  }

  for (std::size_t j : survivors) {
    if (dropped[j]) {
      result.removed.push_back(
          {table.column_names[j], RemovalReason::correlated, correlated_with[j].second});
    } else {
      result.retained.push_back(table.column_names[j]);
    }
  }
  if (result.retained.empty())
    fail("empty-result", "screening removed every column");
  return result;
}

struct ImportanceScreenResult {
  std::vector<std::string> kept;          // input order preserved
  std::vector<double> importances;        // aligned with the input name list
  LinearWeights model_weights;            // the screening fit, for reporting
};

// Stage-2 model-based screen: fit one balanced L2 logistic model on all
// candidate columns (standardized, training rows) and keep columns whose
// normalized coefficient importance reaches the cutoff.
inline ImportanceScreenResult importance_screen(const FeatureTable& table,
                                                std::span<const std::size_t> rows,
                                                std::span<const std::uint8_t> labels,
                                                std::span<const std::string> names,
                                                const TrainConfig& train,
                                                double importance_cutoff) {
  if (names.size() < 2)
    fail("config-invalid", "importance screen needs at least 2 candidate columns");

  std::vector<FeatureSpec> specs;
  specs.reserve(names.size());
  for (const auto& name : names) specs.push_back(base_spec(name));
  Matrix x = materialize(table, specs, rows);
  Standardizer standardizer = Standardizer::fit(x);
  standardizer.apply(x);
  std::vector<std::uint8_t> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];

  ImportanceScreenResult result;
  result.model_weights = fit_weights(x, y, train);
  result.importances = coefficient_importance(result.model_weights.coefficients);
  for (std::size_t j = 0; j < names.size(); ++j)
    if (result.importances[j] >= importance_cutoff) result.kept.push_back(names[j]);
  if (result.kept.empty())
    fail("empty-result", "no column reaches importance cutoff " +
                             format_double(importance_cutoff));
  return result;
}

}  // namespace flowrisk
