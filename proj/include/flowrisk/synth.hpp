#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowrisk/error.hpp"
#include "flowrisk/feature_spec.hpp"
#include "flowrisk/feature_table.hpp"
#include "flowrisk/logistic.hpp"
#include "flowrisk/rng.hpp"
#include "flowrisk/spec_json.hpp"

namespace flowrisk {

// How synthetic labels are derived from the planted score z*.
enum class LabelingMode {
  quantile,   // exactly round(prevalence * n) positives: the top-z* rows
  bernoulli,  // y_i ~ Bernoulli(sigmoid(z*_i)); prevalence field is advisory
};

enum class BaseDistribution {
  standard_normal,
  lognormal,  // exp of a standard normal: positive, right-skewed, like most flow quantities
};

struct PlantedSpec {
  FeatureSpec spec;
  double coefficient = 0.0;
};

// Ground truth for a generated dataset: the score is
//   z*_i = intercept + sum_k coefficient_k * spec_k(row i)
// and labels derive from z* by the chosen mode. Columns are named x1..xd;
// truth specs must reference those names. Columns not referenced by any
// spec are pure noise.
struct PlantedTruth {
  std::vector<PlantedSpec> specs;
  double intercept = 0.0;
  double prevalence = 0.02;
  LabelingMode mode = LabelingMode::quantile;
  BaseDistribution distribution = BaseDistribution::standard_normal;
};

struct SynthResult {
  FeatureTable table;  // label attached
  std::vector<std::string> noise_columns;
};

namespace detail {

inline std::vector<double> draw_column(std::size_t n, BaseDistribution distribution,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> column(n);
  for (double& v : column) {
    const double z = rng.next_normal();
    v = distribution == BaseDistribution::lognormal ? std::exp(z) : z;
  }
  return column;
}

// Point-biserial correlation between a continuous column and binary labels.
inline double point_biserial(std::span<const double> column,
                             std::span<const std::uint8_t> labels) {
  const std::size_t n = column.size();
  double sum = 0.0, sum1 = 0.0;
  std::size_t n1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += column[i];
    if (labels[i]) {
      sum1 += column[i];
      ++n1;
    }
  }
  const std::size_t n0 = n - n1;
  if (n1 == 0 || n0 == 0) fail("single-class", "labels are single-class");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = column[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 0.0)) return 0.0;
  const double mean1 = sum1 / static_cast<double>(n1);
  const double mean0 = (sum - sum1) / static_cast<double>(n0);
  return (mean1 - mean0) / sd *
         std::sqrt(static_cast<double>(n1) * static_cast<double>(n0)) /
         static_cast<double>(n);
}

}  // namespace detail

// Generates an n x d table with planted structure. Deterministic in `seed`:
// every column has its own derived stream, so neither d nor the redraw of
// one noise column perturbs the others.
//
// Noise columns (those no truth spec references) are checked for accidental
// label correlation; any with |point-biserial| > 3/sqrt(n) is redrawn from a
// fresh derived stream (deterministically) until independent, so "noise
// column" in the output is true by construction, not just in expectation.
inline SynthResult generate_synthetic(const PlantedTruth& truth, std::size_t n, std::size_t d,
                                      std::uint64_t seed) {
  if (n < 1000) fail("config-invalid", "need at least 1000 rows, got " + std::to_string(n));
  if (d < 1) fail("config-invalid", "need at least one column");
  if (!(truth.prevalence > 0.0 && truth.prevalence < 0.5))
    fail("config-invalid", "prevalence must lie in (0, 0.5)");

  SynthResult result;
  FeatureTable& table = result.table;
  table.n_rows = n;
  table.column_names.reserve(d);
  for (std::size_t j = 1; j <= d; ++j) table.column_names.push_back("x" + std::to_string(j));
  for (const PlantedSpec& planted : truth.specs) {
    if (!table.column_index(planted.spec.name_a) ||
        (planted.spec.kind == SpecKind::interaction &&
         !table.column_index(planted.spec.name_b)))
      fail("config-invalid", "truth spec " + to_string(planted.spec) +
                                 " references a column outside x1..x" + std::to_string(d));
  }

  table.columns.resize(d);
  for (std::size_t j = 0; j < d; ++j)
    table.columns[j] = detail::draw_column(n, truth.distribution, derive_seed(seed, j + 1));

  // Planted score.
  std::vector<FeatureSpec> specs;
  for (const PlantedSpec& planted : truth.specs) specs.push_back(planted.spec);
  std::vector<double> z(n, truth.intercept);
  if (!specs.empty()) {
    const Matrix terms = materialize_all_rows(table, specs);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = terms.row(i);
      double v = truth.intercept;
      for (std::size_t k = 0; k < specs.size(); ++k) v += truth.specs[k].coefficient * row[k];
      z[i] = v;
    }
  }

  // Labels.
  std::vector<std::uint8_t> labels(n, 0);
  if (truth.mode == LabelingMode::quantile) {
    const auto m = static_cast<std::size_t>(std::llround(truth.prevalence * static_cast<double>(n)));
    if (m == 0 || m >= n)
      fail("config-invalid", "prevalence " + format_double(truth.prevalence) +
                                 " rounds to a degenerate positive count");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (z[a] != z[b]) return z[a] > z[b];
      return a < b;
    });
    if (z[order[m - 1]] == z[order[m]])
      fail("degenerate-data",
           "tied scores straddle the quantile boundary; the exact positive count is not "
           "well defined (is the truth informative enough?)");
    for (std::size_t i = 0; i < m; ++i) labels[order[i]] = 1;
  } else {
    Rng rng(derive_seed(seed, 0xbe7'0000ull));
    for (std::size_t i = 0; i < n; ++i) labels[i] = rng.next_double() < sigmoid(z[i]) ? 1 : 0;
    std::size_t positives = 0;
    for (auto y : labels) positives += y;
    if (positives == 0 || positives == n)
      fail("single-class", "Bernoulli labeling produced a single class");
  }

  // Noise audit.
  const double bound = 3.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t j = 0; j < d; ++j) {
    const std::string& name = table.column_names[j];
    bool referenced = false;
    for (const PlantedSpec& planted : truth.specs)
      referenced = referenced || planted.spec.name_a == name ||
                   (planted.spec.kind == SpecKind::interaction && planted.spec.name_b == name);
    if (referenced) continue;
    result.noise_columns.push_back(name);
    for (std::size_t attempt = 1; std::abs(detail::point_biserial(table.columns[j], labels)) > bound;
         ++attempt) {
      if (attempt > 64)
        fail("internal", "could not draw an independent noise column for " + name);
      table.columns[j] =
          detail::draw_column(n, truth.distribution, derive_seed(seed, j + 1, attempt));
    }
  }

  table.label = std::move(labels);
  return result;
}

// --- truth (de)serialization, used by config files and the synth stage ---

inline nlohmann::json truth_to_json(const PlantedTruth& truth) {
  nlohmann::json specs = nlohmann::json::array();
  for (const PlantedSpec& planted : truth.specs) {
    nlohmann::json j = spec_to_json(planted.spec);
    j["coefficient"] = planted.coefficient;
    specs.push_back(std::move(j));
  }
  return {{"specs", std::move(specs)},
          {"intercept", truth.intercept},
          {"prevalence", truth.prevalence},
          {"mode", truth.mode == LabelingMode::quantile ? "quantile" : "bernoulli"},
          {"distribution", truth.distribution == BaseDistribution::lognormal
                               ? "lognormal"
                               : "standard_normal"}};
}

inline PlantedTruth truth_from_json(const nlohmann::json& j) {
  PlantedTruth truth;
  for (const auto& item : j.at("specs")) {
    PlantedSpec planted;
    planted.spec = spec_from_json(item);
    planted.coefficient = item.at("coefficient").get<double>();
    truth.specs.push_back(std::move(planted));
  }
  truth.intercept = j.value("intercept", 0.0);
  truth.prevalence = j.value("prevalence", 0.02);
  const std::string mode = j.value("mode", "quantile");
  if (mode == "quantile") {
    truth.mode = LabelingMode::quantile;
  } else if (mode == "bernoulli") {
    truth.mode = LabelingMode::bernoulli;
  } else {
    fail("config-invalid", "unknown labeling mode: " + mode);
  }
  const std::string distribution = j.value("distribution", "standard_normal");
  if (distribution == "standard_normal") {
    truth.distribution = BaseDistribution::standard_normal;
  } else if (distribution == "lognormal") {
    truth.distribution = BaseDistribution::lognormal;
  } else {
    fail("config-invalid", "unknown base distribution: " + distribution);
  }
  return truth;
}

}  // namespace flowrisk
