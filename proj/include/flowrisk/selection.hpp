#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "flowrisk/error.hpp"
#include "flowrisk/feature_spec.hpp"
#include "flowrisk/logistic.hpp"
#include "flowrisk/metrics.hpp"
#include "flowrisk/parallel.hpp"
#include "flowrisk/rng.hpp"
#include "flowrisk/split.hpp"

namespace flowrisk {

struct CvConfig {
  std::size_t folds = 5;
  std::uint64_t seed = 1;
};

struct LofoResult {
  double baseline = 0.0;        // mean cross-validated PR-AUC with all specs
  std::vector<double> deltas;   // baseline - PR-AUC(without spec j), per spec
};

namespace detail {

// Standardized per-fold train/holdout matrices, shared read-only across the
// refits of one LOFO evaluation.
struct FoldData {
  Matrix train;                     // standardized, fold-train rows
  Matrix holdout;                   // standardized with the SAME parameters
  std::vector<std::uint8_t> y_train;
  std::vector<std::uint8_t> y_holdout;
};

inline std::vector<FoldData> build_folds(const FeatureTable& table,
                                         std::span<const std::size_t> rows,
                                         std::span<const std::uint8_t> labels,
                                         std::span<const FeatureSpec> specs,
                                         const CvConfig& cv) {
  // Fold assignment works on the sorted index list, so results do not
  // depend on the caller's row ordering.
  std::vector<std::size_t> sorted(rows.begin(), rows.end());
  std::sort(sorted.begin(), sorted.end());
  const auto folds = stratified_folds(sorted, labels, cv.folds, cv.seed);

  std::vector<FoldData> out(folds.size());
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train_rows;
    train_rows.reserve(sorted.size() - folds[f].size());
    // folds[f] and sorted are both ascending: set-difference gives fold-train.
    std::set_difference(sorted.begin(), sorted.end(), folds[f].begin(), folds[f].end(),
                        std::back_inserter(train_rows));
    FoldData& fold = out[f];
    fold.train = materialize(table, specs, train_rows);
    const Standardizer standardizer = Standardizer::fit(fold.train);
    standardizer.apply(fold.train);
    fold.holdout = materialize(table, specs, folds[f]);
    standardizer.apply(fold.holdout);
    fold.y_train.resize(train_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) fold.y_train[i] = labels[train_rows[i]];
    fold.y_holdout.resize(folds[f].size());
    for (std::size_t i = 0; i < folds[f].size(); ++i) fold.y_holdout[i] = labels[folds[f][i]];
  }
  return out;
}

// Holdout PR-AUC of a fitted fold model. Ranking by the linear predictor is
// equivalent to ranking by probability (sigmoid is strictly increasing) and
// avoids saturation ties at |z| > ~36.
inline double fold_auc(const FoldData& fold, const LinearWeights& weights) {
  const std::vector<double> z = linear_scores(fold.holdout, weights);
  return pr_auc(z, fold.y_holdout);
}

}  // namespace detail

// Leave-one-feature-out importance under stratified cross-validation.
// For each fold, one model is fitted on all specs; then, for each spec j,
// the model is refitted with j's coefficient pinned to zero (identical to
// removing the column, cheaper than copying the matrix; the refit warm-
// starts from the fold's full model, which cannot change the optimum of a
// strictly convex objective). Importance of j is the mean PR-AUC drop:
//   delta_j = PR-AUC(all specs) - PR-AUC(without j),
// positive when removing j hurts.
inline LofoResult lofo_importances(const FeatureTable& table,
                                   std::span<const std::size_t> rows,
                                   std::span<const std::uint8_t> labels,
                                   std::span<const FeatureSpec> specs,
                                   const TrainConfig& train, const CvConfig& cv) {
  if (specs.size() < 2) fail("config-invalid", "leave-one-feature-out needs at least 2 specs");
  const auto folds = detail::build_folds(table, rows, labels, specs, cv);
  const std::size_t nf = folds.size();
  const std::size_t ns = specs.size();

  // Per-fold baselines first (they seed the warm starts).
  std::vector<LinearWeights> baseline_weights(nf);
  std::vector<double> baseline_auc(nf);
  parallel_for(nf, [&](std::size_t f) {
    baseline_weights[f] = fit_weights(folds[f].train, folds[f].y_train, train);
    baseline_auc[f] = detail::fold_auc(folds[f], baseline_weights[f]);
  });

  // Masked refits, one task per (fold, spec) pair.
  std::vector<double> masked_auc(nf * ns);
  parallel_for(nf * ns, [&](std::size_t task) {
    const std::size_t f = task / ns;
    const std::size_t j = task % ns;
    std::vector<std::uint8_t> active(ns, 1);
    active[j] = 0;
    LinearWeights warm = baseline_weights[f];
    warm.coefficients[j] = 0.0;
    FitOptions options;
    options.warm_start = &warm;
    options.active = active;
    const LinearWeights refit = fit_weights(folds[f].train, folds[f].y_train, train,
                                            nullptr, options);
    masked_auc[task] = detail::fold_auc(folds[f], refit);
  });

  LofoResult result;
  for (std::size_t f = 0; f < nf; ++f) result.baseline += baseline_auc[f];
  result.baseline /= static_cast<double>(nf);
  result.deltas.assign(ns, 0.0);
  for (std::size_t j = 0; j < ns; ++j) {
    double mean = 0.0;
    for (std::size_t f = 0; f < nf; ++f) mean += masked_auc[f * ns + j];
    mean /= static_cast<double>(nf);
    result.deltas[j] = result.baseline - mean;
  }
  return result;
}

struct RfeConfig {
  CvConfig cv;
  double epsilon_rel = 0.005;        // decline margin relative to the best baseline
  std::size_t patience = 3;          // consecutive below-margin iterations to stop
  std::size_t smoothing_window = 5;  // trailing raw deltas averaged per spec
  std::size_t min_specs = 2;         // hard floor on the retained set
};

struct RfeIteration {
  std::vector<FeatureSpec> retained;    // set evaluated this iteration
  std::vector<double> raw_deltas;       // aligned with retained
  std::vector<double> smoothed_deltas;  // trailing means, aligned with retained
  double baseline = 0.0;                // CV PR-AUC of the retained set
  std::optional<FeatureSpec> eliminated;
};

struct SelectionTrace {
  std::vector<RfeIteration> iterations;
  std::vector<FeatureSpec> best_subset;  // retained set of the best-baseline iteration
  double best_pr_auc = 0.0;
  std::size_t best_iteration = 0;
};

struct RfeResult {
  std::vector<FeatureSpec> final_specs;  // == trace.best_subset
  SelectionTrace trace;
};

namespace detail {

struct SpecLess {
  bool operator()(const FeatureSpec& a, const FeatureSpec& b) const { return spec_less(a, b); }
};

}  // namespace detail

// Recursive feature elimination driven by smoothed LOFO importances.
//
// Each iteration evaluates the retained set, smooths every surviving spec's
// delta by the mean of its last up-to-`smoothing_window` recorded values
// (raw deltas keep accumulating per spec across iterations), and eliminates
// the spec with the lowest smoothed importance (canonical spec order breaks
// exact ties). The loop stops after `patience` consecutive iterations whose
// baseline sits below best * (1 - epsilon_rel), or at the `min_specs` floor;
// the result is the retained set of the best-baseline iteration seen, not
// whatever set the stop happened on.
inline RfeResult rfe_loop(const FeatureTable& table, std::span<const std::size_t> rows,
                          std::span<const std::uint8_t> labels,
                          std::vector<FeatureSpec> specs, const TrainConfig& train,
                          const RfeConfig& config) {
  if (specs.size() < config.min_specs)
    fail("config-invalid", "cannot eliminate from " + std::to_string(specs.size()) +
                               " specs with a floor of " + std::to_string(config.min_specs));
  RfeResult result;
  std::map<FeatureSpec, std::vector<double>, detail::SpecLess> history;
  std::size_t declining = 0;

  while (true) {
    const LofoResult lofo = lofo_importances(table, rows, labels, specs, train, config.cv);

    RfeIteration iteration;
    iteration.retained = specs;
    iteration.raw_deltas = lofo.deltas;
    iteration.baseline = lofo.baseline;
    iteration.smoothed_deltas.resize(specs.size());
    for (std::size_t j = 0; j < specs.size(); ++j) {
      auto& past = history[specs[j]];
      past.push_back(lofo.deltas[j]);
      const std::size_t window = std::min(config.smoothing_window, past.size());
      double mean = 0.0;
      for (std::size_t k = past.size() - window; k < past.size(); ++k) mean += past[k];
      iteration.smoothed_deltas[j] = mean / static_cast<double>(window);
    }

    if (result.trace.iterations.empty() || lofo.baseline > result.trace.best_pr_auc) {
      result.trace.best_pr_auc = lofo.baseline;
      result.trace.best_subset = specs;
      result.trace.best_iteration = result.trace.iterations.size();
    }
    if (lofo.baseline < result.trace.best_pr_auc * (1.0 - config.epsilon_rel)) {
      ++declining;
    } else {
      declining = 0;
    }

    const bool stop_decline = declining >= config.patience;
    const bool stop_floor = specs.size() <= config.min_specs;
    if (stop_decline || stop_floor) {
      result.trace.iterations.push_back(std::move(iteration));
      break;
    }

    std::size_t victim = 0;
    for (std::size_t j = 1; j < specs.size(); ++j) {
      if (iteration.smoothed_deltas[j] < iteration.smoothed_deltas[victim] ||
          (iteration.smoothed_deltas[j] == iteration.smoothed_deltas[victim] &&
           spec_less(specs[j], specs[victim])))
        victim = j;
    }
    iteration.eliminated = specs[victim];
    result.trace.iterations.push_back(std::move(iteration));
    specs.erase(specs.begin() + static_cast<std::ptrdiff_t>(victim));
  }

  result.final_specs = result.trace.best_subset;
  return result;
}

// Permutation importance on held-out rows: PR-AUC degradation when one
// standardized input column is shuffled, averaged over `repeats` seeded
// permutations. Scores use the linear predictor (rank-equivalent to
// probabilities). A column whose permuted values equal the originals (e.g.
// a constant column) reproduces the baseline score exactly, so its reported
// drop is exactly zero.
inline std::vector<double> permutation_importance(const LogisticModel& model,
                                                  const FeatureTable& table,
                                                  std::span<const std::size_t> rows,
                                                  std::span<const std::uint8_t> labels,
                                                  std::size_t repeats, std::uint64_t seed,
                                                  double* baseline_out = nullptr) {
  if (repeats == 0) fail("config-invalid", "permutation importance needs repeats >= 1");
  Matrix x = materialize(table, model.feature_specs, rows);
  model.standardizer.apply(x);
  std::vector<std::uint8_t> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];

  LinearWeights weights{model.intercept, model.coefficients};
  const std::vector<double> z0 = linear_scores(x, weights);
  const double baseline = pr_auc(z0, y);
  if (baseline_out) *baseline_out = baseline;

  const std::size_t n = rows.size();
  const std::size_t ns = model.feature_specs.size();
  std::vector<double> drops(ns, 0.0);
  std::vector<double> column(n), shuffled(n), z(n);
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < ns; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = x.at(i, j);
    const double beta = model.coefficients[j];
    // Accumulate per-repeat drops, not AUCs: a permutation that leaves the
    // column bit-identical (e.g. a constant column) contributes exactly 0,
    // so such features score exactly 0 instead of mean-rounding noise.
    double drop_sum = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      Rng rng(derive_seed(seed, j, r));
      rng.shuffle(perm);
      bool unchanged = true;
      for (std::size_t i = 0; i < n; ++i) {
        shuffled[i] = column[perm[i]];
        unchanged = unchanged && shuffled[i] == column[i];
      }
      if (unchanged) continue;
      for (std::size_t i = 0; i < n; ++i) z[i] = z0[i] + beta * (shuffled[i] - column[i]);
      drop_sum += baseline - pr_auc(z, y);
    }
    drops[j] = drop_sum / static_cast<double>(repeats);
  }
  return drops;
}

// Trace export: one row per (iteration, spec) with the raw and smoothed
// deltas, plus per-iteration baseline and the eliminated spec.
inline void write_selection_trace_csv(const SelectionTrace& trace, std::ostream& out) {
  out << "iteration,baseline_pr_auc,spec,raw_delta,smoothed_delta,eliminated\n";
  for (std::size_t it = 0; it < trace.iterations.size(); ++it) {
    const RfeIteration& iteration = trace.iterations[it];
    for (std::size_t j = 0; j < iteration.retained.size(); ++j) {
      const bool eliminated = iteration.eliminated.has_value() &&
                              *iteration.eliminated == iteration.retained[j];
      out << it << ',' << format_double(iteration.baseline) << ','
          << to_string(iteration.retained[j]) << ',' << format_double(iteration.raw_deltas[j])
          << ',' << format_double(iteration.smoothed_deltas[j]) << ','
          << (eliminated ? "yes" : "no") << '\n';
    }
  }
}

}  // namespace flowrisk
