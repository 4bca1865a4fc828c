#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "flowrisk/error.hpp"
#include "flowrisk/feature_spec.hpp"
#include "flowrisk/matrix.hpp"
#include "flowrisk/standardizer.hpp"

namespace flowrisk {

// Numerically safe logistic function: only non-positive magnitudes are
// exponentiated, so |z| up to 1e4 and far beyond cannot overflow.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Per-class sample weights, inversely proportional to class frequency:
//   w_c = n / (2 * n_c)
// so each class contributes exactly n/2 total weight.
struct ClassWeights {
  double positive = 1.0;
  double negative = 1.0;
};

enum class ClassWeighting { balanced, none };

inline ClassWeights class_weights(std::span<const std::uint8_t> labels) {
  std::size_t n_pos = 0;
  for (auto y : labels) n_pos += y;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    fail("single-class", "labels contain only one class (" + std::to_string(n_pos) +
                             " positives of " + std::to_string(labels.size()) + ")");
  const double n = static_cast<double>(labels.size());
  return {n / (2.0 * static_cast<double>(n_pos)), n / (2.0 * static_cast<double>(n_neg))};
}

struct TrainConfig {
  double l2_strength = 1.0;       // lambda; > 0, intercept never penalized
  double tolerance = 1e-8;        // convergence: max-norm of the gradient
  std::size_t max_iterations = 200;
  ClassWeighting class_weighting = ClassWeighting::balanced;
};

// Raw parameter vector of a linear model: intercept plus one coefficient per
// input column.
struct LinearWeights {
  double intercept = 0.0;
  std::vector<double> coefficients;
};

struct FitDiagnostics {
  std::size_t iterations = 0;
  double gradient_max_norm = 0.0;
  double objective = 0.0;
};

struct FitOptions {
  const LinearWeights* warm_start = nullptr;
  // Optional column mask (one entry per column, nonzero = active). Inactive
  // coefficients are pinned to zero, which is equivalent to fitting on the
  // matrix with those columns removed; used by leave-one-feature-out refits
  // to avoid materializing reduced copies of the design matrix.
  std::span<const std::uint8_t> active;
};

namespace detail {

// Weighted negative log-likelihood plus ridge penalty (intercept excluded):
//   J = sum_i w_i * [ -y_i ln p_i - (1-y_i) ln(1-p_i) ] + lambda/2 * |beta|^2
// The per-row loss uses the max/log1p form, which never takes log of zero.
struct PassResult {
  double objective = 0.0;
  double gradient_max_norm = 0.0;
};

inline double row_loss(double z, std::uint8_t y) {
  return std::max(z, 0.0) - (y ? z : 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// One fused pass over the data: objective always; gradient and Hessian of
// the augmented parameter vector [intercept, coefficients] on demand.
// Accumulation order is fixed (sequential rows), so results are
// bit-deterministic for identical inputs.
inline double fused_pass(const Matrix& x, std::span<const std::uint8_t> y,
                         const ClassWeights& w, double lambda, const LinearWeights& beta,
                         std::span<const std::uint8_t> active, std::vector<double>* grad,
                         std::vector<double>* hess) {
  const std::size_t d = x.cols;
  const std::size_t p = d + 1;
  if (grad) grad->assign(p, 0.0);
  if (hess) hess->assign(p * p, 0.0);
  // The objective is compensated (Kahan) so its evaluation error stays at a
  // couple of ulps independent of row count; the line search compares
  // objective values whose true difference can be far below the naive
  // summation noise of a long sum of positive losses.
  double obj = 0.0;
  double comp = 0.0;
  const auto add = [&obj, &comp](double v) {
    const double t = v - comp;
    const double s = obj + t;
    comp = (s - obj) - t;
    obj = s;
  };
  const double* coef = beta.coefficients.data();
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* row = x.row(i);
    double z = beta.intercept;
    for (std::size_t j = 0; j < d; ++j) z += coef[j] * row[j];
    const double wi = y[i] ? w.positive : w.negative;
    add(wi * row_loss(z, y[i]));
    if (!grad && !hess) continue;
    const double pi = sigmoid(z);
    if (grad) {
      const double r = wi * (pi - y[i]);
      (*grad)[0] += r;
      double* g = grad->data() + 1;
      for (std::size_t j = 0; j < d; ++j) g[j] += r * row[j];
    }
    if (hess) {
      const double s = wi * pi * (1.0 - pi);
      double* h = hess->data();
      h[0] += s;
      for (std::size_t a = 0; a < d; ++a) {
        const double t = s * row[a];
        double* ha = h + (a + 1) * p;
        ha[0] += t;
        for (std::size_t b = 0; b <= a; ++b) ha[b + 1] += t * row[b];
      }
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (!active.empty() && !active[j]) continue;
    add(0.5 * lambda * beta.coefficients[j] * beta.coefficients[j]);
    if (grad) (*grad)[j + 1] += lambda * beta.coefficients[j];
    if (hess) (*hess)[(j + 1) * p + (j + 1)] += lambda;
  }
  // Project out masked coordinates: zero gradient, identity Hessian row.
  if (!active.empty()) {
    for (std::size_t j = 0; j < d; ++j) {
      if (active[j]) continue;
      if (grad) (*grad)[j + 1] = 0.0;
      if (hess) {
        for (std::size_t b = 0; b < p; ++b) {
          (*hess)[(j + 1) * p + b] = 0.0;
          if (b > j + 1) (*hess)[b * p + (j + 1)] = 0.0;
        }
        (*hess)[(j + 1) * p + (j + 1)] = 1.0;
      }
    }
  }
  return obj;
}

// Solves A x = b for symmetric positive-definite A (lower triangle stored),
// in place via Cholesky. A and b are overwritten.
inline void cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t p) {
  for (std::size_t j = 0; j < p; ++j) {
    double diag = a[j * p + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * p + k] * a[j * p + k];
    if (!(diag > 0.0))
      fail("non-convergence", "Newton system not positive definite at pivot " +
                                  std::to_string(j));
    const double L = std::sqrt(diag);
    a[j * p + j] = L;
    for (std::size_t i = j + 1; i < p; ++i) {
      double v = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * p + k] * a[j * p + k];
      a[i * p + j] = v / L;
    }
  }
  for (std::size_t i = 0; i < p; ++i) {  // L y = b
    double v = b[i];
    for (std::size_t k = 0; k < i; ++k) v -= a[i * p + k] * b[k];
    b[i] = v / a[i * p + i];
  }
  for (std::size_t ii = p; ii-- > 0;) {  // L^T x = y
    double v = b[ii];
    for (std::size_t k = ii + 1; k < p; ++k) v -= a[k * p + ii] * b[k];
    b[ii] = v / a[ii * p + ii];
  }
}

}  // namespace detail

// Fits class-weighted L2 logistic regression by Newton's method with a
// backtracking (Armijo) line search. Initialization is beta = 0 unless a
// warm start is supplied; the optimum is unique (lambda > 0 makes the
// objective strictly convex), so warm starts change work, not the answer.
//
// After the gradient max-norm first reaches the tolerance, one additional
// full Newton step is attempted and kept only if it strictly decreases the
// objective. Near the optimum Newton converges quadratically, so this
// "polish" step lands within ~1e-10 of the exact minimizer and makes the
// fitted coefficients invariant (to that precision) under row permutations
// and feature reorderings.
inline LinearWeights fit_weights(const Matrix& x, std::span<const std::uint8_t> y,
                                 const TrainConfig& config, FitDiagnostics* diagnostics = nullptr,
                                 const FitOptions& options = {}) {
  if (x.rows != y.size())
    fail("internal", "row/label count mismatch: " + std::to_string(x.rows) + " vs " +
                         std::to_string(y.size()));
  if (x.rows == 0) fail("degenerate-data", "cannot fit on zero rows");
  if (!(config.l2_strength > 0.0)) fail("config-invalid", "l2_strength must be positive");
  if (!options.active.empty() && options.active.size() != x.cols)
    fail("internal", "active mask width mismatch");

  const ClassWeights w = config.class_weighting == ClassWeighting::balanced
                             ? class_weights(y)
                             : ClassWeights{1.0, 1.0};

  const std::size_t d = x.cols;
  const std::size_t p = d + 1;
  LinearWeights beta;
  beta.coefficients.assign(d, 0.0);
  if (options.warm_start) {
    beta = *options.warm_start;
    if (beta.coefficients.size() != d) fail("internal", "warm start width mismatch");
  }
  if (!options.active.empty())
    for (std::size_t j = 0; j < d; ++j)
      if (!options.active[j]) beta.coefficients[j] = 0.0;

  std::vector<double> grad, hess, step(p);
  double objective =
      detail::fused_pass(x, y, w, config.l2_strength, beta, options.active, &grad, &hess);
  std::size_t iterations = 0;
  double gnorm = 0.0;

  const auto newton_direction = [&] {
    for (std::size_t j = 0; j < p; ++j) step[j] = -grad[j];
    std::vector<double> h = hess;
    detail::cholesky_solve(h, step, p);
  };
  const auto evaluate_at = [&](double t, LinearWeights& trial) {
    trial.intercept = beta.intercept + t * step[0];
    for (std::size_t j = 0; j < d; ++j)
      trial.coefficients[j] = beta.coefficients[j] + t * step[j + 1];
    return detail::fused_pass(x, y, w, config.l2_strength, trial, options.active, nullptr,
                              nullptr);
  };

  LinearWeights trial = beta;
  while (true) {
    gnorm = 0.0;
    for (double g : grad) gnorm = std::max(gnorm, std::abs(g));
    if (gnorm <= config.tolerance) break;
    if (iterations >= config.max_iterations)
      fail("non-convergence", "no convergence after " + std::to_string(iterations) +
                                  " iterations (gradient max-norm " + format_double(gnorm) +
                                  ", tolerance " + format_double(config.tolerance) + ")");
    newton_direction();
    double slope = 0.0;  // directional derivative grad . step (negative)
    for (std::size_t j = 0; j < p; ++j) slope += grad[j] * step[j];

    // Backtracking (Armijo) line search on the objective.
    const double armijo = 1e-4;
    double t = 1.0;
    bool accepted = false;
    double trial_obj = objective;

    // Near the optimum the predicted decrease -slope = g't H^-1 g can fall
    // below the objective's floating-point resolution; the Armijo test is
    // then vacuous (it compares equal doubles) and would reject even the
    // exact minimizer. In that regime take the unit Newton step, which
    // minimizes the local quadratic model, as long as it does not increase
    // the objective beyond rounding noise.
    const double noise =
        8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(objective));
    if (-slope <= noise) {
      trial_obj = evaluate_at(1.0, trial);
      accepted = trial_obj <= objective + noise;
    }
    while (!accepted && t >= 0x1.0p-40) {
      trial_obj = evaluate_at(t, trial);
      if (trial_obj <= objective + armijo * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted)
      fail("non-convergence", "line search failed to decrease the objective (gradient "
                              "max-norm " + format_double(gnorm) + ")");
    std::swap(beta, trial);
    objective = trial_obj;
    ++iterations;
    detail::fused_pass(x, y, w, config.l2_strength, beta, options.active, &grad, &hess);
  }

  // Polish: one full Newton step, kept only on strict improvement.
  newton_direction();
  const double polish_obj = evaluate_at(1.0, trial);
  if (polish_obj < objective) {
    std::swap(beta, trial);
    objective = polish_obj;
    ++iterations;
    detail::fused_pass(x, y, w, config.l2_strength, beta, options.active, &grad, nullptr);
    gnorm = 0.0;
    for (double g : grad) gnorm = std::max(gnorm, std::abs(g));
  }

  if (diagnostics) {
    diagnostics->iterations = iterations;
    diagnostics->gradient_max_norm = gnorm;
    diagnostics->objective = objective;
  }
  return beta;
}

// Exposed for verification: objective and gradient at an arbitrary point.
inline double logistic_objective(const Matrix& x, std::span<const std::uint8_t> y,
                                 const ClassWeights& w, double lambda,
                                 const LinearWeights& beta) {
  return detail::fused_pass(x, y, w, lambda, beta, {}, nullptr, nullptr);
}

inline std::vector<double> logistic_gradient(const Matrix& x, std::span<const std::uint8_t> y,
                                             const ClassWeights& w, double lambda,
                                             const LinearWeights& beta) {
  std::vector<double> grad;
  detail::fused_pass(x, y, w, lambda, beta, {}, &grad, nullptr);
  return grad;
}

// A trained classifier: weights over standardized engineered features, plus
// everything needed to take raw rows to probabilities.
struct LogisticModel {
  double intercept = 0.0;
  std::vector<double> coefficients;      // aligned with feature_specs
  std::vector<FeatureSpec> feature_specs;
  Standardizer standardizer;             // fitted on training rows
};

// Fits a model on the given rows of a raw table: materialize specs,
// standardize (parameters from these rows), then optimize.
inline LogisticModel fit_model(const FeatureTable& table, std::span<const std::size_t> rows,
                               std::span<const std::uint8_t> labels,
                               std::vector<FeatureSpec> specs, const TrainConfig& config,
                               FitDiagnostics* diagnostics = nullptr) {
  Matrix x = materialize(table, specs, rows);
  Standardizer standardizer = Standardizer::fit(x);
  standardizer.apply(x);
  std::vector<std::uint8_t> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];
  const LinearWeights weights = fit_weights(x, y, config, diagnostics);
  LogisticModel model;
  model.intercept = weights.intercept;
  model.coefficients = weights.coefficients;
  model.feature_specs = std::move(specs);
  model.standardizer = std::move(standardizer);
  return model;
}

// Linear predictor z for already-standardized inputs.
inline std::vector<double> linear_scores(const Matrix& x, const LinearWeights& weights) {
  std::vector<double> z(x.rows);
  const double* coef = weights.coefficients.data();
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* row = x.row(i);
    double v = weights.intercept;
    for (std::size_t j = 0; j < x.cols; ++j) v += coef[j] * row[j];
    z[i] = v;
  }
  return z;
}

// Probabilities for raw table rows: materialize, standardize with the
// model's stored parameters, apply the linear model, squash.
inline std::vector<double> predict_proba(const LogisticModel& model, const FeatureTable& table,
                                         std::span<const std::size_t> rows) {
  Matrix x = materialize(table, model.feature_specs, rows);
  model.standardizer.apply(x);
  std::vector<double> out(x.rows);
  const double* coef = model.coefficients.data();
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* row = x.row(i);
    double z = model.intercept;
    for (std::size_t j = 0; j < x.cols; ++j) z += coef[j] * row[j];
    out[i] = sigmoid(z);
  }
  return out;
}

inline std::vector<double> predict_proba(const LogisticModel& model, const FeatureTable& table) {
  std::vector<std::size_t> rows(table.n_rows);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return predict_proba(model, table, rows);
}

// Normalized absolute-coefficient importance: |beta_j| / sum_k |beta_k|.
// Sums to 1 up to float rounding. Meaningful only on standardized inputs.
inline std::vector<double> coefficient_importance(std::span<const double> coefficients) {
  double total = 0.0;
  for (double c : coefficients) total += std::abs(c);
  if (!(total > 0.0))
    fail("degenerate-model", "all coefficients are zero; importances are undefined");
  std::vector<double> importance(coefficients.size());
  for (std::size_t j = 0; j < coefficients.size(); ++j)
    importance[j] = std::abs(coefficients[j]) / total;
  return importance;
}

inline std::vector<double> coefficient_importance(const LogisticModel& model) {
  return coefficient_importance(model.coefficients);
}

}  // namespace flowrisk
