#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "flowrisk/error.hpp"
#include "flowrisk/matrix.hpp"

namespace flowrisk {

// Per-column affine transform to zero mean, unit variance. Fitted on
// training rows only and then applied verbatim everywhere else; the
// parameters travel with the model so exported expressions can inline them.
struct Standardizer {
  std::vector<double> means;
  std::vector<double> stds;  // population standard deviations, all > 0

  // Two-pass moments for accuracy; order of accumulation is fixed, so the
  // result is deterministic. A zero-variance column is an error: it should
  // have been screened out and would divide by zero here.
  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.means.resize(x.cols);
    s.stds.resize(x.cols);
    if (x.rows == 0) fail("degenerate-data", "cannot standardize an empty matrix");
    for (std::size_t j = 0; j < x.cols; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) sum += x.at(i, j);
      const double mean = sum / static_cast<double>(x.rows);
      double ss = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double d = x.at(i, j) - mean;
        ss += d * d;
      }
      const double sd = std::sqrt(ss / static_cast<double>(x.rows));
      if (!(sd > 0.0))
        fail("degenerate-data",
             "zero variance in column " + std::to_string(j) + " (screen it out first)");
      s.means[j] = mean;
      s.stds[j] = sd;
    }
    return s;
  }

  void apply(Matrix& x) const {
    if (x.cols != means.size())
      fail("internal", "standardizer width mismatch: " + std::to_string(x.cols) + " vs " +
                           std::to_string(means.size()));
    for (std::size_t i = 0; i < x.rows; ++i) {
      double* row = x.row(i);
      for (std::size_t j = 0; j < x.cols; ++j) row[j] = (row[j] - means[j]) / stds[j];
    }
  }

  std::size_t width() const { return means.size(); }
};

}  // namespace flowrisk
