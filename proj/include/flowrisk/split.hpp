#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowrisk/csv.hpp"
#include "flowrisk/error.hpp"
#include "flowrisk/rng.hpp"

namespace flowrisk {

// Index lists for the three data splits. Each list is sorted ascending and
// the three lists partition [0, n). Test rows must stay untouched until the
// final evaluation; that discipline is enforced at the pipeline layer.
struct SplitIndices {
  std::vector<std::size_t> test;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::uint64_t seed = 0;
};

struct SplitFractions {
  double test = 0.2;           // share of all rows held out for testing
  double train_of_rest = 0.8;  // share of the remainder used for training
};

namespace detail {

// Splits n into (a, n-a) with a ~= frac*n, flooring both shares and giving
// the one leftover unit (if any) to the larger fractional remainder; the
// first share wins ties.
inline std::size_t largest_remainder(std::size_t n, double frac) {
  const double fa = frac * static_cast<double>(n);
  const double fb = (1.0 - frac) * static_cast<double>(n);
  std::size_t a = static_cast<std::size_t>(std::floor(fa));
  const std::size_t b = static_cast<std::size_t>(std::floor(fb));
  if (a + b < n) {
    const double ra = fa - static_cast<double>(a);
    const double rb = fb - static_cast<double>(b);
    if (ra >= rb) ++a;
  }
  return a;
}

}  // namespace detail

// Stratified three-way split: `test` fraction of each class is held out
// first, then the remainder is divided train/validation, again per class.
// Per-class counts use largest-remainder rounding so the realized sizes are
// the closest integer partition to the requested fractions.
inline SplitIndices stratified_split(std::span<const std::uint8_t> labels, std::uint64_t seed,
                                     SplitFractions fractions = {}) {
  const std::size_t n = labels.size();
  if (n < 25) fail("degenerate-data", "too few rows to split: " + std::to_string(n));
  if (!(fractions.test > 0.0 && fractions.test < 1.0) ||
      !(fractions.train_of_rest > 0.0 && fractions.train_of_rest < 1.0))
    fail("config-invalid", "split fractions must lie strictly inside (0,1)");

  SplitIndices out;
  out.seed = seed;
  for (int cls = 1; cls >= 0; --cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == cls) members.push_back(i);
    if (members.empty())
      fail("single-class", std::string("no rows of class ") + (cls ? "1" : "0"));

    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    rng.shuffle(members);

    const std::size_t n_test = detail::largest_remainder(members.size(), fractions.test);
    const std::size_t n_rest = members.size() - n_test;
    const std::size_t n_train = detail::largest_remainder(n_rest, fractions.train_of_rest);
    const std::size_t n_val = n_rest - n_train;
    if (n_test == 0 || n_train == 0 || n_val == 0)
      fail("degenerate-data", std::string("class ") + (cls ? "1" : "0") +
                                  " too small to appear in every split (" +
                                  std::to_string(members.size()) + " rows)");

    out.test.insert(out.test.end(), members.begin(), members.begin() + n_test);
    out.train.insert(out.train.end(), members.begin() + n_test,
                     members.begin() + n_test + n_train);
    out.validation.insert(out.validation.end(), members.begin() + n_test + n_train,
                          members.end());
  }
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

// Stratified k-fold partition of `indices`. Assignment is defined on the
// index-sorted list, so the folds do not depend on the caller's row order.
// Returns `folds` disjoint index lists (each sorted) covering all of
// `indices`; every fold receives both classes or the call fails.
inline std::vector<std::vector<std::size_t>> stratified_folds(
    std::span<const std::size_t> indices, std::span<const std::uint8_t> labels,
    std::size_t folds, std::uint64_t seed) {
  if (folds < 2) fail("config-invalid", "need at least 2 folds");
  std::vector<std::size_t> sorted(indices.begin(), indices.end());
  std::sort(sorted.begin(), sorted.end());

  std::vector<std::vector<std::size_t>> out(folds);
  for (int cls = 1; cls >= 0; --cls) {
    std::vector<std::size_t> members;
    for (std::size_t idx : sorted)
      if (labels[idx] == cls) members.push_back(idx);
    if (members.size() < folds)
      fail("degenerate-fold", std::string("class ") + (cls ? "1" : "0") + " has " +
                                  std::to_string(members.size()) + " rows for " +
                                  std::to_string(folds) + " folds");
    Rng rng(derive_seed(seed, 0x66ull + static_cast<std::uint64_t>(cls)));
    rng.shuffle(members);
    // Contiguous chunks of near-equal size; the first (size % folds) chunks
    // absorb the remainder.
    const std::size_t base = members.size() / folds;
    const std::size_t extra = members.size() % folds;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < folds; ++f) {
      const std::size_t take = base + (f < extra ? 1 : 0);
      out[f].insert(out[f].end(), members.begin() + pos, members.begin() + pos + take);
      pos += take;
    }
  }
  for (auto& fold : out) std::sort(fold.begin(), fold.end());
  return out;
}

namespace detail {

inline void write_index_file(const std::string& path, std::span<const std::size_t> indices) {
  atomic_write(path, [&](std::ostream& out) {
    for (std::size_t idx : indices) out << idx << '\n';
  });
}

inline std::vector<std::size_t> read_index_file(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<std::size_t> indices;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    if (!line.empty()) {
      std::size_t value = 0;
      const auto res = std::from_chars(line.data(), line.data() + line.size(), value);
      if (res.ec != std::errc() || res.ptr != line.data() + line.size())
        fail("malformed-file", path + ": bad index line '" + std::string(line) + "'");
      indices.push_back(value);
    }
    pos = end + 1;
  }
  return indices;
}

inline std::size_t count_positives(std::span<const std::size_t> indices,
                                   std::span<const std::uint8_t> labels) {
  std::size_t count = 0;
  for (std::size_t idx : indices) count += labels[idx];
  return count;
}

}  // namespace detail

// Writes the split as four files in `dir`: a human-readable manifest with
// seed, sizes and per-split positive counts, plus one index-per-line file
// per split.
inline void write_split_files(const SplitIndices& split, std::span<const std::uint8_t> labels,
                              const std::string& dir) {
  detail::write_index_file(dir + "/split_test.txt", split.test);
  detail::write_index_file(dir + "/split_train.txt", split.train);
  detail::write_index_file(dir + "/split_validation.txt", split.validation);
  atomic_write(dir + "/split_manifest.csv", [&](std::ostream& out) {
    out << "split,rows,positives,seed\n";
    out << "test," << split.test.size() << "," << detail::count_positives(split.test, labels)
        << "," << split.seed << "\n";
    out << "train," << split.train.size() << "," << detail::count_positives(split.train, labels)
        << "," << split.seed << "\n";
    out << "validation," << split.validation.size() << ","
        << detail::count_positives(split.validation, labels) << "," << split.seed << "\n";
  });
}

inline SplitIndices read_split_files(const std::string& dir) {
  SplitIndices split;
  split.test = detail::read_index_file(dir + "/split_test.txt");
  split.train = detail::read_index_file(dir + "/split_train.txt");
  split.validation = detail::read_index_file(dir + "/split_validation.txt");
  return split;
}

}  // namespace flowrisk
