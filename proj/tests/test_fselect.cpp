#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "flowrisk/feature_spec.hpp"
#include "flowrisk/logistic.hpp"
#include "flowrisk/rng.hpp"
#include "flowrisk/screen.hpp"
#include "flowrisk/selection.hpp"

using namespace flowrisk;

namespace {

bool error_class_is(const Error& e, const char* expected) {
  return e.error_class() == std::string(expected);
}

FeatureTable gaussian_table(const std::vector<std::string>& names, std::size_t n,
                            std::uint64_t seed) {
  FeatureTable table;
  table.column_names = names;
  table.n_rows = n;
  table.columns.resize(names.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    Rng rng(derive_seed(seed, j + 1));
    table.columns[j].resize(n);
    for (auto& v : table.columns[j]) v = rng.next_normal();
  }
  return table;
}

std::vector<std::uint8_t> sigmoid_labels(const FeatureTable& table,
                                         const std::vector<double>& beta, double intercept,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> y(table.n_rows);
  for (std::size_t i = 0; i < table.n_rows; ++i) {
    double z = intercept;
    for (std::size_t j = 0; j < beta.size(); ++j) z += beta[j] * table.columns[j][i];
    y[i] = rng.next_double() < sigmoid(z) ? 1 : 0;
  }
  return y;
}

std::vector<std::size_t> all_rows(const FeatureTable& table) {
  std::vector<std::size_t> rows(table.n_rows);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

bool was_removed(const ScreenResult& result, const std::string& name, RemovalReason reason) {
  for (const auto& record : result.removed)
    if (record.column == name && record.reason == reason) return true;
  return false;
}

}  // namespace

TEST_CASE("glob matching handles stars and question marks") {
  CHECK(glob_match("*", "anything"));
  CHECK(glob_match("q_*", "q_criterion"));
  CHECK_FALSE(glob_match("q_*", "vorticity"));
  CHECK(glob_match("?x", "vx"));
  CHECK_FALSE(glob_match("?x", "x"));
  CHECK(glob_match("a*b*c", "a__b__b_c"));
  CHECK_FALSE(glob_match("a*b*c", "a__c__b"));
  CHECK(glob_match("wss", "wss"));
  CHECK_FALSE(glob_match("WSS", "wss"));  // case-sensitive
  CHECK(glob_match("*_max", "shear_max"));
}

TEST_CASE("structural screen removes patterns, constants, and correlated twins") {
  FeatureTable table = gaussian_table({"run_id", "steady", "a", "a_double", "b"}, 500, 11);
  for (auto& v : table.columns[1]) v = 5.0;  // constant
  for (std::size_t i = 0; i < table.n_rows; ++i)
    table.columns[3][i] = 2.0 * table.columns[2][i];  // perfectly correlated, higher variance
  const auto rows = all_rows(table);

  ScreenConfig config;
  config.exclusion_patterns = {"run_*"};
  const auto result = screen_columns(table, rows, config);

  CHECK(was_removed(result, "run_id", RemovalReason::pattern));
  CHECK(was_removed(result, "steady", RemovalReason::constant));
  // Of the correlated pair the higher-variance twin wins.
  CHECK(was_removed(result, "a", RemovalReason::correlated));
  CHECK(result.retained == std::vector<std::string>{"a_double", "b"});

  for (const auto& record : result.removed) {
    if (record.column == "run_id") CHECK(record.detail == "matched 'run_*'");
    if (record.column == "a") {
      CHECK(record.detail.find("with a_double") != std::string::npos);
      CHECK(record.detail.find("r=") != std::string::npos);
    }
  }

  // Negative correlation counts too.
  FeatureTable neg = gaussian_table({"a", "neg"}, 300, 12);
  for (std::size_t i = 0; i < neg.n_rows; ++i) neg.columns[1][i] = -neg.columns[0][i];
  const auto neg_result = screen_columns(neg, all_rows(neg), ScreenConfig{});
  CHECK(neg_result.retained.size() == 1);
  CHECK(neg_result.removed.size() == 1);
  CHECK(neg_result.removed[0].reason == RemovalReason::correlated);
}

TEST_CASE("screening the retained set again is a no-op") {
  FeatureTable table = gaussian_table({"a", "b", "c", "c_echo"}, 400, 21);
  for (std::size_t i = 0; i < table.n_rows; ++i)
    table.columns[3][i] = table.columns[2][i] * 3.0 + 0.001;
  const auto rows = all_rows(table);

  const auto first = screen_columns(table, rows, ScreenConfig{});
  REQUIRE(first.retained.size() == 3);

  FeatureTable survivors;
  survivors.n_rows = table.n_rows;
  for (const auto& name : first.retained) {
    survivors.column_names.push_back(name);
    survivors.columns.push_back(table.column(name));
  }
  const auto second = screen_columns(survivors, rows, ScreenConfig{});
  CHECK(second.removed.empty());
  CHECK(second.retained == first.retained);
}

TEST_CASE("screen failure modes raise typed errors") {
  FeatureTable table = gaussian_table({"a", "b"}, 100, 31);
  for (auto& v : table.columns[0]) v = 1.0;
  for (auto& v : table.columns[1]) v = 2.0;
  CHECK_THROWS_MATCHES(screen_columns(table, all_rows(table), ScreenConfig{}), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return error_class_is(e, "empty-result"); }));

  FeatureTable ok = gaussian_table({"a"}, 100, 32);
  CHECK_THROWS_MATCHES(screen_columns(ok, {}, ScreenConfig{}), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return error_class_is(e, "degenerate-data");
                       }));
}

TEST_CASE("importance screen keeps the informative columns") {
  FeatureTable table = gaussian_table({"s1", "s2", "n1", "n2", "n3"}, 1000, 41);
  const auto labels = sigmoid_labels(table, {2.0, -2.0, 0.0, 0.0, 0.0}, 0.0, 99);
  const auto rows = all_rows(table);

  const auto result = importance_screen(table, rows, labels, table.column_names,
                                        TrainConfig{}, 0.05);
  CHECK(std::count(result.kept.begin(), result.kept.end(), "s1") == 1);
  CHECK(std::count(result.kept.begin(), result.kept.end(), "s2") == 1);
  REQUIRE(result.importances.size() == 5);
  const double sum =
      std::accumulate(result.importances.begin(), result.importances.end(), 0.0);
  CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK(result.importances[0] > result.importances[2]);
  CHECK(result.importances[1] > result.importances[3]);

  CHECK_THROWS_MATCHES(
      importance_screen(table, rows, labels, std::vector<std::string>{"s1"}, TrainConfig{},
                        0.05),
      Error, Catch::Matchers::Predicate<Error>(
                 [](const Error& e) { return error_class_is(e, "config-invalid"); }));
  CHECK_THROWS_MATCHES(
      importance_screen(table, rows, labels, table.column_names, TrainConfig{}, 0.9), Error,
      Catch::Matchers::Predicate<Error>(
          [](const Error& e) { return error_class_is(e, "empty-result"); }));
}

TEST_CASE("engineering produces the documented candidate set") {
  FeatureTable table = gaussian_table({"a", "b"}, 50, 51);
  const auto rows = all_rows(table);

  SECTION("single base column") {
    const auto specs =
        engineer_features(table, rows, std::vector<std::string>{"a"});
    REQUIRE(specs.size() == 2);
    CHECK(specs[0] == square_spec("a"));
    CHECK(specs[1].kind == SpecKind::log_shift);
    CHECK(specs[1].name_a == "a");
  }

  SECTION("two base columns give the exact five-spec list") {
    const auto specs =
        engineer_features(table, rows, std::vector<std::string>{"a", "b"});
    REQUIRE(specs.size() == 5);
    CHECK(specs[0] == square_spec("a"));
    CHECK(specs[1] == square_spec("b"));
    CHECK(specs[2].kind == SpecKind::log_shift);
    CHECK(specs[2].name_a == "a");
    CHECK(specs[3].kind == SpecKind::log_shift);
    CHECK(specs[3].name_a == "b");
    CHECK(specs[4] == interaction_spec("a", "b"));
  }

  SECTION("fourteen base columns give 119 candidates") {
    std::vector<std::string> names;
    for (int j = 1; j <= 14; ++j) names.push_back("c" + std::to_string(j));
    FeatureTable wide = gaussian_table(names, 40, 52);
    const auto specs = engineer_features(wide, all_rows(wide), names);
    CHECK(specs.size() == 119);  // 2k + k(k-1)/2 at k = 14
  }

  SECTION("errors") {
    CHECK_THROWS_MATCHES(
        engineer_features(table, rows, std::vector<std::string>{}), Error,
        Catch::Matchers::Predicate<Error>(
            [](const Error& e) { return error_class_is(e, "config-invalid"); }));
    CHECK_THROWS_MATCHES(
        engineer_features(table, {}, std::vector<std::string>{"a"}), Error,
        Catch::Matchers::Predicate<Error>(
            [](const Error& e) { return error_class_is(e, "degenerate-data"); }));
  }
}

TEST_CASE("log shifts come from the training range") {
  FeatureTable table;
  table.column_names = {"v"};
  table.columns = {{-2.0, 0.0, 6.0, 100.0}};
  table.n_rows = 4;
  const std::vector<std::size_t> train_rows = {0, 1, 2};  // excludes the 100

  const auto specs = engineer_features(table, train_rows, table.column_names, 1e-6);
  REQUIRE(specs.size() == 2);
  const FeatureSpec& log = specs[1];
  CHECK(log.shift == 1e-6 * 8.0 + 2.0);  // epsilon*(hi-lo) + max(0, -lo), exactly

  // Every training-row argument is strictly positive under that shift.
  for (std::size_t idx : train_rows) CHECK(table.columns[0][idx] + log.shift > 0.0);

  // All-positive columns get a pure-epsilon shift.
  FeatureTable positive;
  positive.column_names = {"p"};
  positive.columns = {{1.0, 2.0, 3.0}};
  positive.n_rows = 3;
  const auto pos_specs =
      engineer_features(positive, std::vector<std::size_t>{0, 1, 2}, positive.column_names);
  CHECK(pos_specs[1].shift == 2e-6);
}

TEST_CASE("materialize computes spec values column by column") {
  FeatureTable table;
  table.column_names = {"a", "b"};
  table.columns = {{2.0, -2.0, 0.0}, {3.0, 5.0, 7.0}};
  table.n_rows = 3;
  const std::vector<std::size_t> rows = {0, 1, 2};

  const std::vector<FeatureSpec> specs = {base_spec("a"), square_spec("a"),
                                          interaction_spec("a", "b"), log_spec("a", 3.0)};
  const Matrix m = materialize(table, specs, rows);
  REQUIRE(m.rows == 3);
  REQUIRE(m.cols == 4);
  CHECK(m.at(0, 0) == 2.0);
  CHECK(m.at(1, 1) == 4.0);   // SQ(-2)
  CHECK(m.at(0, 2) == 6.0);   // IX: 2*3
  CHECK(m.at(2, 2) == 0.0);   // IX: 0*7
  CHECK(m.at(1, 3) == 0.0);   // LOG: ln(-2+3) = ln 1, additions exact
  CHECK(m.at(0, 3) == std::log(5.0));
  CHECK(m.at(2, 3) == std::log(3.0));

  // Row subsetting honors the given order.
  const std::vector<std::size_t> subset = {2, 0};
  const Matrix s = materialize(table, specs, subset);
  CHECK(s.at(0, 0) == 0.0);
  CHECK(s.at(1, 0) == 2.0);

  CHECK_THROWS_MATCHES(
      materialize(table, std::vector<FeatureSpec>{base_spec("missing")}, rows), Error,
      Catch::Matchers::Predicate<Error>(
          [](const Error& e) { return error_class_is(e, "unknown-column"); }));
  CHECK_THROWS_MATCHES(
      materialize(table, std::vector<FeatureSpec>{log_spec("a", 0.0)}, rows), Error,
      Catch::Matchers::Predicate<Error>(
          [](const Error& e) { return error_class_is(e, "domain-error"); }));
}

TEST_CASE("spec identity, ordering, and naming are canonical") {
  CHECK(interaction_spec("b", "a") == interaction_spec("a", "b"));
  CHECK(interaction_spec("b", "a").name_a == "a");

  CHECK(to_string(base_spec("wss")) == "wss");
  CHECK(to_string(square_spec("wss")) == "SQ(wss)");
  CHECK(to_string(log_spec("wss", 0.5)) == "LOG(wss)");
  CHECK(to_string(interaction_spec("tau", "q")) == "IX(q,tau)");

  CHECK(spec_less(base_spec("z"), square_spec("a")));       // kind dominates
  CHECK(spec_less(square_spec("a"), log_spec("a", 1.0)));   // enum order
  CHECK(spec_less(log_spec("a", 1.0), interaction_spec("a", "b")));
  CHECK(spec_less(base_spec("a"), base_spec("b")));         // then names
  CHECK_FALSE(spec_less(base_spec("a"), base_spec("a")));
  // The shift is derived data and never part of identity ordering.
  CHECK_FALSE(spec_less(log_spec("a", 1.0), log_spec("a", 2.0)));
  CHECK_FALSE(spec_less(log_spec("a", 2.0), log_spec("a", 1.0)));
}

TEST_CASE("leave-one-out importance of a duplicated feature is near zero") {
  FeatureTable table = gaussian_table({"a", "dup", "c"}, 800, 61);
  table.columns[1] = table.columns[0];  // exact twin
  const auto labels = sigmoid_labels(table, {2.0, 0.0, 0.0}, -0.5, 17);
  const auto rows = all_rows(table);
  const std::vector<FeatureSpec> specs = {base_spec("a"), base_spec("dup"), base_spec("c")};

  const auto result = lofo_importances(table, rows, labels, specs, TrainConfig{}, CvConfig{});
  CHECK(result.baseline > 0.5);
  // Removing either twin leaves the other carrying the signal.
  CHECK_THAT(result.deltas[0], Catch::Matchers::WithinAbs(0.0, 0.005));
  CHECK_THAT(result.deltas[1], Catch::Matchers::WithinAbs(0.0, 0.005));
}

TEST_CASE("leave-one-out importance flags the informative feature") {
  FeatureTable table = gaussian_table({"a", "c"}, 800, 62);
  const auto labels = sigmoid_labels(table, {2.5, 0.0}, -0.6, 18);
  const auto rows = all_rows(table);
  const std::vector<FeatureSpec> specs = {base_spec("a"), base_spec("c")};

  const auto result = lofo_importances(table, rows, labels, specs, TrainConfig{}, CvConfig{});
  // Dropping the signal feature costs PR-AUC: the delta is large and positive.
  CHECK(result.deltas[0] > 0.1);
  CHECK(std::abs(result.deltas[1]) < 0.05);

  CHECK_THROWS_MATCHES(
      lofo_importances(table, rows, labels, std::vector<FeatureSpec>{base_spec("a")},
                       TrainConfig{}, CvConfig{}),
      Error, Catch::Matchers::Predicate<Error>(
                 [](const Error& e) { return error_class_is(e, "config-invalid"); }));
}

TEST_CASE("leave-one-out importances are deterministic and order-independent") {
  FeatureTable table = gaussian_table({"a", "b", "c"}, 500, 63);
  const auto labels = sigmoid_labels(table, {1.5, -1.0, 0.0}, 0.0, 19);
  const std::vector<FeatureSpec> specs = {base_spec("a"), base_spec("b"), base_spec("c")};

  auto rows = all_rows(table);
  const auto first = lofo_importances(table, rows, labels, specs, TrainConfig{}, CvConfig{});
  const auto second = lofo_importances(table, rows, labels, specs, TrainConfig{}, CvConfig{});
  CHECK(first.baseline == second.baseline);
  CHECK(first.deltas == second.deltas);

  Rng rng(7);
  rng.shuffle(rows);  // caller's row order must not matter
  const auto shuffled = lofo_importances(table, rows, labels, specs, TrainConfig{}, CvConfig{});
  CHECK(shuffled.baseline == first.baseline);
  CHECK(shuffled.deltas == first.deltas);
}

TEST_CASE("recursive elimination keeps the informative subset") {
  FeatureTable table = gaussian_table({"a", "b", "n1", "n2", "n3"}, 600, 64);
  const auto labels = sigmoid_labels(table, {2.0, -2.0, 0.0, 0.0, 0.0}, -0.4, 20);
  const auto rows = all_rows(table);
  std::vector<FeatureSpec> specs;
  for (const auto& name : table.column_names) specs.push_back(base_spec(name));

  RfeConfig config;
  config.cv.folds = 4;
  const auto result = rfe_loop(table, rows, labels, specs, TrainConfig{}, config);

  CHECK(result.final_specs == result.trace.best_subset);
  CHECK(result.trace.best_pr_auc > 0.5);
  CHECK(result.trace.best_iteration < result.trace.iterations.size());
  CHECK(result.trace.iterations[result.trace.best_iteration].baseline ==
        result.trace.best_pr_auc);

  // The informative pair must survive into the chosen subset.
  CHECK(std::count(result.final_specs.begin(), result.final_specs.end(), base_spec("a")) == 1);
  CHECK(std::count(result.final_specs.begin(), result.final_specs.end(), base_spec("b")) == 1);

  // Iterations shrink by exactly one spec, eliminations recorded on all but
  // the last, and the floor is respected.
  const auto& iterations = result.trace.iterations;
  REQUIRE(!iterations.empty());
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    CHECK(iterations[i].retained.size() == specs.size() - i);
    CHECK(iterations[i].raw_deltas.size() == iterations[i].retained.size());
    const bool last = i + 1 == iterations.size();
    CHECK(iterations[i].eliminated.has_value() == !last);
    if (!last) {
      // The eliminated spec is gone from the next retained set.
      const auto& next = iterations[i + 1].retained;
      CHECK(std::count(next.begin(), next.end(), *iterations[i].eliminated) == 0);
    }
  }
  CHECK(iterations.back().retained.size() >= config.min_specs);
}

TEST_CASE("elimination trace smoothing averages each spec's raw history") {
  FeatureTable table = gaussian_table({"a", "b", "c", "d"}, 400, 65);
  const auto labels = sigmoid_labels(table, {1.8, -1.2, 0.0, 0.0}, 0.0, 23);
  std::vector<FeatureSpec> specs;
  for (const auto& name : table.column_names) specs.push_back(base_spec(name));

  RfeConfig config;
  config.cv.folds = 3;
  const auto result =
      rfe_loop(table, all_rows(table), labels, specs, TrainConfig{}, config);

  // Reconstruct trailing means from the trace itself (windows never truncate
  // here: at most 3 eliminations happen with a window of 5).
  std::map<std::string, std::vector<double>> history;
  for (const auto& iteration : result.trace.iterations) {
    for (std::size_t j = 0; j < iteration.retained.size(); ++j) {
      auto& past = history[to_string(iteration.retained[j])];
      past.push_back(iteration.raw_deltas[j]);
      const double mean = std::accumulate(past.begin(), past.end(), 0.0) /
                          static_cast<double>(past.size());
      CHECK_THAT(iteration.smoothed_deltas[j], Catch::Matchers::WithinAbs(mean, 1e-15));
    }
  }

  CHECK_THROWS_MATCHES(
      rfe_loop(table, all_rows(table), labels, std::vector<FeatureSpec>{base_spec("a")},
               TrainConfig{}, config),
      Error, Catch::Matchers::Predicate<Error>(
                 [](const Error& e) { return error_class_is(e, "config-invalid"); }));
}

TEST_CASE("permutation importance separates signal, noise, and constants") {
  FeatureTable table = gaussian_table({"a", "c", "k"}, 700, 66);
  // Column k varies on training rows but is frozen on the held-out block.
  for (std::size_t i = 500; i < 700; ++i) table.columns[2][i] = 0.5;
  const auto labels = sigmoid_labels(table, {2.2, 0.0, 0.0}, -0.4, 24);

  std::vector<std::size_t> train_rows(500);
  std::iota(train_rows.begin(), train_rows.end(), std::size_t{0});
  std::vector<std::size_t> holdout_rows(200);
  std::iota(holdout_rows.begin(), holdout_rows.end(), std::size_t{500});

  const std::vector<FeatureSpec> specs = {base_spec("a"), base_spec("c"), base_spec("k")};
  const auto model = fit_model(table, train_rows, labels, specs, TrainConfig{});

  double baseline = 0.0;
  const auto drops =
      permutation_importance(model, table, holdout_rows, labels, 10, 7, &baseline);
  REQUIRE(drops.size() == 3);
  CHECK(baseline > 0.5);
  CHECK(drops[0] > 0.1);              // shuffling the signal hurts
  CHECK(std::abs(drops[1]) <= 0.01);  // noise barely moves the metric
  CHECK(drops[2] == 0.0);             // constant column: exact zero by contract

  // Repeats and seed are part of the determinism contract.
  const auto again =
      permutation_importance(model, table, holdout_rows, labels, 10, 7, nullptr);
  CHECK(again == drops);

  CHECK_THROWS_MATCHES(
      permutation_importance(model, table, holdout_rows, labels, 0, 7, nullptr), Error,
      Catch::Matchers::Predicate<Error>(
          [](const Error& e) { return error_class_is(e, "config-invalid"); }));
}

TEST_CASE("selection trace exports one row per retained spec") {
  SelectionTrace trace;
  RfeIteration first;
  first.retained = {base_spec("a"), base_spec("b")};
  first.raw_deltas = {0.125, 0.0625};
  first.smoothed_deltas = {0.125, 0.0625};
  first.baseline = 0.75;
  first.eliminated = base_spec("b");
  RfeIteration second;
  second.retained = {base_spec("a")};
  second.raw_deltas = {0.25};
  second.smoothed_deltas = {0.1875};
  second.baseline = 0.5;
  trace.iterations = {first, second};

  std::ostringstream out;
  write_selection_trace_csv(trace, out);
  const std::string text = out.str();
  CHECK(text.find("iteration,baseline_pr_auc,spec,raw_delta,smoothed_delta,eliminated\n") == 0);
  CHECK(text.find("0,0.75,a,0.125,0.125,no\n") != std::string::npos);
  CHECK(text.find("0,0.75,b,0.0625,0.0625,yes\n") != std::string::npos);
  CHECK(text.find("1,0.5,a,0.25,0.1875,no\n") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
