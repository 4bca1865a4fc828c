#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowrisk/artifact.hpp"
#include "flowrisk/csv.hpp"
#include "flowrisk/error.hpp"
#include "flowrisk/expression.hpp"
#include "flowrisk/feature_table.hpp"
#include "flowrisk/hash.hpp"
#include "flowrisk/logistic.hpp"
#include "flowrisk/metrics.hpp"
#include "flowrisk/screen.hpp"
#include "flowrisk/selection.hpp"
#include "flowrisk/split.hpp"
#include "flowrisk/synth.hpp"

namespace flowrisk {

// Full configuration of a pipeline run. Parsed from JSON with strict key
// checking (unknown keys are errors, not silent no-ops) and all defaults
// materialized, so the config fingerprint pins every effective value.
struct SynthSection {
  std::size_t n = 100000;
  std::size_t d = 20;
  std::uint64_t seed = 1;
  PlantedTruth truth;
};

struct PipelineConfig {
  std::string input;       // dataset CSV; the synth stage writes it, others read it
  std::string output_dir;  // all reports and the model artifact land here
  IngestConfig ingest;
  std::uint64_t split_seed = 1;
  ScreenConfig screen;
  TrainConfig train;
  RfeConfig selection;
  double engineer_epsilon = 1e-6;
  std::size_t permutation_repeats = 10;
  std::uint64_t permutation_seed = 1;
  ExpressionDialect dialect;
  bool dialect_has_variables = false;  // false => identity variable map at export
  std::optional<SynthSection> synth;
};

namespace detail {

inline void check_keys(const nlohmann::json& j,
                       std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) fail("config-invalid", where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) known = known || it.key() == key;
    if (!known) fail("config-invalid", "unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  detail::check_keys(j,
                     {"input", "output_dir", "label", "split_seed", "screen", "train",
                      "selection", "engineer", "permutation", "export", "synth"},
                     "config");
  PipelineConfig c;
  try {
    c.input = j.at("input").get<std::string>();
    c.output_dir = j.at("output_dir").get<std::string>();

    const nlohmann::json& label = j.at("label");
    detail::check_keys(label, {"column", "kind", "ap0", "threshold"}, "label");
    c.ingest.label_column = label.at("column").get<std::string>();
    const std::string kind = label.at("kind").get<std::string>();
    if (kind == "binary") {
      c.ingest.label_kind = LabelKind::binary;
    } else if (kind == "ap") {
      c.ingest.label_kind = LabelKind::ap;
    } else if (kind == "sap") {
      c.ingest.label_kind = LabelKind::sap;
    } else {
      fail("config-invalid", "label.kind must be binary, ap, or sap (got '" + kind + "')");
    }
    c.ingest.label_spec.ap0 = label.value("ap0", 2.5e13);
    c.ingest.label_spec.threshold = label.value("threshold", 6.0);
    if (!(c.ingest.label_spec.ap0 > 0.0))
      fail("config-invalid", "label.ap0 must be positive");

    c.split_seed = j.value("split_seed", std::uint64_t{1});

    if (j.contains("screen")) {
      const nlohmann::json& s = j.at("screen");
      detail::check_keys(s,
                         {"exclusion_patterns", "constant_tolerance", "correlation_threshold",
                          "importance_cutoff"},
                         "screen");
      c.screen.exclusion_patterns =
          s.value("exclusion_patterns", std::vector<std::string>{});
      c.screen.constant_tolerance = s.value("constant_tolerance", 1e-12);
      c.screen.correlation_threshold = s.value("correlation_threshold", 0.95);
      c.screen.importance_cutoff = s.value("importance_cutoff", 0.01);
      if (!(c.screen.correlation_threshold > 0.0 && c.screen.correlation_threshold <= 1.0))
        fail("config-invalid", "screen.correlation_threshold must lie in (0, 1]");
      if (!(c.screen.importance_cutoff >= 0.0 && c.screen.importance_cutoff < 1.0))
        fail("config-invalid", "screen.importance_cutoff must lie in [0, 1)");
    }

    if (j.contains("train")) {
      const nlohmann::json& t = j.at("train");
      detail::check_keys(t, {"l2_strength", "tolerance", "max_iterations", "class_weighting"},
                         "train");
      c.train.l2_strength = t.value("l2_strength", 1.0);
      c.train.tolerance = t.value("tolerance", 1e-8);
      c.train.max_iterations = t.value("max_iterations", std::size_t{200});
      const std::string weighting = t.value("class_weighting", "balanced");
      if (weighting == "balanced") {
        c.train.class_weighting = ClassWeighting::balanced;
      } else if (weighting == "none") {
        c.train.class_weighting = ClassWeighting::none;
      } else {
        fail("config-invalid", "train.class_weighting must be balanced or none");
      }
      if (!(c.train.l2_strength > 0.0))
        fail("config-invalid", "train.l2_strength must be positive");
      if (!(c.train.tolerance > 0.0))
        fail("config-invalid", "train.tolerance must be positive");
    }

    if (j.contains("selection")) {
      const nlohmann::json& s = j.at("selection");
      detail::check_keys(
          s, {"folds", "cv_seed", "epsilon_rel", "patience", "smoothing_window", "min_specs"},
          "selection");
      c.selection.cv.folds = s.value("folds", std::size_t{5});
      c.selection.cv.seed = s.value("cv_seed", std::uint64_t{1});
      c.selection.epsilon_rel = s.value("epsilon_rel", 0.005);
      c.selection.patience = s.value("patience", std::size_t{3});
      c.selection.smoothing_window = s.value("smoothing_window", std::size_t{5});
      c.selection.min_specs = s.value("min_specs", std::size_t{2});
      if (c.selection.cv.folds < 2) fail("config-invalid", "selection.folds must be >= 2");
      if (!(c.selection.epsilon_rel > 0.0 && c.selection.epsilon_rel < 1.0))
        fail("config-invalid", "selection.epsilon_rel must lie in (0, 1)");
      if (c.selection.patience < 1) fail("config-invalid", "selection.patience must be >= 1");
      if (c.selection.smoothing_window < 1)
        fail("config-invalid", "selection.smoothing_window must be >= 1");
      if (c.selection.min_specs < 1) fail("config-invalid", "selection.min_specs must be >= 1");
    }

    if (j.contains("engineer")) {
      const nlohmann::json& e = j.at("engineer");
      detail::check_keys(e, {"epsilon"}, "engineer");
      c.engineer_epsilon = e.value("epsilon", 1e-6);
      if (!(c.engineer_epsilon > 0.0))
        fail("config-invalid", "engineer.epsilon must be positive");
    }

    if (j.contains("permutation")) {
      const nlohmann::json& p = j.at("permutation");
      detail::check_keys(p, {"repeats", "seed"}, "permutation");
      c.permutation_repeats = p.value("repeats", std::size_t{10});
      c.permutation_seed = p.value("seed", std::uint64_t{1});
      if (c.permutation_repeats < 1)
        fail("config-invalid", "permutation.repeats must be >= 1");
    }

    if (j.contains("export")) {
      const nlohmann::json& e = j.at("export");
      detail::check_keys(e, {"exp_name", "ln_name", "power", "variables"}, "export");
      c.dialect.exp_name = e.value("exp_name", "exp");
      c.dialect.ln_name = e.value("ln_name", "ln");
      const std::string power = e.value("power", "multiply");
      if (power == "multiply") {
        c.dialect.power = PowerSyntax::multiply;
      } else if (power == "caret") {
        c.dialect.power = PowerSyntax::caret;
      } else {
        fail("config-invalid", "export.power must be multiply or caret");
      }
      if (e.contains("variables")) {
        c.dialect.variables =
            e.at("variables").get<std::map<std::string, std::string>>();
        c.dialect_has_variables = true;
      }
    }

    if (j.contains("synth")) {
      const nlohmann::json& s = j.at("synth");
      detail::check_keys(s, {"n", "d", "seed", "truth"}, "synth");
      SynthSection section;
      section.n = s.value("n", std::size_t{100000});
      section.d = s.value("d", std::size_t{20});
      section.seed = s.value("seed", std::uint64_t{1});
      section.truth = truth_from_json(s.at("truth"));
      c.synth = std::move(section);
    }
  } catch (const nlohmann::json::exception& e) {
    fail("config-invalid", std::string("config: ") + e.what());
  }
  if (c.input.empty()) fail("config-invalid", "input path is empty");
  if (c.output_dir.empty()) fail("config-invalid", "output_dir is empty");
  return c;
}

// The fully materialized config, defaults included; its canonical dump is
// the config fingerprint. Round-trips through config_from_json.
inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["input"] = c.input;
  j["output_dir"] = c.output_dir;
  const char* kind = c.ingest.label_kind == LabelKind::binary ? "binary"
                     : c.ingest.label_kind == LabelKind::ap  ? "ap"
                                                             : "sap";
  j["label"] = {{"column", c.ingest.label_column},
                {"kind", kind},
                {"ap0", c.ingest.label_spec.ap0},
                {"threshold", c.ingest.label_spec.threshold}};
  j["split_seed"] = c.split_seed;
  j["screen"] = {{"exclusion_patterns", c.screen.exclusion_patterns},
                 {"constant_tolerance", c.screen.constant_tolerance},
                 {"correlation_threshold", c.screen.correlation_threshold},
                 {"importance_cutoff", c.screen.importance_cutoff}};
  j["train"] = {{"l2_strength", c.train.l2_strength},
                {"tolerance", c.train.tolerance},
                {"max_iterations", c.train.max_iterations},
                {"class_weighting",
                 c.train.class_weighting == ClassWeighting::balanced ? "balanced" : "none"}};
  j["selection"] = {{"folds", c.selection.cv.folds},
                    {"cv_seed", c.selection.cv.seed},
                    {"epsilon_rel", c.selection.epsilon_rel},
                    {"patience", c.selection.patience},
                    {"smoothing_window", c.selection.smoothing_window},
                    {"min_specs", c.selection.min_specs}};
  j["engineer"] = {{"epsilon", c.engineer_epsilon}};
  j["permutation"] = {{"repeats", c.permutation_repeats}, {"seed", c.permutation_seed}};
  j["export"] = {{"exp_name", c.dialect.exp_name},
                 {"ln_name", c.dialect.ln_name},
                 {"power", c.dialect.power == PowerSyntax::multiply ? "multiply" : "caret"}};
  if (c.dialect_has_variables) j["export"]["variables"] = c.dialect.variables;
  if (c.synth) {
    j["synth"] = {{"n", c.synth->n},
                  {"d", c.synth->d},
                  {"seed", c.synth->seed},
                  {"truth", truth_to_json(c.synth->truth)}};
  }
  return j;
}

inline std::string config_fingerprint(const PipelineConfig& c) {
  return fnv1a64_hex(config_to_json(c).dump());
}

inline PipelineConfig load_config(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail("config-invalid", path + ": not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// In-memory state threaded through the stages. run-all shares one instance;
// a single-stage invocation starts empty and hydrates each piece it needs
// from the previous stages' files. Either way the bytes written are the
// same, because everything on disk round-trips exactly.
struct PipelineState {
  std::optional<FeatureTable> table;
  IngestReport ingest_report;
  std::optional<SplitIndices> splits;
  std::optional<std::vector<std::string>> base_features;
  std::optional<std::vector<FeatureSpec>> engineered;
  std::optional<ModelArtifact> artifact;

  std::span<const std::uint8_t> labels() const {
    if (!table || !table->label) fail("internal", "labels not loaded");
    return *table->label;
  }
  std::span<const std::size_t> train_rows() const { return splits->train; }
  std::span<const std::size_t> validation_rows() const { return splits->validation; }

  // The held-out test rows are only readable by the evaluate stage; every
  // other caller gets an error. This is the programmatic guard behind the
  // "test data influences nothing but the final evaluation" rule.
  std::span<const std::size_t> test_rows(std::string_view stage) const {
    if (stage != "evaluate")
      fail("internal",
           "stage '" + std::string(stage) + "' attempted to read the held-out test split");
    return splits->test;
  }
};

namespace detail {

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += "\"\"";
    else out += ch;
  }
  out += "\"";
  return out;
}

inline void ensure_table(const PipelineConfig& config, PipelineState& state) {
  if (state.table) return;
  IngestReport report;
  state.table = ingest_csv(config.input, config.ingest, &report);
  state.ingest_report = report;
  if (state.table->n_rows == 0) fail("degenerate-data", config.input + ": no usable rows");
}

inline void ensure_splits(const PipelineConfig& config, PipelineState& state) {
  if (state.splits) return;
  state.splits = read_split_files(config.output_dir);
}

inline void ensure_base_features(const PipelineConfig& config, PipelineState& state) {
  if (state.base_features) return;
  const std::string path = config.output_dir + "/base_features.txt";
  const std::string text = read_text_file(path);
  std::vector<std::string> names;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) names.emplace_back(text, pos, end - pos);
    pos = end + 1;
  }
  if (names.empty()) fail("malformed-file", path + ": no feature names");
  state.base_features = std::move(names);
}

inline void ensure_engineered(const PipelineConfig& config, PipelineState& state) {
  if (state.engineered) return;
  CsvReader reader(config.output_dir + "/engineered_specs.csv");
  std::vector<FeatureSpec> specs;
  std::vector<std::string_view> fields;
  while (reader.next_row(fields)) {
    // columns: spec,kind,a,b,shift
    FeatureSpec spec;
    spec.kind = spec_kind_from(std::string(fields[1]));
    spec.name_a = std::string(fields[2]);
    spec.name_b = std::string(fields[3]);
    double shift = 0.0;
    if (!fields[4].empty() && !parse_double(fields[4], shift))
      fail("malformed-file", reader.path() + ": bad shift value");
    spec.shift = shift;
    specs.push_back(std::move(spec));
  }
  if (specs.empty()) fail("malformed-file", reader.path() + ": no specs");
  state.engineered = std::move(specs);
}

inline void ensure_artifact(const PipelineConfig& config, PipelineState& state) {
  if (state.artifact) return;
  state.artifact = load_artifact(config.output_dir + "/model.json");
}

inline std::vector<FeatureSpec> base_specs_of(const std::vector<std::string>& names) {
  std::vector<FeatureSpec> specs;
  specs.reserve(names.size());
  for (const auto& name : names) specs.push_back(base_spec(name));
  return specs;
}

inline double split_pr_auc(const LogisticModel& model, const FeatureTable& table,
                           std::span<const std::size_t> rows,
                           std::span<const std::uint8_t> labels) {
  const std::vector<double> probs = predict_proba(model, table, rows);
  std::vector<std::uint8_t> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];
  return pr_auc(probs, y);
}

}  // namespace detail

// ---- stages -------------------------------------------------------------

inline void stage_synth(const PipelineConfig& config, PipelineState& state,
                        std::vector<std::string>& log) {
  if (!config.synth) fail("config-invalid", "synth stage requires a synth config section");
  const SynthSection& section = *config.synth;
  SynthResult result = generate_synthetic(section.truth, section.n, section.d, section.seed);

  const FeatureTable& table = result.table;
  atomic_write(config.input, [&](std::ostream& out) {
    for (std::size_t j = 0; j < table.column_names.size(); ++j)
      out << table.column_names[j] << ',';
    out << config.ingest.label_column << '\n';
    const auto& labels = *table.label;
    for (std::size_t i = 0; i < table.n_rows; ++i) {
      for (std::size_t j = 0; j < table.columns.size(); ++j)
        out << format_double(table.columns[j][i]) << ',';
      out << int{labels[i]} << '\n';
    }
  });

  nlohmann::json truth_file;
  truth_file["truth"] = truth_to_json(section.truth);
  truth_file["n"] = section.n;
  truth_file["d"] = section.d;
  truth_file["seed"] = section.seed;
  truth_file["noise_columns"] = result.noise_columns;
  atomic_write_text(config.output_dir + "/truth.json", truth_file.dump(2) + "\n");

  log.push_back("stage=synth rows=" + std::to_string(table.n_rows) +
                " columns=" + std::to_string(table.columns.size()) +
                " noise_columns=" + std::to_string(result.noise_columns.size()));

  // The table just written is what ingest would read back (labels binary,
  // values shortest-round-trip), so hand it to the next stages directly.
  state.ingest_report = {table.n_rows, 0, table.columns.size()};
  state.table = std::move(result.table);
}

inline void stage_prepare(const PipelineConfig& config, PipelineState& state,
                          std::vector<std::string>& log) {
  detail::ensure_table(config, state);
  state.splits = stratified_split(state.labels(), config.split_seed);
  write_split_files(*state.splits, state.labels(), config.output_dir);
  atomic_write(config.output_dir + "/ingest_report.csv", [&](std::ostream& out) {
    out << "accepted_rows,rejected_rows,n_features\n";
    out << state.ingest_report.accepted_rows << ',' << state.ingest_report.rejected_rows << ','
        << state.ingest_report.n_features << '\n';
  });
  log.push_back("stage=prepare rows=" + std::to_string(state.ingest_report.accepted_rows) +
                " rejected=" + std::to_string(state.ingest_report.rejected_rows) +
                " train=" + std::to_string(state.splits->train.size()) +
                " validation=" + std::to_string(state.splits->validation.size()) +
                " test=" + std::to_string(state.splits->test.size()));
}

inline void stage_screen(const PipelineConfig& config, PipelineState& state,
                         std::vector<std::string>& log) {
  detail::ensure_table(config, state);
  detail::ensure_splits(config, state);
  const FeatureTable& table = *state.table;
  const auto train_rows = state.train_rows();

  const ScreenResult structural = screen_columns(table, train_rows, config.screen);
  const ImportanceScreenResult ranked =
      importance_screen(table, train_rows, state.labels(), structural.retained, config.train,
                        config.screen.importance_cutoff);

  atomic_write(config.output_dir + "/screen_removals.csv", [&](std::ostream& out) {
    out << "column,reason,detail\n";
    for (const RemovalRecord& record : structural.removed)
      out << detail::csv_escape(record.column) << ',' << to_string(record.reason) << ','
          << detail::csv_escape(record.detail) << '\n';
  });
  atomic_write(config.output_dir + "/screen_importance.csv", [&](std::ostream& out) {
    out << "column,importance,kept\n";
    for (std::size_t j = 0; j < structural.retained.size(); ++j) {
      const bool kept = ranked.importances[j] >= config.screen.importance_cutoff;
      out << detail::csv_escape(structural.retained[j]) << ','
          << format_double(ranked.importances[j]) << ',' << (kept ? "yes" : "no") << '\n';
    }
  });
  atomic_write(config.output_dir + "/base_features.txt", [&](std::ostream& out) {
    for (const auto& name : ranked.kept) out << name << '\n';
  });
  state.base_features = ranked.kept;
  log.push_back("stage=screen structural_removed=" + std::to_string(structural.removed.size()) +
                " candidates=" + std::to_string(structural.retained.size()) +
                " kept=" + std::to_string(ranked.kept.size()));
}

inline void stage_train_baseline(const PipelineConfig& config, PipelineState& state,
                                 std::vector<std::string>& log) {
  detail::ensure_table(config, state);
  detail::ensure_splits(config, state);
  detail::ensure_base_features(config, state);
  const auto train_rows = state.train_rows();

  const LogisticModel model =
      fit_model(*state.table, train_rows, state.labels(),
                detail::base_specs_of(*state.base_features), config.train);
  const double train_auc =
      detail::split_pr_auc(model, *state.table, train_rows, state.labels());
  const double validation_auc =
      detail::split_pr_auc(model, *state.table, state.validation_rows(), state.labels());

  std::size_t train_pos = 0;
  for (std::size_t idx : train_rows) train_pos += state.labels()[idx];
  atomic_write(config.output_dir + "/baseline_metrics.csv", [&](std::ostream& out) {
    out << "metric,value\n";
    out << "n_base_features," << state.base_features->size() << '\n';
    out << "train_prevalence,"
        << format_double(static_cast<double>(train_pos) /
                         static_cast<double>(train_rows.size()))
        << '\n';
    out << "train_pr_auc," << format_double(train_auc) << '\n';
    out << "validation_pr_auc," << format_double(validation_auc) << '\n';
  });
  log.push_back("stage=train-baseline features=" + std::to_string(state.base_features->size()) +
                " validation_pr_auc=" + format_double(validation_auc));
}

inline void stage_engineer(const PipelineConfig& config, PipelineState& state,
                           std::vector<std::string>& log) {
  detail::ensure_table(config, state);
  detail::ensure_splits(config, state);
  detail::ensure_base_features(config, state);

  const std::vector<FeatureSpec> engineered = engineer_features(
      *state.table, state.train_rows(), *state.base_features, config.engineer_epsilon);
  atomic_write(config.output_dir + "/engineered_specs.csv", [&](std::ostream& out) {
    out << "spec,kind,a,b,shift\n";
    for (const FeatureSpec& spec : engineered) {
      out << detail::csv_escape(to_string(spec)) << ',' << spec_kind_string(spec.kind) << ','
          << detail::csv_escape(spec.name_a) << ',' << detail::csv_escape(spec.name_b) << ',';
      if (spec.kind == SpecKind::log_shift) out << format_double(spec.shift);
      out << '\n';
    }
  });
  state.engineered = engineered;
  log.push_back("stage=engineer specs=" + std::to_string(engineered.size()));
}

inline void stage_select(const PipelineConfig& config, PipelineState& state,
                         std::vector<std::string>& log) {
  detail::ensure_table(config, state);
  detail::ensure_splits(config, state);
  detail::ensure_base_features(config, state);
  detail::ensure_engineered(config, state);
  const FeatureTable& table = *state.table;
  const auto train_rows = state.train_rows();

  // Candidates: the screened base columns themselves plus every engineered
  // spec — the final model may keep a bare column alongside derived terms.
  std::vector<FeatureSpec> candidates = detail::base_specs_of(*state.base_features);
  candidates.insert(candidates.end(), state.engineered->begin(), state.engineered->end());

  const RfeResult rfe =
      rfe_loop(table, train_rows, state.labels(), candidates, config.train, config.selection);
  atomic_write(config.output_dir + "/selection_trace.csv",
               [&](std::ostream& out) { write_selection_trace_csv(rfe.trace, out); });

  const LogisticModel model =
      fit_model(table, train_rows, state.labels(), rfe.final_specs, config.train);
  const double validation_auc =
      detail::split_pr_auc(model, table, state.validation_rows(), state.labels());
  std::size_t train_pos = 0;
  for (std::size_t idx : train_rows) train_pos += state.labels()[idx];

  ModelArtifact artifact;
  artifact.model = model;
  artifact.label_spec = config.ingest.label_spec;
  artifact.config_fingerprint = config_fingerprint(config);
  artifact.metrics["cv_pr_auc_best"] = rfe.trace.best_pr_auc;
  artifact.metrics["validation_pr_auc"] = validation_auc;
  artifact.metrics["train_prevalence"] =
      static_cast<double>(train_pos) / static_cast<double>(train_rows.size());
  save_artifact(artifact, config.output_dir + "/model.json");

  atomic_write(config.output_dir + "/final_features.csv", [&](std::ostream& out) {
    out << "spec,kind,a,b,shift,coefficient,mean,std\n";
    out << "(intercept),intercept,,,," << format_double(model.intercept) << ",,\n";
    for (std::size_t j = 0; j < model.feature_specs.size(); ++j) {
      const FeatureSpec& spec = model.feature_specs[j];
      out << detail::csv_escape(to_string(spec)) << ',' << spec_kind_string(spec.kind) << ','
          << detail::csv_escape(spec.name_a) << ',' << detail::csv_escape(spec.name_b) << ',';
      if (spec.kind == SpecKind::log_shift) out << format_double(spec.shift);
      out << ',' << format_double(model.coefficients[j]) << ','
          << format_double(model.standardizer.means[j]) << ','
          << format_double(model.standardizer.stds[j]) << '\n';
    }
  });

  state.artifact = std::move(artifact);
  log.push_back("stage=select candidates=" + std::to_string(candidates.size()) +
                " iterations=" + std::to_string(rfe.trace.iterations.size()) +
                " final_specs=" + std::to_string(rfe.final_specs.size()) +
                " cv_pr_auc_best=" + format_double(rfe.trace.best_pr_auc) +
                " validation_pr_auc=" + format_double(validation_auc));
}

inline void stage_evaluate(const PipelineConfig& config, PipelineState& state,
                           std::vector<std::string>& log) {
  detail::ensure_table(config, state);
  detail::ensure_splits(config, state);
  detail::ensure_artifact(config, state);
  const FeatureTable& table = *state.table;
  const auto test_rows = state.test_rows("evaluate");

  const std::vector<double> probs = predict_proba(state.artifact->model, table, test_rows);
  std::vector<std::uint8_t> y(test_rows.size());
  for (std::size_t i = 0; i < test_rows.size(); ++i) y[i] = state.labels()[test_rows[i]];

  const PrCurve curve = pr_curve(probs, y);
  double test_auc = 0.0;
  {
    double prev_recall = 0.0;
    for (const PrPoint& pt : curve.points) {
      test_auc += (pt.recall - prev_recall) * pt.precision;
      prev_recall = pt.recall;
    }
  }
  const ConfusionCounts counts = confusion_at(probs, y, 0.5);

  atomic_write(config.output_dir + "/pr_curve_test.csv",
               [&](std::ostream& out) { write_pr_curve_csv(curve, out); });
  atomic_write(config.output_dir + "/test_metrics.csv", [&](std::ostream& out) {
    out << "metric,value\n";
    out << "test_rows," << test_rows.size() << '\n';
    out << "test_positives," << curve.positives << '\n';
    out << "test_pr_auc," << format_double(test_auc) << '\n';
    out << "tp_at_0.5," << counts.tp << '\n';
    out << "fp_at_0.5," << counts.fp << '\n';
    out << "fn_at_0.5," << counts.fn << '\n';
    out << "tn_at_0.5," << counts.tn << '\n';
  });

  // The artifact now gains its final metric; rewrite it in place.
  state.artifact->metrics["test_pr_auc"] = test_auc;
  save_artifact(*state.artifact, config.output_dir + "/model.json");
  log.push_back("stage=evaluate test_rows=" + std::to_string(test_rows.size()) +
                " test_pr_auc=" + format_double(test_auc));
}

inline void stage_importance(const PipelineConfig& config, PipelineState& state,
                             std::vector<std::string>& log) {
  detail::ensure_table(config, state);
  detail::ensure_splits(config, state);
  detail::ensure_artifact(config, state);

  double baseline = 0.0;
  const std::vector<double> drops = permutation_importance(
      state.artifact->model, *state.table, state.validation_rows(), state.labels(),
      config.permutation_repeats, config.permutation_seed, &baseline);
  atomic_write(config.output_dir + "/permutation_importance.csv", [&](std::ostream& out) {
    out << "spec,mean_drop,baseline_pr_auc\n";
    for (std::size_t j = 0; j < drops.size(); ++j)
      out << detail::csv_escape(to_string(state.artifact->model.feature_specs[j])) << ','
          << format_double(drops[j]) << ',' << format_double(baseline) << '\n';
  });
  log.push_back("stage=importance specs=" + std::to_string(drops.size()) +
                " baseline_pr_auc=" + format_double(baseline));
}

inline void stage_export(const PipelineConfig& config, PipelineState& state,
                         std::vector<std::string>& log) {
  detail::ensure_artifact(config, state);
  ExpressionDialect dialect = config.dialect;
  if (!config.dialect_has_variables)
    dialect.variables = ExpressionDialect::identity_for(state.artifact->model).variables;
  const std::string expression = emit_expression(state.artifact->model, dialect);
  atomic_write_text(config.output_dir + "/expression.txt", expression + "\n");
  log.push_back("stage=export expression_bytes=" + std::to_string(expression.size() + 1));
}

// ---- orchestration -------------------------------------------------------

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "synth",  "prepare",  "screen",     "train-baseline", "engineer",
      "select", "evaluate", "importance", "export"};
  return names;
}

inline void run_stage(const std::string& name, const PipelineConfig& config,
                      PipelineState& state, std::vector<std::string>& log) {
  std::filesystem::create_directories(config.output_dir);
  if (name == "synth") {
    stage_synth(config, state, log);
  } else if (name == "prepare") {
    stage_prepare(config, state, log);
  } else if (name == "screen") {
    stage_screen(config, state, log);
  } else if (name == "train-baseline") {
    stage_train_baseline(config, state, log);
  } else if (name == "engineer") {
    stage_engineer(config, state, log);
  } else if (name == "select") {
    stage_select(config, state, log);
  } else if (name == "evaluate") {
    stage_evaluate(config, state, log);
  } else if (name == "importance") {
    stage_importance(config, state, log);
  } else if (name == "export") {
    stage_export(config, state, log);
  } else {
    fail("config-invalid", "unknown stage: " + name);
  }
}

inline void write_run_log(const PipelineConfig& config, const std::vector<std::string>& log) {
  atomic_write(config.output_dir + "/run_log.txt", [&](std::ostream& out) {
    out << "config_fingerprint=" << config_fingerprint(config) << '\n';
    for (const auto& line : log) out << line << '\n';
  });
}

// Runs the whole chain (synth first when configured), sharing state across
// stages, and writes the run log.
inline void run_all(const PipelineConfig& config) {
  PipelineState state;
  std::vector<std::string> log;
  std::filesystem::create_directories(config.output_dir);
  if (config.synth) run_stage("synth", config, state, log);
  for (const char* name :
       {"prepare", "screen", "train-baseline", "engineer", "select", "evaluate",
        "importance", "export"})
    run_stage(name, config, state, log);
  write_run_log(config, log);
}

}  // namespace flowrisk
