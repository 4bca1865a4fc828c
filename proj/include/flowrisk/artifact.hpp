#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowrisk/csv.hpp"
#include "flowrisk/error.hpp"
#include "flowrisk/feature_table.hpp"
#include "flowrisk/hash.hpp"
#include "flowrisk/logistic.hpp"
#include "flowrisk/spec_json.hpp"

namespace flowrisk {

// Everything needed to load and apply a trained model later: weights, specs,
// standardization, label definition, metrics, and the fingerprint of the
// config that produced it. Deliberately no wall-clock anywhere — identical
// runs must produce identical artifacts.
struct ModelArtifact {
  static constexpr int current_format_version = 1;

  int format_version = current_format_version;
  LogisticModel model;
  LabelSpec label_spec;
  std::string config_fingerprint;
  std::map<std::string, double> metrics;  // e.g. validation_pr_auc, test_pr_auc
  std::string created_by = "flowrisk";
};

namespace detail {

inline nlohmann::json artifact_payload(const ModelArtifact& artifact) {
  nlohmann::json model;
  model["intercept"] = artifact.model.intercept;
  model["coefficients"] = artifact.model.coefficients;
  nlohmann::json specs = nlohmann::json::array();
  for (const FeatureSpec& spec : artifact.model.feature_specs)
    specs.push_back(spec_to_json(spec));
  model["feature_specs"] = std::move(specs);
  model["standardizer"] = {{"means", artifact.model.standardizer.means},
                           {"stds", artifact.model.standardizer.stds}};
  nlohmann::json payload;
  payload["model"] = std::move(model);
  payload["label"] = {{"ap0", artifact.label_spec.ap0},
                      {"threshold", artifact.label_spec.threshold}};
  payload["config_fingerprint"] = artifact.config_fingerprint;
  payload["metrics"] = artifact.metrics;
  payload["created_by"] = artifact.created_by;
  return payload;
}

}  // namespace detail

// Serializes the artifact as human-readable JSON. Doubles are written as
// shortest round-trip decimals (so reload is bit-exact), and the payload is
// protected by an FNV-1a checksum over its canonical (compact, key-sorted)
// dump. The file appears atomically.
inline void save_artifact(const ModelArtifact& artifact, const std::string& path) {
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(artifact.model.intercept))
    fail("degenerate-model", "non-finite intercept; refusing to serialize");
  for (double c : artifact.model.coefficients)
    if (!finite(c)) fail("degenerate-model", "non-finite coefficient; refusing to serialize");
  if (artifact.model.coefficients.size() != artifact.model.feature_specs.size() ||
      artifact.model.coefficients.size() != artifact.model.standardizer.width())
    fail("internal", "model term lists are inconsistent");

  nlohmann::json payload = detail::artifact_payload(artifact);
  nlohmann::json root;
  root["format_version"] = artifact.format_version;
  root["checksum"] = "fnv1a64:" + fnv1a64_hex(payload.dump());
  root["payload"] = std::move(payload);
  atomic_write_text(path, root.dump(2) + "\n");
}

inline ModelArtifact load_artifact(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail("malformed-file", path + ": not valid JSON: " + e.what());
  }
  try {
    const int version = root.at("format_version").get<int>();
    if (version != ModelArtifact::current_format_version)
      fail("version-mismatch", path + ": format_version " + std::to_string(version) +
                                   " (this build reads " +
                                   std::to_string(ModelArtifact::current_format_version) + ")");
    const nlohmann::json& payload = root.at("payload");
    const std::string expected = "fnv1a64:" + fnv1a64_hex(payload.dump());
    const std::string stored = root.at("checksum").get<std::string>();
    if (stored != expected)
      fail("checksum-mismatch", path + ": stored " + stored + ", computed " + expected);

    ModelArtifact artifact;
    artifact.format_version = version;
    const nlohmann::json& model = payload.at("model");
    artifact.model.intercept = model.at("intercept").get<double>();
    artifact.model.coefficients = model.at("coefficients").get<std::vector<double>>();
    for (const auto& j : model.at("feature_specs"))
      artifact.model.feature_specs.push_back(spec_from_json(j));
    artifact.model.standardizer.means =
        model.at("standardizer").at("means").get<std::vector<double>>();
    artifact.model.standardizer.stds =
        model.at("standardizer").at("stds").get<std::vector<double>>();
    artifact.label_spec.ap0 = payload.at("label").at("ap0").get<double>();
    artifact.label_spec.threshold = payload.at("label").at("threshold").get<double>();
    artifact.config_fingerprint = payload.at("config_fingerprint").get<std::string>();
    artifact.metrics = payload.at("metrics").get<std::map<std::string, double>>();
    artifact.created_by = payload.at("created_by").get<std::string>();
    if (artifact.model.coefficients.size() != artifact.model.feature_specs.size() ||
        artifact.model.coefficients.size() != artifact.model.standardizer.width())
      fail("malformed-file", path + ": inconsistent model term lists");
    return artifact;
  } catch (const nlohmann::json::exception& e) {
    fail("malformed-file", path + ": " + e.what());
  }
}

}  // namespace flowrisk
