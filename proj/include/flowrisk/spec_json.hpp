#pragma once

#include <string>

#include <json.hpp>

#include "flowrisk/error.hpp"
#include "flowrisk/feature_spec.hpp"

namespace flowrisk {

inline std::string spec_kind_string(SpecKind kind) {
  switch (kind) {
    case SpecKind::base: return "base";
    case SpecKind::square: return "sq";
    case SpecKind::log_shift: return "log";
    case SpecKind::interaction: return "ix";
  }
  return {};
}

inline SpecKind spec_kind_from(const std::string& text) {
  if (text == "base") return SpecKind::base;
  if (text == "sq") return SpecKind::square;
  if (text == "log") return SpecKind::log_shift;
  if (text == "ix") return SpecKind::interaction;
  fail("malformed-file", "unknown feature spec kind: " + text);
}

inline nlohmann::json spec_to_json(const FeatureSpec& spec) {
  nlohmann::json j;
  j["kind"] = spec_kind_string(spec.kind);
  j["a"] = spec.name_a;
  if (spec.kind == SpecKind::interaction) j["b"] = spec.name_b;
  if (spec.kind == SpecKind::log_shift) j["shift"] = spec.shift;
  return j;
}

inline FeatureSpec spec_from_json(const nlohmann::json& j) {
  FeatureSpec spec;
  spec.kind = spec_kind_from(j.at("kind").get<std::string>());
  spec.name_a = j.at("a").get<std::string>();
  if (spec.kind == SpecKind::interaction) {
    spec.name_b = j.at("b").get<std::string>();
    if (spec.name_b < spec.name_a) std::swap(spec.name_a, spec.name_b);
  }
  if (spec.kind == SpecKind::log_shift) spec.shift = j.at("shift").get<double>();
  return spec;
}

}  // namespace flowrisk
