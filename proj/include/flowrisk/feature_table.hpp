#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowrisk/csv.hpp"
#include "flowrisk/error.hpp"

namespace flowrisk {

// Columnar numeric dataset. Invariants: all columns share n_rows entries,
// column names are unique, all stored values are finite, and label (when
// present) holds one 0/1 entry per row.
struct FeatureTable {
  std::vector<std::string> column_names;
  std::vector<std::vector<double>> columns;  // aligned with column_names
  std::size_t n_rows = 0;
  std::optional<std::vector<std::uint8_t>> label;

  std::optional<std::size_t> column_index(const std::string& name) const {
    for (std::size_t j = 0; j < column_names.size(); ++j)
      if (column_names[j] == name) return j;
    return std::nullopt;
  }

  const std::vector<double>& column(const std::string& name) const {
    const auto j = column_index(name);
    if (!j) fail("unknown-column", "no such column: " + name);
    return columns[*j];
  }
};

// sAP: per-mille increase of activated-platelet concentration over the
// initial concentration ap0. Multiplying before dividing keeps the reference
// cases exact in double precision (e.g. ap = 2.515e13 -> exactly 6.0).
inline std::vector<double> compute_sap(std::span<const double> ap, double ap0) {
  if (!(ap0 > 0.0)) fail("config-invalid", "reference concentration must be positive");
  std::vector<double> sap(ap.size());
  for (std::size_t i = 0; i < ap.size(); ++i) sap[i] = (1000.0 * (ap[i] - ap0)) / ap0;
  return sap;
}

// Binary labels by strict threshold: positive iff sap > threshold.
inline std::vector<std::uint8_t> label_threshold(std::span<const double> sap, double threshold) {
  std::vector<std::uint8_t> labels(sap.size());
  for (std::size_t i = 0; i < sap.size(); ++i) labels[i] = sap[i] > threshold ? 1 : 0;
  return labels;
}

// How the label column's raw values are interpreted.
enum class LabelKind {
  none,    // no label column; table.label stays empty
  binary,  // values must be exactly 0 or 1
  ap,      // activated-platelet concentration; converted to sAP, then thresholded
  sap,     // already scaled; thresholded directly
};

struct LabelSpec {
  double ap0 = 2.5e13;     // initial platelet concentration (1/m^3)
  double threshold = 6.0;  // sAP decision threshold
};

struct IngestConfig {
  std::string label_column;  // required unless label_kind == none
  LabelKind label_kind = LabelKind::none;
  LabelSpec label_spec;
};

struct IngestReport {
  std::size_t accepted_rows = 0;
  std::size_t rejected_rows = 0;  // rows containing non-finite values
  std::size_t n_features = 0;
};

// Reads a CSV into a FeatureTable. Every non-label column must parse as a
// double in every kept row. Rows containing non-finite values (NaN/inf,
// spelled in any parseable form) are rejected and counted; cells that do not
// parse at all are an error, since they signal a malformed file rather than
// a failed upstream simulation.
inline FeatureTable ingest_csv(const std::string& path, const IngestConfig& config,
                               IngestReport* report = nullptr) {
  CsvReader reader(path);
  const auto& header = reader.header();
  if (header.empty()) fail("ingest-error", path + ": header has no columns");
  {
    std::unordered_map<std::string, int> seen;
    for (const auto& name : header) {
      if (name.empty()) fail("ingest-error", path + ": empty column name in header");
      if (++seen[name] > 1) fail("ingest-error", path + ": duplicate column name: " + name);
    }
  }

  std::size_t label_col = header.size();
  if (config.label_kind != LabelKind::none) {
    bool found = false;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == config.label_column) {
        label_col = j;
        found = true;
        break;
      }
    }
    if (!found)
      fail("ingest-error", path + ": label column not found: " + config.label_column);
  }

  FeatureTable table;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != label_col) table.column_names.push_back(header[j]);
  table.columns.resize(table.column_names.size());

  std::vector<double> raw_label;
  std::vector<std::string_view> fields;
  std::vector<double> parsed(header.size());
  std::size_t rejected = 0;
  while (reader.next_row(fields)) {
    bool finite = true;
    for (std::size_t j = 0; j < fields.size(); ++j) {
      double v = 0.0;
      if (!parse_double(fields[j], v)) {
        fail("ingest-error", path + ":" + std::to_string(reader.line_number()) +
                                 ": cannot parse value '" + std::string(fields[j]) +
                                 "' in column " + header[j]);
      }
      if (!std::isfinite(v)) finite = false;
      parsed[j] = v;
    }
    if (!finite) {
      ++rejected;
      continue;
    }
    std::size_t out = 0;
    for (std::size_t j = 0; j < parsed.size(); ++j) {
      if (j == label_col) continue;
      table.columns[out++].push_back(parsed[j]);
    }
    if (label_col < header.size()) raw_label.push_back(parsed[label_col]);
  }
  table.n_rows = table.columns.empty() ? raw_label.size() : table.columns[0].size();

  switch (config.label_kind) {
    case LabelKind::none:
      break;
    case LabelKind::binary: {
      std::vector<std::uint8_t> labels(raw_label.size());
      for (std::size_t i = 0; i < raw_label.size(); ++i) {
        if (raw_label[i] != 0.0 && raw_label[i] != 1.0)
          fail("ingest-error", path + ": label column " + config.label_column +
                                   " contains non-binary value " + format_double(raw_label[i]));
        labels[i] = raw_label[i] == 1.0 ? 1 : 0;
      }
      table.label = std::move(labels);
      break;
    }
    case LabelKind::ap: {
      const auto sap = compute_sap(raw_label, config.label_spec.ap0);
      table.label = label_threshold(sap, config.label_spec.threshold);
      break;
    }
    case LabelKind::sap:
      table.label = label_threshold(raw_label, config.label_spec.threshold);
      break;
  }

  if (report) {
    report->accepted_rows = table.n_rows;
    report->rejected_rows = rejected;
    report->n_features = table.column_names.size();
  }
  return table;
}

}  // namespace flowrisk
