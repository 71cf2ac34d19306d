// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iclvc/synthdata.hpp"
#include "iclvc/tokenizer.hpp"
#include "json.hpp"

namespace iclvc {

// A metric that may be undefined; `reason` says why when it is.
struct MetricValue {
  std::optional<double> value;
  std::string reason;

  static MetricValue of(double v) { return {v, {}}; }
  static MetricValue null(std::string why) { return {std::nullopt, std::move(why)}; }
  bool defined() const { return value.has_value(); }
};

MetricValue cosine_similarity(std::span<const double> a, std::span<const double> b);
MetricValue cosine_similarity(const RowVector& a, const RowVector& b);

MetricValue pearson(std::span<const double> x, std::span<const double> y);

// Plug-in estimate in nats over paired discrete labels.
double mutual_information(std::span<const int> x, std::span<const int> y);

// Squared energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| between two row
// samples, V-statistic form (diagonal zeros included, so it is >= 0).
double energy_distance(const Matrix& a, const Matrix& b);

// Ridge regression fit on (train_x, train_y) with an intercept, scored on the
// test split: 1 - SSE/SST pooled over all target columns. Can be negative.
double ridge_probe_r2(const Matrix& train_x, const Matrix& train_y, const Matrix& test_x, const Matrix& test_y,
                      double ridge);

struct PairMetrics {
  std::string source_id;
  std::string reference_id;
  MetricValue secs;         // cosine(probe(converted), probe(reference mel))
  MetricValue secs_source;  // cosine(probe(converted), probe(source mel))
  MetricValue pitch_corr;
  MetricValue energy_corr;
  MetricValue content_accuracy;
};

struct MetricReport {
  std::vector<PairMetrics> pairs;
  MetricValue secs, secs_source, pitch_corr, energy_corr, content_accuracy;

  nlohmann::json to_json() const;
  std::string to_table() const;
  // Names of aggregate metrics that came out null.
  std::vector<std::string> null_metrics() const;
};

inline constexpr int kMinVoicedOverlap = 10;

// Pitch correlation uses frames voiced in both contours; fewer than
// kMinVoicedOverlap such frames gives null. Content accuracy compares k-means
// tokens of features rendered from the probed content of the converted mel
// with tokens of features rendered from the source's true content.
PairMetrics evaluate_conversion(const SynthWorld& world, const Matrix& converted, const ToyUtterance& source,
                                const ToyUtterance& reference, const Codebook& codebook, const std::string& stream);

// Aggregates are means of the defined per-pair values.
MetricReport aggregate(std::vector<PairMetrics> pairs);

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& table_path,
                  const MetricReport& report);

}  // namespace iclvc
