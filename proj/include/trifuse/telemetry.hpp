#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trifuse/errors.hpp"

namespace trifuse {

struct MetricSample {
  std::string instance_id;
  std::string metric_name;
  std::int64_t timestamp = 0;  // epoch seconds
  double value = 0.0;
};

struct LogEntry {
  std::string instance_id;
  std::int64_t timestamp = 0;  // epoch seconds
  std::string raw_text;
};

struct Span {
  std::string trace_id;
  std::string span_id;
  std::optional<std::string> parent_span_id;
  std::string instance_id;
  std::int64_t start_ts = 0;  // epoch milliseconds
  double duration_ms = 0.0;
  std::optional<int> status_code;  // 0 = success
};

struct FailureLabel {
  std::string instance_id;
  std::int64_t start_ts = 0;  // epoch seconds, inclusive
  std::int64_t end_ts = 0;    // epoch seconds, inclusive
  std::string failure_type;
};

struct Dataset {
  std::vector<MetricSample> metrics;
  std::vector<LogEntry> logs;
  std::vector<Span> spans;
  std::vector<FailureLabel> labels;
  std::vector<std::string> instance_ids;
};

// Loaders. CSV for metrics, JSONL for the rest; malformed input raises
// DataError naming the offending line.
std::vector<MetricSample> load_metrics(const std::filesystem::path& path);
std::vector<LogEntry> load_logs(const std::filesystem::path& path);
std::vector<Span> load_traces(const std::filesystem::path& path);
std::vector<FailureLabel> load_labels(const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& dir);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic microservice telemetry with labeled fault injection.

enum class FailureType { MetricSurge, MetricDrop, ErrorLogBurst, RtSpike, Combined };

const char* to_string(FailureType t);
FailureType failure_type_from_string(const std::string& s);

struct FailureScenario {
  FailureType type = FailureType::MetricSurge;
  std::string instance_id;
  int start_minute = 0;
  int duration_minutes = 1;
  int metric_index = 0;  // which of the instance's metrics a surge/drop hits
};

struct GeneratorConfig {
  std::int64_t start_epoch = 0;  // seconds; minute grid begins here
  int duration_minutes = 1440;
  std::vector<std::string> instance_ids;
  int metrics_per_instance = 4;
  std::vector<std::string> log_templates;  // "{}" slots filled with numbers
  std::string error_template = "error code {} connection refused";
  std::vector<std::pair<std::string, std::string>> calls;  // caller -> callee
  std::vector<FailureScenario> failures;

  double log_rate_per_min = 0.5;        // per normal template
  double error_rate_per_min = 0.05;     // baseline error-template rate
  double call_rate_per_min = 3.0;       // per call edge
  double error_status_rate = 0.02;      // P(status != 0) on a normal span
  double surge_sigmas = 8.0;            // mean shift in noise sigmas
  double burst_factor = 20.0;           // error-log rate multiplier
  double spike_factor = 25.0;           // span duration multiplier

  static GeneratorConfig from_json_file(const std::filesystem::path& path);
  static GeneratorConfig from_json_text(const std::string& text);
};

// Deterministic for a fixed (config, seed); every injected scenario is
// covered exactly by one FailureLabel.
Dataset generate_synthetic(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace trifuse
