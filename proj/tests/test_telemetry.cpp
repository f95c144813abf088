#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "trifuse/telemetry.hpp"

using namespace trifuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "trifuse_telemetry_test";
  fs::create_directories(dir);
  return dir;
}

fs::path write_file(const std::string& name, const std::string& content) {
  const fs::path p = temp_dir() / name;
  std::ofstream out(p, std::ios::trunc);
  out << content;
  return p;
}

GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.duration_minutes = 240;
  cfg.instance_ids = {"i0", "i1"};
  cfg.metrics_per_instance = 2;
  cfg.log_templates = {"user login ok", "request {} served"};
  cfg.calls = {{"client", "i0"}, {"i0", "i1"}};
  return cfg;
}

bool equal_datasets(const Dataset& a, const Dataset& b) {
  if (a.metrics.size() != b.metrics.size() || a.logs.size() != b.logs.size() ||
      a.spans.size() != b.spans.size() || a.labels.size() != b.labels.size())
    return false;
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    const auto &x = a.metrics[i], &y = b.metrics[i];
    if (x.instance_id != y.instance_id || x.metric_name != y.metric_name ||
        x.timestamp != y.timestamp || x.value != y.value)
      return false;
  }
  for (std::size_t i = 0; i < a.logs.size(); ++i) {
    const auto &x = a.logs[i], &y = b.logs[i];
    if (x.instance_id != y.instance_id || x.timestamp != y.timestamp || x.raw_text != y.raw_text)
      return false;
  }
  for (std::size_t i = 0; i < a.spans.size(); ++i) {
    const auto &x = a.spans[i], &y = b.spans[i];
    if (x.span_id != y.span_id || x.start_ts != y.start_ts || x.duration_ms != y.duration_ms ||
        x.status_code != y.status_code)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("load_metrics parses rows and sorts") {
  const auto p = write_file("m.csv",
                            "instance_id,metric_name,timestamp,value\n"
                            "i1,cpu,120,0.7\n"
                            "i1,cpu,60,0.5\n");
  const auto rows = load_metrics(p);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].instance_id == "i1");
  CHECK(rows[0].metric_name == "cpu");
  CHECK(rows[0].timestamp == 60);
  CHECK(rows[0].value == doctest::Approx(0.5));
  CHECK(rows[1].timestamp == 120);
}

TEST_CASE("load_metrics header-only file gives empty list") {
  const auto p = write_file("empty.csv", "instance_id,metric_name,timestamp,value\n");
  CHECK(load_metrics(p).empty());
}

TEST_CASE("load_metrics rejects non-finite values with the line number") {
  const auto p = write_file("nan.csv",
                            "instance_id,metric_name,timestamp,value\n"
                            "i1,cpu,60,NaN\n");
  try {
    load_metrics(p);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("load_metrics missing file") {
  CHECK_THROWS_AS(load_metrics(temp_dir() / "nope.csv"), DataError);
}

TEST_CASE("loaders are pure") {
  const auto p = write_file("pure.csv",
                            "instance_id,metric_name,timestamp,value\n"
                            "a,m,0,1\nb,m,60,2\n");
  const auto first = load_metrics(p);
  const auto second = load_metrics(p);
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].value == second[i].value);
    CHECK(first[i].timestamp == second[i].timestamp);
  }
}

TEST_CASE("load_logs parses JSONL") {
  const auto p = write_file(
      "l.jsonl", R"({"instance_id":"i1","timestamp":60,"raw_text":"login ok"})" "\n");
  const auto logs = load_logs(p);
  REQUIRE(logs.size() == 1);
  CHECK(logs[0].instance_id == "i1");
  CHECK(logs[0].timestamp == 60);
  CHECK(logs[0].raw_text == "login ok");
}

TEST_CASE("load_logs rejects empty text and malformed lines") {
  const auto bad = write_file(
      "bad.jsonl", R"({"instance_id":"i1","timestamp":60,"raw_text":""})" "\n");
  CHECK_THROWS_AS(load_logs(bad), DataError);
  const auto malformed = write_file("mal.jsonl", "{not json\n");
  try {
    load_logs(malformed);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":1") != std::string::npos);
  }
}

TEST_CASE("load_traces rejects negative duration") {
  const auto p = write_file("t.jsonl",
                            R"({"trace_id":"t1","span_id":"s1","instance_id":"i1",)"
                            R"("start_ts":60000,"duration_ms":-1})" "\n");
  CHECK_THROWS_AS(load_traces(p), DataError);
}

TEST_CASE("load_traces keeps optional fields optional") {
  const auto p = write_file("t2.jsonl",
                            R"({"trace_id":"t1","span_id":"s1","instance_id":"i1",)"
                            R"("start_ts":60000,"duration_ms":12.5})" "\n");
  const auto spans = load_traces(p);
  REQUIRE(spans.size() == 1);
  CHECK_FALSE(spans[0].parent_span_id.has_value());
  CHECK_FALSE(spans[0].status_code.has_value());
}

TEST_CASE("load_labels rejects inverted windows") {
  const auto p = write_file("lab.jsonl",
                            R"({"instance_id":"i1","start_ts":120,"end_ts":60,)"
                            R"("failure_type":"rt_spike"})" "\n");
  CHECK_THROWS_AS(load_labels(p), DataError);
}

TEST_CASE("generator determinism") {
  const auto cfg = small_config();
  const Dataset a = generate_synthetic(cfg, 7);
  const Dataset b = generate_synthetic(cfg, 7);
  CHECK(equal_datasets(a, b));
  const Dataset c = generate_synthetic(cfg, 8);
  CHECK_FALSE(equal_datasets(a, c));
}

TEST_CASE("generator with no failures yields empty labels") {
  const Dataset ds = generate_synthetic(small_config(), 3);
  CHECK(ds.labels.empty());
  CHECK_FALSE(ds.metrics.empty());
  CHECK_FALSE(ds.logs.empty());
  CHECK_FALSE(ds.spans.empty());
}

TEST_CASE("generator validates scenario windows and topology") {
  auto cfg = small_config();
  cfg.failures.push_back({FailureType::MetricSurge, "i0", 230, 20, 0});
  CHECK_THROWS_AS(generate_synthetic(cfg, 1), UsageError);

  auto no_calls = small_config();
  no_calls.calls.clear();
  CHECK_THROWS_AS(generate_synthetic(no_calls, 1), UsageError);

  auto unknown = small_config();
  unknown.failures.push_back({FailureType::RtSpike, "nope", 10, 5, 0});
  CHECK_THROWS_AS(generate_synthetic(unknown, 1), UsageError);
}

TEST_CASE("rt_spike spans clear 10x the normal median") {
  GeneratorConfig cfg;
  cfg.duration_minutes = 1440;
  cfg.instance_ids = {"i0"};
  cfg.metrics_per_instance = 1;
  cfg.log_templates = {"heartbeat ok"};
  cfg.calls = {{"client", "i0"}};
  cfg.failures.push_back({FailureType::RtSpike, "i0", 700, 10, 0});
  const Dataset ds = generate_synthetic(cfg, 42);

  std::vector<double> normal;
  std::vector<double> spiked;
  for (const auto& s : ds.spans) {
    const std::int64_t minute = s.start_ts / 60000;
    if (minute >= 700 && minute < 710)
      spiked.push_back(s.duration_ms);
    else
      normal.push_back(s.duration_ms);
  }
  REQUIRE(!normal.empty());
  REQUIRE(!spiked.empty());
  std::sort(normal.begin(), normal.end());
  const double median = normal[normal.size() / 2];
  for (double d : spiked) CHECK(d >= 10.0 * median);
}

TEST_CASE("metric surge shifts the windowed mean by at least 5 sigma") {
  GeneratorConfig cfg;
  cfg.duration_minutes = 720;
  cfg.instance_ids = {"i0"};
  cfg.metrics_per_instance = 1;
  cfg.log_templates = {"heartbeat ok"};
  cfg.calls = {{"client", "i0"}};
  cfg.failures.push_back({FailureType::MetricSurge, "i0", 300, 60, 0});
  const Dataset ds = generate_synthetic(cfg, 11);

  std::vector<double> in_window, outside;
  for (const auto& m : ds.metrics) {
    const std::int64_t minute = m.timestamp / 60;
    (minute >= 300 && minute < 360 ? in_window : outside).push_back(m.value);
  }
  REQUIRE(in_window.size() == 60);
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double mu_out = mean(outside);
  double var = 0;
  for (double x : outside) var += (x - mu_out) * (x - mu_out);
  // seasonal swing inflates this sigma estimate, so the check is conservative
  const double sigma = std::sqrt(var / static_cast<double>(outside.size()));
  CHECK(mean(in_window) - mu_out >= 5.0 * 0.5);  // config sigma lower bound
  CHECK(mean(in_window) - mu_out >= 2.0 * sigma);
}

TEST_CASE("error log burst multiplies the error rate") {
  GeneratorConfig cfg;
  cfg.duration_minutes = 1440;
  cfg.instance_ids = {"i0"};
  cfg.metrics_per_instance = 1;
  cfg.log_templates = {"heartbeat ok"};
  cfg.error_rate_per_min = 0.05;
  cfg.calls = {{"client", "i0"}};
  cfg.failures.push_back({FailureType::ErrorLogBurst, "i0", 600, 30, 0});
  const Dataset ds = generate_synthetic(cfg, 5);

  std::size_t burst = 0, normal = 0;
  for (const auto& l : ds.logs) {
    if (l.raw_text.rfind("error code", 0) != 0) continue;
    const std::int64_t minute = l.timestamp / 60;
    (minute >= 600 && minute < 630) ? ++burst : ++normal;
  }
  const double burst_rate = static_cast<double>(burst) / 30.0;
  const double normal_rate = static_cast<double>(normal) / 1410.0;
  CHECK(burst_rate >= 10.0 * std::max(normal_rate, 1e-9));
  CHECK(burst >= 30);  // at least one per burst minute
}

TEST_CASE("every label window contains a sample of the perturbed modality") {
  GeneratorConfig cfg;
  cfg.duration_minutes = 600;
  cfg.instance_ids = {"i0", "i1"};
  cfg.metrics_per_instance = 2;
  cfg.log_templates = {"heartbeat ok"};
  cfg.calls = {{"client", "i0"}, {"client", "i1"}};
  cfg.failures.push_back({FailureType::MetricSurge, "i0", 100, 10, 1});
  cfg.failures.push_back({FailureType::ErrorLogBurst, "i1", 200, 10, 0});
  cfg.failures.push_back({FailureType::RtSpike, "i0", 300, 10, 0});
  cfg.failures.push_back({FailureType::Combined, "i1", 400, 10, 0});
  const Dataset ds = generate_synthetic(cfg, 9);
  REQUIRE(ds.labels.size() == 4);

  for (const auto& label : ds.labels) {
    const FailureType type = failure_type_from_string(label.failure_type);
    auto within = [&](std::int64_t ts) { return ts >= label.start_ts && ts <= label.end_ts; };
    if (type == FailureType::MetricSurge || type == FailureType::MetricDrop ||
        type == FailureType::Combined) {
      bool found = false;
      for (const auto& m : ds.metrics)
        if (m.instance_id == label.instance_id && within(m.timestamp)) found = true;
      CHECK(found);
    }
    if (type == FailureType::ErrorLogBurst || type == FailureType::Combined) {
      bool found = false;
      for (const auto& l : ds.logs)
        if (l.instance_id == label.instance_id && within(l.timestamp)) found = true;
      CHECK(found);
    }
    if (type == FailureType::RtSpike || type == FailureType::Combined) {
      bool found = false;
      for (const auto& s : ds.spans)
        if (s.instance_id == label.instance_id && within(s.start_ts / 1000)) found = true;
      CHECK(found);
    }
  }
}

TEST_CASE("save and load round-trips a generated dataset") {
  const Dataset ds = generate_synthetic(small_config(), 21);
  const fs::path dir = temp_dir() / "roundtrip";
  save_dataset(ds, dir);
  const Dataset loaded = load_dataset(dir);
  CHECK(equal_datasets(ds, loaded));
  CHECK(loaded.instance_ids == std::vector<std::string>{"i0", "i1"});
}

TEST_CASE("generator config JSON parsing rejects unknown keys") {
  CHECK_THROWS_AS(GeneratorConfig::from_json_text(R"({"duratoin_minutes": 10})"), UsageError);
  const auto cfg = GeneratorConfig::from_json_text(R"({
    "duration_minutes": 60,
    "instances": ["a"],
    "metrics_per_instance": 1,
    "log_templates": ["x ok"],
    "calls": [["client", "a"]],
    "failures": [{"type": "metric_surge", "instance": "a", "start_minute": 5,
                  "duration_minutes": 2}]
  })");
  CHECK(cfg.duration_minutes == 60);
  CHECK(cfg.failures.size() == 1);
  CHECK(cfg.failures[0].type == FailureType::MetricSurge);
}
