#include "trifuse/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "trifuse/jsonutil.hpp"
#include "trifuse/rng.hpp"

namespace trifuse {

namespace {

std::string loc(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::int64_t parse_int(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw DataError(where + ": bad integer \"" + s + "\"");
  return v;
}

double parse_real(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DataError(where + ": bad number \"" + s + "\"");
  return v;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

Json parse_jsonl_line(const std::string& line, const std::filesystem::path& path,
                      std::size_t lineno) {
  try {
    return Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw DataError(loc(path, lineno) + ": " + e.what());
  }
}

template <typename T>
T require(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw DataError(where + ": field \"" + std::string(key) + "\" has wrong type");
  }
}

}  // namespace

std::vector<MetricSample> load_metrics(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<MetricSample> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "instance_id,metric_name,timestamp,value")
        throw DataError(loc(path, lineno) + ": unexpected metrics header \"" + line + "\"");
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 4) throw DataError(loc(path, lineno) + ": expected 4 fields");
    MetricSample s;
    s.instance_id = fields[0];
    s.metric_name = fields[1];
    s.timestamp = parse_int(fields[2], loc(path, lineno));
    s.value = parse_real(fields[3], loc(path, lineno));
    if (s.instance_id.empty()) throw DataError(loc(path, lineno) + ": empty instance_id");
    if (s.timestamp < 0) throw DataError(loc(path, lineno) + ": negative timestamp");
    if (!std::isfinite(s.value)) throw DataError(loc(path, lineno) + ": non-finite value");
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const MetricSample& a, const MetricSample& b) {
    return std::tie(a.instance_id, a.metric_name, a.timestamp) <
           std::tie(b.instance_id, b.metric_name, b.timestamp);
  });
  return out;
}

std::vector<LogEntry> load_logs(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<LogEntry> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const Json j = parse_jsonl_line(line, path, lineno);
    LogEntry e;
    e.instance_id = require<std::string>(j, "instance_id", loc(path, lineno));
    e.timestamp = require<std::int64_t>(j, "timestamp", loc(path, lineno));
    e.raw_text = require<std::string>(j, "raw_text", loc(path, lineno));
    if (e.timestamp < 0) throw DataError(loc(path, lineno) + ": negative timestamp");
    if (e.raw_text.empty()) throw DataError(loc(path, lineno) + ": empty raw_text");
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LogEntry& a, const LogEntry& b) { return a.timestamp < b.timestamp; });
  return out;
}

std::vector<Span> load_traces(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<Span> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const Json j = parse_jsonl_line(line, path, lineno);
    Span s;
    s.trace_id = require<std::string>(j, "trace_id", loc(path, lineno));
    s.span_id = require<std::string>(j, "span_id", loc(path, lineno));
    s.instance_id = require<std::string>(j, "instance_id", loc(path, lineno));
    s.start_ts = require<std::int64_t>(j, "start_ts", loc(path, lineno));
    s.duration_ms = require<double>(j, "duration_ms", loc(path, lineno));
    if (j.contains("parent_span_id") && !j.at("parent_span_id").is_null())
      s.parent_span_id = j.at("parent_span_id").get<std::string>();
    if (j.contains("status_code") && !j.at("status_code").is_null())
      s.status_code = j.at("status_code").get<int>();
    if (s.duration_ms < 0) throw DataError(loc(path, lineno) + ": negative duration_ms");
    if (s.start_ts < 0) throw DataError(loc(path, lineno) + ": negative start_ts");
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Span& a, const Span& b) { return a.start_ts < b.start_ts; });
  return out;
}

std::vector<FailureLabel> load_labels(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<FailureLabel> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const Json j = parse_jsonl_line(line, path, lineno);
    FailureLabel l;
    l.instance_id = require<std::string>(j, "instance_id", loc(path, lineno));
    l.start_ts = require<std::int64_t>(j, "start_ts", loc(path, lineno));
    l.end_ts = require<std::int64_t>(j, "end_ts", loc(path, lineno));
    l.failure_type = require<std::string>(j, "failure_type", loc(path, lineno));
    if (l.start_ts > l.end_ts) throw DataError(loc(path, lineno) + ": start_ts > end_ts");
    out.push_back(std::move(l));
  }
  std::stable_sort(out.begin(), out.end(), [](const FailureLabel& a, const FailureLabel& b) {
    return a.start_ts < b.start_ts;
  });
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.metrics = load_metrics(dir / "metrics.csv");
  ds.logs = load_logs(dir / "logs.jsonl");
  ds.spans = load_traces(dir / "traces.jsonl");
  ds.labels = load_labels(dir / "labels.jsonl");
  std::set<std::string> ids;
  for (const auto& m : ds.metrics) ids.insert(m.instance_id);
  for (const auto& l : ds.logs) ids.insert(l.instance_id);
  for (const auto& s : ds.spans) ids.insert(s.instance_id);
  ds.instance_ids.assign(ids.begin(), ids.end());
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream out;
    out << "instance_id,metric_name,timestamp,value\n";
    for (const auto& m : ds.metrics) {
      out << m.instance_id << ',' << m.metric_name << ',' << m.timestamp << ','
          << format_double(m.value) << '\n';
    }
    write_file_atomic(dir / "metrics.csv", out.str());
  }
  {
    std::ostringstream out;
    for (const auto& l : ds.logs) {
      Json j{{"instance_id", l.instance_id}, {"timestamp", l.timestamp}, {"raw_text", l.raw_text}};
      out << j.dump() << '\n';
    }
    write_file_atomic(dir / "logs.jsonl", out.str());
  }
  {
    std::ostringstream out;
    for (const auto& s : ds.spans) {
      Json j{{"trace_id", s.trace_id},
             {"span_id", s.span_id},
             {"instance_id", s.instance_id},
             {"start_ts", s.start_ts},
             {"duration_ms", s.duration_ms}};
      if (s.parent_span_id) j["parent_span_id"] = *s.parent_span_id;
      if (s.status_code) j["status_code"] = *s.status_code;
      out << j.dump() << '\n';
    }
    write_file_atomic(dir / "traces.jsonl", out.str());
  }
  {
    std::ostringstream out;
    for (const auto& l : ds.labels) {
      Json j{{"instance_id", l.instance_id},
             {"start_ts", l.start_ts},
             {"end_ts", l.end_ts},
             {"failure_type", l.failure_type}};
      out << j.dump() << '\n';
    }
    write_file_atomic(dir / "labels.jsonl", out.str());
  }
}

// ---------------------------------------------------------------------------

const char* to_string(FailureType t) {
  switch (t) {
    case FailureType::MetricSurge: return "metric_surge";
    case FailureType::MetricDrop: return "metric_drop";
    case FailureType::ErrorLogBurst: return "error_log_burst";
    case FailureType::RtSpike: return "rt_spike";
    case FailureType::Combined: return "combined";
  }
  return "?";
}

FailureType failure_type_from_string(const std::string& s) {
  if (s == "metric_surge") return FailureType::MetricSurge;
  if (s == "metric_drop") return FailureType::MetricDrop;
  if (s == "error_log_burst") return FailureType::ErrorLogBurst;
  if (s == "rt_spike") return FailureType::RtSpike;
  if (s == "combined") return FailureType::Combined;
  throw UsageError("unknown failure type \"" + s + "\"");
}

GeneratorConfig GeneratorConfig::from_json_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw DataError(std::string("generator config: ") + e.what());
  }
  check_keys(j,
             {"start_epoch", "duration_minutes", "instances", "metrics_per_instance",
              "log_templates", "error_template", "calls", "failures", "log_rate_per_min",
              "error_rate_per_min", "call_rate_per_min", "error_status_rate", "surge_sigmas",
              "burst_factor", "spike_factor"},
             "generator config");
  GeneratorConfig c;
  c.start_epoch = j.value("start_epoch", c.start_epoch);
  c.duration_minutes = j.value("duration_minutes", c.duration_minutes);
  c.instance_ids = j.value("instances", c.instance_ids);
  c.metrics_per_instance = j.value("metrics_per_instance", c.metrics_per_instance);
  c.log_templates = j.value("log_templates", c.log_templates);
  c.error_template = j.value("error_template", c.error_template);
  if (j.contains("calls")) {
    for (const auto& e : j.at("calls")) {
      if (!e.is_array() || e.size() != 2)
        throw UsageError("generator config: each call must be [caller, callee]");
      c.calls.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    }
  }
  if (j.contains("failures")) {
    for (const auto& f : j.at("failures")) {
      check_keys(f, {"type", "instance", "start_minute", "duration_minutes", "metric_index"},
                 "failure scenario");
      FailureScenario s;
      s.type = failure_type_from_string(f.at("type").get<std::string>());
      s.instance_id = f.at("instance").get<std::string>();
      s.start_minute = f.at("start_minute").get<int>();
      s.duration_minutes = f.at("duration_minutes").get<int>();
      s.metric_index = f.value("metric_index", 0);
      c.failures.push_back(std::move(s));
    }
  }
  c.log_rate_per_min = j.value("log_rate_per_min", c.log_rate_per_min);
  c.error_rate_per_min = j.value("error_rate_per_min", c.error_rate_per_min);
  c.call_rate_per_min = j.value("call_rate_per_min", c.call_rate_per_min);
  c.error_status_rate = j.value("error_status_rate", c.error_status_rate);
  c.surge_sigmas = j.value("surge_sigmas", c.surge_sigmas);
  c.burst_factor = j.value("burst_factor", c.burst_factor);
  c.spike_factor = j.value("spike_factor", c.spike_factor);
  return c;
}

GeneratorConfig GeneratorConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

namespace {

bool scenario_hits_metric(const FailureScenario& s) {
  return s.type == FailureType::MetricSurge || s.type == FailureType::MetricDrop ||
         s.type == FailureType::Combined;
}

bool scenario_hits_logs(const FailureScenario& s) {
  return s.type == FailureType::ErrorLogBurst || s.type == FailureType::Combined;
}

bool scenario_hits_traces(const FailureScenario& s) {
  return s.type == FailureType::RtSpike || s.type == FailureType::Combined;
}

bool active_at(const FailureScenario& s, int minute) {
  return minute >= s.start_minute && minute < s.start_minute + s.duration_minutes;
}

void validate(const GeneratorConfig& cfg) {
  if (cfg.instance_ids.empty()) throw UsageError("generator: no instances configured");
  if (cfg.duration_minutes < 1) throw UsageError("generator: duration_minutes must be >= 1");
  if (cfg.calls.empty()) throw UsageError("generator: call topology is empty");
  if (cfg.start_epoch < 0) throw UsageError("generator: start_epoch must be >= 0");
  std::set<std::string> known(cfg.instance_ids.begin(), cfg.instance_ids.end());
  std::set<std::string> callees;
  for (const auto& [caller, callee] : cfg.calls) {
    (void)caller;
    if (!known.count(callee)) throw UsageError("generator: call callee \"" + callee +
                                               "\" is not a configured instance");
    callees.insert(callee);
  }
  for (const auto& s : cfg.failures) {
    if (!known.count(s.instance_id))
      throw UsageError("generator: failure instance \"" + s.instance_id + "\" unknown");
    if (s.duration_minutes < 1) throw UsageError("generator: failure duration must be >= 1");
    if (s.start_minute < 0 || s.start_minute + s.duration_minutes > cfg.duration_minutes)
      throw UsageError("generator: failure window [" + std::to_string(s.start_minute) + ", " +
                       std::to_string(s.start_minute + s.duration_minutes) +
                       ") lies outside the configured duration");
    if (scenario_hits_metric(s)) {
      if (cfg.metrics_per_instance < 1)
        throw UsageError("generator: metric scenario but metrics_per_instance is 0");
      if (s.metric_index < 0 || s.metric_index >= cfg.metrics_per_instance)
        throw UsageError("generator: metric_index out of range");
    }
    if (scenario_hits_traces(s) && !callees.count(s.instance_id))
      throw UsageError("generator: rt_spike needs \"" + s.instance_id +
                       "\" to be a callee in the topology");
  }
}

const char* kMetricVocab[] = {"cpu_pct", "mem_pct", "net_tx_kbps", "disk_io_ops",
                              "qps",     "rt_ms",   "net_rx_kbps", "open_fds"};

std::string metric_name(int index) {
  const int n = static_cast<int>(std::size(kMetricVocab));
  std::string name = kMetricVocab[index % n];
  if (index >= n) name += "_" + std::to_string(index / n);
  return name;
}

std::string fill_slots(const std::string& tmpl, Rng& rng) {
  std::string out;
  out.reserve(tmpl.size() + 8);
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out += std::to_string(rng.uniform_index(1000));
      ++i;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

}  // namespace

Dataset generate_synthetic(const GeneratorConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Dataset ds;
  ds.instance_ids = cfg.instance_ids;

  // Metrics: daily sinusoid plus Gaussian noise; surge/drop shifts the mean.
  for (const auto& iid : cfg.instance_ids) {
    for (int m = 0; m < cfg.metrics_per_instance; ++m) {
      const std::string name = metric_name(m);
      Rng rng(derive_seed(seed, "metric/" + iid + "/" + name));
      const double base = rng.uniform(20.0, 80.0);
      const double amp = rng.uniform(5.0, 15.0);
      const double sigma = rng.uniform(1.5, 3.5);
      const double phase = rng.uniform(0.0, 1440.0);
      for (int t = 0; t < cfg.duration_minutes; ++t) {
        double v = base + amp * std::sin(2.0 * M_PI * (t + phase) / 1440.0) +
                   sigma * rng.normal();
        for (const auto& s : cfg.failures) {
          if (!scenario_hits_metric(s) || s.instance_id != iid || s.metric_index != m) continue;
          if (!active_at(s, t)) continue;
          const double dir = (s.type == FailureType::MetricDrop) ? -1.0 : 1.0;
          v += dir * cfg.surge_sigmas * sigma;
        }
        ds.metrics.push_back({iid, name, cfg.start_epoch + 60LL * t, v});
      }
    }
  }

  // Logs: one Poisson stream per (instance, template); the error template
  // rate is multiplied during bursts with at least one line per minute.
  for (const auto& iid : cfg.instance_ids) {
    const int n_templates = static_cast<int>(cfg.log_templates.size());
    for (int k = 0; k <= n_templates; ++k) {
      const bool is_error = (k == n_templates);
      const std::string& tmpl = is_error ? cfg.error_template : cfg.log_templates[k];
      if (tmpl.empty()) continue;
      Rng rng(derive_seed(seed, "log/" + iid + "/" + std::to_string(k)));
      for (int t = 0; t < cfg.duration_minutes; ++t) {
        double lambda = is_error ? cfg.error_rate_per_min : cfg.log_rate_per_min;
        bool burst = false;
        if (is_error) {
          for (const auto& s : cfg.failures) {
            if (scenario_hits_logs(s) && s.instance_id == iid && active_at(s, t)) burst = true;
          }
          if (burst) lambda *= cfg.burst_factor;
        }
        int n = rng.poisson(lambda);
        if (burst && n < 1) n = 1;
        for (int i = 0; i < n; ++i) {
          const std::int64_t ts =
              cfg.start_epoch + 60LL * t + static_cast<std::int64_t>(rng.uniform_index(60));
          ds.logs.push_back({iid, ts, fill_slots(tmpl, rng)});
        }
      }
    }
  }

  // Traces: one stream per call edge; spans belong to the callee. Duration
  // noise is clamped so an injected spike always clears 10x the normal median.
  int edge_index = 0;
  for (const auto& [caller, callee] : cfg.calls) {
    Rng rng(derive_seed(seed, "trace/" + caller + "->" + callee));
    const double base_rt = rng.uniform(20.0, 200.0);
    const std::string edge_tag = std::to_string(edge_index++);
    for (int t = 0; t < cfg.duration_minutes; ++t) {
      bool spike = false;
      for (const auto& s : cfg.failures) {
        if (scenario_hits_traces(s) && s.instance_id == callee && active_at(s, t)) spike = true;
      }
      int n = rng.poisson(cfg.call_rate_per_min);
      if (spike && n < 1) n = 1;
      for (int i = 0; i < n; ++i) {
        Span sp;
        sp.trace_id = "t-" + edge_tag + "-" + std::to_string(t) + "-" + std::to_string(i);
        sp.span_id = "s-" + edge_tag + "-" + std::to_string(t) + "-" + std::to_string(i);
        sp.instance_id = callee;
        sp.start_ts = (cfg.start_epoch + 60LL * t) * 1000 +
                      static_cast<std::int64_t>(rng.uniform_index(60000));
        const double z = std::clamp(rng.normal(), -3.5, 3.5);
        sp.duration_ms = base_rt * std::exp(0.1 * z);
        double err_p = cfg.error_status_rate;
        if (spike) {
          sp.duration_ms *= cfg.spike_factor;
          err_p = 0.3;
        }
        sp.status_code = (rng.uniform() < err_p) ? 1 : 0;
        ds.spans.push_back(std::move(sp));
      }
    }
  }

  for (const auto& s : cfg.failures) {
    FailureLabel l;
    l.instance_id = s.instance_id;
    l.start_ts = cfg.start_epoch + 60LL * s.start_minute;
    l.end_ts = cfg.start_epoch + 60LL * (s.start_minute + s.duration_minutes) - 1;
    l.failure_type = to_string(s.type);
    ds.labels.push_back(std::move(l));
  }

  std::stable_sort(ds.metrics.begin(), ds.metrics.end(),
                   [](const MetricSample& a, const MetricSample& b) {
                     return std::tie(a.instance_id, a.metric_name, a.timestamp) <
                            std::tie(b.instance_id, b.metric_name, b.timestamp);
                   });
  std::stable_sort(ds.logs.begin(), ds.logs.end(),
                   [](const LogEntry& a, const LogEntry& b) { return a.timestamp < b.timestamp; });
  std::stable_sort(ds.spans.begin(), ds.spans.end(),
                   [](const Span& a, const Span& b) { return a.start_ts < b.start_ts; });
  std::stable_sort(ds.labels.begin(), ds.labels.end(),
                   [](const FailureLabel& a, const FailureLabel& b) {
                     return a.start_ts < b.start_ts;
                   });
  return ds;
}

}  // namespace trifuse
