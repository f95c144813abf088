#include "trifuse/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "trifuse/errors.hpp"

namespace trifuse {

InstanceData slice_instance(const Dataset& ds, const std::string& instance_id) {
  InstanceData out;
  out.instance_id = instance_id;
  for (const auto& m : ds.metrics)
    if (m.instance_id == instance_id) out.metrics.push_back(m);
  for (const auto& l : ds.logs)
    if (l.instance_id == instance_id) out.logs.push_back(l);
  for (const auto& s : ds.spans)
    if (s.instance_id == instance_id) out.spans.push_back(s);
  return out;
}

MinuteGrid dataset_grid(const Dataset& ds, int step) {
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = std::numeric_limits<std::int64_t>::min();
  auto feed = [&](std::int64_t minute) {
    lo = std::min(lo, minute);
    hi = std::max(hi, minute);
  };
  for (const auto& m : ds.metrics) feed(m.timestamp / 60);
  for (const auto& l : ds.logs) feed(l.timestamp / 60);
  for (const auto& s : ds.spans) feed(s.start_ts / 60000);
  if (lo > hi) throw DataError("dataset is empty; no grid can be derived");
  MinuteGrid g;
  g.start_minute = lo;
  g.step = step;
  g.length = static_cast<int>((hi - lo) / step) + 1;
  return g;
}

Vector normalize_series(const Vector& series, double stored_norm) {
  if (stored_norm <= 0.0) return Vector::Zero(series.size());
  return series / stored_norm;
}

double l2_prefix_norm(const Vector& series, int prefix_len) {
  const int n = std::min<int>(prefix_len, static_cast<int>(series.size()));
  if (n <= 0) return 0.0;
  return series.head(n).norm();
}

std::vector<DataChannel> metric_channels(const std::vector<MetricSample>& samples,
                                         const MinuteGrid& grid) {
  // group by metric name, preserving name order
  std::vector<std::string> names;
  std::unordered_map<std::string, std::unordered_map<std::int64_t, std::pair<double, int>>> sums;
  for (const auto& s : samples) {
    auto& per_minute = sums[s.metric_name];
    if (per_minute.empty()) names.push_back(s.metric_name);
    auto& [sum, cnt] = per_minute[s.timestamp / 60];
    sum += s.value;
    cnt += 1;
  }
  std::sort(names.begin(), names.end());

  std::vector<DataChannel> out;
  for (const auto& name : names) {
    DataChannel ch;
    ch.name = "metric:" + name;
    ch.modality = Modality::Metric;
    ch.grid_start = grid.start_minute;
    ch.grid_step = grid.step;
    ch.values = Vector::Zero(grid.length);
    const auto& per_minute = sums[name];
    double last = 0.0;
    std::int64_t minute = grid.start_minute;
    for (int k = 0; k < grid.length; ++k) {
      // carry forward across any skipped minutes when step > 1
      for (; minute <= grid.minute_at(k); ++minute) {
        auto it = per_minute.find(minute);
        if (it != per_minute.end()) last = it->second.first / it->second.second;
      }
      ch.values[k] = last;
    }
    out.push_back(std::move(ch));
  }
  return out;
}

namespace {

// Sliding-window sum over per-minute counts: window (minute - theta, minute].
struct WindowCounter {
  explicit WindowCounter(const MinuteGrid& grid)
      : grid(grid), span((grid.length - 1) * static_cast<std::int64_t>(grid.step) + 1),
        counts(static_cast<std::size_t>(span), 0.0) {}

  void add(std::int64_t minute) {
    const std::int64_t off = minute - grid.start_minute;
    if (off >= 0 && off < span) counts[static_cast<std::size_t>(off)] += 1.0;
  }

  Vector window_sums(int theta) const {
    std::vector<double> prefix(static_cast<std::size_t>(span) + 1, 0.0);
    for (std::int64_t i = 0; i < span; ++i)
      prefix[static_cast<std::size_t>(i) + 1] = prefix[static_cast<std::size_t>(i)] + counts[static_cast<std::size_t>(i)];
    Vector out(grid.length);
    for (int k = 0; k < grid.length; ++k) {
      const std::int64_t end = static_cast<std::int64_t>(k) * grid.step;  // inclusive offset
      const std::int64_t begin = std::max<std::int64_t>(0, end - theta + 1);
      out[k] = prefix[static_cast<std::size_t>(end) + 1] - prefix[static_cast<std::size_t>(begin)];
    }
    return out;
  }

  MinuteGrid grid;
  std::int64_t span;
  std::vector<double> counts;
};

DataChannel make_channel(std::string name, Modality mod, const MinuteGrid& grid, Vector values) {
  DataChannel ch;
  ch.name = std::move(name);
  ch.modality = mod;
  ch.grid_start = grid.start_minute;
  ch.grid_step = grid.step;
  ch.values = std::move(values);
  return ch;
}

}  // namespace

std::vector<DataChannel> serialize_logs(const std::vector<LogEntry>& entries, DrainParser& parser,
                                        const std::vector<TemplateCluster>& clusters,
                                        const EmbedderConfig& embedder, const MinuteGrid& grid,
                                        int theta) {
  const int n_clusters = static_cast<int>(clusters.size());
  std::unordered_map<int, int> cluster_of;
  for (const auto& c : clusters)
    for (int tid : c.member_template_ids) cluster_of[tid] = c.cluster_id;

  std::vector<WindowCounter> per_cluster(static_cast<std::size_t>(n_clusters), WindowCounter(grid));
  WindowCounter total(grid);

  for (const auto& e : entries) {
    const int tid = parser.parse(e.raw_text);
    const std::int64_t minute = e.timestamp / 60;
    total.add(minute);
    if (n_clusters == 0) continue;
    auto it = cluster_of.find(tid);
    if (it == cluster_of.end()) {
      // template unseen at fit time: nearest centroid, remembered for reuse
      const int cid = assign_template(embed_template(parser.template_by_id(tid), embedder), clusters);
      it = cluster_of.emplace(tid, cid).first;
    }
    per_cluster[static_cast<std::size_t>(it->second)].add(minute);
  }

  std::vector<DataChannel> out;
  for (int c = 0; c < n_clusters; ++c) {
    out.push_back(make_channel("log:cluster_" + std::to_string(c), Modality::Log, grid,
                               per_cluster[static_cast<std::size_t>(c)].window_sums(theta)));
  }
  out.push_back(make_channel("log:total", Modality::Log, grid, total.window_sums(theta)));
  return out;
}

std::vector<DataChannel> serialize_traces(const std::vector<Span>& spans, const MinuteGrid& grid,
                                          int theta, bool with_status) {
  Vector mean = Vector::Zero(grid.length);
  Vector median = Vector::Zero(grid.length);
  Vector range = Vector::Zero(grid.length);
  Vector stddev = Vector::Zero(grid.length);
  Vector status = Vector::Zero(grid.length);

  // spans are sorted by start_ts; advance [lo, hi) over the window per point
  std::size_t lo = 0, hi = 0;
  std::vector<double> window;
  for (int k = 0; k < grid.length; ++k) {
    const std::int64_t end_minute = grid.minute_at(k);
    const std::int64_t begin_minute = end_minute - theta + 1;
    while (hi < spans.size() && spans[hi].start_ts / 60000 <= end_minute) ++hi;
    while (lo < hi && spans[lo].start_ts / 60000 < begin_minute) ++lo;
    if (lo == hi) continue;

    window.clear();
    int errors = 0;
    double sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      window.push_back(spans[i].duration_ms);
      sum += spans[i].duration_ms;
      if (spans[i].status_code && *spans[i].status_code != 0) ++errors;
    }
    const double n = static_cast<double>(window.size());
    const double mu = sum / n;
    double sq = 0.0;
    for (double d : window) sq += (d - mu) * (d - mu);
    std::sort(window.begin(), window.end());
    const std::size_t m = window.size();
    const double med = (m % 2 == 1) ? window[m / 2] : 0.5 * (window[m / 2 - 1] + window[m / 2]);

    mean[k] = mu;
    median[k] = med;
    range[k] = window.back() - window.front();
    stddev[k] = std::sqrt(sq / n);
    status[k] = errors;
  }

  std::vector<DataChannel> out;
  out.push_back(make_channel("trace:rt_mean", Modality::Trace, grid, std::move(mean)));
  out.push_back(make_channel("trace:rt_median", Modality::Trace, grid, std::move(median)));
  out.push_back(make_channel("trace:rt_range", Modality::Trace, grid, std::move(range)));
  out.push_back(make_channel("trace:rt_std", Modality::Trace, grid, std::move(stddev)));
  if (with_status)
    out.push_back(make_channel("trace:status_errors", Modality::Trace, grid, std::move(status)));
  return out;
}

AlignedChannels align_clocks(const std::vector<DataChannel>& channels) {
  if (channels.empty()) throw DataError("align_clocks: no channels");
  const int step = channels.front().grid_step;
  std::int64_t start = std::numeric_limits<std::int64_t>::min();
  std::int64_t last = std::numeric_limits<std::int64_t>::max();
  for (const auto& ch : channels) {
    if (ch.grid_step != step) throw DataError("align_clocks: mixed grid steps");
    if (ch.values.size() == 0) throw DataError("align_clocks: empty channel " + ch.name);
    start = std::max(start, ch.grid_start);
    last = std::min(last, ch.grid_start + static_cast<std::int64_t>(ch.values.size() - 1) * step);
    if ((ch.grid_start - channels.front().grid_start) % step != 0)
      throw DataError("align_clocks: grids of " + ch.name + " are phase-shifted");
  }
  if (start > last) throw DataError("align_clocks: channel grids do not overlap");

  const int tau = static_cast<int>((last - start) / step) + 1;
  AlignedChannels out;
  out.grid = {start, tau, step};
  out.values.resize(static_cast<Eigen::Index>(channels.size()), tau);
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const auto& ch = channels[i];
    const auto offset = static_cast<Eigen::Index>((start - ch.grid_start) / step);
    out.values.row(static_cast<Eigen::Index>(i)) = ch.values.segment(offset, tau).transpose();
    out.names.push_back(ch.name);
    out.modalities.push_back(ch.modality);
  }
  return out;
}

namespace {

std::vector<DataChannel> build_raw_channels(const InstanceData& data, const SerializerConfig& cfg,
                                            DrainParser& parser,
                                            const std::vector<TemplateCluster>& clusters,
                                            const MinuteGrid& grid, bool has_status) {
  std::vector<DataChannel> channels;
  if (cfg.use_metrics) {
    auto mc = metric_channels(data.metrics, grid);
    channels.insert(channels.end(), std::make_move_iterator(mc.begin()),
                    std::make_move_iterator(mc.end()));
  }
  if (cfg.use_logs) {
    auto lc = serialize_logs(data.logs, parser, clusters, cfg.embedder, grid, cfg.theta);
    channels.insert(channels.end(), std::make_move_iterator(lc.begin()),
                    std::make_move_iterator(lc.end()));
  }
  if (cfg.use_traces) {
    auto tc = serialize_traces(data.spans, grid, cfg.theta, has_status);
    channels.insert(channels.end(), std::make_move_iterator(tc.begin()),
                    std::make_move_iterator(tc.end()));
  }
  return channels;
}

}  // namespace

SerializerState fit_serializer(const InstanceData& data, const SerializerConfig& cfg,
                               const MinuteGrid& grid, int train_points) {
  if (train_points < 1 || train_points > grid.length)
    throw UsageError("fit_serializer: train_points out of range");
  if (cfg.theta < 1 || cfg.delta < 1) throw UsageError("fit_serializer: theta/delta must be >= 1");
  if (!cfg.use_metrics && !cfg.use_logs && !cfg.use_traces)
    throw UsageError("fit_serializer: all modalities disabled");

  SerializerState st;
  st.config = cfg;
  st.instance_id = data.instance_id;
  st.parser = DrainParser(cfg.drain);
  st.grid = grid;
  st.train_points = train_points;
  for (const auto& s : data.spans) {
    if (s.status_code) {
      st.has_status = true;
      break;
    }
  }

  // Templates and clusters come from the training split only.
  if (cfg.use_logs) {
    const std::int64_t train_last_minute = grid.minute_at(train_points - 1);
    for (const auto& e : data.logs) {
      if (e.timestamp / 60 > train_last_minute) break;
      st.parser.parse(e.raw_text);
    }
    const auto& templates = st.parser.templates();
    if (!templates.empty()) {
      std::vector<Vector> vectors;
      std::vector<int> ids;
      for (const auto& t : templates) {
        vectors.push_back(embed_template(t, cfg.embedder));
        ids.push_back(t.template_id);
      }
      st.clusters = cluster_templates(vectors, ids, cfg.dbscan_eps, cfg.dbscan_min_pts);
    }
  }

  // Channel layout and training-split norms from a full raw pass.
  DrainParser working = st.parser;
  const auto raw = build_raw_channels(data, cfg, working, st.clusters, grid, st.has_status);
  const auto aligned = align_clocks(raw);
  for (std::size_t i = 0; i < aligned.names.size(); ++i) {
    st.channel_names.push_back(aligned.names[i]);
    st.channel_modalities.push_back(aligned.modalities[i]);
    st.norms[aligned.names[i]] =
        l2_prefix_norm(aligned.values.row(static_cast<Eigen::Index>(i)).transpose(), train_points);
  }
  return st;
}

AlignedChannels serialize_instance(const InstanceData& data, const SerializerState& state) {
  DrainParser working = state.parser;  // online templates grow a private copy
  auto raw = build_raw_channels(data, state.config, working, state.clusters, state.grid,
                                state.has_status);
  AlignedChannels aligned = align_clocks(raw);
  if (aligned.names != state.channel_names)
    throw DataError("serialize_instance: channel layout differs from the fitted state");
  for (Eigen::Index i = 0; i < aligned.values.rows(); ++i) {
    const double norm = state.norms.at(aligned.names[static_cast<std::size_t>(i)]);
    aligned.values.row(i) =
        normalize_series(aligned.values.row(i).transpose(), norm).transpose();
  }
  return aligned;
}

// --- persistence -------------------------------------------------------------

Json SerializerState::to_json() const {
  Json j;
  j["format_version"] = 1;
  j["instance_id"] = instance_id;
  j["config"] = Json{{"theta", config.theta},
                     {"delta", config.delta},
                     {"drain", Json{{"depth", config.drain.depth},
                                    {"similarity", config.drain.similarity},
                                    {"max_children", config.drain.max_children}}},
                     {"dbscan", Json{{"eps", config.dbscan_eps}, {"min_pts", config.dbscan_min_pts}}},
                     {"embedder", Json{{"dim", config.embedder.dim},
                                       {"hash_seed", config.embedder.hash_seed}}},
                     {"use_metrics", config.use_metrics},
                     {"use_logs", config.use_logs},
                     {"use_traces", config.use_traces}};
  j["parser"] = parser.to_json();
  Json cl = Json::array();
  for (const auto& c : clusters) {
    cl.push_back(Json{{"id", c.cluster_id},
                      {"centroid", std::vector<double>(c.centroid.data(),
                                                       c.centroid.data() + c.centroid.size())},
                      {"members", c.member_template_ids}});
  }
  j["clusters"] = std::move(cl);
  Json chans = Json::array();
  for (std::size_t i = 0; i < channel_names.size(); ++i) {
    chans.push_back(Json{{"name", channel_names[i]},
                         {"modality", to_string(channel_modalities[i])}});
  }
  j["channels"] = std::move(chans);
  j["norms"] = norms;
  j["grid"] = Json{{"start_minute", grid.start_minute}, {"length", grid.length}, {"step", grid.step}};
  j["train_points"] = train_points;
  j["has_status"] = has_status;
  return j;
}

SerializerState SerializerState::from_json(const Json& j) {
  if (j.at("format_version").get<int>() > 1)
    throw DataError("serializer state: format version newer than this build supports");
  SerializerState st;
  st.instance_id = j.at("instance_id").get<std::string>();
  const auto& c = j.at("config");
  st.config.theta = c.at("theta").get<int>();
  st.config.delta = c.at("delta").get<int>();
  st.config.drain.depth = c.at("drain").at("depth").get<int>();
  st.config.drain.similarity = c.at("drain").at("similarity").get<double>();
  st.config.drain.max_children = c.at("drain").at("max_children").get<int>();
  st.config.dbscan_eps = c.at("dbscan").at("eps").get<double>();
  st.config.dbscan_min_pts = c.at("dbscan").at("min_pts").get<int>();
  st.config.embedder.dim = c.at("embedder").at("dim").get<int>();
  st.config.embedder.hash_seed = c.at("embedder").at("hash_seed").get<std::uint64_t>();
  st.config.use_metrics = c.at("use_metrics").get<bool>();
  st.config.use_logs = c.at("use_logs").get<bool>();
  st.config.use_traces = c.at("use_traces").get<bool>();
  st.parser = DrainParser::from_json(j.at("parser"));
  for (const auto& cj : j.at("clusters")) {
    TemplateCluster tc;
    tc.cluster_id = cj.at("id").get<int>();
    const auto data = cj.at("centroid").get<std::vector<double>>();
    tc.centroid = Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
    tc.member_template_ids = cj.at("members").get<std::vector<int>>();
    st.clusters.push_back(std::move(tc));
  }
  for (const auto& ch : j.at("channels")) {
    st.channel_names.push_back(ch.at("name").get<std::string>());
    const auto mod = ch.at("modality").get<std::string>();
    st.channel_modalities.push_back(mod == "metric" ? Modality::Metric
                                    : mod == "log"  ? Modality::Log
                                                    : Modality::Trace);
  }
  st.norms = j.at("norms").get<std::map<std::string, double>>();
  st.grid.start_minute = j.at("grid").at("start_minute").get<std::int64_t>();
  st.grid.length = j.at("grid").at("length").get<int>();
  st.grid.step = j.at("grid").at("step").get<int>();
  st.train_points = j.at("train_points").get<int>();
  st.has_status = j.at("has_status").get<bool>();
  return st;
}

}  // namespace trifuse
