#include "trifuse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "trifuse/rng.hpp"

namespace trifuse {

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw UsageError(std::string("pipeline config: ") + e.what());
  }
  check_keys(j,
             {"dataset_dir", "artifacts_dir", "out_dir", "seed", "split_fraction",
              "calibration_fraction", "theta", "delta", "bins", "q", "t0_percentile", "modalities", "drain",
              "dbscan", "embedder", "train", "train_window_stride", "jobs"},
             "pipeline config");
  PipelineConfig c;
  if (j.contains("dataset_dir")) c.dataset_dir = j.at("dataset_dir").get<std::string>();
  if (j.contains("artifacts_dir")) c.artifacts_dir = j.at("artifacts_dir").get<std::string>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  c.seed = j.value("seed", c.seed);
  c.split_fraction = j.value("split_fraction", c.split_fraction);
  c.calibration_fraction = j.value("calibration_fraction", c.calibration_fraction);
  c.theta = j.value("theta", c.theta);
  c.delta = j.value("delta", c.delta);
  c.bins = j.value("bins", c.bins);
  c.q = j.value("q", c.q);
  c.t0_percentile = j.value("t0_percentile", c.t0_percentile);
  if (j.contains("modalities")) {
    c.use_metrics = c.use_logs = c.use_traces = false;
    for (const auto& m : j.at("modalities")) {
      const auto s = m.get<std::string>();
      if (s == "metric")
        c.use_metrics = true;
      else if (s == "log")
        c.use_logs = true;
      else if (s == "trace")
        c.use_traces = true;
      else
        throw UsageError("pipeline config: unknown modality \"" + s + "\"");
    }
  }
  if (j.contains("drain")) {
    const auto& d = j.at("drain");
    check_keys(d, {"depth", "similarity", "max_children"}, "drain config");
    c.drain.depth = d.value("depth", c.drain.depth);
    c.drain.similarity = d.value("similarity", c.drain.similarity);
    c.drain.max_children = d.value("max_children", c.drain.max_children);
  }
  if (j.contains("dbscan")) {
    const auto& d = j.at("dbscan");
    check_keys(d, {"eps", "min_pts"}, "dbscan config");
    c.dbscan_eps = d.value("eps", c.dbscan_eps);
    c.dbscan_min_pts = d.value("min_pts", c.dbscan_min_pts);
  }
  if (j.contains("embedder")) {
    const auto& d = j.at("embedder");
    check_keys(d, {"dim", "hash_seed"}, "embedder config");
    c.embedder.dim = d.value("dim", c.embedder.dim);
    c.embedder.hash_seed = d.value("hash_seed", c.embedder.hash_seed);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t,
               {"learning_rate", "epochs", "gt_layers", "heads", "hidden", "batch_size",
                "feature_dim", "head_dim"},
               "train config");
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.gt_layers = t.value("gt_layers", c.train.gt_layers);
    c.train.heads = t.value("heads", c.train.heads);
    c.train.hidden = t.value("hidden", c.train.hidden);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.feature_dim = t.value("feature_dim", c.train.feature_dim);
    c.train.head_dim = t.value("head_dim", c.train.head_dim);
  }
  c.train_window_stride = j.value("train_window_stride", c.train_window_stride);
  c.jobs = j.value("jobs", c.jobs);

  if (c.split_fraction <= 0.0 || c.split_fraction >= 1.0)
    throw UsageError("pipeline config: split_fraction must lie in (0, 1)");
  if (c.calibration_fraction <= 0.0 || c.calibration_fraction >= 1.0)
    throw UsageError("pipeline config: calibration_fraction must lie in (0, 1)");
  if (c.theta < 2) throw UsageError("pipeline config: theta must be >= 2");
  if (c.delta < 1) throw UsageError("pipeline config: delta must be >= 1");
  if (c.bins < 2) throw UsageError("pipeline config: bins must be >= 2");
  if (c.q <= 0.0 || c.q > 0.1) throw UsageError("pipeline config: q must lie in (0, 0.1]");
  if (c.t0_percentile < 50.0 || c.t0_percentile >= 100.0)
    throw UsageError("pipeline config: t0_percentile must lie in [50, 100)");
  if (c.train_window_stride < 1)
    throw UsageError("pipeline config: train_window_stride must be >= 1");
  if (c.train.epochs < 0 || c.train.learning_rate <= 0.0 || c.train.batch_size < 1 ||
      c.train.gt_layers < 1 || c.train.heads < 1 || c.train.hidden < 1 ||
      c.train.feature_dim < 1 || c.train.head_dim < 1)
    throw UsageError("pipeline config: invalid train section");
  return c;
}

PipelineConfig PipelineConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

Json PipelineConfig::to_json() const {
  Json modalities = Json::array();
  if (use_metrics) modalities.push_back("metric");
  if (use_logs) modalities.push_back("log");
  if (use_traces) modalities.push_back("trace");
  return Json{
      {"dataset_dir", dataset_dir.string()},
      {"artifacts_dir", artifacts_dir.string()},
      {"out_dir", out_dir.string()},
      {"seed", seed},
      {"split_fraction", split_fraction},
      {"calibration_fraction", calibration_fraction},
      {"theta", theta},
      {"delta", delta},
      {"bins", bins},
      {"q", q},
      {"t0_percentile", t0_percentile},
      {"modalities", modalities},
      {"drain", Json{{"depth", drain.depth},
                     {"similarity", drain.similarity},
                     {"max_children", drain.max_children}}},
      {"dbscan", Json{{"eps", dbscan_eps}, {"min_pts", dbscan_min_pts}}},
      {"embedder", Json{{"dim", embedder.dim}, {"hash_seed", embedder.hash_seed}}},
      {"train", Json{{"learning_rate", train.learning_rate},
                     {"epochs", train.epochs},
                     {"gt_layers", train.gt_layers},
                     {"heads", train.heads},
                     {"hidden", train.hidden},
                     {"batch_size", train.batch_size},
                     {"feature_dim", train.feature_dim},
                     {"head_dim", train.head_dim}}},
      {"train_window_stride", train_window_stride},
      {"jobs", jobs}};
}

std::string PipelineConfig::config_hash() const {
  Json j = to_json();
  j.erase("dataset_dir");
  j.erase("artifacts_dir");
  j.erase("out_dir");
  j.erase("q");
  j.erase("jobs");
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

SerializerConfig PipelineConfig::serializer_config() const {
  SerializerConfig sc;
  sc.theta = theta;
  sc.delta = delta;
  sc.drain = drain;
  sc.dbscan_eps = dbscan_eps;
  sc.dbscan_min_pts = dbscan_min_pts;
  sc.embedder = embedder;
  sc.use_metrics = use_metrics;
  sc.use_logs = use_logs;
  sc.use_traces = use_traces;
  return sc;
}

namespace {

template <typename Fn>
auto staged(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    throw UsageError(std::string(stage) + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(std::string(stage) + ": " + e.what());
  } catch (const InternalError& e) {
    throw InternalError(std::string(stage) + ": " + e.what());
  }
}

int train_point_count(const PipelineConfig& cfg, const MinuteGrid& grid) {
  const int tp = static_cast<int>(cfg.split_fraction * grid.length);
  if (tp < 2 || tp >= grid.length)
    throw DataError("training split is degenerate (grid length " +
                    std::to_string(grid.length) + ")");
  return tp;
}

}  // namespace

InstanceArtifacts fit_instance(const Dataset& ds, const std::string& instance_id,
                               const PipelineConfig& cfg, const MinuteGrid& grid) {
  InstanceArtifacts art;
  art.instance_id = instance_id;
  const InstanceData data = slice_instance(ds, instance_id);
  const int train_points = train_point_count(cfg, grid);

  art.serializer = staged("fit-serializer", [&] {
    return fit_serializer(data, cfg.serializer_config(), grid, train_points);
  });

  const AlignedChannels channels =
      staged("serialize", [&] { return serialize_instance(data, art.serializer); });
  const auto n = channels.values.rows();
  if (n < 2)
    throw DataError("serialize: instance " + instance_id + " yields fewer than 2 channels");

  art.adjacency = staged("build-adjacency", [&] {
    return build_adjacency(channels.values.leftCols(train_points), channels.names,
                           channels.modalities, cfg.bins);
  });

  // Gradient windows come from the front of the training split; the rear
  // calibration span never contributes gradient updates.
  const int calib_points = std::max(1, static_cast<int>(cfg.calibration_fraction * train_points));
  const int grad_end = train_points - calib_points;
  if (grad_end < cfg.theta)
    throw DataError("train: gradient span too short for theta=" + std::to_string(cfg.theta));

  TrainResult trained = staged("train", [&] {
    std::vector<GraphStream> windows;
    for (int t = cfg.theta - 1; t < grad_end; t += cfg.train_window_stride)
      windows.push_back(build_stream(channels.values, art.adjacency, t, cfg.theta));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train/" + instance_id);
    return train(windows, tc);
  });
  art.model = std::move(trained.state);
  art.loss_history = std::move(trained.epoch_loss);

  // Scoring compares the prediction with the observed last snapshot (the raw
  // serialized channel values), so an anomaly in one channel cannot hide
  // behind the attention mixing that shapes the training target.
  art.scores = staged("calibrate", [&] {
    std::vector<Vector> errors;
    for (int t = std::max(grad_end, cfg.theta - 1); t < train_points; ++t) {
      const GraphStream stream = build_stream(channels.values, art.adjacency, t, cfg.theta);
      const ForwardResult fr = forward(stream, art.model);
      errors.push_back(channel_errors(fr.prediction, stream.snapshots.col(cfg.theta - 1)));
    }
    return calibrate(errors, channels.names, cfg.q, cfg.t0_percentile);
  });
  return art;
}

namespace {

// Fan work out over instances; exceptions are re-thrown on the caller thread.
template <typename Fn>
void parallel_over_instances(std::size_t count, int jobs, Fn&& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers =
      std::min<std::size_t>(count, jobs > 0 ? static_cast<std::size_t>(jobs) : hw);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) break;
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

PipelineArtifacts fit_all(const Dataset& ds, const PipelineConfig& cfg) {
  if (ds.instance_ids.empty()) throw DataError("dataset has no instances");
  const MinuteGrid grid = dataset_grid(ds, cfg.delta);
  PipelineArtifacts out;
  out.config_hash = cfg.config_hash();
  out.instances.resize(ds.instance_ids.size());
  parallel_over_instances(ds.instance_ids.size(), cfg.jobs, [&](std::size_t i) {
    out.instances[i] = fit_instance(ds, ds.instance_ids[i], cfg, grid);
  });
  return out;
}

std::vector<FailureVerdict> detect_instance(const Dataset& ds, const InstanceArtifacts& art,
                                            const PipelineConfig& cfg,
                                            double* mean_window_seconds) {
  const InstanceData data = slice_instance(ds, art.instance_id);
  const AlignedChannels channels = serialize_instance(data, art.serializer);
  const auto& grid = art.serializer.grid;
  const int train_points = art.serializer.train_points;
  const double threshold = (cfg.q == art.scores.q) ? art.scores.pot.threshold
                                                   : evt_threshold(art.scores, cfg.q);

  std::vector<FailureVerdict> verdicts;
  double elapsed = 0.0;
  int windows = 0;
  for (int t = std::max(train_points, cfg.theta - 1); t < grid.length; ++t) {
    const auto t_start = std::chrono::steady_clock::now();
    const GraphStream stream = build_stream(channels.values, art.adjacency, t, cfg.theta);
    const ForwardResult fr = forward(stream, art.model);
    const Vector errors = channel_errors(fr.prediction, stream.snapshots.col(cfg.theta - 1));
    const Vector norm = normalized_errors(errors, art.scores);

    FailureVerdict v;
    v.timestamp = grid.minute_at(t) * 60;
    v.score = norm.maxCoeff();
    v.threshold = threshold;
    v.is_failure = v.score > v.threshold;

    std::vector<int> idx(static_cast<std::size_t>(norm.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return norm[a] > norm[b]; });
    const int top = std::min<int>(5, static_cast<int>(idx.size()));
    for (int r = 0; r < top; ++r)
      v.top_channels.emplace_back(channels.names[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])],
                                  norm[idx[static_cast<std::size_t>(r)]]);
    verdicts.push_back(std::move(v));

    elapsed += std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    ++windows;
  }
  if (mean_window_seconds) *mean_window_seconds = windows > 0 ? elapsed / windows : 0.0;
  return verdicts;
}

std::map<std::string, std::vector<FailureVerdict>> detect_all(const Dataset& ds,
                                                              const PipelineArtifacts& artifacts,
                                                              const PipelineConfig& cfg,
                                                              double* mean_window_seconds) {
  std::vector<std::vector<FailureVerdict>> results(artifacts.instances.size());
  std::vector<double> timings(artifacts.instances.size(), 0.0);
  parallel_over_instances(artifacts.instances.size(), cfg.jobs, [&](std::size_t i) {
    results[i] = detect_instance(ds, artifacts.instances[i], cfg, &timings[i]);
  });
  std::map<std::string, std::vector<FailureVerdict>> out;
  double sum = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    sum += timings[i];
    out[artifacts.instances[i].instance_id] = std::move(results[i]);
  }
  if (mean_window_seconds)
    *mean_window_seconds = artifacts.instances.empty() ? 0.0 : sum / artifacts.instances.size();
  return out;
}

EvalReport evaluate_all(const std::map<std::string, std::vector<FailureVerdict>>& verdicts,
                        const std::vector<FailureLabel>& labels) {
  int tp = 0, fp = 0, fn = 0;
  for (const auto& [iid, vs] : verdicts) {
    std::vector<FailureLabel> mine;
    for (const auto& l : labels)
      if (l.instance_id == iid) mine.push_back(l);
    const EvalReport r = evaluate(vs, mine);
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
  }
  // labels for instances that produced no verdicts are misses
  for (const auto& l : labels) {
    if (!verdicts.count(l.instance_id)) ++fn;
  }
  return report_from_counts(tp, fp, fn);
}

// --- artifact persistence -----------------------------------------------------

namespace {

Json artifact_header(const PipelineArtifacts& a) {
  return Json{{"format_version", 1}, {"config_hash", a.config_hash}};
}

void check_artifact(const Json& j, const std::string& expected_hash,
                    const std::string& what) {
  if (j.at("format_version").get<int>() > 1)
    throw DataError(what + ": format version newer than this build supports");
  const auto h = j.at("config_hash").get<std::string>();
  if (h != expected_hash)
    throw DataError(what + ": config hash " + h + " does not match current config " +
                    expected_hash + "; retrain or fix the config");
}

}  // namespace

void save_artifacts(const PipelineArtifacts& artifacts, const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.artifacts_dir);

  Json ser = artifact_header(artifacts);
  Json adj = artifact_header(artifacts);
  Json mdl = artifact_header(artifacts);
  Json sco = artifact_header(artifacts);
  Json ser_i = Json::object(), adj_i = Json::object(), mdl_i = Json::object(),
       sco_i = Json::object();
  for (const auto& a : artifacts.instances) {
    ser_i[a.instance_id] = a.serializer.to_json();
    adj_i[a.instance_id] = a.adjacency.to_json();
    mdl_i[a.instance_id] = a.model.to_json();
    sco_i[a.instance_id] = a.scores.to_json();
  }
  ser["instances"] = std::move(ser_i);
  adj["instances"] = std::move(adj_i);
  mdl["instances"] = std::move(mdl_i);
  sco["instances"] = std::move(sco_i);
  write_json_atomic(cfg.artifacts_dir / "serializer.json", ser);
  write_json_atomic(cfg.artifacts_dir / "adjacency.json", adj);
  write_json_atomic(cfg.artifacts_dir / "model.json", mdl);
  write_json_atomic(cfg.artifacts_dir / "scores.json", sco);

  for (const auto& a : artifacts.instances) {
    std::ostringstream csv;
    csv << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < a.loss_history.size(); ++e)
      csv << (e + 1) << ',' << format_double(a.loss_history[e]) << '\n';
    write_file_atomic(cfg.artifacts_dir / ("loss_history_" + a.instance_id + ".csv"),
                      csv.str());
  }
}

PipelineArtifacts load_artifacts(const PipelineConfig& cfg) {
  const std::string expected = cfg.config_hash();
  const Json ser = read_json_file(cfg.artifacts_dir / "serializer.json");
  const Json adj = read_json_file(cfg.artifacts_dir / "adjacency.json");
  const Json mdl = read_json_file(cfg.artifacts_dir / "model.json");
  const Json sco = read_json_file(cfg.artifacts_dir / "scores.json");
  check_artifact(ser, expected, "serializer.json");
  check_artifact(adj, expected, "adjacency.json");
  check_artifact(mdl, expected, "model.json");
  check_artifact(sco, expected, "scores.json");

  PipelineArtifacts out;
  out.config_hash = expected;
  for (const auto& [iid, sj] : ser.at("instances").items()) {
    InstanceArtifacts a;
    a.instance_id = iid;
    a.serializer = SerializerState::from_json(sj);
    a.adjacency = AdjacencyTensor::from_json(adj.at("instances").at(iid));
    a.model = ModelState::from_json(mdl.at("instances").at(iid));
    a.scores = ScoreState::from_json(sco.at("instances").at(iid));
    out.instances.push_back(std::move(a));
  }
  return out;
}

void save_verdicts(const std::map<std::string, std::vector<FailureVerdict>>& verdicts,
                   const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& [iid, vs] : verdicts) {
    for (const auto& v : vs) {
      Json j = v.to_json();
      j["instance_id"] = iid;
      out << j.dump() << '\n';
    }
  }
  write_file_atomic(path, out.str());
}

std::map<std::string, std::vector<FailureVerdict>> load_verdicts(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::map<std::string, std::vector<FailureVerdict>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const auto iid = j.at("instance_id").get<std::string>();
    out[iid].push_back(FailureVerdict::from_json(j));
  }
  return out;
}

}  // namespace trifuse
