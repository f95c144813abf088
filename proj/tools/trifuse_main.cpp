#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "trifuse/pipeline.hpp"
#include "trifuse/rng.hpp"

namespace {

using namespace trifuse;

int verbosity() {
  const char* env = std::getenv("TRIFUSE_LOG");
  if (!env) return 1;
  const std::string v = env;
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (verbosity() >= 1) std::cerr << msg << '\n';
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> q;
  std::optional<int> theta;
  std::optional<std::string> out;

  void apply(PipelineConfig& cfg) const {
    if (seed) cfg.seed = *seed;
    if (q) cfg.q = *q;
    if (theta) cfg.theta = *theta;
    if (out) cfg.out_dir = *out;
  }
};

void add_overrides(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "override the config seed");
  cmd->add_option("--q", ov.q, "override the EVT risk level");
  cmd->add_option("--theta", ov.theta, "override the window length");
  cmd->add_option("--out", ov.out, "override the output directory");
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed) {
  const GeneratorConfig gc = GeneratorConfig::from_json_file(config_path);
  const Dataset ds = generate_synthetic(gc, seed);
  save_dataset(ds, out_dir);
  Json manifest{{"format_version", 1},
                {"seed", seed},
                {"counts", Json{{"metrics", ds.metrics.size()},
                                {"logs", ds.logs.size()},
                                {"spans", ds.spans.size()},
                                {"labels", ds.labels.size()}}},
                {"instances", ds.instance_ids}};
  write_json_atomic(std::filesystem::path(out_dir) / "manifest.json", manifest);
  info("simulate: wrote " + std::to_string(ds.metrics.size()) + " metrics, " +
       std::to_string(ds.logs.size()) + " logs, " + std::to_string(ds.spans.size()) +
       " spans, " + std::to_string(ds.labels.size()) + " labels to " + out_dir);
  return 0;
}

int cmd_train(const PipelineConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const PipelineArtifacts artifacts = fit_all(ds, cfg);
  save_artifacts(artifacts, cfg);
  for (const auto& a : artifacts.instances) {
    info("train: " + a.instance_id + " n_channels=" +
         std::to_string(a.model.config.n_channels) + " final_loss=" +
         (a.loss_history.empty() ? "n/a" : format_double(a.loss_history.back())));
  }
  info("train: artifacts written to " + cfg.artifacts_dir.string());
  return 0;
}

int cmd_detect(const PipelineConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const PipelineArtifacts artifacts = load_artifacts(cfg);
  double mean_window = 0.0;
  const auto verdicts = detect_all(ds, artifacts, cfg, &mean_window);
  std::filesystem::create_directories(cfg.out_dir);
  save_verdicts(verdicts, cfg.out_dir / "verdicts.jsonl");
  std::size_t total = 0, fired = 0;
  for (const auto& [iid, vs] : verdicts) {
    total += vs.size();
    for (const auto& v : vs) fired += v.is_failure ? 1 : 0;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", mean_window * 1e3);
  std::cout << "detect: " << total << " verdicts (" << fired
            << " firing), mean per-window time " << buf << " ms\n";
  return 0;
}

int cmd_evaluate(const std::string& verdicts_path, const std::string& labels_path,
                 const std::string& out_path) {
  const auto verdicts = load_verdicts(verdicts_path);
  const auto labels = load_labels(labels_path);
  const EvalReport r = evaluate_all(verdicts, labels);
  const Json j = r.to_json();
  if (!out_path.empty()) write_json_atomic(out_path, j);
  std::cout << j.dump(2) << '\n';
  std::printf("%-10s %6d\n%-10s %6d\n%-10s %6d\n", "TP", r.tp, "FP", r.fp, "FN", r.fn);
  std::printf("%-10s %6.4f\n%-10s %6.4f\n%-10s %6.4f\n", "precision", r.precision, "recall",
              r.recall, "f1", r.f1);
  return 0;
}

void dump_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out += format_double(m(r, c));
      out += (c + 1 < m.cols()) ? ',' : '\n';
    }
  }
  write_file_atomic(path, out);
}

int cmd_inspect(const std::string& artifact, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path in(artifact);
  if (!fs::exists(in)) throw DataError("inspect: no such file: " + in.string());
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  if (in.extension() == ".jsonl") {
    // verdict stream -> per-instance score series
    const auto verdicts = load_verdicts(in);
    for (const auto& [iid, vs] : verdicts) {
      std::string csv = "timestamp,score,threshold,is_failure\n";
      for (const auto& v : vs) {
        csv += std::to_string(v.timestamp) + ',' + format_double(v.score) + ',' +
               format_double(v.threshold) + ',' + (v.is_failure ? "1" : "0") + '\n';
      }
      write_file_atomic(out / ("scores_" + iid + ".csv"), csv);
      info("inspect: wrote scores_" + iid + ".csv");
    }
    return 0;
  }

  const Json j = read_json_file(in);
  if (j.contains("instances") && in.filename() == "adjacency.json") {
    for (const auto& [iid, aj] : j.at("instances").items()) {
      const AdjacencyTensor a = AdjacencyTensor::from_json(aj);
      std::string csv = "i,j,k,weight\n";
      for (int i = 0; i < a.n; ++i)
        for (int jj = 0; jj < a.n; ++jj)
          for (int k = 1; k <= kEdgeTypes; ++k)
            csv += std::to_string(i) + ',' + std::to_string(jj) + ',' + std::to_string(k) +
                   ',' + format_double(a.slice(k)(i, jj)) + '\n';
      write_file_atomic(out / ("adjacency_" + iid + ".csv"), csv);
      info("inspect: wrote adjacency_" + iid + ".csv");
    }
    return 0;
  }
  if (j.contains("instances") && in.filename() == "model.json") {
    for (const auto& [iid, mj] : j.at("instances").items()) {
      ModelState st = ModelState::from_json(mj);
      for (auto& [name, tensor] : st.params.named_tensors())
        dump_matrix_csv(*tensor, out / ("model_" + iid + "_" + name + ".csv"));
      info("inspect: wrote parameter CSVs for " + iid);
    }
    return 0;
  }
  if (j.contains("instances") && in.filename() == "scores.json") {
    for (const auto& [iid, sj] : j.at("instances").items()) {
      const ScoreState st = ScoreState::from_json(sj);
      std::string csv = "channel,median,iqr\n";
      for (std::size_t c = 0; c < st.channel_names.size(); ++c)
        csv += st.channel_names[c] + ',' + format_double(st.median[static_cast<Eigen::Index>(c)]) +
               ',' + format_double(st.iqr[static_cast<Eigen::Index>(c)]) + '\n';
      write_file_atomic(out / ("score_state_" + iid + ".csv"), csv);
      std::string cal = "calibration_score\n";
      for (double s : st.calibration_scores) cal += format_double(s) + '\n';
      write_file_atomic(out / ("calibration_scores_" + iid + ".csv"), cal);
      info("inspect: wrote score CSVs for " + iid);
    }
    return 0;
  }
  if (j.contains("instances") && in.filename() == "serializer.json") {
    for (const auto& [iid, sj] : j.at("instances").items()) {
      const SerializerState st = SerializerState::from_json(sj);
      std::string csv = "template_id,template\n";
      for (const auto& t : st.parser.templates()) {
        std::string text;
        for (const auto& tok : t.tokens) {
          if (!text.empty()) text += ' ';
          text += tok;
        }
        csv += std::to_string(t.template_id) + ',' + text + '\n';
      }
      write_file_atomic(out / ("templates_" + iid + ".csv"), csv);
      info("inspect: wrote templates_" + iid + ".csv");
    }
    return 0;
  }
  throw UsageError("inspect: unrecognized artifact " + in.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal instance-failure detection for microservice telemetry"};
  app.require_subcommand(1);

  std::string sim_config, sim_out = "data";
  std::uint64_t sim_seed = 1;
  auto* sim = app.add_subcommand("simulate", "generate a labeled synthetic dataset");
  sim->add_option("--config", sim_config, "generator config JSON")->required();
  sim->add_option("--out", sim_out, "output directory");
  sim->add_option("--seed", sim_seed, "generator seed");

  std::string train_config;
  Overrides train_ov;
  auto* train_cmd = app.add_subcommand("train", "fit serializer, adjacency, model, scores");
  train_cmd->add_option("--config", train_config, "pipeline config JSON")->required();
  add_overrides(train_cmd, train_ov);

  std::string detect_config;
  Overrides detect_ov;
  auto* detect_cmd = app.add_subcommand("detect", "emit verdicts over the test split");
  detect_cmd->add_option("--config", detect_config, "pipeline config JSON")->required();
  add_overrides(detect_cmd, detect_ov);

  std::string eval_verdicts, eval_labels, eval_out;
  auto* eval_cmd = app.add_subcommand("evaluate", "segment-adjusted precision/recall/F1");
  eval_cmd->add_option("--verdicts", eval_verdicts, "verdicts JSONL")->required();
  eval_cmd->add_option("--labels", eval_labels, "labels JSONL")->required();
  eval_cmd->add_option("--out", eval_out, "write the report JSON here");

  std::string inspect_artifact, inspect_out = "inspect";
  auto* inspect_cmd = app.add_subcommand("inspect", "dump artifacts as CSV for plotting");
  inspect_cmd->add_option("--artifact", inspect_artifact, "artifact file")->required();
  inspect_cmd->add_option("--out", inspect_out, "output directory");

  try {
    app.parse(argc, argv);
    if (sim->parsed()) return cmd_simulate(sim_config, sim_out, sim_seed);
    if (train_cmd->parsed()) {
      PipelineConfig cfg = PipelineConfig::from_json_file(train_config);
      train_ov.apply(cfg);
      return cmd_train(cfg);
    }
    if (detect_cmd->parsed()) {
      PipelineConfig cfg = PipelineConfig::from_json_file(detect_config);
      detect_ov.apply(cfg);
      return cmd_detect(cfg);
    }
    if (eval_cmd->parsed()) return cmd_evaluate(eval_verdicts, eval_labels, eval_out);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_artifact, inspect_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const trifuse::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const trifuse::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const trifuse::InternalError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
}
