#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "trifuse/detect.hpp"
#include "trifuse/graph.hpp"
#include "trifuse/model.hpp"
#include "trifuse/serialize.hpp"
#include "trifuse/telemetry.hpp"

namespace trifuse {

struct PipelineConfig {
  std::filesystem::path dataset_dir;
  std::filesystem::path artifacts_dir;
  std::filesystem::path out_dir;

  std::uint64_t seed = 1;
  double split_fraction = 0.6;        // front fraction used for fitting
  double calibration_fraction = 0.2;  // rear share of the training split
  int theta = 60;
  int delta = 1;
  int bins = 10;
  double q = 1e-3;
  double t0_percentile = 98.0;  // POT initial threshold percentile
  bool use_metrics = true;
  bool use_logs = true;
  bool use_traces = true;

  DrainConfig drain;
  double dbscan_eps = 0.5;
  int dbscan_min_pts = 1;
  EmbedderConfig embedder;

  TrainConfig train;
  int train_window_stride = 1;  // gradient windows sampled every k grid steps
  int jobs = 0;                 // worker threads across instances; 0 = auto

  static PipelineConfig from_json_file(const std::filesystem::path& path);
  static PipelineConfig from_json_text(const std::string& text);
  Json to_json() const;

  // Hash of the semantic parameters (paths, q, and jobs excluded); artifacts
  // carry it and detect refuses mismatched ones.
  std::string config_hash() const;

  SerializerConfig serializer_config() const;
};

struct InstanceArtifacts {
  std::string instance_id;
  SerializerState serializer;
  AdjacencyTensor adjacency;
  ModelState model;
  ScoreState scores;
  std::vector<double> loss_history;
};

struct PipelineArtifacts {
  std::vector<InstanceArtifacts> instances;
  std::string config_hash;
};

// Offline stage for one instance: serializer fit, adjacency over the training
// split, model training on the gradient span, score calibration on the
// held-out calibration span.
InstanceArtifacts fit_instance(const Dataset& ds, const std::string& instance_id,
                               const PipelineConfig& cfg, const MinuteGrid& grid);

// All instances, fanned out over a worker pool; per-instance seeds are
// derived from (seed, instance), so results are independent of scheduling.
PipelineArtifacts fit_all(const Dataset& ds, const PipelineConfig& cfg);

// Online stage: one verdict per test-split timestamp with a full window of
// history. Optionally reports the mean per-window wall time in seconds.
std::vector<FailureVerdict> detect_instance(const Dataset& ds, const InstanceArtifacts& art,
                                            const PipelineConfig& cfg,
                                            double* mean_window_seconds = nullptr);

std::map<std::string, std::vector<FailureVerdict>> detect_all(const Dataset& ds,
                                                              const PipelineArtifacts& artifacts,
                                                              const PipelineConfig& cfg,
                                                              double* mean_window_seconds = nullptr);

// Aggregate segment point-adjust across instances (counts summed, then
// precision/recall/F1 once).
EvalReport evaluate_all(const std::map<std::string, std::vector<FailureVerdict>>& verdicts,
                        const std::vector<FailureLabel>& labels);

void save_artifacts(const PipelineArtifacts& artifacts, const PipelineConfig& cfg);
PipelineArtifacts load_artifacts(const PipelineConfig& cfg);

void save_verdicts(const std::map<std::string, std::vector<FailureVerdict>>& verdicts,
                   const std::filesystem::path& path);
std::map<std::string, std::vector<FailureVerdict>> load_verdicts(
    const std::filesystem::path& path);

}  // namespace trifuse
