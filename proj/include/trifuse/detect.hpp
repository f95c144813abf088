#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trifuse/jsonutil.hpp"
#include "trifuse/pot.hpp"
#include "trifuse/telemetry.hpp"
#include "trifuse/types.hpp"

namespace trifuse {

// Per-channel robust normalization plus the fitted POT tail. The calibration
// scores are retained so the threshold can be re-derived for another risk
// level without refitting the model.
struct ScoreState {
  std::vector<std::string> channel_names;
  Vector median;  // per-channel median of calibration errors
  Vector iqr;     // inter-quartile range, floored
  std::vector<double> calibration_scores;
  PotResult pot;
  double q = 1e-3;
  double t0_percentile = 98.0;
  double iqr_floor = 1e-6;

  Json to_json() const;
  static ScoreState from_json(const Json& j);
};

// ERR_n = |prediction_n - observation_n|.
Vector channel_errors(const Vector& prediction, const Vector& observation);

// Median/IQR per channel over >= 20 calibration error vectors, then the POT
// tail over the aggregated calibration scores.
ScoreState calibrate(const std::vector<Vector>& error_vectors,
                     const std::vector<std::string>& channel_names, double q,
                     double t0_percentile = 98.0);

Vector normalized_errors(const Vector& errors, const ScoreState& state);

// ERR = max_n (ERR_n - median_n) / iqr_n.
double failure_score(const Vector& errors, const ScoreState& state);

// Threshold for risk level q from the stored calibration scores.
double evt_threshold(const ScoreState& state, double q);

struct FailureVerdict {
  std::int64_t timestamp = 0;  // epoch seconds
  double score = 0.0;
  double threshold = 0.0;
  bool is_failure = false;
  std::vector<std::pair<std::string, double>> top_channels;  // ranked, desc

  Json to_json() const;
  static FailureVerdict from_json(const Json& j);
};

struct EvalReport {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  Json to_json() const;
};

EvalReport report_from_counts(int tp, int fp, int fn);

// Segment point-adjust over one instance's timeline: a labeled segment is one
// TP if any verdict inside it fires, else one FN; runs of consecutive fired
// verdicts outside all segments merge into single FP events.
EvalReport evaluate(const std::vector<FailureVerdict>& verdicts,
                    const std::vector<FailureLabel>& labels);

}  // namespace trifuse
