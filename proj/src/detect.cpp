#include "trifuse/detect.hpp"

#include <algorithm>
#include <cmath>

#include "trifuse/errors.hpp"

namespace trifuse {

Vector channel_errors(const Vector& prediction, const Vector& observation) {
  if (prediction.size() != observation.size())
    throw UsageError("channel_errors: length mismatch");
  return (prediction - observation).cwiseAbs();
}

ScoreState calibrate(const std::vector<Vector>& error_vectors,
                     const std::vector<std::string>& channel_names, double q,
                     double t0_percentile) {
  if (error_vectors.size() < 20)
    throw DataError("calibrate: need at least 20 calibration timestamps, got " +
                    std::to_string(error_vectors.size()));
  if (q <= 0.0 || q > 0.1) throw UsageError("calibrate: q must lie in (0, 0.1]");
  const auto n = error_vectors.front().size();
  if (static_cast<std::size_t>(n) != channel_names.size())
    throw UsageError("calibrate: channel name count mismatch");
  for (const auto& v : error_vectors) {
    if (v.size() != n) throw UsageError("calibrate: ragged error vectors");
  }

  ScoreState st;
  st.channel_names = channel_names;
  st.q = q;
  st.t0_percentile = t0_percentile;
  st.median.resize(n);
  st.iqr.resize(n);
  std::vector<double> column(error_vectors.size());
  for (Eigen::Index c = 0; c < n; ++c) {
    for (std::size_t t = 0; t < error_vectors.size(); ++t) column[t] = error_vectors[t][c];
    st.median[c] = percentile(column, 50.0);
    st.iqr[c] = std::max(percentile(column, 75.0) - percentile(column, 25.0), st.iqr_floor);
  }

  st.calibration_scores.reserve(error_vectors.size());
  for (const auto& v : error_vectors) st.calibration_scores.push_back(failure_score(v, st));
  st.pot = pot_threshold(st.calibration_scores, q, t0_percentile);
  return st;
}

Vector normalized_errors(const Vector& errors, const ScoreState& state) {
  if (errors.size() != state.median.size())
    throw UsageError("normalized_errors: channel count mismatch");
  return (errors - state.median).cwiseQuotient(state.iqr);
}

double failure_score(const Vector& errors, const ScoreState& state) {
  return normalized_errors(errors, state).maxCoeff();
}

double evt_threshold(const ScoreState& state, double q) {
  if (state.calibration_scores.empty())
    throw UsageError("evt_threshold: state has no calibration scores");
  return pot_threshold(state.calibration_scores, q, state.t0_percentile).threshold;
}

EvalReport report_from_counts(int tp, int fp, int fn) {
  EvalReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = (tp + fp > 0) ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = (tp + fn > 0) ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = (r.precision + r.recall > 0.0)
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

EvalReport evaluate(const std::vector<FailureVerdict>& verdicts,
                    const std::vector<FailureLabel>& labels) {
  auto in_segment = [&](std::int64_t ts) {
    for (const auto& l : labels) {
      if (ts >= l.start_ts && ts <= l.end_ts) return true;
    }
    return false;
  };

  std::vector<FailureVerdict> sorted = verdicts;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const FailureVerdict& a, const FailureVerdict& b) {
                     return a.timestamp < b.timestamp;
                   });

  int tp = 0, fn = 0, fp = 0;
  for (const auto& l : labels) {
    bool hit = false;
    for (const auto& v : sorted) {
      if (v.is_failure && v.timestamp >= l.start_ts && v.timestamp <= l.end_ts) {
        hit = true;
        break;
      }
    }
    hit ? ++tp : ++fn;
  }

  // Alert events are maximal runs of consecutive firing verdicts. A run that
  // overlaps a labeled segment is that segment's detection; only runs disjoint
  // from every segment count as (one) false positive each.
  bool in_run = false;
  bool run_overlaps = false;
  auto close_run = [&] {
    if (in_run && !run_overlaps) ++fp;
    in_run = false;
    run_overlaps = false;
  };
  for (const auto& v : sorted) {
    if (v.is_failure) {
      in_run = true;
      run_overlaps = run_overlaps || in_segment(v.timestamp);
    } else {
      close_run();
    }
  }
  close_run();
  return report_from_counts(tp, fp, fn);
}

// --- persistence -------------------------------------------------------------

Json ScoreState::to_json() const {
  Json j;
  j["format_version"] = 1;
  j["channel_names"] = channel_names;
  j["median"] = std::vector<double>(median.data(), median.data() + median.size());
  j["iqr"] = std::vector<double>(iqr.data(), iqr.data() + iqr.size());
  j["calibration_scores"] = calibration_scores;
  j["pot"] = Json{{"t0", pot.t0},
                  {"gamma", pot.fit.gamma},
                  {"sigma", pot.fit.sigma},
                  {"n_total", pot.n_total},
                  {"n_exceed", pot.n_exceed},
                  {"threshold", pot.threshold}};
  j["q"] = q;
  j["t0_percentile"] = t0_percentile;
  j["iqr_floor"] = iqr_floor;
  return j;
}

ScoreState ScoreState::from_json(const Json& j) {
  if (j.at("format_version").get<int>() > 1)
    throw DataError("score state: format version newer than this build supports");
  ScoreState st;
  st.channel_names = j.at("channel_names").get<std::vector<std::string>>();
  const auto med = j.at("median").get<std::vector<double>>();
  const auto iq = j.at("iqr").get<std::vector<double>>();
  st.median = Eigen::Map<const Vector>(med.data(), static_cast<Eigen::Index>(med.size()));
  st.iqr = Eigen::Map<const Vector>(iq.data(), static_cast<Eigen::Index>(iq.size()));
  st.calibration_scores = j.at("calibration_scores").get<std::vector<double>>();
  st.pot.t0 = j.at("pot").at("t0").get<double>();
  st.pot.fit.gamma = j.at("pot").at("gamma").get<double>();
  st.pot.fit.sigma = j.at("pot").at("sigma").get<double>();
  st.pot.n_total = j.at("pot").at("n_total").get<std::size_t>();
  st.pot.n_exceed = j.at("pot").at("n_exceed").get<std::size_t>();
  st.pot.threshold = j.at("pot").at("threshold").get<double>();
  st.q = j.at("q").get<double>();
  st.t0_percentile = j.at("t0_percentile").get<double>();
  st.iqr_floor = j.at("iqr_floor").get<double>();
  return st;
}

Json FailureVerdict::to_json() const {
  Json tops = Json::array();
  for (const auto& [name, value] : top_channels)
    tops.push_back(Json{{"channel", name}, {"error", value}});
  return Json{{"timestamp", timestamp},
              {"score", score},
              {"threshold", threshold},
              {"is_failure", is_failure},
              {"top_channels", tops}};
}

FailureVerdict FailureVerdict::from_json(const Json& j) {
  FailureVerdict v;
  v.timestamp = j.at("timestamp").get<std::int64_t>();
  v.score = j.at("score").get<double>();
  v.threshold = j.at("threshold").get<double>();
  v.is_failure = j.at("is_failure").get<bool>();
  if (j.contains("top_channels")) {
    for (const auto& t : j.at("top_channels"))
      v.top_channels.emplace_back(t.at("channel").get<std::string>(),
                                  t.at("error").get<double>());
  }
  return v;
}

Json EvalReport::to_json() const {
  return Json{{"tp", tp},       {"fp", fp},           {"fn", fn},
              {"precision", precision}, {"recall", recall}, {"f1", f1}};
}

}  // namespace trifuse
