#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trifuse/dbscan.hpp"
#include "trifuse/drain.hpp"
#include "trifuse/embed.hpp"
#include "trifuse/telemetry.hpp"
#include "trifuse/types.hpp"

namespace trifuse {

// Shared minute grid: point k sits at epoch minute start_minute + k * step.
struct MinuteGrid {
  std::int64_t start_minute = 0;
  int length = 0;
  int step = 1;

  std::int64_t minute_at(int k) const { return start_minute + static_cast<std::int64_t>(k) * step; }
};

struct SerializerConfig {
  int theta = 60;  // window length (minutes)
  int delta = 1;   // step size (minutes)
  DrainConfig drain;
  double dbscan_eps = 0.5;
  int dbscan_min_pts = 1;
  EmbedderConfig embedder;
  bool use_metrics = true;
  bool use_logs = true;
  bool use_traces = true;
};

// Everything needed to reproduce one instance's channels online: the fitted
// parse tree, template clusters, per-channel training-split norms, and the
// grid layout. Immutable once fitted.
struct SerializerState {
  SerializerConfig config;
  std::string instance_id;
  DrainParser parser{DrainConfig{}};
  std::vector<TemplateCluster> clusters;
  std::vector<std::string> channel_names;
  std::vector<Modality> channel_modalities;
  std::map<std::string, double> norms;
  MinuteGrid grid;
  int train_points = 0;  // grid points in the training split
  bool has_status = false;

  Json to_json() const;
  static SerializerState from_json(const Json& j);
};

struct InstanceData {
  std::string instance_id;
  std::vector<MetricSample> metrics;
  std::vector<LogEntry> logs;
  std::vector<Span> spans;
};

InstanceData slice_instance(const Dataset& ds, const std::string& instance_id);

// Grid spanning the dataset extent (all instances share it).
MinuteGrid dataset_grid(const Dataset& ds, int step);

// --- individual serialization steps -----------------------------------------

// Unit-norm scaling against a frozen training-split norm; a zero norm maps
// the whole series to zeros.
Vector normalize_series(const Vector& series, double stored_norm);
double l2_prefix_norm(const Vector& series, int prefix_len);

// Per-metric minute series on the grid (same-minute samples averaged, gaps
// carry the previous value, leading gaps are zero). Unnormalized.
std::vector<DataChannel> metric_channels(const std::vector<MetricSample>& samples,
                                         const MinuteGrid& grid);

// Per-cluster sliding-window counts plus the total channel (M+1 outputs).
// The parser is advanced in place for templates unseen at fit time; novel
// templates are assigned to the nearest existing cluster.
std::vector<DataChannel> serialize_logs(const std::vector<LogEntry>& entries, DrainParser& parser,
                                        const std::vector<TemplateCluster>& clusters,
                                        const EmbedderConfig& embedder, const MinuteGrid& grid,
                                        int theta);

// Windowed response-time statistics: mean, median, range, population std,
// plus the non-success status count when status codes exist. Empty windows
// produce zeros.
std::vector<DataChannel> serialize_traces(const std::vector<Span>& spans, const MinuteGrid& grid,
                                          int theta, bool with_status);

struct AlignedChannels {
  Matrix values;  // N x tau
  std::vector<std::string> names;
  std::vector<Modality> modalities;
  MinuteGrid grid;
};

// Trims all channels to the intersection of their grids; throws DataError
// when the intersection is empty or steps differ.
AlignedChannels align_clocks(const std::vector<DataChannel>& channels);

// --- fitted pipeline ---------------------------------------------------------

SerializerState fit_serializer(const InstanceData& data, const SerializerConfig& cfg,
                               const MinuteGrid& grid, int train_points);

// Full serialization of one instance: channels, alignment, norm scaling.
// Pure function of (data, state).
AlignedChannels serialize_instance(const InstanceData& data, const SerializerState& state);

}  // namespace trifuse
