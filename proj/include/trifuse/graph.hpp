#pragma once

#include <array>
#include <string>
#include <vector>

#include "trifuse/jsonutil.hpp"
#include "trifuse/types.hpp"

namespace trifuse {

inline constexpr int kEdgeTypes = 6;

// Unordered modality pairs map onto 1..6 in the order metrics-metrics,
// metrics-logs, metrics-traces, logs-logs, logs-traces, traces-traces.
int edge_type(Modality a, Modality b);

// Equal-width value histogram; `bins` cells over [lo, hi], out-of-range
// values clamp to the edge cells. A constant channel collapses to one bin.
struct BinSpec {
  double lo = 0.0;
  double hi = 0.0;
  int bins = 1;
};

BinSpec make_binspec(const Vector& training_values, int bins);
int bin_index(double value, const BinSpec& spec);

// Histogram mutual information in nats, 0*log(0) := 0. Exactly symmetric in
// its arguments. The two-argument form derives each channel's range from the
// series itself (the caller passes training-split data).
double mutual_information(const Vector& x, const Vector& y, int bins);
double mutual_information(const Vector& x, const Vector& y, const BinSpec& bx, const BinSpec& by);

// N x N x K edge weights; each unordered channel pair contributes to exactly
// one slice, and every slice carries unit self-loops so the degree matrix
// downstream stays invertible.
struct AdjacencyTensor {
  int n = 0;
  std::array<Matrix, kEdgeTypes> slices;
  std::vector<std::string> channel_names;
  std::vector<Modality> modalities;

  const Matrix& slice(int k) const { return slices.at(static_cast<std::size_t>(k - 1)); }
  Matrix& slice(int k) { return slices.at(static_cast<std::size_t>(k - 1)); }

  Json to_json() const;
  static AdjacencyTensor from_json(const Json& j);
};

// Pairwise MI over the training-split channels (rows of `train_channels`).
AdjacencyTensor build_adjacency(const Matrix& train_channels,
                                const std::vector<std::string>& names,
                                const std::vector<Modality>& modalities, int bins);

// A window of per-timestamp node-value snapshots sharing one adjacency.
// Snapshot t is a column; the adjacency is borrowed, not owned.
struct GraphStream {
  Matrix snapshots;  // N x theta
  const AdjacencyTensor* adjacency = nullptr;
};

// Columns [end - theta + 1, end] of X. Throws UsageError when the window
// falls outside X.
GraphStream build_stream(const Matrix& x, const AdjacencyTensor& adjacency, int end, int theta);

}  // namespace trifuse
