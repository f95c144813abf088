#include "trifuse/graph.hpp"

#include <algorithm>
#include <cmath>

#include "trifuse/errors.hpp"

namespace trifuse {

int edge_type(Modality a, Modality b) {
  static constexpr int table[3][3] = {{1, 2, 3}, {2, 4, 5}, {3, 5, 6}};
  return table[static_cast<int>(a)][static_cast<int>(b)];
}

BinSpec make_binspec(const Vector& training_values, int bins) {
  if (training_values.size() == 0) throw UsageError("make_binspec: empty series");
  if (bins < 2) throw UsageError("make_binspec: bins must be >= 2");
  BinSpec spec;
  spec.lo = training_values.minCoeff();
  spec.hi = training_values.maxCoeff();
  spec.bins = (spec.hi > spec.lo) ? bins : 1;
  return spec;
}

int bin_index(double value, const BinSpec& spec) {
  if (spec.bins <= 1) return 0;
  const double scaled = (value - spec.lo) / (spec.hi - spec.lo) * spec.bins;
  return std::clamp(static_cast<int>(scaled), 0, spec.bins - 1);
}

double mutual_information(const Vector& x, const Vector& y, const BinSpec& bx, const BinSpec& by) {
  if (x.size() != y.size()) throw UsageError("mutual_information: length mismatch");
  if (x.size() < 2) throw UsageError("mutual_information: need at least 2 samples");

  Matrix joint = Matrix::Zero(bx.bins, by.bins);
  for (Eigen::Index t = 0; t < x.size(); ++t) {
    joint(bin_index(x[t], bx), bin_index(y[t], by)) += 1.0;
  }
  joint /= static_cast<double>(x.size());
  // marginals accumulated by explicit loops so that transposing the
  // histogram (argument swap) reproduces them bit-for-bit
  Vector px = Vector::Zero(bx.bins);
  Vector py = Vector::Zero(by.bins);
  for (int a = 0; a < bx.bins; ++a) {
    for (int b = 0; b < by.bins; ++b) {
      px[a] += joint(a, b);
      py[b] += joint(a, b);
    }
  }

  // Terms are sorted before accumulation so the result is bit-identical
  // under argument swap (the transposed histogram has the same term set).
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(bx.bins) * static_cast<std::size_t>(by.bins));
  for (int a = 0; a < bx.bins; ++a) {
    for (int b = 0; b < by.bins; ++b) {
      const double p = joint(a, b);
      if (p > 0.0) terms.push_back(p * std::log(p / (px[a] * py[b])));
    }
  }
  std::sort(terms.begin(), terms.end());
  double mi = 0.0;
  for (double t : terms) mi += t;
  return mi;
}

double mutual_information(const Vector& x, const Vector& y, int bins) {
  return mutual_information(x, y, make_binspec(x, bins), make_binspec(y, bins));
}

AdjacencyTensor build_adjacency(const Matrix& train_channels,
                                const std::vector<std::string>& names,
                                const std::vector<Modality>& modalities, int bins) {
  const int n = static_cast<int>(train_channels.rows());
  if (n < 2) throw UsageError("build_adjacency: need at least 2 channels");
  if (static_cast<int>(modalities.size()) != n || static_cast<int>(names.size()) != n)
    throw UsageError("build_adjacency: metadata size mismatch");

  AdjacencyTensor a;
  a.n = n;
  a.channel_names = names;
  a.modalities = modalities;
  for (auto& s : a.slices) s = Matrix::Zero(n, n);

  std::vector<BinSpec> specs;
  specs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    specs.push_back(make_binspec(train_channels.row(i).transpose(), bins));

  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double mi = mutual_information(train_channels.row(i).transpose(),
                                           train_channels.row(j).transpose(), specs[static_cast<std::size_t>(i)],
                                           specs[static_cast<std::size_t>(j)]);
      Matrix& s = a.slice(edge_type(modalities[static_cast<std::size_t>(i)], modalities[static_cast<std::size_t>(j)]));
      s(i, j) = mi;
      s(j, i) = mi;
    }
  }
  for (int k = 1; k <= kEdgeTypes; ++k) a.slice(k).diagonal().setOnes();
  return a;
}

GraphStream build_stream(const Matrix& x, const AdjacencyTensor& adjacency, int end, int theta) {
  if (theta < 1) throw UsageError("build_stream: theta must be >= 1");
  if (end - theta + 1 < 0 || end >= x.cols())
    throw UsageError("build_stream: window [" + std::to_string(end - theta + 1) + ", " +
                     std::to_string(end) + "] out of range");
  if (x.rows() != adjacency.n) throw UsageError("build_stream: channel count mismatch");
  GraphStream g;
  g.snapshots = x.middleCols(end - theta + 1, theta);
  g.adjacency = &adjacency;
  return g;
}

Json AdjacencyTensor::to_json() const {
  Json j;
  j["format_version"] = 1;
  j["n"] = n;
  j["channel_names"] = channel_names;
  Json mods = Json::array();
  for (auto m : modalities) mods.push_back(to_string(m));
  j["modalities"] = std::move(mods);
  Json slices_j = Json::array();
  for (const auto& s : slices) {
    std::vector<double> flat(static_cast<std::size_t>(s.size()));
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      for (Eigen::Index c = 0; c < s.cols(); ++c)
        flat[static_cast<std::size_t>(r * s.cols() + c)] = s(r, c);
    slices_j.push_back(flat);
  }
  j["slices"] = std::move(slices_j);
  return j;
}

AdjacencyTensor AdjacencyTensor::from_json(const Json& j) {
  if (j.at("format_version").get<int>() > 1)
    throw DataError("adjacency: format version newer than this build supports");
  AdjacencyTensor a;
  a.n = j.at("n").get<int>();
  a.channel_names = j.at("channel_names").get<std::vector<std::string>>();
  for (const auto& m : j.at("modalities")) {
    const auto s = m.get<std::string>();
    a.modalities.push_back(s == "metric" ? Modality::Metric
                           : s == "log"  ? Modality::Log
                                         : Modality::Trace);
  }
  const auto& slices_j = j.at("slices");
  if (slices_j.size() != kEdgeTypes) throw DataError("adjacency: expected 6 slices");
  for (int k = 0; k < kEdgeTypes; ++k) {
    const auto flat = slices_j.at(static_cast<std::size_t>(k)).get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != a.n * a.n) throw DataError("adjacency: bad slice size");
    Matrix s(a.n, a.n);
    for (int r = 0; r < a.n; ++r)
      for (int c = 0; c < a.n; ++c) s(r, c) = flat[static_cast<std::size_t>(r * a.n + c)];
    a.slices[static_cast<std::size_t>(k)] = std::move(s);
  }
  return a;
}

}  // namespace trifuse
