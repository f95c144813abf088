#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace trifuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Monitoring data kinds. Values index per-modality parameter columns.
enum class Modality : int { Metric = 0, Log = 1, Trace = 2 };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::Metric: return "metric";
    case Modality::Log: return "log";
    case Modality::Trace: return "trace";
  }
  return "?";
}

// One serialized, minute-aligned time series. `grid_start` is an epoch
// minute; consecutive values are `grid_step` minutes apart.
struct DataChannel {
  std::string name;
  Modality modality = Modality::Metric;
  std::int64_t grid_start = 0;
  int grid_step = 1;
  Vector values;
};

// Elementwise logistic, usable on any dense expression.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime,
              Derived::ColsAtCompileTime>
sigmoid(const Eigen::MatrixBase<Derived>& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime,
              Derived::ColsAtCompileTime>
leaky_relu(const Eigen::MatrixBase<Derived>& x, double slope) {
  return x.array().max(x.array() * slope).matrix();
}

}  // namespace trifuse
