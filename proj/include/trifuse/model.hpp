#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trifuse/graph.hpp"
#include "trifuse/jsonutil.hpp"
#include "trifuse/types.hpp"

namespace trifuse {

inline constexpr double kLeakySlope = 0.2;

struct ModelConfig {
  int n_channels = 0;
  int theta = 60;
  int gt_layers = 5;
  int heads = 6;
  int feature_dim = 8;  // per-node feature width after the modality lift
  int head_dim = 8;     // per-head transformed width
  int hidden = 64;      // GRU state width
  std::uint64_t seed = 1;
};

// Every parameter tensor, vectors included, is a column-major Matrix so the
// optimizer and the gradient checker can walk them uniformly.
struct ModelParams {
  Matrix lift_weight;  // F x 3, one column per modality
  Matrix lift_bias;    // F x 3
  Matrix gt_weights;   // L x K, row l holds layer l's edge-type selection
  std::vector<Matrix> gat_w;  // per head: F' x F
  std::vector<Matrix> gat_a;  // per head: 2F' x 1 attention vector
  Matrix gat_out;             // 1 x (H*F') output map
  Matrix gru_wz, gru_uz, gru_wr, gru_ur, gru_wh, gru_uh;  // D x N, D x D
  Matrix gru_bz, gru_br, gru_bh;                          // D x 1
  Matrix out_w;  // N x D
  Matrix out_b;  // N x 1

  template <typename Fn>
  void for_each(Fn&& fn) {
    fn("lift_weight", lift_weight);
    fn("lift_bias", lift_bias);
    fn("gt_weights", gt_weights);
    for (std::size_t h = 0; h < gat_w.size(); ++h)
      fn(("gat_w" + std::to_string(h)).c_str(), gat_w[h]);
    for (std::size_t h = 0; h < gat_a.size(); ++h)
      fn(("gat_a" + std::to_string(h)).c_str(), gat_a[h]);
    fn("gat_out", gat_out);
    fn("gru_wz", gru_wz);
    fn("gru_uz", gru_uz);
    fn("gru_wr", gru_wr);
    fn("gru_ur", gru_ur);
    fn("gru_wh", gru_wh);
    fn("gru_uh", gru_uh);
    fn("gru_bz", gru_bz);
    fn("gru_br", gru_br);
    fn("gru_bh", gru_bh);
    fn("out_w", out_w);
    fn("out_b", out_b);
  }

  std::vector<Matrix*> all_tensors();
  std::vector<std::pair<std::string, Matrix*>> named_tensors();

  static ModelParams shaped(const ModelConfig& cfg);             // zero-filled
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);  // scaled uniform
};

struct ModelState {
  ModelConfig config;
  std::vector<Modality> modalities;  // per channel
  ModelParams params;
  ModelParams adam_m;
  ModelParams adam_v;
  std::int64_t step = 0;

  Json to_json() const;
  static ModelState from_json(const Json& j);
};

// --- equation-level operations ----------------------------------------------

// Q = sum_k w[k] * A^(k).
Matrix gt_soft_select(const AdjacencyTensor& a, const Vector& w);

// Row-normalized product: D^{-1} (prev * q). Throws InternalError on a zero
// row sum (self-loops are meant to prevent it).
Matrix gt_compose(const Matrix& prev, const Matrix& q);

// Stacked GT layers: row-normalize the first selection, then compose one
// selection per remaining row of gt_weights. Output rows sum to 1.
Matrix gtn_forward(const AdjacencyTensor& a, const Matrix& gt_weights);

// Multi-head attention over the meta-path matrix. Attention score for (i,j)
// is LeakyReLU(A'_ij * <a_h, [W_h x_i ; W_h x_j]>), row-softmaxed over j.
Matrix gat_forward(const Matrix& features, const Matrix& a_prime,
                   const std::vector<Matrix>& head_w, const std::vector<Matrix>& head_a,
                   const Matrix& w_out);

// Gated recurrent unit over column inputs, h_0 = 0; returns h_1..h_T.
std::vector<Matrix> gru_forward(const std::vector<Matrix>& inputs, const Matrix& wz,
                                const Matrix& uz, const Matrix& wr, const Matrix& ur,
                                const Matrix& wh, const Matrix& uh, const Matrix& bz,
                                const Matrix& br, const Matrix& bh);

Matrix predict_last(const Matrix& h_last, const Matrix& w_o, const Matrix& b_o);

double mse_loss(const Matrix& prediction, const Matrix& observation);

// --- full pipeline ------------------------------------------------------------

struct ForwardCache;  // opaque; lives in model.cpp

struct ForwardResult {
  Matrix prediction;  // N x 1, prediction of the filtered last snapshot
  Matrix filtered;    // N x theta, GAT output per snapshot
};

ForwardResult forward(const GraphStream& stream, const ModelState& state);

// Forward with intermediates retained, then exact reverse-mode gradients of
// the MSE loss with respect to every tensor in ModelParams. The loss target
// is itself a function of the parameters (the filtered last snapshot), and
// that path is differentiated too.
double forward_backward(const GraphStream& stream, const ModelState& state, ModelParams& grads);

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 30;
  int gt_layers = 5;
  int heads = 6;
  int hidden = 64;
  int batch_size = 1;
  int feature_dim = 8;
  int head_dim = 8;
  std::uint64_t seed = 1;
};

struct TrainResult {
  ModelState state;
  std::vector<double> epoch_loss;  // mean per epoch
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) over shuffled windows; gradients
// within a batch are averaged in a fixed order, so a fixed seed gives a
// bit-stable result. Throws InternalError naming the window on a non-finite
// loss.
TrainResult train(const std::vector<GraphStream>& streams, const TrainConfig& cfg);

}  // namespace trifuse
