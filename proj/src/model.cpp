#include "trifuse/model.hpp"

#include <cmath>
#include <numeric>

#include "trifuse/errors.hpp"
#include "trifuse/rng.hpp"

namespace trifuse {

// --- parameter plumbing -------------------------------------------------------

std::vector<Matrix*> ModelParams::all_tensors() {
  std::vector<Matrix*> out;
  for_each([&](const char*, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for_each([&](const char* name, Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

ModelParams ModelParams::shaped(const ModelConfig& cfg) {
  const int n = cfg.n_channels, f = cfg.feature_dim, fp = cfg.head_dim, d = cfg.hidden;
  ModelParams p;
  p.lift_weight = Matrix::Zero(f, 3);
  p.lift_bias = Matrix::Zero(f, 3);
  p.gt_weights = Matrix::Zero(cfg.gt_layers, kEdgeTypes);
  p.gat_w.assign(static_cast<std::size_t>(cfg.heads), Matrix::Zero(fp, f));
  p.gat_a.assign(static_cast<std::size_t>(cfg.heads), Matrix::Zero(2 * fp, 1));
  p.gat_out = Matrix::Zero(1, cfg.heads * fp);
  p.gru_wz = Matrix::Zero(d, n);
  p.gru_uz = Matrix::Zero(d, d);
  p.gru_wr = Matrix::Zero(d, n);
  p.gru_ur = Matrix::Zero(d, d);
  p.gru_wh = Matrix::Zero(d, n);
  p.gru_uh = Matrix::Zero(d, d);
  p.gru_bz = Matrix::Zero(d, 1);
  p.gru_br = Matrix::Zero(d, 1);
  p.gru_bh = Matrix::Zero(d, 1);
  p.out_w = Matrix::Zero(n, d);
  p.out_b = Matrix::Zero(n, 1);
  return p;
}

namespace {

void fill_uniform(Matrix& m, double limit, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-limit, limit);
}

double glorot(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  const int n = cfg.n_channels, f = cfg.feature_dim, fp = cfg.head_dim, d = cfg.hidden;
  ModelParams p = shaped(cfg);
  Rng rng(splitmix64(seed));
  fill_uniform(p.lift_weight, glorot(1, f), rng);                 // scalar -> F lift
  p.gt_weights.setConstant(1.0 / kEdgeTypes);                     // unbiased selection
  for (auto& w : p.gat_w) fill_uniform(w, glorot(f, fp), rng);
  for (auto& a : p.gat_a) fill_uniform(a, glorot(2 * fp, 1), rng);
  fill_uniform(p.gat_out, glorot(cfg.heads * fp, 1), rng);
  fill_uniform(p.gru_wz, glorot(n, d), rng);
  fill_uniform(p.gru_uz, glorot(d, d), rng);
  fill_uniform(p.gru_wr, glorot(n, d), rng);
  fill_uniform(p.gru_ur, glorot(d, d), rng);
  fill_uniform(p.gru_wh, glorot(n, d), rng);
  fill_uniform(p.gru_uh, glorot(d, d), rng);
  fill_uniform(p.out_w, glorot(d, n), rng);
  return p;
}

// --- equation-level operations -------------------------------------------------

Matrix gt_soft_select(const AdjacencyTensor& a, const Vector& w) {
  if (w.size() != kEdgeTypes) throw UsageError("gt_soft_select: weight size must be K");
  Matrix q = Matrix::Zero(a.n, a.n);
  for (int k = 1; k <= kEdgeTypes; ++k) q += w[k - 1] * a.slice(k);
  return q;
}

namespace {

Matrix row_normalize(const Matrix& p, Vector* sums_out) {
  Vector sums = p.rowwise().sum();
  for (Eigen::Index i = 0; i < sums.size(); ++i) {
    if (sums[i] == 0.0)
      throw InternalError("gt_compose: zero row sum at row " + std::to_string(i));
  }
  if (sums_out) *sums_out = sums;
  return sums.cwiseInverse().asDiagonal() * p;
}

// Reverse of Y = P / rowsum(P): dP_ik = (dY_ik - <dY_i, Y_i>) / sum_i.
Matrix row_normalize_backward(const Matrix& dy, const Matrix& y, const Vector& sums) {
  Matrix dp(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double rowdot = dy.row(i).dot(y.row(i));
    dp.row(i) = (dy.row(i).array() - rowdot) / sums[i];
  }
  return dp;
}

}  // namespace

Matrix gt_compose(const Matrix& prev, const Matrix& q) {
  return row_normalize(prev * q, nullptr);
}

namespace {

struct GtnCache {
  std::vector<Matrix> select;   // S_l
  std::vector<Matrix> outputs;  // M_l (post-normalization)
  std::vector<Vector> sums;     // row sums before normalization
};

Matrix gtn_forward_impl(const AdjacencyTensor& a, const Matrix& gt_weights, GtnCache* cache) {
  const int layers = static_cast<int>(gt_weights.rows());
  if (layers < 1) throw UsageError("gtn_forward: need at least one layer");
  Matrix m;
  for (int l = 0; l < layers; ++l) {
    Matrix s = gt_soft_select(a, gt_weights.row(l).transpose());
    const Matrix p = (l == 0) ? s : Matrix(m * s);
    Vector sums;
    Matrix out = row_normalize(p, &sums);
    if (cache) {
      cache->select.push_back(std::move(s));
      cache->outputs.push_back(out);
      cache->sums.push_back(std::move(sums));
    }
    m = std::move(out);
  }
  return m;
}

}  // namespace

Matrix gtn_forward(const AdjacencyTensor& a, const Matrix& gt_weights) {
  return gtn_forward_impl(a, gt_weights, nullptr);
}

namespace {

struct GatCache {
  Matrix features;           // N x F
  std::vector<Matrix> z;     // per head N x F'
  std::vector<Vector> u, v;  // per head N
  std::vector<Matrix> pre;   // per head N x N pre-activation
  std::vector<Matrix> attn;  // per head N x N
  Matrix concat;             // N x H*F'
};

Matrix gat_forward_impl(const Matrix& features, const Matrix& a_prime,
                        const std::vector<Matrix>& head_w, const std::vector<Matrix>& head_a,
                        const Matrix& w_out, GatCache* cache) {
  const auto n = features.rows();
  const auto heads = static_cast<Eigen::Index>(head_w.size());
  if (head_w.size() != head_a.size() || head_w.empty())
    throw UsageError("gat_forward: inconsistent head parameters");
  const auto fp = head_w.front().rows();
  Matrix concat(n, heads * fp);

  for (Eigen::Index h = 0; h < heads; ++h) {
    const Matrix z = features * head_w[static_cast<std::size_t>(h)].transpose();  // N x F'
    const auto& attn_vec = head_a[static_cast<std::size_t>(h)];
    const Vector u = z * attn_vec.topRows(fp);
    const Vector v = z * attn_vec.bottomRows(fp);
    const Matrix scores = u.replicate(1, n) + v.transpose().replicate(n, 1);
    const Matrix pre = a_prime.cwiseProduct(scores);
    const Matrix beta = leaky_relu(pre, kLeakySlope);

    Matrix attn(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double peak = beta.row(i).maxCoeff();
      const Eigen::ArrayXd e = (beta.row(i).array() - peak).exp();
      attn.row(i) = (e / e.sum()).matrix();
    }
    concat.middleCols(h * fp, fp) = attn * z;
    if (cache) {
      cache->z.push_back(z);
      cache->u.push_back(u);
      cache->v.push_back(v);
      cache->pre.push_back(pre);
      cache->attn.push_back(std::move(attn));
    }
  }
  if (cache) cache->concat = concat;
  return concat * w_out.transpose();
}

}  // namespace

Matrix gat_forward(const Matrix& features, const Matrix& a_prime,
                   const std::vector<Matrix>& head_w, const std::vector<Matrix>& head_a,
                   const Matrix& w_out) {
  return gat_forward_impl(features, a_prime, head_w, head_a, w_out, nullptr);
}

std::vector<Matrix> gru_forward(const std::vector<Matrix>& inputs, const Matrix& wz,
                                const Matrix& uz, const Matrix& wr, const Matrix& ur,
                                const Matrix& wh, const Matrix& uh, const Matrix& bz,
                                const Matrix& br, const Matrix& bh) {
  std::vector<Matrix> hidden;
  hidden.reserve(inputs.size());
  Matrix h = Matrix::Zero(wz.rows(), 1);
  for (const auto& x : inputs) {
    const Matrix z = sigmoid(wz * x + uz * h + bz);
    const Matrix r = sigmoid(wr * x + ur * h + br);
    const Matrix hc = (wh * x + uh * h.cwiseProduct(r) + bh).array().tanh().matrix();
    h = (1.0 - z.array()).matrix().cwiseProduct(h) + z.cwiseProduct(hc);
    hidden.push_back(h);
  }
  return hidden;
}

Matrix predict_last(const Matrix& h_last, const Matrix& w_o, const Matrix& b_o) {
  return (w_o * h_last + b_o).array().tanh().matrix();
}

double mse_loss(const Matrix& prediction, const Matrix& observation) {
  if (prediction.rows() != observation.rows() || prediction.cols() != observation.cols())
    throw UsageError("mse_loss: shape mismatch");
  return (prediction - observation).squaredNorm() / static_cast<double>(prediction.rows());
}

// --- full forward/backward ------------------------------------------------------

namespace {

struct GruStepCache {
  Matrix x, z, r, hc, h;
};

struct Cache {
  GtnCache gtn;
  Matrix a_prime;
  std::vector<GatCache> gat;
  Matrix filtered;  // N x theta
  std::vector<GruStepCache> gru;
  Matrix prediction;
};

void check_stream(const GraphStream& stream, const ModelState& state) {
  if (!stream.adjacency) throw UsageError("forward: stream has no adjacency");
  if (stream.snapshots.rows() != state.config.n_channels)
    throw UsageError("forward: channel count differs from the model config");
  if (stream.snapshots.cols() != state.config.theta)
    throw UsageError("forward: stream length differs from the model config");
  if (static_cast<int>(state.modalities.size()) != state.config.n_channels)
    throw UsageError("forward: modality metadata size mismatch");
  if (state.config.theta < 2) throw UsageError("forward: theta must be >= 2");
}

Matrix lift_features(const Vector& values, const std::vector<Modality>& mods,
                     const ModelParams& p) {
  Matrix features(values.size(), p.lift_weight.rows());
  for (Eigen::Index nidx = 0; nidx < values.size(); ++nidx) {
    const auto m = static_cast<Eigen::Index>(mods[static_cast<std::size_t>(nidx)]);
    features.row(nidx) =
        (values[nidx] * p.lift_weight.col(m) + p.lift_bias.col(m)).transpose();
  }
  return features;
}

double run_forward(const GraphStream& stream, const ModelState& state, Cache* cache,
                   ForwardResult* result) {
  check_stream(stream, state);
  const auto& p = state.params;
  const int theta = state.config.theta;
  const auto n = stream.snapshots.rows();

  Cache local;
  Cache& c = cache ? *cache : local;
  c.a_prime = gtn_forward_impl(*stream.adjacency, p.gt_weights, cache ? &c.gtn : nullptr);

  c.filtered.resize(n, theta);
  for (int t = 0; t < theta; ++t) {
    GatCache gc;
    gc.features = lift_features(stream.snapshots.col(t), state.modalities, p);
    c.filtered.col(t) =
        gat_forward_impl(gc.features, c.a_prime, p.gat_w, p.gat_a, p.gat_out,
                         cache ? &gc : nullptr);
    if (cache) c.gat.push_back(std::move(gc));
  }

  Matrix h = Matrix::Zero(state.config.hidden, 1);
  for (int t = 0; t < theta - 1; ++t) {
    const Matrix x = c.filtered.col(t);
    const Matrix z = sigmoid(p.gru_wz * x + p.gru_uz * h + p.gru_bz);
    const Matrix r = sigmoid(p.gru_wr * x + p.gru_ur * h + p.gru_br);
    const Matrix hc =
        (p.gru_wh * x + p.gru_uh * h.cwiseProduct(r) + p.gru_bh).array().tanh().matrix();
    h = (1.0 - z.array()).matrix().cwiseProduct(h) + z.cwiseProduct(hc);
    if (cache) c.gru.push_back({x, z, r, hc, h});
  }
  c.prediction = predict_last(h, p.out_w, p.out_b);

  if (result) {
    result->prediction = c.prediction;
    result->filtered = c.filtered;
  }
  // The training target is the observed last snapshot. A filtered target
  // would admit a degenerate minimum (shrink the attention output map and
  // predict the collapsed constant), so the model predicts the data itself.
  return mse_loss(c.prediction, stream.snapshots.col(theta - 1));
}

}  // namespace

ForwardResult forward(const GraphStream& stream, const ModelState& state) {
  ForwardResult out;
  run_forward(stream, state, nullptr, &out);
  return out;
}

double forward_backward(const GraphStream& stream, const ModelState& state, ModelParams& grads) {
  Cache cache;
  const double loss = run_forward(stream, state, &cache, nullptr);

  const auto& p = state.params;
  const int theta = state.config.theta;
  const auto n = stream.snapshots.rows();
  const auto f = p.lift_weight.rows();
  const auto fp = p.gat_w.front().rows();
  const auto heads = static_cast<Eigen::Index>(p.gat_w.size());
  const double inv_n = 1.0 / static_cast<double>(n);

  const Matrix diff = cache.prediction - stream.snapshots.col(theta - 1);
  const Matrix dpred = 2.0 * inv_n * diff;

  // output layer
  const Matrix& h_last = cache.gru.back().h;
  const Matrix dout = dpred.cwiseProduct(
      (1.0 - cache.prediction.array().square()).matrix());
  grads.out_w += dout * h_last.transpose();
  grads.out_b += dout;
  Matrix dh = p.out_w.transpose() * dout;

  // GRU backward through time
  const int steps = theta - 1;
  std::vector<Matrix> dx(static_cast<std::size_t>(steps));
  const Matrix h0 = Matrix::Zero(state.config.hidden, 1);
  for (int t = steps - 1; t >= 0; --t) {
    const auto& g = cache.gru[static_cast<std::size_t>(t)];
    const Matrix& h_prev = (t > 0) ? cache.gru[static_cast<std::size_t>(t - 1)].h : h0;

    const Matrix dz = dh.cwiseProduct(g.hc - h_prev);
    const Matrix dhc = dh.cwiseProduct(g.z);
    Matrix dh_prev = dh.cwiseProduct((1.0 - g.z.array()).matrix());

    const Matrix dah = dhc.cwiseProduct((1.0 - g.hc.array().square()).matrix());
    grads.gru_wh += dah * g.x.transpose();
    grads.gru_uh += dah * h_prev.cwiseProduct(g.r).transpose();
    grads.gru_bh += dah;
    const Matrix through_uh = p.gru_uh.transpose() * dah;
    dh_prev += through_uh.cwiseProduct(g.r);
    const Matrix dr = through_uh.cwiseProduct(h_prev);
    Matrix dxt = p.gru_wh.transpose() * dah;

    const Matrix dar = dr.cwiseProduct(g.r.cwiseProduct((1.0 - g.r.array()).matrix()));
    grads.gru_wr += dar * g.x.transpose();
    grads.gru_ur += dar * h_prev.transpose();
    grads.gru_br += dar;
    dh_prev += p.gru_ur.transpose() * dar;
    dxt += p.gru_wr.transpose() * dar;

    const Matrix daz = dz.cwiseProduct(g.z.cwiseProduct((1.0 - g.z.array()).matrix()));
    grads.gru_wz += daz * g.x.transpose();
    grads.gru_uz += daz * h_prev.transpose();
    grads.gru_bz += daz;
    dh_prev += p.gru_uz.transpose() * daz;
    dxt += p.gru_wz.transpose() * daz;

    dx[static_cast<std::size_t>(t)] = std::move(dxt);
    dh = std::move(dh_prev);
  }

  // GAT + lift backward per GRU-input snapshot; the last snapshot's filtered
  // value does not reach the loss (the target is observed data), so it
  // carries no gradient. The meta-path gradient accumulates across steps.
  Matrix d_aprime = Matrix::Zero(n, n);
  for (int t = 0; t < theta - 1; ++t) {
    const Matrix& d_filtered = dx[static_cast<std::size_t>(t)];
    const auto& gc = cache.gat[static_cast<std::size_t>(t)];

    grads.gat_out += d_filtered.transpose() * gc.concat;
    const Matrix dconcat = d_filtered * p.gat_out;  // N x H*F'

    Matrix dfeat = Matrix::Zero(n, f);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto hs = static_cast<std::size_t>(h);
      const Matrix& z = gc.z[hs];
      const Matrix& attn = gc.attn[hs];
      const Matrix d_head = dconcat.middleCols(h * fp, fp);

      const Matrix dattn = d_head * z.transpose();
      Matrix dz = attn.transpose() * d_head;

      Matrix dbeta(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double rowdot = dattn.row(i).dot(attn.row(i));
        dbeta.row(i) = ((dattn.row(i).array() - rowdot) * attn.row(i).array()).matrix();
      }

      const Matrix slope =
          (gc.pre[hs].array() > 0.0).select(Matrix::Ones(n, n), Matrix::Constant(n, n, kLeakySlope));
      const Matrix dc = dbeta.cwiseProduct(slope);

      const Matrix scores =
          gc.u[hs].replicate(1, n) + gc.v[hs].transpose().replicate(n, 1);
      d_aprime += dc.cwiseProduct(scores);
      const Matrix ds = dc.cwiseProduct(cache.a_prime);

      const Vector du = ds.rowwise().sum();
      const Vector dv = ds.colwise().sum().transpose();
      const auto& avec = p.gat_a[hs];
      grads.gat_a[hs].topRows(fp) += z.transpose() * du;
      grads.gat_a[hs].bottomRows(fp) += z.transpose() * dv;
      dz += du * avec.topRows(fp).transpose() + dv * avec.bottomRows(fp).transpose();

      grads.gat_w[hs] += dz.transpose() * gc.features;
      dfeat += dz * p.gat_w[hs];
    }

    for (Eigen::Index nidx = 0; nidx < n; ++nidx) {
      const auto m = static_cast<Eigen::Index>(state.modalities[static_cast<std::size_t>(nidx)]);
      grads.lift_weight.col(m) +=
          stream.snapshots(nidx, t) * dfeat.row(nidx).transpose();
      grads.lift_bias.col(m) += dfeat.row(nidx).transpose();
    }
  }

  // GTN backward through the stacked row-normalized compositions
  const int layers = static_cast<int>(p.gt_weights.rows());
  const auto& adj = *stream.adjacency;
  Matrix dm = std::move(d_aprime);
  for (int l = layers - 1; l >= 1; --l) {
    const auto ls = static_cast<std::size_t>(l);
    const Matrix dp_l = row_normalize_backward(dm, cache.gtn.outputs[ls], cache.gtn.sums[ls]);
    const Matrix ds_l = cache.gtn.outputs[ls - 1].transpose() * dp_l;
    for (int k = 1; k <= kEdgeTypes; ++k)
      grads.gt_weights(l, k - 1) += ds_l.cwiseProduct(adj.slice(k)).sum();
    dm = dp_l * cache.gtn.select[ls].transpose();
  }
  const Matrix dp0 = row_normalize_backward(dm, cache.gtn.outputs[0], cache.gtn.sums[0]);
  for (int k = 1; k <= kEdgeTypes; ++k)
    grads.gt_weights(0, k - 1) += dp0.cwiseProduct(adj.slice(k)).sum();

  return loss;
}

// --- training --------------------------------------------------------------------

namespace {

void adam_step(ModelState& state, ModelParams& grads, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto ps = state.params.all_tensors();
  auto gs = grads.all_tensors();
  auto ms = state.adam_m.all_tensors();
  auto vs = state.adam_v.all_tensors();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ms[i]->array() = b1 * ms[i]->array() + (1.0 - b1) * gs[i]->array();
    vs[i]->array() = b2 * vs[i]->array() + (1.0 - b2) * gs[i]->array().square();
    ps[i]->array() -=
        lr * (ms[i]->array() / bc1) / ((vs[i]->array() / bc2).sqrt() + eps);
  }
}

void zero_params(ModelParams& p) {
  p.for_each([](const char*, Matrix& m) { m.setZero(); });
}

void scale_params(ModelParams& p, double s) {
  p.for_each([s](const char*, Matrix& m) { m *= s; });
}

}  // namespace

TrainResult train(const std::vector<GraphStream>& streams, const TrainConfig& cfg) {
  if (streams.empty()) throw UsageError("train: no training windows");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.learning_rate <= 0.0)
    throw UsageError("train: invalid config");
  const auto& first = streams.front();
  if (!first.adjacency) throw UsageError("train: stream has no adjacency");

  ModelConfig mc;
  mc.n_channels = static_cast<int>(first.snapshots.rows());
  mc.theta = static_cast<int>(first.snapshots.cols());
  mc.gt_layers = cfg.gt_layers;
  mc.heads = cfg.heads;
  mc.feature_dim = cfg.feature_dim;
  mc.head_dim = cfg.head_dim;
  mc.hidden = cfg.hidden;
  mc.seed = cfg.seed;
  for (const auto& s : streams) {
    if (s.snapshots.rows() != mc.n_channels || s.snapshots.cols() != mc.theta)
      throw UsageError("train: training windows disagree on shape");
  }

  TrainResult result;
  result.state.config = mc;
  result.state.modalities = first.adjacency->modalities;
  result.state.params = ModelParams::init(mc, cfg.seed);
  result.state.adam_m = ModelParams::shaped(mc);
  result.state.adam_v = ModelParams::shaped(mc);

  std::vector<std::size_t> order(streams.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(cfg.seed, "train/shuffle"));

  ModelParams batch_grads = ModelParams::shaped(mc);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch_count = 0;
    zero_params(batch_grads);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t w = order[i];
      const double loss = forward_backward(streams[w], result.state, batch_grads);
      if (!std::isfinite(loss))
        throw InternalError("train: non-finite loss at window " + std::to_string(w) +
                            " (epoch " + std::to_string(epoch + 1) + ")");
      loss_sum += loss;
      ++batch_count;
      if (batch_count == static_cast<std::size_t>(cfg.batch_size) || i + 1 == order.size()) {
        scale_params(batch_grads, 1.0 / static_cast<double>(batch_count));
        adam_step(result.state, batch_grads, cfg.learning_rate);
        zero_params(batch_grads);
        batch_count = 0;
      }
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
  }
  return result;
}

// --- persistence -------------------------------------------------------------------

namespace {

Json tensor_to_json(const Matrix& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix tensor_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw DataError("model checkpoint: tensor size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

Json params_to_json(const ModelParams& params) {
  Json out = Json::object();
  const_cast<ModelParams&>(params).for_each(
      [&](const char* name, Matrix& m) { out[name] = tensor_to_json(m); });
  return out;
}

void params_from_json(const Json& j, ModelParams& params) {
  params.for_each([&](const char* name, Matrix& m) {
    const Matrix loaded = tensor_from_json(j.at(name));
    if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
      throw DataError(std::string("model checkpoint: shape mismatch for ") + name);
    m = loaded;
  });
}

}  // namespace

Json ModelState::to_json() const {
  Json j;
  j["format_version"] = 1;
  j["config"] = Json{{"n_channels", config.n_channels}, {"theta", config.theta},
                     {"gt_layers", config.gt_layers},   {"heads", config.heads},
                     {"feature_dim", config.feature_dim}, {"head_dim", config.head_dim},
                     {"hidden", config.hidden},         {"seed", config.seed}};
  Json mods = Json::array();
  for (auto m : modalities) mods.push_back(to_string(m));
  j["modalities"] = std::move(mods);
  j["params"] = params_to_json(params);
  j["adam_m"] = params_to_json(adam_m);
  j["adam_v"] = params_to_json(adam_v);
  j["step"] = step;
  return j;
}

ModelState ModelState::from_json(const Json& j) {
  if (j.at("format_version").get<int>() > 1)
    throw DataError("model checkpoint: format version newer than this build supports");
  ModelState st;
  const auto& c = j.at("config");
  st.config.n_channels = c.at("n_channels").get<int>();
  st.config.theta = c.at("theta").get<int>();
  st.config.gt_layers = c.at("gt_layers").get<int>();
  st.config.heads = c.at("heads").get<int>();
  st.config.feature_dim = c.at("feature_dim").get<int>();
  st.config.head_dim = c.at("head_dim").get<int>();
  st.config.hidden = c.at("hidden").get<int>();
  st.config.seed = c.at("seed").get<std::uint64_t>();
  for (const auto& m : j.at("modalities")) {
    const auto s = m.get<std::string>();
    st.modalities.push_back(s == "metric" ? Modality::Metric
                            : s == "log"  ? Modality::Log
                                          : Modality::Trace);
  }
  st.params = ModelParams::shaped(st.config);
  st.adam_m = ModelParams::shaped(st.config);
  st.adam_v = ModelParams::shaped(st.config);
  params_from_json(j.at("params"), st.params);
  params_from_json(j.at("adam_m"), st.adam_m);
  params_from_json(j.at("adam_v"), st.adam_v);
  st.step = j.at("step").get<std::int64_t>();
  return st;
}

}  // namespace trifuse
