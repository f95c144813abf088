#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "trifuse/model.hpp"

using namespace trifuse;

namespace {

AdjacencyTensor toy_adjacency(int n, std::uint64_t seed,
                              std::vector<Modality> mods = {}) {
  if (mods.empty())
    for (int i = 0; i < n; ++i) mods.push_back(static_cast<Modality>(i % 3));
  Rng rng(seed);
  AdjacencyTensor a;
  a.n = n;
  a.modalities = mods;
  for (int i = 0; i < n; ++i) a.channel_names.push_back("c" + std::to_string(i));
  for (auto& s : a.slices) s = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double w = rng.uniform(0.1, 1.0);
      auto& s = a.slice(edge_type(mods[static_cast<std::size_t>(i)], mods[static_cast<std::size_t>(j)]));
      s(i, j) = w;
      s(j, i) = w;
    }
  for (int k = 1; k <= kEdgeTypes; ++k) a.slice(k).diagonal().setOnes();
  return a;
}

}  // namespace

TEST_CASE("gt_soft_select selection limits") {
  const auto a = toy_adjacency(4, 2);
  Vector one_hot = Vector::Zero(kEdgeTypes);
  one_hot[3] = 1.0;
  CHECK((gt_soft_select(a, one_hot) - a.slice(4)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(gt_soft_select(a, Vector::Zero(kEdgeTypes)).isZero());
  // elementwise average of two slices
  Vector half = Vector::Zero(kEdgeTypes);
  half[0] = 0.5;
  half[1] = 0.5;
  const Matrix got = gt_soft_select(a, half);
  const Matrix want = 0.5 * a.slice(1) + 0.5 * a.slice(2);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-15);
  // oracle agreement
  Vector w(kEdgeTypes);
  w << 0.1, 0.3, 0.05, 0.2, 0.15, 0.2;
  CHECK((gt_soft_select(a, w) - oracles::gt_soft_select(a, w)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gt_compose identity and row-stochastic output") {
  Matrix q(3, 3);
  q << 0.2, 0.3, 0.5, 0.1, 0.8, 0.1, 0.4, 0.4, 0.2;  // row-stochastic
  const Matrix got = gt_compose(Matrix::Identity(3, 3), q);
  CHECK((got - q).cwiseAbs().maxCoeff() < 1e-15);

  Matrix prev(3, 3), r(3, 3);
  prev << 1, 2, 0, 0, 1, 1, 3, 0, 1;
  r << 0.5, 1, 0, 2, 0.5, 1, 0, 1, 0.5;
  const Matrix out = gt_compose(prev, r);
  for (int i = 0; i < 3; ++i) CHECK(out.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((out - oracles::gt_compose(prev, r)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("gt_compose raises on a zero row sum") {
  Matrix prev = Matrix::Zero(2, 2);
  Matrix q = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(gt_compose(prev, q), InternalError);
}

TEST_CASE("gtn_forward base case, two-hop meta-path, and row sums") {
  const auto a = toy_adjacency(5, 7);
  SUBCASE("L=1 is the row-normalized selection") {
    Matrix w(1, kEdgeTypes);
    w << 0.2, 0.1, 0.3, 0.05, 0.15, 0.2;
    const Matrix got = gtn_forward(a, w);
    const Matrix sel = gt_soft_select(a, w.row(0).transpose());
    const Matrix want = sel.array().colwise() / sel.rowwise().sum().array();
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("L=2 one-hot weights walk a 2-hop meta-path") {
    Matrix w = Matrix::Zero(2, kEdgeTypes);
    w(0, 0) = 1.0;
    w(1, 0) = 1.0;  // both layers select slice 1
    const Matrix got = gtn_forward(a, w);
    // dense matrix-power oracle: rownorm(rownorm(A1) * A1)
    const Matrix a1 = a.slice(1);
    const Matrix m1 = oracles::row_normalize(a1);
    const Matrix want = oracles::row_normalize(m1 * a1);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("rows sum to one for any L") {
    for (int layers = 1; layers <= 5; ++layers) {
      Matrix w = Matrix::Constant(layers, kEdgeTypes, 1.0 / kEdgeTypes);
      const Matrix out = gtn_forward(a, w);
      for (int i = 0; i < a.n; ++i) CHECK(out.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("gat_forward matches the straight-line oracle and softmax sums") {
  Rng rng(31);
  const int n = 5, f = 4, fp = 3, heads = 2;
  const auto a = toy_adjacency(n, 13);
  Matrix w = Matrix::Constant(2, kEdgeTypes, 1.0 / kEdgeTypes);
  const Matrix aprime = gtn_forward(a, w);
  Matrix x(n, f);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < f; ++c) x(i, c) = rng.normal();
  std::vector<Matrix> head_w, head_a;
  for (int h = 0; h < heads; ++h) {
    Matrix hw(fp, f);
    for (int r = 0; r < fp; ++r)
      for (int c = 0; c < f; ++c) hw(r, c) = rng.normal();
    head_w.push_back(hw);
    Matrix ha(2 * fp, 1);
    for (int r = 0; r < 2 * fp; ++r) ha(r, 0) = rng.normal();
    head_a.push_back(ha);
  }
  Matrix w_out(1, heads * fp);
  for (int c = 0; c < heads * fp; ++c) w_out(0, c) = rng.normal();

  const Matrix got = gat_forward(x, aprime, head_w, head_a, w_out);
  const Matrix want = oracles::gat(x, aprime, head_w, head_a, w_out);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("single-node gat reduces to the head concatenation") {
  Rng rng(5);
  const int f = 3, fp = 2;
  Matrix x(1, f);
  x << 0.4, -0.2, 0.9;
  Matrix aprime = Matrix::Constant(1, 1, 1.0);
  std::vector<Matrix> head_w, head_a;
  for (int h = 0; h < 2; ++h) {
    Matrix hw(fp, f);
    for (int r = 0; r < fp; ++r)
      for (int c = 0; c < f; ++c) hw(r, c) = rng.normal();
    head_w.push_back(hw);
    head_a.push_back(Matrix::Constant(2 * fp, 1, 0.3));
  }
  Matrix w_out(1, 2 * fp);
  w_out << 1, 2, 3, 4;
  const Matrix got = gat_forward(x, aprime, head_w, head_a, w_out);
  Matrix concat(1, 2 * fp);
  concat << (head_w[0] * x.transpose()).transpose(), (head_w[1] * x.transpose()).transpose();
  CHECK((got - concat * w_out.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("hand-evaluated 2-node single-head attention") {
  // small enough to check against explicit scalar arithmetic
  Matrix x(2, 1);
  x << 1.0, 2.0;
  Matrix aprime(2, 2);
  aprime << 0.5, 0.5, 0.25, 0.75;
  std::vector<Matrix> head_w{(Matrix(1, 1) << 2.0).finished()};
  std::vector<Matrix> head_a{(Matrix(2, 1) << 0.3, -0.1).finished()};
  Matrix w_out = (Matrix(1, 1) << 1.5).finished();

  // z = (2, 4); u = 0.3 z, v = -0.1 z
  // score(i,j) = u_i + v_j -> rows: (0.6-0.2, 0.6-0.4) = (0.4, 0.2); (1.2-0.2, 1.2-0.4) = (1.0, 0.8)
  // pre = aprime .* score = (0.2, 0.1; 0.25, 0.6); all positive so LeakyReLU is identity
  const double e11 = std::exp(0.2), e12 = std::exp(0.1);
  const double e21 = std::exp(0.25), e22 = std::exp(0.6);
  const double o1 = (e11 * 2.0 + e12 * 4.0) / (e11 + e12) * 1.5;
  const double o2 = (e21 * 2.0 + e22 * 4.0) / (e21 + e22) * 1.5;
  const Matrix got = gat_forward(x, aprime, head_w, head_a, w_out);
  CHECK(got(0, 0) == doctest::Approx(o1).epsilon(1e-12));
  CHECK(got(1, 0) == doctest::Approx(o2).epsilon(1e-12));
}

TEST_CASE("gru zero-parameter fixed point and range invariant") {
  const int d = 4, n = 3;
  const Matrix z = Matrix::Zero(d, n), u = Matrix::Zero(d, d), b = Matrix::Zero(d, 1);
  std::vector<Matrix> inputs(6, Matrix::Ones(n, 1));
  const auto hs = gru_forward(inputs, z, u, z, u, z, u, b, b, b);
  for (const auto& h : hs) CHECK(h.cwiseAbs().maxCoeff() == 0.0);

  Rng rng(99);
  Matrix wz(d, n), uz(d, d), wr(d, n), ur(d, d), wh(d, n), uh(d, d);
  for (auto* m : {&wz, &wr, &wh})
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < n; ++c) (*m)(r, c) = rng.normal();
  for (auto* m : {&uz, &ur, &uh})
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) (*m)(r, c) = rng.normal();
  std::vector<Matrix> xs;
  for (int t = 0; t < 12; ++t) {
    Matrix x(n, 1);
    for (int i = 0; i < n; ++i) x(i, 0) = 3.0 * rng.normal();
    xs.push_back(x);
  }
  const auto hs2 = gru_forward(xs, wz, uz, wr, ur, wh, uh, b, b, b);
  for (const auto& h : hs2) {
    CHECK(h.maxCoeff() < 1.0);
    CHECK(h.minCoeff() > -1.0);
  }
  // oracle agreement
  const auto want = oracles::gru(xs, wz, uz, wr, ur, wh, uh, b, b, b);
  for (std::size_t t = 0; t < want.size(); ++t)
    CHECK((hs2[t] - want[t]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("two-step scalar gru matches hand evaluation") {
  const Matrix wz = (Matrix(1, 1) << 0.5).finished();
  const Matrix uz = (Matrix(1, 1) << -0.3).finished();
  const Matrix wr = (Matrix(1, 1) << 0.8).finished();
  const Matrix ur = (Matrix(1, 1) << 0.2).finished();
  const Matrix wh = (Matrix(1, 1) << 1.1).finished();
  const Matrix uh = (Matrix(1, 1) << -0.6).finished();
  const Matrix bz = (Matrix(1, 1) << 0.1).finished();
  const Matrix br = (Matrix(1, 1) << -0.2).finished();
  const Matrix bh = (Matrix(1, 1) << 0.05).finished();
  const std::vector<Matrix> xs{(Matrix(1, 1) << 0.7).finished(),
                               (Matrix(1, 1) << -0.4).finished()};
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  // step 1 (h0 = 0)
  const double z1 = sig(0.5 * 0.7 + 0.1);
  const double r1 = sig(0.8 * 0.7 - 0.2);
  const double hc1 = std::tanh(1.1 * 0.7 + 0.05);
  const double h1 = z1 * hc1;
  // step 2
  const double z2 = sig(0.5 * -0.4 - 0.3 * h1 + 0.1);
  const double r2 = sig(0.8 * -0.4 + 0.2 * h1 - 0.2);
  const double hc2 = std::tanh(1.1 * -0.4 - 0.6 * (h1 * r2) + 0.05);
  const double h2 = (1.0 - z2) * h1 + z2 * hc2;
  const auto hs = gru_forward(xs, wz, uz, wr, ur, wh, uh, bz, br, bh);
  CHECK(hs[0](0, 0) == doctest::Approx(h1).epsilon(1e-14));
  CHECK(hs[1](0, 0) == doctest::Approx(h2).epsilon(1e-14));
}

TEST_CASE("predict_last basics") {
  CHECK(predict_last(Matrix::Ones(3, 1), Matrix::Zero(2, 3), Matrix::Zero(2, 1)).isZero());
  Rng rng(6);
  Matrix w(2, 3), h(3, 1), b(2, 1);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) w(r, c) = 2.0 * rng.normal();
  for (int i = 0; i < 3; ++i) h(i, 0) = rng.normal();
  b << 0.3, -0.7;
  const Matrix out = predict_last(h, w, b);
  CHECK(out.maxCoeff() < 1.0);
  CHECK(out.minCoeff() > -1.0);
  CHECK((out - oracles::predict(h, w, b)).cwiseAbs().maxCoeff() < 1e-12);
  // hand-set 2x2 case
  Matrix w2(2, 2), h2(2, 1), b2(2, 1);
  w2 << 1, 0.5, -0.25, 2;
  h2 << 0.2, -0.4;
  b2 << 0.1, 0.0;
  const Matrix out2 = predict_last(h2, w2, b2);
  CHECK(out2(0, 0) == doctest::Approx(std::tanh(0.2 - 0.2 + 0.1)).epsilon(1e-14));
  CHECK(out2(1, 0) == doctest::Approx(std::tanh(-0.05 - 0.8)).epsilon(1e-14));
}

TEST_CASE("mse loss examples") {
  CHECK(mse_loss(Matrix::Ones(4, 1), Matrix::Ones(4, 1)) == 0.0);
  Matrix a(2, 1), b(2, 1);
  a << 1, 0;
  b << 0, 0;
  CHECK(mse_loss(a, b) == doctest::Approx(0.5));
  Rng rng(8);
  Matrix x(5, 1), y(5, 1);
  for (int i = 0; i < 5; ++i) {
    x(i, 0) = rng.normal();
    y(i, 0) = rng.normal();
  }
  CHECK(mse_loss(x, y) == doctest::Approx(oracles::loss(x, y)).epsilon(1e-14));
}

TEST_CASE("full forward matches the dual pipeline implementation") {
  // tiny end-to-end instance: N=4, theta=5, H=2, L=2
  const auto inst = oracles::make_random_instance(12345, 4, 5, 2, 2, 6);
  const auto got = forward(inst.stream(), inst.state);
  const auto want = oracles::pipeline(inst.stream(), inst.state);
  CHECK((got.prediction - want.prediction).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((got.filtered - want.filtered).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(got.prediction.rows() == 4);

  // purity: same stream twice
  const auto again = forward(inst.stream(), inst.state);
  CHECK((got.prediction - again.prediction).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention rows sum to one inside the full forward") {
  // indirectly: N=1-normalization is covered elsewhere; here via the oracle
  const auto inst = oracles::make_random_instance(777, 6, 4, 2, 3, 5);
  const Matrix aprime = gtn_forward(*inst.stream().adjacency, inst.state.params.gt_weights);
  for (int i = 0; i < 6; ++i) CHECK(aprime.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("channel permutation equivariance of forward") {
  const auto inst = oracles::make_random_instance(2024, 6, 6, 2, 2, 8);
  CHECK(oracles::permutation_equivariance_error(inst, 2) < 1e-10);
  CHECK(oracles::permutation_equivariance_error(inst, 5) < 1e-10);
}

TEST_CASE("analytic gradients match central finite differences") {
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    const auto inst = oracles::make_random_instance(seed, 5, 8, 2, 2, 6);
    const auto stats = oracles::gradient_check(inst);
    INFO("seed ", seed, " worst tensor ", stats.worst_tensor, " rel ", stats.worst_rel);
    CHECK(stats.worst_rel < 1e-4);
    CHECK(stats.checked > 300);
  }
}

TEST_CASE("zero-loss configurations produce zero gradients") {
  // zero output head predicts 0; a zero observed last snapshot matches it
  auto inst = oracles::make_random_instance(3, 4, 5, 2, 2, 4);
  inst.snapshots.col(4).setZero();
  inst.state.params.out_w.setZero();
  inst.state.params.out_b.setZero();
  ModelParams grads = ModelParams::shaped(inst.state.config);
  const double loss = forward_backward(inst.stream(), inst.state, grads);
  CHECK(loss == 0.0);
  grads.for_each([](const char*, Matrix& g) { CHECK(g.cwiseAbs().maxCoeff() == 0.0); });
}

TEST_CASE("training is deterministic and zero epochs keep the init") {
  std::vector<GraphStream> streams;
  const auto inst = oracles::make_random_instance(55, 4, 6, 2, 2, 6);
  // several windows sliced out of a longer random matrix
  Rng rng(66);
  Matrix x(4, 30);
  for (int i = 0; i < 4; ++i)
    for (int t = 0; t < 30; ++t) x(i, t) = rng.normal();
  for (int end = 5; end < 30; end += 3) streams.push_back(build_stream(x, inst.adjacency, end, 6));

  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.gt_layers = 2;
  cfg.heads = 2;
  cfg.hidden = 6;
  cfg.feature_dim = 4;
  cfg.head_dim = 4;
  cfg.seed = 9;
  const auto zero_run = train(streams, cfg);
  const auto fresh = ModelParams::init(zero_run.state.config, 9);
  auto a = zero_run.state.params;
  auto b = fresh;
  auto at = a.all_tensors();
  auto bt = b.all_tensors();
  for (std::size_t i = 0; i < at.size(); ++i)
    CHECK((*at[i] - *bt[i]).cwiseAbs().maxCoeff() == 0.0);

  cfg.epochs = 3;
  const auto run1 = train(streams, cfg);
  const auto run2 = train(streams, cfg);
  auto p1 = run1.state.params;
  auto p2 = run2.state.params;
  auto t1 = p1.all_tensors();
  auto t2 = p2.all_tensors();
  for (std::size_t i = 0; i < t1.size(); ++i)
    CHECK((*t1[i] - *t2[i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(run1.epoch_loss == run2.epoch_loss);
  CHECK(run1.epoch_loss.size() == 3);
}

TEST_CASE("model state JSON round-trip preserves forward outputs exactly") {
  const auto inst = oracles::make_random_instance(91, 5, 5, 2, 2, 7);
  const ModelState restored = ModelState::from_json(inst.state.to_json());
  const auto a = forward(inst.stream(), inst.state);
  const auto b = forward(inst.stream(), restored);
  CHECK((a.prediction - b.prediction).cwiseAbs().maxCoeff() == 0.0);
  CHECK(restored.step == inst.state.step);
}
