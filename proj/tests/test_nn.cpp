#include <cmath>
#include <cstddef>
#include <vector>

#include "doctest.h"
#include "latentdyn/common.hpp"
#include "latentdyn/nn.hpp"

using namespace latentdyn;

namespace {

// Forward pass as straight loops, no shared code with the library path.
Vec naive_forward(const DenseNet& net, const Vec& x) {
  Vec cur = x;
  for (const auto& layer : net.layers) {
    Vec next(layer.w.rows, 0.0);
    for (std::size_t i = 0; i < layer.w.rows; ++i) {
      double acc = layer.b[i];
      for (std::size_t j = 0; j < layer.w.cols; ++j) acc += layer.w(i, j) * cur[j];
      if (layer.act == Activation::kRelu && acc < 0.0) acc = 0.0;
      next[i] = acc;
    }
    cur = next;
  }
  return cur;
}

double scalar_loss(const DenseNet& net, const Vec& x, const Vec& coeffs) {
  Vec y = forward(net, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += coeffs[i] * y[i];
  return s;
}

// Central finite differences over the flat parameter vector.
Vec fd_param_grad(DenseNet net, const Vec& x, const Vec& coeffs, double h) {
  auto spans = param_spans(net);
  Vec flat = pack({spans.begin(), spans.end()});
  Vec g(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    Vec plus = flat, minus = flat;
    plus[i] += h;
    minus[i] -= h;
    unpack(plus, spans);
    const double fp = scalar_loss(net, x, coeffs);
    unpack(minus, spans);
    const double fm = scalar_loss(net, x, coeffs);
    unpack(flat, spans);
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const Vec& a, const Vec& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-3});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

DenseLayer identity_layer(std::size_t n) {
  DenseLayer l;
  l.w = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) l.w(i, i) = 1.0;
  l.b = Vec(n, 0.0);
  l.act = Activation::kIdentity;
  return l;
}

}  // namespace

TEST_CASE("forward: identity layer passes input through") {
  DenseNet net;
  net.layers.push_back(identity_layer(2));
  Vec y = forward(net, Vec{1.0, 2.0});
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("forward: relu clips negatives") {
  DenseNet net;
  DenseLayer l;
  l.w = Matrix(1, 1);
  l.w(0, 0) = -1.0;
  l.b = Vec{0.0};
  l.act = Activation::kRelu;
  net.layers.push_back(l);
  Vec y = forward(net, Vec{3.0});
  CHECK(y[0] == 0.0);
}

TEST_CASE("forward: seeded 2x40x40 net matches straight-loop oracle") {
  Rng rng(7);
  DenseNet net = make_mlp(2, {40, 40}, 3, rng);
  Vec x{0.4, -1.3};
  Vec got = forward(net, x);
  Vec want = naive_forward(net, x);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("forward: dimension mismatch names the layer") {
  Rng rng(1);
  DenseNet net = make_mlp(3, {4}, 2, rng);
  try {
    forward(net, Vec{1.0, 2.0});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer") != std::string::npos);
  }
}

TEST_CASE("backward: identity layer derivative") {
  DenseNet net;
  net.layers.push_back(identity_layer(1));
  ForwardTape tape;
  forward(net, Vec{2.5}, &tape);
  NetGrads grads = zero_grads(net);
  Vec dx = backward(net, tape, Vec{1.0}, grads);
  CHECK(grads.layers[0].dw(0, 0) == 2.5);  // weight grad = input
  CHECK(grads.layers[0].db[0] == 1.0);
  CHECK(dx[0] == 1.0);
}

TEST_CASE("backward: dead relu zeroes grads exactly") {
  DenseNet net;
  DenseLayer l;
  l.w = Matrix(1, 1);
  l.w(0, 0) = -1.0;
  l.b = Vec{0.0};
  l.act = Activation::kRelu;
  net.layers.push_back(l);
  ForwardTape tape;
  forward(net, Vec{3.0}, &tape);  // pre-activation -3 -> clipped
  NetGrads grads = zero_grads(net);
  Vec dx = backward(net, tape, Vec{1.0}, grads);
  CHECK(grads.layers[0].dw(0, 0) == 0.0);
  CHECK(grads.layers[0].db[0] == 0.0);
  CHECK(dx[0] == 0.0);
}

TEST_CASE("backward: relu zeroes exactly the clipped coordinates") {
  Rng rng(11);
  DenseNet net = make_mlp(5, {13}, 4, rng);
  Vec x = rng.gaussian_vec(5);
  ForwardTape tape;
  forward(net, x, &tape);
  NetGrads grads = zero_grads(net);
  Vec ones(4, 1.0);
  backward(net, tape, ones, grads);
  // Hidden layer 0 is relu; rows whose pre-activation was <= 0 must have
  // exactly zero weight and bias grads.
  for (std::size_t i = 0; i < 13; ++i) {
    const bool dead = tape.pre[0][i] <= 0.0;
    if (!dead) continue;
    CHECK(grads.layers[0].db[i] == 0.0);
    for (std::size_t j = 0; j < 5; ++j) CHECK(grads.layers[0].dw(i, j) == 0.0);
  }
}

TEST_CASE("backward: finite-difference oracle on random nets") {
  Rng rng(23);
  const std::vector<std::vector<std::size_t>> hiddens = {{}, {7}, {17, 40}};
  for (const auto& hidden : hiddens) {
    DenseNet net = make_mlp(6, hidden, 3, rng);
    Vec x = rng.gaussian_vec(6);
    Vec coeffs = rng.gaussian_vec(3);
    ForwardTape tape;
    forward(net, x, &tape);
    NetGrads grads = zero_grads(net);
    backward(net, tape, coeffs, grads);
    auto gs = grad_spans(grads);
    Vec analytic = pack({gs.begin(), gs.end()});
    Vec numeric = fd_param_grad(net, x, coeffs, 1e-5);
    CHECK(max_rel_err(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("backward: stale tape rejected") {
  Rng rng(3);
  DenseNet net = make_mlp(3, {4}, 2, rng);
  DenseNet other = make_mlp(5, {4}, 2, rng);
  ForwardTape tape;
  forward(other, Vec(5, 0.5), &tape);
  NetGrads grads = zero_grads(net);
  CHECK_THROWS_AS(backward(net, tape, Vec{1.0, 1.0}, grads), Error);
}

TEST_CASE("adam: zero gradients are a fixed point") {
  AdamState s;
  Vec params{0.7, -0.3};
  Vec grads{0.0, 0.0};
  adam_step(s, params, grads);
  CHECK(params[0] == 0.7);
  CHECK(params[1] == -0.3);
  CHECK(s.m[0] == 0.0);
  CHECK(s.v[0] == 0.0);
  CHECK(s.step_count == 1);
}

TEST_CASE("adam: first step matches hand-evaluated update") {
  AdamState s;
  Vec params{0.0};
  Vec grads{1.0};
  adam_step(s, params, grads);
  // m_hat = v_hat = 1 after bias correction, so delta = -lr/(1+eps).
  const double want = -5e-4 / (1.0 + 1e-8);
  CHECK(std::abs(params[0] - want) < 1e-18);
}

TEST_CASE("adam: repeated unit gradients move parameter monotonically down") {
  AdamState s;
  Vec params{1.0};
  Vec grads{1.0};
  double prev = params[0];
  for (int i = 0; i < 2; ++i) {
    adam_step(s, params, grads);
    CHECK(params[0] < prev);
    prev = params[0];
  }
}

TEST_CASE("adam: non-finite gradient aborts") {
  AdamState s;
  Vec params{0.0};
  Vec grads{std::nan("")};
  CHECK_THROWS_AS(adam_step(s, params, grads), Error);
}

TEST_CASE("adam: fixed seed gives bit-identical parameter trajectories") {
  auto run = [] {
    Rng rng(99);
    DenseNet net = make_mlp(4, {6}, 2, rng);
    AdamState s;
    auto spans = param_spans(net);
    Vec flat = pack({spans.begin(), spans.end()});
    Rng grng(5);
    for (int step = 0; step < 17; ++step) {
      Vec g = grng.gaussian_vec(flat.size());
      adam_step(s, flat, g);
    }
    return flat;
  };
  Vec a = run();
  Vec b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("rng: gaussian_vec basics") {
  Rng rng(42);
  CHECK(rng.gaussian_vec(0).empty());

  Rng r1(123), r2(123);
  Vec a = r1.gaussian_vec(64);
  Vec b = r2.gaussian_vec(64);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("rng: 1e5 draws have unit moments") {
  Rng rng(2024);
  const std::size_t n = 100000;
  Vec draws = rng.gaussian_vec(n);
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double d : draws) var += (d - mean) * (d - mean);
  var /= static_cast<double>(n);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 0.02);
}

TEST_CASE("rng: derive_seed decorrelates indices") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}

TEST_CASE("pack/unpack round-trips parameters") {
  Rng rng(8);
  DenseNet net = make_mlp(3, {5}, 2, rng);
  auto spans = param_spans(net);
  Vec flat = pack({spans.begin(), spans.end()});
  CHECK(flat.size() == net.param_count());
  Vec doubled = flat;
  for (double& v : doubled) v *= 2.0;
  unpack(doubled, spans);
  auto spans2 = param_spans(net);
  Vec flat2 = pack({spans2.begin(), spans2.end()});
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(flat2[i] == 2.0 * flat[i]);
}

TEST_CASE("net json round-trip is exact") {
  Rng rng(55);
  DenseNet net = make_mlp(4, {9}, 3, rng);
  DenseNet back = net_from_json(net_to_json(net));
  REQUIRE(back.layers.size() == net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    CHECK(back.layers[l].act == net.layers[l].act);
    for (std::size_t i = 0; i < net.layers[l].w.data.size(); ++i)
      CHECK(back.layers[l].w.data[i] == net.layers[l].w.data[i]);
    for (std::size_t i = 0; i < net.layers[l].b.size(); ++i)
      CHECK(back.layers[l].b[i] == net.layers[l].b[i]);
  }
  Vec x{0.1, -0.2, 0.3, 0.4};
  Vec y1 = forward(net, x);
  Vec y2 = forward(back, x);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}
