#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <utility>
#include <vector>

#include "doctest.h"
#include "latentdyn/common.hpp"
#include "latentdyn/vqvae.hpp"

using namespace latentdyn;

namespace {

Vec flat_params(const VqVaeModel& m) { return pack(param_spans(m)); }

Vec flat_grads(const VqVaeModel& m, const VqGrads& g) {
  std::vector<std::span<const double>> parts = grad_spans(g.encoder);
  parts.emplace_back(g.codebook.data);
  if (m.recon_decoder) {
    auto d = grad_spans(g.recon);
    parts.insert(parts.end(), d.begin(), d.end());
  }
  if (m.pred_decoder) {
    auto d = grad_spans(g.pred);
    parts.insert(parts.end(), d.begin(), d.end());
  }
  return pack(parts);
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

// Exhaustive scan with first-strict-minimum tie policy, coded independently.
std::vector<std::size_t> brute_force_indices(const CodeBook& cb, const Vec& z_e) {
  const std::size_t d = cb.code_dim();
  const std::size_t groups = z_e.size() / d;
  std::vector<std::size_t> out(groups, 0);
  for (std::size_t g = 0; g < groups; ++g) {
    double best = 1e300;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < cb.num_codes(); ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = z_e[g * d + j] - cb.embeddings(k, j);
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        best_k = k;
      }
    }
    out[g] = best_k;
  }
  return out;
}

std::vector<WindowSample> toy_samples(std::size_t count, std::size_t h,
                                      std::size_t n, Rng& rng) {
  std::vector<WindowSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    WindowSample w;
    w.x = rng.gaussian_vec(3 * h * n);
    w.y_next = rng.gaussian_vec(2 * n);
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

TEST_CASE("quantize: picks the nearer row") {
  CodeBook cb;
  cb.embeddings = Matrix(2, 2);
  cb.embeddings(0, 0) = 0.0;
  cb.embeddings(0, 1) = 0.0;
  cb.embeddings(1, 0) = 1.0;
  cb.embeddings(1, 1) = 1.0;
  Quantized q = quantize(cb, Vec{0.2, 0.1});
  CHECK(q.indices == std::vector<std::size_t>{0});
  CHECK(q.z_q == Vec{0.0, 0.0});
}

TEST_CASE("quantize: codebook row is a fixed point") {
  Rng rng(4);
  CodeBook cb = make_codebook(8, 3, rng);
  const std::size_t k = 5;
  Vec z_e(cb.embeddings.row(k).begin(), cb.embeddings.row(k).end());
  Quantized q = quantize(cb, z_e);
  CHECK(q.indices[0] == k);
  CHECK(q.z_q == z_e);
}

TEST_CASE("quantize: ties break to the lowest index") {
  CodeBook cb;
  cb.embeddings = Matrix(3, 1);
  cb.embeddings(0, 0) = 0.0;
  cb.embeddings(1, 0) = 2.0;
  cb.embeddings(2, 0) = 2.0;  // duplicate row
  Quantized mid = quantize(cb, Vec{1.0});  // equidistant from rows 0 and 1
  CHECK(mid.indices[0] == 0);
  Quantized dup = quantize(cb, Vec{2.0});  // rows 1 and 2 both exact
  CHECK(dup.indices[0] == 1);
}

TEST_CASE("quantize: matches brute force on random pairs") {
  Rng rng(9);
  // The fixed K=16, D=4, G=3 case plus random shapes up to K=64.
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = trial == 0 ? 16 : 2 + rng.below(63);
    const std::size_t d = trial == 0 ? 4 : 1 + rng.below(6);
    const std::size_t g = trial == 0 ? 3 : 1 + rng.below(4);
    CodeBook cb = make_codebook(k, d, rng);
    Vec z_e = rng.gaussian_vec(g * d);
    for (double& v : z_e) v *= 0.1;  // same scale as the codebook init
    Quantized q = quantize(cb, z_e);
    CHECK(q.indices == brute_force_indices(cb, z_e));
    for (std::size_t grp = 0; grp < g; ++grp)
      for (std::size_t j = 0; j < d; ++j)
        CHECK(q.z_q[grp * d + j] == cb.embeddings(q.indices[grp], j));
  }
}

TEST_CASE("make_codebook: K below 2 rejected") {
  Rng rng(1);
  CHECK_THROWS_AS(make_codebook(1, 3, rng), Error);
}

TEST_CASE("vq_loss: on-row latent and zero targets give zero loss") {
  Rng rng(11);
  VqVaeModel m = make_vqvae(1, 1, 2, 2, 4, DecoderMode::kBoth, 0.25, 1.0, rng, {4});
  for (auto span : param_spans(m)) std::fill(span.begin(), span.end(), 0.0);
  // Encoder output 0 and codebook row 0 = zero vector: z_e sits on a row.
  Vec x(m.input_dim(), 0.0), y(m.target_dim(), 0.0);
  VqLossBreakdown lb = vq_loss(m, x, y);
  CHECK(lb.total == 0.0);
  CHECK(lb.codebook == 0.0);
  CHECK(lb.commit == 0.0);
  CHECK(lb.recon == 0.0);
  CHECK(lb.pred == 0.0);
}

TEST_CASE("vq_loss: codebook equals commit over beta") {
  Rng rng(12);
  VqVaeModel m = make_vqvae(2, 2, 3, 2, 8, DecoderMode::kBoth, 0.25, 1.0, rng, {5});
  for (int trial = 0; trial < 20; ++trial) {
    Vec x = rng.gaussian_vec(m.input_dim());
    Vec y = rng.gaussian_vec(m.target_dim());
    VqLossBreakdown lb = vq_loss(m, x, y);
    CHECK(lb.codebook >= 0.0);
    CHECK(lb.commit >= 0.0);
    CHECK(lb.codebook == doctest::Approx(lb.commit / m.beta_commit).epsilon(1e-12));
  }
}

TEST_CASE("straight_through: forward equals z_q") {
  Vec z_e{0.1, 0.2, 0.3};
  Vec z_q{1.0, 2.0, 3.0};
  CHECK(straight_through(z_e, z_q) == z_q);
}

TEST_CASE("straight_through: encoder output gradient equals decoder input gradient") {
  // With an identity encoder and beta_commit=0 the encoder bias gradient is
  // exactly the gradient flowing into the decoder input.
  Rng rng(13);
  VqVaeModel m = make_vqvae(1, 1, 3, 1, 4, DecoderMode::kPred, 0.0, 1.0, rng, {4});
  // Rebuild the encoder as a single identity layer 3 -> 3.
  DenseLayer ident;
  ident.w = Matrix(3, 3);
  for (std::size_t i = 0; i < 3; ++i) ident.w(i, i) = 1.0;
  ident.b = Vec(3, 0.0);
  ident.act = Activation::kIdentity;
  m.encoder.layers = {ident};

  Vec x{0.4, -0.2, 0.7};
  Vec y = rng.gaussian_vec(m.target_dim());
  VqGrads grads = zero_grads(m);
  vq_loss_grad(m, x, y, grads);

  // Independent decoder-side gradient at z_q.
  Quantized q = encode_quantize(m, x);
  ForwardTape tape;
  Vec out = forward(*m.pred_decoder, q.z_q, &tape);
  Vec dout(out.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    dout[i] = 2.0 * (out[i] - y[i]) / static_cast<double>(out.size());
  NetGrads dec_grads = zero_grads(*m.pred_decoder);
  Vec dz = backward(*m.pred_decoder, tape, dout, dec_grads);

  REQUIRE(grads.encoder.layers.size() == 1);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(grads.encoder.layers[0].db[i] == doctest::Approx(dz[i]).epsilon(1e-15));
}

TEST_CASE("vq gradients match finite differences of the surrogate objective") {
  for (DecoderMode mode :
       {DecoderMode::kRecon, DecoderMode::kPred, DecoderMode::kBoth}) {
    Rng rng(21);
    VqVaeModel m = make_vqvae(2, 1, 2, 2, 4, mode, 0.25, 1.3, rng, {3});
    Vec x = rng.gaussian_vec(m.input_dim());
    Vec y = rng.gaussian_vec(m.target_dim());

    VqGrads grads = zero_grads(m);
    vq_loss_grad(m, x, y, grads);
    Vec analytic = flat_grads(m, grads);

    // Freeze the quantization decisions at the base point: the surrogate
    // keeps the straight-through offset, the selected rows, and the sg()
    // constants fixed while parameters move.
    const Quantized base_q = encode_quantize(m, x);
    const Vec base_ze = forward(m.encoder, x);
    Vec st_offset(base_ze.size());
    for (std::size_t i = 0; i < base_ze.size(); ++i)
      st_offset[i] = base_q.z_q[i] - base_ze[i];

    const std::size_t d = m.code_dim;
    auto surrogate = [&](const VqVaeModel& model) {
      const Vec z_e = forward(model.encoder, x);
      Vec z_dec(z_e.size());
      for (std::size_t i = 0; i < z_e.size(); ++i)
        z_dec[i] = z_e[i] + st_offset[i];
      double total = 0.0;
      if (model.recon_decoder && model.mode != DecoderMode::kPred) {
        Vec xh = forward(*model.recon_decoder, z_dec);
        double mse = 0.0;
        for (std::size_t i = 0; i < xh.size(); ++i)
          mse += (xh[i] - x[i]) * (xh[i] - x[i]);
        total += mse / static_cast<double>(xh.size());
      }
      if (model.pred_decoder && model.mode != DecoderMode::kRecon) {
        Vec yh = forward(*model.pred_decoder, z_dec);
        double mse = 0.0;
        for (std::size_t i = 0; i < yh.size(); ++i)
          mse += (yh[i] - y[i]) * (yh[i] - y[i]);
        total += model.lambda_pred * mse / static_cast<double>(yh.size());
      }
      // Codebook term: selected rows move toward the frozen z_e.
      for (std::size_t g = 0; g < m.num_groups; ++g) {
        const auto row = model.codebook.embeddings.row(base_q.indices[g]);
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = base_ze[g * d + j] - row[j];
          total += diff * diff;
        }
      }
      // Commitment term: z_e moves toward the frozen z_q.
      for (std::size_t i = 0; i < z_e.size(); ++i) {
        const double diff = z_e[i] - base_q.z_q[i];
        total += m.beta_commit * diff * diff;
      }
      return total;
    };

    auto spans = param_spans(m);
    Vec flat = flat_params(m);
    Vec numeric(flat.size());
    const double h = 1e-5;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      Vec plus = flat, minus = flat;
      plus[i] += h;
      minus[i] -= h;
      unpack(plus, spans);
      const double fp = surrogate(m);
      unpack(minus, spans);
      const double fm = surrogate(m);
      unpack(flat, spans);
      numeric[i] = (fp - fm) / (2.0 * h);
    }
    CHECK(max_rel_err(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("train_vqvae: one step moves the encoder despite constant z_q") {
  Rng rng(23);
  VqVaeModel init = make_vqvae(1, 1, 2, 1, 4, DecoderMode::kPred, 0.25, 1.0, rng, {4});
  // Near-identical tiny inputs collapse every sample onto the same code.
  Rng drng(24);
  std::vector<WindowSample> data;
  for (int i = 0; i < 8; ++i) {
    WindowSample w;
    w.x = Vec(init.input_dim(), 1e-4 * static_cast<double>(i));
    w.y_next = Vec(init.target_dim(), 1.0);
    data.push_back(std::move(w));
  }
  std::set<std::size_t> codes;
  for (const auto& w : data) codes.insert(encode_quantize(init, w.x).indices[0]);
  REQUIRE(codes.size() == 1);

  TrainOptions opt;
  opt.epochs = 1;
  opt.batch = 8;
  VqTrainResult r = train_vqvae(init, data, data, opt);
  Vec before = pack(param_spans(std::as_const(init).encoder));
  Vec after = pack(param_spans(std::as_const(r.model).encoder));
  CHECK(before != after);
}

TEST_CASE("train_vqvae: epochs=0 identity and seed determinism") {
  Rng rng(25);
  VqVaeModel init = make_vqvae(2, 2, 2, 3, 8, DecoderMode::kBoth, 0.25, 1.0, rng, {6});
  Rng drng(26);
  auto train = toy_samples(10, 2, 2, drng);
  auto val = toy_samples(4, 2, 2, drng);

  TrainOptions none;
  none.epochs = 0;
  VqTrainResult zero = train_vqvae(init, train, val, none);
  CHECK(zero.history.empty());
  CHECK(flat_params(zero.model) == flat_params(init));

  TrainOptions opt;
  opt.epochs = 3;
  opt.batch = 4;
  opt.seed = 31;
  VqTrainResult a = train_vqvae(init, train, val, opt);
  VqTrainResult b = train_vqvae(init, train, val, opt);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train.total == b.history[i].train.total);
    CHECK(a.history[i].val.total == b.history[i].val.total);
  }
  CHECK(flat_params(a.model) == flat_params(b.model));
}

TEST_CASE("train_vqvae: multiple codes stay active on spread data") {
  Rng rng(27);
  VqVaeModel init = make_vqvae(2, 1, 2, 2, 8, DecoderMode::kRecon, 0.25, 1.0, rng);
  Rng drng(28);
  std::vector<WindowSample> train, val;
  for (int i = 0; i < 40; ++i) {
    WindowSample w;
    const double center = i % 2 == 0 ? 1.0 : -1.0;
    w.x = drng.gaussian_vec(init.input_dim());
    for (double& v : w.x) v = center + 0.2 * v;
    w.y_next = Vec(init.target_dim(), 0.0);
    (i < 32 ? train : val).push_back(std::move(w));
  }
  TrainOptions opt;
  opt.epochs = 60;
  opt.batch = 8;
  VqTrainResult r = train_vqvae(init, train, val, opt);
  CHECK(count_active_codes(r.model, val) >= 2);
  CHECK(r.history.back().train.total < r.history.front().train.total);
}

TEST_CASE("latent_features: quantized, correct length, rows from the codebook") {
  Rng rng(29);
  VqVaeModel m = make_vqvae(2, 2, 2, 10, 16, DecoderMode::kBoth, 0.25, 1.0, rng);
  Vec x = rng.gaussian_vec(m.input_dim());
  Vec f1 = latent_features(m, x);
  Vec f2 = latent_features(m, x);
  CHECK(f1.size() == 20);  // D*G = 2*10
  CHECK(f1 == f2);
  // Every D-sized group must be an exact codebook row.
  for (std::size_t g = 0; g < m.num_groups; ++g) {
    bool found = false;
    for (std::size_t k = 0; k < m.codebook.num_codes() && !found; ++k) {
      bool equal = true;
      for (std::size_t j = 0; j < m.code_dim; ++j)
        equal = equal && f1[g * m.code_dim + j] == m.codebook.embeddings(k, j);
      found = equal;
    }
    CHECK(found);
  }
}

TEST_CASE("vqvae json round-trip preserves everything") {
  Rng rng(30);
  VqVaeModel m = make_vqvae(2, 2, 3, 2, 8, DecoderMode::kBoth, 0.25, 1.4, rng, {6});
  m.norm.mean = Vec(6, -0.5);
  m.norm.std = Vec(6, 1.5);
  VqVaeModel back = vqvae_from_json(vqvae_to_json(m, 0.5));
  CHECK(back.code_dim == m.code_dim);
  CHECK(back.num_groups == m.num_groups);
  CHECK(back.codebook.num_codes() == m.codebook.num_codes());
  CHECK(back.mode == m.mode);
  CHECK(back.beta_commit == m.beta_commit);
  CHECK(back.lambda_pred == m.lambda_pred);
  CHECK(back.norm.mean == m.norm.mean);
  CHECK(flat_params(back) == flat_params(m));
  Vec x = rng.gaussian_vec(m.input_dim());
  CHECK(latent_features(back, x) == latent_features(m, x));
}
