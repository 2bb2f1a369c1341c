#include "latentdyn/vqvae.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "latentdyn/common.hpp"

namespace latentdyn {

namespace {

bool recon_active(DecoderMode m) {
  return m == DecoderMode::kRecon || m == DecoderMode::kBoth;
}

bool pred_active(DecoderMode m) {
  return m == DecoderMode::kPred || m == DecoderMode::kBoth;
}

void check_decoders(const VqVaeModel& m) {
  if (recon_active(m.mode)) {
    require(m.recon_decoder.has_value(),
            "vqvae: mode " + mode_name(m.mode) + " needs a recon decoder");
  }
  if (pred_active(m.mode)) {
    require(m.pred_decoder.has_value(),
            "vqvae: mode " + mode_name(m.mode) + " needs a pred decoder");
  }
}

double mse(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), "mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace

CodeBook make_codebook(std::size_t k, std::size_t d, Rng& rng) {
  require(k >= 2, "make_codebook: need at least 2 codes");
  require(d >= 1, "make_codebook: code dim must be >= 1");
  CodeBook cb;
  cb.embeddings = Matrix(k, d);
  for (double& v : cb.embeddings.data) v = 0.1 * rng.gaussian();
  return cb;
}

VqVaeModel make_vqvae(std::size_t h, std::size_t n, std::size_t code_dim,
                      std::size_t num_groups, std::size_t num_codes,
                      DecoderMode mode, double beta_commit, double lambda_pred,
                      Rng& rng, const std::vector<std::size_t>& hidden) {
  require(code_dim >= 1 && num_groups >= 1, "make_vqvae: bad latent shape");
  VqVaeModel m;
  m.window = h;
  m.n_joints = n;
  m.code_dim = code_dim;
  m.num_groups = num_groups;
  m.mode = mode;
  m.beta_commit = beta_commit;
  m.lambda_pred = lambda_pred;
  const std::size_t latent = code_dim * num_groups;
  m.encoder = make_mlp(3 * h * n, hidden, latent, rng);
  if (recon_active(mode)) {
    m.recon_decoder = make_mlp(latent, hidden, 3 * h * n, rng);
  }
  if (pred_active(mode)) {
    m.pred_decoder = make_mlp(latent, hidden, 2 * n, rng);
  }
  m.codebook = make_codebook(num_codes, code_dim, rng);
  return m;
}

Quantized quantize(const CodeBook& cb, std::span<const double> z_e) {
  const std::size_t d = cb.code_dim();
  const std::size_t k = cb.num_codes();
  require(d > 0 && z_e.size() % d == 0,
          "quantize: pre-latent length not divisible by code dim");
  const std::size_t groups = z_e.size() / d;
  Quantized out;
  out.indices.resize(groups);
  out.z_q.resize(z_e.size());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::span<const double> ze = z_e.subspan(g * d, d);
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t row = 0; row < k; ++row) {
      const double dist = squared_distance(ze, cb.embeddings.row(row));
      if (dist < best_dist) {
        best_dist = dist;
        best = row;
      }
    }
    out.indices[g] = best;
    const auto e = cb.embeddings.row(best);
    for (std::size_t i = 0; i < d; ++i) out.z_q[g * d + i] = e[i];
  }
  return out;
}

Vec straight_through(std::span<const double> z_e, std::span<const double> z_q) {
  require(z_e.size() == z_q.size(), "straight_through: shape mismatch");
  return Vec(z_q.begin(), z_q.end());
}

Quantized encode_quantize(const VqVaeModel& m, std::span<const double> x) {
  require(x.size() == m.input_dim(), "encode_quantize: input dim mismatch");
  const Vec z_e = forward(m.encoder, x);
  return quantize(m.codebook, z_e);
}

VqGrads zero_grads(const VqVaeModel& m) {
  VqGrads g;
  g.encoder = zero_grads(m.encoder);
  if (m.recon_decoder) g.recon = zero_grads(*m.recon_decoder);
  if (m.pred_decoder) g.pred = zero_grads(*m.pred_decoder);
  g.codebook = Matrix(m.codebook.num_codes(), m.codebook.code_dim());
  return g;
}

namespace {

VqLossBreakdown finish_loss(const VqVaeModel& m, VqLossBreakdown lb) {
  lb.total = (recon_active(m.mode) ? lb.recon : 0.0) +
             (pred_active(m.mode) ? m.lambda_pred * lb.pred : 0.0) +
             lb.codebook + lb.commit;
  return lb;
}

}  // namespace

VqLossBreakdown vq_loss(const VqVaeModel& m, std::span<const double> x,
                        std::span<const double> y_next) {
  check_decoders(m);
  require(x.size() == m.input_dim(), "vq_loss: input dim mismatch");
  const Vec z_e = forward(m.encoder, x);
  const Quantized q = quantize(m.codebook, z_e);
  VqLossBreakdown lb;
  const double gap = squared_distance(z_e, q.z_q);
  lb.codebook = gap;
  lb.commit = m.beta_commit * gap;
  if (recon_active(m.mode)) {
    const Vec xh = forward(*m.recon_decoder, q.z_q);
    lb.recon = mse(xh, x);
  }
  if (pred_active(m.mode)) {
    require(y_next.size() == m.target_dim(), "vq_loss: target dim mismatch");
    const Vec yh = forward(*m.pred_decoder, q.z_q);
    lb.pred = mse(yh, y_next);
  }
  return finish_loss(m, lb);
}

VqLossBreakdown vq_loss_grad(const VqVaeModel& m, std::span<const double> x,
                             std::span<const double> y_next, VqGrads& grads) {
  check_decoders(m);
  require(x.size() == m.input_dim(), "vq_loss_grad: input dim mismatch");
  require(grads.codebook.rows == m.codebook.num_codes() &&
              grads.codebook.cols == m.codebook.code_dim(),
          "vq_loss_grad: codebook grad shape mismatch");

  ForwardTape enc_tape;
  const Vec z_e = forward(m.encoder, x, &enc_tape);
  const Quantized q = quantize(m.codebook, z_e);

  VqLossBreakdown lb;
  const double gap = squared_distance(z_e, q.z_q);
  lb.codebook = gap;
  lb.commit = m.beta_commit * gap;

  Vec dz(z_e.size(), 0.0);
  if (recon_active(m.mode)) {
    ForwardTape tape;
    const Vec xh = forward(*m.recon_decoder, q.z_q, &tape);
    lb.recon = mse(xh, x);
    Vec dout(xh.size());
    const double scale = 2.0 / static_cast<double>(xh.size());
    for (std::size_t i = 0; i < xh.size(); ++i)
      dout[i] = scale * (xh[i] - x[i]);
    const Vec d = backward(*m.recon_decoder, tape, dout, grads.recon);
    axpy(1.0, d, dz);
  }
  if (pred_active(m.mode)) {
    require(y_next.size() == m.target_dim(),
            "vq_loss_grad: target dim mismatch");
    ForwardTape tape;
    const Vec yh = forward(*m.pred_decoder, q.z_q, &tape);
    lb.pred = mse(yh, y_next);
    Vec dout(yh.size());
    const double scale =
        2.0 * m.lambda_pred / static_cast<double>(yh.size());
    for (std::size_t i = 0; i < yh.size(); ++i)
      dout[i] = scale * (yh[i] - y_next[i]);
    const Vec d = backward(*m.pred_decoder, tape, dout, grads.pred);
    axpy(1.0, d, dz);
  }

  // Straight-through: decoder gradient lands on z_e unchanged; the
  // commitment term adds 2*beta*(z_e - z_q).
  for (std::size_t i = 0; i < dz.size(); ++i) {
    dz[i] += 2.0 * m.beta_commit * (z_e[i] - q.z_q[i]);
  }
  backward(m.encoder, enc_tape, dz, grads.encoder);

  // Codebook loss moves only the selected rows, toward z_e.
  const std::size_t d = m.code_dim;
  for (std::size_t g = 0; g < q.indices.size(); ++g) {
    const auto grow = grads.codebook.row(q.indices[g]);
    for (std::size_t i = 0; i < d; ++i) {
      grow[i] += 2.0 * (q.z_q[g * d + i] - z_e[g * d + i]);
    }
  }

  return finish_loss(m, lb);
}

std::vector<std::span<double>> param_spans(VqVaeModel& m) {
  std::vector<std::span<double>> out = param_spans(m.encoder);
  out.emplace_back(m.codebook.embeddings.data);
  if (m.recon_decoder) {
    auto d = param_spans(*m.recon_decoder);
    out.insert(out.end(), d.begin(), d.end());
  }
  if (m.pred_decoder) {
    auto d = param_spans(*m.pred_decoder);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::vector<std::span<const double>> param_spans(const VqVaeModel& m) {
  std::vector<std::span<const double>> out = param_spans(m.encoder);
  out.emplace_back(m.codebook.embeddings.data);
  if (m.recon_decoder) {
    auto d = param_spans(*m.recon_decoder);
    out.insert(out.end(), d.begin(), d.end());
  }
  if (m.pred_decoder) {
    auto d = param_spans(*m.pred_decoder);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

namespace {

std::vector<std::span<const double>> grad_spans_for(const VqVaeModel& m,
                                                    const VqGrads& g) {
  std::vector<std::span<const double>> out = grad_spans(g.encoder);
  out.emplace_back(g.codebook.data);
  if (m.recon_decoder) {
    auto d = grad_spans(g.recon);
    out.insert(out.end(), d.begin(), d.end());
  }
  if (m.pred_decoder) {
    auto d = grad_spans(g.pred);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

void scale_grads(VqGrads& g, double s) {
  g.encoder.scale(s);
  g.recon.scale(s);
  g.pred.scale(s);
  for (double& v : g.codebook.data) v *= s;
}

void accumulate(VqLossBreakdown& acc, const VqLossBreakdown& lb) {
  acc.total += lb.total;
  acc.recon += lb.recon;
  acc.pred += lb.pred;
  acc.codebook += lb.codebook;
  acc.commit += lb.commit;
}

void scale_loss(VqLossBreakdown& acc, double s) {
  acc.total *= s;
  acc.recon *= s;
  acc.pred *= s;
  acc.codebook *= s;
  acc.commit *= s;
}

VqLossBreakdown mean_loss(const VqVaeModel& m,
                          std::span<const WindowSample> data) {
  VqLossBreakdown acc;
  for (const WindowSample& w : data) accumulate(acc, vq_loss(m, w.x, w.y_next));
  scale_loss(acc, 1.0 / static_cast<double>(data.size()));
  return acc;
}

}  // namespace

VqTrainResult train_vqvae(const VqVaeModel& init,
                          std::span<const WindowSample> train,
                          std::span<const WindowSample> val,
                          const TrainOptions& opt) {
  require(!train.empty() && !val.empty(), "train_vqvae: empty split");
  VqTrainResult result;
  result.model = init;
  result.best_val = std::numeric_limits<double>::quiet_NaN();
  VqVaeModel& m = result.model;
  check_decoders(m);

  Rng rng(opt.seed);
  AdamState adam;
  adam.lr = opt.lr;

  Vec best_params = pack(param_spans(std::as_const(m)));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    VqLossBreakdown epoch_loss;
    for (const auto& [lo, hi] : batch_ranges(train.size(), opt.batch)) {
      VqGrads grads = zero_grads(m);
      VqLossBreakdown batch_loss;
      for (std::size_t i = lo; i < hi; ++i) {
        const WindowSample& w = train[order[i]];
        accumulate(batch_loss, vq_loss_grad(m, w.x, w.y_next, grads));
      }
      if (!std::isfinite(batch_loss.total)) {
        fail("train_vqvae: non-finite loss at epoch " + std::to_string(epoch) +
             ", batch starting at sample " + std::to_string(lo));
      }
      scale_grads(grads, 1.0 / static_cast<double>(hi - lo));
      Vec flat_params = pack(param_spans(std::as_const(m)));
      const Vec flat_grads = pack(grad_spans_for(m, grads));
      adam_step(adam, flat_params, flat_grads);
      unpack(flat_params, param_spans(m));
      accumulate(epoch_loss, batch_loss);
    }
    scale_loss(epoch_loss, 1.0 / static_cast<double>(train.size()));

    const VqLossBreakdown val_loss = mean_loss(m, val);
    result.history.push_back({epoch_loss, val_loss});
    if (std::isnan(result.best_val) || val_loss.total < result.best_val) {
      result.best_val = val_loss.total;
      result.best_epoch = epoch;
      best_params = pack(param_spans(std::as_const(m)));
    }
  }

  unpack(best_params, param_spans(m));
  return result;
}

Vec latent_features(const VqVaeModel& m, std::span<const double> x) {
  return encode_quantize(m, x).z_q;
}

std::size_t count_active_codes(const VqVaeModel& m,
                               std::span<const WindowSample> samples) {
  std::set<std::size_t> used;
  for (const WindowSample& w : samples) {
    const Quantized q = encode_quantize(m, w.x);
    used.insert(q.indices.begin(), q.indices.end());
  }
  return used.size();
}

Json vqvae_to_json(const VqVaeModel& m, double best_val_loss) {
  Json j;
  j["arch"] = {{"H", m.window},
               {"N", m.n_joints},
               {"L", m.latent_dim()},
               {"mode", mode_name(m.mode)}};
  j["encoder"] = net_to_json(m.encoder);
  if (m.recon_decoder) j["recon_decoder"] = net_to_json(*m.recon_decoder);
  if (m.pred_decoder) j["pred_decoder"] = net_to_json(*m.pred_decoder);
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.codebook.num_codes(); ++r) {
    Json row = Json::array();
    for (const double v : m.codebook.embeddings.row(r)) row.push_back(v);
    rows.push_back(std::move(row));
  }
  j["codebook"] = std::move(rows);
  j["D"] = m.code_dim;
  j["G"] = m.num_groups;
  j["K"] = m.codebook.num_codes();
  j["beta_commit"] = m.beta_commit;
  j["lambda_pred"] = m.lambda_pred;
  j["norm_stats"] = {{"mean", m.norm.mean}, {"std", m.norm.std}};
  if (std::isfinite(best_val_loss)) {
    j["best_val_loss"] = best_val_loss;
  } else {
    j["best_val_loss"] = nullptr;
  }
  return j;
}

VqVaeModel vqvae_from_json(const Json& j) {
  VqVaeModel m;
  const auto& arch = j.at("arch");
  m.window = arch.at("H").get<std::size_t>();
  m.n_joints = arch.at("N").get<std::size_t>();
  m.mode = mode_from_name(arch.at("mode").get<std::string>());
  m.code_dim = j.at("D").get<std::size_t>();
  m.num_groups = j.at("G").get<std::size_t>();
  const std::size_t k = j.at("K").get<std::size_t>();
  m.encoder = net_from_json(j.at("encoder"));
  if (j.contains("recon_decoder")) {
    m.recon_decoder = net_from_json(j["recon_decoder"]);
  }
  if (j.contains("pred_decoder")) {
    m.pred_decoder = net_from_json(j["pred_decoder"]);
  }
  const auto& rows = j.at("codebook");
  require(rows.is_array() && rows.size() == k,
          "vqvae_from_json: codebook row count != K");
  m.codebook.embeddings = Matrix(k, m.code_dim);
  for (std::size_t r = 0; r < k; ++r) {
    const auto& row = rows[r];
    require(row.is_array() && row.size() == m.code_dim,
            "vqvae_from_json: codebook row " + std::to_string(r) +
                " has wrong length");
    for (std::size_t c = 0; c < m.code_dim; ++c) {
      m.codebook.embeddings(r, c) = row[c].get<double>();
    }
  }
  require(all_finite(m.codebook.embeddings.data),
          "vqvae_from_json: non-finite codebook entry");
  m.beta_commit = j.at("beta_commit").get<double>();
  m.lambda_pred = j.at("lambda_pred").get<double>();
  if (j.contains("norm_stats")) {
    m.norm.mean = j["norm_stats"].at("mean").get<Vec>();
    m.norm.std = j["norm_stats"].at("std").get<Vec>();
  }
  check_decoders(m);
  return m;
}

}  // namespace latentdyn
