#include "latentdyn/vae.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "latentdyn/common.hpp"

namespace latentdyn {

std::string mode_name(DecoderMode mode) {
  switch (mode) {
    case DecoderMode::kRecon: return "recon";
    case DecoderMode::kPred: return "pred";
    case DecoderMode::kBoth: return "both";
  }
  fail("mode_name: bad mode");
}

DecoderMode mode_from_name(const std::string& name) {
  if (name == "recon") return DecoderMode::kRecon;
  if (name == "pred") return DecoderMode::kPred;
  if (name == "both") return DecoderMode::kBoth;
  fail("unknown decoder mode '" + name + "'");
}

namespace {

bool recon_active(DecoderMode m) {
  return m == DecoderMode::kRecon || m == DecoderMode::kBoth;
}

bool pred_active(DecoderMode m) {
  return m == DecoderMode::kPred || m == DecoderMode::kBoth;
}

void check_decoders(const VaeModel& m) {
  if (recon_active(m.mode)) {
    require(m.recon_decoder.has_value(),
            "vae: mode " + mode_name(m.mode) + " needs a recon decoder");
  }
  if (pred_active(m.mode)) {
    require(m.pred_decoder.has_value(),
            "vae: mode " + mode_name(m.mode) + " needs a pred decoder");
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

VaeModel make_vae(std::size_t h, std::size_t n, std::size_t latent_dim,
                  DecoderMode mode, double beta_kl, double lambda_pred,
                  Rng& rng, const std::vector<std::size_t>& hidden) {
  require(latent_dim >= 1, "make_vae: latent_dim must be >= 1");
  VaeModel m;
  m.window = h;
  m.n_joints = n;
  m.latent_dim = latent_dim;
  m.mode = mode;
  m.beta_kl = beta_kl;
  m.lambda_pred = lambda_pred;
  m.encoder = make_mlp(3 * h * n, hidden, 2 * latent_dim, rng);
  if (recon_active(mode)) {
    m.recon_decoder = make_mlp(latent_dim, hidden, 3 * h * n, rng);
  }
  if (pred_active(mode)) {
    m.pred_decoder = make_mlp(latent_dim, hidden, 2 * n, rng);
  }
  return m;
}

Encoding encode(const VaeModel& m, std::span<const double> x) {
  const Vec out = forward(m.encoder, x);
  const std::size_t l = m.latent_dim;
  require(out.size() == 2 * l, "encode: encoder output is not 2L");
  Encoding e;
  e.mu.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(l));
  e.logvar.assign(out.begin() + static_cast<std::ptrdiff_t>(l), out.end());
  return e;
}

Vec reparameterize(std::span<const double> mu, std::span<const double> logvar,
                   std::span<const double> eps) {
  require(mu.size() == logvar.size() && mu.size() == eps.size(),
          "reparameterize: shape mismatch");
  Vec z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = mu[i] + std::exp(0.5 * logvar[i]) * eps[i];
  }
  return z;
}

double kl_divergence(std::span<const double> mu,
                     std::span<const double> logvar) {
  require(mu.size() == logvar.size(), "kl_divergence: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    acc += 1.0 + logvar[i] - mu[i] * mu[i] - std::exp(logvar[i]);
  }
  return -0.5 * acc;
}

VaeGrads zero_grads(const VaeModel& m) {
  VaeGrads g;
  g.encoder = zero_grads(m.encoder);
  if (m.recon_decoder) g.recon = zero_grads(*m.recon_decoder);
  if (m.pred_decoder) g.pred = zero_grads(*m.pred_decoder);
  return g;
}

LossBreakdown vae_loss(const VaeModel& m, std::span<const double> x,
                       std::span<const double> y_next,
                       std::span<const double> eps) {
  check_decoders(m);
  require(x.size() == m.input_dim(), "vae_loss: input dim mismatch");
  const Encoding enc = encode(m, x);
  const Vec z = reparameterize(enc.mu, enc.logvar, eps);
  LossBreakdown lb;
  // Per-dimension KL so beta_kl weighs it on the same scale as the
  // element-mean reconstruction and prediction errors.
  lb.kl = kl_divergence(enc.mu, enc.logvar) / static_cast<double>(x.size());
  if (recon_active(m.mode)) {
    const Vec xh = forward(*m.recon_decoder, z);
    lb.recon = mse(xh, x);
  }
  if (pred_active(m.mode)) {
    require(y_next.size() == m.target_dim(), "vae_loss: target dim mismatch");
    const Vec yh = forward(*m.pred_decoder, z);
    lb.pred = mse(yh, y_next);
  }
  lb.total = (recon_active(m.mode) ? lb.recon : 0.0) +
             (pred_active(m.mode) ? m.lambda_pred * lb.pred : 0.0) +
             m.beta_kl * lb.kl;
  return lb;
}

LossBreakdown vae_loss_grad(const VaeModel& m, std::span<const double> x,
                            std::span<const double> y_next,
                            std::span<const double> eps, VaeGrads& grads) {
  check_decoders(m);
  require(x.size() == m.input_dim(), "vae_loss_grad: input dim mismatch");
  const std::size_t l = m.latent_dim;

  ForwardTape enc_tape;
  const Vec enc_out = forward(m.encoder, x, &enc_tape);
  std::span<const double> mu(enc_out.data(), l);
  std::span<const double> logvar(enc_out.data() + l, l);
  const Vec z = reparameterize(mu, logvar, eps);

  LossBreakdown lb;
  const double kl_scale = 1.0 / static_cast<double>(x.size());
  lb.kl = kl_divergence(mu, logvar) * kl_scale;

  Vec dz(l, 0.0);
  if (recon_active(m.mode)) {
    ForwardTape tape;
    const Vec xh = forward(*m.recon_decoder, z, &tape);
    lb.recon = mse(xh, x);
    Vec dout(xh.size());
    const double scale = 2.0 / static_cast<double>(xh.size());
    for (std::size_t i = 0; i < xh.size(); ++i)
      dout[i] = scale * (xh[i] - x[i]);
    const Vec dz_r = backward(*m.recon_decoder, tape, dout, grads.recon);
    axpy(1.0, dz_r, dz);
  }
  if (pred_active(m.mode)) {
    require(y_next.size() == m.target_dim(),
            "vae_loss_grad: target dim mismatch");
    ForwardTape tape;
    const Vec yh = forward(*m.pred_decoder, z, &tape);
    lb.pred = mse(yh, y_next);
    Vec dout(yh.size());
    const double scale =
        2.0 * m.lambda_pred / static_cast<double>(yh.size());
    for (std::size_t i = 0; i < yh.size(); ++i)
      dout[i] = scale * (yh[i] - y_next[i]);
    const Vec dz_p = backward(*m.pred_decoder, tape, dout, grads.pred);
    axpy(1.0, dz_p, dz);
  }

  Vec denc(2 * l, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    const double sigma = std::exp(0.5 * logvar[i]);
    denc[i] = dz[i] + m.beta_kl * kl_scale * mu[i];
    denc[l + i] = dz[i] * eps[i] * 0.5 * sigma +
                  m.beta_kl * kl_scale * 0.5 * (std::exp(logvar[i]) - 1.0);
  }
  backward(m.encoder, enc_tape, denc, grads.encoder);

  lb.total = (recon_active(m.mode) ? lb.recon : 0.0) +
             (pred_active(m.mode) ? m.lambda_pred * lb.pred : 0.0) +
             m.beta_kl * lb.kl;
  return lb;
}

std::vector<std::span<double>> param_spans(VaeModel& m) {
  std::vector<std::span<double>> out = param_spans(m.encoder);
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

std::vector<std::span<const double>> param_spans(const VaeModel& m) {
  std::vector<std::span<const double>> out = param_spans(m.encoder);
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

std::vector<std::span<const double>> grad_spans_for(const VaeModel& m,
                                                    const VaeGrads& g) {
  std::vector<std::span<const double>> out = grad_spans(g.encoder);
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

void scale_grads(VaeGrads& g, double s) {
  g.encoder.scale(s);
  g.recon.scale(s);
  g.pred.scale(s);
}

LossBreakdown mean_loss(const VaeModel& m, std::span<const WindowSample> data,
                        Rng& rng) {
  LossBreakdown acc;
  for (const WindowSample& w : data) {
    const Vec eps = rng.gaussian_vec(m.latent_dim);
    const LossBreakdown lb = vae_loss(m, w.x, w.y_next, eps);
    acc.total += lb.total;
    acc.kl += lb.kl;
    acc.recon += lb.recon;
    acc.pred += lb.pred;
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  acc.total *= inv;
  acc.kl *= inv;
  acc.recon *= inv;
  acc.pred *= inv;
  return acc;
}

}  // namespace

VaeTrainResult train_vae(const VaeModel& init,
                         std::span<const WindowSample> train,
                         std::span<const WindowSample> val,
                         const TrainOptions& opt) {
  require(!train.empty() && !val.empty(), "train_vae: empty split");
  VaeTrainResult result;
  result.model = init;
  result.best_val = std::numeric_limits<double>::quiet_NaN();
  VaeModel& m = result.model;
  check_decoders(m);

  Rng rng(opt.seed);
  AdamState adam;
  adam.lr = opt.lr;

  Vec best_params = pack(param_spans(std::as_const(m)));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    LossBreakdown epoch_loss;
    for (const auto& [lo, hi] : batch_ranges(train.size(), opt.batch)) {
      VaeGrads grads = zero_grads(m);
      LossBreakdown batch_loss;
      for (std::size_t i = lo; i < hi; ++i) {
        const WindowSample& w = train[order[i]];
        const Vec eps = rng.gaussian_vec(m.latent_dim);
        const LossBreakdown lb = vae_loss_grad(m, w.x, w.y_next, eps, grads);
        batch_loss.total += lb.total;
        batch_loss.kl += lb.kl;
        batch_loss.recon += lb.recon;
        batch_loss.pred += lb.pred;
      }
      const double bn = static_cast<double>(hi - lo);
      if (!std::isfinite(batch_loss.total)) {
        fail("train_vae: non-finite loss at epoch " + std::to_string(epoch) +
             ", batch starting at sample " + std::to_string(lo));
      }
      scale_grads(grads, 1.0 / bn);
      Vec flat_params = pack(param_spans(std::as_const(m)));
      const Vec flat_grads = pack(grad_spans_for(m, grads));
      adam_step(adam, flat_params, flat_grads);
      unpack(flat_params, param_spans(m));
      epoch_loss.total += batch_loss.total;
      epoch_loss.kl += batch_loss.kl;
      epoch_loss.recon += batch_loss.recon;
      epoch_loss.pred += batch_loss.pred;
    }
    const double inv = 1.0 / static_cast<double>(train.size());
    epoch_loss.total *= inv;
    epoch_loss.kl *= inv;
    epoch_loss.recon *= inv;
    epoch_loss.pred *= inv;

    const LossBreakdown val_loss = mean_loss(m, val, rng);
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

Vec latent_features(const VaeModel& m, std::span<const double> x) {
  return encode(m, x).mu;
}

Json vae_to_json(const VaeModel& m, double best_val_loss) {
  Json j;
  j["arch"] = {{"H", m.window},
               {"N", m.n_joints},
               {"L", m.latent_dim},
               {"mode", mode_name(m.mode)}};
  j["encoder"] = net_to_json(m.encoder);
  if (m.recon_decoder) j["recon_decoder"] = net_to_json(*m.recon_decoder);
  if (m.pred_decoder) j["pred_decoder"] = net_to_json(*m.pred_decoder);
  j["beta_kl"] = m.beta_kl;
  j["lambda_pred"] = m.lambda_pred;
  j["norm_stats"] = {{"mean", m.norm.mean}, {"std", m.norm.std}};
  if (std::isfinite(best_val_loss)) {
    j["best_val_loss"] = best_val_loss;
  } else {
    j["best_val_loss"] = nullptr;
  }
  return j;
}

VaeModel vae_from_json(const Json& j) {
  VaeModel m;
  const auto& arch = j.at("arch");
  m.window = arch.at("H").get<std::size_t>();
  m.n_joints = arch.at("N").get<std::size_t>();
  m.latent_dim = arch.at("L").get<std::size_t>();
  m.mode = mode_from_name(arch.at("mode").get<std::string>());
  m.encoder = net_from_json(j.at("encoder"));
  if (j.contains("recon_decoder")) {
    m.recon_decoder = net_from_json(j["recon_decoder"]);
  }
  if (j.contains("pred_decoder")) {
    m.pred_decoder = net_from_json(j["pred_decoder"]);
  }
  m.beta_kl = j.at("beta_kl").get<double>();
  m.lambda_pred = j.at("lambda_pred").get<double>();
  if (j.contains("norm_stats")) {
    m.norm.mean = j["norm_stats"].at("mean").get<Vec>();
    m.norm.std = j["norm_stats"].at("std").get<Vec>();
  }
  check_decoders(m);
  return m;
}

}  // namespace latentdyn
