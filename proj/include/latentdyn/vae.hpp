#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentdyn/episode.hpp"
#include "latentdyn/nn.hpp"
#include "latentdyn/trainer.hpp"

namespace latentdyn {

enum class DecoderMode { kRecon, kPred, kBoth };

std::string mode_name(DecoderMode mode);
DecoderMode mode_from_name(const std::string& name);

struct LossBreakdown {
  double total = 0.0;
  double kl = 0.0;
  double recon = 0.0;
  double pred = 0.0;
};

// Gaussian-latent VAE over WindowSamples. The encoder maps 3HN inputs to
// (mu, logvar); decoders reconstruct the window and/or predict the next
// state depending on the mode.
struct VaeModel {
  DenseNet encoder;                        // 3HN -> 2L
  std::optional<DenseNet> recon_decoder;   // L -> 3HN
  std::optional<DenseNet> pred_decoder;    // L -> 2N
  std::size_t latent_dim = 0;
  std::size_t window = 0;    // H
  std::size_t n_joints = 0;  // N
  DecoderMode mode = DecoderMode::kBoth;
  double beta_kl = 1.0;
  double lambda_pred = 1.0;
  NormStats norm;

  std::size_t input_dim() const { return 3 * window * n_joints; }
  std::size_t target_dim() const { return 2 * n_joints; }
};

// MLP encoder/decoders with the given hidden widths (ReLU), built from `rng`.
VaeModel make_vae(std::size_t h, std::size_t n, std::size_t latent_dim,
                  DecoderMode mode, double beta_kl, double lambda_pred,
                  Rng& rng, const std::vector<std::size_t>& hidden = {40, 40});

struct Encoding {
  Vec mu;
  Vec logvar;
};

Encoding encode(const VaeModel& m, std::span<const double> x);

// z = mu + exp(0.5 logvar) * eps
Vec reparameterize(std::span<const double> mu, std::span<const double> logvar,
                   std::span<const double> eps);

// KL(q(z|x) || N(0, I)) in closed form; non-negative.
double kl_divergence(std::span<const double> mu,
                     std::span<const double> logvar);

struct VaeGrads {
  NetGrads encoder;
  NetGrads recon;
  NetGrads pred;
};

VaeGrads zero_grads(const VaeModel& m);

// Per-sample objective: recon/pred are element-mean squared errors of the
// active decoders and kl is the posterior KL divided by the input dimension
// (all three on a per-element scale); total = recon + lambda_pred*pred +
// beta_kl*kl restricted to active terms.
LossBreakdown vae_loss(const VaeModel& m, std::span<const double> x,
                       std::span<const double> y_next,
                       std::span<const double> eps);

// Same value as vae_loss, accumulating d(total)/d(params) into `grads`.
LossBreakdown vae_loss_grad(const VaeModel& m, std::span<const double> x,
                            std::span<const double> y_next,
                            std::span<const double> eps, VaeGrads& grads);

std::vector<std::span<double>> param_spans(VaeModel& m);
std::vector<std::span<const double>> param_spans(const VaeModel& m);

struct VaeEpoch {
  LossBreakdown train;
  LossBreakdown val;
};

struct VaeTrainResult {
  VaeModel model;  // parameters at the best validation total loss
  std::vector<VaeEpoch> history;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
};

// Seeded shuffling per epoch, one reparametrization draw per sample per
// step, batch-mean gradients, Adam. Deterministic in (init, data, options).
VaeTrainResult train_vae(const VaeModel& init,
                         std::span<const WindowSample> train,
                         std::span<const WindowSample> val,
                         const TrainOptions& opt);

// Posterior mean, the classification feature.
Vec latent_features(const VaeModel& m, std::span<const double> x);

Json vae_to_json(const VaeModel& m, double best_val_loss);
VaeModel vae_from_json(const Json& j);

}  // namespace latentdyn
