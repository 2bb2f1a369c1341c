#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentdyn/episode.hpp"
#include "latentdyn/nn.hpp"
#include "latentdyn/trainer.hpp"
#include "latentdyn/vae.hpp"

namespace latentdyn {

// K rows of dimension D, shared across all latent groups.
struct CodeBook {
  Matrix embeddings;  // K x D
  std::size_t num_codes() const { return embeddings.rows; }
  std::size_t code_dim() const { return embeddings.cols; }
};

CodeBook make_codebook(std::size_t k, std::size_t d, Rng& rng);

// Discrete-latent counterpart of VaeModel: the encoder emits G groups of
// D-dimensional pre-latents, each snapped to the nearest codebook row.
struct VqVaeModel {
  DenseNet encoder;  // 3HN -> G*D
  CodeBook codebook;
  std::optional<DenseNet> recon_decoder;  // G*D -> 3HN
  std::optional<DenseNet> pred_decoder;   // G*D -> 2N
  std::size_t code_dim = 0;    // D
  std::size_t num_groups = 0;  // G
  std::size_t window = 0;      // H
  std::size_t n_joints = 0;    // N
  DecoderMode mode = DecoderMode::kBoth;
  double lambda_pred = 1.0;
  double beta_commit = 0.25;
  NormStats norm;

  std::size_t input_dim() const { return 3 * window * n_joints; }
  std::size_t target_dim() const { return 2 * n_joints; }
  std::size_t latent_dim() const { return code_dim * num_groups; }
};

VqVaeModel make_vqvae(std::size_t h, std::size_t n, std::size_t code_dim,
                      std::size_t num_groups, std::size_t num_codes,
                      DecoderMode mode, double beta_commit, double lambda_pred,
                      Rng& rng,
                      const std::vector<std::size_t>& hidden = {40, 40});

struct Quantized {
  std::vector<std::size_t> indices;  // G
  Vec z_q;                           // G*D
};

// Per group, the L2-nearest codebook row; ties break to the lowest index.
Quantized quantize(const CodeBook& cb, std::span<const double> z_e);

// Forward half of the straight-through estimator: the decoder consumes z_q
// as-is while the backward pass copies the decoder gradient onto z_e.
Vec straight_through(std::span<const double> z_e, std::span<const double> z_q);

// Encoder pass plus quantization, the deterministic inference path.
Quantized encode_quantize(const VqVaeModel& m, std::span<const double> x);

struct VqLossBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double pred = 0.0;
  double codebook = 0.0;  // ||sg(z_e) - z_q||^2
  double commit = 0.0;    // beta_commit * ||z_e - sg(z_q)||^2
};

struct VqGrads {
  NetGrads encoder;
  NetGrads recon;
  NetGrads pred;
  Matrix codebook;  // K x D
};

VqGrads zero_grads(const VqVaeModel& m);

VqLossBreakdown vq_loss(const VqVaeModel& m, std::span<const double> x,
                        std::span<const double> y_next);

// Straight-through estimator: decoders see z_q, the encoder receives the
// decoder gradient unchanged plus the commitment term; codebook rows get the
// codebook-loss gradient.
VqLossBreakdown vq_loss_grad(const VqVaeModel& m, std::span<const double> x,
                             std::span<const double> y_next, VqGrads& grads);

std::vector<std::span<double>> param_spans(VqVaeModel& m);
std::vector<std::span<const double>> param_spans(const VqVaeModel& m);

struct VqEpoch {
  VqLossBreakdown train;
  VqLossBreakdown val;
};

struct VqTrainResult {
  VqVaeModel model;
  std::vector<VqEpoch> history;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
};

VqTrainResult train_vqvae(const VqVaeModel& init,
                          std::span<const WindowSample> train,
                          std::span<const WindowSample> val,
                          const TrainOptions& opt);

// Quantized latents, the classification feature.
Vec latent_features(const VqVaeModel& m, std::span<const double> x);

// Distinct codebook rows selected at least once over the samples.
std::size_t count_active_codes(const VqVaeModel& m,
                               std::span<const WindowSample> samples);

Json vqvae_to_json(const VqVaeModel& m, double best_val_loss);
VqVaeModel vqvae_from_json(const Json& j);

}  // namespace latentdyn
