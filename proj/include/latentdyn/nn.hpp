#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentdyn/linalg.hpp"
#include "latentdyn/rng.hpp"

namespace latentdyn {

using Json = nlohmann::ordered_json;

enum class Activation { kRelu, kIdentity };

struct DenseLayer {
  Matrix w;  // out x in
  Vec b;     // out
  Activation act = Activation::kIdentity;
};

// Plain feed-forward stack; layers must be dimension-chained.
struct DenseNet {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t param_count() const;
};

// Hidden layers get ReLU, the output layer is linear. Weights uniform in
// +-sqrt(6/(fan_in+fan_out)), biases zero, drawn from `rng` in layer order.
DenseNet make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                  std::size_t out, Rng& rng);

// Everything backward() needs to replay the chain rule exactly.
struct ForwardTape {
  Vec input;
  std::vector<Vec> pre;  // pre-activations, one per layer
};

Vec forward(const DenseNet& net, std::span<const double> x,
            ForwardTape* tape = nullptr);

struct LayerGrads {
  Matrix dw;
  Vec db;
};

struct NetGrads {
  std::vector<LayerGrads> layers;
  void scale(double s);
};

NetGrads zero_grads(const DenseNet& net);

// Accumulates parameter gradients into `grads` and returns the gradient with
// respect to the input. `tape` must come from forward() on the same net.
Vec backward(const DenseNet& net, const ForwardTape& tape,
             std::span<const double> grad_output, NetGrads& grads);

struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step_count = 0;
  Vec m, v;  // sized on first step
};

// Bias-corrected Adam on a flat parameter vector. Throws on non-finite
// gradient entries so training aborts instead of silently diverging.
void adam_step(AdamState& s, std::span<double> params,
               std::span<const double> grads);

// Flat views over parameters, layer by layer (weights then bias).
std::vector<std::span<double>> param_spans(DenseNet& net);
std::vector<std::span<const double>> param_spans(const DenseNet& net);
std::vector<std::span<double>> grad_spans(NetGrads& g);
std::vector<std::span<const double>> grad_spans(const NetGrads& g);

std::size_t total_size(const std::vector<std::span<const double>>& parts);
Vec pack(const std::vector<std::span<const double>>& parts);
void unpack(std::span<const double> flat,
            const std::vector<std::span<double>>& parts);

// Checkpoint fragment: {layers: [{w: [[...]], b: [...], act: "relu"|"id"}]}
Json net_to_json(const DenseNet& net);
DenseNet net_from_json(const Json& j);

}  // namespace latentdyn
