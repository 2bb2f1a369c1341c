#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "latentdyn/episode.hpp"
#include "latentdyn/nn.hpp"
#include "latentdyn/trainer.hpp"

namespace latentdyn {

// One LSTM cell with packed gate parameters, rows ordered i, f, g, o.
struct LstmCell {
  Matrix wx;  // 4H x in
  Matrix wh;  // 4H x H
  Vec b;      // 4H

  std::size_t hidden_size() const { return wh.cols; }
  std::size_t input_size() const { return wx.cols; }
};

// Two stacked cells followed by a dense head on the final top-layer h.
struct LstmModel {
  std::vector<LstmCell> cells;
  DenseNet head;  // hidden -> 2N
  std::size_t window = 0;    // H
  std::size_t n_joints = 0;  // N

  std::size_t step_dim() const { return 3 * n_joints; }
  std::size_t target_dim() const { return 2 * n_joints; }
};

LstmModel make_lstm(std::size_t h, std::size_t n, std::size_t hidden,
                    Rng& rng);

// Everything the backward pass replays for one cell application.
struct CellTape {
  Vec x, h_prev, c_prev;
  Vec i, f, g, o;  // post-activation gates
  Vec c, tanh_c;
};

struct LstmStep {
  Vec h;
  Vec c;
};

// i,f,o sigmoid gates, g tanh candidate; c' = f*c + i*g, h' = o*tanh(c').
LstmStep cell_step(const LstmCell& cell, std::span<const double> h,
                   std::span<const double> c, std::span<const double> x,
                   CellTape* tape = nullptr);

struct LstmTape {
  // steps[layer][t]
  std::vector<std::vector<CellTape>> steps;
  ForwardTape head;
};

// Zero initial state, unroll the window through both layers, head on the
// final hidden state. seq is H contiguous 3N-sized steps.
Vec lstm_predict(const LstmModel& m, std::span<const double> seq,
                 LstmTape* tape = nullptr);

struct CellGrads {
  Matrix dwx, dwh;
  Vec db;
};

struct LstmGrads {
  std::vector<CellGrads> cells;
  NetGrads head;
};

LstmGrads zero_grads(const LstmModel& m);

// Element-mean squared error of lstm_predict(seq) against y_next, with full
// backpropagation through time accumulated into `grads`.
double lstm_loss_grad(const LstmModel& m, std::span<const double> seq,
                      std::span<const double> y_next, LstmGrads& grads);

std::vector<std::span<double>> param_spans(LstmModel& m);
std::vector<std::span<const double>> param_spans(const LstmModel& m);

// Window layout (channel-major blocks) -> H time steps of [q, dq, tau].
Vec window_to_sequence(std::span<const double> x, std::size_t h,
                       std::size_t n);

// y = last observed (q, dq) in the window; the no-model floor.
Vec persistence_prediction(std::span<const double> x, std::size_t h,
                           std::size_t n);

struct LstmEpoch {
  double train = 0.0;
  double val = 0.0;
};

struct LstmTrainResult {
  LstmModel model;
  std::vector<LstmEpoch> history;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
};

LstmTrainResult train_lstm(const LstmModel& init,
                           std::span<const WindowSample> train,
                           std::span<const WindowSample> val,
                           const TrainOptions& opt);

Json lstm_to_json(const LstmModel& m, double best_val_loss);
LstmModel lstm_from_json(const Json& j);

}  // namespace latentdyn
