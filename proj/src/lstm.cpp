#include "latentdyn/lstm.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "latentdyn/common.hpp"

namespace latentdyn {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void init_matrix(Matrix& m, Rng& rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
  for (double& v : m.data) v = (2.0 * rng.uniform() - 1.0) * bound;
}

LstmCell make_cell(std::size_t in, std::size_t hidden, Rng& rng) {
  LstmCell c;
  c.wx = Matrix(4 * hidden, in);
  c.wh = Matrix(4 * hidden, hidden);
  c.b.assign(4 * hidden, 0.0);
  init_matrix(c.wx, rng);
  init_matrix(c.wh, rng);
  return c;
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    Json row = Json::array();
    for (const double v : m.row(r)) row.push_back(v);
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j, const std::string& what) {
  require(j.is_array() && !j.empty(), "lstm_from_json: " + what +
                                          " is not a non-empty array");
  const std::size_t rows = j.size();
  require(j[0].is_array() && !j[0].empty(),
          "lstm_from_json: " + what + " rows must be non-empty arrays");
  const std::size_t cols = j[0].size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    require(row.is_array() && row.size() == cols,
            "lstm_from_json: ragged rows in " + what);
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  require(all_finite(m.data), "lstm_from_json: non-finite entry in " + what);
  return m;
}

}  // namespace

LstmModel make_lstm(std::size_t h, std::size_t n, std::size_t hidden,
                    Rng& rng) {
  require(h >= 1 && n >= 1 && hidden >= 1, "make_lstm: bad shape");
  LstmModel m;
  m.window = h;
  m.n_joints = n;
  m.cells.push_back(make_cell(3 * n, hidden, rng));
  m.cells.push_back(make_cell(hidden, hidden, rng));
  m.head = make_mlp(hidden, {hidden}, 2 * n, rng);
  return m;
}

LstmStep cell_step(const LstmCell& cell, std::span<const double> h,
                   std::span<const double> c, std::span<const double> x,
                   CellTape* tape) {
  const std::size_t hid = cell.hidden_size();
  require(h.size() == hid && c.size() == hid, "cell_step: state size mismatch");
  require(x.size() == cell.input_size(), "cell_step: input size mismatch");

  Vec a(cell.b);
  Vec tmp(4 * hid);
  matvec(cell.wx, x, tmp);
  axpy(1.0, tmp, a);
  matvec(cell.wh, h, tmp);
  axpy(1.0, tmp, a);

  LstmStep out;
  out.h.resize(hid);
  out.c.resize(hid);
  Vec gi(hid), gf(hid), gg(hid), go(hid), tc(hid);
  for (std::size_t u = 0; u < hid; ++u) {
    gi[u] = sigmoid(a[u]);
    gf[u] = sigmoid(a[hid + u]);
    gg[u] = std::tanh(a[2 * hid + u]);
    go[u] = sigmoid(a[3 * hid + u]);
    out.c[u] = gf[u] * c[u] + gi[u] * gg[u];
    tc[u] = std::tanh(out.c[u]);
    out.h[u] = go[u] * tc[u];
  }
  if (tape) {
    tape->x.assign(x.begin(), x.end());
    tape->h_prev.assign(h.begin(), h.end());
    tape->c_prev.assign(c.begin(), c.end());
    tape->i = std::move(gi);
    tape->f = std::move(gf);
    tape->g = std::move(gg);
    tape->o = std::move(go);
    tape->c = out.c;
    tape->tanh_c = std::move(tc);
  }
  return out;
}

namespace {

// Returns d(input); updates dh/dc in place to the previous step's gradients.
Vec cell_backward(const LstmCell& cell, const CellTape& t, Vec& dh, Vec& dc,
                  CellGrads& g) {
  const std::size_t hid = cell.hidden_size();
  Vec da(4 * hid);
  for (std::size_t u = 0; u < hid; ++u) {
    const double dtc = 1.0 - t.tanh_c[u] * t.tanh_c[u];
    dc[u] += dh[u] * t.o[u] * dtc;
    const double d_o = dh[u] * t.tanh_c[u];
    const double d_f = dc[u] * t.c_prev[u];
    const double d_i = dc[u] * t.g[u];
    const double d_g = dc[u] * t.i[u];
    da[u] = d_i * t.i[u] * (1.0 - t.i[u]);
    da[hid + u] = d_f * t.f[u] * (1.0 - t.f[u]);
    da[2 * hid + u] = d_g * (1.0 - t.g[u] * t.g[u]);
    da[3 * hid + u] = d_o * t.o[u] * (1.0 - t.o[u]);
  }
  add_outer(g.dwx, da, t.x);
  add_outer(g.dwh, da, t.h_prev);
  axpy(1.0, da, g.db);

  Vec dx(cell.input_size());
  matvec_t(cell.wx, da, dx);
  Vec dh_prev(hid);
  matvec_t(cell.wh, da, dh_prev);
  for (std::size_t u = 0; u < hid; ++u) {
    dh[u] = dh_prev[u];
    dc[u] *= t.f[u];
  }
  return dx;
}

}  // namespace

Vec lstm_predict(const LstmModel& m, std::span<const double> seq,
                 LstmTape* tape) {
  require(!m.cells.empty(), "lstm_predict: no cells");
  const std::size_t step = m.step_dim();
  require(seq.size() == m.window * step,
          "lstm_predict: sequence length != window");
  const std::size_t layers = m.cells.size();
  if (tape) {
    tape->steps.assign(layers, {});
    for (auto& s : tape->steps) s.resize(m.window);
  }
  std::vector<Vec> h(layers), c(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    h[l].assign(m.cells[l].hidden_size(), 0.0);
    c[l].assign(m.cells[l].hidden_size(), 0.0);
  }
  for (std::size_t t = 0; t < m.window; ++t) {
    std::span<const double> x = seq.subspan(t * step, step);
    for (std::size_t l = 0; l < layers; ++l) {
      CellTape* ct = tape ? &tape->steps[l][t] : nullptr;
      LstmStep s = cell_step(m.cells[l], h[l], c[l], x, ct);
      h[l] = std::move(s.h);
      c[l] = std::move(s.c);
      x = h[l];
    }
  }
  return forward(m.head, h[layers - 1], tape ? &tape->head : nullptr);
}

LstmGrads zero_grads(const LstmModel& m) {
  LstmGrads g;
  for (const LstmCell& c : m.cells) {
    CellGrads cg;
    cg.dwx = Matrix(c.wx.rows, c.wx.cols);
    cg.dwh = Matrix(c.wh.rows, c.wh.cols);
    cg.db.assign(c.b.size(), 0.0);
    g.cells.push_back(std::move(cg));
  }
  g.head = zero_grads(m.head);
  return g;
}

double lstm_loss_grad(const LstmModel& m, std::span<const double> seq,
                      std::span<const double> y_next, LstmGrads& grads) {
  require(y_next.size() == m.target_dim(), "lstm_loss_grad: target mismatch");
  LstmTape tape;
  const Vec yh = lstm_predict(m, seq, &tape);

  double loss = 0.0;
  Vec dout(yh.size());
  const double scale = 2.0 / static_cast<double>(yh.size());
  for (std::size_t i = 0; i < yh.size(); ++i) {
    const double d = yh[i] - y_next[i];
    loss += d * d;
    dout[i] = scale * d;
  }
  loss /= static_cast<double>(yh.size());

  const std::size_t layers = m.cells.size();
  std::vector<Vec> dh(layers), dc(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    dh[l].assign(m.cells[l].hidden_size(), 0.0);
    dc[l].assign(m.cells[l].hidden_size(), 0.0);
  }
  dh[layers - 1] = backward(m.head, tape.head, dout, grads.head);

  for (std::size_t t = m.window; t-- > 0;) {
    for (std::size_t l = layers; l-- > 0;) {
      Vec dx = cell_backward(m.cells[l], tape.steps[l][t], dh[l], dc[l],
                             grads.cells[l]);
      if (l > 0) axpy(1.0, dx, dh[l - 1]);
    }
  }
  return loss;
}

std::vector<std::span<double>> param_spans(LstmModel& m) {
  std::vector<std::span<double>> out;
  for (LstmCell& c : m.cells) {
    out.emplace_back(c.wx.data);
    out.emplace_back(c.wh.data);
    out.emplace_back(c.b);
  }
  auto h = param_spans(m.head);
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::vector<std::span<const double>> param_spans(const LstmModel& m) {
  std::vector<std::span<const double>> out;
  for (const LstmCell& c : m.cells) {
    out.emplace_back(c.wx.data);
    out.emplace_back(c.wh.data);
    out.emplace_back(c.b);
  }
  auto h = param_spans(m.head);
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

namespace {

std::vector<std::span<const double>> grad_spans_for(const LstmGrads& g) {
  std::vector<std::span<const double>> out;
  for (const CellGrads& c : g.cells) {
    out.emplace_back(c.dwx.data);
    out.emplace_back(c.dwh.data);
    out.emplace_back(c.db);
  }
  auto h = grad_spans(g.head);
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

void scale_grads(LstmGrads& g, double s) {
  for (CellGrads& c : g.cells) {
    for (double& v : c.dwx.data) v *= s;
    for (double& v : c.dwh.data) v *= s;
    for (double& v : c.db) v *= s;
  }
  g.head.scale(s);
}

}  // namespace

Vec window_to_sequence(std::span<const double> x, std::size_t h,
                       std::size_t n) {
  require(x.size() == 3 * h * n, "window_to_sequence: size mismatch");
  Vec seq(x.size());
  for (std::size_t t = 0; t < h; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t j = 0; j < n; ++j) {
        seq[t * 3 * n + c * n + j] = x[c * h * n + t * n + j];
      }
    }
  }
  return seq;
}

Vec persistence_prediction(std::span<const double> x, std::size_t h,
                           std::size_t n) {
  require(x.size() == 3 * h * n, "persistence_prediction: size mismatch");
  Vec y(2 * n);
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = x[0 * h * n + (h - 1) * n + j];
    y[n + j] = x[1 * h * n + (h - 1) * n + j];
  }
  return y;
}

LstmTrainResult train_lstm(const LstmModel& init,
                           std::span<const WindowSample> train,
                           std::span<const WindowSample> val,
                           const TrainOptions& opt) {
  require(!train.empty() && !val.empty(), "train_lstm: empty split");
  LstmTrainResult result;
  result.model = init;
  result.best_val = std::numeric_limits<double>::quiet_NaN();
  LstmModel& m = result.model;

  std::vector<Vec> train_seq(train.size()), val_seq(val.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    train_seq[i] = window_to_sequence(train[i].x, m.window, m.n_joints);
  }
  for (std::size_t i = 0; i < val.size(); ++i) {
    val_seq[i] = window_to_sequence(val[i].x, m.window, m.n_joints);
  }

  Rng rng(opt.seed);
  AdamState adam;
  adam.lr = opt.lr;

  Vec best_params = pack(param_spans(std::as_const(m)));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (const auto& [lo, hi] : batch_ranges(train.size(), opt.batch)) {
      LstmGrads grads = zero_grads(m);
      double batch_loss = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t s = order[i];
        batch_loss += lstm_loss_grad(m, train_seq[s], train[s].y_next, grads);
      }
      if (!std::isfinite(batch_loss)) {
        fail("train_lstm: non-finite loss at epoch " + std::to_string(epoch) +
             ", batch starting at sample " + std::to_string(lo));
      }
      scale_grads(grads, 1.0 / static_cast<double>(hi - lo));
      Vec flat_params = pack(param_spans(std::as_const(m)));
      const Vec flat_grads = pack(grad_spans_for(grads));
      adam_step(adam, flat_params, flat_grads);
      unpack(flat_params, param_spans(m));
      epoch_loss += batch_loss;
    }
    epoch_loss /= static_cast<double>(train.size());

    double val_loss = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const Vec yh = lstm_predict(m, val_seq[i]);
      double acc = 0.0;
      for (std::size_t k = 0; k < yh.size(); ++k) {
        const double d = yh[k] - val[i].y_next[k];
        acc += d * d;
      }
      val_loss += acc / static_cast<double>(yh.size());
    }
    val_loss /= static_cast<double>(val.size());

    result.history.push_back({epoch_loss, val_loss});
    if (std::isnan(result.best_val) || val_loss < result.best_val) {
      result.best_val = val_loss;
      result.best_epoch = epoch;
      best_params = pack(param_spans(std::as_const(m)));
    }
  }

  unpack(best_params, param_spans(m));
  return result;
}

Json lstm_to_json(const LstmModel& m, double best_val_loss) {
  Json j;
  Json cells = Json::array();
  for (const LstmCell& c : m.cells) {
    Json jc;
    jc["wx"] = matrix_to_json(c.wx);
    jc["wh"] = matrix_to_json(c.wh);
    jc["b"] = c.b;
    cells.push_back(std::move(jc));
  }
  j["cells"] = std::move(cells);
  j["head"] = net_to_json(m.head);
  j["H"] = m.window;
  j["N"] = m.n_joints;
  if (std::isfinite(best_val_loss)) {
    j["best_val_loss"] = best_val_loss;
  } else {
    j["best_val_loss"] = nullptr;
  }
  return j;
}

LstmModel lstm_from_json(const Json& j) {
  LstmModel m;
  const auto& cells = j.at("cells");
  require(cells.is_array() && !cells.empty(),
          "lstm_from_json: cells must be a non-empty array");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& jc = cells[i];
    LstmCell c;
    c.wx = matrix_from_json(jc.at("wx"), "cells[" + std::to_string(i) + "].wx");
    c.wh = matrix_from_json(jc.at("wh"), "cells[" + std::to_string(i) + "].wh");
    c.b = jc.at("b").get<Vec>();
    require(c.wh.rows == 4 * c.wh.cols && c.wx.rows == c.wh.rows &&
                c.b.size() == c.wh.rows,
            "lstm_from_json: inconsistent gate shapes in cell " +
                std::to_string(i));
    m.cells.push_back(std::move(c));
  }
  m.head = net_from_json(j.at("head"));
  m.window = j.at("H").get<std::size_t>();
  m.n_joints = j.at("N").get<std::size_t>();
  return m;
}

}  // namespace latentdyn
