#include "latentdyn/nn.hpp"

#include <cmath>

#include "latentdyn/common.hpp"

namespace latentdyn {

std::size_t DenseNet::input_dim() const {
  return layers.empty() ? 0 : layers.front().w.cols;
}

std::size_t DenseNet::output_dim() const {
  return layers.empty() ? 0 : layers.back().w.rows;
}

std::size_t DenseNet::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.data.size() + l.b.size();
  return n;
}

DenseNet make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                  std::size_t out, Rng& rng) {
  require(in > 0 && out > 0, "make_mlp: zero dimension");
  DenseNet net;
  std::size_t prev = in;
  auto push = [&](std::size_t width, Activation act) {
    DenseLayer layer;
    layer.w = Matrix(width, prev);
    layer.b = Vec(width, 0.0);
    layer.act = act;
    const double limit = std::sqrt(6.0 / static_cast<double>(width + prev));
    for (double& v : layer.w.data) v = (2.0 * rng.uniform() - 1.0) * limit;
    net.layers.push_back(std::move(layer));
    prev = width;
  };
  for (std::size_t h : hidden) push(h, Activation::kRelu);
  push(out, Activation::kIdentity);
  return net;
}

Vec forward(const DenseNet& net, std::span<const double> x, ForwardTape* tape) {
  require(!net.layers.empty(), "forward: empty net");
  require(x.size() == net.input_dim(),
          "forward: input length " + std::to_string(x.size()) +
              " does not match layer 0 input dim " +
              std::to_string(net.input_dim()));
  require(all_finite(x), "forward: non-finite input");
  if (tape) {
    tape->input.assign(x.begin(), x.end());
    tape->pre.clear();
    tape->pre.reserve(net.layers.size());
  }
  Vec a(x.begin(), x.end());
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const DenseLayer& l = net.layers[li];
    require(a.size() == l.w.cols,
            "forward: layer " + std::to_string(li) + " expects input dim " +
                std::to_string(l.w.cols) + ", got " + std::to_string(a.size()));
    Vec z(l.w.rows);
    matvec(l.w, a, z);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += l.b[i];
    if (tape) tape->pre.push_back(z);
    if (l.act == Activation::kRelu) {
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    }
    a = std::move(z);
  }
  return a;
}

NetGrads zero_grads(const DenseNet& net) {
  NetGrads g;
  g.layers.reserve(net.layers.size());
  for (const auto& l : net.layers) {
    g.layers.push_back({Matrix(l.w.rows, l.w.cols), Vec(l.b.size(), 0.0)});
  }
  return g;
}

void NetGrads::scale(double s) {
  for (auto& l : layers) {
    for (double& v : l.dw.data) v *= s;
    for (double& v : l.db) v *= s;
  }
}

Vec backward(const DenseNet& net, const ForwardTape& tape,
             std::span<const double> grad_output, NetGrads& grads) {
  const std::size_t n = net.layers.size();
  require(tape.pre.size() == n, "backward: tape layer count mismatch");
  require(grads.layers.size() == n, "backward: grads layer count mismatch");
  require(grad_output.size() == net.output_dim(),
          "backward: grad_output dim mismatch");
  require(tape.input.size() == net.input_dim(),
          "backward: stale tape, input dim mismatch");

  Vec delta(grad_output.begin(), grad_output.end());
  Vec act_in;  // input to the current layer
  for (std::size_t li = n; li-- > 0;) {
    const DenseLayer& l = net.layers[li];
    const Vec& pre = tape.pre[li];
    require(pre.size() == l.w.rows, "backward: stale tape at layer " +
                                        std::to_string(li));
    if (l.act == Activation::kRelu) {
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (pre[i] <= 0.0) delta[i] = 0.0;
      }
    }
    if (li == 0) {
      act_in = tape.input;
    } else {
      const Vec& prev_pre = tape.pre[li - 1];
      act_in = prev_pre;
      if (net.layers[li - 1].act == Activation::kRelu) {
        for (double& v : act_in) v = v > 0.0 ? v : 0.0;
      }
    }
    add_outer(grads.layers[li].dw, delta, act_in);
    for (std::size_t i = 0; i < delta.size(); ++i)
      grads.layers[li].db[i] += delta[i];
    Vec next(l.w.cols);
    matvec_t(l.w, delta, next);
    delta = std::move(next);
  }
  return delta;
}

void adam_step(AdamState& s, std::span<double> params,
               std::span<const double> grads) {
  require(params.size() == grads.size(), "adam_step: shape mismatch");
  if (s.m.empty()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  require(s.m.size() == params.size(), "adam_step: state sized for a "
                                       "different parameter vector");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      fail("adam_step: non-finite gradient at index " + std::to_string(i));
    }
  }
  s.step_count += 1;
  const double t = static_cast<double>(s.step_count);
  const double bc1 = 1.0 - std::pow(s.beta1, t);
  const double bc2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

std::vector<std::span<double>> param_spans(DenseNet& net) {
  std::vector<std::span<double>> out;
  for (auto& l : net.layers) {
    out.push_back({l.w.data.data(), l.w.data.size()});
    out.push_back({l.b.data(), l.b.size()});
  }
  return out;
}

std::vector<std::span<const double>> param_spans(const DenseNet& net) {
  std::vector<std::span<const double>> out;
  for (const auto& l : net.layers) {
    out.push_back({l.w.data.data(), l.w.data.size()});
    out.push_back({l.b.data(), l.b.size()});
  }
  return out;
}

std::vector<std::span<double>> grad_spans(NetGrads& g) {
  std::vector<std::span<double>> out;
  for (auto& l : g.layers) {
    out.push_back({l.dw.data.data(), l.dw.data.size()});
    out.push_back({l.db.data(), l.db.size()});
  }
  return out;
}

std::vector<std::span<const double>> grad_spans(const NetGrads& g) {
  std::vector<std::span<const double>> out;
  for (const auto& l : g.layers) {
    out.push_back({l.dw.data.data(), l.dw.data.size()});
    out.push_back({l.db.data(), l.db.size()});
  }
  return out;
}

std::size_t total_size(const std::vector<std::span<const double>>& parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  return n;
}

Vec pack(const std::vector<std::span<const double>>& parts) {
  Vec flat;
  flat.reserve(total_size(parts));
  for (const auto& p : parts) flat.insert(flat.end(), p.begin(), p.end());
  return flat;
}

void unpack(std::span<const double> flat,
            const std::vector<std::span<double>>& parts) {
  std::size_t off = 0;
  for (const auto& p : parts) {
    require(off + p.size() <= flat.size(), "unpack: flat vector too short");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = flat[off + i];
    off += p.size();
  }
  require(off == flat.size(), "unpack: flat vector too long");
}

Json net_to_json(const DenseNet& net) {
  Json layers = Json::array();
  for (const auto& l : net.layers) {
    Json w = Json::array();
    for (std::size_t i = 0; i < l.w.rows; ++i) {
      Json row = Json::array();
      for (std::size_t j = 0; j < l.w.cols; ++j) row.push_back(l.w(i, j));
      w.push_back(std::move(row));
    }
    Json jl;
    jl["w"] = std::move(w);
    jl["b"] = l.b;
    jl["act"] = l.act == Activation::kRelu ? "relu" : "id";
    layers.push_back(std::move(jl));
  }
  Json out;
  out["layers"] = std::move(layers);
  return out;
}

DenseNet net_from_json(const Json& j) {
  require(j.contains("layers") && j["layers"].is_array(),
          "net_from_json: missing layers array");
  DenseNet net;
  for (const auto& jl : j["layers"]) {
    DenseLayer l;
    const auto& w = jl.at("w");
    require(w.is_array() && !w.empty(), "net_from_json: bad weight matrix");
    const std::size_t rows = w.size();
    const std::size_t cols = w[0].size();
    l.w = Matrix(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      require(w[i].size() == cols, "net_from_json: ragged weight matrix");
      for (std::size_t jj = 0; jj < cols; ++jj)
        l.w(i, jj) = w[i][jj].get<double>();
    }
    l.b = jl.at("b").get<Vec>();
    require(l.b.size() == rows, "net_from_json: bias length mismatch");
    const std::string act = jl.at("act").get<std::string>();
    if (act == "relu") {
      l.act = Activation::kRelu;
    } else if (act == "id") {
      l.act = Activation::kIdentity;
    } else {
      fail("net_from_json: unknown activation '" + act + "'");
    }
    net.layers.push_back(std::move(l));
  }
  require(!net.layers.empty(), "net_from_json: empty net");
  for (std::size_t i = 1; i < net.layers.size(); ++i) {
    require(net.layers[i].w.cols == net.layers[i - 1].w.rows,
            "net_from_json: layer dimension chain broken at layer " +
                std::to_string(i));
  }
  return net;
}

}  // namespace latentdyn
