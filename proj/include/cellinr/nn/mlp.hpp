#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/nn/matrix.hpp"
#include "cellinr/nn/tape.hpp"
#include "cellinr/rng.hpp"

namespace cellinr::nn {

enum class Activation : int { linear = 0, relu = 1, sigmoid = 2, softplus = 3 };

template <class T>
struct Layer {
  Matrix<T> weight;  // in x out
  Matrix<T> bias;    // 1 x out
  Activation activation = Activation::relu;

  [[nodiscard]] std::size_t in() const { return weight.rows(); }
  [[nodiscard]] std::size_t out() const { return weight.cols(); }
};

// Fully-connected stack. When inject_layer >= 0, a side input of inject_width
// columns is concatenated to the activation entering layers[inject_layer].
template <class T>
struct MlpParams {
  std::vector<Layer<T>> layers;
  int inject_layer = -1;
  std::size_t inject_width = 0;

  [[nodiscard]] std::size_t input_width() const {
    return layers.front().in() - (inject_layer == 0 ? inject_width : 0);
  }
  [[nodiscard]] std::size_t output_width() const { return layers.back().out(); }
  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Visits weight, bias of each layer in order.
  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) {
      f(l.weight);
      f(l.bias);
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (const auto& l : layers) {
      f(l.weight);
      f(l.bias);
    }
  }

  template <class U>
  [[nodiscard]] MlpParams<U> cast() const {
    MlpParams<U> out;
    out.inject_layer = inject_layer;
    out.inject_width = inject_width;
    for (const auto& l : layers) out.layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>(), l.activation});
    return out;
  }

  void validate() const {
    if (layers.empty()) throw ShapeError("mlp has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.rows() != 1 || l.bias.cols() != l.out()) throw ShapeError("mlp bias shape");
      if (i > 0) {
        const std::size_t expect = layers[i - 1].out() + (static_cast<int>(i) == inject_layer ? inject_width : 0);
        if (l.in() != expect) throw ShapeError("mlp layer shapes do not compose at layer " + std::to_string(i));
      }
      for (T v : l.weight.span())
        if (!std::isfinite(v)) throw NumericError("non-finite mlp weight");
      for (T v : l.bias.span())
        if (!std::isfinite(v)) throw NumericError("non-finite mlp bias");
    }
    if (inject_layer >= static_cast<int>(layers.size())) throw ShapeError("inject layer out of range");
  }
};

struct MlpShape {
  std::size_t input = 0;
  int hidden_layers = 8;
  std::size_t hidden_width = 256;
  std::size_t output = 1;
  Activation head = Activation::linear;
  // 1-indexed hidden layer whose input also receives the side vector; 0 = none.
  int inject_hidden = 0;
  std::size_t inject_width = 0;
};

// He-style uniform fan-in initialization, zero biases.
template <class T>
MlpParams<T> make_mlp(const MlpShape& s, Rng& rng) {
  if (s.hidden_layers < 1 || s.hidden_width == 0 || s.input == 0 || s.output == 0)
    throw PreconditionError("mlp shape must be positive");
  if (s.inject_hidden < 0 || s.inject_hidden > s.hidden_layers) throw PreconditionError("inject layer out of range");
  MlpParams<T> p;
  p.inject_layer = s.inject_hidden > 0 ? s.inject_hidden - 1 : -1;
  p.inject_width = s.inject_hidden > 0 ? s.inject_width : 0;
  auto add = [&](std::size_t in, std::size_t out, Activation act) {
    Layer<T> l{Matrix<T>(in, out), Matrix<T>(1, out), act};
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& w : l.weight.span()) w = static_cast<T>(u(rng));
    p.layers.push_back(std::move(l));
  };
  for (int k = 0; k < s.hidden_layers; ++k) {
    std::size_t in = k == 0 ? s.input : s.hidden_width;
    if (k == p.inject_layer) in += p.inject_width;
    add(in, s.hidden_width, Activation::relu);
  }
  add(s.hidden_width, s.output, s.head);
  return p;
}

template <class T>
void apply_activation(Matrix<T>& m, Activation a) {
  switch (a) {
    case Activation::linear: return;
    case Activation::relu:
      for (auto& v : m.span()) v = v > T(0) ? v : T(0);
      return;
    case Activation::sigmoid:
      for (auto& v : m.span()) v = sigmoid_value(v);
      return;
    case Activation::softplus:
      for (auto& v : m.span()) v = softplus_value(v);
      return;
  }
}

template <class T>
Matrix<T> concat_rows_cols(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) throw ShapeError("injection rows do not match activations");
  Matrix<T> y(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row(r), a.row(r) + a.cols(), y.row(r));
    std::copy(b.row(r), b.row(r) + b.cols(), y.row(r) + a.cols());
  }
  return y;
}

// Batched inference (no tape): one output row per input row.
template <class T>
Matrix<T> mlp_forward(const MlpParams<T>& p, const Matrix<T>& input, const Matrix<T>* inject = nullptr) {
  if (input.cols() != p.input_width()) throw ShapeError("mlp input width mismatch");
  if (p.inject_layer >= 0 && (!inject || inject->cols() != p.inject_width))
    throw ShapeError("mlp injection vector missing or wrong width");
  Matrix<T> h;
  const Matrix<T>* cur = &input;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    Matrix<T> joined;
    if (static_cast<int>(i) == p.inject_layer) {
      joined = concat_rows_cols(*cur, *inject);
      cur = &joined;
    }
    Matrix<T> y;
    linear_forward(*cur, p.layers[i].weight, p.layers[i].bias, y);
    apply_activation(y, p.layers[i].activation);
    h = std::move(y);
    cur = &h;
  }
  return h;
}

// Single-vector convenience form.
template <class T>
std::vector<T> mlp_forward(const MlpParams<T>& p, const std::vector<T>& input,
                           const std::optional<std::vector<T>>& inject = std::nullopt) {
  Matrix<T> x(1, input.size(), input);
  std::optional<Matrix<T>> inj;
  if (inject) inj = Matrix<T>(1, inject->size(), *inject);
  return mlp_forward(p, x, inj ? &*inj : nullptr).vec();
}

// Parameter leaves of one network on a tape.
struct MlpBinding {
  std::vector<NodeId> weights, biases;
};

template <class T>
MlpBinding bind(Tape<T>& t, const MlpParams<T>& p) {
  MlpBinding b;
  for (const auto& l : p.layers) {
    b.weights.push_back(t.parameter(l.weight));
    b.biases.push_back(t.parameter(l.bias));
  }
  return b;
}

template <class T>
NodeId activate(Tape<T>& t, NodeId x, Activation a) {
  switch (a) {
    case Activation::linear: return x;
    case Activation::relu: return relu(t, x);
    case Activation::sigmoid: return sigmoid(t, x);
    case Activation::softplus: return softplus(t, x);
  }
  return x;
}

template <class T>
NodeId mlp_forward(Tape<T>& t, const MlpParams<T>& p, const MlpBinding& b, NodeId input,
                   std::optional<NodeId> inject = std::nullopt) {
  if (t.value(input).cols() != p.input_width()) throw ShapeError("mlp input width mismatch");
  if (p.inject_layer >= 0 && !inject) throw ShapeError("mlp injection vector missing");
  NodeId h = input;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    if (static_cast<int>(i) == p.inject_layer) h = concat_cols(t, h, *inject);
    h = activate(t, linear(t, h, b.weights[i], b.biases[i]), p.layers[i].activation);
  }
  return h;
}

// Gradient buffers shaped like a network, accumulated in double.
struct MlpGrads {
  std::vector<std::vector<double>> tensors;  // weight0, bias0, weight1, ...

  template <class T>
  static MlpGrads zeros_like(const MlpParams<T>& p) {
    MlpGrads g;
    p.for_each_tensor([&](const Matrix<T>& m) { g.tensors.emplace_back(m.size(), 0.0); });
    return g;
  }
  void add(const MlpGrads& o) {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      for (std::size_t k = 0; k < tensors[i].size(); ++k) tensors[i][k] += o.tensors[i][k];
  }
  void set_zero() {
    for (auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
  }
};

// Adds the adjoints of a bound network into `g`; parameters that took no part
// in the pass contribute exactly zero.
template <class T>
void accumulate_grads(Tape<T>& t, const MlpBinding& b, MlpGrads& g) {
  for (std::size_t i = 0; i < b.weights.size(); ++i) {
    const NodeId ids[2] = {b.weights[i], b.biases[i]};
    for (int j = 0; j < 2; ++j) {
      if (!t.has_adjoint(ids[j])) continue;
      const auto& adj = t.adjoint(ids[j]);
      auto& dst = g.tensors[2 * i + static_cast<std::size_t>(j)];
      for (std::size_t k = 0; k < adj.size(); ++k) dst[k] += adj[k];
    }
  }
}

}  // namespace cellinr::nn
