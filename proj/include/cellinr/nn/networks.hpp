#pragma once

#include <cstdint>
#include <vector>

#include "cellinr/nn/encoding.hpp"
#include "cellinr/nn/mlp.hpp"
#include "cellinr/rng.hpp"

namespace cellinr::nn {

struct NetConfig {
  int epsilon = 10;
  int hidden_layers = 8;
  int hidden_width = 256;
  // 1-indexed hidden layer of the kernel net that also receives the encoded centre.
  int kernel_inject_layer = 7;
};

// The three networks of one case: coarse density (softplus head), fine colour
// (sigmoid head) and kernel scores (linear head, centre injection).
template <class T>
struct Networks {
  int epsilon = 10;
  MlpParams<T> coarse, fine, kernel;

  // Trainable tensors in a fixed order: coarse, fine, kernel.
  std::vector<Matrix<T>*> tensors() {
    std::vector<Matrix<T>*> out;
    for (auto* net : {&coarse, &fine, &kernel}) net->for_each_tensor([&](Matrix<T>& m) { out.push_back(&m); });
    return out;
  }

  template <class U>
  [[nodiscard]] Networks<U> cast() const {
    return {epsilon, coarse.template cast<U>(), fine.template cast<U>(), kernel.template cast<U>()};
  }
};

template <class T>
Networks<T> make_networks(const NetConfig& c, std::uint64_t seed) {
  const std::size_t enc = encoding_width(c.epsilon);
  Networks<T> n;
  n.epsilon = c.epsilon;
  Rng rc = stream_rng(seed, 0xC0A5E), rf = stream_rng(seed, 0xF1AE), rk = stream_rng(seed, 0x6E27E1);
  const auto width = static_cast<std::size_t>(c.hidden_width);
  n.coarse = make_mlp<T>({enc, c.hidden_layers, width, 1, Activation::softplus, 0, 0}, rc);
  n.fine = make_mlp<T>({enc, c.hidden_layers, width, 1, Activation::sigmoid, 0, 0}, rf);
  n.kernel = make_mlp<T>({enc, c.hidden_layers, width, 1, Activation::linear, c.kernel_inject_layer, enc}, rk);
  return n;
}

}  // namespace cellinr::nn
