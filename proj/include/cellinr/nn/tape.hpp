#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/nn/matrix.hpp"

namespace cellinr::nn {

using NodeId = std::size_t;

// Reverse-mode record of one forward pass at matrix granularity. Nodes are
// appended in evaluation order, so the node index is already a topological
// order; backward() walks it in reverse and visits every node once.
template <class T>
class Tape {
 public:
  using Forward = std::function<Matrix<T>(const Tape&)>;
  using Backward = std::function<void(Tape&, NodeId self)>;

  NodeId constant(Matrix<T> value) { return add_leaf(std::move(value), nullptr, false); }

  // Leaf referencing parameter storage owned by the caller; it must outlive the tape.
  NodeId parameter(const Matrix<T>& value) { return add_leaf({}, &value, true); }

  // Appends an operation node. `forward` computes the value from the inputs'
  // values (kept for replay); `backward` accumulates into the inputs' adjoints
  // given this node's adjoint.
  NodeId record(std::vector<NodeId> inputs, Forward forward, Backward backward) {
    bool grad = false;
    for (NodeId in : inputs) {
      if (in >= nodes_.size()) throw ShapeError("tape: input refers to a future node");
      grad = grad || nodes_[in].needs_grad;
    }
    Node n;
    n.value = forward(*this);
    n.inputs = std::move(inputs);
    n.needs_grad = grad;
    n.forward = std::move(forward);
    if (grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  [[nodiscard]] const Matrix<T>& value(NodeId id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  [[nodiscard]] bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }
  [[nodiscard]] const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Adjoint of a node; allocated (zeroed) on first access.
  Matrix<T>& adjoint(NodeId id) {
    Node& n = nodes_[id];
    if (n.adjoint.empty()) {
      const auto& v = value(id);
      n.adjoint = Matrix<T>(v.rows(), v.cols());
    }
    return n.adjoint;
  }
  [[nodiscard]] bool has_adjoint(NodeId id) const { return !nodes_[id].adjoint.empty(); }

  // Seeds d(root) = seed for a 1x1 root and propagates to every leaf.
  void backward(NodeId root, T seed = T(1)) {
    if (value(root).size() != 1) throw ShapeError("backward needs a scalar root");
    for (auto& n : nodes_) n.adjoint = Matrix<T>();
    adjoint(root)[0] = seed;
    for (NodeId id = root + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.adjoint.empty()) continue;
      n.backward(*this, id);
    }
  }

  // Re-evaluates every operation from its inputs and checks bit equality with
  // the cached values.
  void verify_replay() const {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (!n.forward) continue;
      if (!(n.forward(*this) == n.value))
        throw NumericError("tape replay mismatch at node " + std::to_string(id));
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    const Matrix<T>* external = nullptr;
    Matrix<T> adjoint;
    std::vector<NodeId> inputs;
    bool needs_grad = false;
    Forward forward;
    Backward backward;
  };

  NodeId add_leaf(Matrix<T> value, const Matrix<T>* external, bool grad) {
    Node n;
    n.value = std::move(value);
    n.external = external;
    n.needs_grad = grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
};

// ---- primitive operations ----

template <class T>
NodeId linear(Tape<T>& t, NodeId x, NodeId w, NodeId b) {
  return t.record(
      {x, w, b},
      [=](const Tape<T>& tp) {
        Matrix<T> y;
        linear_forward(tp.value(x), tp.value(w), tp.value(b), y);
        return y;
      },
      [=](Tape<T>& tp, NodeId self) {
        const Matrix<T>& dy = tp.adjoint(self);
        if (tp.needs_grad(w) || tp.needs_grad(b)) {
          linear_backward_params(tp.value(x), dy, tp.adjoint(w), tp.adjoint(b));
        }
        if (tp.needs_grad(x)) {
          Matrix<T> dx;
          linear_backward_input(dy, tp.value(w), dx);
          auto& ax = tp.adjoint(x);
          for (std::size_t i = 0; i < dx.size(); ++i) ax[i] += dx[i];
        }
      });
}

template <class T, class F, class DF>
NodeId elementwise(Tape<T>& t, NodeId x, F f, DF df_from_y) {
  return t.record(
      {x},
      [=](const Tape<T>& tp) {
        Matrix<T> y = tp.value(x);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(y[i]);
        return y;
      },
      [=](Tape<T>& tp, NodeId self) {
        const auto& y = tp.value(self);
        const auto& xv = tp.value(x);
        const auto& dy = tp.adjoint(self);
        auto& dx = tp.adjoint(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * df_from_y(xv[i], y[i]);
      });
}

template <class T>
T softplus_value(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}
template <class T>
T sigmoid_value(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
NodeId relu(Tape<T>& t, NodeId x) {
  return elementwise(
      t, x, [](T v) { return v > T(0) ? v : T(0); }, [](T xv, T) { return xv > T(0) ? T(1) : T(0); });
}

template <class T>
NodeId sigmoid(Tape<T>& t, NodeId x) {
  return elementwise(t, x, [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
NodeId softplus(Tape<T>& t, NodeId x) {
  return elementwise(t, x, [](T v) { return softplus_value(v); }, [](T xv, T) { return sigmoid_value(xv); });
}

// [a | b] along columns; rows must agree.
template <class T>
NodeId concat_cols(Tape<T>& t, NodeId a, NodeId b) {
  return t.record(
      {a, b},
      [=](const Tape<T>& tp) {
        const auto &av = tp.value(a), &bv = tp.value(b);
        if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row mismatch");
        Matrix<T> y(av.rows(), av.cols() + bv.cols());
        for (std::size_t r = 0; r < av.rows(); ++r) {
          std::copy(av.row(r), av.row(r) + av.cols(), y.row(r));
          std::copy(bv.row(r), bv.row(r) + bv.cols(), y.row(r) + av.cols());
        }
        return y;
      },
      [=](Tape<T>& tp, NodeId self) {
        const auto& dy = tp.adjoint(self);
        const std::size_t ca = tp.value(a).cols(), cb = tp.value(b).cols();
        if (tp.needs_grad(a)) {
          auto& da = tp.adjoint(a);
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t c = 0; c < ca; ++c) da(r, c) += dy(r, c);
        }
        if (tp.needs_grad(b)) {
          auto& db = tp.adjoint(b);
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t c = 0; c < cb; ++c) db(r, c) += dy(r, ca + c);
        }
      });
}

// Softmax of a column vector within consecutive groups of `group` rows,
// max-subtracted for stability.
template <class T>
NodeId group_softmax(Tape<T>& t, NodeId s, std::size_t group) {
  return t.record(
      {s},
      [=](const Tape<T>& tp) {
        const auto& sv = tp.value(s);
        if (sv.cols() != 1 || group == 0 || sv.rows() % group != 0) throw ShapeError("group_softmax: bad shape");
        Matrix<T> y(sv.rows(), 1);
        for (std::size_t g0 = 0; g0 < sv.rows(); g0 += group) {
          T mx = sv[g0];
          for (std::size_t i = 1; i < group; ++i) mx = std::max(mx, sv[g0 + i]);
          double sum = 0.0;
          for (std::size_t i = 0; i < group; ++i) sum += (y[g0 + i] = std::exp(sv[g0 + i] - mx));
          for (std::size_t i = 0; i < group; ++i) y[g0 + i] = static_cast<T>(y[g0 + i] / sum);
        }
        return y;
      },
      [=](Tape<T>& tp, NodeId self) {
        const auto& y = tp.value(self);
        const auto& dy = tp.adjoint(self);
        auto& ds = tp.adjoint(s);
        for (std::size_t g0 = 0; g0 < y.rows(); g0 += group) {
          double inner = 0.0;
          for (std::size_t i = 0; i < group; ++i) inner += static_cast<double>(dy[g0 + i]) * y[g0 + i];
          for (std::size_t i = 0; i < group; ++i)
            ds[g0 + i] += static_cast<T>(y[g0 + i] * (dy[g0 + i] - inner));
        }
      });
}

// out[g] = sum_i c[g*group + i] * w[g*group + i]
template <class T>
NodeId group_weighted_sum(Tape<T>& t, NodeId c, NodeId w, std::size_t group) {
  return t.record(
      {c, w},
      [=](const Tape<T>& tp) {
        const auto &cv = tp.value(c), &wv = tp.value(w);
        if (cv.size() != wv.size() || cv.cols() != 1 || cv.rows() % group != 0)
          throw ShapeError("group_weighted_sum: bad shape");
        Matrix<T> y(cv.rows() / group, 1);
        for (std::size_t g = 0; g < y.rows(); ++g) {
          double s = 0.0;
          for (std::size_t i = 0; i < group; ++i) s += static_cast<double>(cv[g * group + i]) * wv[g * group + i];
          y[g] = static_cast<T>(s);
        }
        return y;
      },
      [=](Tape<T>& tp, NodeId self) {
        const auto& dy = tp.adjoint(self);
        const auto &cv = tp.value(c), &wv = tp.value(w);
        const bool gc = tp.needs_grad(c), gw = tp.needs_grad(w);
        for (std::size_t g = 0; g < dy.rows(); ++g)
          for (std::size_t i = 0; i < group; ++i) {
            const std::size_t k = g * group + i;
            if (gc) tp.adjoint(c)[k] += dy[g] * wv[k];
            if (gw) tp.adjoint(w)[k] += dy[g] * cv[k];
          }
      });
}

// a + scale * b for 1x1 nodes.
template <class T>
NodeId add_scaled(Tape<T>& t, NodeId a, NodeId b, T scale) {
  return t.record(
      {a, b},
      [=](const Tape<T>& tp) {
        Matrix<T> y(1, 1);
        y[0] = tp.value(a)[0] + scale * tp.value(b)[0];
        return y;
      },
      [=](Tape<T>& tp, NodeId self) {
        const T g = tp.adjoint(self)[0];
        if (tp.needs_grad(a)) tp.adjoint(a)[0] += g;
        if (tp.needs_grad(b)) tp.adjoint(b)[0] += scale * g;
      });
}

// Sum of all entries of a single node; convenient scalar root for tests.
template <class T>
NodeId sum_all(Tape<T>& t, NodeId x) {
  return t.record(
      {x},
      [=](const Tape<T>& tp) {
        Matrix<T> y(1, 1);
        double s = 0.0;
        for (T v : tp.value(x).span()) s += v;
        y[0] = static_cast<T>(s);
        return y;
      },
      [=](Tape<T>& tp, NodeId self) {
        const T g = tp.adjoint(self)[0];
        auto& dx = tp.adjoint(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
      });
}

// x * x elementwise.
template <class T>
NodeId square(Tape<T>& t, NodeId x) {
  return elementwise(t, x, [](T v) { return v * v; }, [](T xv, T) { return T(2) * xv; });
}

}  // namespace cellinr::nn
