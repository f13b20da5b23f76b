#include "fedn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace fedn::ag {

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  if (!grad.same_shape(g)) throw std::logic_error("gradient shape mismatch");
  double* dst = grad.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < grad.numel(); ++i) dst[i] += src[i];
}

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

namespace {

// A node participates in backprop if it is a parameter or depends on one.
bool needs_grad(const Var& v) { return v->requires_grad; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

}  // namespace

Var custom_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  return make_op(std::move(value), std::move(parents), std::move(backprop));
}

void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS -> topological order.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* child = node->parents[next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// --------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (needs_grad(a)) a->accumulate(n.grad);
    if (needs_grad(b)) b->accumulate(n.grad);
  });
}

Var scale(const Var& x, double c) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make_op(std::move(out), {x}, [x, c](Node& n) {
    if (!needs_grad(x)) return;
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= c;
    x->accumulate(g);
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t d = x->value.shape().back();
  if (bias->value.rank() != 1 || bias->value.dim(0) != d)
    throw std::invalid_argument("add_bias: bias shape mismatch");
  Tensor out = x->value;
  const std::size_t rows = out.numel() / d;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += bias->value[j];
  return make_op(std::move(out), {x, bias}, [x, bias, d](Node& n) {
    if (needs_grad(x)) x->accumulate(n.grad);
    if (needs_grad(bias)) {
      Tensor g({d});
      const std::size_t rows = n.grad.numel() / d;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[j] += n.grad[r * d + j];
      bias->accumulate(g);
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
  return make_op(std::move(out), {x}, [x](Node& n) {
    if (!needs_grad(x)) return;
    Tensor g = n.grad;
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (x->value[i] <= 0.0) g[i] = 0.0;
    x->accumulate(g);
  });
}

Var layer_norm_last(const Var& x, const Var& gain, const Var& bias) {
  const std::size_t d = x->value.shape().back();
  if (gain->value.rank() != 1 || gain->value.dim(0) != d || bias->value.rank() != 1 ||
      bias->value.dim(0) != d)
    throw std::invalid_argument("layer_norm_last: gain/bias shape mismatch");
  constexpr double kEps = 1e-5;
  const std::size_t rows = x->value.numel() / d;

  Tensor out(x->value.shape());
  Tensor inv_sigma({rows});
  Tensor mean({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x->value.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kEps);
    mean[r] = mu;
    inv_sigma[r] = inv;
    double* orow = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j)
      orow[j] = gain->value[j] * (row[j] - mu) * inv + bias->value[j];
  }

  return make_op(std::move(out), {x, gain, bias},
                 [x, gain, bias, mean, inv_sigma, d, rows](Node& node) {
    Tensor gx, gg, gb;
    if (needs_grad(x)) gx = Tensor::zeros(x->value.shape());
    if (needs_grad(gain)) gg = Tensor({d});
    if (needs_grad(bias)) gb = Tensor({d});
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = x->value.data() + r * d;
      const double* dy = node.grad.data() + r * d;
      const double mu = mean[r];
      const double inv = inv_sigma[r];
      if (!gg.empty() || !gb.empty()) {
        for (std::size_t j = 0; j < d; ++j) {
          const double xhat = (row[j] - mu) * inv;
          if (!gg.empty()) gg[j] += dy[j] * xhat;
          if (!gb.empty()) gb[j] += dy[j];
        }
      }
      if (!gx.empty()) {
        // dxhat = dy * gain; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxhat = dy[j] * gain->value[j];
          const double xhat = (row[j] - mu) * inv;
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        double* gxr = gx.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxhat = dy[j] * gain->value[j];
          const double xhat = (row[j] - mu) * inv;
          gxr[j] = inv * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
        }
      }
    }
    if (!gx.empty()) x->accumulate(gx);
    if (!gg.empty()) gain->accumulate(gg);
    if (!gb.empty()) bias->accumulate(gb);
  });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_op(std::move(out), {x}, [x](Node& n) {
    if (needs_grad(x)) x->accumulate(n.grad.reshaped(x->value.shape()));
  });
}

Var slice_last(const Var& x, std::size_t from, std::size_t len) {
  const std::size_t d = x->value.shape().back();
  if (from + len > d) throw std::invalid_argument("slice_last: out of range");
  std::vector<std::size_t> shape = x->value.shape();
  shape.back() = len;
  Tensor out(shape);
  const std::size_t rows = x->value.numel() / d;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = x->value[r * d + from + j];
  return make_op(std::move(out), {x}, [x, from, len, d](Node& n) {
    if (!needs_grad(x)) return;
    Tensor g = Tensor::zeros(x->value.shape());
    const std::size_t rows = x->value.numel() / d;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) g[r * d + from + j] = n.grad[r * len + j];
    x->accumulate(g);
  });
}

// --------------------------------------------------------------------------

namespace {

// out (M,N) += a (M,K) @ b (K,N). ikj order keeps the inner loop contiguous.
void matmul_acc(const double* a, const double* b, double* out, std::size_t m,
                std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out (M,K) += a (M,N) @ b^T where b is (K,N).
void matmul_bt_acc(const double* a, const double* b, double* out, std::size_t m,
                   std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* orow = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      orow[p] += acc;
    }
  }
}

// out (K,N) += a^T @ b where a is (M,K), b is (M,N).
void matmul_at_acc(const double* a, const double* b, double* out, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var linear(const Var& x, const Var& w, const Var& bias) {
  Var y = linear(x, w);
  return add_bias(y, bias);
}

Var linear(const Var& x, const Var& w) {
  if (w->value.rank() != 2) throw std::invalid_argument("linear: weight must be (K,N)");
  const std::size_t k = w->value.dim(0);
  const std::size_t n = w->value.dim(1);
  if (x->value.shape().back() != k) throw std::invalid_argument("linear: K mismatch");
  const std::size_t m = x->value.numel() / k;

  std::vector<std::size_t> out_shape = x->value.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  matmul_acc(x->value.data(), w->value.data(), out.data(), m, k, n);

  return make_op(std::move(out), {x, w}, [x, w, m, k, n](Node& node) {
    if (needs_grad(x)) {
      Tensor gx = Tensor::zeros(x->value.shape());
      matmul_bt_acc(node.grad.data(), w->value.data(), gx.data(), m, n, k);
      x->accumulate(gx);
    }
    if (needs_grad(w)) {
      Tensor gw = Tensor::zeros(w->value.shape());
      matmul_at_acc(x->value.data(), node.grad.data(), gw.data(), m, k, n);
      w->accumulate(gw);
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  if (a->value.rank() != 3 || b->value.rank() != 3)
    throw std::invalid_argument("bmm: need rank-3 inputs");
  const std::size_t batch = a->value.dim(0);
  const std::size_t m = a->value.dim(1);
  const std::size_t k = a->value.dim(2);
  const std::size_t n = b->value.dim(2);
  if (b->value.dim(0) != batch || b->value.dim(1) != k)
    throw std::invalid_argument("bmm: shape mismatch");

  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i)
    matmul_acc(a->value.data() + i * m * k, b->value.data() + i * k * n,
               out.data() + i * m * n, m, k, n);

  return make_op(std::move(out), {a, b}, [a, b, batch, m, k, n](Node& node) {
    if (needs_grad(a)) {
      Tensor ga = Tensor::zeros(a->value.shape());
      for (std::size_t i = 0; i < batch; ++i)
        matmul_bt_acc(node.grad.data() + i * m * n, b->value.data() + i * k * n,
                      ga.data() + i * m * k, m, n, k);
      a->accumulate(ga);
    }
    if (needs_grad(b)) {
      Tensor gb = Tensor::zeros(b->value.shape());
      for (std::size_t i = 0; i < batch; ++i)
        matmul_at_acc(a->value.data() + i * m * k, node.grad.data() + i * m * n,
                      gb.data() + i * k * n, m, k, n);
      b->accumulate(gb);
    }
  });
}

Var transpose_last2(const Var& x) {
  if (x->value.rank() != 3) throw std::invalid_argument("transpose_last2: need rank 3");
  const std::size_t b = x->value.dim(0), m = x->value.dim(1), n = x->value.dim(2);
  Tensor out({b, n, m});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) out.at(i, c, r) = x->value.at(i, r, c);
  return make_op(std::move(out), {x}, [x, b, m, n](Node& node) {
    if (!needs_grad(x)) return;
    Tensor g({b, m, n});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g.at(i, r, c) = node.grad.at(i, c, r);
    x->accumulate(g);
  });
}

// --------------------------------------------------------------------------

Var softmax_last(const Var& x) {
  const std::size_t d = x->value.shape().back();
  const std::size_t rows = x->value.numel() / d;
  Tensor out = x->value;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * d;
    double mx = row[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) row[j] /= sum;
  }
  return make_op(std::move(out), {x}, [x, d](Node& node) {
    if (!needs_grad(x)) return;
    const std::size_t rows = node.value.numel() / d;
    Tensor g(x->value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = node.value.data() + r * d;
      const double* dy = node.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += y[j] * dy[j];
      double* gx = g.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) gx[j] = y[j] * (dy[j] - dot);
    }
    x->accumulate(g);
  });
}

Var mean_axis1(const Var& x) {
  if (x->value.rank() != 3) throw std::invalid_argument("mean_axis1: need (B,T,D)");
  const std::size_t b = x->value.dim(0), t = x->value.dim(1), d = x->value.dim(2);
  Tensor out({b, d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) += x->value.at(i, s, j) / t;
  return make_op(std::move(out), {x}, [x, b, t, d](Node& node) {
    if (!needs_grad(x)) return;
    Tensor g({b, t, d});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < d; ++j) g.at(i, s, j) = node.grad.at(i, j) / t;
    x->accumulate(g);
  });
}

Var weighted_sum_axis1(const Var& x, const Var& w) {
  if (x->value.rank() != 3 || w->value.rank() != 2)
    throw std::invalid_argument("weighted_sum_axis1: need (B,T,D) and (B,T)");
  const std::size_t b = x->value.dim(0), t = x->value.dim(1), d = x->value.dim(2);
  if (w->value.dim(0) != b || w->value.dim(1) != t)
    throw std::invalid_argument("weighted_sum_axis1: weight shape mismatch");
  Tensor out({b, d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t s = 0; s < t; ++s) {
      const double wv = w->value.at(i, s);
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) += wv * x->value.at(i, s, j);
    }
  return make_op(std::move(out), {x, w}, [x, w, b, t, d](Node& node) {
    if (needs_grad(x)) {
      Tensor g({b, t, d});
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t s = 0; s < t; ++s) {
          const double wv = w->value.at(i, s);
          for (std::size_t j = 0; j < d; ++j) g.at(i, s, j) = wv * node.grad.at(i, j);
        }
      x->accumulate(g);
    }
    if (needs_grad(w)) {
      Tensor g({b, t});
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t s = 0; s < t; ++s) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) acc += x->value.at(i, s, j) * node.grad.at(i, j);
          g.at(i, s) = acc;
        }
      w->accumulate(g);
    }
  });
}

Var row_scale(const Var& x, const Var& w) {
  if (x->value.rank() != 2 || w->value.rank() != 1)
    throw std::invalid_argument("row_scale: need (T,D) and (T)");
  const std::size_t t = x->value.dim(0), d = x->value.dim(1);
  if (w->value.dim(0) != t) throw std::invalid_argument("row_scale: weight length mismatch");
  Tensor out({t, d});
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t j = 0; j < d; ++j) out.at(s, j) = x->value.at(s, j) * w->value[s];
  return make_op(std::move(out), {x, w}, [x, w, t, d](Node& node) {
    if (needs_grad(x)) {
      Tensor g({t, d});
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < d; ++j) g.at(s, j) = node.grad.at(s, j) * w->value[s];
      x->accumulate(g);
    }
    if (needs_grad(w)) {
      Tensor g({t});
      for (std::size_t s = 0; s < t; ++s) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += node.grad.at(s, j) * x->value.at(s, j);
        g[s] = acc;
      }
      w->accumulate(g);
    }
  });
}

Var concat_broadcast(const Var& x, const Var& g) {
  if (x->value.rank() != 3 || g->value.rank() != 2)
    throw std::invalid_argument("concat_broadcast: need (B,T,D) and (B,D)");
  const std::size_t b = x->value.dim(0), t = x->value.dim(1), d = x->value.dim(2);
  if (g->value.dim(0) != b || g->value.dim(1) != d)
    throw std::invalid_argument("concat_broadcast: global shape mismatch");
  Tensor out({b, t, 2 * d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t j = 0; j < d; ++j) {
        out.at(i, s, j) = x->value.at(i, s, j);
        out.at(i, s, d + j) = g->value.at(i, j);
      }
  return make_op(std::move(out), {x, g}, [x, g, b, t, d](Node& node) {
    if (needs_grad(x)) {
      Tensor gx({b, t, d});
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t j = 0; j < d; ++j) gx.at(i, s, j) = node.grad.at(i, s, j);
      x->accumulate(gx);
    }
    if (needs_grad(g)) {
      Tensor gg({b, d});
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t j = 0; j < d; ++j) gg.at(i, j) += node.grad.at(i, s, d + j);
      g->accumulate(gg);
    }
  });
}

Var split_heads(const Var& x, std::size_t heads) {
  if (x->value.rank() != 3) throw std::invalid_argument("split_heads: need (B,T,D)");
  const std::size_t b = x->value.dim(0), t = x->value.dim(1), d = x->value.dim(2);
  if (d % heads != 0) throw std::invalid_argument("split_heads: heads must divide D");
  const std::size_t dh = d / heads;
  Tensor out({b * heads, t, dh});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < dh; ++j)
          out.at(i * heads + h, s, j) = x->value.at(i, s, h * dh + j);
  return make_op(std::move(out), {x}, [x, b, t, heads, dh](Node& node) {
    if (!needs_grad(x)) return;
    Tensor g({b, t, heads * dh});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t j = 0; j < dh; ++j)
            g.at(i, s, h * dh + j) = node.grad.at(i * heads + h, s, j);
    x->accumulate(g);
  });
}

Var merge_heads(const Var& x, std::size_t heads) {
  if (x->value.rank() != 3) throw std::invalid_argument("merge_heads: need (B*H,T,dh)");
  const std::size_t bh = x->value.dim(0), t = x->value.dim(1), dh = x->value.dim(2);
  if (bh % heads != 0) throw std::invalid_argument("merge_heads: batch not divisible");
  const std::size_t b = bh / heads;
  Tensor out({b, t, heads * dh});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < dh; ++j)
          out.at(i, s, h * dh + j) = x->value.at(i * heads + h, s, j);
  return make_op(std::move(out), {x}, [x, b, t, heads, dh](Node& node) {
    if (!needs_grad(x)) return;
    Tensor g({b * heads, t, dh});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t j = 0; j < dh; ++j)
            g.at(i * heads + h, s, j) = node.grad.at(i, s, h * dh + j);
    x->accumulate(g);
  });
}

Var sum_all(const Var& x) {
  Tensor out({1});
  for (std::size_t i = 0; i < x->value.numel(); ++i) out[0] += x->value[i];
  return make_op(std::move(out), {x}, [x](Node& node) {
    if (!needs_grad(x)) return;
    Tensor g(x->value.shape(), node.grad[0]);
    x->accumulate(g);
  });
}

// --------------------------------------------------------------------------

std::size_t conv1d_output_length(std::size_t t, std::size_t kernel, std::size_t stride,
                                 std::size_t pad) {
  return (t + 2 * pad - kernel) / stride + 1;
}

Var conv1d(const Var& x, const Var& w, const Var& bias, std::size_t stride,
           std::size_t pad) {
  if (x->value.rank() != 2 || w->value.rank() != 3)
    throw std::invalid_argument("conv1d: need x (T,Cin), w (Cout,Cin,K)");
  const std::size_t t = x->value.dim(0), cin = x->value.dim(1);
  const std::size_t cout = w->value.dim(0), kernel = w->value.dim(2);
  if (w->value.dim(1) != cin) throw std::invalid_argument("conv1d: Cin mismatch");
  if (bias->value.rank() != 1 || bias->value.dim(0) != cout)
    throw std::invalid_argument("conv1d: bias shape mismatch");
  if (t + 2 * pad < kernel) throw std::invalid_argument("conv1d: input too short");
  const std::size_t tout = conv1d_output_length(t, kernel, stride, pad);

  Tensor out({tout, cout});
  for (std::size_t o = 0; o < tout; ++o)
    for (std::size_t c = 0; c < cout; ++c) {
      double acc = bias->value[c];
      for (std::size_t kk = 0; kk < kernel; ++kk) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + kk) -
                                   static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
        for (std::size_t ci = 0; ci < cin; ++ci)
          acc += x->value.at(static_cast<std::size_t>(src), ci) * w->value.at(c, ci, kk);
      }
      out.at(o, c) = acc;
    }

  return make_op(std::move(out), {x, w, bias},
                 [x, w, bias, t, cin, cout, kernel, stride, pad, tout](Node& node) {
    if (needs_grad(x)) {
      Tensor gx({t, cin});
      for (std::size_t o = 0; o < tout; ++o)
        for (std::size_t c = 0; c < cout; ++c) {
          const double dy = node.grad.at(o, c);
          if (dy == 0.0) continue;
          for (std::size_t kk = 0; kk < kernel; ++kk) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + kk) -
                                       static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              gx.at(static_cast<std::size_t>(src), ci) += dy * w->value.at(c, ci, kk);
          }
        }
      x->accumulate(gx);
    }
    if (needs_grad(w)) {
      Tensor gw({cout, cin, kernel});
      for (std::size_t o = 0; o < tout; ++o)
        for (std::size_t c = 0; c < cout; ++c) {
          const double dy = node.grad.at(o, c);
          if (dy == 0.0) continue;
          for (std::size_t kk = 0; kk < kernel; ++kk) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + kk) -
                                       static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              gw.at(c, ci, kk) += dy * x->value.at(static_cast<std::size_t>(src), ci);
          }
        }
      w->accumulate(gw);
    }
    if (needs_grad(bias)) {
      Tensor gb({cout});
      for (std::size_t o = 0; o < tout; ++o)
        for (std::size_t c = 0; c < cout; ++c) gb[c] += node.grad.at(o, c);
      bias->accumulate(gb);
    }
  });
}

// --------------------------------------------------------------------------

Var bce_with_logits_sum(const Var& logits, Tensor targets) {
  if (!logits->value.same_shape(targets))
    throw std::invalid_argument("bce_with_logits_sum: target shape mismatch");
  Tensor out({1});
  double acc = 0.0;
  for (std::size_t i = 0; i < targets.numel(); ++i) {
    const double z = logits->value[i];
    const double t = targets[i];
    // max(z,0) - z t + log(1 + exp(-|z|)): stable for any |z|.
    acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  out[0] = acc;
  return make_op(std::move(out), {logits}, [logits, targets](Node& node) {
    if (!needs_grad(logits)) return;
    const double up = node.grad[0];
    Tensor g(logits->value.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double z = logits->value[i];
      const double sig = 1.0 / (1.0 + std::exp(-z));
      g[i] = up * (sig - targets[i]);
    }
    logits->accumulate(g);
  });
}

Var softmax_ce_masked_sum(const Var& logits, std::vector<int> target_class,
                          std::vector<char> mask) {
  if (logits->value.rank() != 2)
    throw std::invalid_argument("softmax_ce_masked_sum: need (R,C)");
  const std::size_t rows = logits->value.dim(0), c = logits->value.dim(1);
  if (target_class.size() != rows || mask.size() != rows)
    throw std::invalid_argument("softmax_ce_masked_sum: row metadata mismatch");

  Tensor out({1});
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const double* row = logits->value.data() + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    acc += std::log(sum) + mx - row[target_class[r]];
  }
  out[0] = acc;

  return make_op(std::move(out), {logits},
                 [logits, target_class = std::move(target_class),
                  mask = std::move(mask), rows, c](Node& node) {
    if (!needs_grad(logits)) return;
    const double up = node.grad[0];
    Tensor g(logits->value.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      if (!mask[r]) continue;
      const double* row = logits->value.data() + r * c;
      double mx = row[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
      double* grow = g.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - mx) / sum;
        grow[j] = up * (p - (static_cast<int>(j) == target_class[r] ? 1.0 : 0.0));
      }
    }
    logits->accumulate(g);
  });
}

}  // namespace fedn::ag
