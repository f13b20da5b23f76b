#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fedn/tensor.hpp"

namespace fedn::ag {

// Reverse-mode automatic differentiation over a dynamically built graph.
// Nodes own their value and (lazily allocated) gradient; backward() walks the
// graph in reverse topological order. Parameters are long-lived nodes whose
// values the optimizer updates in place; everything else is rebuilt per
// forward pass.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // scatters this->grad into parents

  void accumulate(const Tensor& g);
  Tensor& ensure_grad();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

// Node with a caller-supplied backward; parents that require gradients make
// the node differentiable. Backbone of the interval-loss head.
Var custom_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop);

// Backpropagate from a scalar root (seeds d root / d root = 1).
void backward(const Var& root);

// --- elementwise / structural -------------------------------------------
Var add(const Var& a, const Var& b);            // same shape
Var scale(const Var& x, double c);
Var add_bias(const Var& x, const Var& bias);    // bias broadcast over last dim
Var relu(const Var& x);
// Normalization over the channel (last) axis with learned gain and bias.
Var layer_norm_last(const Var& x, const Var& gain, const Var& bias);
Var reshape(const Var& x, std::vector<std::size_t> shape);
Var slice_last(const Var& x, std::size_t from, std::size_t len);

// --- linear algebra -------------------------------------------------------
// x (..., K) @ w (K, N) [+ bias (N)]; leading dims flattened.
Var linear(const Var& x, const Var& w, const Var& bias);
Var linear(const Var& x, const Var& w);
Var bmm(const Var& a, const Var& b);            // (B,M,K) @ (B,K,N)
Var transpose_last2(const Var& x);              // (B,M,N) -> (B,N,M)

// --- reductions / attention helpers ---------------------------------------
Var softmax_last(const Var& x);
Var mean_axis1(const Var& x);                           // (B,T,D) -> (B,D)
Var weighted_sum_axis1(const Var& x, const Var& w);     // (B,T,D),(B,T) -> (B,D)
Var row_scale(const Var& x, const Var& w);              // (T,D) * w[t]
Var concat_broadcast(const Var& x, const Var& g);       // (B,T,D),(B,D) -> (B,T,2D)
Var split_heads(const Var& x, std::size_t heads);       // (B,T,D) -> (B*H,T,D/H)
Var merge_heads(const Var& x, std::size_t heads);       // (B*H,T,dh) -> (B,T,H*dh)
Var sum_all(const Var& x);                              // -> scalar {1}

// --- convolution -----------------------------------------------------------
// x (T, Cin), w (Cout, Cin, K), bias (Cout); zero padding.
Var conv1d(const Var& x, const Var& w, const Var& bias, std::size_t stride,
           std::size_t pad);
std::size_t conv1d_output_length(std::size_t t, std::size_t kernel, std::size_t stride,
                                 std::size_t pad);

// --- loss heads --------------------------------------------------------------
// Sum over all elements of numerically stable binary cross-entropy on
// sigmoid(logits) against {0,1} targets.
Var bce_with_logits_sum(const Var& logits, Tensor targets);

// Rows of logits (R, C); for each row with mask[r] != 0, adds categorical
// cross-entropy -log softmax(row)[target_class[r]].
Var softmax_ce_masked_sum(const Var& logits, std::vector<int> target_class,
                          std::vector<char> mask);

}  // namespace fedn::ag
