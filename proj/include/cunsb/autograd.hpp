#pragma once

// Reverse-mode automatic differentiation over whole-tensor operations.
//
// A Var is a shared handle to a graph node. Leaves created with
// requires_grad=true accumulate gradients; interior nodes are built by the
// ops below and are freed once the last Var referring to the graph dies.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cunsb/tensor.hpp"

namespace cunsb::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && node_->inputs.empty(); }

  /// Accumulated gradient; empty tensor when nothing has flowed here.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Tensor, std::vector<Var>, std::function<void(Node&)>);
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op output. When grad mode is off or no input requires a
/// gradient, the result is a constant and `backward` is dropped.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Back-propagates from a single-element root with seed 1.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

// ---- elementwise ---------------------------------------------------------

Var detach(const Var& x);
Var constant(Tensor value);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var square(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
/// max(a, floor)^p; the gradient is zero where a < floor.
Var clamped_pow(const Var& a, double p, double floor);

/// x (N,C,H,W) + v where v is (N,C,1,1) or (1,C,1,1), broadcast over space.
Var add_channel(const Var& x, const Var& v);

// ---- reductions ----------------------------------------------------------

Var sum(const Var& a);
Var mean(const Var& a);
/// (N,C,H,W) -> (N,C,1,1)
Var mean_spatial(const Var& a);
/// (N,C,H,W) -> (N,1,1,1)
Var mean_per_sample(const Var& a);
/// log(mean(exp(x))) over every element, computed stably.
Var log_mean_exp(const Var& a);

// ---- structure -----------------------------------------------------------

Var concat_channels(std::span<const Var> parts);
Var gather_batch(const Var& x, std::span<const int> indices);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
/// Selects spatial locations per image: ids[n] lists flat h*W+w indices,
/// all of equal length P. Result is (N*P, C, 1, 1).
Var gather_locations(const Var& x, const std::vector<std::vector<int>>& ids);
/// Row-wise L2 normalisation over the channel axis of (R, C, 1, 1).
Var l2_normalize(const Var& x, double eps = 1e-7);

// ---- linear maps ---------------------------------------------------------

/// Zero-padded 2-D cross-correlation. w is (Cout, Cin, KH, KW); b is
/// (1, Cout, 1, 1) or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// x (N, Cin, 1, 1), w (Cout, Cin, 1, 1), b (1, Cout, 1, 1) or undefined.
Var linear(const Var& x, const Var& w, const Var& b);
/// Depthwise separable filter with a fixed 1-D kernel and no padding
/// ("valid" output of size H-K+1 by W-K+1).
Var separable_filter_valid(const Var& x, std::span<const double> kernel);

/// Contrastive cross-entropy between query rows q and key rows k, both
/// (N*P, D, 1, 1). For each image the positive of query p is key p; the
/// other P-1 keys of the same image are negatives. Returns the mean loss.
Var info_nce(const Var& q, const Var& k, int patches_per_image, double temperature);

}  // namespace cunsb::ag
