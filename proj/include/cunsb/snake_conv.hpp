#pragma once

// Dynamic snake convolution.
//
// A straight K-tap kernel is laid along one image axis. Each tap is then
// displaced across that axis by the running sum of per-tap offsets walking
// outward from the centre, so the receptive field bends like a snake:
//
//   row axis    (1 x K):  tap center+z samples (h + sum_{j=1..z} d[center+j], w + z)
//   column axis (K x 1):  tap center+z samples (h + z, w + sum_{j=1..z} d[center+j])
//
// and symmetrically for center-z. The centre tap is never displaced.
// Fractional positions are read by bilinear interpolation with coordinates
// clamped to the feature map.

#include <span>
#include <vector>

#include "cunsb/autograd.hpp"
#include "cunsb/tensor.hpp"

namespace cunsb::snake {

enum class SnakeAxis { kRow, kColumn };

struct SamplePoint {
  double row = 0.0;
  double col = 0.0;
};

/// Kernel parameters for one snake convolution.
///   weights:      (C_out, C_in, K, 1)
///   bias:         (1, C_out, 1, 1) or empty
///   offset_field: (N, K, H, W), each entry in [-1, 1]
struct SnakeKernelSpec {
  int kernel_size = 9;
  SnakeAxis axis = SnakeAxis::kRow;
  Tensor weights;
  Tensor bias;
  Tensor offset_field;

  void validate() const;
};

/// Cross-axis displacement of each tap (length K, zero at the centre).
std::vector<double> accumulate_offsets(std::span<const double> deltas, int center);

/// Sampling positions of the K taps for the output pixel (row, col).
std::vector<SamplePoint> snake_coordinates(int row, int col, std::span<const double> deltas, SnakeAxis axis);

/// Bilinear read of a (1, C, H, W) map at each point; returns (1, C, 1, P).
Tensor bilinear_sample(const Tensor& feature_map, std::span<const SamplePoint> coords);

/// Plain forward pass on a (N, C_in, H, W) map. Output is (N, C_out, H, W).
Tensor snake_conv2d(const Tensor& feature_map, const SnakeKernelSpec& spec);

/// Differentiable forward. Offsets outside [-1, 1] are clamped and receive
/// no gradient; inside the interval the gradient passes unchanged.
ag::Var snake_conv2d(const ag::Var& x, const ag::Var& offsets, const ag::Var& weights, const ag::Var& bias,
                     SnakeAxis axis);

struct SnakeGradients {
  Tensor input;
  Tensor offsets;
  Tensor weights;
  Tensor bias;
};

/// Gradients of <upstream, snake_conv2d(...)> with respect to each argument.
SnakeGradients snake_conv_gradient(const Tensor& feature_map, const SnakeKernelSpec& spec, const Tensor& upstream);

}  // namespace cunsb::snake
