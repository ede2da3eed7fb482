#pragma once

// Gaussian Schrödinger-bridge transitions between two states and the
// Markov chain built from them.
//
// On a sub-interval [t_a, t_b] the bridge state at t, conditioned on both
// endpoints, is Gaussian with
//   mean     = s x_b + (1 - s) x_a
//   variance = s (1 - s) tau (t_b - t_a)      (isotropic)
// where s = (t - t_a) / (t_b - t_a). All functions are pure given the rng.

#include <functional>
#include <vector>

#include "cunsb/tensor.hpp"

namespace cunsb::bridge {

/// Uniform partition t_i = i / N of [0, 1].
class TimeGrid {
 public:
  explicit TimeGrid(int num_steps);

  int num_steps() const { return num_steps_; }
  /// N + 1 points, first exactly 0, last exactly 1.
  const std::vector<double>& points() const { return points_; }
  double at(int i) const;

 private:
  int num_steps_;
  std::vector<double> points_;
};

struct BridgeConfig {
  double tau = 0.01;
  int num_steps = 5;

  void validate() const;
};

struct Posterior {
  Tensor mean;
  double variance = 0.0;
};

struct BridgeSampleStats {
  Tensor empirical_mean;
  Tensor empirical_variance;
  int sample_count = 0;
};

/// x_hat_1 = generator(x_t, t_index, rng). The rng drives any internal noise.
using GeneratorFn = std::function<Tensor(const Tensor& x, int t_index, Rng& rng)>;

double interpolation_fraction(double t, double t_a, double t_b);

Posterior bridge_posterior(const Tensor& x_a, const Tensor& x_b, double t, double t_a, double t_b,
                           double tau);

/// mean + sqrt(variance) * eps with eps ~ N(0, I).
Tensor sample_bridge(const Tensor& x_a, const Tensor& x_b, double t, double t_a, double t_b, double tau,
                     Rng& rng);

/// Per-element empirical moments over `count` independent bridge draws.
BridgeSampleStats bridge_sample_stats(const Tensor& x_a, const Tensor& x_b, double t, double t_a, double t_b,
                                      double tau, int count, Rng& rng);

/// State x_{t_i} reached from x_0 by chaining generator predictions and
/// bridge draws toward t = 1. Returns x_0 for target_index = 0. Callers
/// that train must disable graph construction around the generator.
Tensor simulate_forward(const Tensor& x0, const GeneratorFn& generator, int target_index,
                        const BridgeConfig& config, Rng& rng);

/// Multi-step inference. With emit_intermediates the result holds the N
/// predictions x_hat_1^{t_0..t_{N-1}}; otherwise only the one at output_step.
/// Fresh noise is drawn at every transition.
std::vector<Tensor> infer(const Tensor& x0, const GeneratorFn& generator, const BridgeConfig& config,
                          bool emit_intermediates, Rng& rng, int output_step = 0);

}  // namespace cunsb::bridge
