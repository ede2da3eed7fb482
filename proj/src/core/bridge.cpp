#include "cunsb/bridge.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cunsb::bridge {

TimeGrid::TimeGrid(int num_steps) : num_steps_(num_steps) {
  if (num_steps < 1) throw std::invalid_argument("time grid needs at least one step");
  points_.resize(static_cast<std::size_t>(num_steps) + 1);
  for (int i = 0; i <= num_steps; ++i) {
    points_[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(num_steps);
  }
  points_.back() = 1.0;
}

double TimeGrid::at(int i) const {
  if (i < 0 || i > num_steps_) throw std::out_of_range("time index " + std::to_string(i) + " outside grid");
  return points_[static_cast<std::size_t>(i)];
}

void BridgeConfig::validate() const {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be finite and >= 0");
  if (num_steps < 1) throw std::invalid_argument("num_steps must be >= 1");
}

double interpolation_fraction(double t, double t_a, double t_b) {
  if (!(t_a < t_b)) throw std::invalid_argument("bridge interval requires t_a < t_b");
  if (t < t_a || t > t_b) throw std::invalid_argument("t outside [t_a, t_b]");
  if (t == t_b) return 1.0;
  return (t - t_a) / (t_b - t_a);
}

Posterior bridge_posterior(const Tensor& x_a, const Tensor& x_b, double t, double t_a, double t_b,
                           double tau) {
  if (!(x_a.shape() == x_b.shape())) {
    throw std::invalid_argument("bridge endpoints differ in shape: " + x_a.shape().str() + " vs " +
                                x_b.shape().str());
  }
  if (!(tau >= 0.0)) throw std::invalid_argument("tau must be >= 0");
  const double s = interpolation_fraction(t, t_a, t_b);
  Posterior p;
  p.mean = Tensor(x_a.shape());
  if (s == 0.0) {
    p.mean = x_a;
  } else if (s == 1.0) {
    p.mean = x_b;
  } else {
    for (std::size_t i = 0; i < x_a.size(); ++i) p.mean[i] = s * x_b[i] + (1.0 - s) * x_a[i];
  }
  p.variance = s * (1.0 - s) * tau * (t_b - t_a);
  return p;
}

Tensor sample_bridge(const Tensor& x_a, const Tensor& x_b, double t, double t_a, double t_b, double tau,
                     Rng& rng) {
  Posterior p = bridge_posterior(x_a, x_b, t, t_a, t_b, tau);
  if (p.variance == 0.0) return std::move(p.mean);
  const double sd = std::sqrt(p.variance);
  std::normal_distribution<double> eps(0.0, 1.0);
  for (double& v : p.mean.values()) v += sd * eps(rng);
  return std::move(p.mean);
}

BridgeSampleStats bridge_sample_stats(const Tensor& x_a, const Tensor& x_b, double t, double t_a, double t_b,
                                      double tau, int count, Rng& rng) {
  if (count < 2) throw std::invalid_argument("bridge_sample_stats needs at least two samples");
  // Welford accumulation per element.
  Tensor mean(x_a.shape());
  Tensor m2(x_a.shape());
  for (int k = 1; k <= count; ++k) {
    const Tensor x = sample_bridge(x_a, x_b, t, t_a, t_b, tau, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean[i];
      mean[i] += d / k;
      m2[i] += d * (x[i] - mean[i]);
    }
  }
  BridgeSampleStats stats;
  stats.empirical_mean = std::move(mean);
  stats.empirical_variance = m2 * (1.0 / (count - 1));
  for (double& v : stats.empirical_variance.values()) v = v < 0.0 ? 0.0 : v;
  stats.sample_count = count;
  return stats;
}

Tensor simulate_forward(const Tensor& x0, const GeneratorFn& generator, int target_index,
                        const BridgeConfig& config, Rng& rng) {
  config.validate();
  if (target_index < 0 || target_index > config.num_steps - 1) {
    throw std::out_of_range("simulate_forward target index " + std::to_string(target_index) +
                            " outside [0, " + std::to_string(config.num_steps - 1) + "]");
  }
  const TimeGrid grid(config.num_steps);
  Tensor x = x0;
  for (int j = 0; j < target_index; ++j) {
    const Tensor x1_hat = generator(x, j, rng);
    x = sample_bridge(x, x1_hat, grid.at(j + 1), grid.at(j), 1.0, config.tau, rng);
  }
  return x;
}

std::vector<Tensor> infer(const Tensor& x0, const GeneratorFn& generator, const BridgeConfig& config,
                          bool emit_intermediates, Rng& rng, int output_step) {
  config.validate();
  if (output_step < 0 || output_step >= config.num_steps) {
    throw std::out_of_range("output step " + std::to_string(output_step) + " outside [0, " +
                            std::to_string(config.num_steps - 1) + "]");
  }
  const TimeGrid grid(config.num_steps);
  const int last = emit_intermediates ? config.num_steps - 1 : output_step;
  std::vector<Tensor> outputs;
  Tensor x = x0;
  for (int i = 0; i <= last; ++i) {
    Tensor x1_hat = generator(x, i, rng);
    if (!(x1_hat.shape() == x0.shape())) {
      throw std::runtime_error("generator changed the image shape to " + x1_hat.shape().str());
    }
    if (i < last) x = sample_bridge(x, x1_hat, grid.at(i + 1), grid.at(i), 1.0, config.tau, rng);
    if (emit_intermediates || i == output_step) outputs.push_back(std::move(x1_hat));
  }
  return outputs;
}

}  // namespace cunsb::bridge
