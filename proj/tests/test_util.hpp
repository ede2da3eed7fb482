#pragma once
// Shared generators, oracles and fixtures for the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "cunsb/degrade.hpp"
#include "cunsb/tensor.hpp"
#include "cunsb/trainer.hpp"

namespace cunsb::testing {

/// splitmix64, mirrored by tests/oracles/metric_refs.py.
struct SplitMix {
  std::uint64_t s;
  explicit SplitMix(std::uint64_t seed) : s(seed) {}
  std::uint64_t next() {
    s += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

/// Structured 8-bit image a and a noisy copy b, values 0..255 as doubles.
inline std::pair<Tensor, Tensor> u8_pair(std::uint64_t seed, Shape shape, int noise) {
  SplitMix g(seed);
  Tensor a(shape), b(shape);
  for (int n = 0; n < shape.n; ++n)
    for (int c = 0; c < shape.c; ++c)
      for (int y = 0; y < shape.h; ++y)
        for (int x = 0; x < shape.w; ++x)
          a.at(n, c, y, x) = static_cast<double>((8 * y + 5 * x + 60 * c + static_cast<int>(g.next() % 48)) & 255);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const int d = static_cast<int>(g.next() % static_cast<std::uint64_t>(2 * noise + 1)) - noise;
    b[i] = std::min(255.0, std::max(0.0, a[i] + d));
  }
  return {a, b};
}

inline Tensor scaled(const Tensor& u8, double lo, double hi) {
  Tensor t = u8;
  for (double& v : t.values()) v = lo + (hi - lo) * v / 255.0;
  return t;
}

/// Pair k of the metric reference set, in [0, 1].
inline std::pair<Tensor, Tensor> metric_pair(int k) {
  const Shape s{1, 3, 16 + 2 * (k % 4), 18 + 3 * (k % 3)};
  auto [a, b] = u8_pair(1000 + static_cast<std::uint64_t>(k), s, 30);
  return {scaled(a, 0.0, 1.0), scaled(b, 0.0, 1.0)};
}

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(s, rng, lo, hi);
}

/// Central differences of a scalar function at x.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = probe[i];
    probe[i] = v + h;
    const double up = f(probe);
    probe[i] = v - h;
    const double down = f(probe);
    probe[i] = v;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max |a - b| / max(1e-8, max |b|): relative to the gradient's scale.
inline double relative_error(const Tensor& analytic, const Tensor& numeric) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / std::max(scale, 1e-8);
}

/// Small networks that keep a training step around a tenth of a second.
inline train::TrainConfig toy_config(std::uint64_t seed = 1) {
  train::TrainConfig c;
  c.generator.base_channels = 8;
  c.generator.depth = 2;
  c.generator.num_bottleneck = 3;
  c.generator.time_embed_dim = 16;
  c.generator.noise_dim = 4;
  c.discriminator.base_channels = 8;
  c.discriminator.num_layers = 2;
  c.discriminator.time_embed_dim = 16;
  c.critic.base_channels = 8;
  c.critic.num_layers = 2;
  c.ssim.window = 7;
  c.ssim.scales = 2;
  c.nce_dim = 32;
  c.nce_patches = 16;
  c.image_size = 16;
  c.batch_size = 4;
  c.seed = seed;
  c.sync();
  return c;
}

/// Flat-colour clean fundus stand-ins and their degraded versions, 16x16.
struct ToyData {
  std::vector<Tensor> clean;
  std::vector<Tensor> degraded;
};

inline ToyData toy_dataset(int count, int size, std::uint64_t seed) {
  ToyData d;
  Rng rng(seed);
  std::uniform_real_distribution<double> red(0.55, 0.85), green(0.25, 0.45), blue(0.05, 0.2);
  degrade::DegradationSpec spec;
  for (int i = 0; i < count; ++i) {
    const double rgb[3] = {red(rng), green(rng), blue(rng)};
    Tensor x(Shape{1, 3, size, size});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < size; ++y)
        for (int w = 0; w < size; ++w) x.at(0, c, y, w) = 2.0 * rgb[c] - 1.0;
    d.degraded.push_back(degrade::compose(x, spec, rng).image);
    d.clean.push_back(std::move(x));
  }
  return d;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cunsb_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace cunsb::testing
