#pragma once

// Synthetic low-quality fundus generation. Three parametric degradations
// are applied in a fixed order (illumination, blur, spots) inside the
// fundus mask. Images are (1, C, H, W) tensors in [-1, 1].
//
// compose() first draws every parameter into a DegradationRecord and then
// replays it, so replay(x, record) is bitwise identical to compose().

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cunsb/tensor.hpp"

namespace cunsb::degrade {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  double sample(Rng& rng) const;
};

struct IntRange {
  int lo = 0;
  int hi = 0;

  int sample(Rng& rng) const;
};

struct DegradationSpec {
  bool illumination = true;
  Range field_amplitude{0.1, 0.4};  // max |coefficient| of the non-constant polynomial terms
  Range field_offset{-0.3, 0.0};    // added to the constant term 1
  Range gamma{0.7, 1.6};
  Range brightness{-0.15, 0.1};     // additive, [0, 1] domain

  bool blur = true;
  Range blur_sigma{0.5, 2.0};

  bool spots = true;
  IntRange spot_count{1, 4};
  Range spot_radius{0.04, 0.12};  // fraction of min(H, W)
  Range spot_opacity{0.3, 0.8};
  Range spot_edge{1.0, 3.0};      // soft edge width in pixels
  double bright_spot_probability = 0.5;

  double mask_threshold = 0.04;  // green channel, [0, 1] domain
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Field f(u, v) = c0 + c1 u + c2 v + c3 u^2 + c4 u v + c5 v^2 over
/// normalised coordinates u, v in [-1, 1]. In the [0, 1] domain a pixel p
/// maps to clamp(clamp(p f, 0, 1)^gamma + brightness, 0, 1).
struct IlluminationParams {
  std::array<double, 6> coeffs{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  double gamma = 1.0;
  double brightness = 0.0;
};

struct Spot {
  double row = 0.0;
  double col = 0.0;
  double radius = 1.0;
  double opacity = 1.0;
  double edge = 1.0;
  double value = 1.0;  // composited colour, [-1, 1] domain
};

struct DegradationRecord {
  double mask_threshold = 0.04;
  bool illumination_applied = false;
  IlluminationParams illumination;
  bool blur_applied = false;
  double blur_sigma = 0.0;
  bool spots_applied = false;
  std::vector<Spot> spots;

  bool empty() const { return !illumination_applied && !blur_applied && !spots_applied; }
};

/// 1 where the green channel (channel 1, or 0 for grayscale) exceeds the
/// threshold in the [0, 1] domain. Shape (1, 1, H, W).
Tensor fundus_mask(const Tensor& x, double threshold);

Tensor light_disturbance(const Tensor& x, const IlluminationParams& params, const Tensor* mask = nullptr);
IlluminationParams sample_illumination(const DegradationSpec& spec, Rng& rng);

/// Separable Gaussian with half-sample symmetric borders, radius ceil(3 sigma).
/// sigma = 0 returns x unchanged.
Tensor blur(const Tensor& x, double sigma);
std::vector<double> gaussian_kernel(double sigma);

/// alpha = opacity * clamp((radius - d) / edge, 0, 1), times the mask.
Tensor spot_artifacts(const Tensor& x, const std::vector<Spot>& spots, const Tensor* mask = nullptr);
std::vector<Spot> sample_spots(const Tensor& mask, const DegradationSpec& spec, Rng& rng);

struct Degraded {
  Tensor image;
  DegradationRecord record;
};

Degraded compose(const Tensor& x, const DegradationSpec& spec, Rng& rng);
Tensor replay(const Tensor& x, const DegradationRecord& record);

/// key=value lines; doubles use shortest round-trip formatting.
std::string serialize_record(const DegradationRecord& record);
DegradationRecord parse_record(const std::string& text);

}  // namespace cunsb::degrade
