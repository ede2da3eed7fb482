#include "cunsb/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cunsb/text.hpp"

namespace cunsb::degrade {

namespace {

// Portable draws; the std distributions differ between standard libraries.
double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_image(const Tensor& x, const char* op) {
  if (x.n() != 1 || x.c() < 1 || x.h() < 1 || x.w() < 1) {
    throw std::invalid_argument(std::string(op) + ": expected a single image (1, C, H, W), got " + x.shape().str());
  }
}

void check_mask(const Tensor& x, const Tensor* mask) {
  if (mask && !(mask->shape() == Shape{1, 1, x.h(), x.w()})) {
    throw std::invalid_argument("degradation mask " + mask->shape().str() + " does not match image " + x.shape().str());
  }
}

bool inside(const Tensor* mask, int r, int c) { return !mask || mask->at(0, 0, r, c) > 0.5; }

void check_range(const Range& r, const char* name, double min_lo, double max_hi) {
  if (!(r.lo <= r.hi) || !(r.lo >= min_lo) || !(r.hi <= max_hi)) {
    throw std::invalid_argument(std::string("degradation ") + name + ": range [" + text::format_double(r.lo) + ", " +
                                text::format_double(r.hi) + "] is empty or out of bounds");
  }
}

bool is_identity(const IlluminationParams& p) {
  return p.coeffs == std::array<double, 6>{1.0, 0.0, 0.0, 0.0, 0.0, 0.0} && p.gamma == 1.0 && p.brightness == 0.0;
}

int reflect(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

}  // namespace

double Range::sample(Rng& rng) const { return lo + (hi - lo) * unit(rng); }

int IntRange::sample(Rng& rng) const {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

void DegradationSpec::validate() const {
  const double inf = std::numeric_limits<double>::infinity();
  check_range(field_amplitude, "field_amplitude", 0.0, inf);
  check_range(field_offset, "field_offset", -1.0, inf);
  check_range(gamma, "gamma", 1e-6, inf);
  check_range(brightness, "brightness", -1.0, 1.0);
  check_range(blur_sigma, "blur_sigma", 0.0, inf);
  if (!(spot_count.lo <= spot_count.hi) || spot_count.lo < 0) {
    throw std::invalid_argument("degradation spot_count: range is empty or negative");
  }
  check_range(spot_radius, "spot_radius", 1e-6, 1.0);
  check_range(spot_opacity, "spot_opacity", 0.0, 1.0);
  check_range(spot_edge, "spot_edge", 1e-6, inf);
  if (!(bright_spot_probability >= 0.0 && bright_spot_probability <= 1.0)) {
    throw std::invalid_argument("degradation bright_spot_probability must be in [0, 1]");
  }
  if (!(mask_threshold >= 0.0 && mask_threshold < 1.0)) {
    throw std::invalid_argument("degradation mask_threshold must be in [0, 1)");
  }
}

Tensor fundus_mask(const Tensor& x, double threshold) {
  check_image(x, "fundus_mask");
  const int ch = x.c() >= 2 ? 1 : 0;
  Tensor m(Shape{1, 1, x.h(), x.w()});
  for (int r = 0; r < x.h(); ++r) {
    for (int c = 0; c < x.w(); ++c) m.at(0, 0, r, c) = (x.at(0, ch, r, c) + 1.0) * 0.5 > threshold ? 1.0 : 0.0;
  }
  return m;
}

Tensor light_disturbance(const Tensor& x, const IlluminationParams& p, const Tensor* mask) {
  check_image(x, "light_disturbance");
  check_mask(x, mask);
  if (is_identity(p)) return x;
  Tensor y = x;
  const int h = x.h();
  const int w = x.w();
  for (int r = 0; r < h; ++r) {
    const double v = h > 1 ? 2.0 * r / (h - 1) - 1.0 : 0.0;
    for (int c = 0; c < w; ++c) {
      if (!inside(mask, r, c)) continue;
      const double u = w > 1 ? 2.0 * c / (w - 1) - 1.0 : 0.0;
      const auto& k = p.coeffs;
      const double field = k[0] + k[1] * u + k[2] * v + k[3] * u * u + k[4] * u * v + k[5] * v * v;
      for (int ch = 0; ch < x.c(); ++ch) {
        const double px = (x.at(0, ch, r, c) + 1.0) * 0.5;
        const double lit = std::clamp(px * field, 0.0, 1.0);
        const double out = std::clamp(std::pow(lit, p.gamma) + p.brightness, 0.0, 1.0);
        y.at(0, ch, r, c) = 2.0 * out - 1.0;
      }
    }
  }
  return y;
}

IlluminationParams sample_illumination(const DegradationSpec& spec, Rng& rng) {
  IlluminationParams p;
  const double amp = spec.field_amplitude.sample(rng);
  p.coeffs[0] = 1.0 + spec.field_offset.sample(rng);
  for (std::size_t i = 1; i < p.coeffs.size(); ++i) p.coeffs[i] = amp * (2.0 * unit(rng) - 1.0);
  p.gamma = spec.gamma.sample(rng);
  p.brightness = spec.brightness.sample(rng);
  return p;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("blur sigma must be nonnegative");
  if (sigma == 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

Tensor blur(const Tensor& x, double sigma) {
  check_image(x, "blur");
  const std::vector<double> k = gaussian_kernel(sigma);
  if (k.size() == 1) return x;
  const int radius = static_cast<int>(k.size() / 2);
  const int h = x.h();
  const int w = x.w();
  Tensor tmp(x.shape());
  Tensor y(x.shape());
  for (int ch = 0; ch < x.c(); ++ch) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) acc += k[static_cast<std::size_t>(t + radius)] * x.at(0, ch, r, reflect(c + t, w));
        tmp.at(0, ch, r, c) = acc;
      }
    }
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) acc += k[static_cast<std::size_t>(t + radius)] * tmp.at(0, ch, reflect(r + t, h), c);
        y.at(0, ch, r, c) = std::clamp(acc, -1.0, 1.0);
      }
    }
  }
  return y;
}

Tensor spot_artifacts(const Tensor& x, const std::vector<Spot>& spots, const Tensor* mask) {
  check_image(x, "spot_artifacts");
  check_mask(x, mask);
  Tensor y = x;
  for (const Spot& s : spots) {
    if (!(s.radius > 0.0) || !(s.edge > 0.0) || !(s.opacity >= 0.0 && s.opacity <= 1.0)) {
      throw std::invalid_argument("spot parameters out of range");
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(s.row - s.radius)));
    const int r1 = std::min(x.h() - 1, static_cast<int>(std::ceil(s.row + s.radius)));
    const int c0 = std::max(0, static_cast<int>(std::floor(s.col - s.radius)));
    const int c1 = std::min(x.w() - 1, static_cast<int>(std::ceil(s.col + s.radius)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (!inside(mask, r, c)) continue;
        const double d = std::hypot(r - s.row, c - s.col);
        const double alpha = s.opacity * std::clamp((s.radius - d) / s.edge, 0.0, 1.0);
        if (alpha == 0.0) continue;
        for (int ch = 0; ch < x.c(); ++ch) {
          double& px = y.at(0, ch, r, c);
          px = std::clamp((1.0 - alpha) * px + alpha * s.value, -1.0, 1.0);
        }
      }
    }
  }
  return y;
}

std::vector<Spot> sample_spots(const Tensor& mask, const DegradationSpec& spec, Rng& rng) {
  std::vector<int> candidates;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] > 0.5) candidates.push_back(static_cast<int>(i));
  }
  const int count = spec.spot_count.sample(rng);
  std::vector<Spot> spots;
  if (candidates.empty()) return spots;
  const double side = std::min(mask.h(), mask.w());
  for (int i = 0; i < count; ++i) {
    Spot s;
    const int idx = candidates[static_cast<std::size_t>(rng() % candidates.size())];
    s.row = idx / mask.w();
    s.col = idx % mask.w();
    s.radius = std::max(0.5, spec.spot_radius.sample(rng) * side);
    s.opacity = spec.spot_opacity.sample(rng);
    s.edge = spec.spot_edge.sample(rng);
    s.value = unit(rng) < spec.bright_spot_probability ? 1.0 : -1.0;
    spots.push_back(s);
  }
  return spots;
}

Tensor replay(const Tensor& x, const DegradationRecord& record) {
  check_image(x, "replay");
  const Tensor mask = fundus_mask(x, record.mask_threshold);
  Tensor y = x;
  if (record.illumination_applied) y = light_disturbance(y, record.illumination, &mask);
  if (record.blur_applied) {
    const Tensor b = blur(y, record.blur_sigma);
    for (int ch = 0; ch < y.c(); ++ch) {
      for (int r = 0; r < y.h(); ++r) {
        for (int c = 0; c < y.w(); ++c) {
          if (inside(&mask, r, c)) y.at(0, ch, r, c) = b.at(0, ch, r, c);
        }
      }
    }
  }
  if (record.spots_applied) y = spot_artifacts(y, record.spots, &mask);
  return y;
}

Degraded compose(const Tensor& x, const DegradationSpec& spec, Rng& rng) {
  spec.validate();
  check_image(x, "compose");
  DegradationRecord rec;
  rec.mask_threshold = spec.mask_threshold;
  if (spec.illumination) {
    rec.illumination_applied = true;
    rec.illumination = sample_illumination(spec, rng);
  }
  if (spec.blur) {
    rec.blur_applied = true;
    rec.blur_sigma = spec.blur_sigma.sample(rng);
  }
  if (spec.spots) {
    rec.spots_applied = true;
    rec.spots = sample_spots(fundus_mask(x, spec.mask_threshold), spec, rng);
  }
  Tensor y = replay(x, rec);
  return {std::move(y), std::move(rec)};
}

std::string serialize_record(const DegradationRecord& r) {
  using text::format_double;
  std::ostringstream out;
  out << "mask_threshold=" << format_double(r.mask_threshold) << '\n';
  out << "illumination=" << (r.illumination_applied ? 1 : 0) << '\n';
  if (r.illumination_applied) {
    out << "illumination.coeffs=";
    for (std::size_t i = 0; i < r.illumination.coeffs.size(); ++i) {
      out << (i ? " " : "") << format_double(r.illumination.coeffs[i]);
    }
    out << "\nillumination.gamma=" << format_double(r.illumination.gamma) << '\n';
    out << "illumination.brightness=" << format_double(r.illumination.brightness) << '\n';
  }
  out << "blur=" << (r.blur_applied ? 1 : 0) << '\n';
  if (r.blur_applied) out << "blur.sigma=" << format_double(r.blur_sigma) << '\n';
  out << "spots=" << (r.spots_applied ? 1 : 0) << '\n';
  if (r.spots_applied) {
    out << "spots.count=" << r.spots.size() << '\n';
    for (std::size_t i = 0; i < r.spots.size(); ++i) {
      const Spot& s = r.spots[i];
      out << "spot." << i << '=' << format_double(s.row) << ' ' << format_double(s.col) << ' '
          << format_double(s.radius) << ' ' << format_double(s.opacity) << ' ' << format_double(s.edge) << ' '
          << format_double(s.value) << '\n';
    }
  }
  return out.str();
}

DegradationRecord parse_record(const std::string& content) {
  auto kv = text::parse_key_values(content, "degradation record");
  auto take = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("degradation record: missing key '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  DegradationRecord r;
  r.mask_threshold = text::parse_double(take("mask_threshold"), "mask_threshold");
  r.illumination_applied = text::parse_bool(take("illumination"), "illumination");
  if (r.illumination_applied) {
    const auto parts = text::split_whitespace(take("illumination.coeffs"));
    if (parts.size() != r.illumination.coeffs.size()) {
      throw std::invalid_argument("degradation record: illumination.coeffs needs 6 values");
    }
    for (std::size_t i = 0; i < parts.size(); ++i) r.illumination.coeffs[i] = text::parse_double(parts[i], "illumination.coeffs");
    r.illumination.gamma = text::parse_double(take("illumination.gamma"), "illumination.gamma");
    r.illumination.brightness = text::parse_double(take("illumination.brightness"), "illumination.brightness");
  }
  r.blur_applied = text::parse_bool(take("blur"), "blur");
  if (r.blur_applied) r.blur_sigma = text::parse_double(take("blur.sigma"), "blur.sigma");
  r.spots_applied = text::parse_bool(take("spots"), "spots");
  if (r.spots_applied) {
    const long long n = text::parse_int(take("spots.count"), "spots.count");
    if (n < 0) throw std::invalid_argument("degradation record: negative spots.count");
    for (long long i = 0; i < n; ++i) {
      const std::string key = "spot." + std::to_string(i);
      const auto parts = text::split_whitespace(take(key));
      if (parts.size() != 6) throw std::invalid_argument("degradation record: " + key + " needs 6 values");
      Spot s;
      s.row = text::parse_double(parts[0], key);
      s.col = text::parse_double(parts[1], key);
      s.radius = text::parse_double(parts[2], key);
      s.opacity = text::parse_double(parts[3], key);
      s.edge = text::parse_double(parts[4], key);
      s.value = text::parse_double(parts[5], key);
      r.spots.push_back(s);
    }
  }
  if (!kv.empty()) throw std::invalid_argument("degradation record: unknown key '" + kv.begin()->first + "'");
  return r;
}

}  // namespace cunsb::degrade
