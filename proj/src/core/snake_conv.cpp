#include "cunsb/snake_conv.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cunsb::snake {

namespace {

// Four-neighbour bilinear stencil at a clamped fractional position.
struct Tap {
  int i00, i01, i10, i11;
  double w00, w01, w10, w11;
  double fy, fx;
  bool row_inside, col_inside;  // false when the coordinate was clamped
};

Tap make_tap(double row, double col, int h, int w) {
  Tap t{};
  const double rmax = static_cast<double>(h - 1);
  const double cmax = static_cast<double>(w - 1);
  t.row_inside = row >= 0.0 && row <= rmax;
  t.col_inside = col >= 0.0 && col <= cmax;
  const double r = std::clamp(row, 0.0, rmax);
  const double c = std::clamp(col, 0.0, cmax);
  const int r0 = static_cast<int>(std::floor(r));
  const int c0 = static_cast<int>(std::floor(c));
  const int r1 = std::min(r0 + 1, h - 1);
  const int c1 = std::min(c0 + 1, w - 1);
  t.fy = r - r0;
  t.fx = c - c0;
  t.i00 = r0 * w + c0;
  t.i01 = r0 * w + c1;
  t.i10 = r1 * w + c0;
  t.i11 = r1 * w + c1;
  t.w00 = (1.0 - t.fy) * (1.0 - t.fx);
  t.w01 = (1.0 - t.fy) * t.fx;
  t.w10 = t.fy * (1.0 - t.fx);
  t.w11 = t.fy * t.fx;
  return t;
}

inline double read(const Tap& t, const double* plane) {
  return t.w00 * plane[t.i00] + t.w01 * plane[t.i01] + t.w10 * plane[t.i10] + t.w11 * plane[t.i11];
}

// d value / d displaced coordinate
inline double read_derivative(const Tap& t, const double* plane, SnakeAxis axis) {
  if (axis == SnakeAxis::kRow) {
    if (!t.row_inside) return 0.0;
    return (1.0 - t.fx) * (plane[t.i10] - plane[t.i00]) + t.fx * (plane[t.i11] - plane[t.i01]);
  }
  if (!t.col_inside) return 0.0;
  return (1.0 - t.fy) * (plane[t.i01] - plane[t.i00]) + t.fy * (plane[t.i11] - plane[t.i10]);
}

void check_deltas(std::span<const double> deltas) {
  for (double d : deltas) {
    if (!(d >= -1.0 && d <= 1.0)) throw std::invalid_argument("snake offset " + std::to_string(d) + " outside [-1, 1]");
  }
}

// Clamped offsets -> per-tap displacement, both (N, K, H, W).
Tensor displacement_field(const Tensor& offsets) {
  const Shape s = offsets.shape();
  const int k = s.c;
  const int center = (k - 1) / 2;
  const std::size_t plane = s.plane();
  Tensor disp(s);
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      auto off = [&](int tap) { return std::clamp(offsets[offsets.offset(n, tap, 0, 0) + p], -1.0, 1.0); };
      auto out = [&](int tap) -> double& { return disp[disp.offset(n, tap, 0, 0) + p]; };
      out(center) = 0.0;
      for (int z = 1; z <= center; ++z) {
        out(center + z) = out(center + z - 1) + off(center + z);
        out(center - z) = out(center - z + 1) + off(center - z);
      }
    }
  }
  return disp;
}

void build_taps(const Tensor& disp, int n, int tap, SnakeAxis axis, int h, int w, std::vector<Tap>& taps) {
  const int center = (disp.c() - 1) / 2;
  const double along = static_cast<double>(tap - center);
  const double* d = disp.data() + disp.offset(n, tap, 0, 0);
  taps.resize(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      const double row = axis == SnakeAxis::kRow ? y + d[p] : y + along;
      const double col = axis == SnakeAxis::kRow ? x + along : x + d[p];
      taps[p] = make_tap(row, col, h, w);
    }
  }
}

void check_conv_shapes(const Shape& xs, const Shape& os, const Shape& ws, bool has_bias, const Shape& bs) {
  const int k = ws.h;
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("snake kernel size must be odd, got " + std::to_string(k));
  if (ws.w != 1) throw std::invalid_argument("snake weights must be (C_out, C_in, K, 1), got " + ws.str());
  if (ws.c != xs.c) {
    throw std::invalid_argument("snake weights " + ws.str() + " do not match input channels of " + xs.str());
  }
  if (os.n != xs.n || os.c != k || os.h != xs.h || os.w != xs.w) {
    throw std::invalid_argument("snake offsets " + os.str() + " must be (N, K, H, W) for input " + xs.str());
  }
  if (has_bias && (bs.n != 1 || bs.c != ws.n || bs.h != 1 || bs.w != 1)) {
    throw std::invalid_argument("snake bias must be (1, C_out, 1, 1), got " + bs.str());
  }
}

}  // namespace

void SnakeKernelSpec::validate() const {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("snake kernel size must be odd");
  if (weights.h() != kernel_size) throw std::invalid_argument("snake weights do not match kernel size");
  if (offset_field.c() != kernel_size) throw std::invalid_argument("snake offset field does not match kernel size");
  check_deltas(offset_field.values());
}

std::vector<double> accumulate_offsets(std::span<const double> deltas, int center) {
  const int k = static_cast<int>(deltas.size());
  if (k < 1 || k % 2 == 0 || center != (k - 1) / 2) {
    throw std::invalid_argument("accumulate_offsets needs an odd-length kernel and its centre index");
  }
  check_deltas(deltas);
  std::vector<double> disp(static_cast<std::size_t>(k), 0.0);
  for (int z = 1; z <= center; ++z) {
    disp[static_cast<std::size_t>(center + z)] = disp[static_cast<std::size_t>(center + z - 1)] + deltas[static_cast<std::size_t>(center + z)];
    disp[static_cast<std::size_t>(center - z)] = disp[static_cast<std::size_t>(center - z + 1)] + deltas[static_cast<std::size_t>(center - z)];
  }
  return disp;
}

std::vector<SamplePoint> snake_coordinates(int row, int col, std::span<const double> deltas, SnakeAxis axis) {
  const int k = static_cast<int>(deltas.size());
  const int center = (k - 1) / 2;
  const std::vector<double> disp = accumulate_offsets(deltas, center);
  std::vector<SamplePoint> pts(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const double along = static_cast<double>(j - center);
    const double d = disp[static_cast<std::size_t>(j)];
    pts[static_cast<std::size_t>(j)] = axis == SnakeAxis::kRow ? SamplePoint{row + d, col + along}
                                                               : SamplePoint{row + along, col + d};
  }
  return pts;
}

Tensor bilinear_sample(const Tensor& feature_map, std::span<const SamplePoint> coords) {
  if (feature_map.empty() || feature_map.h() < 1 || feature_map.w() < 1) {
    throw std::invalid_argument("bilinear_sample on an empty feature map");
  }
  if (feature_map.n() != 1) throw std::invalid_argument("bilinear_sample expects a single (1, C, H, W) map");
  const int c = feature_map.c();
  const int p = static_cast<int>(coords.size());
  Tensor out(Shape{1, c, 1, p});
  for (int j = 0; j < p; ++j) {
    const Tap t = make_tap(coords[static_cast<std::size_t>(j)].row, coords[static_cast<std::size_t>(j)].col,
                           feature_map.h(), feature_map.w());
    for (int ch = 0; ch < c; ++ch) {
      out.at(0, ch, 0, j) = read(t, feature_map.data() + feature_map.offset(0, ch, 0, 0));
    }
  }
  return out;
}

ag::Var snake_conv2d(const ag::Var& x, const ag::Var& offsets, const ag::Var& weights, const ag::Var& bias,
                     SnakeAxis axis) {
  const Shape xs = x.shape();
  const Shape ws = weights.shape();
  check_conv_shapes(xs, offsets.shape(), ws, bias.defined(), bias.defined() ? bias.shape() : Shape{});
  const int k = ws.h;
  const int cin = xs.c;
  const int cout = ws.n;
  const std::size_t plane = xs.plane();

  Tensor disp = displacement_field(offsets.value());
  Tensor out(Shape{xs.n, cout, xs.h, xs.w});
  std::vector<Tap> taps;
  std::vector<double> sampled(static_cast<std::size_t>(cin) * plane);
  for (int n = 0; n < xs.n; ++n) {
    if (bias.defined()) {
      for (int co = 0; co < cout; ++co) {
        double* o = out.data() + out.offset(n, co, 0, 0);
        std::fill(o, o + plane, bias.value()[static_cast<std::size_t>(co)]);
      }
    }
    for (int tap = 0; tap < k; ++tap) {
      build_taps(disp, n, tap, axis, xs.h, xs.w, taps);
      for (int ci = 0; ci < cin; ++ci) {
        const double* src = x.value().data() + x.value().offset(n, ci, 0, 0);
        double* dst = sampled.data() + static_cast<std::size_t>(ci) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] = read(taps[p], src);
      }
      for (int co = 0; co < cout; ++co) {
        double* o = out.data() + out.offset(n, co, 0, 0);
        for (int ci = 0; ci < cin; ++ci) {
          const double wv = weights.value().at(co, ci, tap, 0);
          if (wv == 0.0) continue;
          const double* s = sampled.data() + static_cast<std::size_t>(ci) * plane;
          for (std::size_t p = 0; p < plane; ++p) o[p] += wv * s[p];
        }
      }
    }
  }

  return ag::make_result(std::move(out), {x, offsets, weights, bias},
                         [axis, disp = std::move(disp)](ag::Node& self) {
    ag::Node& xn = *self.inputs[0];
    ag::Node& on = *self.inputs[1];
    ag::Node& wn = *self.inputs[2];
    ag::Node& bn = *self.inputs[3];
    const Shape xs = xn.value.shape();
    const int k = wn.value.h();
    const int center = (k - 1) / 2;
    const int cin = xs.c;
    const int cout = wn.value.n();
    const std::size_t plane = xs.plane();
    const Tensor& g = self.grad;

    if (bn.requires_grad) {
      Tensor& gb = bn.grad_buffer();
      for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < cout; ++co) {
          const double* gr = g.data() + g.offset(n, co, 0, 0);
          double acc = 0.0;
          for (std::size_t p = 0; p < plane; ++p) acc += gr[p];
          gb[static_cast<std::size_t>(co)] += acc;
        }
    }
    Tensor* gx = xn.requires_grad ? &xn.grad_buffer() : nullptr;
    Tensor* gw = wn.requires_grad ? &wn.grad_buffer() : nullptr;
    Tensor* go = on.requires_grad ? &on.grad_buffer() : nullptr;
    if (!gx && !gw && !go) return;

    Tensor ddisp(Shape{xs.n, k, xs.h, xs.w});
    std::vector<Tap> taps;
    std::vector<double> sampled(static_cast<std::size_t>(cin) * plane);
    std::vector<double> dsampled(static_cast<std::size_t>(cin) * plane);
    for (int n = 0; n < xs.n; ++n) {
      for (int tap = 0; tap < k; ++tap) {
        build_taps(disp, n, tap, axis, xs.h, xs.w, taps);
        if (gw) {
          for (int ci = 0; ci < cin; ++ci) {
            const double* src = xn.value.data() + xn.value.offset(n, ci, 0, 0);
            double* dst = sampled.data() + static_cast<std::size_t>(ci) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = read(taps[p], src);
          }
          for (int co = 0; co < cout; ++co) {
            const double* gr = g.data() + g.offset(n, co, 0, 0);
            for (int ci = 0; ci < cin; ++ci) {
              const double* s = sampled.data() + static_cast<std::size_t>(ci) * plane;
              double acc = 0.0;
              for (std::size_t p = 0; p < plane; ++p) acc += gr[p] * s[p];
              gw->at(co, ci, tap, 0) += acc;
            }
          }
        }
        if (!gx && !go) continue;
        std::fill(dsampled.begin(), dsampled.end(), 0.0);
        for (int co = 0; co < cout; ++co) {
          const double* gr = g.data() + g.offset(n, co, 0, 0);
          for (int ci = 0; ci < cin; ++ci) {
            const double wv = wn.value.at(co, ci, tap, 0);
            if (wv == 0.0) continue;
            double* ds = dsampled.data() + static_cast<std::size_t>(ci) * plane;
            for (std::size_t p = 0; p < plane; ++p) ds[p] += wv * gr[p];
          }
        }
        double* dd = ddisp.data() + ddisp.offset(n, tap, 0, 0);
        for (int ci = 0; ci < cin; ++ci) {
          const double* ds = dsampled.data() + static_cast<std::size_t>(ci) * plane;
          const double* src = xn.value.data() + xn.value.offset(n, ci, 0, 0);
          double* gsrc = gx ? gx->data() + gx->offset(n, ci, 0, 0) : nullptr;
          for (std::size_t p = 0; p < plane; ++p) {
            const double d = ds[p];
            if (d == 0.0) continue;
            const Tap& t = taps[p];
            if (gsrc) {
              gsrc[t.i00] += t.w00 * d;
              gsrc[t.i01] += t.w01 * d;
              gsrc[t.i10] += t.w10 * d;
              gsrc[t.i11] += t.w11 * d;
            }
            if (go && tap != center) dd[p] += d * read_derivative(t, src, axis);
          }
        }
      }
    }

    if (go) {
      // disp[center+z] = sum_{j=1..z} off[center+j], so off[center+j]
      // collects the displacement gradient of every tap at or beyond it.
      for (int n = 0; n < xs.n; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
          auto dd = [&](int t) { return ddisp[ddisp.offset(n, t, 0, 0) + p]; };
          auto raw = [&](int t) { return on.value[on.value.offset(n, t, 0, 0) + p]; };
          auto dst = [&](int t) -> double& { return (*go)[go->offset(n, t, 0, 0) + p]; };
          double acc_pos = 0.0;
          double acc_neg = 0.0;
          for (int z = center; z >= 1; --z) {
            acc_pos += dd(center + z);
            acc_neg += dd(center - z);
            const double rp = raw(center + z);
            const double rn = raw(center - z);
            if (rp >= -1.0 && rp <= 1.0) dst(center + z) += acc_pos;
            if (rn >= -1.0 && rn <= 1.0) dst(center - z) += acc_neg;
          }
        }
      }
    }
  });
}

Tensor snake_conv2d(const Tensor& feature_map, const SnakeKernelSpec& spec) {
  spec.validate();
  ag::NoGradGuard guard;
  ag::Var bias = spec.bias.empty() ? ag::Var() : ag::constant(spec.bias);
  return snake_conv2d(ag::constant(feature_map), ag::constant(spec.offset_field), ag::constant(spec.weights), bias,
                      spec.axis)
      .value();
}

SnakeGradients snake_conv_gradient(const Tensor& feature_map, const SnakeKernelSpec& spec, const Tensor& upstream) {
  if (spec.kernel_size < 1 || spec.kernel_size % 2 == 0) throw std::invalid_argument("snake kernel size must be odd");
  ag::Var x(feature_map, true);
  ag::Var off(spec.offset_field, true);
  ag::Var w(spec.weights, true);
  ag::Var b = spec.bias.empty() ? ag::Var() : ag::Var(spec.bias, true);
  ag::Var out = snake_conv2d(x, off, w, b, spec.axis);
  if (!(upstream.shape() == out.shape())) {
    throw std::invalid_argument("upstream gradient " + upstream.shape().str() + " does not match output " +
                                out.shape().str());
  }
  ag::backward(out, upstream);
  auto grad_or_zeros = [](const ag::Var& v) { return v.grad().empty() ? Tensor(v.shape()) : v.grad(); };
  SnakeGradients g;
  g.input = grad_or_zeros(x);
  g.offsets = grad_or_zeros(off);
  g.weights = grad_or_zeros(w);
  if (b.defined()) g.bias = grad_or_zeros(b);
  return g;
}

}  // namespace cunsb::snake
