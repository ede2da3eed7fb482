#include "cunsb/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <unordered_set>

namespace cunsb::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  }
}

// Applies fn(index) -> local derivative for unary elementwise ops.
template <typename Deriv>
Var unary(const Var& a, Tensor value, Deriv deriv) {
  return make_result(std::move(value), {a}, [deriv](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
  });
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.size() > 0) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.defined() && v.requires_grad(); });
  if (!needs) return out;
  out.node_->requires_grad = true;
  for (Var& v : inputs) {
    // Undefined optional inputs keep their slot so op indices stay stable.
    out.node_->inputs.push_back(v.defined() ? v.node() : std::make_shared<Node>());
  }
  out.node_->backward = std::move(backward);
  return out;
}

void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward() without seed needs a single-element root, got " +
                                root.shape().str());
  }
  backward(root, Tensor(root.shape(), 1.0));
}

void backward(const Var& root, const Tensor& seed) {
  if (!root.defined() || !root.requires_grad()) return;
  if (!(seed.shape() == root.shape())) throw std::invalid_argument("backward seed shape mismatch");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer() += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

// ---- elementwise -----------------------------------------------------------

Var detach(const Var& x) { return Var(x.value(), false); }

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->grad_buffer() += self.grad;
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value() - b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer() += self.grad;
    if (self.inputs[1]->requires_grad) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      Tensor& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / y.value[i];
    }
    if (y.requires_grad) {
      Tensor& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / y.value[i];
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  return unary(a, std::move(out), [](double, double) { return 1.0; });
}

Var scale(const Var& a, double s) {
  return unary(a, a.value() * s, [s](double, double) { return s; });
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= v;
  return unary(a, std::move(out), [](double x, double) { return 2.0 * x; });
}

Var exp(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::exp(v);
  return unary(a, std::move(out), [](double, double y) { return y; });
}

Var log(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::log(v);
  return unary(a, std::move(out), [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  return unary(a, std::move(out), [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return unary(a, std::move(out), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : slope * v;
  return unary(a, std::move(out), [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var clamped_pow(const Var& a, double p, double floor) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::pow(std::max(v, floor), p);
  return unary(a, std::move(out), [p, floor](double x, double) {
    return x > floor ? p * std::pow(x, p - 1.0) : 0.0;
  });
}

Var add_channel(const Var& x, const Var& v) {
  const Shape xs = x.shape();
  const Shape vs = v.shape();
  if (vs.c != xs.c || vs.h != 1 || vs.w != 1 || (vs.n != xs.n && vs.n != 1)) {
    throw std::invalid_argument("add_channel: cannot broadcast " + vs.str() + " onto " + xs.str());
  }
  const std::size_t plane = xs.plane();
  Tensor out = x.value();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const double add = v.value().at(vs.n == 1 ? 0 : n, c, 0, 0);
      double* row = out.data() + out.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) row[i] += add;
    }
  }
  return make_result(std::move(out), {x, v}, [plane](Node& self) {
    Node& in = *self.inputs[0];
    Node& vec = *self.inputs[1];
    if (in.requires_grad) in.grad_buffer() += self.grad;
    if (vec.requires_grad) {
      Tensor& g = vec.grad_buffer();
      const Shape s = self.value.shape();
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const double* row = self.grad.data() + self.grad.offset(n, c, 0, 0);
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += row[i];
          g.at(g.n() == 1 ? 0 : n, c, 0, 0) += acc;
        }
      }
    }
  });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& a) {
  Tensor out(Shape{1, 1, 1, 1}, a.value().sum());
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const double s = self.grad[0];
    for (double& v : g.values()) v += s;
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  if (count == 0) throw std::invalid_argument("mean of empty tensor");
  Tensor out(Shape{1, 1, 1, 1}, a.value().sum() / count);
  return make_result(std::move(out), {a}, [count](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const double s = self.grad[0] / count;
    for (double& v : g.values()) v += s;
  });
}

Var mean_spatial(const Var& a) {
  const Shape s = a.shape();
  const std::size_t plane = s.plane();
  Tensor out(Shape{s.n, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* row = a.value().data() + a.value().offset(n, c, 0, 0);
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += row[i];
      out.at(n, c, 0, 0) = acc / static_cast<double>(plane);
    }
  }
  return make_result(std::move(out), {a}, [plane](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const Shape s = in.value.shape();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double d = self.grad.at(n, c, 0, 0) / static_cast<double>(plane);
        double* row = g.data() + g.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) row[i] += d;
      }
    }
  });
}

Var mean_per_sample(const Var& a) {
  const Shape s = a.shape();
  const std::size_t item = static_cast<std::size_t>(s.c) * s.plane();
  Tensor out(Shape{s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    const double* p = a.value().data() + n * item;
    double acc = 0.0;
    for (std::size_t i = 0; i < item; ++i) acc += p[i];
    out[static_cast<std::size_t>(n)] = acc / static_cast<double>(item);
  }
  return make_result(std::move(out), {a}, [item](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int n = 0; n < in.value.n(); ++n) {
      const double d = self.grad[static_cast<std::size_t>(n)] / static_cast<double>(item);
      double* p = g.data() + n * item;
      for (std::size_t i = 0; i < item; ++i) p[i] += d;
    }
  });
}

Var log_mean_exp(const Var& a) {
  const Tensor& x = a.value();
  if (x.empty()) throw std::invalid_argument("log_mean_exp of empty tensor");
  const double m = x.max();
  double acc = 0.0;
  for (double v : x.values()) acc += std::exp(v - m);
  const double lme = m + std::log(acc / static_cast<double>(x.size()));
  const double lse = m + std::log(acc);
  return make_result(Tensor(Shape{1, 1, 1, 1}, lme), {a}, [lse](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const double s = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * std::exp(in.value[i] - lse);
  });
}

// ---- structure -------------------------------------------------------------

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels of nothing");
  Shape s = parts.front().shape();
  s.c = 0;
  for (const Var& p : parts) {
    if (p.shape().n != s.n || p.shape().h != s.h || p.shape().w != s.w) {
      throw std::invalid_argument("concat_channels: incompatible " + p.shape().str());
    }
    s.c += p.shape().c;
  }
  Tensor out(s);
  const std::size_t plane = s.plane();
  int c0 = 0;
  for (const Var& p : parts) {
    const int pc = p.shape().c;
    for (int n = 0; n < s.n; ++n) {
      std::copy_n(p.value().data() + p.value().offset(n, 0, 0, 0), pc * plane, out.data() + out.offset(n, c0, 0, 0));
    }
    c0 += pc;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(inputs), [plane](Node& self) {
    int c0 = 0;
    const Shape s = self.value.shape();
    for (auto& in : self.inputs) {
      const int pc = in->value.c();
      if (in->requires_grad) {
        Tensor& g = in->grad_buffer();
        for (int n = 0; n < s.n; ++n) {
          const double* src = self.grad.data() + self.grad.offset(n, c0, 0, 0);
          double* dst = g.data() + g.offset(n, 0, 0, 0);
          for (std::size_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
        }
      }
      c0 += pc;
    }
  });
}

Var gather_batch(const Var& x, std::span<const int> indices) {
  const Shape s = x.shape();
  const std::size_t item = static_cast<std::size_t>(s.c) * s.plane();
  Shape os = s;
  os.n = static_cast<int>(indices.size());
  Tensor out(os);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    if (src < 0 || src >= s.n) throw std::out_of_range("gather_batch index out of range");
    std::copy_n(x.value().data() + src * item, item, out.data() + i * item);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make_result(std::move(out), {x}, [idx, item](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = self.grad.data() + i * item;
      double* dst = g.data() + idx[i] * item;
      for (std::size_t j = 0; j < item; ++j) dst[j] += src[j];
    }
  });
}

Var avg_pool2(const Var& x) {
  const Shape s = x.shape();
  if (s.h < 2 || s.w < 2) throw std::invalid_argument("avg_pool2 on " + s.str());
  Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  const Tensor& in = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < os.h; ++h)
        for (int w = 0; w < os.w; ++w)
          out.at(n, c, h, w) = 0.25 * (in.at(n, c, 2 * h, 2 * w) + in.at(n, c, 2 * h, 2 * w + 1) +
                                       in.at(n, c, 2 * h + 1, 2 * w) + in.at(n, c, 2 * h + 1, 2 * w + 1));
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const Shape os = self.value.shape();
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int h = 0; h < os.h; ++h)
          for (int w = 0; w < os.w; ++w) {
            const double d = 0.25 * self.grad.at(n, c, h, w);
            g.at(n, c, 2 * h, 2 * w) += d;
            g.at(n, c, 2 * h, 2 * w + 1) += d;
            g.at(n, c, 2 * h + 1, 2 * w) += d;
            g.at(n, c, 2 * h + 1, 2 * w + 1) += d;
          }
  });
}

Var upsample_nearest2(const Var& x) {
  const Shape s = x.shape();
  Shape os{s.n, s.c, s.h * 2, s.w * 2};
  Tensor out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < os.h; ++h)
        for (int w = 0; w < os.w; ++w) out.at(n, c, h, w) = x.value().at(n, c, h / 2, w / 2);
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const Shape os = self.value.shape();
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int h = 0; h < os.h; ++h)
          for (int w = 0; w < os.w; ++w) g.at(n, c, h / 2, w / 2) += self.grad.at(n, c, h, w);
  });
}

Var gather_locations(const Var& x, const std::vector<std::vector<int>>& ids) {
  const Shape s = x.shape();
  if (static_cast<int>(ids.size()) != s.n) throw std::invalid_argument("gather_locations: one id list per image");
  const int p = ids.empty() ? 0 : static_cast<int>(ids.front().size());
  const int plane = static_cast<int>(s.plane());
  Tensor out(Shape{s.n * p, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n) {
    if (static_cast<int>(ids[static_cast<std::size_t>(n)].size()) != p) {
      throw std::invalid_argument("gather_locations: ragged id lists");
    }
    for (int j = 0; j < p; ++j) {
      const int loc = ids[static_cast<std::size_t>(n)][static_cast<std::size_t>(j)];
      if (loc < 0 || loc >= plane) throw std::out_of_range("gather_locations: location out of range");
      for (int c = 0; c < s.c; ++c) {
        out[static_cast<std::size_t>((n * p + j) * s.c + c)] = x.value()[x.value().offset(n, c, 0, 0) + loc];
      }
    }
  }
  return make_result(std::move(out), {x}, [ids, p](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const int cdim = in.value.c();
    for (int n = 0; n < in.value.n(); ++n)
      for (int j = 0; j < p; ++j) {
        const int loc = ids[static_cast<std::size_t>(n)][static_cast<std::size_t>(j)];
        for (int c = 0; c < cdim; ++c)
          g[g.offset(n, c, 0, 0) + loc] += self.grad[static_cast<std::size_t>((n * p + j) * cdim + c)];
      }
  });
}

Var l2_normalize(const Var& x, double eps) {
  const Shape s = x.shape();
  const int d = s.c * s.h * s.w;
  Tensor out = x.value();
  std::vector<double> norms(static_cast<std::size_t>(s.n));
  for (int r = 0; r < s.n; ++r) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += out[static_cast<std::size_t>(r * d + i)] * out[static_cast<std::size_t>(r * d + i)];
    const double nrm = std::sqrt(acc);
    norms[static_cast<std::size_t>(r)] = nrm;
    for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(r * d + i)] /= (nrm + eps);
  }
  return make_result(std::move(out), {x}, [norms, d, eps](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int r = 0; r < in.value.n(); ++r) {
      const double nrm = norms[static_cast<std::size_t>(r)];
      const double denom = nrm + eps;
      double gx = 0.0;
      for (int i = 0; i < d; ++i) {
        const auto k = static_cast<std::size_t>(r * d + i);
        gx += self.grad[k] * in.value[k];
      }
      const double corr = nrm > 0.0 ? gx / (nrm * denom * denom) : 0.0;
      for (int i = 0; i < d; ++i) {
        const auto k = static_cast<std::size_t>(r * d + i);
        g[k] += self.grad[k] / denom - in.value[k] * corr;
      }
    }
  });
}

// ---- linear maps -----------------------------------------------------------

namespace {

// Range of output columns whose input column ow*stride - pad + k lies in [0, in).
void valid_range(int out, int in, int stride, int pad, int k, int& lo, int& hi) {
  lo = 0;
  while (lo < out && lo * stride - pad + k < 0) ++lo;
  hi = out;
  while (hi > lo && (hi - 1) * stride - pad + k >= in) --hi;
}

}  // namespace

namespace {

struct ConvGeom {
  Shape xs;
  Shape ws;
  int oh = 0;
  int ow = 0;
  int stride = 1;
  int pad = 0;

  int rows() const { return ws.c * ws.h * ws.w; }
  std::size_t cols() const { return static_cast<std::size_t>(xs.n) * oh * ow; }
};

// cols[(ci, kh, kw), (n, y, x)], zero where the tap falls in the padding.
std::vector<double> im2col(const Tensor& x, const ConvGeom& g) {
  const std::size_t ncols = g.cols();
  std::vector<double> cols(static_cast<std::size_t>(g.rows()) * ncols, 0.0);
  const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;
  std::size_t r = 0;
  for (int ci = 0; ci < g.ws.c; ++ci) {
    for (int kh = 0; kh < g.ws.h; ++kh) {
      int h_lo, h_hi;
      valid_range(g.oh, g.xs.h, g.stride, g.pad, kh, h_lo, h_hi);
      for (int kw = 0; kw < g.ws.w; ++kw, ++r) {
        int w_lo, w_hi;
        valid_range(g.ow, g.xs.w, g.stride, g.pad, kw, w_lo, w_hi);
        double* row = cols.data() + r * ncols;
        for (int n = 0; n < g.xs.n; ++n) {
          const double* ibase = x.data() + x.offset(n, ci, 0, 0);
          double* dst = row + static_cast<std::size_t>(n) * plane;
          for (int y = h_lo; y < h_hi; ++y) {
            const double* irow = ibase + static_cast<std::size_t>(y * g.stride - g.pad + kh) * g.xs.w;
            double* drow = dst + static_cast<std::size_t>(y) * g.ow;
            for (int xo = w_lo; xo < w_hi; ++xo) drow[xo] = irow[xo * g.stride - g.pad + kw];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const std::vector<double>& cols, const ConvGeom& g, Tensor& gx) {
  const std::size_t ncols = g.cols();
  const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;
  std::size_t r = 0;
  for (int ci = 0; ci < g.ws.c; ++ci) {
    for (int kh = 0; kh < g.ws.h; ++kh) {
      int h_lo, h_hi;
      valid_range(g.oh, g.xs.h, g.stride, g.pad, kh, h_lo, h_hi);
      for (int kw = 0; kw < g.ws.w; ++kw, ++r) {
        int w_lo, w_hi;
        valid_range(g.ow, g.xs.w, g.stride, g.pad, kw, w_lo, w_hi);
        const double* row = cols.data() + r * ncols;
        for (int n = 0; n < g.xs.n; ++n) {
          double* gbase = gx.data() + gx.offset(n, ci, 0, 0);
          const double* src = row + static_cast<std::size_t>(n) * plane;
          for (int y = h_lo; y < h_hi; ++y) {
            double* grow = gbase + static_cast<std::size_t>(y * g.stride - g.pad + kh) * g.xs.w;
            const double* srow = src + static_cast<std::size_t>(y) * g.ow;
            for (int xo = w_lo; xo < w_hi; ++xo) grow[xo * g.stride - g.pad + kw] += srow[xo];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (ws.c != xs.c) {
    throw std::invalid_argument("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  if (b.defined() && (b.shape().c != ws.n || b.shape().n != 1)) {
    throw std::invalid_argument("conv2d: bias shape " + b.shape().str());
  }
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  ConvGeom g{xs, ws, (xs.h + 2 * pad - ws.h) / stride + 1, (xs.w + 2 * pad - ws.w) / stride + 1, stride, pad};
  if (g.oh <= 0 || g.ow <= 0) throw std::invalid_argument("conv2d: input " + xs.str() + " too small for kernel");

  auto cols = std::make_shared<std::vector<double>>(im2col(x.value(), g));
  const std::size_t ncols = g.cols();
  const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;
  const int rows = g.rows();
  // out[co, col] = sum_r w[co, r] cols[r, col]
  std::vector<double> prod(static_cast<std::size_t>(ws.n) * ncols, 0.0);
  const double* wv = w.value().data();
  for (int co = 0; co < ws.n; ++co) {
    double* dst = prod.data() + static_cast<std::size_t>(co) * ncols;
    for (int r = 0; r < rows; ++r) {
      const double wk = wv[static_cast<std::size_t>(co) * rows + r];
      if (wk == 0.0) continue;
      const double* src = cols->data() + static_cast<std::size_t>(r) * ncols;
      for (std::size_t j = 0; j < ncols; ++j) dst[j] += wk * src[j];
    }
  }
  Tensor out(Shape{xs.n, ws.n, g.oh, g.ow});
  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < ws.n; ++co) {
      const double bias = b.defined() ? b.value()[static_cast<std::size_t>(co)] : 0.0;
      const double* src = prod.data() + static_cast<std::size_t>(co) * ncols + static_cast<std::size_t>(n) * plane;
      double* dst = out.data() + out.offset(n, co, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bias;
    }
  }

  const bool keep_cols = w.requires_grad() && grad_enabled();
  if (!keep_cols) cols.reset();
  return make_result(std::move(out), {x, w, b}, [g, cols](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    const std::size_t ncols = g.cols();
    const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;
    const int rows = g.rows();
    const int cout = g.ws.n;
    // Upstream gradient as [co, (n, y, x)].
    std::vector<double> go(static_cast<std::size_t>(cout) * ncols);
    for (int n = 0; n < g.xs.n; ++n) {
      for (int co = 0; co < cout; ++co) {
        const double* src = self.grad.data() + self.grad.offset(n, co, 0, 0);
        std::copy(src, src + plane, go.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(co) * ncols + n * plane));
      }
    }
    if (bn.requires_grad) {
      Tensor& gb = bn.grad_buffer();
      for (int co = 0; co < cout; ++co) {
        const double* row = go.data() + static_cast<std::size_t>(co) * ncols;
        double acc = 0.0;
        for (std::size_t j = 0; j < ncols; ++j) acc += row[j];
        gb[static_cast<std::size_t>(co)] += acc;
      }
    }
    if (wn.requires_grad) {
      const std::vector<double> local = cols ? std::vector<double>() : im2col(xn.value, g);
      const std::vector<double>& c = cols ? *cols : local;
      Tensor& gw = wn.grad_buffer();
      for (int co = 0; co < cout; ++co) {
        const double* grow = go.data() + static_cast<std::size_t>(co) * ncols;
        for (int r = 0; r < rows; ++r) {
          const double* crow = c.data() + static_cast<std::size_t>(r) * ncols;
          double acc = 0.0;
          for (std::size_t j = 0; j < ncols; ++j) acc += grow[j] * crow[j];
          gw[static_cast<std::size_t>(co) * rows + r] += acc;
        }
      }
    }
    if (xn.requires_grad) {
      std::vector<double> gcols(static_cast<std::size_t>(rows) * ncols, 0.0);
      const double* wv = wn.value.data();
      for (int r = 0; r < rows; ++r) {
        double* dst = gcols.data() + static_cast<std::size_t>(r) * ncols;
        for (int co = 0; co < cout; ++co) {
          const double wk = wv[static_cast<std::size_t>(co) * rows + r];
          if (wk == 0.0) continue;
          const double* grow = go.data() + static_cast<std::size_t>(co) * ncols;
          for (std::size_t j = 0; j < ncols; ++j) dst[j] += wk * grow[j];
        }
      }
      col2im_add(gcols, g, xn.grad_buffer());
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int in_dim = xs.c * xs.h * xs.w;
  if (ws.c * ws.h * ws.w != in_dim) {
    throw std::invalid_argument("linear: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  const int out_dim = ws.n;
  Tensor out(Shape{xs.n, out_dim, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    const double* xr = x.value().data() + static_cast<std::size_t>(n) * in_dim;
    for (int o = 0; o < out_dim; ++o) {
      const double* wr = w.value().data() + static_cast<std::size_t>(o) * in_dim;
      double acc = b.defined() ? b.value()[static_cast<std::size_t>(o)] : 0.0;
      for (int i = 0; i < in_dim; ++i) acc += wr[i] * xr[i];
      out[static_cast<std::size_t>(n * out_dim + o)] = acc;
    }
  }
  return make_result(std::move(out), {x, w, b}, [in_dim, out_dim](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    const int rows = xn.value.n();
    const Tensor& g = self.grad;
    if (bn.requires_grad) {
      Tensor& gb = bn.grad_buffer();
      for (int n = 0; n < rows; ++n)
        for (int o = 0; o < out_dim; ++o) gb[static_cast<std::size_t>(o)] += g[static_cast<std::size_t>(n * out_dim + o)];
    }
    Tensor* gx = xn.requires_grad ? &xn.grad_buffer() : nullptr;
    Tensor* gw = wn.requires_grad ? &wn.grad_buffer() : nullptr;
    for (int n = 0; n < rows; ++n) {
      const double* xr = xn.value.data() + static_cast<std::size_t>(n) * in_dim;
      for (int o = 0; o < out_dim; ++o) {
        const double go = g[static_cast<std::size_t>(n * out_dim + o)];
        if (go == 0.0) continue;
        const double* wr = wn.value.data() + static_cast<std::size_t>(o) * in_dim;
        if (gx) {
          double* gxr = gx->data() + static_cast<std::size_t>(n) * in_dim;
          for (int i = 0; i < in_dim; ++i) gxr[i] += go * wr[i];
        }
        if (gw) {
          double* gwr = gw->data() + static_cast<std::size_t>(o) * in_dim;
          for (int i = 0; i < in_dim; ++i) gwr[i] += go * xr[i];
        }
      }
    }
  });
}

Var separable_filter_valid(const Var& x, std::span<const double> kernel) {
  const Shape s = x.shape();
  const int k = static_cast<int>(kernel.size());
  if (k < 1 || s.h < k || s.w < k) {
    throw std::invalid_argument("separable_filter_valid: input " + s.str() + " smaller than kernel");
  }
  const int oh = s.h - k + 1;
  const int ow = s.w - k + 1;
  std::vector<double> kv(kernel.begin(), kernel.end());
  Tensor out(Shape{s.n, s.c, oh, ow});
  std::vector<double> tmp(static_cast<std::size_t>(s.h) * ow);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* in = x.value().data() + x.value().offset(n, c, 0, 0);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < ow; ++w) {
          double acc = 0.0;
          for (int j = 0; j < k; ++j) acc += kv[static_cast<std::size_t>(j)] * in[h * s.w + w + j];
          tmp[static_cast<std::size_t>(h * ow + w)] = acc;
        }
      double* o = out.data() + out.offset(n, c, 0, 0);
      for (int h = 0; h < oh; ++h)
        for (int w = 0; w < ow; ++w) {
          double acc = 0.0;
          for (int j = 0; j < k; ++j) acc += kv[static_cast<std::size_t>(j)] * tmp[static_cast<std::size_t>((h + j) * ow + w)];
          o[h * ow + w] = acc;
        }
    }
  return make_result(std::move(out), {x}, [kv](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Shape s = in.value.shape();
    const int k = static_cast<int>(kv.size());
    const int oh = s.h - k + 1;
    const int ow = s.w - k + 1;
    Tensor& g = in.grad_buffer();
    std::vector<double> gtmp(static_cast<std::size_t>(s.h) * ow);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        std::fill(gtmp.begin(), gtmp.end(), 0.0);
        const double* go = self.grad.data() + self.grad.offset(n, c, 0, 0);
        for (int h = 0; h < oh; ++h)
          for (int w = 0; w < ow; ++w) {
            const double d = go[h * ow + w];
            for (int j = 0; j < k; ++j) gtmp[static_cast<std::size_t>((h + j) * ow + w)] += kv[static_cast<std::size_t>(j)] * d;
          }
        double* gi = g.data() + g.offset(n, c, 0, 0);
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < ow; ++w) {
            const double d = gtmp[static_cast<std::size_t>(h * ow + w)];
            for (int j = 0; j < k; ++j) gi[h * s.w + w + j] += kv[static_cast<std::size_t>(j)] * d;
          }
      }
  });
}

Var info_nce(const Var& q, const Var& k, int patches_per_image, double temperature) {
  require_same_shape(q, k, "info_nce");
  const Shape s = q.shape();
  const int p = patches_per_image;
  if (p < 1 || s.n % p != 0) throw std::invalid_argument("info_nce: rows not divisible by patch count");
  if (temperature <= 0.0) throw std::invalid_argument("info_nce: temperature must be positive");
  const int d = s.c * s.h * s.w;
  const int images = s.n / p;
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  // softmax rows are kept for the backward pass
  std::vector<double> prob(static_cast<std::size_t>(s.n) * p);
  double total = 0.0;
  std::vector<double> logits(static_cast<std::size_t>(p));
  for (int img = 0; img < images; ++img) {
    for (int i = 0; i < p; ++i) {
      const double* qr = qv.data() + static_cast<std::size_t>(img * p + i) * d;
      for (int j = 0; j < p; ++j) {
        const double* kr = kv.data() + static_cast<std::size_t>(img * p + j) * d;
        double dot = 0.0;
        for (int t = 0; t < d; ++t) dot += qr[t] * kr[t];
        logits[static_cast<std::size_t>(j)] = dot / temperature;
      }
      const double m = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits) z += std::exp(l - m);
      const double lse = m + std::log(z);
      total += lse - logits[static_cast<std::size_t>(i)];
      for (int j = 0; j < p; ++j) {
        prob[static_cast<std::size_t>((img * p + i) * p + j)] = std::exp(logits[static_cast<std::size_t>(j)] - lse);
      }
    }
  }
  const double rows = static_cast<double>(s.n);
  return make_result(Tensor(Shape{1, 1, 1, 1}, total / rows), {q, k},
                     [prob = std::move(prob), p, d, images, temperature, rows](Node& self) {
                       Node& qn = *self.inputs[0];
                       Node& kn = *self.inputs[1];
                       const double scale = self.grad[0] / (rows * temperature);
                       Tensor* gq = qn.requires_grad ? &qn.grad_buffer() : nullptr;
                       Tensor* gk = kn.requires_grad ? &kn.grad_buffer() : nullptr;
                       for (int img = 0; img < images; ++img)
                         for (int i = 0; i < p; ++i) {
                           const std::size_t qi = static_cast<std::size_t>(img * p + i);
                           for (int j = 0; j < p; ++j) {
                             const std::size_t kj = static_cast<std::size_t>(img * p + j);
                             const double coeff =
                                 scale * (prob[qi * p + static_cast<std::size_t>(j)] - (i == j ? 1.0 : 0.0));
                             if (coeff == 0.0) continue;
                             if (gq) {
                               double* dst = gq->data() + qi * d;
                               const double* src = kn.value.data() + kj * d;
                               for (int t = 0; t < d; ++t) dst[t] += coeff * src[t];
                             }
                             if (gk) {
                               double* dst = gk->data() + kj * d;
                               const double* src = qn.value.data() + qi * d;
                               for (int t = 0; t < d; ++t) dst[t] += coeff * src[t];
                             }
                           }
                         }
                     });
}

}  // namespace cunsb::ag
