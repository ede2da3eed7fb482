#include "cunsb/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace cunsb::nn {

ag::Var make_weight(Shape shape, Rng& rng, double stddev) { return ag::Var(Tensor::randn(shape, rng, stddev), true); }

ag::Var make_zeros(Shape shape) { return ag::Var(Tensor(shape), true); }

namespace {

double he_std(int fan_in, double requested) {
  return requested >= 0.0 ? requested : std::sqrt(2.0 / static_cast<double>(fan_in));
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng, double init_std)
    : weight_(make_weight(Shape{out_channels, in_channels, kernel, kernel}, rng,
                          he_std(in_channels * kernel * kernel, init_std))),
      bias_(make_zeros(Shape{1, out_channels, 1, 1})),
      out_channels_(out_channels),
      stride_(stride),
      pad_(pad) {}

ag::Var Conv2d::operator()(const ag::Var& x) const { return ag::conv2d(x, weight_, bias_, stride_, pad_); }

void Conv2d::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight_});
  out.push_back({prefix + ".bias", &bias_});
}

Linear::Linear(int in_features, int out_features, Rng& rng, double init_std)
    : weight_(make_weight(Shape{out_features, in_features, 1, 1}, rng, he_std(in_features, init_std))),
      bias_(make_zeros(Shape{1, out_features, 1, 1})) {}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, weight_, bias_); }

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight_});
  out.push_back({prefix + ".bias", &bias_});
}

Tensor sinusoidal_embedding(int t_index, int batch, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time embedding dimension must be even and >= 2");
  Tensor e(Shape{batch, dim, 1, 1});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = static_cast<double>(t_index) * freq;
    for (int n = 0; n < batch; ++n) {
      e.at(n, i, 0, 0) = std::sin(arg);
      e.at(n, half + i, 0, 0) = std::cos(arg);
    }
  }
  return e;
}

TimeEmbedding::TimeEmbedding(int dim, int out_features, Rng& rng)
    : dim_(dim), fc1_(dim, dim, rng), fc2_(dim, out_features, rng) {}

ag::Var TimeEmbedding::operator()(int t_index, int batch) const {
  ag::Var e = ag::constant(sinusoidal_embedding(t_index, batch, dim_));
  return fc2_(ag::leaky_relu(fc1_(e), 0.2));
}

void TimeEmbedding::collect(const std::string& prefix, ParamList& out) {
  fc1_.collect(prefix + ".fc1", out);
  fc2_.collect(prefix + ".fc2", out);
}

void zero_grad(const ParamList& params) {
  for (const NamedParam& p : params) p.var->zero_grad();
}

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const NamedParam& p : params) n += p.var->value().size();
  return n;
}

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const NamedParam& p : params_) {
    m_.emplace_back(p.var->shape());
    v_.emplace_back(p.var->shape());
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var& var = *params_[i].var;
    const Tensor& g = var.grad();
    if (g.empty()) continue;
    Tensor& w = var.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

}  // namespace cunsb::nn
