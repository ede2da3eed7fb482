#pragma once

#include <string>
#include <vector>

#include "cunsb/autograd.hpp"
#include "cunsb/tensor.hpp"

namespace cunsb::nn {

/// A registered trainable array. The pointer refers into the owning module.
struct NamedParam {
  std::string name;
  ag::Var* var;
};

using ParamList = std::vector<NamedParam>;

/// Leaf with N(0, stddev^2) entries that requires a gradient.
ag::Var make_weight(Shape shape, Rng& rng, double stddev = 0.02);
ag::Var make_zeros(Shape shape);

class Conv2d {
 public:
  Conv2d() = default;
  /// init_std < 0 selects He-normal scaling sqrt(2 / fan_in).
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng, double init_std = -1.0);

  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, ParamList& out);
  int out_channels() const { return out_channels_; }

 private:
  ag::Var weight_;
  ag::Var bias_;
  int out_channels_ = 0;
  int stride_ = 1;
  int pad_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng, double init_std = -1.0);

  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, ParamList& out);

 private:
  ag::Var weight_;
  ag::Var bias_;
};

/// Sinusoidal embedding of integer time indices, one row per batch item.
Tensor sinusoidal_embedding(int t_index, int batch, int dim);

/// t embedding -> Linear -> LeakyReLU -> Linear.
class TimeEmbedding {
 public:
  TimeEmbedding() = default;
  TimeEmbedding(int dim, int out_features, Rng& rng);

  ag::Var operator()(int t_index, int batch) const;
  void collect(const std::string& prefix, ParamList& out);

 private:
  int dim_ = 0;
  Linear fc1_;
  Linear fc2_;
};

void zero_grad(const ParamList& params);
std::size_t parameter_count(const ParamList& params);

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, AdamOptions options);

  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  /// Applies one update from the accumulated gradients. Parameters without
  /// a gradient are left untouched.
  void step();
  void zero_grad() const { nn::zero_grad(params_); }

  long long step_count() const { return step_; }
  const ParamList& params() const { return params_; }

  // Moment buffers are exposed for checkpointing.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_step_count(long long s) { step_ = s; }

 private:
  ParamList params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long long step_ = 0;
};

}  // namespace cunsb::nn
