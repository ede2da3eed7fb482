#include "cunsb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace cunsb {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw std::invalid_argument("negative tensor extent " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel()) {
    throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape.str());
  }
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::batch_slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.n) {
    throw std::out_of_range("batch slice out of range");
  }
  Shape s = shape_;
  s.n = count;
  const std::size_t item = static_cast<std::size_t>(shape_.c) * shape_.plane();
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(first * item),
                          data_.begin() + static_cast<std::ptrdiff_t>((first + count) * item));
  return Tensor(s, std::move(out));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw std::invalid_argument("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!(other.shape_ == shape_)) {
    throw std::invalid_argument("shape mismatch " + shape_.str() + " vs " + other.shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const {
  if (data_.empty()) throw std::logic_error("min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  if (data_.empty()) throw std::logic_error("max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(const Tensor& a, double s) {
  Tensor out = a;
  out *= s;
  return out;
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batch of nothing");
  Shape s = parts.front().shape();
  s.n = 0;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    if (p.c() != s.c || p.h() != s.h || p.w() != s.w) {
      throw std::invalid_argument("concat_batch shape mismatch " + p.shape().str());
    }
    s.n += p.n();
    out.insert(out.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor(s, std::move(out));
}

bool identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace cunsb
