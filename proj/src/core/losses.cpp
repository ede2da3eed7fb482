#include "cunsb/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cunsb::loss {

namespace {

constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr double kPowFloor = 1e-8;

struct SsimMaps {
  ag::Var ssim;
  ag::Var cs;
};

SsimMaps ssim_maps(const ag::Var& a, const ag::Var& b, const std::vector<double>& win, double c1, double c2) {
  using namespace ag;
  const Var mu_a = separable_filter_valid(a, win);
  const Var mu_b = separable_filter_valid(b, win);
  const Var mu_aa = mul(mu_a, mu_a);
  const Var mu_bb = mul(mu_b, mu_b);
  const Var mu_ab = mul(mu_a, mu_b);
  const Var s_aa = sub(separable_filter_valid(mul(a, a), win), mu_aa);
  const Var s_bb = sub(separable_filter_valid(mul(b, b), win), mu_bb);
  const Var s_ab = sub(separable_filter_valid(mul(a, b), win), mu_ab);
  const Var cs = div(add_scalar(scale(s_ab, 2.0), c2), add_scalar(add(s_aa, s_bb), c2));
  const Var lum = div(add_scalar(scale(mu_ab, 2.0), c1), add_scalar(add(mu_aa, mu_bb), c1));
  return {mul(lum, cs), cs};
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_sb >= 0.0) || !(lambda_p >= 0.0) || !(lambda_s >= 0.0)) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
}

ag::Var adversarial_loss(const ag::Var& real_logits, const ag::Var& fake_logits, AdvRole role) {
  using namespace ag;
  if (role == AdvRole::kGenerator) return mean(square(add_scalar(fake_logits, -1.0)));
  if (!(real_logits.shape() == fake_logits.shape())) {
    throw std::invalid_argument("adversarial loss: real logits " + real_logits.shape().str() +
                                " vs fake logits " + fake_logits.shape().str());
  }
  return add(mean(square(add_scalar(real_logits, -1.0))), mean(square(fake_logits)));
}

ag::Var sb_transport(const ag::Var& x_ti, const ag::Var& x1_hat) {
  if (!(x_ti.shape() == x1_hat.shape())) {
    throw std::invalid_argument("sb loss: batch " + x_ti.shape().str() + " vs " + x1_hat.shape().str());
  }
  return ag::mean(ag::square(ag::sub(x_ti, x1_hat)));
}

double entropy_coefficient(double t_i, double tau) { return 2.0 * tau * (1.0 - t_i); }

ag::Var sb_loss(const ag::Var& x_ti, const ag::Var& x1_hat, double t_i, double tau, const ag::Var& mi_statistic) {
  const ag::Var transport = sb_transport(x_ti, x1_hat);
  const double coeff = entropy_coefficient(t_i, tau);
  if (coeff == 0.0) return transport;
  return ag::sub(transport, ag::scale(mi_statistic, coeff));
}

void SsimOptions::validate() const {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("ssim window must be odd and positive");
  if (scales < 1 || scales > static_cast<int>(kMsSsimWeights.size())) {
    throw std::invalid_argument("ssim scales must be in [1, 5]");
  }
  if (!(sigma > 0.0) || !(data_range > 0.0)) throw std::invalid_argument("ssim sigma and data range must be positive");
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    w[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
  }
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= s;
  return w;
}

ag::Var ssim_index(const ag::Var& a, const ag::Var& b, const SsimOptions& options) {
  options.validate();
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument("ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  const int need = options.window << (options.scales - 1);
  if (a.shape().h < need || a.shape().w < need) {
    throw std::invalid_argument("ssim: image " + a.shape().str() + " too small for window " +
                                std::to_string(options.window) + " at " + std::to_string(options.scales) +
                                " scales (needs sides >= " + std::to_string(need) + ")");
  }
  const std::vector<double> win = gaussian_window(options.window, options.sigma);
  const double c1 = (options.k1 * options.data_range) * (options.k1 * options.data_range);
  const double c2 = (options.k2 * options.data_range) * (options.k2 * options.data_range);

  if (options.scales == 1) return ag::mean(ssim_maps(a, b, win, c1, c2).ssim);

  double wsum = 0.0;
  for (int j = 0; j < options.scales; ++j) wsum += kMsSsimWeights[static_cast<std::size_t>(j)];
  ag::Var xa = a;
  ag::Var xb = b;
  ag::Var product;
  for (int j = 0; j < options.scales; ++j) {
    const SsimMaps m = ssim_maps(xa, xb, win, c1, c2);
    const bool last = j == options.scales - 1;
    const ag::Var level = ag::mean_spatial(last ? m.ssim : m.cs);
    const ag::Var factor = ag::clamped_pow(level, kMsSsimWeights[static_cast<std::size_t>(j)] / wsum, kPowFloor);
    product = product.defined() ? ag::mul(product, factor) : factor;
    if (!last) {
      xa = ag::avg_pool2(xa);
      xb = ag::avg_pool2(xb);
    }
  }
  return ag::mean(product);
}

double ssim_index(const Tensor& a, const Tensor& b, const SsimOptions& options) {
  ag::NoGradGuard guard;
  return ssim_index(ag::constant(a), ag::constant(b), options).value()[0];
}

SsimTerms ssim_regularization(const ag::Var& x_ti, const ag::Var& x1_hat_ti, const ag::Var& x_1,
                              const ag::Var& x1_hat_identity, const SsimOptions& options) {
  SsimTerms t;
  t.gen = ag::add_scalar(ag::scale(ssim_index(x_ti, x1_hat_ti, options), -1.0), 1.0);
  t.idt = ag::add_scalar(ag::scale(ssim_index(x_1, x1_hat_identity, options), -1.0), 1.0);
  t.combined = ag::scale(ag::add(t.gen, t.idt), 0.5);
  return t;
}

std::vector<std::vector<int>> sample_patch_ids(const std::vector<ag::Var>& features, int num_patches, Rng& rng) {
  if (num_patches < 1) throw std::invalid_argument("patchnce needs at least one patch");
  std::vector<std::vector<int>> ids;
  for (const ag::Var& f : features) {
    const int locations = static_cast<int>(f.shape().plane());
    if (locations < num_patches) {
      throw std::invalid_argument("patchnce: feature map " + f.shape().str() + " has " + std::to_string(locations) +
                                  " locations, fewer than " + std::to_string(num_patches) + " patches");
    }
    std::vector<int> perm(static_cast<std::size_t>(locations));
    std::iota(perm.begin(), perm.end(), 0);
    // Partial Fisher-Yates; std::shuffle's draw pattern is not specified.
    for (int i = 0; i < num_patches; ++i) {
      std::uniform_int_distribution<int> pick(i, locations - 1);
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
    }
    perm.resize(static_cast<std::size_t>(num_patches));
    ids.push_back(std::move(perm));
  }
  return ids;
}

ag::Var patchnce_loss(const std::vector<ag::Var>& source_features, const std::vector<ag::Var>& generated_features,
                      const net::ProjectionHeadSet& heads, double temperature,
                      const std::vector<std::vector<int>>& patch_ids) {
  const std::size_t layers = source_features.size();
  if (layers != generated_features.size() || static_cast<int>(layers) != heads.size() || patch_ids.size() != layers) {
    throw std::invalid_argument("patchnce: features, heads and patch ids must align (nine layers)");
  }
  ag::Var total;
  for (std::size_t l = 0; l < layers; ++l) {
    const ag::Var& src = source_features[l];
    const ag::Var& gen = generated_features[l];
    if (!(src.shape() == gen.shape())) throw std::invalid_argument("patchnce: feature shape mismatch at layer " + std::to_string(l));
    const int p = static_cast<int>(patch_ids[l].size());
    for (int id : patch_ids[l]) {
      if (id < 0 || id >= static_cast<int>(src.shape().plane())) throw std::out_of_range("patchnce: patch id out of range");
    }
    const std::vector<std::vector<int>> per_image(static_cast<std::size_t>(src.shape().n), patch_ids[l]);
    const int layer = static_cast<int>(l);
    const ag::Var q = ag::l2_normalize(heads.project(layer, ag::gather_locations(gen, per_image)));
    const ag::Var k = ag::detach(ag::l2_normalize(heads.project(layer, ag::gather_locations(src, per_image))));
    const ag::Var term = ag::info_nce(q, k, p, temperature);
    total = total.defined() ? ag::add(total, term) : term;
  }
  return ag::scale(total, 1.0 / static_cast<double>(layers));
}

ag::Var patchnce_loss(const std::vector<ag::Var>& source_features, const std::vector<ag::Var>& generated_features,
                      const net::ProjectionHeadSet& heads, double temperature, int num_patches, Rng& rng) {
  return patchnce_loss(source_features, generated_features, heads, temperature,
                       sample_patch_ids(source_features, num_patches, rng));
}

LossReport total_loss(const LossParts& parts, const LossWeights& weights, double t_i, double tau) {
  weights.validate();
  LossReport r;
  r.adv = parts.adv;
  r.sb_transport = parts.sb_transport;
  r.sb_entropy = parts.sb_entropy;
  r.ssim_gen = parts.ssim_gen;
  r.ssim_idt = parts.ssim_idt;
  r.patchnce = parts.patchnce;
  r.total = parts.adv + weights.lambda_sb * (parts.sb_transport - entropy_coefficient(t_i, tau) * parts.sb_entropy) +
            weights.lambda_s * (parts.ssim_gen + parts.ssim_idt) / 2.0 + weights.lambda_p * parts.patchnce;
  return r;
}

}  // namespace cunsb::loss
