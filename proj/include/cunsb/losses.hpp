#pragma once

#include <vector>

#include "cunsb/autograd.hpp"
#include "cunsb/networks.hpp"
#include "cunsb/tensor.hpp"

namespace cunsb::loss {

struct LossWeights {
  double lambda_sb = 1.0;
  double lambda_p = 1.0;
  double lambda_s = 0.8;

  void validate() const;
};

/// Per-step objective breakdown. ssim_gen and ssim_idt hold the loss
/// values 1 - SSIM, not the similarities.
struct LossReport {
  double adv = 0.0;
  double sb_transport = 0.0;
  double sb_entropy = 0.0;
  double ssim_gen = 0.0;
  double ssim_idt = 0.0;
  double patchnce = 0.0;
  double total = 0.0;
};

enum class AdvRole { kGenerator, kDiscriminator };

/// Least-squares GAN objective averaged over the patch map.
///   discriminator: mean((D(real) - 1)^2) + mean(D(fake)^2)
///   generator:     mean((D(fake) - 1)^2)        (real logits unused)
ag::Var adversarial_loss(const ag::Var& real_logits, const ag::Var& fake_logits, AdvRole role);

/// Mean squared transport cost between the bridge state and the prediction.
ag::Var sb_transport(const ag::Var& x_ti, const ag::Var& x1_hat);

/// transport - 2 tau (1 - t_i) * mi_statistic
ag::Var sb_loss(const ag::Var& x_ti, const ag::Var& x1_hat, double t_i, double tau, const ag::Var& mi_statistic);

double entropy_coefficient(double t_i, double tau);

struct SsimOptions {
  int window = 11;
  int scales = 3;
  double sigma = 1.5;
  double data_range = 2.0;  // images live in [-1, 1]
  double k1 = 0.01;
  double k2 = 0.03;

  void validate() const;
};

std::vector<double> gaussian_window(int size, double sigma);

/// Multi-scale SSIM with a Gaussian window, averaged over batch and channels.
/// scales = 1 is single-scale SSIM. For more scales the contrast-structure
/// terms of the finer levels and the full SSIM of the coarsest level are
/// combined as a weighted geometric mean (standard MS-SSIM weights, first
/// `scales` entries renormalised), each factor floored at 1e-8.
ag::Var ssim_index(const ag::Var& a, const ag::Var& b, const SsimOptions& options);
double ssim_index(const Tensor& a, const Tensor& b, const SsimOptions& options);

struct SsimTerms {
  ag::Var gen;       // 1 - SSIM(x_ti, x1_hat)
  ag::Var idt;       // 1 - SSIM(x_1, x1_hat_identity)
  ag::Var combined;  // (gen + idt) / 2
};

SsimTerms ssim_regularization(const ag::Var& x_ti, const ag::Var& x1_hat_ti, const ag::Var& x_1,
                              const ag::Var& x1_hat_identity, const SsimOptions& options);

/// Random patch locations for each feature layer: the first num_patches of
/// a permutation of that layer's H*W positions.
std::vector<std::vector<int>> sample_patch_ids(const std::vector<ag::Var>& features, int num_patches, Rng& rng);

/// PatchNCE over the nine feature layers at the given locations. Keys come
/// from the source features and are detached; queries from the generated
/// features. Averaged over layers.
ag::Var patchnce_loss(const std::vector<ag::Var>& source_features, const std::vector<ag::Var>& generated_features,
                      const net::ProjectionHeadSet& heads, double temperature,
                      const std::vector<std::vector<int>>& patch_ids);

ag::Var patchnce_loss(const std::vector<ag::Var>& source_features, const std::vector<ag::Var>& generated_features,
                      const net::ProjectionHeadSet& heads, double temperature, int num_patches, Rng& rng);

struct LossParts {
  double adv = 0.0;
  double sb_transport = 0.0;
  double sb_entropy = 0.0;
  double ssim_gen = 0.0;
  double ssim_idt = 0.0;
  double patchnce = 0.0;
};

/// total = adv + l_sb (transport - 2 tau (1 - t_i) entropy)
///             + l_s (ssim_gen + ssim_idt) / 2 + l_p patchnce
LossReport total_loss(const LossParts& parts, const LossWeights& weights, double t_i, double tau);

}  // namespace cunsb::loss
