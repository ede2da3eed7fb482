#pragma once
// Finite-difference gradient checks shared by the loss tests and the
// acceptance binary. Every check builds a fresh random instance, runs
// backward once and compares against central differences.

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "cunsb/losses.hpp"
#include "cunsb/networks.hpp"
#include "cunsb/snake_conv.hpp"
#include "test_util.hpp"

namespace cunsb::testing {

using LossFn = std::function<ag::Var()>;

/// Worst relative error over the leaves. Leaves larger than max_coords are
/// probed at a random subset of coordinates.
/// `reference` is the function differentiated numerically; it defaults to
/// `loss` and differs only where `loss` stops gradients on purpose.
inline double max_relative_error(const std::vector<ag::Var*>& leaves, const LossFn& loss, Rng& rng,
                                 int max_coords = 40, double h = 1e-5, const LossFn& reference = {}) {
  for (ag::Var* v : leaves) v->zero_grad();
  ag::backward(loss());
  const LossFn& numeric = reference ? reference : loss;
  auto value = [&] {
    ag::NoGradGuard guard;
    return numeric().value()[0];
  };
  double worst = 0.0;
  for (ag::Var* v : leaves) {
    const Tensor analytic = v->grad().empty() ? Tensor(v->shape()) : v->grad();
    std::vector<std::size_t> idx(v->value().size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (static_cast<int>(idx.size()) > max_coords) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(max_coords));
    }
    Tensor a(Shape{1, 1, 1, static_cast<int>(idx.size())});
    Tensor n(a.shape());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      double& x = v->mutable_value()[idx[j]];
      const double orig = x;
      x = orig + h;
      const double up = value();
      x = orig - h;
      const double down = value();
      x = orig;
      n[j] = (up - down) / (2.0 * h);
      a[j] = analytic[idx[j]];
    }
    worst = std::max(worst, relative_error(a, n));
  }
  return worst;
}

struct GradCheckSummary {
  int instances = 0;
  int passed = 0;
  double worst = 0.0;
  void add(double err, double tol) {
    ++instances;
    if (err < tol) ++passed;
    worst = std::max(worst, err);
  }
  bool all_passed() const { return instances > 0 && passed == instances; }
};

inline std::vector<ag::Var*> leaves_of(const nn::ParamList& params) {
  std::vector<ag::Var*> out;
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

inline GradCheckSummary check_snake_gradients(int instances, std::uint64_t seed, double tol) {
  GradCheckSummary s;
  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    const snake::SnakeAxis axis = i % 2 ? snake::SnakeAxis::kRow : snake::SnakeAxis::kColumn;
    ag::Var x(random_tensor(Shape{1, 2, 4, 5}, rng), true);
    ag::Var off(random_tensor(Shape{1, 5, 4, 5}, rng, -0.9, 0.9), true);
    ag::Var w(random_tensor(Shape{2, 2, 5, 1}, rng), true);
    ag::Var b(random_tensor(Shape{1, 2, 1, 1}, rng), true);
    const Tensor up = random_tensor(Shape{1, 2, 4, 5}, rng);
    const LossFn f = [&] { return ag::sum(ag::mul(snake::snake_conv2d(x, off, w, b, axis), ag::constant(up))); };
    s.add(max_relative_error({&x, &off, &w, &b}, f, rng, 100), tol);
  }
  return s;
}

inline net::DiscriminatorConfig tiny_discriminator() {
  net::DiscriminatorConfig c;
  c.base_channels = 3;
  c.num_layers = 2;
  c.time_embed_dim = 4;
  return c;
}

inline net::CriticConfig tiny_critic() {
  net::CriticConfig c;
  c.base_channels = 3;
  c.num_layers = 1;
  return c;
}

/// LSGAN loss through a tiny discriminator, both roles, w.r.t. the fake
/// input and the discriminator weights.
inline GradCheckSummary check_adversarial_gradients(int instances, std::uint64_t seed, double tol) {
  GradCheckSummary s;
  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    net::Discriminator d(tiny_discriminator(), rng);
    const int t = static_cast<int>(rng() % 5);
    const ag::Var real(random_tensor(Shape{2, 3, 8, 8}, rng));
    ag::Var fake(random_tensor(Shape{2, 3, 8, 8}, rng), true);
    const loss::AdvRole role = i % 2 ? loss::AdvRole::kGenerator : loss::AdvRole::kDiscriminator;
    const LossFn f = [&] { return loss::adversarial_loss(d.forward(real, t), d.forward(fake, t), role); };
    std::vector<ag::Var*> leaves = leaves_of(d.parameters());
    leaves.push_back(&fake);
    s.add(max_relative_error(leaves, f, rng, 12), tol);
  }
  return s;
}

/// Transport minus the entropy term with the statistic from a tiny critic,
/// w.r.t. the prediction and the critic weights.
inline GradCheckSummary check_sb_gradients(int instances, std::uint64_t seed, double tol) {
  GradCheckSummary s;
  Rng rng(seed);
  std::uniform_real_distribution<double> ut(0.0, 0.8);
  for (int i = 0; i < instances; ++i) {
    net::EntropyCritic critic(tiny_critic(), rng);
    const ag::Var x_t(random_tensor(Shape{3, 3, 4, 4}, rng));
    ag::Var x1(random_tensor(Shape{3, 3, 4, 4}, rng), true);
    const double t = ut(rng);
    // A large tau keeps the entropy term visible next to the transport.
    const LossFn f = [&] { return loss::sb_loss(x_t, x1, t, 0.5, net::mi_estimator_forward(critic, x_t, x1)); };
    std::vector<ag::Var*> leaves = leaves_of(critic.parameters());
    leaves.push_back(&x1);
    s.add(max_relative_error(leaves, f, rng, 12), tol);
  }
  return s;
}

/// Two-scale SSIM regularisation w.r.t. both predictions.
inline GradCheckSummary check_ssim_gradients(int instances, std::uint64_t seed, double tol) {
  GradCheckSummary s;
  Rng rng(seed);
  loss::SsimOptions o;
  o.window = 5;
  o.scales = 2;
  for (int i = 0; i < instances; ++i) {
    const ag::Var a(random_tensor(Shape{1, 2, 10, 11}, rng));
    const ag::Var c(random_tensor(Shape{1, 2, 10, 11}, rng));
    ag::Var b(a.value() + random_tensor(a.shape(), rng, -0.4, 0.4), true);
    ag::Var d(random_tensor(a.shape(), rng), true);
    const LossFn f = [&] { return loss::ssim_regularization(a, b, c, d, o).combined; };
    s.add(max_relative_error({&b, &d}, f, rng, 60), tol);
  }
  return s;
}

/// PatchNCE over nine random feature layers w.r.t. the generated features
/// and the projection heads. Keys are detached, so the numeric side uses
/// keys computed once from the unperturbed heads.
inline GradCheckSummary check_patchnce_gradients(int instances, std::uint64_t seed, double tol) {
  GradCheckSummary s;
  Rng rng(seed);
  const std::vector<int> widths{3, 4, 4, 5, 5, 6, 6, 6, 6};
  for (int i = 0; i < instances; ++i) {
    // Wide enough that no projected row collapses to the zero vector.
    net::ProjectionHeadSet heads(widths, 16, rng);
    std::vector<ag::Var> src, gen;
    for (int l = 0; l < 9; ++l) {
      const int side = l < 3 ? 4 : 3;
      src.emplace_back(random_tensor(Shape{2, widths[l], side, side}, rng));
      gen.emplace_back(random_tensor(Shape{2, widths[l], side, side}, rng), true);
    }
    const auto ids = loss::sample_patch_ids(src, 5, rng);
    const LossFn f = [&] { return loss::patchnce_loss(src, gen, heads, 0.07, ids); };
    std::vector<Tensor> keys;
    for (int l = 0; l < 9; ++l) {
      const std::vector<std::vector<int>> per_image(2, ids[static_cast<std::size_t>(l)]);
      keys.push_back(ag::l2_normalize(heads.project(l, ag::gather_locations(src[static_cast<std::size_t>(l)], per_image))).value());
    }
    const LossFn frozen_keys = [&] {
      ag::Var total;
      for (int l = 0; l < 9; ++l) {
        const std::vector<std::vector<int>> per_image(2, ids[static_cast<std::size_t>(l)]);
        const ag::Var q = ag::l2_normalize(heads.project(l, ag::gather_locations(gen[static_cast<std::size_t>(l)], per_image)));
        const ag::Var term = ag::info_nce(q, ag::constant(keys[static_cast<std::size_t>(l)]), 5, 0.07);
        total = total.defined() ? ag::add(total, term) : term;
      }
      return ag::scale(total, 1.0 / 9.0);
    };
    std::vector<ag::Var*> leaves = leaves_of(heads.parameters());
    for (ag::Var& g : gen) leaves.push_back(&g);
    s.add(max_relative_error(leaves, f, rng, 10, 1e-5, frozen_keys), tol);
  }
  return s;
}

}  // namespace cunsb::testing
