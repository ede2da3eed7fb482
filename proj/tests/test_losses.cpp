#include <cmath>
#include <algorithm>
#include <set>
#include <stdexcept>

#include "cunsb/losses.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "reference_values.hpp"
#include "test_util.hpp"

using namespace cunsb;
using namespace cunsb::loss;

namespace {

ag::Var filled(Shape s, double v) { return ag::Var(Tensor(s, v)); }

double value(const ag::Var& v) { return v.value()[0]; }

SsimOptions options(int window, int scales, double range) {
  SsimOptions o;
  o.window = window;
  o.scales = scales;
  o.data_range = range;
  return o;
}

}  // namespace

TEST_CASE("loss weight defaults and validation") {
  LossWeights w;
  CHECK(w.lambda_sb == 1.0);
  CHECK(w.lambda_p == 1.0);
  CHECK(w.lambda_s == 0.8);
  w.lambda_p = -0.1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_CASE("adversarial loss examples") {
  const Shape s{2, 1, 3, 3};
  CHECK(value(adversarial_loss(filled(s, 0.3), filled(s, 1.0), AdvRole::kGenerator)) == 0.0);
  CHECK(value(adversarial_loss(filled(s, 1.0), filled(s, 0.0), AdvRole::kDiscriminator)) == 0.0);
  CHECK(value(adversarial_loss(filled(s, 0.5), filled(s, 0.5), AdvRole::kGenerator)) == doctest::Approx(0.25));
  CHECK(value(adversarial_loss(filled(s, 0.5), filled(s, 0.5), AdvRole::kDiscriminator)) == doctest::Approx(0.5));
  CHECK_THROWS_AS(adversarial_loss(filled(s, 0.5), filled(Shape{2, 1, 2, 2}, 0.5), AdvRole::kDiscriminator),
                  std::invalid_argument);
}

TEST_CASE("sb loss examples") {
  const Shape s{2, 3, 4, 4};
  Rng rng(1);
  const ag::Var x(testing::random_tensor(s, rng));
  CHECK(value(sb_loss(x, x, 0.4, 0.01, filled(Shape{1, 1, 1, 1}, 0.0))) == 0.0);
  // per-element squared gap of 4
  const double v = value(sb_loss(filled(s, 1.0), filled(s, -1.0), 0.2, 0.01, filled(Shape{1, 1, 1, 1}, 1.0)));
  CHECK(v == doctest::Approx(3.984).epsilon(1e-12));
  CHECK(entropy_coefficient(0.2, 0.01) == doctest::Approx(0.016));
  CHECK(entropy_coefficient(1.0, 0.01) == 0.0);
  CHECK_THROWS_AS(sb_loss(x, filled(Shape{1, 3, 4, 4}, 0.0), 0.2, 0.01, filled(Shape{1, 1, 1, 1}, 0.0)),
                  std::invalid_argument);
}

TEST_CASE("sb loss at t = 1 is exactly the transport for any statistic (property)") {
  Rng rng(2);
  std::uniform_real_distribution<double> mi(-50.0, 50.0);
  for (int trial = 0; trial < 100; ++trial) {
    const ag::Var a(testing::random_tensor(Shape{2, 3, 3, 3}, rng));
    const ag::Var b(testing::random_tensor(Shape{2, 3, 3, 3}, rng));
    const double transport = value(sb_transport(a, b));
    CHECK(transport >= 0.0);
    CHECK(value(sb_loss(a, b, 1.0, 0.01, filled(Shape{1, 1, 1, 1}, mi(rng)))) == transport);
  }
}

TEST_CASE("gaussian window") {
  const auto w = gaussian_window(11, 1.5);
  REQUIRE(w.size() == 11);
  double sum = 0.0;
  for (double v : w) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(w[5] > w[4]);
  CHECK(w[0] == doctest::Approx(w[10]).epsilon(1e-15));
  CHECK(w[4] / w[5] == doctest::Approx(std::exp(-1.0 / (2 * 2.25))).epsilon(1e-12));
}

TEST_CASE("ssim self-similarity is exactly 1") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = testing::random_tensor(Shape{2, 3, 44, 47}, rng);
    CHECK(ssim_index(a, a, SsimOptions{}) == 1.0);
    CHECK(ssim_index(a, a, options(7, 2, 2.0)) == 1.0);
  }
}

TEST_CASE("ssim matches the independent reference implementation") {
  using namespace cunsb::testref;
  {
    auto [a, b] = testing::u8_pair(77, Shape{2, 2, 48, 48}, 40);
    CHECK(ssim_index(testing::scaled(a, -1, 1), testing::scaled(b, -1, 1), options(11, 3, 2.0)) ==
          doctest::Approx(kMsSsim3).epsilon(1e-9));
  }
  {
    auto [a, b] = testing::u8_pair(78, Shape{1, 3, 28, 28}, 60);
    CHECK(ssim_index(testing::scaled(a, -1, 1), testing::scaled(b, -1, 1), options(7, 2, 2.0)) ==
          doctest::Approx(kMsSsim2Window7).epsilon(1e-9));
  }
  {
    auto [a, b] = testing::u8_pair(79, Shape{1, 1, 24, 30}, 50);
    CHECK(ssim_index(testing::scaled(a, -1, 1), testing::scaled(b, -1, 1), options(11, 1, 2.0)) ==
          doctest::Approx(kSsim1Window11).epsilon(1e-9));
  }
}

TEST_CASE("ssim of a checkerboard against its inverse") {
  Tensor a(Shape{1, 1, 32, 32});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) a.at(0, 0, y, x) = (x + y) % 2;
  Tensor inv = a;
  for (double& v : inv.values()) v = 1.0 - v;
  const double single = ssim_index(a, inv, options(11, 1, 1.0));
  CHECK(single == doctest::Approx(testref::kCheckerboardSsim).epsilon(1e-9));
  CHECK(single < 0.2);
  // 4-pixel cells survive two rounds of 2x2 pooling
  Tensor big(Shape{1, 1, 64, 64});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) big.at(0, 0, y, x) = (x / 4 + y / 4) % 2;
  Tensor big_inv = big;
  for (double& v : big_inv.values()) v = 1.0 - v;
  CHECK(ssim_index(big, big_inv, options(11, 3, 1.0)) < 0.2);
}

TEST_CASE("ssim is symmetric and bounded (property)") {
  Rng rng(4);
  std::uniform_int_distribution<int> scales(1, 3);
  for (int trial = 0; trial < 40; ++trial) {
    const int sc = scales(rng);
    const int side = 5 << (sc - 1);
    const Shape s{1 + trial % 2, 1 + trial % 3, side + trial % 4, side + trial % 5};
    const Tensor a = testing::random_tensor(s, rng);
    Tensor b = trial % 3 == 0 ? testing::random_tensor(s, rng) : a + testing::random_tensor(s, rng, -0.3, 0.3);
    const SsimOptions o = options(5, sc, 2.0);
    const double ab = ssim_index(a, b, o);
    CHECK(ab == doctest::Approx(ssim_index(b, a, o)).epsilon(1e-9));
    CHECK(ab <= 1.0);
    CHECK(ab >= -1.0);
  }
}

TEST_CASE("ssim rejects images that are too small or mismatched") {
  CHECK_THROWS_AS(ssim_index(Tensor(Shape{1, 1, 43, 60}), Tensor(Shape{1, 1, 43, 60}), SsimOptions{}),
                  std::invalid_argument);
  CHECK_NOTHROW(ssim_index(Tensor(Shape{1, 1, 44, 44}), Tensor(Shape{1, 1, 44, 44}), SsimOptions{}));
  CHECK_THROWS_AS(ssim_index(Tensor(Shape{1, 1, 44, 44}), Tensor(Shape{1, 2, 44, 44}), SsimOptions{}),
                  std::invalid_argument);
  CHECK_THROWS_AS(options(11, 6, 2.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(options(10, 1, 2.0).validate(), std::invalid_argument);
}

TEST_CASE("ssim regularisation averages the two terms") {
  Rng rng(5);
  const SsimOptions o = options(7, 2, 2.0);
  const Shape s{2, 3, 14, 14};
  const ag::Var a(testing::random_tensor(s, rng));
  const ag::Var b(testing::random_tensor(s, rng));
  const ag::Var c(a.value() + testing::random_tensor(s, rng, -0.2, 0.2));
  const SsimTerms same = ssim_regularization(a, a, b, b, o);
  CHECK(value(same.gen) == 0.0);
  CHECK(value(same.idt) == 0.0);
  CHECK(value(same.combined) == 0.0);
  const double s_ac = ssim_index(a.value(), c.value(), o);
  const SsimTerms one = ssim_regularization(b, b, a, c, o);
  CHECK(value(one.idt) == doctest::Approx(1.0 - s_ac).epsilon(1e-12));
  CHECK(value(one.combined) == doctest::Approx((1.0 - s_ac) / 2.0).epsilon(1e-12));
}

TEST_CASE("patch ids are distinct, in range and reproducible") {
  Rng rng(6);
  std::vector<ag::Var> feats;
  for (int l = 0; l < 9; ++l) feats.emplace_back(Tensor(Shape{2, 3, 4 + l % 2, 4}));
  Rng a(9), b(9);
  const auto ids = sample_patch_ids(feats, 16, a);
  CHECK(ids == sample_patch_ids(feats, 16, b));
  REQUIRE(ids.size() == 9);
  for (std::size_t l = 0; l < 9; ++l) {
    std::set<int> uniq(ids[l].begin(), ids[l].end());
    CHECK(uniq.size() == 16);
    CHECK(*uniq.begin() >= 0);
    CHECK(*uniq.rbegin() < static_cast<int>(feats[l].shape().plane()));
  }
  CHECK_THROWS_AS(sample_patch_ids(feats, 17, a), std::invalid_argument);
}

namespace {

struct NceFixture {
  std::vector<int> widths{4, 4, 4, 8, 8, 8, 8, 8, 8};
  Rng init{11};
  net::ProjectionHeadSet heads{widths, 256, init};
  std::vector<ag::Var> random_features(Rng& rng, int side) const {
    std::vector<ag::Var> f;
    for (int w : widths) f.emplace_back(testing::random_tensor(Shape{2, w, side, side}, rng));
    return f;
  }
};

}  // namespace

TEST_CASE("patchnce examples") {
  NceFixture fx;
  Rng rng(12);
  const auto src = fx.random_features(rng, 8);
  const double same = value(patchnce_loss(src, src, fx.heads, 0.07, 16, rng));
  CHECK(same < std::log(16.0));

  CHECK(value(patchnce_loss(src, fx.random_features(rng, 8), fx.heads, 0.07, 1, rng)) == 0.0);

  // spatially constant features give identical rows, hence uniform logits
  std::vector<ag::Var> flat_src, flat_gen;
  for (int w : fx.widths) {
    Tensor a(Shape{2, w, 8, 8}), b(Shape{2, w, 8, 8});
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < w; ++c) {
        const double va = std::uniform_real_distribution<double>(-1, 1)(rng);
        const double vb = std::uniform_real_distribution<double>(-1, 1)(rng);
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            a.at(n, c, y, x) = va;
            b.at(n, c, y, x) = vb;
          }
      }
    flat_src.emplace_back(a);
    flat_gen.emplace_back(b);
  }
  CHECK(value(patchnce_loss(flat_src, flat_gen, fx.heads, 0.07, 64, rng)) ==
        doctest::Approx(std::log(64.0)).epsilon(1e-9));

  double soft = 0.0, sharp = 0.0;
  for (int seed = 0; seed < 5; ++seed) {
    Rng r(100 + seed);
    const auto a = fx.random_features(r, 8);
    const auto b = fx.random_features(r, 8);
    const auto ids = sample_patch_ids(a, 64, r);
    soft += value(patchnce_loss(a, b, fx.heads, 10.0, ids)) / 5;
    sharp += value(patchnce_loss(a, b, fx.heads, 0.07, ids)) / 5;
  }
  CHECK(std::abs(soft - std::log(64.0)) < 0.02 * std::log(64.0));
  // logit spread only adds to the uniform value
  CHECK(sharp > std::log(64.0));

  CHECK_THROWS_AS(patchnce_loss(src, src, fx.heads, 0.07, 65, rng), std::invalid_argument);
  std::vector<ag::Var> short_list(src.begin(), src.begin() + 8);
  CHECK_THROWS_AS(patchnce_loss(short_list, short_list, fx.heads, 0.07, 4, rng), std::invalid_argument);
}

TEST_CASE("patchnce decreases with alignment and ignores a common permutation of ids") {
  NceFixture fx;
  Rng rng(13);
  const auto src = fx.random_features(rng, 6);
  const auto noise = fx.random_features(rng, 6);
  const auto ids = sample_patch_ids(src, 12, rng);
  double previous = 1e9;
  for (double mix : {1.0, 0.6, 0.3, 0.0}) {
    std::vector<ag::Var> gen;
    for (std::size_t l = 0; l < 9; ++l) gen.emplace_back(src[l].value() * (1 - mix) + noise[l].value() * mix);
    const double v = value(patchnce_loss(src, gen, fx.heads, 0.07, ids));
    CHECK(v < previous);
    previous = v;
  }
  auto permuted = ids;
  for (auto& layer : permuted) std::reverse(layer.begin(), layer.end());
  CHECK(value(patchnce_loss(src, noise, fx.heads, 0.07, permuted)) ==
        doctest::Approx(value(patchnce_loss(src, noise, fx.heads, 0.07, ids))).epsilon(1e-12));
}

TEST_CASE("patchnce keys are detached") {
  NceFixture fx;
  Rng rng(14);
  std::vector<ag::Var> src, gen;
  for (int w : fx.widths) {
    src.emplace_back(testing::random_tensor(Shape{1, w, 4, 4}, rng), true);
    gen.emplace_back(testing::random_tensor(Shape{1, w, 4, 4}, rng), true);
  }
  ag::backward(patchnce_loss(src, gen, fx.heads, 0.07, 8, rng));
  for (const auto& s : src) CHECK(s.grad().empty());
  for (const auto& g : gen) CHECK_FALSE(g.grad().empty());
}

TEST_CASE("total loss composition") {
  const LossWeights w;
  CHECK(total_loss(LossParts{}, w, 0.4, 0.01).total == 0.0);
  LossParts ones;
  ones.adv = ones.sb_transport = ones.ssim_gen = ones.ssim_idt = ones.patchnce = 1.0;
  CHECK(total_loss(ones, w, 0.2, 0.01).total == doctest::Approx(3.8).epsilon(1e-12));

  LossParts p;
  p.adv = 0.7;
  p.sb_transport = 0.3;
  p.sb_entropy = 1.5;
  p.ssim_gen = 0.2;
  p.ssim_idt = 0.1;
  p.patchnce = 2.5;
  LossWeights doubled = w;
  doubled.lambda_p *= 2;
  CHECK(total_loss(p, doubled, 0.4, 0.01).total - total_loss(p, w, 0.4, 0.01).total ==
        doctest::Approx(p.patchnce).epsilon(1e-12));
  const LossWeights zero{0.0, 0.0, 0.0};
  CHECK(total_loss(p, zero, 0.4, 0.01).total == p.adv);
}

TEST_CASE("total loss reconstructs from its components (property)") {
  Rng rng(15);
  std::uniform_real_distribution<double> u(-3.0, 3.0), t(0.0, 1.0);
  const LossWeights w;
  for (int trial = 0; trial < 500; ++trial) {
    LossParts p{u(rng), std::abs(u(rng)), u(rng), std::abs(u(rng)), std::abs(u(rng)), std::abs(u(rng))};
    const double ti = t(rng);
    const LossReport r = total_loss(p, w, ti, 0.01);
    const double expect = r.adv + 1.0 * (r.sb_transport - 2 * 0.01 * (1 - ti) * r.sb_entropy) +
                          0.8 * (r.ssim_gen + r.ssim_idt) / 2 + 1.0 * r.patchnce;
    CHECK(std::abs(r.total - expect) < 1e-6);
  }
}

TEST_CASE("loss gradients match finite differences on tiny networks") {
  CHECK(testing::check_adversarial_gradients(20, 1, 1e-2).all_passed());
  CHECK(testing::check_sb_gradients(20, 2, 1e-2).all_passed());
  CHECK(testing::check_ssim_gradients(20, 3, 1e-2).all_passed());
  CHECK(testing::check_patchnce_gradients(20, 4, 1e-2).all_passed());
}
