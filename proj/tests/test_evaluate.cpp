#include <cmath>
#include <filesystem>
#include <limits>

#include "cunsb/error.hpp"
#include "cunsb/evaluate.hpp"
#include "cunsb/image_io.hpp"
#include "cunsb/text.hpp"
#include "doctest.h"
#include "reference_values.hpp"
#include "test_util.hpp"

using namespace cunsb;
using namespace cunsb::eval;
namespace fs = std::filesystem;

namespace {

io::Image random_png(Rng& rng, int w, int h) {
  io::Image im{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  return im;
}

io::Image perturbed(const io::Image& im, Rng& rng, int amount) {
  io::Image out = im;
  for (auto& p : out.pixels) {
    const int v = p + static_cast<int>(rng() % static_cast<std::uint64_t>(2 * amount + 1)) - amount;
    p = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  }
  return out;
}

/// Five enhanced steps per id, each noisier than the previous.
void write_step_fixture(const fs::path& enh, const fs::path& truth, int ids) {
  fs::create_directories(enh);
  fs::create_directories(truth);
  Rng rng(5);
  for (int i = 0; i < ids; ++i) {
    const std::string id = "img" + std::to_string(i);
    const io::Image gt = random_png(rng, 24, 20);
    io::write_png((truth / (id + ".png")).string(), gt);
    for (int k = 0; k < 5; ++k) {
      io::write_png((enh / (id + "_step" + std::to_string(k) + ".png")).string(), perturbed(gt, rng, 4 + 6 * k));
    }
  }
}

}  // namespace

TEST_CASE("psnr examples") {
  Rng rng(1);
  const Tensor a = testing::random_tensor(Shape{1, 3, 5, 6}, rng, 0.0, 1.0);
  CHECK(std::isinf(psnr(a, a, 1.0)));
  CHECK(psnr(a, a, 1.0) > 0);
  CHECK(psnr(Tensor(Shape{1, 1, 4, 4}, 0.0), Tensor(Shape{1, 1, 4, 4}, 1.0), 1.0) == doctest::Approx(0.0));
  CHECK(psnr(Tensor(Shape{1, 3, 4, 4}, 0.3), Tensor(Shape{1, 3, 4, 4}, 0.4), 1.0) ==
        doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, Tensor(Shape{1, 3, 5, 5}), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(psnr(a, a, 0.0), std::invalid_argument);
}

TEST_CASE("psnr is symmetric and decreasing in the error (property)") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s{1, 3, 4 + trial % 5, 6};
    const Tensor a = testing::random_tensor(s, rng, 0.0, 1.0);
    const Tensor noise = testing::random_tensor(s, rng, -0.2, 0.2);
    const Tensor b = a + noise;
    const Tensor c = a + noise * 1.5;
    CHECK(psnr(a, b, 1.0) == doctest::Approx(psnr(b, a, 1.0)).epsilon(1e-14));
    CHECK(psnr(a, c, 1.0) < psnr(a, b, 1.0));
    CHECK(psnr(a, b, 1.0) >= 0.0);
  }
}

TEST_CASE("psnr and ssim match the independent reference on ten pairs") {
  for (int k = 0; k < 10; ++k) {
    const auto [a, b] = testing::metric_pair(k);
    CHECK(std::abs(psnr(a, b, 1.0) - testref::kMetricPairs[k].psnr) < 1e-6);
    CHECK(std::abs(ssim(a, b, 1.0) - testref::kMetricPairs[k].ssim) < 1e-4);
    CHECK(ssim(a, a, 1.0) == 1.0);
  }
}

TEST_CASE("ssim metric properties") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = testing::random_tensor(Shape{1, 3, 14, 15}, rng, 0.0, 1.0);
    const Tensor b = testing::random_tensor(Shape{1, 3, 14, 15}, rng, 0.0, 1.0);
    const double ab = ssim(a, b);
    CHECK(ab == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(ab >= -1.0);
    CHECK(ab <= 1.0);
    CHECK(ab < 0.5);
  }
  CHECK_THROWS_AS(ssim(Tensor(Shape{1, 3, 10, 20}), Tensor(Shape{1, 3, 10, 20})), std::invalid_argument);
}

TEST_CASE("identical directories give perfect scores") {
  const auto dir = testing::temp_dir("eval_same");
  Rng rng(4);
  for (int i = 0; i < 3; ++i) io::write_png((dir / ("x" + std::to_string(i) + ".png")).string(), random_png(rng, 30, 24));
  EvalOptions opt;
  opt.image_size = 16;
  const EvalResult r = evaluate_dataset(dir.string(), dir.string(), opt);
  CHECK(r.processed == 3);
  CHECK(r.skipped == 0);
  REQUIRE(r.overall.size() == 2);
  CHECK(std::isinf(r.overall[0].mean));
  CHECK(r.overall[0].std == 0.0);
  CHECK(r.overall[1].metric == "ssim");
  CHECK(r.overall[1].mean == 1.0);
  for (const auto& rec : r.records) CHECK(std::isinf(rec.psnr));
  fs::remove_all(dir);
}

TEST_CASE("per-step evaluation yields a five-row series per metric") {
  const auto dir = testing::temp_dir("eval_steps");
  write_step_fixture(dir / "enh", dir / "gt", 3);
  EvalOptions opt;
  opt.per_step = true;
  opt.image_size = 16;
  opt.output_dir = (dir / "out").string();
  const EvalResult r = evaluate_dataset((dir / "enh").string(), (dir / "gt").string(), opt);
  CHECK(r.processed == 15);
  REQUIRE(r.per_step.size() == 10);
  for (int k = 0; k < 5; ++k) {
    CHECK(r.per_step[static_cast<std::size_t>(k)].metric == "psnr");
    CHECK(r.per_step[static_cast<std::size_t>(k)].step_index == k);
    CHECK(r.per_step[static_cast<std::size_t>(k)].count == 3);
    CHECK(r.per_step[static_cast<std::size_t>(5 + k)].metric == "ssim");
  }
  // noisier steps score lower
  for (int k = 1; k < 5; ++k) {
    CHECK(r.per_step[static_cast<std::size_t>(k)].mean < r.per_step[static_cast<std::size_t>(k - 1)].mean);
    CHECK(r.per_step[static_cast<std::size_t>(5 + k)].mean < r.per_step[static_cast<std::size_t>(4 + k)].mean);
  }
  const auto summary = text::split(text::read_file((dir / "out" / "summary.csv").string()), '\n');
  int data_rows = 0;
  for (std::size_t i = 1; i < summary.size(); ++i)
    if (!text::trim(summary[i]).empty()) ++data_rows;
  CHECK(data_rows == 10);
  CHECK(fs::exists(dir / "out" / "metrics.csv"));
  CHECK(fs::exists(dir / "out" / "overall.csv"));
  const io::Image plot = io::read_png((dir / "out" / "metrics_per_step.png").string());
  CHECK(plot.width == 640);
  CHECK(parse_records_csv(text::read_file((dir / "out" / "metrics.csv").string())) == r.records);
  fs::remove_all(dir);
}

TEST_CASE("unmatched files are skipped and counted") {
  const auto dir = testing::temp_dir("eval_skip");
  write_step_fixture(dir / "enh", dir / "gt", 2);
  Rng rng(6);
  io::write_png((dir / "enh" / "orphan_step0.png").string(), random_png(rng, 20, 20));
  io::write_png((dir / "enh" / "nosuffix.png").string(), random_png(rng, 20, 20));
  EvalOptions opt;
  opt.per_step = true;
  opt.image_size = 16;
  const EvalResult r = evaluate_dataset((dir / "enh").string(), (dir / "gt").string(), opt);
  CHECK(r.processed == 10);
  CHECK(r.skipped == 2);
  CHECK(r.processed + r.skipped == static_cast<int>(io::list_pngs((dir / "enh").string()).size()));
  CHECK(r.skipped_files.size() == 2);

  fs::create_directories(dir / "other");
  io::write_png((dir / "other" / "zzz.png").string(), random_png(rng, 20, 20));
  CHECK_THROWS_AS(evaluate_dataset((dir / "other").string(), (dir / "gt").string(), EvalOptions{}), DataError);
  EvalOptions tiny;
  tiny.image_size = 8;
  CHECK_THROWS_AS(evaluate_dataset((dir / "enh").string(), (dir / "gt").string(), tiny), UsageError);
  fs::remove_all(dir);
}

TEST_CASE("metric CSV round trips exactly") {
  Rng rng(7);
  std::vector<MetricRecord> recs;
  std::uniform_real_distribution<double> u(0.0, 50.0);
  for (int i = 0; i < 30; ++i) recs.push_back({"id" + std::to_string(i), i % 6 - 1, u(rng), u(rng) / 50.0 - 0.3});
  recs.push_back({"same", 2, std::numeric_limits<double>::infinity(), 1.0});
  CHECK(parse_records_csv(records_to_csv(recs)) == recs);
  CHECK(records_to_csv(recs).find(",inf,") != std::string::npos);
  CHECK_THROWS(parse_records_csv("bad header\n"));
  CHECK_THROWS(parse_records_csv("image_id,step,psnr,ssim\na,1,2\n"));
}

TEST_CASE("summary statistics") {
  const std::vector<MetricRecord> recs{{"a", 0, 10.0, 0.5}, {"b", 0, 20.0, 0.7}, {"a", 1, 30.0, 0.1}};
  const auto all = summarize(recs, false);
  REQUIRE(all.size() == 2);
  CHECK(all[0].mean == doctest::Approx(20.0));
  CHECK(all[0].std == doctest::Approx(std::sqrt(200.0 / 3.0)));
  CHECK(all[0].count == 3);
  const auto steps = summarize(recs, true);
  REQUIRE(steps.size() == 4);
  CHECK(steps[0].step_index == 0);
  CHECK(steps[0].mean == doctest::Approx(15.0));
  CHECK(steps[3].metric == "ssim");
  CHECK(steps[3].mean == doctest::Approx(0.1));
  const auto mixed = summarize({{"a", -1, 10.0, 1.0}, {"b", -1, std::numeric_limits<double>::infinity(), 1.0}}, false);
  CHECK(std::isinf(mixed[0].mean));
  CHECK(std::isnan(mixed[0].std));
  CHECK(summary_to_csv(all).rfind("step,metric,mean,std,count\nall,psnr,20,", 0) == 0);
}

TEST_CASE("step suffix parsing") {
  std::string id;
  int step = -9;
  CHECK(parse_step_suffix("eye_12_step3", id, step));
  CHECK(id == "eye_12");
  CHECK(step == 3);
  CHECK(parse_step_suffix("a_step10", id, step));
  CHECK(step == 10);
  CHECK_FALSE(parse_step_suffix("plain", id, step));
  CHECK_FALSE(parse_step_suffix("a_stepx", id, step));
  CHECK_FALSE(parse_step_suffix("_step2", id, step));
}
