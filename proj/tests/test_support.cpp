#include <cmath>
#include <filesystem>
#include <limits>

#include "cunsb/config.hpp"
#include "cunsb/error.hpp"
#include "cunsb/image_io.hpp"
#include "cunsb/text.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cunsb;
namespace fs = std::filesystem;

namespace {

io::Image gradient_image(int w, int h, int ch) {
  io::Image im{w, h, ch, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * ch)};
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int k = 0; k < ch; ++k)
        im.pixels[(static_cast<std::size_t>(r) * w + c) * ch + k] = static_cast<std::uint8_t>((r * 13 + c * 7 + k * 50) % 256);
  return im;
}

}  // namespace

TEST_CASE("format_double round trips (property)") {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  std::uniform_int_distribution<int> ex(-300, 300);
  for (int i = 0; i < 2000; ++i) {
    const double v = i % 2 ? u(rng) : std::ldexp(u(rng), ex(rng));
    CHECK(text::parse_double(text::format_double(v), "v") == v);
  }
  CHECK(text::format_double(0.1) == "0.1");
  CHECK(text::format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(std::isinf(text::parse_double("-inf", "v")));
}

TEST_CASE("scalar parsers reject malformed input") {
  CHECK(text::parse_int(" 42 ", "n") == 42);
  CHECK(text::parse_u64("18446744073709551615", "n") == 18446744073709551615ull);
  CHECK(text::parse_bool("on", "b"));
  CHECK_FALSE(text::parse_bool("0", "b"));
  CHECK_THROWS_AS(text::parse_int("4x", "n"), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_u64("-1", "n"), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_double("", "x"), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_bool("maybe", "b"), std::invalid_argument);
  try {
    text::parse_double("abc", "learning_rate");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
}

TEST_CASE("split and trim") {
  CHECK(text::split("a,,b", ',') == std::vector<std::string>{"a", "", "b"});
  CHECK(text::split("", ',') == std::vector<std::string>{""});
  CHECK(text::split_whitespace("  x \t y\n") == std::vector<std::string>{"x", "y"});
  CHECK(text::trim("\t a b \r\n") == "a b");
}

TEST_CASE("key-value parsing") {
  const auto kv = text::parse_key_values("# comment\nepochs = 3\n\n tau=0.02 # trailing\n", "cfg");
  CHECK(kv.size() == 2);
  CHECK(kv.at("epochs") == "3");
  CHECK(kv.at("tau") == "0.02");
  CHECK_THROWS_AS(text::parse_key_values("a=1\na=2\n", "cfg"), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_key_values("novalue\n", "cfg"), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_key_values("=1\n", "cfg"), std::invalid_argument);
}

TEST_CASE("PNG round trip for RGB and gray") {
  const auto dir = testing::temp_dir("png");
  for (int ch : {1, 3}) {
    const io::Image im = gradient_image(17, 9, ch);
    const std::string path = (dir / ("im" + std::to_string(ch) + ".png")).string();
    io::write_png(path, im);
    const io::Image back = io::read_png(path);
    CHECK(back.width == 17);
    CHECK(back.height == 9);
    CHECK(back.channels == ch);
    CHECK(back.pixels == im.pixels);
  }
  text::write_file((dir / "broken.png").string(), "not a png");
  CHECK_THROWS_AS(io::read_png((dir / "broken.png").string()), DataError);
  CHECK_THROWS_AS(io::read_png((dir / "missing.png").string()), DataError);
  CHECK_THROWS_AS(io::write_png((dir / "x.png").string(), io::Image{2, 2, 2, std::vector<std::uint8_t>(8)}),
                  std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("tensor conversion") {
  const io::Image im = gradient_image(6, 5, 3);
  const Tensor t = io::to_tensor(im);
  CHECK(t.shape() == Shape{1, 3, 5, 6});
  CHECK(t.at(0, 2, 1, 3) == doctest::Approx(2.0 * im.at(1, 3, 2) / 255.0 - 1.0));
  CHECK(io::to_unit_tensor(im).at(0, 0, 4, 5) == doctest::Approx(im.at(4, 5, 0) / 255.0));
  CHECK(io::to_image(t).pixels == im.pixels);
  Tensor wild(Shape{1, 1, 1, 3});
  wild[0] = -3.0;
  wild[1] = 0.0;
  wild[2] = 7.0;
  const io::Image clamped = io::to_image(wild);
  CHECK(clamped.pixels == std::vector<std::uint8_t>{0, 128, 255});
  CHECK_THROWS_AS(io::to_image(Tensor(Shape{2, 3, 2, 2})), std::invalid_argument);
}

TEST_CASE("center crop, resize and ingest") {
  const io::Image wide = gradient_image(10, 4, 3);
  const io::Image crop = io::center_crop(wide);
  CHECK(crop.width == 4);
  CHECK(crop.height == 4);
  CHECK(crop.at(0, 0, 1) == wide.at(0, 3, 1));
  CHECK(crop.at(3, 3, 2) == wide.at(3, 6, 2));

  // half-pixel bilinear at exactly 2x reduces to a 2x2 box mean
  const io::Image src = gradient_image(8, 6, 3);
  const io::Image half = io::resize(src, 4, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      for (int k = 0; k < 3; ++k) {
        const double mean = (src.at(2 * r, 2 * c, k) + src.at(2 * r, 2 * c + 1, k) + src.at(2 * r + 1, 2 * c, k) +
                             src.at(2 * r + 1, 2 * c + 1, k)) /
                            4.0;
        CHECK(std::abs(half.at(r, c, k) - mean) <= 0.5 + 1e-9);
      }

  io::Image flat{5, 7, 3, std::vector<std::uint8_t>(105, 77)};
  const io::Image big = io::resize(flat, 13, 11);
  for (auto p : big.pixels) CHECK(p == 77);

  const io::Image same = io::ingest(crop, 4);
  CHECK(same.pixels == crop.pixels);
  const io::Image in = io::ingest(wide, 8);
  CHECK(in.width == 8);
  CHECK(in.height == 8);
  CHECK_THROWS_AS(io::resize(flat, 0, 3), std::invalid_argument);
}

TEST_CASE("tile layout") {
  io::Image a{2, 2, 1, {1, 1, 1, 1}};
  io::Image b{2, 2, 1, {2, 2, 2, 2}};
  io::Image c{2, 2, 1, {3, 3, 3, 3}};
  const io::Image t = io::tile({a, b, c}, 2);
  CHECK(t.width == 4);
  CHECK(t.height == 4);
  CHECK(t.at(0, 0, 0) == 1);
  CHECK(t.at(1, 3, 0) == 2);
  CHECK(t.at(2, 1, 0) == 3);
  CHECK(t.at(3, 3, 0) == 0);
  CHECK_THROWS_AS(io::tile({a, io::Image{3, 2, 1, std::vector<std::uint8_t>(6)}}, 2), std::invalid_argument);
}

TEST_CASE("png listing and stems") {
  const auto dir = testing::temp_dir("list");
  const io::Image im = gradient_image(3, 3, 3);
  io::write_png((dir / "b.png").string(), im);
  io::write_png((dir / "a.PNG").string(), im);
  text::write_file((dir / "notes.txt").string(), "x");
  fs::create_directories(dir / "sub.png");
  const auto files = io::list_pngs(dir.string());
  REQUIRE(files.size() == 2);
  CHECK(io::stem(files[0]) == "a");
  CHECK(io::stem(files[1]) == "b");
  CHECK_THROWS_AS(io::list_pngs((dir / "nope").string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("config files") {
  const auto dir = testing::temp_dir("cfg");
  const std::string path = (dir / "train.cfg").string();
  text::write_file(path,
                   "epochs = 12\ndecay_start_epoch = 4\ntau = 0.05\nnum_steps = 3\nlambda_s = 0.5\n"
                   "generator.base_channels = 16\ndegrade.blur_sigma = 0.2,0.9\ndegrade.spot_count = 0,2\n"
                   "degrade.spots = false\nseed = 8\n");
  const config::FullConfig c = config::load_file(path);
  CHECK(c.train.epochs == 12);
  CHECK(c.train.bridge.tau == 0.05);
  CHECK(c.train.bridge.num_steps == 3);
  CHECK(c.train.generator.num_time_steps == 3);
  CHECK(c.train.weights.lambda_s == 0.5);
  CHECK(c.train.generator.base_channels == 16);
  CHECK(c.degrade.blur_sigma.lo == 0.2);
  CHECK(c.degrade.spot_count.hi == 2);
  CHECK_FALSE(c.degrade.spots);
  CHECK(c.train.seed == 8);

  const auto keys = config::to_key_values(config::FullConfig{});
  CHECK(keys.count("learning_rate") == 1);
  CHECK(keys.count("degrade.gamma") == 1);
  for (const auto& k : config::architecture_keys()) CHECK(keys.count(k) == 1);

  text::write_file(path, "epochs = 3\nbogus = 1\n");
  CHECK_THROWS_AS(config::load_file(path), UsageError);
  text::write_file(path, "epochs = 3\nepochs = 4\n");
  CHECK_THROWS_AS(config::load_file(path), UsageError);
  text::write_file(path, "degrade.blur_sigma = 0.3\n");
  CHECK_THROWS_AS(config::load_file(path), UsageError);
  CHECK_THROWS_AS(config::load_file((dir / "missing.cfg").string()), UsageError);
  fs::remove_all(dir);
}
