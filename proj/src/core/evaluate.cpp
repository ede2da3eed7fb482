#include "cunsb/evaluate.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "cunsb/error.hpp"
#include "cunsb/losses.hpp"
#include "cunsb/text.hpp"

namespace cunsb::eval {

namespace fs = std::filesystem;

double psnr(const Tensor& a, const Tensor& b, double data_range) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("psnr: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  if (!(data_range > 0.0)) throw std::invalid_argument("psnr: data_range must be positive");
  if (a.empty()) throw std::invalid_argument("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const Tensor& a, const Tensor& b, double data_range) {
  loss::SsimOptions o;
  o.window = 11;
  o.scales = 1;
  o.sigma = 1.5;
  o.data_range = data_range;
  return loss::ssim_index(a, b, o);
}

bool parse_step_suffix(const std::string& stem, std::string& id, int& step) {
  const auto pos = stem.rfind("_step");
  if (pos == std::string::npos || pos == 0 || pos + 5 >= stem.size() || stem.size() - pos - 5 > 9) return false;
  const std::string digits = stem.substr(pos + 5);
  if (!std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) return false;
  id = stem.substr(0, pos);
  step = std::stoi(digits);
  return true;
}

namespace {

SummaryRow stats(int step, const std::string& metric, const std::vector<double>& v) {
  SummaryRow r;
  r.step_index = step;
  r.metric = metric;
  r.count = static_cast<int>(v.size());
  if (v.empty()) return r;
  const auto infinite = std::count_if(v.begin(), v.end(), [](double x) { return std::isinf(x); });
  if (infinite > 0) {
    r.mean = std::numeric_limits<double>::infinity();
    r.std = infinite == static_cast<long>(v.size()) ? 0.0 : std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double sum = 0.0;
  for (double x : v) sum += x;
  r.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<MetricRecord>& records, bool per_step) {
  std::vector<SummaryRow> rows;
  const char* metrics[] = {"psnr", "ssim"};
  if (!per_step) {
    std::vector<double> p, s;
    for (const MetricRecord& r : records) {
      p.push_back(r.psnr);
      s.push_back(r.ssim);
    }
    rows.push_back(stats(-1, metrics[0], p));
    rows.push_back(stats(-1, metrics[1], s));
    return rows;
  }
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_step;
  for (const MetricRecord& r : records) {
    by_step[r.step_index].first.push_back(r.psnr);
    by_step[r.step_index].second.push_back(r.ssim);
  }
  for (const char* m : metrics) {
    for (const auto& [step, vals] : by_step) rows.push_back(stats(step, m, m[0] == 'p' ? vals.first : vals.second));
  }
  return rows;
}

std::string records_to_csv(const std::vector<MetricRecord>& records) {
  std::ostringstream o;
  o << "image_id,step,psnr,ssim\n";
  for (const MetricRecord& r : records) {
    o << r.image_id << ',' << r.step_index << ',' << text::format_double(r.psnr) << ',' << text::format_double(r.ssim)
      << '\n';
  }
  return o.str();
}

std::vector<MetricRecord> parse_records_csv(const std::string& content) {
  std::vector<MetricRecord> out;
  const auto lines = text::split(content, '\n');
  if (lines.empty() || text::trim(lines[0]) != "image_id,step,psnr,ssim") {
    throw std::invalid_argument("metrics csv: missing header");
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string_view line = text::trim(lines[i]);
    if (line.empty()) continue;
    const auto f = text::split(line, ',');
    if (f.size() != 4) throw std::invalid_argument("metrics csv: line " + std::to_string(i + 1) + " needs 4 fields");
    MetricRecord r;
    r.image_id = f[0];
    r.step_index = static_cast<int>(text::parse_int(f[1], "step"));
    r.psnr = text::parse_double(f[2], "psnr");
    r.ssim = text::parse_double(f[3], "ssim");
    out.push_back(r);
  }
  return out;
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream o;
  o << "step,metric,mean,std,count\n";
  for (const SummaryRow& r : rows) {
    o << (r.step_index < 0 ? std::string("all") : std::to_string(r.step_index)) << ',' << r.metric << ','
      << text::format_double(r.mean) << ',' << text::format_double(r.std) << ',' << r.count << '\n';
  }
  return o.str();
}

namespace {

struct Canvas {
  io::Image img;

  Canvas(int w, int h) : img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3, 255)} {}

  void dot(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(i));
  }

  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      dot(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  }

  void box(int x, int y, int half, std::array<std::uint8_t, 3> c) {
    for (int dy = -half; dy <= half; ++dy)
      for (int dx = -half; dx <= half; ++dx) dot(x + dx, y + dy, c);
  }
};

void panel(Canvas& cv, int x0, int y0, int w, int h, const std::vector<std::pair<int, double>>& pts,
           std::array<std::uint8_t, 3> color) {
  const std::array<std::uint8_t, 3> axis{40, 40, 40};
  const std::array<std::uint8_t, 3> grid{220, 220, 220};
  const int m = 20;
  const int left = x0 + m;
  const int right = x0 + w - m;
  const int top = y0 + m;
  const int bottom = y0 + h - m;
  for (int g = 1; g < 4; ++g) {
    const int y = top + (bottom - top) * g / 4;
    cv.line(left, y, right, y, grid);
  }
  cv.line(left, bottom, right, bottom, axis);
  cv.line(left, top, left, bottom, axis);
  std::vector<std::pair<int, double>> finite;
  for (const auto& p : pts) {
    if (std::isfinite(p.second)) finite.push_back(p);
  }
  if (finite.empty()) return;
  int smin = finite.front().first, smax = finite.front().first;
  double vmin = finite.front().second, vmax = vmin;
  for (const auto& [s, v] : finite) {
    smin = std::min(smin, s);
    smax = std::max(smax, s);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (vmax - vmin < 1e-12) {
    vmin -= 0.5;
    vmax += 0.5;
  }
  const auto px = [&](int s) { return smax == smin ? (left + right) / 2 : left + (right - left) * (s - smin) / (smax - smin); };
  const auto py = [&](double v) { return bottom - static_cast<int>(std::lround((bottom - top) * (v - vmin) / (vmax - vmin))); };
  for (int s = smin; s <= smax; ++s) cv.line(px(s), bottom, px(s), bottom + 4, axis);
  for (std::size_t i = 0; i < finite.size(); ++i) {
    if (i > 0) cv.line(px(finite[i - 1].first), py(finite[i - 1].second), px(finite[i].first), py(finite[i].second), color);
    cv.box(px(finite[i].first), py(finite[i].second), 2, color);
  }
}

}  // namespace

io::Image plot_metric_series(const std::vector<SummaryRow>& per_step, int width, int height) {
  if (width < 80 || height < 60) throw std::invalid_argument("plot too small");
  Canvas cv(width, height);
  std::vector<std::pair<int, double>> s, p;
  for (const SummaryRow& r : per_step) {
    if (r.step_index < 0) continue;
    (r.metric == "ssim" ? s : p).emplace_back(r.step_index, r.mean);
  }
  panel(cv, 0, 0, width / 2, height, s, {31, 119, 180});
  panel(cv, width / 2, 0, width - width / 2, height, p, {214, 39, 40});
  return cv.img;
}

EvalResult evaluate_dataset(const std::string& enhanced_dir, const std::string& ground_truth_dir,
                            const EvalOptions& options) {
  if (options.image_size < 11) throw UsageError("eval: image_size must be at least the SSIM window (11)");
  std::map<std::string, std::string> truth;
  for (const std::string& p : io::list_pngs(ground_truth_dir)) truth[io::stem(p)] = p;

  EvalResult result;
  std::map<std::string, Tensor> truth_cache;
  for (const std::string& p : io::list_pngs(enhanced_dir)) {
    const std::string st = io::stem(p);
    std::string id = st;
    int step = -1;
    if (options.per_step && !parse_step_suffix(st, id, step)) {
      ++result.skipped;
      result.skipped_files.push_back(p);
      continue;
    }
    const auto it = truth.find(id);
    if (it == truth.end()) {
      ++result.skipped;
      result.skipped_files.push_back(p);
      continue;
    }
    auto cached = truth_cache.find(id);
    if (cached == truth_cache.end()) {
      cached = truth_cache.emplace(id, io::to_unit_tensor(io::ingest(io::read_png(it->second), options.image_size))).first;
    }
    const Tensor enhanced = io::to_unit_tensor(io::ingest(io::read_png(p), options.image_size));
    if (!(enhanced.shape() == cached->second.shape())) {
      throw DataError("eval: channel mismatch between '" + p + "' and '" + it->second + "'");
    }
    MetricRecord r;
    r.image_id = id;
    r.step_index = step;
    r.psnr = psnr(enhanced, cached->second, 1.0);
    r.ssim = ssim(enhanced, cached->second, 1.0);
    result.records.push_back(r);
    ++result.processed;
  }
  if (result.processed == 0) {
    throw DataError("eval: empty dataset, no enhanced image in '" + enhanced_dir + "' matches an id in '" +
                    ground_truth_dir + "'");
  }
  std::sort(result.records.begin(), result.records.end(), [](const MetricRecord& a, const MetricRecord& b) {
    return std::tie(a.image_id, a.step_index) < std::tie(b.image_id, b.step_index);
  });
  result.overall = summarize(result.records, false);
  if (options.per_step) result.per_step = summarize(result.records, true);

  if (!options.output_dir.empty()) {
    fs::create_directories(options.output_dir);
    const fs::path out(options.output_dir);
    text::write_file((out / "metrics.csv").string(), records_to_csv(result.records));
    text::write_file((out / "overall.csv").string(), summary_to_csv(result.overall));
    if (options.per_step) {
      text::write_file((out / "summary.csv").string(), summary_to_csv(result.per_step));
      io::write_png((out / "metrics_per_step.png").string(), plot_metric_series(result.per_step));
    } else {
      text::write_file((out / "summary.csv").string(), summary_to_csv(result.overall));
    }
  }
  return result;
}

}  // namespace cunsb::eval
