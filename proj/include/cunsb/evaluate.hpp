#pragma once

// Image-quality metrics and paired dataset evaluation.

#include <string>
#include <vector>

#include "cunsb/image_io.hpp"
#include "cunsb/tensor.hpp"

namespace cunsb::eval {

/// 10 log10(data_range^2 / MSE). Returns +infinity when the images are equal.
double psnr(const Tensor& a, const Tensor& b, double data_range);

/// Single-scale SSIM, Gaussian window 11 with sigma 1.5, averaged over
/// channels and valid positions.
double ssim(const Tensor& a, const Tensor& b, double data_range = 1.0);

/// step_index is -1 for evaluations that are not per step.
struct MetricRecord {
  std::string image_id;
  int step_index = -1;
  double psnr = 0.0;
  double ssim = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

/// Population mean and std. When any value is infinite the mean is
/// infinite and std is 0 if all are, NaN otherwise.
struct SummaryRow {
  int step_index = -1;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  int count = 0;
};

struct EvalOptions {
  bool per_step = false;
  int image_size = 256;
  std::string output_dir;  // empty skips writing files
};

struct EvalResult {
  std::vector<MetricRecord> records;
  std::vector<SummaryRow> overall;   // one row per metric
  std::vector<SummaryRow> per_step;  // one row per metric and step
  int processed = 0;
  int skipped = 0;
  std::vector<std::string> skipped_files;
};

/// Matches enhanced images to ground truth by id. With per_step the
/// enhanced files are named <id>_step<k>.png; otherwise <id>.png. Both
/// sides are center-cropped and resized to image_size, metrics use [0, 1].
/// Enhanced files without a counterpart are skipped and counted. Throws
/// DataError when nothing matches.
EvalResult evaluate_dataset(const std::string& enhanced_dir, const std::string& ground_truth_dir,
                            const EvalOptions& options);

std::vector<SummaryRow> summarize(const std::vector<MetricRecord>& records, bool per_step);

std::string records_to_csv(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> parse_records_csv(const std::string& text);
std::string summary_to_csv(const std::vector<SummaryRow>& rows);

/// Two-panel line chart (SSIM left, PSNR right) of the mean per step.
io::Image plot_metric_series(const std::vector<SummaryRow>& per_step, int width = 640, int height = 240);

/// Splits "<id>_step<k>" into id and k. Returns false if the suffix is absent.
bool parse_step_suffix(const std::string& stem, std::string& id, int& step);

}  // namespace cunsb::eval
