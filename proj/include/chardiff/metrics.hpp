#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "chardiff/image.hpp"
#include "chardiff/plates.hpp"

namespace chardiff::metrics {

// 10*log10(maxval^2 / MSE); identical inputs report the 99 dB sentinel so
// aggregates stay finite.
inline constexpr double kPsnrCap = 99.0;

double psnr(const std::vector<float>& a, const std::vector<float>& b, double maxval = 255.0);
double psnr(const Image& a, const Image& b, double maxval = 255.0);

// Single-scale SSIM: 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
// L=255, averaged over valid window positions (and channels).
double ssim(const Image& a, const Image& b);

size_t levenshtein(const std::string& a, const std::string& b);

// Normalized edit distance; gt must be non-empty.
double cer(const std::string& pred, const std::string& gt);

struct SampleMetrics {
  std::string id;
  std::string pred;
  double cer = 0.0;
  bool exact = false;
  std::optional<double> psnr;  // present only when ground truth exists
  std::optional<double> ssim;
};

struct SampleError {
  std::string id;
  std::string message;
};

struct MetricReport {
  std::vector<SampleMetrics> samples;
  std::vector<SampleError> errors;
  double mean_cer = 0.0;
  double lpr_accuracy = 0.0;
  std::optional<double> mean_psnr;
  std::optional<double> mean_ssim;
};

using Recognizer = std::function<std::string(const Image&)>;

// Runs the frozen recognizer over restored_dir/<id>.pgm for every manifest
// record; PSNR/SSIM are filled in only where the manifest carries hq_path.
// Missing or unreadable files become error entries, the run continues.
MetricReport evaluate_run(const plates::Manifest& manifest, const std::string& manifest_dir,
                          const std::string& restored_dir, const Recognizer& recognizer);

void write_report(const MetricReport& report, const std::string& path);
void print_report(const MetricReport& report, std::ostream& os);

}  // namespace chardiff::metrics
