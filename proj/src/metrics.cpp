#include "chardiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include <json.hpp>

#include "chardiff/errors.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace chardiff::metrics {

double psnr(const std::vector<float>& a, const std::vector<float>& b, double maxval) {
  if (a.size() != b.size()) throw ShapeError("psnr: size mismatch");
  if (a.empty()) throw ShapeError("psnr: empty input");
  if (maxval <= 0) throw ShapeError("psnr: maxval must be positive");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(maxval * maxval / mse));
}

double psnr(const Image& a, const Image& b, double maxval) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ShapeError("psnr: image shapes differ");
  return psnr(to_float(a), to_float(b), maxval);
}

namespace {

constexpr int kWin = 11;

const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> k(kWin * kWin);
    double sigma = 1.5, sum = 0;
    for (int y = 0; y < kWin; ++y)
      for (int x = 0; x < kWin; ++x) {
        double dx = x - kWin / 2, dy = y - kWin / 2;
        k[static_cast<size_t>(y) * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        sum += k[static_cast<size_t>(y) * kWin + x];
      }
    for (auto& v : k) v /= sum;
    return k;
  }();
  return w;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ShapeError("ssim: image shapes differ");
  if (a.width < kWin || a.height < kWin)
    throw ShapeError("ssim: image smaller than the 11x11 window");
  const auto& win = ssim_window();
  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  double total = 0;
  long count = 0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y + kWin <= a.height; ++y)
      for (int x = 0; x + kWin <= a.width; ++x) {
        double mx = 0, my = 0;
        for (int wy = 0; wy < kWin; ++wy)
          for (int wx = 0; wx < kWin; ++wx) {
            double wv = win[static_cast<size_t>(wy) * kWin + wx];
            mx += wv * a.at(x + wx, y + wy, c);
            my += wv * b.at(x + wx, y + wy, c);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int wy = 0; wy < kWin; ++wy)
          for (int wx = 0; wx < kWin; ++wx) {
            double wv = win[static_cast<size_t>(wy) * kWin + wx];
            double da = a.at(x + wx, y + wy, c) - mx;
            double db = b.at(x + wx, y + wy, c) - my;
            vx += wv * da * da;
            vy += wv * db * db;
            cov += wv * da * db;
          }
        total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double cer(const std::string& pred, const std::string& gt) {
  if (gt.empty()) throw ShapeError("cer: ground truth must be non-empty");
  return static_cast<double>(levenshtein(pred, gt)) / static_cast<double>(gt.size());
}

MetricReport evaluate_run(const plates::Manifest& manifest, const std::string& manifest_dir,
                          const std::string& restored_dir, const Recognizer& recognizer) {
  MetricReport report;
  double sum_cer = 0, sum_psnr = 0, sum_ssim = 0;
  long n_exact = 0, n_quality = 0;
  for (const auto& rec : manifest) {
    fs::path restored_path = fs::path(restored_dir) / (rec.id + ".pgm");
    if (!fs::exists(restored_path)) {
      fs::path alt = fs::path(restored_dir) / (rec.id + ".ppm");
      if (fs::exists(alt)) restored_path = alt;
    }
    try {
      Image restored = read_image(restored_path.string());
      SampleMetrics m;
      m.id = rec.id;
      m.pred = recognizer(restored);
      m.cer = cer(m.pred, rec.label);
      m.exact = m.pred == rec.label;
      if (rec.hq_path) {
        Image hq = read_image((fs::path(manifest_dir) / *rec.hq_path).string());
        m.psnr = psnr(hq, restored);
        m.ssim = ssim(hq, restored);
        sum_psnr += *m.psnr;
        sum_ssim += *m.ssim;
        ++n_quality;
      }
      sum_cer += m.cer;
      if (m.exact) ++n_exact;
      report.samples.push_back(std::move(m));
    } catch (const std::exception& e) {
      report.errors.push_back({rec.id, e.what()});
    }
  }
  if (!report.samples.empty()) {
    auto n = static_cast<double>(report.samples.size());
    report.mean_cer = sum_cer / n;
    report.lpr_accuracy = static_cast<double>(n_exact) / n;
    if (n_quality > 0) {
      report.mean_psnr = sum_psnr / static_cast<double>(n_quality);
      report.mean_ssim = sum_ssim / static_cast<double>(n_quality);
    }
  }
  return report;
}

void write_report(const MetricReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write report " + path);
  for (const auto& m : report.samples) {
    ordered_json j;
    j["id"] = m.id;
    j["pred"] = m.pred;
    j["cer"] = m.cer;
    j["exact"] = m.exact;
    if (m.psnr) j["psnr"] = *m.psnr;
    if (m.ssim) j["ssim"] = *m.ssim;
    out << j.dump() << "\n";
  }
  for (const auto& e : report.errors) {
    ordered_json j;
    j["id"] = e.id;
    j["error"] = e.message;
    out << j.dump() << "\n";
  }
  ordered_json agg;
  agg["aggregate"] = true;
  agg["samples"] = report.samples.size();
  agg["errors"] = report.errors.size();
  agg["mean_cer"] = report.mean_cer;
  agg["lpr_accuracy"] = report.lpr_accuracy;
  if (report.mean_psnr) agg["mean_psnr"] = *report.mean_psnr;
  if (report.mean_ssim) agg["mean_ssim"] = *report.mean_ssim;
  out << agg.dump() << "\n";
}

void print_report(const MetricReport& report, std::ostream& os) {
  os << std::left << std::setw(10) << "id" << std::setw(10) << "pred" << std::right
     << std::setw(8) << "cer" << std::setw(7) << "exact";
  bool quality = report.mean_psnr.has_value();
  if (quality) os << std::setw(9) << "psnr" << std::setw(9) << "ssim";
  os << "\n";
  for (const auto& m : report.samples) {
    os << std::left << std::setw(10) << m.id << std::setw(10) << m.pred << std::right
       << std::setw(8) << std::fixed << std::setprecision(3) << m.cer << std::setw(7)
       << (m.exact ? "yes" : "no");
    if (m.psnr) os << std::setw(9) << std::setprecision(2) << *m.psnr;
    if (m.ssim) os << std::setw(9) << std::setprecision(4) << *m.ssim;
    os << "\n";
  }
  for (const auto& e : report.errors) os << e.id << "  ERROR: " << e.message << "\n";
  os << "samples " << report.samples.size() << "  errors " << report.errors.size()
     << "  mean_cer " << std::setprecision(4) << report.mean_cer << "  lpr_acc "
     << report.lpr_accuracy;
  if (report.mean_psnr) os << "  mean_psnr " << std::setprecision(2) << *report.mean_psnr;
  if (report.mean_ssim) os << "  mean_ssim " << std::setprecision(4) << *report.mean_ssim;
  os << "\n";
}

}  // namespace chardiff::metrics
