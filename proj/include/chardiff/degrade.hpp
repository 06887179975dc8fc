#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chardiff/image.hpp"
#include "chardiff/rng.hpp"

namespace chardiff::degrade {

enum class StageKind {
  perspective,
  contrast,
  motion_blur,
  gaussian_blur,
  resample,
  gaussian_noise,
  block_quantize,
};

StageKind stage_kind_from_string(const std::string& name);
std::string to_string(StageKind kind);

// One pipeline stage. [lo,hi] is the main parameter range (corner-jitter
// fraction, contrast factor, blur length/sigma, downscale factor, noise
// sigma, quantizer quality); [aux_lo,aux_hi] is the motion-blur angle range
// in degrees.
struct Stage {
  StageKind kind = StageKind::gaussian_noise;
  double probability = 1.0;
  double lo = 0.0, hi = 0.0;
  double aux_lo = 0.0, aux_hi = 0.0;
};

struct DegradeConfig {
  std::vector<Stage> stages;
  int orders = 2;  // pipeline passes

  void validate() const;  // throws UsageError

  // Calibrated so template OCR on degraded character crops lands in the
  // 60-90% accuracy band at desk scale.
  static DegradeConfig defaults();
};

// Stream seed of pipeline pass k for a run seeded with `seed`.
inline uint64_t pass_seed(uint64_t seed, int pass) {
  return pass == 0 ? seed : Rng::mix(seed, static_cast<uint64_t>(pass));
}

// Seeded low-quality synthesis. Output size always equals input size; each
// pass owns the stream Rng(pass_seed(seed, k)) and quantizes back to 8 bits,
// so an orders=N run equals N chained orders=1 runs.
Image degrade(const Image& img, const DegradeConfig& cfg, uint64_t seed);

// One pass over a float image in [0,255]; exposed for closed-form tests.
void apply_stages(std::vector<float>& data, int w, int h, int ch,
                  const std::vector<Stage>& stages, Rng& rng);

// Normalized kernel whose support is the rasterized centered line segment
// of the given length and angle. (cx,cy) is the anchor.
struct Kernel {
  int w = 0, h = 0;
  int cx = 0, cy = 0;
  std::vector<double> k;
  double at(int x, int y) const { return k[static_cast<size_t>(y) * w + x]; }
};

Kernel motion_blur_kernel(int length, double angle_deg);

}  // namespace chardiff::degrade
