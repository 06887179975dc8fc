#pragma once

#include <array>
#include <string>

#include "chardiff/charprior.hpp"
#include "chardiff/degrade.hpp"
#include "chardiff/denoiser.hpp"
#include "chardiff/diffusion.hpp"
#include "chardiff/plates.hpp"

namespace chardiff::cli {

struct ScheduleConfig {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int S = 50;
  diffusion::SamplerMode sampler = diffusion::SamplerMode::ancestral;
};

struct TrainConfig {
  int steps = 100000;
  int batch = 64;
  double lr = 3e-4;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  int checkpoint_interval = 1000;
  charprior::SegmenterMode segmenter = charprior::SegmenterMode::projection;
};

struct PathsConfig {
  std::string data_dir = "data";
  std::string out_dir = "out";
};

// Whole-run configuration. Defaults are the paper-scale recipe (96x48,
// T=1000, S=50, batch 64, lr 3e-4, 100k steps); configs/desk.cfg ships the
// CI-scale profile.
struct RunConfig {
  plates::PlateStyle plates_style;
  int plate_count = 4000;
  std::array<int, 3> split{7, 2, 1};
  degrade::DegradeConfig degradation = degrade::DegradeConfig::defaults();
  denoiser::DenoiserConfig model;  // channels/vocab_size/max_timestep derived on load
  ScheduleConfig schedule;
  TrainConfig train;
  charprior::PriorMode prior_mode = charprior::PriorMode::charm;
  PathsConfig paths;

  // Propagates cross-section fields (channels, vocab size, T) and validates.
  void finalize();
};

RunConfig default_config();

// Strict parse: unknown keys and out-of-range values fail before any work,
// naming the offending key.
RunConfig load_config(const std::string& path);

std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& json_text);

}  // namespace chardiff::cli
