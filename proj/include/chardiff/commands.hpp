#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chardiff/config.hpp"
#include "chardiff/metrics.hpp"

namespace chardiff::cli {

// Library-level command bodies; the CLI binary wraps these and maps
// exceptions to exit codes. Everything is deterministic in the seeds it is
// handed.

plates::DatasetResult run_gen_dataset(const RunConfig& cfg, uint64_t seed);

// Adds lq/<id>.pgm next to every hq image and rewrites the manifests.
// Per-record degradation seeds derive from the record's render seed, so a
// rerun is byte-identical.
void run_degrade(const RunConfig& cfg);

struct TrainResult {
  std::string checkpoint_path;
  std::string trace_path;
  std::vector<double> losses;  // one entry per step
};

TrainResult run_train(const RunConfig& cfg);

struct RestoreFlags {
  std::optional<diffusion::SamplerMode> mode;  // default: checkpoint's sampler
  uint64_t seed = 0;
  bool dump_attn = false;
  std::string out_dir;
};

// `input` is a manifest (*.jsonl, restores every record's LQ image) or a
// single PGM/PPM path.
int run_restore(const std::string& checkpoint_path, const std::string& input,
                const RestoreFlags& flags);

metrics::MetricReport run_evaluate(const RunConfig& cfg, const std::string& manifest_path,
                                   const std::string& restored_dir,
                                   const std::string& report_path);

struct AblateOptions {
  std::vector<uint64_t> seeds = {0, 1, 2};
  int jobs = 0;  // 0 = hardware concurrency
  std::string out_dir;
};

struct AblateRow {
  std::string variant;
  uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double cer = 0, lpr_accuracy = 0;
  std::optional<double> psnr, ssim;
};

struct AblateResult {
  std::vector<AblateRow> rows;               // variant-major, Table-III row order
  std::vector<AblateRow> seed_averaged;      // one row per variant

  const AblateRow* averaged(const std::string& variant) const {
    for (const auto& r : seed_averaged)
      if (r.variant == variant) return &r;
    return nullptr;
  }
};

// Trains the four prior variants per seed on one shared dataset, restores
// the test split, evaluates, and tabulates. Independent (seed, variant)
// runs execute on a small worker pool; results are deterministic.
AblateResult run_ablate(const RunConfig& cfg, const AblateOptions& opts);

void print_ablate_table(const AblateResult& result, std::ostream& os);
void write_ablate_report(const AblateResult& result, const std::string& path);

}  // namespace chardiff::cli
