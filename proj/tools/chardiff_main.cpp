#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "chardiff/commands.hpp"
#include "chardiff/errors.hpp"

using namespace chardiff;

namespace {

cli::RunConfig load_or_default(const std::string& path) {
  if (!path.empty()) return cli::load_config(path);
  if (const char* env = std::getenv("CHARDIFF_CONFIG")) return cli::load_config(env);
  return cli::default_config();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chardiff: character-guided diffusion restoration of license plates"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("-c,--config", config_path,
                 "run config file (default: $CHARDIFF_CONFIG or built-in paper profile)");

  uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-dataset", "render plates and write split manifests");
  gen->add_option("--seed", seed, "dataset seed");

  auto* deg = app.add_subcommand("degrade", "synthesize LQ counterparts for every record");

  auto* train = app.add_subcommand("train", "train the noise predictor");

  auto* restore = app.add_subcommand("restore", "run the reverse restoration sampler");
  std::string ckpt_path, input, restore_out = "restored", mode_name;
  uint64_t restore_seed = 0;
  bool dump_attn = false;
  restore->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  restore->add_option("input", input, "manifest (*.jsonl) or a single PGM/PPM image")->required();
  restore->add_option("--out", restore_out, "output directory");
  restore->add_option("--mode", mode_name, "sampler mode: ancestral|deterministic");
  restore->add_option("--seed", restore_seed, "sampling seed");
  restore->add_flag("--dump-attn", dump_attn, "write per-character attention heatmaps");

  auto* eval = app.add_subcommand("evaluate", "metrics over restored images");
  std::string eval_manifest, eval_dir, report_path = "report.jsonl";
  eval->add_option("manifest", eval_manifest, "manifest with labels")->required();
  eval->add_option("restored", eval_dir, "directory of restored images")->required();
  eval->add_option("--report", report_path, "report output path");

  auto* ablate = app.add_subcommand("ablate", "train and compare the four prior variants");
  std::vector<uint64_t> seeds = {0, 1, 2};
  int jobs = 0;
  std::string ablate_out = "ablate";
  ablate->add_option("--seeds", seeds, "seeds, one full experiment per seed");
  ablate->add_option("--jobs", jobs, "parallel runs (0 = hardware)");
  ablate->add_option("--out", ablate_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors are exit code 1, --help is 0
  }

  try {
    cli::RunConfig cfg = load_or_default(config_path);
    if (gen->parsed()) {
      auto res = cli::run_gen_dataset(cfg, seed);
      std::cout << "wrote " << res.train.size() << "/" << res.val.size() << "/"
                << res.test.size() << " train/val/test records to " << res.dir << "\n";
    } else if (deg->parsed()) {
      cli::run_degrade(cfg);
      std::cout << "degraded dataset in " << cfg.paths.data_dir << "\n";
    } else if (train->parsed()) {
      auto res = cli::run_train(cfg);
      std::cout << "checkpoint: " << res.checkpoint_path << "\n";
      if (!res.losses.empty())
        std::cout << "final loss: " << res.losses.back() << " over " << res.losses.size()
                  << " steps\n";
    } else if (restore->parsed()) {
      cli::RestoreFlags flags;
      if (!mode_name.empty()) flags.mode = diffusion::sampler_mode_from_string(mode_name);
      flags.seed = restore_seed;
      flags.dump_attn = dump_attn;
      flags.out_dir = restore_out;
      int n = cli::run_restore(ckpt_path, input, flags);
      std::cout << "restored " << n << " image(s) into " << restore_out << "\n";
    } else if (eval->parsed()) {
      auto report = cli::run_evaluate(cfg, eval_manifest, eval_dir, report_path);
      metrics::print_report(report, std::cout);
    } else if (ablate->parsed()) {
      cli::AblateOptions opts;
      opts.seeds = seeds;
      opts.jobs = jobs;
      opts.out_dir = ablate_out;
      auto result = cli::run_ablate(cfg, opts);
      cli::print_ablate_table(result, std::cout);
      cli::write_ablate_report(result, ablate_out + "/ablate_report.jsonl");
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
