#include "chardiff/commands.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "chardiff/checkpoint.hpp"
#include "chardiff/degrade.hpp"
#include "chardiff/diffusion.hpp"
#include "chardiff/errors.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace chardiff::cli {

namespace {

constexpr uint64_t kDegradeSalt = 0x6465677261646533ull;
constexpr uint64_t kModelSalt = 0x6d6f64656c5f5f31ull;
constexpr uint64_t kTrainSalt = 0x747261696e5f5f31ull;
constexpr uint64_t kRestoreSalt = 0x726573746f726531ull;

void parallel_for(size_t count, int jobs, const std::function<void(size_t)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (jobs == 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

charprior::PriorExtractionConfig extraction_config(const RunConfig& cfg) {
  charprior::PriorExtractionConfig ex;
  ex.segmenter = cfg.train.segmenter;
  ex.feat_w = cfg.plates_style.width / cfg.model.downscale();
  ex.feat_h = cfg.plates_style.height / cfg.model.downscale();
  return ex;
}

}  // namespace

plates::DatasetResult run_gen_dataset(const RunConfig& cfg, uint64_t seed) {
  plates::DatasetConfig dc;
  dc.style = cfg.plates_style;
  dc.count = cfg.plate_count;
  dc.split = cfg.split;
  dc.out_dir = cfg.paths.data_dir;
  return plates::generate_dataset(dc, seed);
}

void run_degrade(const RunConfig& cfg) {
  fs::create_directories(fs::path(cfg.paths.data_dir) / "lq");
  for (const char* name : {"manifest_train.jsonl", "manifest_val.jsonl", "manifest_test.jsonl"}) {
    std::string mpath = (fs::path(cfg.paths.data_dir) / name).string();
    auto manifest = plates::read_manifest(mpath);
    for (auto& rec : manifest) {
      if (!rec.hq_path) throw DataError("degrade: record " + rec.id + " has no hq_path");
      Image hq = read_image((fs::path(cfg.paths.data_dir) / *rec.hq_path).string());
      Image lq = degrade::degrade(hq, cfg.degradation, Rng::mix(rec.seed, kDegradeSalt));
      std::string rel = "lq/" + rec.id + (hq.channels == 3 ? ".ppm" : ".pgm");
      write_image((fs::path(cfg.paths.data_dir) / rel).string(), lq);
      rec.lq_path = rel;
    }
    plates::write_manifest(mpath, manifest);
  }
}

TrainResult run_train(const RunConfig& cfg) {
  std::string mpath = (fs::path(cfg.paths.data_dir) / "manifest_train.jsonl").string();
  if (!fs::exists(mpath)) throw DataError("train: missing dataset manifest " + mpath);
  auto manifest = plates::read_manifest(mpath);
  if (manifest.empty()) throw DataError("train: empty training manifest");

  auto sched = diffusion::make_schedule(cfg.schedule.T, cfg.schedule.beta_start,
                                        cfg.schedule.beta_end, cfg.schedule.S);
  if (sched.tail_warning)
    std::cerr << "warning: alpha_bar(T) = " << sched.alpha_bar.back()
              << " >= 0.01; schedule may be too short for training\n";

  auto model = denoiser::DenoiserModel<float>::init(cfg.model, Rng::mix(cfg.train.seed, kModelSalt));
  charprior::TemplateOcr ocr(cfg.plates_style.vocab);
  auto ex = extraction_config(cfg);

  // preload the dataset; frozen detections are cached once
  std::vector<diffusion::TrainSample<float>> dataset;
  dataset.reserve(manifest.size());
  for (const auto& rec : manifest) {
    if (!rec.lq_path) throw DataError("train: record " + rec.id + " has no lq_path (run degrade)");
    Image hq = read_image((fs::path(cfg.paths.data_dir) / *rec.hq_path).string());
    Image lq = read_image((fs::path(cfg.paths.data_dir) / *rec.lq_path).string());
    diffusion::TrainSample<float> s;
    s.x0 = diffusion::to_model_range<float>(hq);
    s.x_lq = diffusion::to_model_range<float>(lq);
    if (cfg.prior_mode != charprior::PriorMode::none)
      s.detected = charprior::detect_chars(lq, ex, ocr, cfg.model.max_chars, &rec.boxes);
    dataset.push_back(std::move(s));
  }

  fs::create_directories(cfg.paths.out_dir);
  TrainResult result;
  result.checkpoint_path = (fs::path(cfg.paths.out_dir) / "checkpoint.chdf").string();
  result.trace_path = (fs::path(cfg.paths.out_dir) / "loss_trace.jsonl").string();
  std::ofstream trace(result.trace_path, std::ios::app);
  if (!trace) throw DataError("train: cannot write " + result.trace_path);

  Shape img_shape{cfg.model.channels, cfg.plates_style.height, cfg.plates_style.width};
  AdamW<float> opt({.lr = cfg.train.lr, .weight_decay = cfg.train.weight_decay});
  Rng stream(Rng::mix(cfg.train.seed, kTrainSalt));
  // snapshot describes the recipe, not where this run happens to live
  RunConfig snapshot_cfg = cfg;
  snapshot_cfg.paths = PathsConfig{};
  std::string config_snapshot = config_to_json(snapshot_cfg);

  for (int step = 0; step < cfg.train.steps; ++step) {
    std::vector<diffusion::TrainSample<float>> batch;
    batch.reserve(static_cast<size_t>(cfg.train.batch));
    for (int b = 0; b < cfg.train.batch; ++b)
      batch.push_back(dataset[static_cast<size_t>(stream.uniform_int(static_cast<int>(dataset.size())))]);
    auto loss = diffusion::training_loss(batch, model, sched, stream, img_shape);
    double loss_v = loss.item();
    loss.backward();
    opt.step(model.params);
    model.params.zero_grad();
    result.losses.push_back(loss_v);
    trace << "{\"step\":" << step << ",\"loss\":" << std::setprecision(10) << loss_v << "}\n";
    if ((step + 1) % cfg.train.checkpoint_interval == 0)
      save_checkpoint(result.checkpoint_path, config_snapshot, model.params);
  }
  trace.flush();
  save_checkpoint(result.checkpoint_path, config_snapshot, model.params);
  return result;
}

int run_restore(const std::string& checkpoint_path, const std::string& input,
                const RestoreFlags& flags) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  RunConfig cfg = config_from_json(ckpt.config_json);
  auto model = denoiser::DenoiserModel<float>::init(cfg.model, 0);
  apply_checkpoint(ckpt, model.params);

  auto sched = diffusion::make_schedule(cfg.schedule.T, cfg.schedule.beta_start,
                                        cfg.schedule.beta_end, cfg.schedule.S);
  diffusion::SamplerMode mode = flags.mode.value_or(cfg.schedule.sampler);
  charprior::TemplateOcr ocr(cfg.plates_style.vocab);
  auto ex = extraction_config(cfg);

  struct Item {
    std::string id;
    std::string path;
    std::vector<plates::Box> boxes;
  };
  std::vector<Item> items;
  std::string base_dir;
  if (input.size() > 6 && input.substr(input.size() - 6) == ".jsonl") {
    base_dir = fs::path(input).parent_path().string();
    for (const auto& rec : plates::read_manifest(input)) {
      if (!rec.lq_path) throw DataError("restore: record " + rec.id + " has no lq_path");
      items.push_back({rec.id, (fs::path(base_dir) / *rec.lq_path).string(), rec.boxes});
    }
  } else {
    items.push_back({fs::path(input).stem().string(), input, {}});
  }

  fs::create_directories(flags.out_dir);
  Shape img_shape{cfg.model.channels, cfg.plates_style.height, cfg.plates_style.width};

  parallel_for(items.size(), 0, [&](size_t i) {
    const Item& item = items[i];
    Image lq = read_image(item.path);
    if (lq.width != cfg.plates_style.width || lq.height != cfg.plates_style.height ||
        lq.channels != cfg.model.channels)
      throw DataError("restore: " + item.path + " does not match the checkpoint's image shape");

    auto priors = charprior::build_priors(
        lq, cfg.prior_mode, ex, ocr, model.encoder,
        ex.segmenter == charprior::SegmenterMode::oracle && !item.boxes.empty() ? &item.boxes
                                                                                : nullptr);
    if (priors.fallback_warning)
      std::cerr << "warning: no characters detected in " << item.id
                << "; restoring unconditioned\n";

    auto x_lq = diffusion::to_model_range<float>(lq);
    denoiser::MidCapture capture;
    auto predictor = diffusion::model_predictor<float>(model, x_lq, img_shape, priors,
                                                       flags.dump_attn ? &capture : nullptr);
    auto x0 = diffusion::restore<float>(x_lq.size(), predictor, sched, mode,
                                        Rng::mix(flags.seed, i));
    Image out = diffusion::from_model_range(x0, lq.width, lq.height, lq.channels);
    std::string suffix = lq.channels == 3 ? ".ppm" : ".pgm";
    write_image((fs::path(flags.out_dir) / (item.id + suffix)).string(), out);

    if (flags.dump_attn) {
      // final-step attention maps, upscaled to input resolution
      int ds = cfg.model.downscale();
      for (size_t a = 0; a < capture.attention.attention.size(); ++a) {
        const auto& map = capture.attention.attention[a];
        float peak = 0;
        for (float v : map) peak = std::max(peak, v);
        Image heat(lq.width, lq.height, 1, 0);
        for (int y = 0; y < lq.height; ++y)
          for (int x = 0; x < lq.width; ++x) {
            float v = map[static_cast<size_t>(y / ds) * static_cast<size_t>(capture.attention.w) +
                          static_cast<size_t>(x / ds)];
            heat.at(x, y) = static_cast<uint8_t>(peak > 0 ? v / peak * 255.f : 0.f);
          }
        write_image((fs::path(flags.out_dir) / (item.id + "_attn" + std::to_string(a) + ".pgm")).string(),
                    heat);
      }
    }
  });
  return static_cast<int>(items.size());
}

metrics::MetricReport run_evaluate(const RunConfig& cfg, const std::string& manifest_path,
                                   const std::string& restored_dir,
                                   const std::string& report_path) {
  auto manifest = plates::read_manifest(manifest_path);
  charprior::TemplateOcr ocr(cfg.plates_style.vocab);
  metrics::Recognizer recognizer = [&ocr](const Image& img) {
    std::string out;
    for (const auto& box : charprior::segment_chars(img, charprior::SegmenterMode::projection)) {
      auto det = ocr.classify(img, box);
      if (det.class_id >= 0) out += ocr.symbol(det.class_id);
    }
    return out;
  };
  auto report = metrics::evaluate_run(manifest, fs::path(manifest_path).parent_path().string(),
                                      restored_dir, recognizer);
  if (!report_path.empty()) metrics::write_report(report, report_path);
  return report;
}

namespace {

const char* kVariants[4] = {"none", "string", "char_global", "charm"};

AblateRow evaluate_variant(const RunConfig& base, uint64_t seed, const std::string& variant,
                           const std::string& data_dir, const std::string& run_dir) {
  AblateRow row;
  row.variant = variant;
  row.seed = seed;

  RunConfig cfg = base;
  cfg.prior_mode = charprior::prior_mode_from_string(variant);
  cfg.paths.data_dir = data_dir;
  cfg.paths.out_dir = run_dir;
  cfg.train.seed = seed;
  cfg.finalize();

  auto train_res = run_train(cfg);

  RestoreFlags flags;
  flags.seed = Rng::mix(seed, kRestoreSalt);
  flags.out_dir = (fs::path(run_dir) / "restored").string();
  run_restore(train_res.checkpoint_path, (fs::path(data_dir) / "manifest_test.jsonl").string(),
              flags);

  auto report = run_evaluate(cfg, (fs::path(data_dir) / "manifest_test.jsonl").string(),
                             flags.out_dir, (fs::path(run_dir) / "report.jsonl").string());
  row.cer = report.mean_cer;
  row.lpr_accuracy = report.lpr_accuracy;
  row.psnr = report.mean_psnr;
  row.ssim = report.mean_ssim;
  return row;
}

}  // namespace

AblateResult run_ablate(const RunConfig& cfg, const AblateOptions& opts) {
  if (opts.seeds.empty()) throw UsageError("ablate: need at least one seed");
  fs::create_directories(opts.out_dir);

  // one dataset per seed, shared by the four variants
  std::vector<std::string> data_dirs(opts.seeds.size());
  parallel_for(opts.seeds.size(), opts.jobs, [&](size_t i) {
    RunConfig dcfg = cfg;
    dcfg.paths.data_dir =
        (fs::path(opts.out_dir) / ("seed" + std::to_string(opts.seeds[i])) / "data").string();
    data_dirs[i] = dcfg.paths.data_dir;
    run_gen_dataset(dcfg, opts.seeds[i]);
    run_degrade(dcfg);
  });

  struct Job {
    size_t seed_idx;
    int variant_idx;
  };
  std::vector<Job> jobs;
  for (size_t s = 0; s < opts.seeds.size(); ++s)
    for (int v = 0; v < 4; ++v) jobs.push_back({s, v});

  std::vector<AblateRow> rows(jobs.size());
  parallel_for(jobs.size(), opts.jobs, [&](size_t i) {
    const Job& job = jobs[i];
    uint64_t seed = opts.seeds[job.seed_idx];
    const char* variant = kVariants[job.variant_idx];
    std::string run_dir =
        (fs::path(opts.out_dir) / ("seed" + std::to_string(seed)) / variant).string();
    fs::create_directories(run_dir);
    try {
      rows[i] = evaluate_variant(cfg, seed, variant, data_dirs[job.seed_idx], run_dir);
    } catch (const std::exception& e) {
      rows[i].variant = variant;
      rows[i].seed = seed;
      rows[i].failed = true;
      rows[i].error = e.what();
    }
  });

  AblateResult result;
  // Table-III row order: variant-major
  for (int v = 0; v < 4; ++v)
    for (size_t s = 0; s < opts.seeds.size(); ++s)
      result.rows.push_back(rows[s * 4 + static_cast<size_t>(v)]);

  for (int v = 0; v < 4; ++v) {
    AblateRow avg;
    avg.variant = kVariants[v];
    avg.seed = 0;
    int n = 0;
    double psnr_sum = 0, ssim_sum = 0;
    int quality_n = 0;
    for (size_t s = 0; s < opts.seeds.size(); ++s) {
      const auto& r = rows[s * 4 + static_cast<size_t>(v)];
      if (r.failed) {
        avg.failed = true;
        avg.error = r.error;
        continue;
      }
      avg.cer += r.cer;
      avg.lpr_accuracy += r.lpr_accuracy;
      if (r.psnr) {
        psnr_sum += *r.psnr;
        ssim_sum += *r.ssim;
        ++quality_n;
      }
      ++n;
    }
    if (n > 0) {
      avg.cer /= n;
      avg.lpr_accuracy /= n;
      if (quality_n > 0) {
        avg.psnr = psnr_sum / quality_n;
        avg.ssim = ssim_sum / quality_n;
      }
    }
    result.seed_averaged.push_back(avg);
  }
  return result;
}

void print_ablate_table(const AblateResult& result, std::ostream& os) {
  auto print_row = [&os](const AblateRow& r, const std::string& seed_label) {
    os << std::left << std::setw(14) << r.variant << std::setw(8) << seed_label;
    if (r.failed) {
      os << "FAILED: " << r.error << "\n";
      return;
    }
    os << std::right << std::fixed << std::setw(8) << std::setprecision(4) << r.cer
       << std::setw(8) << std::setprecision(3) << r.lpr_accuracy;
    if (r.psnr) os << std::setw(9) << std::setprecision(2) << *r.psnr;
    if (r.ssim) os << std::setw(9) << std::setprecision(4) << *r.ssim;
    os << "\n";
  };
  os << std::left << std::setw(14) << "variant" << std::setw(8) << "seed" << std::right
     << std::setw(8) << "cer" << std::setw(8) << "acc" << std::setw(9) << "psnr" << std::setw(9)
     << "ssim" << "\n";
  for (const auto& r : result.rows) print_row(r, std::to_string(r.seed));
  os << "---\n";
  for (const auto& r : result.seed_averaged) print_row(r, "avg");
}

void write_ablate_report(const AblateResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("ablate: cannot write " + path);
  auto dump = [&out](const AblateRow& r, bool averaged) {
    ordered_json j;
    j["variant"] = r.variant;
    if (averaged)
      j["seed"] = "avg";
    else
      j["seed"] = r.seed;
    j["failed"] = r.failed;
    if (r.failed) {
      j["error"] = r.error;
    } else {
      j["cer"] = r.cer;
      j["lpr_accuracy"] = r.lpr_accuracy;
      if (r.psnr) j["psnr"] = *r.psnr;
      if (r.ssim) j["ssim"] = *r.ssim;
    }
    out << j.dump() << "\n";
  };
  for (const auto& r : result.rows) dump(r, false);
  for (const auto& r : result.seed_averaged) dump(r, true);
}

}  // namespace chardiff::cli
