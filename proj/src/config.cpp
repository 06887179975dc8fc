#include "chardiff/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "chardiff/errors.hpp"

using ordered_json = nlohmann::ordered_json;

namespace chardiff::cli {

namespace {

// Tracks consumed keys; everything left over is an error.
class Section {
 public:
  Section(const ordered_json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw UsageError("config: section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const std::exception&) {
      throw UsageError("config: bad value for '" + name_ + "." + key + "'");
    }
  }

  void get(const char* key, uint64_t& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    if (!it->is_number_unsigned() && !it->is_number_integer())
      throw UsageError("config: bad value for '" + name_ + "." + key + "'");
    out = it->get<uint64_t>();
  }

  const ordered_json* sub(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (auto& [key, value] : j_.items())
      if (!seen_.count(key))
        throw UsageError("config: unknown key '" + name_ + "." + key + "'");
  }

 private:
  const ordered_json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void parse_plates(const ordered_json& j, RunConfig& cfg) {
  Section s(j, "plates");
  auto& p = cfg.plates_style;
  s.get("width", p.width);
  s.get("height", p.height);
  s.get("channels", p.channels);
  s.get("vocab", p.vocab);
  s.get("min_len", p.min_len);
  s.get("max_len", p.max_len);
  s.get("cell_w", p.cell_w);
  s.get("cell_h", p.cell_h);
  s.get("spacing", p.spacing);
  s.get("margin", p.margin);
  s.get("box_pad", p.box_pad);
  s.get("bg_min", p.bg_min);
  s.get("bg_max", p.bg_max);
  s.get("fg_min", p.fg_min);
  s.get("fg_max", p.fg_max);
  s.get("min_contrast", p.min_contrast);
  s.get("jitter_x", p.jitter_x);
  s.get("jitter_y", p.jitter_y);
  s.get("count", cfg.plate_count);
  std::vector<int> split;
  s.get("split", split);
  if (!split.empty()) {
    if (split.size() != 3) throw UsageError("config: plates.split must have 3 weights");
    std::copy(split.begin(), split.end(), cfg.split.begin());
  }
  s.finish();
}

void parse_degrade(const ordered_json& j, RunConfig& cfg) {
  Section s(j, "degrade");
  s.get("orders", cfg.degradation.orders);
  if (const auto* stages = s.sub("stages")) {
    if (!stages->is_array()) throw UsageError("config: degrade.stages must be an array");
    cfg.degradation.stages.clear();
    int idx = 0;
    for (const auto& sj : *stages) {
      Section ss(sj, "degrade.stages[" + std::to_string(idx++) + "]");
      degrade::Stage st;
      std::string kind;
      ss.get("kind", kind);
      st.kind = degrade::stage_kind_from_string(kind);
      ss.get("probability", st.probability);
      ss.get("lo", st.lo);
      ss.get("hi", st.hi);
      ss.get("aux_lo", st.aux_lo);
      ss.get("aux_hi", st.aux_hi);
      ss.finish();
      cfg.degradation.stages.push_back(st);
    }
  }
  s.finish();
}

void parse_model(const ordered_json& j, RunConfig& cfg) {
  Section s(j, "model");
  auto& m = cfg.model;
  s.get("base_width", m.base_width);
  s.get("mults", m.mults);
  s.get("gn_groups", m.gn_groups);
  s.get("max_chars", m.max_chars);
  std::string literal;
  bool lit = m.literal_eq3;
  s.get("literal_eq3", lit);
  m.literal_eq3 = lit;
  s.finish();
}

void parse_schedule(const ordered_json& j, RunConfig& cfg) {
  Section s(j, "schedule");
  auto& sc = cfg.schedule;
  s.get("T", sc.T);
  s.get("beta_start", sc.beta_start);
  s.get("beta_end", sc.beta_end);
  s.get("S", sc.S);
  std::string sampler;
  s.get("sampler", sampler);
  if (!sampler.empty()) sc.sampler = diffusion::sampler_mode_from_string(sampler);
  s.finish();
}

void parse_train(const ordered_json& j, RunConfig& cfg) {
  Section s(j, "train");
  auto& t = cfg.train;
  s.get("steps", t.steps);
  s.get("batch", t.batch);
  s.get("lr", t.lr);
  s.get("weight_decay", t.weight_decay);
  s.get("seed", t.seed);
  s.get("checkpoint_interval", t.checkpoint_interval);
  std::string seg;
  s.get("segmenter", seg);
  if (!seg.empty()) {
    if (seg == "oracle")
      t.segmenter = charprior::SegmenterMode::oracle;
    else if (seg == "projection")
      t.segmenter = charprior::SegmenterMode::projection;
    else
      throw UsageError("config: train.segmenter must be 'oracle' or 'projection'");
  }
  s.finish();
}

void parse_paths(const ordered_json& j, RunConfig& cfg) {
  Section s(j, "paths");
  s.get("data_dir", cfg.paths.data_dir);
  s.get("out_dir", cfg.paths.out_dir);
  s.finish();
}

}  // namespace

void RunConfig::finalize() {
  model.channels = plates_style.channels;
  model.vocab_size = static_cast<int>(plates_style.vocab.size());
  model.max_timestep = schedule.T;
  model.prior_mode = prior_mode;

  plates_style.validate();
  degradation.validate();
  model.validate();
  if (plate_count < 0) throw UsageError("config: plates.count must be >= 0");
  if (schedule.T < 1 || schedule.S < 1 || schedule.S > schedule.T)
    throw UsageError("config: schedule needs 1 <= S <= T");
  if (!(schedule.beta_start > 0) || schedule.beta_start > schedule.beta_end ||
      !(schedule.beta_end < 1))
    throw UsageError("config: schedule needs 0 < beta_start <= beta_end < 1");
  if (train.steps < 0) throw UsageError("config: train.steps must be >= 0");
  if (train.batch < 1) throw UsageError("config: train.batch must be >= 1");
  if (!(train.lr > 0)) throw UsageError("config: train.lr must be positive");
  if (train.weight_decay < 0) throw UsageError("config: train.weight_decay must be >= 0");
  if (train.checkpoint_interval < 1) throw UsageError("config: train.checkpoint_interval must be >= 1");
  int ds = model.downscale();
  if (plates_style.width % ds || plates_style.height % ds)
    throw UsageError("config: plate size must be divisible by the model downscale " +
                     std::to_string(ds));
}

RunConfig default_config() {
  RunConfig cfg;
  cfg.finalize();
  return cfg;
}

RunConfig config_from_json(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const std::exception& e) {
    throw UsageError(std::string("config: parse error: ") + e.what());
  }
  RunConfig cfg;
  Section root(j, "<root>");
  if (const auto* sj = root.sub("plates")) parse_plates(*sj, cfg);
  if (const auto* sj = root.sub("degrade")) parse_degrade(*sj, cfg);
  if (const auto* sj = root.sub("model")) parse_model(*sj, cfg);
  if (const auto* sj = root.sub("schedule")) parse_schedule(*sj, cfg);
  if (const auto* sj = root.sub("train")) parse_train(*sj, cfg);
  if (const auto* sj = root.sub("paths")) parse_paths(*sj, cfg);
  std::string mode;
  root.get("prior_mode", mode);
  if (!mode.empty()) cfg.prior_mode = charprior::prior_mode_from_string(mode);
  root.finish();
  cfg.finalize();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const RunConfig& cfg) {
  ordered_json j;
  const auto& p = cfg.plates_style;
  j["plates"] = {{"width", p.width},
                 {"height", p.height},
                 {"channels", p.channels},
                 {"vocab", p.vocab},
                 {"min_len", p.min_len},
                 {"max_len", p.max_len},
                 {"cell_w", p.cell_w},
                 {"cell_h", p.cell_h},
                 {"spacing", p.spacing},
                 {"margin", p.margin},
                 {"box_pad", p.box_pad},
                 {"bg_min", p.bg_min},
                 {"bg_max", p.bg_max},
                 {"fg_min", p.fg_min},
                 {"fg_max", p.fg_max},
                 {"min_contrast", p.min_contrast},
                 {"jitter_x", p.jitter_x},
                 {"jitter_y", p.jitter_y},
                 {"count", cfg.plate_count},
                 {"split", cfg.split}};
  auto stages = ordered_json::array();
  for (const auto& st : cfg.degradation.stages)
    stages.push_back({{"kind", degrade::to_string(st.kind)},
                      {"probability", st.probability},
                      {"lo", st.lo},
                      {"hi", st.hi},
                      {"aux_lo", st.aux_lo},
                      {"aux_hi", st.aux_hi}});
  j["degrade"] = {{"orders", cfg.degradation.orders}, {"stages", stages}};
  j["model"] = {{"base_width", cfg.model.base_width},
                {"mults", cfg.model.mults},
                {"gn_groups", cfg.model.gn_groups},
                {"max_chars", cfg.model.max_chars},
                {"literal_eq3", cfg.model.literal_eq3}};
  j["schedule"] = {{"T", cfg.schedule.T},
                   {"beta_start", cfg.schedule.beta_start},
                   {"beta_end", cfg.schedule.beta_end},
                   {"S", cfg.schedule.S},
                   {"sampler", cfg.schedule.sampler == diffusion::SamplerMode::ancestral
                                   ? "ancestral"
                                   : "deterministic"}};
  j["train"] = {{"steps", cfg.train.steps},
                {"batch", cfg.train.batch},
                {"lr", cfg.train.lr},
                {"weight_decay", cfg.train.weight_decay},
                {"seed", cfg.train.seed},
                {"checkpoint_interval", cfg.train.checkpoint_interval},
                {"segmenter", cfg.train.segmenter == charprior::SegmenterMode::oracle
                                  ? "oracle"
                                  : "projection"}};
  j["prior_mode"] = charprior::to_string(cfg.prior_mode);
  j["paths"] = {{"data_dir", cfg.paths.data_dir}, {"out_dir", cfg.paths.out_dir}};
  return j.dump(2);
}

}  // namespace chardiff::cli
