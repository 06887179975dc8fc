#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "chardiff/adamw.hpp"
#include "chardiff/charm.hpp"
#include "chardiff/charprior.hpp"
#include "chardiff/tensor.hpp"

namespace chardiff::denoiser {

struct DenoiserConfig {
  int channels = 1;
  int base_width = 32;
  std::vector<int> mults = {1, 2, 4};  // one entry per resolution level
  int gn_groups = 8;
  int max_timestep = 1000;
  charprior::PriorMode prior_mode = charprior::PriorMode::none;
  bool literal_eq3 = false;
  int vocab_size = 36;
  int max_chars = 8;

  int levels() const { return static_cast<int>(mults.size()); }
  int mid_channels() const { return base_width * mults.back(); }
  int downscale() const { return 1 << (levels() - 1); }
  int time_dim() const { return 4 * base_width; }

  void validate() const {
    if (channels != 1 && channels != 3) throw UsageError("model: channels must be 1 or 3");
    if (base_width < 2 || base_width % 2) throw UsageError("model: base_width must be even and >= 2");
    if (mults.empty()) throw UsageError("model: empty level multipliers");
    for (int m : mults)
      if (m < 1 || base_width * m % gn_groups)
        throw UsageError("model: gn_groups must divide every level width");
    if (max_timestep < 1) throw UsageError("model: max_timestep must be >= 1");
    if (vocab_size < 1 || max_chars < 1) throw UsageError("model: bad prior dims");
  }
};

// Sinusoidal features at geometrically spaced frequencies; sin block first,
// so t=0 maps to [0...,1...].
template <class S>
BasicTensor<S> sinusoid_features(int t, int dim, int max_timestep) {
  if (t < 0 || t >= max_timestep)
    throw ShapeError("timestep " + std::to_string(t) + " outside [0," +
                     std::to_string(max_timestep) + ")");
  if (dim % 2) throw ShapeError("timestep embedding dim must be even");
  int half = dim / 2;
  BasicTensor<S> out({dim});
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / half);
    out.ptr()[i] = static_cast<S>(std::sin(t * freq));
    out.ptr()[half + i] = static_cast<S>(std::cos(t * freq));
  }
  return out;
}

template <class S>
struct DenoiserModel {
  DenoiserConfig cfg;
  ParamList<S> params;

  struct ResBlock {
    int in_ch = 0, out_ch = 0, groups = 0;
    BasicTensor<S> gn1_g, gn1_b, conv1_w, conv1_b;
    BasicTensor<S> tproj_w, tproj_b;
    BasicTensor<S> gn2_g, gn2_b, conv2_w, conv2_b;
    BasicTensor<S> skip_w, skip_b;  // 1x1, only when in_ch != out_ch
  };

  BasicTensor<S> stem_w, stem_b;
  BasicTensor<S> time_w1, time_b1, time_w2, time_b2;
  std::vector<ResBlock> down;  // levels 0..L-2
  ResBlock mid_in, mid_out;
  std::vector<ResBlock> up;  // levels L-2..0 (stored in apply order)
  BasicTensor<S> head_gn_g, head_gn_b, head_w, head_b;  // zero-init output conv
  charm::CharmParams<S> charm_params;
  charprior::CharEncoderParams<S> encoder;

  bool has_priors() const { return cfg.prior_mode != charprior::PriorMode::none; }

  // Every tensor draws from a stream keyed by its name, so models that share
  // a seed share trunk weights regardless of prior_mode.
  static DenoiserModel init(const DenoiserConfig& cfg, uint64_t seed);
};

namespace detail {

inline uint64_t name_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <class S>
BasicTensor<S> init_tensor(ParamList<S>& params, const std::string& name, Shape shape,
                           uint64_t seed, double stddev) {
  Rng rng(Rng::mix(seed, name_hash(name)));
  BasicTensor<S> t = stddev > 0 ? BasicTensor<S>::randn(std::move(shape), rng, static_cast<S>(stddev))
                                : BasicTensor<S>(std::move(shape));
  return params.add(name, std::move(t));
}

template <class S>
BasicTensor<S> init_const(ParamList<S>& params, const std::string& name, Shape shape, S value) {
  BasicTensor<S> t(std::move(shape), value);
  return params.add(name, std::move(t));
}

template <class S>
typename DenoiserModel<S>::ResBlock make_res_block(ParamList<S>& params, const std::string& prefix,
                                                   int in_ch, int out_ch, int groups, int tdim,
                                                   uint64_t seed) {
  typename DenoiserModel<S>::ResBlock b;
  b.in_ch = in_ch;
  b.out_ch = out_ch;
  b.groups = groups;
  double s1 = std::sqrt(2.0 / (in_ch * 9.0));
  double s2 = std::sqrt(2.0 / (out_ch * 9.0));
  b.gn1_g = init_const<S>(params, prefix + ".gn1.gamma", {in_ch}, S(1));
  b.gn1_b = init_const<S>(params, prefix + ".gn1.beta", {in_ch}, S(0));
  b.conv1_w = init_tensor<S>(params, prefix + ".conv1.weight", {out_ch, in_ch, 3, 3}, seed, s1);
  b.conv1_b = init_const<S>(params, prefix + ".conv1.bias", {out_ch}, S(0));
  b.tproj_w = init_tensor<S>(params, prefix + ".tproj.weight", {out_ch, tdim}, seed,
                             std::sqrt(1.0 / tdim));
  b.tproj_b = init_const<S>(params, prefix + ".tproj.bias", {out_ch}, S(0));
  b.gn2_g = init_const<S>(params, prefix + ".gn2.gamma", {out_ch}, S(1));
  b.gn2_b = init_const<S>(params, prefix + ".gn2.beta", {out_ch}, S(0));
  b.conv2_w = init_tensor<S>(params, prefix + ".conv2.weight", {out_ch, out_ch, 3, 3}, seed, s2);
  b.conv2_b = init_const<S>(params, prefix + ".conv2.bias", {out_ch}, S(0));
  if (in_ch != out_ch) {
    b.skip_w = init_tensor<S>(params, prefix + ".skip.weight", {out_ch, in_ch, 1, 1}, seed,
                              std::sqrt(1.0 / in_ch));
    b.skip_b = init_const<S>(params, prefix + ".skip.bias", {out_ch}, S(0));
  }
  return b;
}

template <class S>
BasicTensor<S> res_block_forward(const typename DenoiserModel<S>::ResBlock& b,
                                 const BasicTensor<S>& x, const BasicTensor<S>& temb) {
  auto h = conv2d(silu(group_norm(x, b.groups, b.gn1_g, b.gn1_b)), b.conv1_w, b.conv1_b);
  auto tv = add(reshape(matmul(b.tproj_w, reshape(temb, {temb.dim(0), 1})), {b.out_ch}), b.tproj_b);
  h = add(h, reshape(tv, {b.out_ch, 1, 1}));
  h = conv2d(silu(group_norm(h, b.groups, b.gn2_g, b.gn2_b)), b.conv2_w, b.conv2_b);
  auto skip = b.in_ch == b.out_ch ? x : conv2d(x, b.skip_w, b.skip_b);
  return add(h, skip);
}

}  // namespace detail

template <class S>
DenoiserModel<S> DenoiserModel<S>::init(const DenoiserConfig& cfg, uint64_t seed) {
  cfg.validate();
  DenoiserModel m;
  m.cfg = cfg;
  int L = cfg.levels();
  int w0 = cfg.base_width * cfg.mults[0];
  int tdim = cfg.time_dim();

  m.stem_w = detail::init_tensor<S>(m.params, "stem.weight", {w0, 2 * cfg.channels, 3, 3}, seed,
                                    std::sqrt(2.0 / (2 * cfg.channels * 9.0)));
  m.stem_b = detail::init_const<S>(m.params, "stem.bias", {w0}, S(0));
  m.time_w1 = detail::init_tensor<S>(m.params, "time.w1", {tdim, cfg.base_width}, seed,
                                     std::sqrt(1.0 / cfg.base_width));
  m.time_b1 = detail::init_const<S>(m.params, "time.b1", {tdim}, S(0));
  m.time_w2 = detail::init_tensor<S>(m.params, "time.w2", {tdim, tdim}, seed, std::sqrt(1.0 / tdim));
  m.time_b2 = detail::init_const<S>(m.params, "time.b2", {tdim}, S(0));

  int prev = w0;
  for (int l = 0; l + 1 < L; ++l) {
    int wl = cfg.base_width * cfg.mults[static_cast<size_t>(l)];
    m.down.push_back(detail::make_res_block<S>(m.params, "down" + std::to_string(l), prev, wl,
                                               cfg.gn_groups, tdim, seed));
    prev = wl;
  }
  int wm = cfg.mid_channels();
  m.mid_in = detail::make_res_block<S>(m.params, "mid.in", prev, wm, cfg.gn_groups, tdim, seed);
  m.mid_out = detail::make_res_block<S>(m.params, "mid.out", wm, wm, cfg.gn_groups, tdim, seed);

  int cur = wm;
  for (int l = L - 2; l >= 0; --l) {
    int wl = cfg.base_width * cfg.mults[static_cast<size_t>(l)];
    m.up.push_back(detail::make_res_block<S>(m.params, "up" + std::to_string(l), cur + wl, wl,
                                             cfg.gn_groups, tdim, seed));
    cur = wl;
  }

  m.head_gn_g = detail::init_const<S>(m.params, "head.gn.gamma", {cur}, S(1));
  m.head_gn_b = detail::init_const<S>(m.params, "head.gn.beta", {cur}, S(0));
  // zero-init so training starts from eps_hat ~ 0
  m.head_w = detail::init_const<S>(m.params, "head.weight", {cfg.channels, cur, 3, 3}, S(0));
  m.head_b = detail::init_const<S>(m.params, "head.bias", {cfg.channels}, S(0));

  if (cfg.prior_mode != charprior::PriorMode::none) {
    m.charm_params.dim = wm;
    m.charm_params.literal_eq3 = cfg.literal_eq3;
    m.charm_params.wq = detail::init_tensor<S>(m.params, "charm.wq", {wm, wm}, seed,
                                               std::sqrt(1.0 / wm));
    m.charm_params.wk = detail::init_tensor<S>(m.params, "charm.wk", {wm, wm}, seed,
                                               std::sqrt(1.0 / wm));
    m.charm_params.wv = detail::init_tensor<S>(m.params, "charm.wv", {wm, wm}, seed,
                                               std::sqrt(1.0 / wm));
    m.encoder.vocab_size = cfg.vocab_size;
    m.encoder.dim = wm;
    m.encoder.max_chars = cfg.max_chars;
    m.encoder.table = detail::init_tensor<S>(m.params, "encoder.table", {cfg.vocab_size, wm}, seed,
                                             std::sqrt(1.0 / wm));
    m.encoder.wq = detail::init_tensor<S>(m.params, "encoder.wq", {wm, wm}, seed, std::sqrt(1.0 / wm));
    m.encoder.wk = detail::init_tensor<S>(m.params, "encoder.wk", {wm, wm}, seed, std::sqrt(1.0 / wm));
    m.encoder.wv = detail::init_tensor<S>(m.params, "encoder.wv", {wm, wm}, seed, std::sqrt(1.0 / wm));
    // fixed sinusoidal positions; carried in the checkpoint but never trained
    m.encoder.pos = charprior::sinusoidal_positions<S>(cfg.max_chars, wm);
  }
  return m;
}

struct MidCapture {
  std::vector<float> before, after;  // mid features around the injection
  charm::CharmDump attention;
};

// eps_theta(Concat(x_t, x_lq), t, c). Prior injection happens between the
// two mid blocks according to cfg.prior_mode.
template <class S>
BasicTensor<S> predict_noise(const DenoiserModel<S>& model, const BasicTensor<S>& x_t,
                             const BasicTensor<S>& x_lq, int t,
                             const charprior::PriorSet<S>& priors, MidCapture* capture = nullptr) {
  const auto& cfg = model.cfg;
  if (x_t.shape() != x_lq.shape())
    throw ShapeError("predict_noise: x_t " + shape_str(x_t.shape()) + " vs x_lq " +
                     shape_str(x_lq.shape()));
  if (x_t.rank() != 3 || x_t.dim(0) != cfg.channels)
    throw ShapeError("predict_noise: expected [" + std::to_string(cfg.channels) + ",H,W], got " +
                     shape_str(x_t.shape()));
  int h = x_t.dim(1), w = x_t.dim(2);
  int ds = cfg.downscale();
  if (h % ds || w % ds)
    throw ShapeError("predict_noise: " + std::to_string(w) + "x" + std::to_string(h) +
                     " not divisible by the model downscale " + std::to_string(ds));
  if (priors.mode != cfg.prior_mode)
    throw ShapeError("predict_noise: priors built for mode " + charprior::to_string(priors.mode) +
                     " but model expects " + charprior::to_string(cfg.prior_mode));

  auto temb = add(reshape(matmul(model.time_w1,
                                 reshape(sinusoid_features<S>(t, cfg.base_width, cfg.max_timestep),
                                         {cfg.base_width, 1})),
                          {cfg.time_dim()}),
                  model.time_b1);
  temb = silu(temb);
  temb = add(reshape(matmul(model.time_w2, reshape(temb, {cfg.time_dim(), 1})), {cfg.time_dim()}),
             model.time_b2);

  auto cur = conv2d(concat(x_t, x_lq), model.stem_w, model.stem_b);
  std::vector<BasicTensor<S>> skips;
  for (const auto& blk : model.down) {
    cur = detail::res_block_forward<S>(blk, cur, temb);
    skips.push_back(cur);
    cur = avgpool2x(cur);
  }
  cur = detail::res_block_forward<S>(model.mid_in, cur, temb);

  if (cfg.prior_mode != charprior::PriorMode::none && !priors.fallback_warning) {
    int fw = cur.dim(2), fh = cur.dim(1);
    std::vector<charprior::CharPrior<S>> inject;
    switch (cfg.prior_mode) {
      case charprior::PriorMode::string:
        if (!priors.string_embedding)
          throw ShapeError("predict_noise: string mode without a string embedding");
        inject.push_back({*priors.string_embedding, charprior::all_ones_mask(fw, fh)});
        break;
      case charprior::PriorMode::char_global:
        for (const auto& p : priors.chars)
          inject.push_back({p.embedding, charprior::all_ones_mask(fw, fh)});
        break;
      case charprior::PriorMode::charm:
        inject = priors.chars;
        break;
      default:
        break;
    }
    if (capture) {
      capture->before.assign(cur.data().begin(), cur.data().end());
    }
    cur = charm::charm_forward(cur, inject, model.charm_params,
                               capture ? &capture->attention : nullptr);
    if (capture) capture->after.assign(cur.data().begin(), cur.data().end());
  }

  cur = detail::res_block_forward<S>(model.mid_out, cur, temb);
  for (size_t i = 0; i < model.up.size(); ++i) {
    cur = upsample_nearest2x(cur);
    cur = concat(cur, skips[skips.size() - 1 - i]);
    cur = detail::res_block_forward<S>(model.up[i], cur, temb);
  }
  cur = silu(group_norm(cur, cfg.gn_groups, model.head_gn_g, model.head_gn_b));
  return conv2d(cur, model.head_w, model.head_b);
}

}  // namespace chardiff::denoiser
