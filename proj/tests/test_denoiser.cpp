#include <doctest.h>

#include <cmath>

#include "chardiff/denoiser.hpp"
#include "chardiff/plates.hpp"
#include "gradcheck.hpp"

using namespace chardiff;
using namespace chardiff::denoiser;
using charprior::PriorMode;
using chardiff::testing::gradcheck;

namespace {

template <class S>
DenoiserConfig small_cfg(PriorMode mode, int levels = 3) {
  DenoiserConfig cfg;
  cfg.channels = 1;
  cfg.base_width = 8;
  cfg.mults.assign(static_cast<size_t>(levels), 1);
  for (int l = 1; l < levels; ++l) cfg.mults[static_cast<size_t>(l)] = 1 << l;
  cfg.gn_groups = 4;
  cfg.max_timestep = 200;
  cfg.prior_mode = mode;
  cfg.vocab_size = 12;
  cfg.max_chars = 6;
  return cfg;
}

template <class S>
BasicTensor<S> randt(Shape shape, Rng& rng) {
  BasicTensor<S> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<S>(rng.normal());
  return t;
}

// Frozen detection fixture: two characters on disjoint halves of the grid.
charprior::DetectedChars two_char_detection(int feat_w, int feat_h) {
  charprior::DetectedChars det;
  det.ids = {2, 7};
  det.masks.resize(2);
  for (int i = 0; i < 2; ++i) {
    auto& m = det.masks[static_cast<size_t>(i)];
    m.w = feat_w;
    m.h = feat_h;
    m.cells.assign(static_cast<size_t>(feat_w) * feat_h, 0);
    for (int y = 0; y < feat_h; ++y)
      for (int x = 0; x < feat_w; ++x)
        if ((x < feat_w / 2) == (i == 0)) m.cells[static_cast<size_t>(y) * feat_w + x] = 1;
  }
  det.detections.resize(2);
  return det;
}

}  // namespace

TEST_CASE("sinusoid features: t=0 gives zeros then ones") {
  auto f = sinusoid_features<double>(0, 8, 100);
  for (int i = 0; i < 4; ++i) {
    CHECK(f.data()[static_cast<size_t>(i)] == 0.0);
    CHECK(f.data()[static_cast<size_t>(4 + i)] == 1.0);
  }
}

TEST_CASE("sinusoid features are deterministic and timestep-sensitive") {
  auto a = sinusoid_features<double>(1, 16, 100);
  auto b = sinusoid_features<double>(1, 16, 100);
  CHECK(a.data() == b.data());
  auto c = sinusoid_features<double>(2, 16, 100);
  bool differ = false;
  for (size_t i = 0; i < c.numel(); ++i) differ = differ || a.data()[i] != c.data()[i];
  CHECK(differ);
  CHECK_THROWS_AS(sinusoid_features<double>(100, 16, 100), ShapeError);
  CHECK_THROWS_AS(sinusoid_features<double>(-1, 16, 100), ShapeError);
}

TEST_CASE("output shape equals input shape at both plate sizes") {
  for (auto [w, h] : {std::pair{64, 32}, std::pair{96, 48}}) {
    auto model = DenoiserModel<float>::init(small_cfg<float>(PriorMode::none), 7);
    Rng rng(1);
    auto x_t = randt<float>({1, h, w}, rng);
    auto x_lq = randt<float>({1, h, w}, rng);
    charprior::PriorSet<float> priors;
    auto out = predict_noise(model, x_t, x_lq, 3, priors);
    CHECK(out.shape() == Shape{1, h, w});
  }
}

TEST_CASE("charm model with zero detections equals the none model") {
  uint64_t seed = 99;
  auto none_model = DenoiserModel<float>::init(small_cfg<float>(PriorMode::none), seed);
  auto charm_model = DenoiserModel<float>::init(small_cfg<float>(PriorMode::charm), seed);

  Rng rng(5);
  auto x_t = randt<float>({1, 32, 64}, rng);
  auto x_lq = randt<float>({1, 32, 64}, rng);

  charprior::PriorSet<float> none_priors;
  charprior::PriorSet<float> empty_charm;
  empty_charm.mode = PriorMode::charm;
  empty_charm.fallback_warning = true;

  auto a = predict_noise(none_model, x_t, x_lq, 11, none_priors);
  auto b = predict_noise(charm_model, x_t, x_lq, 11, empty_charm);
  CHECK(a.data() == b.data());
}

TEST_CASE("char_global equals charm when every true mask is all-ones") {
  uint64_t seed = 4;
  auto cg = small_cfg<float>(PriorMode::char_global);
  auto cm = small_cfg<float>(PriorMode::charm);
  auto model_cg = DenoiserModel<float>::init(cg, seed);
  auto model_cm = DenoiserModel<float>::init(cm, seed);

  Rng rng(9);
  auto x_t = randt<float>({1, 32, 64}, rng);
  auto x_lq = randt<float>({1, 32, 64}, rng);

  int fw = 64 / cg.downscale(), fh = 32 / cg.downscale();
  charprior::DetectedChars det;
  det.ids = {1, 5, 9};
  det.detections.resize(3);
  det.masks.assign(3, charprior::all_ones_mask(fw, fh));

  auto pri_cg = charprior::assemble_priors(PriorMode::char_global, det, model_cg.encoder);
  auto pri_cm = charprior::assemble_priors(PriorMode::charm, det, model_cm.encoder);
  auto a = predict_noise(model_cg, x_t, x_lq, 2, pri_cg);
  auto b = predict_noise(model_cm, x_t, x_lq, 2, pri_cm);
  CHECK(a.data() == b.data());
}

TEST_CASE("prior/mode mismatch is rejected") {
  auto model = DenoiserModel<float>::init(small_cfg<float>(PriorMode::charm), 1);
  Rng rng(2);
  auto x = randt<float>({1, 32, 64}, rng);
  charprior::PriorSet<float> priors;  // mode none
  CHECK_THROWS_WITH_AS(predict_noise(model, x, x, 0, priors), doctest::Contains("mode"),
                       ShapeError);
}

TEST_CASE("perturbing one embedding moves mid features only inside its mask") {
  auto cfg = small_cfg<float>(PriorMode::charm);
  auto model = DenoiserModel<float>::init(cfg, 31);
  Rng rng(8);
  auto x_t = randt<float>({1, 32, 64}, rng);
  auto x_lq = randt<float>({1, 32, 64}, rng);
  int fw = 64 / cfg.downscale(), fh = 32 / cfg.downscale();
  auto det = two_char_detection(fw, fh);

  auto run = [&](float bump) {
    auto priors = charprior::assemble_priors(PriorMode::charm, det, model.encoder);
    if (bump != 0.f) {
      auto& e = priors.chars[0].embedding;
      BasicTensor<float> shifted = add_scalar(e, bump);
      priors.chars[0].embedding = shifted;
    }
    MidCapture cap;
    predict_noise(model, x_t, x_lq, 5, priors, &cap);
    return cap;
  };
  auto base = run(0.f);
  auto bumped = run(0.5f);

  REQUIRE(base.before == bumped.before);  // trunk identical up to injection
  int c = cfg.mid_channels();
  const auto& mask0 = det.masks[0];
  int changed_inside = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int p = 0; p < fw * fh; ++p) {
      float da = base.after[static_cast<size_t>(ci) * fw * fh + p];
      float db = bumped.after[static_cast<size_t>(ci) * fw * fh + p];
      if (!mask0.cells[static_cast<size_t>(p)])
        CHECK(da == db);  // outside M_0: untouched by e_0
      else if (da != db)
        ++changed_inside;
    }
  CHECK(changed_inside > 0);
}

TEST_CASE("denoiser gradients match finite differences on a 16x8 input") {
  auto cfg = small_cfg<double>(PriorMode::charm, 2);
  cfg.max_chars = 4;
  auto model = DenoiserModel<double>::init(cfg, 17);
  // the zero-initialized head would zero all trunk gradients; randomize it
  Rng hr(23);
  for (auto& v : model.head_w.data()) v = hr.normal() * 0.1;

  Rng rng(3);
  auto x_t = randt<double>({1, 8, 16}, rng);
  auto x_lq = randt<double>({1, 8, 16}, rng);
  auto target = randt<double>({1, 8, 16}, rng);
  int fw = 16 / cfg.downscale(), fh = 8 / cfg.downscale();
  auto det = two_char_detection(fw, fh);

  std::vector<DTensor> leaves = {model.stem_w,          model.down[0].conv1_w,
                                 model.down[0].tproj_w, model.mid_in.gn1_g,
                                 model.charm_params.wk, model.encoder.table,
                                 model.head_w,          model.time_w1};
  auto res = gradcheck(leaves, [&] {
    auto priors = charprior::assemble_priors(PriorMode::charm, det, model.encoder);
    return mse(predict_noise(model, x_t, x_lq, 3, priors), target);
  });
  CHECK(res.max_rel_err < 1e-4);
}
