#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "chardiff/charprior.hpp"
#include "chardiff/denoiser.hpp"
#include "chardiff/errors.hpp"
#include "chardiff/rng.hpp"
#include "chardiff/tensor.hpp"

namespace chardiff::diffusion {

struct NoiseSchedule {
  int T = 0;
  double beta_start = 0, beta_end = 0;
  int S = 0;
  std::vector<double> beta, alpha, alpha_bar;
  std::vector<int> tau;      // ascending restoration subsequence, tau.back() == T-1
  bool tail_warning = false;  // alpha_bar[T-1] >= 0.01: schedule too short to train on
};

// Linear beta schedule; alpha_bar kept in double so the running product is
// exact to ~1e-16 per factor.
inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end, int S) {
  if (T < 1) throw UsageError("schedule: T must be >= 1");
  if (S < 1 || S > T) throw UsageError("schedule: need 1 <= S <= T");
  if (!(beta_start > 0) || beta_start > beta_end || !(beta_end < 1))
    throw UsageError("schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.S = S;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.beta[static_cast<size_t>(t)] =
        T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
    prod *= s.alpha[static_cast<size_t>(t)];
    s.alpha_bar[static_cast<size_t>(t)] = prod;
  }
  s.tau.resize(static_cast<size_t>(S));
  for (int j = 0; j < S; ++j)
    s.tau[static_cast<size_t>(j)] =
        S == 1 ? T - 1 : static_cast<int>(std::lround(static_cast<double>(j) * (T - 1) / (S - 1)));
  s.tail_warning = s.alpha_bar.back() >= 0.01;
  return s;
}

// Forward process draw: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
template <class S>
std::vector<S> q_sample(const std::vector<S>& x0, int t, const std::vector<S>& eps,
                        const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) throw ShapeError("q_sample: t out of range");
  if (x0.size() != eps.size()) throw ShapeError("q_sample: x0/eps size mismatch");
  double ab = sched.alpha_bar[static_cast<size_t>(t)];
  S c0 = static_cast<S>(std::sqrt(ab));
  S ce = static_cast<S>(std::sqrt(1.0 - ab));
  std::vector<S> out(x0.size());
  for (size_t i = 0; i < x0.size(); ++i) out[i] = c0 * x0[i] + ce * eps[i];
  return out;
}

// Coefficients of the subsequence-adjusted posterior mean
//   mu = coef_x0 * x0_hat + coef_xt * x_t,   variance var,
// for a step from t down to t_prev. At stride 1 this is the standard DDPM
// posterior.
struct PosteriorCoeffs {
  double coef_x0 = 0, coef_xt = 0, var = 0;
};

inline PosteriorCoeffs posterior_coeffs(const NoiseSchedule& sched, int t, int t_prev) {
  if (t_prev < 0 || t_prev >= t || t >= sched.T) throw ShapeError("posterior_coeffs: bad step pair");
  double ab_t = sched.alpha_bar[static_cast<size_t>(t)];
  double ab_p = sched.alpha_bar[static_cast<size_t>(t_prev)];
  double alpha_eff = ab_t / ab_p;   // product of alphas across the stride
  double beta_eff = 1.0 - alpha_eff;
  PosteriorCoeffs c;
  c.coef_x0 = std::sqrt(ab_p) * beta_eff / (1.0 - ab_t);
  c.coef_xt = std::sqrt(alpha_eff) * (1.0 - ab_p) / (1.0 - ab_t);
  c.var = beta_eff * (1.0 - ab_p) / (1.0 - ab_t);
  return c;
}

enum class SamplerMode { ancestral, deterministic };

inline SamplerMode sampler_mode_from_string(const std::string& name) {
  if (name == "ancestral") return SamplerMode::ancestral;
  if (name == "deterministic") return SamplerMode::deterministic;
  throw UsageError("unknown sampler mode '" + name + "'");
}

// Noise predictor abstraction: (x_t, t) -> eps_hat. The model-backed variant
// wraps predict_noise; tests substitute closed-form oracles.
template <class S>
using Predictor = std::function<std::vector<S>(const std::vector<S>&, int)>;

// Reverse restoration over the tau subsequence. Starts from pure noise,
// clamps every x0 estimate to [-1,1], and is bit-deterministic given
// (seed, mode).
template <class S>
std::vector<S> restore(size_t numel, const Predictor<S>& predictor, const NoiseSchedule& sched,
                       SamplerMode mode, uint64_t seed,
                       std::vector<std::vector<S>>* x0_trace = nullptr) {
  Rng rng(seed);
  std::vector<S> x(numel);
  rng.fill_normal(x.data(), numel);

  for (int k = sched.S - 1; k >= 0; --k) {
    int t = sched.tau[static_cast<size_t>(k)];
    std::vector<S> eps_hat = predictor(x, t);
    if (eps_hat.size() != numel) throw ShapeError("restore: predictor output size mismatch");
    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    double inv_sqrt_ab = 1.0 / std::sqrt(ab);
    double sq1m = std::sqrt(1.0 - ab);
    std::vector<S> x0_hat(numel);
    for (size_t i = 0; i < numel; ++i) {
      double v = (x[i] - sq1m * eps_hat[i]) * inv_sqrt_ab;
      x0_hat[i] = static_cast<S>(std::clamp(v, -1.0, 1.0));
      if (!std::isfinite(x0_hat[i])) throw NumericError("restore: non-finite sample estimate");
    }
    if (x0_trace) x0_trace->push_back(x0_hat);
    if (k == 0) {
      x = std::move(x0_hat);
      break;
    }
    int t_prev = sched.tau[static_cast<size_t>(k - 1)];
    if (mode == SamplerMode::deterministic) {
      double c0 = std::sqrt(sched.alpha_bar[static_cast<size_t>(t_prev)]);
      double ce = std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t_prev)]);
      for (size_t i = 0; i < numel; ++i)
        x[i] = static_cast<S>(c0 * x0_hat[i] + ce * eps_hat[i]);
    } else {
      PosteriorCoeffs c = posterior_coeffs(sched, t, t_prev);
      double sigma = std::sqrt(c.var);
      for (size_t i = 0; i < numel; ++i)
        x[i] = static_cast<S>(c.coef_x0 * x0_hat[i] + c.coef_xt * x[i] + sigma * rng.normal());
    }
  }
  return x;
}

// One record per training sample; the frozen detections are cacheable, the
// prior embeddings are re-encoded inside every loss evaluation.
template <class S>
struct TrainSample {
  std::vector<S> x0;    // [-1,1], layout [ch,H,W]
  std::vector<S> x_lq;  // same layout
  charprior::DetectedChars detected;
};

// Per-sample noise predictor used by the loss; the model overload wraps
// predict_noise, tests substitute stubs.
template <class S>
using BatchPredictor = std::function<BasicTensor<S>(const BasicTensor<S>& x_t,
                                                    const BasicTensor<S>& x_lq, int t,
                                                    const TrainSample<S>& sample)>;

// Conditional objective: mean over batch and pixels of
// ||eps - eps_theta(Concat(x_t, x_lq), t, c)||^2 with t ~ U{0..T-1} and
// eps ~ N(0,I) drawn per sample from `rng`.
template <class S>
BasicTensor<S> training_loss(const std::vector<TrainSample<S>>& batch,
                             const BatchPredictor<S>& predictor, const NoiseSchedule& sched,
                             Rng& rng, const Shape& img_shape) {
  if (batch.empty()) throw UsageError("training_loss: empty batch");
  size_t numel = shape_numel(img_shape);
  BasicTensor<S> total;
  bool first = true;
  for (const auto& sample : batch) {
    if (sample.x0.size() != numel || sample.x_lq.size() != numel)
      throw ShapeError("training_loss: sample does not match image shape");
    int t = rng.uniform_int(sched.T);
    std::vector<S> eps(numel);
    rng.fill_normal(eps.data(), numel);
    auto x_t = q_sample(sample.x0, t, eps, sched);
    BasicTensor<S> x_t_tensor(img_shape, std::move(x_t));
    BasicTensor<S> lq_tensor(img_shape, sample.x_lq);
    BasicTensor<S> eps_tensor(img_shape, std::move(eps));
    auto loss = mse(eps_tensor, predictor(x_t_tensor, lq_tensor, t, sample));
    total = first ? loss : add(total, loss);
    first = false;
  }
  return mul_scalar(total, static_cast<S>(1.0 / static_cast<double>(batch.size())));
}

template <class S>
BasicTensor<S> training_loss(const std::vector<TrainSample<S>>& batch,
                             denoiser::DenoiserModel<S>& model, const NoiseSchedule& sched,
                             Rng& rng, const Shape& img_shape) {
  BatchPredictor<S> predictor = [&model](const BasicTensor<S>& x_t, const BasicTensor<S>& x_lq,
                                         int t, const TrainSample<S>& sample) {
    auto priors = charprior::assemble_priors(model.cfg.prior_mode, sample.detected, model.encoder);
    return denoiser::predict_noise(model, x_t, x_lq, t, priors);
  };
  return training_loss(batch, predictor, sched, rng, img_shape);
}

// Model-backed predictor for restoration; priors are assembled once per
// image (no gradients).
template <class S>
Predictor<S> model_predictor(const denoiser::DenoiserModel<S>& model,
                             const std::vector<S>& x_lq, const Shape& img_shape,
                             const charprior::PriorSet<S>& priors,
                             denoiser::MidCapture* capture = nullptr) {
  BasicTensor<S> lq_tensor(img_shape, x_lq);
  return [&model, lq_tensor, img_shape, priors, capture](const std::vector<S>& x_t,
                                                         int t) -> std::vector<S> {
    NoGradGuard no_grad;
    BasicTensor<S> x_t_tensor(img_shape, x_t);
    auto out = denoiser::predict_noise(model, x_t_tensor, lq_tensor, t, priors, capture);
    return out.data();
  };
}

// Pixel normalization: files store [0,255], model space is [-1,1].
template <class S>
std::vector<S> to_model_range(const Image& img) {
  // interleaved -> planar [ch,H,W]
  std::vector<S> out(img.pixels.size());
  size_t plane = static_cast<size_t>(img.width) * img.height;
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < img.channels; ++c)
      out[static_cast<size_t>(c) * plane + p] =
          static_cast<S>(img.pixels[p * img.channels + c] / 127.5 - 1.0);
  return out;
}

template <class S>
Image from_model_range(const std::vector<S>& data, int w, int h, int ch) {
  Image img(w, h, ch);
  size_t plane = static_cast<size_t>(w) * h;
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < ch; ++c) {
      double v = (static_cast<double>(data[static_cast<size_t>(c) * plane + p]) + 1.0) * 127.5;
      img.pixels[p * ch + c] = static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
    }
  return img;
}

}  // namespace chardiff::diffusion
