#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "chardiff/tensor.hpp"

namespace chardiff {

// Named trainable tensors in registration order. Names are stable across
// runs so checkpoints and the optimizer can address parameters.
template <class S>
struct ParamList {
  std::vector<BasicTensor<S>> params;

  BasicTensor<S>& add(const std::string& name, BasicTensor<S> t) {
    t.set_name(name);
    t.set_requires_grad(true);
    params.push_back(std::move(t));
    return params.back();
  }
  void zero_grad() {
    for (auto& p : params) p.zero_grad();
  }
  size_t total_elems() const {
    size_t n = 0;
    for (auto& p : params) n += p.numel();
    return n;
  }
};

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with decoupled weight decay: the decay shrinks the parameter before
// the bias-corrected adaptive update is applied.
template <class S>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  long step_count() const { return step_; }

  void step(ParamList<S>& params) {
    if (moments_.empty()) {
      moments_.resize(params.params.size());
      for (size_t i = 0; i < params.params.size(); ++i) {
        moments_[i].m.assign(params.params[i].numel(), S(0));
        moments_[i].v.assign(params.params[i].numel(), S(0));
      }
    }
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params.params.size(); ++i) {
      auto& p = params.params[i];
      auto g = p.grad();
      for (S gv : g)
        if (!std::isfinite(gv))
          throw NumericError("adamw: non-finite gradient in parameter '" + p.name() + "'");
      S* w = p.ptr();
      S* m = moments_[i].m.data();
      S* v = moments_[i].v.data();
      S lr = static_cast<S>(cfg_.lr);
      S wd = static_cast<S>(cfg_.weight_decay);
      S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
      for (size_t j = 0; j < g.size(); ++j) {
        w[j] -= lr * wd * w[j];
        m[j] = b1 * m[j] + (S(1) - b1) * g[j];
        v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
        S mhat = m[j] / static_cast<S>(bc1);
        S vhat = v[j] / static_cast<S>(bc2);
        w[j] -= lr * mhat / (std::sqrt(vhat) + static_cast<S>(cfg_.eps));
      }
    }
  }

 private:
  struct Moments {
    std::vector<S> m, v;
  };
  AdamWConfig cfg_;
  long step_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace chardiff
