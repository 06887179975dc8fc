#pragma once

#include <cmath>
#include <vector>

#include "chardiff/charprior.hpp"
#include "chardiff/tensor.hpp"

namespace chardiff::charm {

// Shared cross-attention projections; one key/value per character. The
// kernel-size-1 1D convolution that expands an embedding is exactly a dense
// CxC projection, which is what these are.
template <class S>
struct CharmParams {
  int dim = 0;
  BasicTensor<S> wq, wk, wv;  // [C, C]
  // Keeps the multiplicative masking of the printed attention formula
  // (mask * logits inside the softmax) for comparison runs. The default
  // excludes masked positions from the softmax entirely so attention is
  // exactly zero outside the character region.
  bool literal_eq3 = false;

  static CharmParams init(int dim, Rng& rng) {
    CharmParams p;
    p.dim = dim;
    S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dim)));
    p.wq = BasicTensor<S>::randn({dim, dim}, rng, scale);
    p.wk = BasicTensor<S>::randn({dim, dim}, rng, scale);
    p.wv = BasicTensor<S>::randn({dim, dim}, rng, scale);
    return p;
  }
};

struct CharmDump {
  std::vector<std::vector<float>> attention;  // one [H*W] map per character
  int w = 0, h = 0;
};

// Region-masked cross-attention with a residual sum over characters:
//   Q = Wq . flatten(F)            [C, HW]
//   K_i = Wk e_i, V_i = Wv e_i     [C, 1]
//   A_i = softmax over masked positions of (Q^T K_i) / sqrt(C)
//   F'  = F + sum_i V_i A_i^T
// Positions outside every mask are returned bit-identical to the input. An
// all-zero mask contributes nothing and raises the warning flag.
template <class S>
BasicTensor<S> charm_forward(const BasicTensor<S>& f,
                             const std::vector<charprior::CharPrior<S>>& priors,
                             const CharmParams<S>& params, CharmDump* dump = nullptr,
                             bool* empty_mask_warning = nullptr) {
  if (f.rank() != 3) throw ShapeError("charm: feature map must be [C,H,W], got " + shape_str(f.shape()));
  if (priors.empty()) return f;

  int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  int hw = h * w;
  if (params.dim != c)
    throw ShapeError("charm: params dim " + std::to_string(params.dim) + " != feature channels " +
                     std::to_string(c));
  for (const auto& p : priors) {
    if (p.embedding.rank() != 1 || p.embedding.dim(0) != c)
      throw ShapeError("charm: embedding " + shape_str(p.embedding.shape()) +
                       " does not match C=" + std::to_string(c));
    if (p.mask.w != w || p.mask.h != h)
      throw ShapeError("charm: mask " + std::to_string(p.mask.w) + "x" + std::to_string(p.mask.h) +
                       " does not match feature grid " + std::to_string(w) + "x" +
                       std::to_string(h));
  }
  if (dump) {
    dump->attention.clear();
    dump->w = w;
    dump->h = h;
  }

  auto flat = reshape(f, {c, hw});
  auto q = matmul(params.wq, flat);  // [C, HW]
  S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(c)));

  BasicTensor<S> residual;
  bool first = true;
  for (const auto& prior : priors) {
    if (!prior.mask.any()) {
      if (empty_mask_warning) *empty_mask_warning = true;
      continue;
    }
    auto e_col = reshape(prior.embedding, {c, 1});
    auto key = matmul(params.wk, e_col);    // [C,1]
    auto value = matmul(params.wv, e_col);  // [C,1]
    auto logits = mul_scalar(reshape(matmul(transpose(q), key), {hw}), inv_sqrt_d);

    BasicTensor<S> attn;
    if (params.literal_eq3) {
      // softmax(mask * logits): masked-out positions keep exp(0) weight
      BasicTensor<S> mf({hw});
      for (int i = 0; i < hw; ++i) mf.ptr()[i] = static_cast<S>(prior.mask.cells[static_cast<size_t>(i)]);
      attn = softmax(mul(logits, mf), 0);
    } else {
      attn = masked_softmax(logits, prior.mask.cells);
    }
    if (dump) {
      std::vector<float> a(static_cast<size_t>(hw));
      for (int i = 0; i < hw; ++i) a[static_cast<size_t>(i)] = static_cast<float>(attn.ptr()[i]);
      dump->attention.push_back(std::move(a));
    }
    auto h_i = matmul(value, reshape(attn, {1, hw}));  // [C, HW]
    residual = first ? h_i : add(residual, h_i);
    first = false;
  }
  if (first) return f;  // every mask was empty
  return add(f, reshape(residual, {c, h, w}));
}

}  // namespace chardiff::charm
