#include <doctest.h>

#include <cmath>
#include <vector>

#include "chardiff/charm.hpp"
#include "chardiff/rng.hpp"
#include "gradcheck.hpp"

using namespace chardiff;
using namespace chardiff::charm;
using charprior::CharPrior;
using charprior::SpatialMask;
using chardiff::testing::gradcheck;

namespace {

SpatialMask mask_from(int w, int h, const std::vector<uint8_t>& cells) {
  SpatialMask m;
  m.w = w;
  m.h = h;
  m.cells = cells;
  return m;
}

DTensor randt(Shape shape, Rng& rng) {
  DTensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

// Brute-force reference for the unmasked cross-attention update, written
// directly from the formulas with plain double loops. Shares nothing with
// the tensor library.
std::vector<double> dense_reference(const std::vector<double>& f,
                                    const std::vector<std::vector<double>>& embeddings,
                                    const std::vector<double>& wq, const std::vector<double>& wk,
                                    const std::vector<double>& wv, int c, int hw) {
  auto matvec = [&](const std::vector<double>& m, const std::vector<double>& x) {
    std::vector<double> y(static_cast<size_t>(c), 0.0);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) y[i] += m[static_cast<size_t>(i) * c + j] * x[static_cast<size_t>(j)];
    return y;
  };
  std::vector<double> q(static_cast<size_t>(c) * hw, 0.0);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < hw; ++p)
        q[static_cast<size_t>(i) * hw + p] += wq[static_cast<size_t>(i) * c + j] * f[static_cast<size_t>(j) * hw + p];

  std::vector<double> out = f;
  for (const auto& e : embeddings) {
    auto key = matvec(wk, e);
    auto value = matvec(wv, e);
    std::vector<double> logits(static_cast<size_t>(hw), 0.0);
    for (int p = 0; p < hw; ++p) {
      for (int i = 0; i < c; ++i) logits[static_cast<size_t>(p)] += q[static_cast<size_t>(i) * hw + p] * key[static_cast<size_t>(i)];
      logits[static_cast<size_t>(p)] /= std::sqrt(static_cast<double>(c));
    }
    double z = 0;
    std::vector<double> attn(static_cast<size_t>(hw));
    for (int p = 0; p < hw; ++p) {
      attn[static_cast<size_t>(p)] = std::exp(logits[static_cast<size_t>(p)]);
      z += attn[static_cast<size_t>(p)];
    }
    for (int p = 0; p < hw; ++p) attn[static_cast<size_t>(p)] /= z;
    for (int i = 0; i < c; ++i)
      for (int p = 0; p < hw; ++p)
        out[static_cast<size_t>(i) * hw + p] += value[static_cast<size_t>(i)] * attn[static_cast<size_t>(p)];
  }
  return out;
}

}  // namespace

TEST_CASE("empty prior list returns the feature map unchanged") {
  Rng rng(1);
  DTensor f = randt({3, 4, 4}, rng);
  auto params = CharmParams<double>::init(3, rng);
  auto out = charm_forward(f, {}, params);
  CHECK(out.data() == f.data());
}

TEST_CASE("all-ones mask matches the dense brute-force reference") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Rng tr = rng.child(trial);
    int c = 2 + tr.uniform_int(4);
    int h = 2 + tr.uniform_int(3), w = 2 + tr.uniform_int(3);
    int n = 1 + tr.uniform_int(3);
    DTensor f = randt({c, h, w}, tr);
    auto params = CharmParams<double>::init(c, tr);
    std::vector<CharPrior<double>> priors;
    std::vector<std::vector<double>> embs;
    for (int i = 0; i < n; ++i) {
      DTensor e = randt({c}, tr);
      embs.push_back(e.data());
      priors.push_back({e, charprior::all_ones_mask(w, h)});
    }
    auto out = charm_forward(f, priors, params);
    auto ref = dense_reference(f.data(), embs, params.wq.data(), params.wk.data(),
                               params.wv.data(), c, h * w);
    double max_diff = 0;
    for (size_t i = 0; i < ref.size(); ++i)
      max_diff = std::max(max_diff, std::abs(out.data()[i] - ref[i]));
    CHECK(max_diff < 1e-6);
  }
}

TEST_CASE("singleton mask writes exactly V at the single cell") {
  Rng rng(3);
  int c = 4, h = 3, w = 3;
  DTensor f = randt({c, h, w}, rng);
  auto params = CharmParams<double>::init(c, rng);
  DTensor e = randt({c}, rng);
  std::vector<uint8_t> cells(static_cast<size_t>(h) * w, 0);
  cells[0] = 1;  // cell (0,0)
  std::vector<CharPrior<double>> priors = {{e, mask_from(w, h, cells)}};
  auto out = charm_forward(f, priors, params);

  // independent V = Wv e
  std::vector<double> v(static_cast<size_t>(c), 0.0);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) v[static_cast<size_t>(i)] += params.wv.data()[static_cast<size_t>(i) * c + j] * e.data()[static_cast<size_t>(j)];

  for (int ci = 0; ci < c; ++ci)
    for (int p = 0; p < h * w; ++p) {
      double got = out.data()[static_cast<size_t>(ci) * h * w + p];
      double orig = f.data()[static_cast<size_t>(ci) * h * w + p];
      if (p == 0)
        CHECK(got == doctest::Approx(orig + v[static_cast<size_t>(ci)]).epsilon(1e-12));
      else
        CHECK(got == orig);  // bit-identical outside the mask
    }
}

TEST_CASE("disjoint priors decompose into independent deltas") {
  Rng rng(9);
  int c = 3, h = 2, w = 4;
  DTensor f = randt({c, h, w}, rng);
  auto params = CharmParams<double>::init(c, rng);
  DTensor e1 = randt({c}, rng), e2 = randt({c}, rng);
  std::vector<uint8_t> m1(static_cast<size_t>(h) * w, 0), m2(static_cast<size_t>(h) * w, 0);
  for (int p = 0; p < h * w; ++p) (p < h * w / 2 ? m1 : m2)[static_cast<size_t>(p)] = 1;
  CharPrior<double> p1{e1, mask_from(w, h, m1)}, p2{e2, mask_from(w, h, m2)};

  auto both = charm_forward(f, {p1, p2}, params);
  auto only1 = charm_forward(f, {p1}, params);
  auto only2 = charm_forward(f, {p2}, params);
  for (size_t i = 0; i < both.numel(); ++i) {
    double sum_of_deltas = (only1.data()[i] - f.data()[i]) + (only2.data()[i] - f.data()[i]);
    CHECK(both.data()[i] == doctest::Approx(f.data()[i] + sum_of_deltas).epsilon(1e-12));
  }
}

TEST_CASE("zero leakage outside the mask union") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Rng tr = rng.child(trial);
    int c = 1 + tr.uniform_int(8);
    int h = 1 + tr.uniform_int(8), w = 1 + tr.uniform_int(8);
    int n = 1 + tr.uniform_int(4);
    DTensor f = randt({c, h, w}, tr);
    auto params = CharmParams<double>::init(c, tr);
    std::vector<CharPrior<double>> priors;
    std::vector<uint8_t> covered(static_cast<size_t>(h) * w, 0);
    for (int i = 0; i < n; ++i) {
      std::vector<uint8_t> cells(static_cast<size_t>(h) * w, 0);
      for (auto& cv : cells) cv = tr.uniform() < 0.3 ? 1 : 0;
      for (size_t p = 0; p < cells.size(); ++p) covered[p] |= cells[p];
      priors.push_back({randt({c}, tr), mask_from(w, h, cells)});
    }
    auto out = charm_forward(f, priors, params);
    for (int ci = 0; ci < c; ++ci)
      for (int p = 0; p < h * w; ++p)
        if (!covered[static_cast<size_t>(p)]) {
          // bit-identical, not merely close
          CHECK(out.data()[static_cast<size_t>(ci) * h * w + p] ==
                f.data()[static_cast<size_t>(ci) * h * w + p]);
        }
  }
}

TEST_CASE("attention maps normalize to 1 over masked positions") {
  Rng rng(23);
  int c = 4, h = 4, w = 4;
  DTensor f = randt({c, h, w}, rng);
  auto params = CharmParams<double>::init(c, rng);
  std::vector<CharPrior<double>> priors;
  for (int i = 0; i < 3; ++i) {
    std::vector<uint8_t> cells(static_cast<size_t>(h) * w, 0);
    for (auto& cv : cells) cv = rng.uniform() < 0.4 ? 1 : 0;
    cells[static_cast<size_t>(rng.uniform_int(h * w))] = 1;
    priors.push_back({randt({c}, rng), mask_from(w, h, cells)});
  }
  CharmDump dump;
  charm_forward(f, priors, params, &dump);
  REQUIRE(dump.attention.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    double sum = 0;
    for (int p = 0; p < h * w; ++p) {
      double a = dump.attention[i][static_cast<size_t>(p)];
      CHECK(a >= 0.0);
      if (!priors[i].mask.cells[static_cast<size_t>(p)]) CHECK(a == 0.0);
      sum += a;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("permuting priors leaves the output unchanged") {
  Rng rng(31);
  int c = 3, h = 3, w = 3;
  DTensor f = randt({c, h, w}, rng);
  auto params = CharmParams<double>::init(c, rng);
  std::vector<CharPrior<double>> priors;
  for (int i = 0; i < 3; ++i) {
    std::vector<uint8_t> cells(static_cast<size_t>(h) * w, 0);
    for (auto& cv : cells) cv = rng.uniform() < 0.5 ? 1 : 0;
    cells[static_cast<size_t>(i)] = 1;
    priors.push_back({randt({c}, rng), mask_from(w, h, cells)});
  }
  auto a = charm_forward(f, priors, params);
  std::vector<CharPrior<double>> permuted = {priors[2], priors[0], priors[1]};
  auto b = charm_forward(f, permuted, params);
  for (size_t i = 0; i < a.numel(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("an all-zero mask contributes nothing and warns") {
  Rng rng(37);
  int c = 3, h = 2, w = 2;
  DTensor f = randt({c, h, w}, rng);
  auto params = CharmParams<double>::init(c, rng);
  std::vector<uint8_t> zeros(static_cast<size_t>(h) * w, 0);
  bool warning = false;
  auto out = charm_forward<double>(f, {{randt({c}, rng), mask_from(w, h, zeros)}}, params,
                                   nullptr, &warning);
  CHECK(warning);
  CHECK(out.data() == f.data());
}

TEST_CASE("gradients through charm match finite differences") {
  Rng rng(41);
  int c = 2, h = 3, w = 3;
  DTensor f = randt({c, h, w}, rng);
  auto params = CharmParams<double>::init(c, rng);
  DTensor e1 = randt({c}, rng), e2 = randt({c}, rng);
  std::vector<uint8_t> m1(static_cast<size_t>(h) * w, 1), m2(static_cast<size_t>(h) * w, 0);
  for (int p = 0; p < h * w; p += 2) m2[static_cast<size_t>(p)] = 1;
  f.set_requires_grad();
  params.wq.set_requires_grad();
  params.wk.set_requires_grad();
  params.wv.set_requires_grad();
  e1.set_requires_grad();
  e2.set_requires_grad();
  DTensor target = randt({c, h, w}, rng);

  auto res = gradcheck({f, params.wq, params.wk, params.wv, e1, e2}, [&] {
    std::vector<CharPrior<double>> priors = {{e1, mask_from(w, h, m1)}, {e2, mask_from(w, h, m2)}};
    return mse(charm_forward(f, priors, params), target);
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("literal multiplicative masking leaks outside the region") {
  Rng rng(43);
  int c = 3, h = 2, w = 2;
  DTensor f = randt({c, h, w}, rng);
  auto params = CharmParams<double>::init(c, rng);
  params.literal_eq3 = true;
  DTensor e = randt({c}, rng);
  std::vector<uint8_t> cells = {1, 0, 0, 0};
  auto out = charm_forward<double>(f, {{e, mask_from(w, h, cells)}}, params);
  // masked-out positions keep exp(0) softmax weight, so they shift too
  int changed_outside = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int p = 1; p < h * w; ++p)
      if (out.data()[static_cast<size_t>(ci) * h * w + p] != f.data()[static_cast<size_t>(ci) * h * w + p])
        ++changed_outside;
  CHECK(changed_outside > 0);
}

TEST_CASE("charm shape validation") {
  Rng rng(47);
  DTensor f = randt({3, 2, 2}, rng);
  auto params = CharmParams<double>::init(3, rng);
  std::vector<uint8_t> bad_cells(6, 1);
  CHECK_THROWS_AS(
      charm_forward<double>(f, {{randt({3}, rng), mask_from(3, 2, bad_cells)}}, params),
      ShapeError);
  CHECK_THROWS_AS(
      charm_forward<double>(f, {{randt({4}, rng), charprior::all_ones_mask(2, 2)}}, params),
      ShapeError);
}
