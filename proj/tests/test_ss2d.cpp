#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dass/ss2d.hpp"
#include "oracles.hpp"

using namespace dass;

namespace {

Map3<double> random_map(Rng& rng, int h, int w, int c) {
  Map3<double> m(h, w, c);
  for (auto& v : m.v) v = rng.normal();
  return m;
}

Ss2dLayer make_layer(ParamLayout& layout, int d, int n, int r, bool tied = false) {
  Ss2dLayer layer;
  layer.build(layout, "ss2d", d, n, r, tied);
  return layer;
}

}  // namespace

TEST_CASE("directional_unfold: 2x2 enumerations") {
  Map3<double> m(2, 2, 1);
  m(0, 0, 0) = 1;  // a
  m(0, 1, 0) = 2;  // b
  m(1, 0, 0) = 3;  // c
  m(1, 1, 0) = 4;  // d

  auto ltr = directional_unfold(m, ScanDirection::LeftToRight);
  CHECK(ltr(0, 0) == 1);
  CHECK(ltr(1, 0) == 2);
  CHECK(ltr(2, 0) == 3);
  CHECK(ltr(3, 0) == 4);

  auto ttb = directional_unfold(m, ScanDirection::TopToBottom);
  CHECK(ttb(0, 0) == 1);
  CHECK(ttb(1, 0) == 3);
  CHECK(ttb(2, 0) == 2);
  CHECK(ttb(3, 0) == 4);

  auto btt = directional_unfold(m, ScanDirection::BottomToTop);
  CHECK(btt(0, 0) == 4);
  CHECK(btt(1, 0) == 2);
  CHECK(btt(2, 0) == 3);
  CHECK(btt(3, 0) == 1);

  auto rtl = directional_unfold(m, ScanDirection::RightToLeft);
  CHECK(rtl(0, 0) == 4);
  CHECK(rtl(1, 0) == 3);
  CHECK(rtl(2, 0) == 2);
  CHECK(rtl(3, 0) == 1);
}

TEST_CASE("directional unfold/refold round-trips bit-exactly") {
  Rng rng(7);
  for (int it = 0; it < 8; ++it) {
    int h = 1 + int(rng.uniform_int(0, 31));
    int w = 1 + int(rng.uniform_int(0, 31));
    int c = 1 + int(rng.uniform_int(0, 4));
    Map3<double> m = random_map(rng, h, w, c);
    for (ScanDirection dir : kAllDirections) {
      auto seq = directional_unfold(m, dir);
      auto back = directional_refold(seq, h, w, dir);
      REQUIRE(back.v.size() == m.v.size());
      for (std::size_t i = 0; i < m.v.size(); ++i) CHECK(back.v[i] == m.v[i]);
    }
  }
}

TEST_CASE("H=1: LeftToRight and TopToBottom unfolds coincide") {
  Rng rng(8);
  Map3<double> m = random_map(rng, 1, 7, 3);
  auto a = directional_unfold(m, ScanDirection::LeftToRight);
  auto b = directional_unfold(m, ScanDirection::TopToBottom);
  for (std::size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]);
}

TEST_CASE("ss2d_apply: zero input gives zero output, shape preserved") {
  ParamLayout layout;
  Ss2dLayer layer = make_layer(layout, 4, 2, 1);
  std::vector<double> theta(layout.total());
  Rng rng(9);
  layer.init(theta.data(), rng);

  Map3<double> zero(5, 3, 4);
  auto out = ss2d_apply(layer, theta, zero);
  CHECK(out.h == 5);
  CHECK(out.w == 3);
  CHECK(out.c == 4);
  for (double v : out.v) CHECK(v == 0.0);
}

TEST_CASE("ss2d_apply: equals four independent sequential scans summed") {
  Rng rng(10);
  const int D = 4, N = 3, R = 2;
  ParamLayout layout;
  Ss2dLayer layer = make_layer(layout, D, N, R);
  std::vector<double> theta(layout.total());
  layer.init(theta.data(), rng);
  // randomize everything, including a_log, so the oracle is non-trivial
  for (auto& v : theta) v += 0.3 * rng.normal();

  Map3<double> x = random_map(rng, 3, 2, D);
  auto got = layer.forward(theta.data(), x);

  // independent oracle: recompute each branch with plain loops
  Map3<double> want(x.h, x.w, D);
  const int L = x.h * x.w;
  for (int k = 0; k < 4; ++k) {
    const auto& dp = layer.dir[std::size_t(k)];
    auto seq = directional_unfold(x, kAllDirections[std::size_t(k)]);
    // projections
    std::vector<double> dt_low(std::size_t(L) * R, 0.0), bm(std::size_t(L) * N, 0.0),
        cm(std::size_t(L) * N, 0.0), delta(std::size_t(L) * D, 0.0);
    for (int l = 0; l < L; ++l) {
      for (int o = 0; o < R + 2 * N; ++o) {
        double acc = 0;
        for (int i = 0; i < D; ++i)
          acc += seq(l, i) * theta[dp.x_proj.off + std::size_t(o) * D + std::size_t(i)];
        if (o < R)
          dt_low[std::size_t(l) * R + std::size_t(o)] = acc;
        else if (o < R + N)
          bm[std::size_t(l) * N + std::size_t(o - R)] = acc;
        else
          cm[std::size_t(l) * N + std::size_t(o - R - N)] = acc;
      }
      for (int c = 0; c < D; ++c) {
        double acc = theta[dp.dt_b.off + std::size_t(c)];
        for (int i = 0; i < R; ++i)
          acc += dt_low[std::size_t(l) * R + std::size_t(i)] *
                 theta[dp.dt_w.off + std::size_t(c) * R + std::size_t(i)];
        delta[std::size_t(l) * D + std::size_t(c)] = std::log1p(std::exp(acc));
      }
    }
    // per-channel sequential scan through the shared reference loop
    Mat<double> ybranch(L, D);
    for (int c = 0; c < D; ++c) {
      std::vector<double> av(std::size_t(N), 0.0), xv(std::size_t(L), 0.0), dv(std::size_t(L), 0.0),
          h0(std::size_t(N), 0.0);
      for (int i = 0; i < N; ++i)
        av[std::size_t(i)] = -std::exp(theta[dp.a_log.off + std::size_t(c) * N + std::size_t(i)]);
      for (int l = 0; l < L; ++l) {
        xv[std::size_t(l)] = seq(l, c);
        dv[std::size_t(l)] = delta[std::size_t(l) * D + std::size_t(c)];
      }
      auto y = oracles::selective_scan_ref_1ch(av, xv, dv, bm, cm, h0);
      for (int l = 0; l < L; ++l) ybranch(l, c) = y[std::size_t(l)];
    }
    auto part = directional_refold(ybranch, x.h, x.w, kAllDirections[std::size_t(k)]);
    for (std::size_t i = 0; i < want.v.size(); ++i) want.v[i] += part.v[i];
  }

  for (std::size_t i = 0; i < want.v.size(); ++i)
    CHECK(std::fabs(got.v[i] - want.v[i]) < 1e-12);
}

TEST_CASE("mirror symmetry on single-row maps with tied directions") {
  // For H=1 a left-right mirror reverses the raster order exactly, so with
  // shared parameters the LeftToRight branch of the mirrored map equals the
  // mirrored RightToLeft branch of the original.
  Rng rng(11);
  const int D = 3, W = 9;
  ParamLayout layout;
  Ss2dLayer layer = make_layer(layout, D, 2, 1, /*tied=*/true);
  std::vector<double> theta(layout.total());
  layer.init(theta.data(), rng);
  for (auto& v : theta) v += 0.2 * rng.normal();

  Map3<double> x = random_map(rng, 1, W, D);
  Map3<double> xm(1, W, D);
  for (int j = 0; j < W; ++j)
    for (int k = 0; k < D; ++k) xm(0, j, k) = x(0, W - 1 - j, k);

  auto ltr_m = layer.forward_direction(theta.data(), xm, 0);
  auto rtl = layer.forward_direction(theta.data(), x, 1);
  for (int j = 0; j < W; ++j)
    for (int k = 0; k < D; ++k) CHECK(ltr_m(0, j, k) == rtl(0, W - 1 - j, k));
}

TEST_CASE("rot180 symmetry on general maps with tied directions") {
  Rng rng(12);
  const int D = 2, H = 4, W = 3;
  ParamLayout layout;
  Ss2dLayer layer = make_layer(layout, D, 2, 1, /*tied=*/true);
  std::vector<double> theta(layout.total());
  layer.init(theta.data(), rng);
  for (auto& v : theta) v += 0.2 * rng.normal();

  Map3<double> x = random_map(rng, H, W, D);
  Map3<double> xr(H, W, D);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int k = 0; k < D; ++k) xr(i, j, k) = x(H - 1 - i, W - 1 - j, k);

  auto ltr_r = layer.forward_direction(theta.data(), xr, 0);
  auto rtl = layer.forward_direction(theta.data(), x, 1);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int k = 0; k < D; ++k) CHECK(ltr_r(i, j, k) == rtl(H - 1 - i, W - 1 - j, k));
}

TEST_CASE("ss2d gradients match finite differences") {
  Rng rng(13);
  const int D = 3, N = 2, R = 1, H = 3, W = 2;
  ParamLayout layout;
  Ss2dLayer layer = make_layer(layout, D, N, R);
  std::vector<double> theta(layout.total());
  layer.init(theta.data(), rng);
  for (auto& v : theta) v += 0.1 * rng.normal();

  Map3<double> x = random_map(rng, H, W, D);
  Map3<double> w = random_map(rng, H, W, D);  // random linear functional

  auto loss_of = [&](const std::vector<double>& th, const Map3<double>& xx) {
    auto y = layer.forward(th.data(), xx);
    double s = 0;
    for (std::size_t i = 0; i < y.v.size(); ++i) s += w.v[i] * y.v[i];
    return s;
  };

  Ss2dLayer::Cache<double> cache;
  layer.forward(theta.data(), x, &cache);
  std::vector<double> grad(layout.total(), 0.0);
  Map3<double> dx;
  layer.backward(theta.data(), x, cache, w, &dx, grad.data());

  const double eps = 1e-6;
  std::vector<double> th = theta;
  for (std::size_t i = 0; i < th.size(); ++i) {
    double orig = th[i];
    th[i] = orig + eps;
    double fp = loss_of(th, x);
    th[i] = orig - eps;
    double fm = loss_of(th, x);
    th[i] = orig;
    CHECK(oracles::rel_err(grad[i], (fp - fm) / (2 * eps)) < 1e-4);
  }
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    double orig = x.v[i];
    x.v[i] = orig + eps;
    double fp = loss_of(theta, x);
    x.v[i] = orig - eps;
    double fm = loss_of(theta, x);
    x.v[i] = orig;
    CHECK(oracles::rel_err(dx.v[i], (fp - fm) / (2 * eps)) < 1e-4);
  }
}
