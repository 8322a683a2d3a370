#pragma once

// 1-D state-space kernels.
//
// Continuous system (diagonal A):
//   h'(t) = A h(t) + B x(t),   y(t) = C h(t)
// ZOH discretization at step size dt:
//   a_bar = exp(dt*A)
//   b_bar = A^{-1} (exp(dt*A) - 1) B = psi(dt, A) * B
// with psi(dt, a) = expm1(dt*a)/a, evaluated by a 3-term series for
// |dt*a| < 1e-6 to avoid cancellation. The discrete recurrence
//   h_t = a_bar (.) h_{t-1} + b_bar x_t,   y_t = c . h_t
// admits a convolutional view with kernel K[k] = c . (a_bar^k (.) b_bar).
//
// The selective scan makes dt, B, C per-step inputs; the recurrence is then
// an affine map per state dimension, which is what parallel_scan composes.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dass/common.hpp"

namespace dass {

template <typename T>
inline T softplus(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

// Inverse of softplus; used to initialize dt biases.
template <typename T>
inline T softplus_inverse(T y) {
  if (y > T(30)) return y;
  return std::log(std::expm1(y));
}

// psi(dt, a) = (exp(dt*a) - 1) / a; psi(dt, 0) = dt.
template <typename T>
inline T zoh_psi(T dt, T a) {
  T x = dt * a;
  if (std::fabs(double(x)) < 1e-6) return dt * (T(1) + x / T(2) + x * x / T(6));
  return std::expm1(x) / a;
}

// d psi / d a at fixed dt.
template <typename T>
inline T zoh_psi_da(T dt, T a, T a_bar, T psi) {
  T x = dt * a;
  if (std::fabs(double(x)) < 1e-6) return dt * dt * (T(0.5) + x / T(3) + x * x / T(8));
  return (dt * a_bar - psi) / a;
}

// Continuous per-channel parameters. A is stored as a_log with
// A_i = -exp(a_log_i), which keeps every pole strictly negative.
template <typename T>
struct SsmParams {
  std::vector<T> a_log;  // length N
  std::vector<T> b;      // length N
  std::vector<T> c;      // length N
  T delta_bias = T(0);   // pre-activation for dt (softplus applied upstream)
  int state_size = 0;

  void validate() const {
    require_param(state_size >= 1, "SsmParams: state_size must be >= 1");
    require_param(int(a_log.size()) == state_size && int(b.size()) == state_size &&
                      int(c.size()) == state_size,
                  "SsmParams: vector lengths must equal state_size");
    require_param(all_finite(a_log) && all_finite(b) && all_finite(c) &&
                      std::isfinite(double(delta_bias)),
                  "SsmParams: non-finite entry");
  }

  std::vector<T> a() const {
    std::vector<T> out(a_log.size());
    for (std::size_t i = 0; i < a_log.size(); ++i) out[i] = -std::exp(a_log[i]);
    return out;
  }
};

template <typename T>
struct DiscreteSsm {
  std::vector<T> a_bar;
  std::vector<T> b_bar;
};

// Raw interface: takes the diagonal of A directly (A = 0 is allowed and goes
// through the series branch).
template <typename T>
DiscreteSsm<T> zoh_discretize_raw(const std::vector<T>& a, const std::vector<T>& b, T delta) {
  require_param(std::isfinite(double(delta)) && delta > T(0),
                "zoh_discretize: delta must be positive and finite");
  require_param(a.size() == b.size(), "zoh_discretize: a/b length mismatch");
  require_param(all_finite(a) && all_finite(b), "zoh_discretize: non-finite input");
  DiscreteSsm<T> out;
  out.a_bar.resize(a.size());
  out.b_bar.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.a_bar[i] = std::exp(delta * a[i]);
    out.b_bar[i] = zoh_psi(delta, a[i]) * b[i];
  }
  return out;
}

template <typename T>
DiscreteSsm<T> zoh_discretize(const SsmParams<T>& params, T delta) {
  params.validate();
  return zoh_discretize_raw(params.a(), params.b, delta);
}

// Adjoint of zoh_discretize_raw: accumulates into da, db, ddelta.
template <typename T>
void zoh_backward_raw(const std::vector<T>& a, const std::vector<T>& b, T delta,
                      const std::vector<T>& d_a_bar, const std::vector<T>& d_b_bar,
                      std::vector<T>& da, std::vector<T>& db, T& ddelta) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    T a_bar = std::exp(delta * a[i]);
    T psi = zoh_psi(delta, a[i]);
    T dpsi = d_b_bar[i] * b[i];
    db[i] += d_b_bar[i] * psi;
    // d a_bar/d dt = a*a_bar, d psi/d dt = a_bar
    ddelta += d_a_bar[i] * a[i] * a_bar + dpsi * a_bar;
    da[i] += d_a_bar[i] * delta * a_bar + dpsi * zoh_psi_da(delta, a[i], a_bar, psi);
  }
}

enum class ScanMode { Sequential, ParallelTree };

// Affine map y = a*x + b, composed as (a2,b2) o (a1,b1) = (a2*a1, a2*b1 + b2).
template <typename T>
struct ScanElement {
  T a = T(1);
  T b = T(0);
};

// Applies `earlier` first, then `later`.
template <typename T>
inline ScanElement<T> compose(const ScanElement<T>& later, const ScanElement<T>& earlier) {
  return {later.a * earlier.a, later.a * earlier.b + later.b};
}

// Inclusive prefix composition via a Blelloch up/down sweep on an
// identity-padded power-of-two array. out[t] = e_t o ... o e_0.
template <typename T>
std::vector<ScanElement<T>> parallel_scan(const std::vector<ScanElement<T>>& elems) {
  require_arg(!elems.empty(), "parallel_scan: empty input");
  const std::size_t n = elems.size();
  std::size_t n2 = 1;
  while (n2 < n) n2 <<= 1;
  std::vector<ScanElement<T>> w(n2);
  std::copy(elems.begin(), elems.end(), w.begin());
  // upsweep
  for (std::size_t d = 1; d < n2; d <<= 1)
    for (std::size_t i = 2 * d - 1; i < n2; i += 2 * d) w[i] = compose(w[i], w[i - d]);
  // downsweep -> exclusive prefixes
  w[n2 - 1] = ScanElement<T>{};
  for (std::size_t d = n2 >> 1; d >= 1; d >>= 1) {
    for (std::size_t i = 2 * d - 1; i < n2; i += 2 * d) {
      ScanElement<T> left_total = w[i - d];
      w[i - d] = w[i];
      // incoming prefix first, then the left subtree
      w[i] = compose(left_total, w[i]);
    }
    if (d == 1) break;
  }
  std::vector<ScanElement<T>> out(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = compose(elems[t], w[t]);
  return out;
}

// LTI recurrence, left to right. h0 may be empty (treated as zero state).
template <typename T>
std::vector<T> recurrent_scan(const DiscreteSsm<T>& disc, const std::vector<T>& c,
                              const std::vector<T>& x, const std::vector<T>& h0,
                              ScanMode mode = ScanMode::Sequential) {
  const std::size_t n = disc.a_bar.size();
  require_shape(disc.b_bar.size() == n && c.size() == n, "recurrent_scan: state size mismatch");
  require_shape(h0.empty() || h0.size() == n, "recurrent_scan: h0 length mismatch");
  require_shape(!x.empty(), "recurrent_scan: empty input sequence");
  const std::size_t L = x.size();
  std::vector<T> y(L, T(0));
  if (mode == ScanMode::Sequential) {
    std::vector<T> h(h0.empty() ? std::vector<T>(n, T(0)) : h0);
    for (std::size_t t = 0; t < L; ++t) {
      T acc = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        h[i] = disc.a_bar[i] * h[i] + disc.b_bar[i] * x[t];
        acc += c[i] * h[i];
      }
      y[t] = acc;
    }
    return y;
  }
  // Tree mode: one prefix composition per state dimension.
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<ScanElement<T>> e(L);
    for (std::size_t t = 0; t < L; ++t) e[t] = {disc.a_bar[i], disc.b_bar[i] * x[t]};
    auto pre = parallel_scan(e);
    T hi0 = h0.empty() ? T(0) : h0[i];
    for (std::size_t t = 0; t < L; ++t) y[t] += c[i] * (pre[t].a * hi0 + pre[t].b);
  }
  return y;
}

// Global convolutional kernel K[k] = c . (a_bar^k (.) b_bar), k = 0..L-1.
template <typename T>
std::vector<T> conv_kernel(const DiscreteSsm<T>& disc, const std::vector<T>& c, int len) {
  const std::size_t n = disc.a_bar.size();
  require_shape(disc.b_bar.size() == n && c.size() == n, "conv_kernel: state size mismatch");
  require_arg(len >= 1, "conv_kernel: L must be >= 1");
  std::vector<T> k(std::size_t(len), T(0));
  std::vector<T> pow_b(disc.b_bar);
  for (int t = 0; t < len; ++t) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += c[i] * pow_b[i];
    k[std::size_t(t)] = acc;
    for (std::size_t i = 0; i < n; ++i) pow_b[i] *= disc.a_bar[i];
  }
  return k;
}

// Causal convolution y_t = sum_{k<=t} K[k] x_{t-k}.
template <typename T>
std::vector<T> conv_apply(const std::vector<T>& kernel, const std::vector<T>& x) {
  require_shape(kernel.size() == x.size(), "conv_apply: kernel/input length mismatch");
  const std::size_t L = x.size();
  std::vector<T> y(L, T(0));
  for (std::size_t t = 0; t < L; ++t) {
    T acc = T(0);
    for (std::size_t k = 0; k <= t; ++k) acc += kernel[k] * x[t - k];
    y[t] = acc;
  }
  return y;
}

// ---- selective scan ----
//
// x:      L x D   input sequence
// a:      D x N   diagonal of continuous A (strictly negative in the model)
// delta:  L x D   per-step timescales, > 0
// bmat:   L x N   per-step input projections (shared across channels)
// cmat:   L x N   per-step output projections (shared across channels)
// h0:     D x N   initial state (empty => zeros)
// y:      L x D

template <typename T>
struct SelectiveScanCache {
  Mat<T> h;      // L x (D*N): state after the update at each step
  Mat<T> a_bar;  // L x (D*N)
  Mat<T> psi;    // L x (D*N)
};

template <typename T>
void selective_scan_shapes(const Mat<T>& x, const Mat<T>& a, const Mat<T>& delta,
                           const Mat<T>& bmat, const Mat<T>& cmat, const Mat<T>& h0) {
  require_shape(x.rows >= 1 && x.cols >= 1, "selective_scan: empty input");
  const int L = x.rows, D = x.cols, N = a.cols;
  require_shape(a.rows == D && N >= 1, "selective_scan: A must be D x N");
  require_shape(delta.rows == L && delta.cols == D, "selective_scan: delta must be L x D");
  require_shape(bmat.rows == L && bmat.cols == N, "selective_scan: B must be L x N");
  require_shape(cmat.rows == L && cmat.cols == N, "selective_scan: C must be L x N");
  require_shape(h0.v.empty() || (h0.rows == D && h0.cols == N),
                "selective_scan: h0 must be D x N");
}

template <typename T>
Mat<T> selective_scan(const Mat<T>& x, const Mat<T>& a, const Mat<T>& delta, const Mat<T>& bmat,
                      const Mat<T>& cmat, const Mat<T>& h0,
                      ScanMode mode = ScanMode::Sequential,
                      SelectiveScanCache<T>* cache = nullptr) {
  selective_scan_shapes(x, a, delta, bmat, cmat, h0);
  const int L = x.rows, D = x.cols, N = a.cols;
  for (const T& dt : delta.v)
    require_param(dt > T(0), "selective_scan: delta must be positive");
  Mat<T> y(L, D);
  if (cache) {
    cache->h = Mat<T>(L, D * N);
    cache->a_bar = Mat<T>(L, D * N);
    cache->psi = Mat<T>(L, D * N);
  }
  if (mode == ScanMode::ParallelTree) {
    // Compose the per-dimension affine maps with the tree scan; used to check
    // that the sequential kernel and the parallel realization agree.
    for (int d = 0; d < D; ++d) {
      for (int i = 0; i < N; ++i) {
        std::vector<ScanElement<T>> e(std::size_t(L), ScanElement<T>{});
        for (int t = 0; t < L; ++t) {
          T dt = delta(t, d);
          T abar = std::exp(dt * a(d, i));
          T psi = zoh_psi(dt, a(d, i));
          e[std::size_t(t)] = {abar, psi * bmat(t, i) * x(t, d)};
        }
        auto pre = parallel_scan(e);
        T hi0 = h0.v.empty() ? T(0) : h0(d, i);
        for (int t = 0; t < L; ++t) y(t, d) += cmat(t, i) * (pre[std::size_t(t)].a * hi0 + pre[std::size_t(t)].b);
      }
    }
    return y;
  }
  std::vector<T> h(std::size_t(N), T(0));
  for (int d = 0; d < D; ++d) {
    if (h0.v.empty())
      std::fill(h.begin(), h.end(), T(0));
    else
      for (int i = 0; i < N; ++i) h[std::size_t(i)] = h0(d, i);
    const T* arow = a.row(d);
    for (int t = 0; t < L; ++t) {
      const T dt = delta(t, d);
      const T xd = x(t, d);
      const T* br = bmat.row(t);
      const T* cr = cmat.row(t);
      T acc = T(0);
      for (int i = 0; i < N; ++i) {
        T abar = std::exp(dt * arow[i]);
        T psi = zoh_psi(dt, arow[i]);
        T hi = abar * h[std::size_t(i)] + psi * br[i] * xd;
        h[std::size_t(i)] = hi;
        acc += cr[i] * hi;
        if (cache) {
          std::size_t idx = std::size_t(d) * N + std::size_t(i);
          cache->h(t, int(idx)) = hi;
          cache->a_bar(t, int(idx)) = abar;
          cache->psi(t, int(idx)) = psi;
        }
      }
      y(t, d) = acc;
    }
  }
  return y;
}

// Reverse-mode gradients of selective_scan. `cache` must come from the
// forward pass. Gradients are accumulated (+=) into the outputs, which must
// be pre-sized; pass nullptr for any gradient that is not needed.
template <typename T>
void selective_scan_backward(const Mat<T>& x, const Mat<T>& a, const Mat<T>& delta,
                             const Mat<T>& bmat, const Mat<T>& cmat, const Mat<T>& h0,
                             const SelectiveScanCache<T>& cache, const Mat<T>& dy, Mat<T>* dx,
                             Mat<T>* da, Mat<T>* ddelta, Mat<T>* dbmat, Mat<T>* dcmat,
                             Mat<T>* dh0) {
  selective_scan_shapes(x, a, delta, bmat, cmat, h0);
  const int L = x.rows, D = x.cols, N = a.cols;
  require_shape(dy.rows == L && dy.cols == D, "selective_scan_backward: dy shape");
  std::vector<T> dh(std::size_t(N), T(0));
  for (int d = 0; d < D; ++d) {
    std::fill(dh.begin(), dh.end(), T(0));
    const T* arow = a.row(d);
    for (int t = L - 1; t >= 0; --t) {
      const T dt = delta(t, d);
      const T xd = x(t, d);
      const T g = dy(t, d);
      const std::size_t base = std::size_t(d) * N;
      T dxd = T(0);
      T ddt = T(0);
      for (int i = 0; i < N; ++i) {
        const std::size_t idx = base + std::size_t(i);
        const T hi = cache.h(t, int(idx));
        const T abar = cache.a_bar(t, int(idx));
        const T psi = cache.psi(t, int(idx));
        const T bti = bmat(t, i);
        if (dcmat) (*dcmat)(t, i) += g * hi;
        T dhi = dh[std::size_t(i)] + g * cmat(t, i);
        const T prev = (t > 0) ? cache.h(t - 1, int(idx)) : (h0.v.empty() ? T(0) : h0(d, i));
        const T d_abar = dhi * prev;
        const T d_psi = dhi * bti * xd;
        if (dbmat) (*dbmat)(t, i) += dhi * psi * xd;
        dxd += dhi * psi * bti;
        ddt += d_abar * arow[i] * abar + d_psi * abar;
        if (da) (*da)(d, i) += d_abar * dt * abar + d_psi * zoh_psi_da(dt, arow[i], abar, psi);
        dh[std::size_t(i)] = dhi * abar;
      }
      if (dx) (*dx)(t, d) += dxd;
      if (ddelta) (*ddelta)(t, d) += ddt;
    }
    if (dh0)
      for (int i = 0; i < N; ++i) (*dh0)(d, i) += dh[std::size_t(i)];
  }
}

// ---- LTI scan with gradients through the discretization ----

template <typename T>
struct LtiScanGrads {
  std::vector<T> dx;
  std::vector<T> da_log;
  std::vector<T> db;
  std::vector<T> dc;
  std::vector<T> dh0;
  T ddelta = T(0);
};

// y = recurrent_scan(zoh_discretize(params, delta), params.c, x, h0).
// Returns gradients w.r.t. x, a_log, b, c, delta, h0 given upstream dy.
template <typename T>
LtiScanGrads<T> lti_scan_backward(const SsmParams<T>& params, T delta, const std::vector<T>& x,
                                  const std::vector<T>& h0, const std::vector<T>& dy) {
  params.validate();
  require_shape(dy.size() == x.size(), "lti_scan_backward: dy length mismatch");
  const std::size_t n = std::size_t(params.state_size), L = x.size();
  const std::vector<T> a = params.a();
  DiscreteSsm<T> disc = zoh_discretize_raw(a, params.b, delta);

  // forward, caching states
  std::vector<T> h(h0.empty() ? std::vector<T>(n, T(0)) : h0);
  std::vector<T> hs(L * n);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = disc.a_bar[i] * h[i] + disc.b_bar[i] * x[t];
      hs[t * n + i] = h[i];
    }

  LtiScanGrads<T> g;
  g.dx.assign(L, T(0));
  g.da_log.assign(n, T(0));
  g.db.assign(n, T(0));
  g.dc.assign(n, T(0));
  g.dh0.assign(n, T(0));
  std::vector<T> dh(n, T(0)), d_a_bar(n, T(0)), d_b_bar(n, T(0));
  for (std::size_t tt = L; tt-- > 0;) {
    for (std::size_t i = 0; i < n; ++i) {
      g.dc[i] += dy[tt] * hs[tt * n + i];
      T dhi = dh[i] + dy[tt] * params.c[i];
      T prev = (tt > 0) ? hs[(tt - 1) * n + i] : (h0.empty() ? T(0) : h0[i]);
      d_a_bar[i] += dhi * prev;
      d_b_bar[i] += dhi * x[tt];
      g.dx[tt] += dhi * disc.b_bar[i];
      dh[i] = dhi * disc.a_bar[i];
    }
  }
  g.dh0 = dh;

  std::vector<T> da(n, T(0));
  zoh_backward_raw(a, params.b, delta, d_a_bar, d_b_bar, da, g.db, g.ddelta);
  for (std::size_t i = 0; i < n; ++i) g.da_log[i] = da[i] * a[i];  // dA/da_log = A
  return g;
}

}  // namespace dass
