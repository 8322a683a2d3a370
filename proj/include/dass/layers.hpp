#pragma once

// Parameter layout registry and the dense layers used by both models.
// All parameters of a model live in one flat vector ("theta"); layers hold
// named slices into it. Gradients are accumulated into a parallel flat
// vector with identical layout, which keeps the optimizer, checkpointing and
// finite-difference checks trivial.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dass/common.hpp"
#include "dass/ssm.hpp"

namespace dass {

struct Slice {
  std::size_t off = 0;
  std::size_t len = 0;
  std::vector<int> dims;
};

class ParamLayout {
 public:
  Slice add(const std::string& name, std::vector<int> dims) {
    std::size_t len = 1;
    for (int d : dims) len *= std::size_t(d);
    Slice s{total_, len, std::move(dims)};
    entries_.emplace_back(name, s);
    total_ += len;
    return s;
  }
  std::size_t total() const { return total_; }
  const std::vector<std::pair<std::string, Slice>>& entries() const { return entries_; }
  const Slice* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return &e.second;
    return nullptr;
  }

 private:
  std::vector<std::pair<std::string, Slice>> entries_;
  std::size_t total_ = 0;
};

template <typename T>
void trunc_normal_init(T* p, std::size_t n, Rng& rng, double stddev) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = rng.normal();
    while (std::fabs(v) > 2.0) v = rng.normal();
    p[i] = T(v * stddev);
  }
}

// ---- Linear: y[l,o] = sum_i x[l,i] w[o,i] (+ b[o]) ----

struct LinearLayer {
  int in = 0, out = 0;
  bool has_bias = true;
  Slice w, b;

  void build(ParamLayout& layout, const std::string& prefix, int in_dim, int out_dim,
             bool bias = true) {
    in = in_dim;
    out = out_dim;
    has_bias = bias;
    w = layout.add(prefix + ".w", {out, in});
    if (bias) b = layout.add(prefix + ".b", {out});
  }

  template <typename T>
  void init(T* theta, Rng& rng) const {
    trunc_normal_init(theta + w.off, w.len, rng, 0.02);
    if (has_bias)
      for (std::size_t i = 0; i < b.len; ++i) theta[b.off + i] = T(0);
  }

  template <typename T>
  void forward(const T* theta, const Mat<T>& x, Mat<T>& y) const {
    require_shape(x.cols == in, "linear: input width mismatch");
    y = Mat<T>(x.rows, out);
    const T* W = theta + w.off;
    const T* B = has_bias ? theta + b.off : nullptr;
    for (int l = 0; l < x.rows; ++l) {
      const T* xr = x.row(l);
      T* yr = y.row(l);
      for (int o = 0; o < out; ++o) {
        const T* wr = W + std::size_t(o) * in;
        T acc = B ? B[o] : T(0);
        for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
        yr[o] = acc;
      }
    }
  }

  // dx may be null; grad accumulates.
  template <typename T>
  void backward(const T* theta, const Mat<T>& x, const Mat<T>& dy, Mat<T>* dx, T* grad) const {
    const T* W = theta + w.off;
    T* dW = grad + w.off;
    T* dB = has_bias ? grad + b.off : nullptr;
    if (dx) *dx = Mat<T>(x.rows, in);
    for (int l = 0; l < x.rows; ++l) {
      const T* xr = x.row(l);
      const T* dyr = dy.row(l);
      T* dxr = dx ? dx->row(l) : nullptr;
      for (int o = 0; o < out; ++o) {
        const T g = dyr[o];
        if (g == T(0)) continue;
        const T* wr = W + std::size_t(o) * in;
        T* dwr = dW + std::size_t(o) * in;
        if (dB) dB[o] += g;
        for (int i = 0; i < in; ++i) {
          dwr[i] += g * xr[i];
          if (dxr) dxr[i] += g * wr[i];
        }
      }
    }
  }
};

// ---- LayerNorm over the last (channel) dimension ----

struct LayerNormLayer {
  int dim = 0;
  Slice g, b;
  static constexpr double kEps = 1e-5;

  void build(ParamLayout& layout, const std::string& prefix, int d) {
    dim = d;
    g = layout.add(prefix + ".g", {d});
    b = layout.add(prefix + ".b", {d});
  }

  template <typename T>
  void init(T* theta) const {
    for (std::size_t i = 0; i < g.len; ++i) theta[g.off + i] = T(1);
    for (std::size_t i = 0; i < b.len; ++i) theta[b.off + i] = T(0);
  }

  template <typename T>
  struct Cache {
    std::vector<T> mu, inv_std;
  };

  template <typename T>
  void forward(const T* theta, const Mat<T>& x, Mat<T>& y, Cache<T>* cache = nullptr) const {
    require_shape(x.cols == dim, "layernorm: width mismatch");
    y = Mat<T>(x.rows, dim);
    const T* G = theta + g.off;
    const T* B = theta + b.off;
    if (cache) {
      cache->mu.assign(std::size_t(x.rows), T(0));
      cache->inv_std.assign(std::size_t(x.rows), T(0));
    }
    for (int l = 0; l < x.rows; ++l) {
      const T* xr = x.row(l);
      T* yr = y.row(l);
      T mu = T(0);
      for (int i = 0; i < dim; ++i) mu += xr[i];
      mu /= T(dim);
      T var = T(0);
      for (int i = 0; i < dim; ++i) {
        T d = xr[i] - mu;
        var += d * d;
      }
      var /= T(dim);
      T inv = T(1) / std::sqrt(var + T(kEps));
      for (int i = 0; i < dim; ++i) yr[i] = (xr[i] - mu) * inv * G[i] + B[i];
      if (cache) {
        cache->mu[std::size_t(l)] = mu;
        cache->inv_std[std::size_t(l)] = inv;
      }
    }
  }

  template <typename T>
  void backward(const T* theta, const Mat<T>& x, const Cache<T>& cache, const Mat<T>& dy,
                Mat<T>* dx, T* grad) const {
    const T* G = theta + g.off;
    T* dG = grad + g.off;
    T* dB = grad + b.off;
    if (dx) *dx = Mat<T>(x.rows, dim);
    const T invd = T(1) / T(dim);
    for (int l = 0; l < x.rows; ++l) {
      const T* xr = x.row(l);
      const T* dyr = dy.row(l);
      const T mu = cache.mu[std::size_t(l)];
      const T inv = cache.inv_std[std::size_t(l)];
      T sum_dxh = T(0), sum_dxh_xh = T(0);
      for (int i = 0; i < dim; ++i) {
        T xh = (xr[i] - mu) * inv;
        T dxh = dyr[i] * G[i];
        dG[i] += dyr[i] * xh;
        dB[i] += dyr[i];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh;
      }
      if (!dx) continue;
      T* dxr = dx->row(l);
      for (int i = 0; i < dim; ++i) {
        T xh = (xr[i] - mu) * inv;
        T dxh = dyr[i] * G[i];
        dxr[i] = inv * (dxh - invd * sum_dxh - xh * invd * sum_dxh_xh);
      }
    }
  }
};

// ---- depthwise 3x3 conv on a (H, W, C) map, zero padded ----

struct DwConv3x3Layer {
  int ch = 0;
  Slice w, b;  // w dims (C, 3, 3)

  void build(ParamLayout& layout, const std::string& prefix, int c) {
    ch = c;
    w = layout.add(prefix + ".w", {c, 3, 3});
    b = layout.add(prefix + ".b", {c});
  }

  template <typename T>
  void init(T* theta, Rng& rng) const {
    trunc_normal_init(theta + w.off, w.len, rng, 0.1);
    for (std::size_t i = 0; i < b.len; ++i) theta[b.off + i] = T(0);
  }

  template <typename T>
  void forward(const T* theta, const Map3<T>& x, Map3<T>& y) const {
    require_shape(x.c == ch, "dwconv: channel mismatch");
    y = Map3<T>(x.h, x.w, x.c);
    const T* W = theta + w.off;
    const T* B = theta + b.off;
    for (int i = 0; i < x.h; ++i)
      for (int j = 0; j < x.w; ++j) {
        T* yr = y.site(i, j);
        for (int k = 0; k < ch; ++k) yr[k] = B[k];
        for (int di = -1; di <= 1; ++di) {
          int si = i + di;
          if (si < 0 || si >= x.h) continue;
          for (int dj = -1; dj <= 1; ++dj) {
            int sj = j + dj;
            if (sj < 0 || sj >= x.w) continue;
            const T* xr = x.site(si, sj);
            const T* wk = W + std::size_t((di + 1) * 3 + (dj + 1));
            for (int k = 0; k < ch; ++k) yr[k] += wk[std::size_t(k) * 9] * xr[k];
          }
        }
      }
  }

  template <typename T>
  void backward(const T* theta, const Map3<T>& x, const Map3<T>& dy, Map3<T>* dx, T* grad) const {
    const T* W = theta + w.off;
    T* dW = grad + w.off;
    T* dB = grad + b.off;
    if (dx) *dx = Map3<T>(x.h, x.w, x.c);
    for (int i = 0; i < x.h; ++i)
      for (int j = 0; j < x.w; ++j) {
        const T* dyr = dy.site(i, j);
        for (int k = 0; k < ch; ++k) dB[k] += dyr[k];
        for (int di = -1; di <= 1; ++di) {
          int si = i + di;
          if (si < 0 || si >= x.h) continue;
          for (int dj = -1; dj <= 1; ++dj) {
            int sj = j + dj;
            if (sj < 0 || sj >= x.w) continue;
            const T* xr = x.site(si, sj);
            T* dxr = dx ? dx->site(si, sj) : nullptr;
            const std::size_t tap = std::size_t((di + 1) * 3 + (dj + 1));
            for (int k = 0; k < ch; ++k) {
              dW[std::size_t(k) * 9 + tap] += dyr[k] * xr[k];
              if (dxr) dxr[k] += dyr[k] * W[std::size_t(k) * 9 + tap];
            }
          }
        }
      }
  }
};

// ---- activations ----

template <typename T>
inline T silu(T x) {
  return x * sigmoid(x);
}
template <typename T>
inline T silu_grad(T x) {
  T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
inline T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}
template <typename T>
inline T gelu_grad(T x) {
  T phi_cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  T phi_pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return phi_cdf + x * phi_pdf;
}

template <typename T, typename F>
void apply_elementwise(const std::vector<T>& x, std::vector<T>& y, F f) {
  y.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
}

// ---- pooling over the spatial grid ----

enum class Pooling { First, Mid, Last, Mean, Sum };

inline const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::First: return "first";
    case Pooling::Mid: return "mid";
    case Pooling::Last: return "last";
    case Pooling::Mean: return "mean";
    case Pooling::Sum: return "sum";
  }
  return "?";
}

inline Pooling pooling_from_name(const std::string& s) {
  if (s == "first") return Pooling::First;
  if (s == "mid") return Pooling::Mid;
  if (s == "last") return Pooling::Last;
  if (s == "mean") return Pooling::Mean;
  if (s == "sum") return Pooling::Sum;
  throw InvalidArgument("unknown pooling: " + s);
}

template <typename T>
std::vector<T> pool(const Map3<T>& m, Pooling mode) {
  require_shape(m.h >= 1 && m.w >= 1 && m.c >= 1, "pool: empty map");
  std::vector<T> out(std::size_t(m.c), T(0));
  switch (mode) {
    case Pooling::First: {
      const T* p = m.site(0, 0);
      out.assign(p, p + m.c);
      break;
    }
    case Pooling::Last: {
      const T* p = m.site(m.h - 1, m.w - 1);
      out.assign(p, p + m.c);
      break;
    }
    case Pooling::Mid: {
      const T* p = m.site(m.h / 2, m.w / 2);
      out.assign(p, p + m.c);
      break;
    }
    case Pooling::Sum:
    case Pooling::Mean: {
      for (int i = 0; i < m.h; ++i)
        for (int j = 0; j < m.w; ++j) {
          const T* p = m.site(i, j);
          for (int k = 0; k < m.c; ++k) out[std::size_t(k)] += p[k];
        }
      if (mode == Pooling::Mean) {
        T inv = T(1) / T(m.h * m.w);
        for (T& v : out) v *= inv;
      }
      break;
    }
  }
  return out;
}

template <typename T>
void pool_backward(const Map3<T>& m, Pooling mode, const std::vector<T>& dvec, Map3<T>& dm) {
  dm = Map3<T>(m.h, m.w, m.c);
  switch (mode) {
    case Pooling::First:
      for (int k = 0; k < m.c; ++k) dm(0, 0, k) = dvec[std::size_t(k)];
      break;
    case Pooling::Last:
      for (int k = 0; k < m.c; ++k) dm(m.h - 1, m.w - 1, k) = dvec[std::size_t(k)];
      break;
    case Pooling::Mid:
      for (int k = 0; k < m.c; ++k) dm(m.h / 2, m.w / 2, k) = dvec[std::size_t(k)];
      break;
    case Pooling::Sum:
    case Pooling::Mean: {
      T scale = (mode == Pooling::Mean) ? T(1) / T(m.h * m.w) : T(1);
      for (int i = 0; i < m.h; ++i)
        for (int j = 0; j < m.w; ++j) {
          T* p = dm.site(i, j);
          for (int k = 0; k < m.c; ++k) p[k] = dvec[std::size_t(k)] * scale;
        }
      break;
    }
  }
}

// Mat <-> Map3 views: a (H, W, C) map is also an (H*W, C) matrix of sites.
template <typename T>
Mat<T> map_as_mat(const Map3<T>& m) {
  Mat<T> out(m.h * m.w, m.c);
  out.v = m.v;
  return out;
}
template <typename T>
Map3<T> mat_as_map(const Mat<T>& m, int h, int w) {
  require_shape(m.rows == h * w, "mat_as_map: row count mismatch");
  Map3<T> out(h, w, m.cols);
  out.v = m.v;
  return out;
}

}  // namespace dass
