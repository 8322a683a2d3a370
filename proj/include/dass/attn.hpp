#pragma once

// Attention baseline: spectrogram patch tokens + sinusoidal positional
// embeddings + pre-LN transformer encoder + mean pooling (CLS optional).
// Quadratic-cost comparator for the NIAH and scaling benchmarks; refuses to
// run past a configurable attention-memory budget by throwing
// ResourceExhausted (callers record "exceeded-capacity").

#include <array>
#include <string>
#include <vector>

#include "dass/layers.hpp"

namespace dass {

struct AttnConfig {
  int patch_t = 16;
  int patch_f = 16;
  int stride = 10;
  int depth = 2;
  int heads = 4;
  int width = 64;
  int num_classes = 8;
  double ffn_ratio = 4.0;
  bool use_cls = false;  // default mean pooling over tokens
  std::size_t memory_budget = std::size_t(1) << 31;

  void validate() const {
    require_param(patch_t >= 1 && patch_f >= 1 && stride >= 1, "AttnConfig: patch/stride");
    require_param(depth >= 1 && heads >= 1 && width >= 2, "AttnConfig: depth/heads/width");
    require_param(width % heads == 0, "AttnConfig: width must be divisible by heads");
    require_param(width % 2 == 0, "AttnConfig: width must be even for sinusoidal PE");
    require_param(num_classes >= 1, "AttnConfig: num_classes");
  }

  static AttnConfig toy(int classes) {
    AttnConfig c;
    c.depth = 2;
    c.heads = 4;
    c.width = 64;
    c.num_classes = classes;
    return c;
  }
};

// Interleaved sin/cos embedding; defined for arbitrary non-negative positions.
template <typename T>
std::vector<T> sinusoidal_pe(std::int64_t position, int width) {
  require_arg(position >= 0, "sinusoidal_pe: negative position");
  require_arg(width >= 2 && width % 2 == 0, "sinusoidal_pe: width must be even");
  std::vector<T> pe(std::size_t(width), T(0));
  for (int i = 0; i < width / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * i / double(width));
    double angle = double(position) * freq;
    pe[std::size_t(2 * i)] = T(std::sin(angle));
    pe[std::size_t(2 * i + 1)] = T(std::cos(angle));
  }
  return pe;
}

// Row-wise softmax with max subtraction.
template <typename T>
void softmax_rows(Mat<T>& m) {
  for (int r = 0; r < m.rows; ++r) {
    T* row = m.row(r);
    T mx = row[0];
    for (int c = 1; c < m.cols; ++c) mx = std::max(mx, row[c]);
    T sum = T(0);
    for (int c = 0; c < m.cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    T inv = T(1) / sum;
    for (int c = 0; c < m.cols; ++c) row[c] *= inv;
  }
}

struct AttnCost {
  double attention_flops = 0;  // the Theta(L^2) part
  double total_flops = 0;
};

template <typename T>
class AttnModel {
 public:
  explicit AttnModel(AttnConfig config) : cfg_(config) {
    cfg_.validate();
    patch_dim_ = cfg_.patch_t * cfg_.patch_f;
    embed_.build(layout_, "embed", patch_dim_, cfg_.width);
    if (cfg_.use_cls) cls_ = layout_.add("cls", {cfg_.width});
    for (int l = 0; l < cfg_.depth; ++l) {
      Layer ly;
      std::string p = "l" + std::to_string(l);
      ly.ln1.build(layout_, p + ".ln1", cfg_.width);
      ly.qkv.build(layout_, p + ".qkv", cfg_.width, 3 * cfg_.width);
      ly.proj.build(layout_, p + ".proj", cfg_.width, cfg_.width);
      ly.ln2.build(layout_, p + ".ln2", cfg_.width);
      int hidden = int(cfg_.ffn_ratio * cfg_.width);
      ly.fc1.build(layout_, p + ".fc1", cfg_.width, hidden);
      ly.fc2.build(layout_, p + ".fc2", hidden, cfg_.width);
      layers_.push_back(ly);
    }
    norm_.build(layout_, "norm", cfg_.width);
    head_.build(layout_, "head", cfg_.width, cfg_.num_classes);
    theta.assign(layout_.total(), T(0));
  }

  void init_params(std::uint64_t seed) {
    Rng rng(seed);
    embed_.init(theta.data(), rng);
    if (cfg_.use_cls) trunc_normal_init(theta.data() + cls_.off, cls_.len, rng, 0.02);
    for (auto& ly : layers_) {
      ly.ln1.init(theta.data());
      ly.qkv.init(theta.data(), rng);
      ly.proj.init(theta.data(), rng);
      ly.ln2.init(theta.data());
      ly.fc1.init(theta.data(), rng);
      ly.fc2.init(theta.data(), rng);
    }
    norm_.init(theta.data());
    head_.init(theta.data(), rng);
  }

  const AttnConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t param_count() const { return layout_.total(); }

  // tokens along each axis for a given spectrogram size
  int tokens_t(int t) const {
    if (t < cfg_.patch_t) return 1;
    return 1 + (t - cfg_.patch_t) / cfg_.stride;
  }
  int tokens_f(int f) const {
    if (f < cfg_.patch_f) return 1;
    return 1 + (f - cfg_.patch_f) / cfg_.stride;
  }
  int token_count(int t, int f) const {
    return tokens_t(t) * tokens_f(f) + (cfg_.use_cls ? 1 : 0);
  }

  AttnCost cost_for_tokens(std::int64_t n_tokens) const {
    AttnCost c;
    const double L = double(n_tokens), W = cfg_.width, H = cfg_.heads;
    const double hidden = cfg_.ffn_ratio * W;
    // QK^T and AV are 2*L^2*W multiply-adds each; softmax ~3 ops per cell
    c.attention_flops = cfg_.depth * (4.0 * L * L * W + 3.0 * H * L * L);
    c.total_flops = c.attention_flops +
                    cfg_.depth * (2.0 * L * W * (3.0 * W) + 2.0 * L * W * W +
                                  2.0 * L * W * hidden * 2.0) +
                    2.0 * L * W * patch_dim_;
    return c;
  }
  AttnCost cost_forward(int t, int f) const { return cost_for_tokens(token_count(t, f)); }

  struct Tape {
    Mat<T> patches;
    Mat<T> x0;  // embedded tokens + PE (input to layer 0)
    struct LayerCache {
      Mat<T> x_in;
      Mat<T> n1;
      typename LayerNormLayer::template Cache<T> ln1c;
      Mat<T> qkv;
      std::vector<Mat<T>> probs;  // per head, L x L
      Mat<T> attn_out;            // concat of head outputs (proj input)
      Mat<T> u;                   // after attention residual
      Mat<T> n2;
      typename LayerNormLayer::template Cache<T> ln2c;
      Mat<T> f1;
      Mat<T> f2;
    };
    std::vector<LayerCache> layers;
    Mat<T> pre_norm;
    typename LayerNormLayer::template Cache<T> normc;
    Mat<T> normed;
    std::vector<T> pooled;
  };

  std::vector<T> forward(const Mat<T>& spec) const { return run(spec, nullptr); }
  std::vector<T> forward_train(const Mat<T>& spec, Tape& tape) const { return run(spec, &tape); }

  void backward(const Tape& tape, const std::vector<T>& dlogits, T* grad) const {
    const int L = tape.pre_norm.rows;
    Mat<T> dl(1, cfg_.num_classes);
    dl.v = dlogits;
    Mat<T> pooled_mat(1, cfg_.width);
    pooled_mat.v = tape.pooled;
    Mat<T> dpooled;
    head_.backward(theta.data(), pooled_mat, dl, &dpooled, grad);

    Mat<T> dnormed(L, cfg_.width);
    if (cfg_.use_cls) {
      for (int c = 0; c < cfg_.width; ++c) dnormed(0, c) = dpooled.v[std::size_t(c)];
    } else {
      T inv = T(1) / T(L);
      for (int r = 0; r < L; ++r)
        for (int c = 0; c < cfg_.width; ++c) dnormed(r, c) = dpooled.v[std::size_t(c)] * inv;
    }
    Mat<T> dx;
    norm_.backward(theta.data(), tape.pre_norm, tape.normc, dnormed, &dx, grad);

    for (int l = cfg_.depth - 1; l >= 0; --l) dx = layer_backward(l, tape.layers[std::size_t(l)], dx, grad);

    // token embedding (+ CLS)
    Mat<T> dtokens = dx;
    if (cfg_.use_cls) {
      T* dcls = grad + cls_.off;
      for (int c = 0; c < cfg_.width; ++c) dcls[c] += dtokens(0, c);
      Mat<T> rest(dtokens.rows - 1, cfg_.width);
      for (int r = 1; r < dtokens.rows; ++r)
        for (int c = 0; c < cfg_.width; ++c) rest(r - 1, c) = dtokens(r, c);
      dtokens = std::move(rest);
    }
    embed_.backward(theta.data(), tape.patches, dtokens, static_cast<Mat<T>*>(nullptr), grad);
  }

 private:
  struct Layer {
    LayerNormLayer ln1, ln2;
    LinearLayer qkv, proj, fc1, fc2;
  };

  void capacity_check(int n_tokens, bool training) const {
    const std::size_t l2 = std::size_t(n_tokens) * std::size_t(n_tokens);
    std::size_t per_layer = std::size_t(cfg_.heads) * l2 * sizeof(T);
    std::size_t needed = training ? per_layer * std::size_t(cfg_.depth) * 2 + per_layer
                                  : per_layer * 2;
    if (needed > cfg_.memory_budget) throw ResourceExhausted(needed, cfg_.memory_budget);
  }

  std::vector<T> run(const Mat<T>& spec, Tape* tape) const {
    require_shape(spec.rows >= 1 && spec.cols >= 1, "attn forward: empty spectrogram");
    const int nt = tokens_t(spec.rows), nf = tokens_f(spec.cols);
    const int n_patches = nt * nf;
    const int L = n_patches + (cfg_.use_cls ? 1 : 0);
    capacity_check(L, tape != nullptr);

    Mat<T> patches(n_patches, patch_dim_);
    for (int ti = 0; ti < nt; ++ti)
      for (int fi = 0; fi < nf; ++fi) {
        T* dst = patches.row(ti * nf + fi);
        for (int pi = 0; pi < cfg_.patch_t; ++pi)
          for (int pj = 0; pj < cfg_.patch_f; ++pj) {
            int r = ti * cfg_.stride + pi, c = fi * cfg_.stride + pj;
            dst[pi * cfg_.patch_f + pj] =
                (r < spec.rows && c < spec.cols) ? spec(r, c) : T(0);
          }
      }
    Mat<T> tokens;
    embed_.forward(theta.data(), patches, tokens);

    Mat<T> x(L, cfg_.width);
    int base = 0;
    if (cfg_.use_cls) {
      const T* cls = theta.data() + cls_.off;
      for (int c = 0; c < cfg_.width; ++c) x(0, c) = cls[c];
      base = 1;
    }
    for (int r = 0; r < n_patches; ++r) {
      auto pe = sinusoidal_pe<T>(r, cfg_.width);
      for (int c = 0; c < cfg_.width; ++c) x(base + r, c) = tokens(r, c) + pe[std::size_t(c)];
    }
    if (tape) {
      tape->patches = std::move(patches);
      tape->x0 = x;
      tape->layers.resize(std::size_t(cfg_.depth));
    }

    for (int l = 0; l < cfg_.depth; ++l)
      x = layer_forward(l, x, tape ? &tape->layers[std::size_t(l)] : nullptr);

    Mat<T> normed;
    typename LayerNormLayer::template Cache<T> normc;
    norm_.forward(theta.data(), x, normed, tape ? &normc : nullptr);
    std::vector<T> pooled(std::size_t(cfg_.width), T(0));
    if (cfg_.use_cls) {
      for (int c = 0; c < cfg_.width; ++c) pooled[std::size_t(c)] = normed(0, c);
    } else {
      for (int r = 0; r < L; ++r)
        for (int c = 0; c < cfg_.width; ++c) pooled[std::size_t(c)] += normed(r, c);
      for (T& v : pooled) v /= T(L);
    }
    Mat<T> pooled_mat(1, cfg_.width);
    pooled_mat.v = pooled;
    Mat<T> logits;
    head_.forward(theta.data(), pooled_mat, logits);
    if (tape) {
      tape->pre_norm = std::move(x);
      tape->normc = std::move(normc);
      tape->normed = std::move(normed);
      tape->pooled = std::move(pooled);
    }
    return logits.v;
  }

  Mat<T> layer_forward(int l, const Mat<T>& x, typename Tape::LayerCache* cache) const {
    const Layer& ly = layers_[std::size_t(l)];
    const int L = x.rows, W = cfg_.width, H = cfg_.heads, dh = W / H;
    const T scale = T(1) / std::sqrt(T(dh));

    Mat<T> n1;
    typename LayerNormLayer::template Cache<T> ln1c;
    ly.ln1.forward(theta.data(), x, n1, cache ? &ln1c : nullptr);
    Mat<T> qkv;
    ly.qkv.forward(theta.data(), n1, qkv);

    Mat<T> attn_out(L, W);
    std::vector<Mat<T>> probs;
    if (cache) probs.resize(std::size_t(H));
    Mat<T> scores(L, L);
    for (int h = 0; h < H; ++h) {
      const int qo = h * dh, ko = W + h * dh, vo = 2 * W + h * dh;
      for (int i = 0; i < L; ++i) {
        const T* qi = qkv.row(i) + qo;
        T* srow = scores.row(i);
        for (int j = 0; j < L; ++j) {
          const T* kj = qkv.row(j) + ko;
          T acc = T(0);
          for (int d = 0; d < dh; ++d) acc += qi[d] * kj[d];
          srow[j] = acc * scale;
        }
      }
      softmax_rows(scores);
      for (int i = 0; i < L; ++i) {
        const T* prow = scores.row(i);
        T* orow = attn_out.row(i) + qo;
        for (int d = 0; d < dh; ++d) orow[d] = T(0);
        for (int j = 0; j < L; ++j) {
          const T p = prow[j];
          if (p == T(0)) continue;
          const T* vj = qkv.row(j) + vo;
          for (int d = 0; d < dh; ++d) orow[d] += p * vj[d];
        }
      }
      if (cache) probs[std::size_t(h)] = scores;
    }
    Mat<T> proj;
    ly.proj.forward(theta.data(), attn_out, proj);
    Mat<T> u(L, W);
    for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] = x.v[i] + proj.v[i];

    Mat<T> n2;
    typename LayerNormLayer::template Cache<T> ln2c;
    ly.ln2.forward(theta.data(), u, n2, cache ? &ln2c : nullptr);
    Mat<T> f1;
    ly.fc1.forward(theta.data(), n2, f1);
    Mat<T> f2(L, f1.cols);
    for (std::size_t i = 0; i < f2.v.size(); ++i) f2.v[i] = gelu(f1.v[i]);
    Mat<T> f3;
    ly.fc2.forward(theta.data(), f2, f3);
    Mat<T> out(L, W);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = u.v[i] + f3.v[i];

    if (cache) {
      cache->x_in = x;
      cache->n1 = std::move(n1);
      cache->ln1c = std::move(ln1c);
      cache->qkv = std::move(qkv);
      cache->probs = std::move(probs);
      cache->attn_out = std::move(attn_out);
      cache->u = std::move(u);
      cache->n2 = std::move(n2);
      cache->ln2c = std::move(ln2c);
      cache->f1 = std::move(f1);
      cache->f2 = std::move(f2);
    }
    return out;
  }

  Mat<T> layer_backward(int l, const typename Tape::LayerCache& cache, const Mat<T>& dout,
                        T* grad) const {
    const Layer& ly = layers_[std::size_t(l)];
    const int L = dout.rows, W = cfg_.width, H = cfg_.heads, dh = W / H;
    const T scale = T(1) / std::sqrt(T(dh));

    // FFN residual
    Mat<T> du = dout;
    Mat<T> df2;
    ly.fc2.backward(theta.data(), cache.f2, dout, &df2, grad);
    Mat<T> df1(L, df2.cols);
    for (std::size_t i = 0; i < df1.v.size(); ++i)
      df1.v[i] = df2.v[i] * gelu_grad(cache.f1.v[i]);
    Mat<T> dn2;
    ly.fc1.backward(theta.data(), cache.n2, df1, &dn2, grad);
    Mat<T> du2;
    ly.ln2.backward(theta.data(), cache.u, cache.ln2c, dn2, &du2, grad);
    for (std::size_t i = 0; i < du.v.size(); ++i) du.v[i] += du2.v[i];

    // attention residual
    Mat<T> dx = du;
    Mat<T> dattn;
    ly.proj.backward(theta.data(), cache.attn_out, du, &dattn, grad);
    Mat<T> dqkv(L, 3 * W);
    for (int h = 0; h < H; ++h) {
      const int qo = h * dh, ko = W + h * dh, vo = 2 * W + h * dh;
      const Mat<T>& p = cache.probs[std::size_t(h)];
      // dv, dp
      Mat<T> dp(L, L);
      for (int i = 0; i < L; ++i) {
        const T* dorow = dattn.row(i) + qo;
        const T* prow = p.row(i);
        T* dprow = dp.row(i);
        for (int j = 0; j < L; ++j) {
          const T* vj = cache.qkv.row(j) + vo;
          T* dvj = dqkv.row(j) + vo;
          T acc = T(0);
          for (int d = 0; d < dh; ++d) {
            acc += dorow[d] * vj[d];
            dvj[d] += prow[j] * dorow[d];
          }
          dprow[j] = acc;
        }
      }
      // softmax backward: ds = p .* (dp - rowsum(dp .* p))
      for (int i = 0; i < L; ++i) {
        const T* prow = p.row(i);
        T* dprow = dp.row(i);
        T dot = T(0);
        for (int j = 0; j < L; ++j) dot += dprow[j] * prow[j];
        for (int j = 0; j < L; ++j) dprow[j] = prow[j] * (dprow[j] - dot);
      }
      // dq, dk
      for (int i = 0; i < L; ++i) {
        const T* dsrow = dp.row(i);
        const T* qi = cache.qkv.row(i) + qo;
        T* dqi = dqkv.row(i) + qo;
        for (int j = 0; j < L; ++j) {
          const T ds = dsrow[j] * scale;
          if (ds == T(0)) continue;
          const T* kj = cache.qkv.row(j) + ko;
          T* dkj = dqkv.row(j) + ko;
          for (int d = 0; d < dh; ++d) {
            dqi[d] += ds * kj[d];
            dkj[d] += ds * qi[d];
          }
        }
      }
    }
    Mat<T> dn1;
    ly.qkv.backward(theta.data(), cache.n1, dqkv, &dn1, grad);
    Mat<T> dx2;
    ly.ln1.backward(theta.data(), cache.x_in, cache.ln1c, dn1, &dx2, grad);
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dx2.v[i];
    return dx;
  }

 public:
  std::vector<T> theta;

 private:
  AttnConfig cfg_;
  int patch_dim_ = 0;
  ParamLayout layout_;
  LinearLayer embed_;
  Slice cls_;
  std::vector<Layer> layers_;
  LayerNormLayer norm_;
  LinearLayer head_;
};

}  // namespace dass
