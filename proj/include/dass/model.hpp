#pragma once

// Hierarchical state-space classifier. Spectrogram -> 4x4 patch embedding ->
// four groups of state-space blocks with 2x2 patch-merge downsampling in
// between -> final layer norm -> pooling -> linear classifier.
//
// Each block applies two residual branches:
//   x + DropPath( out_proj(LN(SS2D(SiLU(DWConv(in_proj(LN(x))))))) )
//   u + DropPath( fc2(GELU(fc1(LN(u)))) )

#include <array>
#include <string>
#include <vector>

#include "dass/layers.hpp"
#include "dass/ss2d.hpp"

namespace dass {

struct ModelConfig {
  std::array<int, 4> group_depths{2, 2, 8, 2};
  std::array<int, 4> channel_dims{96, 192, 384, 768};
  int state_size = 8;
  int dt_rank = 2;
  int num_classes = 527;
  Pooling pooling = Pooling::Mean;
  int patch_size = 4;
  double ffn_ratio = 4.0;
  int expand = 2;
  double droppath = 0.0;  // max rate; scaled linearly over block index
  bool tie_directions = false;

  void validate() const {
    for (int d : group_depths) require_param(d >= 1, "ModelConfig: depths must be positive");
    for (int c : channel_dims) require_param(c >= 1, "ModelConfig: dims must be positive");
    for (int g = 0; g < 3; ++g)
      require_param(channel_dims[std::size_t(g)] < channel_dims[std::size_t(g) + 1],
                    "ModelConfig: channel dims must increase");
    require_param(state_size >= 1, "ModelConfig: state_size must be positive");
    require_param(dt_rank >= 1, "ModelConfig: dt_rank must be positive");
    require_param(num_classes >= 1, "ModelConfig: num_classes must be positive");
    require_param(patch_size >= 1, "ModelConfig: patch_size must be positive");
    require_param(ffn_ratio > 0, "ModelConfig: ffn_ratio must be positive");
    require_param(expand >= 1, "ModelConfig: expand must be positive");
    require_param(droppath >= 0 && droppath < 1, "ModelConfig: droppath in [0,1)");
  }

  int total_blocks() const {
    return group_depths[0] + group_depths[1] + group_depths[2] + group_depths[3];
  }

  static ModelConfig dass_small(int classes = 527) {
    ModelConfig c;
    c.group_depths = {2, 2, 8, 2};
    c.channel_dims = {96, 192, 384, 768};
    c.state_size = 8;
    c.dt_rank = 2;
    c.num_classes = classes;
    c.droppath = 0.1;
    return c;
  }
  static ModelConfig dass_medium(int classes = 527) {
    ModelConfig c = dass_small(classes);
    c.group_depths = {2, 2, 15, 2};
    return c;
  }
  // Gradient-check scale: depths (1,1,1,1), dims (8,16,32,64), N=4.
  static ModelConfig tiny(int classes = 8) {
    ModelConfig c;
    c.group_depths = {1, 1, 1, 1};
    c.channel_dims = {8, 16, 32, 64};
    c.state_size = 4;
    c.dt_rank = 1;
    c.num_classes = classes;
    c.droppath = 0.0;
    return c;
  }
};

// Zero padding applied before patching / merging, recorded for callers.
struct PadInfo {
  int rows = 0;
  int cols = 0;
};

struct EmbedShape {
  int h = 0, w = 0;
  PadInfo pad;
};

inline EmbedShape embed_shape(int t, int f, int patch) {
  EmbedShape s;
  s.pad.rows = (patch - t % patch) % patch;
  s.pad.cols = (patch - f % patch) % patch;
  s.h = (t + s.pad.rows) / patch;
  s.w = (f + s.pad.cols) / patch;
  return s;
}

template <typename T>
struct DassBlock {
  int ch = 0, d_inner = 0, ffn_hidden = 0;
  double droppath_rate = 0.0;
  LayerNormLayer ln1, ln2, out_norm;
  LinearLayer in_proj, out_proj, fc1, fc2;
  DwConv3x3Layer dwconv;
  Ss2dLayer ss2d;

  void build(ParamLayout& layout, const std::string& prefix, const ModelConfig& cfg, int c,
             double dp_rate) {
    ch = c;
    d_inner = cfg.expand * c;
    ffn_hidden = int(cfg.ffn_ratio * c);
    droppath_rate = dp_rate;
    ln1.build(layout, prefix + ".ln1", c);
    in_proj.build(layout, prefix + ".in_proj", c, d_inner);
    dwconv.build(layout, prefix + ".dwconv", d_inner);
    ss2d.build(layout, prefix + ".ss2d", d_inner, cfg.state_size, cfg.dt_rank,
               cfg.tie_directions);
    out_norm.build(layout, prefix + ".out_norm", d_inner);
    out_proj.build(layout, prefix + ".out_proj", d_inner, c);
    ln2.build(layout, prefix + ".ln2", c);
    fc1.build(layout, prefix + ".ffn.fc1", c, ffn_hidden);
    fc2.build(layout, prefix + ".ffn.fc2", ffn_hidden, c);
  }

  void init(T* theta, Rng& rng) const {
    ln1.init(theta);
    in_proj.init(theta, rng);
    dwconv.init(theta, rng);
    ss2d.init(theta, rng);
    out_norm.init(theta);
    out_proj.init(theta, rng);
    ln2.init(theta);
    fc1.init(theta, rng);
    fc2.init(theta, rng);
  }

  struct Cache {
    int h = 0, w = 0;
    Mat<T> xm;    // block input, L x C
    Mat<T> n1;    // ln1 output
    typename LayerNormLayer::template Cache<T> ln1c;
    Map3<T> emap;  // in_proj output as map (dwconv input)
    Map3<T> cmap;  // dwconv output (pre-SiLU)
    Map3<T> smap;  // SiLU output (ss2d input)
    typename Ss2dLayer::template Cache<T> ss2dc;
    Mat<T> ym;  // ss2d output as mat (out_norm input)
    Mat<T> yn;  // out_norm output (out_proj input)
    typename LayerNormLayer::template Cache<T> onc;
    Mat<T> u;   // after first residual
    Mat<T> n2;  // ln2 output
    typename LayerNormLayer::template Cache<T> ln2c;
    Mat<T> f1;  // fc1 output (pre-GELU)
    Mat<T> f2;  // post-GELU (fc2 input)
    T keep1 = T(1), keep2 = T(1);  // droppath scales (0 or 1/(1-p))
  };

  Map3<T> forward(const T* theta, const Map3<T>& x, Cache* cache, bool training,
                  Rng* droppath_rng) const {
    const int h = x.h, w = x.w, L = h * w;
    T keep1 = T(1), keep2 = T(1);
    if (training && droppath_rate > 0.0 && droppath_rng) {
      keep1 = droppath_rng->uniform() < droppath_rate ? T(0) : T(1.0 / (1.0 - droppath_rate));
      keep2 = droppath_rng->uniform() < droppath_rate ? T(0) : T(1.0 / (1.0 - droppath_rate));
    }
    Mat<T> xm = map_as_mat(x);
    Mat<T> n1;
    typename LayerNormLayer::template Cache<T> ln1c;
    ln1.forward(theta, xm, n1, cache ? &ln1c : nullptr);
    Mat<T> e;
    in_proj.forward(theta, n1, e);
    Map3<T> emap = mat_as_map(e, h, w);
    Map3<T> cmap;
    dwconv.forward(theta, emap, cmap);
    Map3<T> smap(h, w, d_inner);
    for (std::size_t i = 0; i < smap.v.size(); ++i) smap.v[i] = silu(cmap.v[i]);
    typename Ss2dLayer::template Cache<T> ss2dc;
    Map3<T> ymap = ss2d.forward(theta, smap, cache ? &ss2dc : nullptr);
    Mat<T> ym = map_as_mat(ymap);
    Mat<T> yn;
    typename LayerNormLayer::template Cache<T> onc;
    out_norm.forward(theta, ym, yn, cache ? &onc : nullptr);
    Mat<T> o;
    out_proj.forward(theta, yn, o);
    Mat<T> u(L, ch);
    for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] = xm.v[i] + keep1 * o.v[i];
    Mat<T> n2;
    typename LayerNormLayer::template Cache<T> ln2c;
    ln2.forward(theta, u, n2, cache ? &ln2c : nullptr);
    Mat<T> f1;
    fc1.forward(theta, n2, f1);
    Mat<T> f2(L, ffn_hidden);
    for (std::size_t i = 0; i < f2.v.size(); ++i) f2.v[i] = gelu(f1.v[i]);
    Mat<T> f3;
    fc2.forward(theta, f2, f3);
    Map3<T> out(h, w, ch);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = u.v[i] + keep2 * f3.v[i];
    if (cache) {
      cache->h = h;
      cache->w = w;
      cache->xm = std::move(xm);
      cache->n1 = std::move(n1);
      cache->ln1c = std::move(ln1c);
      cache->emap = std::move(emap);
      cache->cmap = std::move(cmap);
      cache->smap = std::move(smap);
      cache->ss2dc = std::move(ss2dc);
      cache->ym = std::move(ym);
      cache->yn = std::move(yn);
      cache->onc = std::move(onc);
      cache->u = std::move(u);
      cache->n2 = std::move(n2);
      cache->ln2c = std::move(ln2c);
      cache->f1 = std::move(f1);
      cache->f2 = std::move(f2);
      cache->keep1 = keep1;
      cache->keep2 = keep2;
    }
    return out;
  }

  // dout: gradient at the block output; returns gradient at the block input.
  Map3<T> backward(const T* theta, const Cache& cache, const Map3<T>& dout, T* grad) const {
    const int h = cache.h, w = cache.w, L = h * w;
    // second residual: v = u + keep2 * f3
    Mat<T> du(L, ch);
    du.v = dout.v;
    Mat<T> df3(L, ch);
    for (std::size_t i = 0; i < df3.v.size(); ++i) df3.v[i] = cache.keep2 * dout.v[i];
    Mat<T> df2;
    fc2.backward(theta, cache.f2, df3, &df2, grad);
    Mat<T> df1(L, ffn_hidden);
    for (std::size_t i = 0; i < df1.v.size(); ++i)
      df1.v[i] = df2.v[i] * gelu_grad(cache.f1.v[i]);
    Mat<T> dn2;
    fc1.backward(theta, cache.n2, df1, &dn2, grad);
    Mat<T> du2;
    ln2.backward(theta, cache.u, cache.ln2c, dn2, &du2, grad);
    for (std::size_t i = 0; i < du.v.size(); ++i) du.v[i] += du2.v[i];

    // first residual: u = x + keep1 * o
    Mat<T> do_(L, ch);
    for (std::size_t i = 0; i < do_.v.size(); ++i) do_.v[i] = cache.keep1 * du.v[i];
    Mat<T> dyn;
    out_proj.backward(theta, cache.yn, do_, &dyn, grad);
    Mat<T> dym;
    out_norm.backward(theta, cache.ym, cache.onc, dyn, &dym, grad);
    Map3<T> dymap = mat_as_map(dym, h, w);
    Map3<T> dsmap;
    ss2d.backward(theta, cache.smap, cache.ss2dc, dymap, &dsmap, grad);
    Map3<T> dcmap(h, w, d_inner);
    for (std::size_t i = 0; i < dcmap.v.size(); ++i)
      dcmap.v[i] = dsmap.v[i] * silu_grad(cache.cmap.v[i]);
    Map3<T> demap;
    dwconv.backward(theta, cache.emap, dcmap, &demap, grad);
    Mat<T> de = map_as_mat(demap);
    Mat<T> dn1;
    in_proj.backward(theta, cache.n1, de, &dn1, grad);
    Mat<T> dxm;
    ln1.backward(theta, cache.xm, cache.ln1c, dn1, &dxm, grad);
    Map3<T> dx(h, w, ch);
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] = du.v[i] + dxm.v[i];
    return dx;
  }
};

template <typename T>
class DassModel {
 public:
  explicit DassModel(ModelConfig config) : cfg_(config) {
    cfg_.validate();
    int block_index = 0;
    const int total = cfg_.total_blocks();
    for (int g = 0; g < 4; ++g) {
      const int c = cfg_.channel_dims[std::size_t(g)];
      if (g == 0) {
        patch_embed_.build(layout_, "patch_embed", cfg_.patch_size * cfg_.patch_size, c);
      } else {
        merges_[std::size_t(g - 1)].build(layout_, "merge" + std::to_string(g - 1),
                                          4 * cfg_.channel_dims[std::size_t(g - 1)], c,
                                          /*bias=*/false);
      }
      for (int b = 0; b < cfg_.group_depths[std::size_t(g)]; ++b) {
        double rate = total > 1 ? cfg_.droppath * block_index / double(total - 1) : 0.0;
        DassBlock<T> blk;
        blk.build(layout_, "g" + std::to_string(g) + ".b" + std::to_string(b), cfg_, c, rate);
        blocks_.push_back(std::move(blk));
        ++block_index;
      }
    }
    final_norm_.build(layout_, "norm", cfg_.channel_dims[3]);
    head_.build(layout_, "head", cfg_.channel_dims[3], cfg_.num_classes);
    theta.assign(layout_.total(), T(0));
  }

  void init_params(std::uint64_t seed) {
    Rng rng(seed);
    patch_embed_.init(theta.data(), rng);
    for (auto& m : merges_) m.init(theta.data(), rng);
    for (auto& b : blocks_) b.init(theta.data(), rng);
    final_norm_.init(theta.data());
    head_.init(theta.data(), rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t param_count() const { return layout_.total(); }

  struct Tape {
    Mat<T> patches;  // embedded patch rows
    EmbedShape eshape;
    std::vector<typename DassBlock<T>::Cache> block_caches;
    struct MergeCache {
      int h_in = 0, w_in = 0;  // pre-pad dims
      Mat<T> concat;
    };
    std::array<MergeCache, 3> merge_caches;
    Mat<T> pre_norm;  // final feature mat (input to final LN)
    Mat<T> normed;
    typename LayerNormLayer::template Cache<T> normc;
    int fh = 0, fw = 0;
    Map3<T> final_map;
    std::vector<T> pooled;
  };

  std::vector<T> forward(const Mat<T>& spec) const {
    return run(spec, nullptr, false, nullptr);
  }

  // Inspection hooks: the embedded patch map and a single merge stage.
  Map3<T> embed(const Mat<T>& spec) const {
    require_shape(spec.rows >= 1 && spec.cols >= 1, "embed: empty spectrogram");
    EmbedShape es = embed_shape(spec.rows, spec.cols, cfg_.patch_size);
    Mat<T> patches = extract_patches(spec, es);
    Mat<T> embedded;
    patch_embed_.forward(theta.data(), patches, embedded);
    return mat_as_map(embedded, es.h, es.w);
  }
  Map3<T> merge(int m, const Map3<T>& x) const { return merge_forward(m, x, nullptr); }

  std::vector<T> forward_train(const Mat<T>& spec, Tape& tape, Rng* droppath_rng) const {
    return run(spec, &tape, true, droppath_rng);
  }

  // Accumulates parameter gradients into grad (layout-aligned flat vector).
  void backward(const Tape& tape, const std::vector<T>& dlogits, T* grad) const {
    require_shape(int(dlogits.size()) == cfg_.num_classes, "backward: dlogits size");
    Mat<T> dl(1, cfg_.num_classes);
    dl.v = dlogits;
    Mat<T> pooled_mat(1, cfg_.channel_dims[3]);
    pooled_mat.v = tape.pooled;
    Mat<T> dpooled;
    head_.backward(theta.data(), pooled_mat, dl, &dpooled, grad);
    Map3<T> dfinal;
    pool_backward(tape.final_map, cfg_.pooling, dpooled.v, dfinal);
    Mat<T> dnormed = map_as_mat(dfinal);
    Mat<T> dpre;
    final_norm_.backward(theta.data(), tape.pre_norm, tape.normc, dnormed, &dpre, grad);

    Map3<T> dmap = mat_as_map(dpre, tape.fh, tape.fw);
    int bi = int(blocks_.size());
    for (int g = 3; g >= 0; --g) {
      for (int b = cfg_.group_depths[std::size_t(g)] - 1; b >= 0; --b) {
        --bi;
        dmap = blocks_[std::size_t(bi)].backward(theta.data(), tape.block_caches[std::size_t(bi)],
                                                 dmap, grad);
      }
      if (g > 0) dmap = merge_backward(g - 1, tape, dmap, grad);
    }
    // patch embedding
    Mat<T> dpatches(tape.patches.rows, cfg_.channel_dims[0]);
    dpatches.v = dmap.v;
    Mat<T> dpix;  // unused: input gradients stop here
    patch_embed_.backward(theta.data(), tape.patches, dpatches, static_cast<Mat<T>*>(nullptr),
                          grad);
  }

 private:
  Mat<T> extract_patches(const Mat<T>& spec, const EmbedShape& es) const {
    const int p = cfg_.patch_size;
    Mat<T> patches(es.h * es.w, p * p);
    for (int i = 0; i < es.h; ++i)
      for (int j = 0; j < es.w; ++j) {
        T* dst = patches.row(i * es.w + j);
        for (int pi = 0; pi < p; ++pi)
          for (int pj = 0; pj < p; ++pj) {
            int r = i * p + pi, c = j * p + pj;
            dst[pi * p + pj] = (r < spec.rows && c < spec.cols) ? spec(r, c) : T(0);
          }
      }
    return patches;
  }

  std::vector<T> run(const Mat<T>& spec, Tape* tape, bool training, Rng* droppath_rng) const {
    require_shape(spec.rows >= 1 && spec.cols >= 1, "forward: empty spectrogram");
    EmbedShape es = embed_shape(spec.rows, spec.cols, cfg_.patch_size);
    Mat<T> patches = extract_patches(spec, es);
    Mat<T> embedded;
    patch_embed_.forward(theta.data(), patches, embedded);
    Map3<T> map = mat_as_map(embedded, es.h, es.w);
    if (tape) {
      tape->patches = std::move(patches);
      tape->eshape = es;
      tape->block_caches.resize(blocks_.size());
    }

    int bi = 0;
    for (int g = 0; g < 4; ++g) {
      if (g > 0) map = merge_forward(g - 1, map, tape);
      for (int b = 0; b < cfg_.group_depths[std::size_t(g)]; ++b) {
        map = blocks_[std::size_t(bi)].forward(
            theta.data(), map, tape ? &tape->block_caches[std::size_t(bi)] : nullptr, training,
            droppath_rng);
        ++bi;
      }
    }

    Mat<T> pre_norm = map_as_mat(map);
    Mat<T> normed;
    typename LayerNormLayer::template Cache<T> normc;
    final_norm_.forward(theta.data(), pre_norm, normed, tape ? &normc : nullptr);
    Map3<T> final_map = mat_as_map(normed, map.h, map.w);
    std::vector<T> pooled = pool(final_map, cfg_.pooling);
    Mat<T> pooled_mat(1, cfg_.channel_dims[3]);
    pooled_mat.v = pooled;
    Mat<T> logits;
    head_.forward(theta.data(), pooled_mat, logits);
    if (tape) {
      tape->pre_norm = std::move(pre_norm);
      tape->normed = std::move(normed);
      tape->normc = std::move(normc);
      tape->fh = map.h;
      tape->fw = map.w;
      tape->final_map = std::move(final_map);
      tape->pooled = std::move(pooled);
    }
    return logits.v;
  }

  Map3<T> merge_forward(int m, const Map3<T>& x, Tape* tape) const {
    const int he = x.h + (x.h & 1), we = x.w + (x.w & 1);
    const int h2 = he / 2, w2 = we / 2, c = x.c;
    Mat<T> concat(h2 * w2, 4 * c);
    for (int i = 0; i < h2; ++i)
      for (int j = 0; j < w2; ++j) {
        T* dst = concat.row(i * w2 + j);
        int q = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            int si = 2 * i + di, sj = 2 * j + dj;
            if (si < x.h && sj < x.w) {
              const T* src = x.site(si, sj);
              for (int k = 0; k < c; ++k) dst[q * c + k] = src[k];
            } else {
              for (int k = 0; k < c; ++k) dst[q * c + k] = T(0);
            }
            ++q;
          }
      }
    Mat<T> projected;
    merges_[std::size_t(m)].forward(theta.data(), concat, projected);
    if (tape) {
      auto& mc = tape->merge_caches[std::size_t(m)];
      mc.h_in = x.h;
      mc.w_in = x.w;
      mc.concat = std::move(concat);
    }
    return mat_as_map(projected, h2, w2);
  }

  Map3<T> merge_backward(int m, const Tape& tape, const Map3<T>& dout, T* grad) const {
    const auto& mc = tape.merge_caches[std::size_t(m)];
    const int h2 = dout.h, w2 = dout.w;
    const int c = cfg_.channel_dims[std::size_t(m)];
    Mat<T> dproj(h2 * w2, dout.c);
    dproj.v = dout.v;
    Mat<T> dconcat;
    merges_[std::size_t(m)].backward(theta.data(), mc.concat, dproj, &dconcat, grad);
    Map3<T> dx(mc.h_in, mc.w_in, c);
    for (int i = 0; i < h2; ++i)
      for (int j = 0; j < w2; ++j) {
        const T* src = dconcat.row(i * w2 + j);
        int q = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            int si = 2 * i + di, sj = 2 * j + dj;
            if (si < mc.h_in && sj < mc.w_in) {
              T* dst = dx.site(si, sj);
              for (int k = 0; k < c; ++k) dst[k] += src[q * c + k];
            }
            ++q;
          }
      }
    return dx;
  }

 public:
  std::vector<T> theta;

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  LinearLayer patch_embed_;
  std::array<LinearLayer, 3> merges_;
  std::vector<DassBlock<T>> blocks_;
  LayerNormLayer final_norm_;
  LinearLayer head_;
};

}  // namespace dass
