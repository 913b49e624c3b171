#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dtsp/random.hpp"

// Minimal transformer building blocks with explicit forward caches and
// hand-written backward passes. Activations are row-major (tokens x features);
// a batch is several equal-length sequences stacked row-wise.

namespace dtsp::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { Gelu, Relu };

template <typename T>
struct Linear {
  Mat<T> w;  // in x out
  Mat<T> b;  // 1 x out

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out) : w(Mat<T>::Zero(in, out)), b(Mat<T>::Zero(1, out)) {}

  /// PyTorch-style default: U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
  }

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = x * w;
    y.rowwise() += b.row(0);
    return y;
  }

  /// Accumulates parameter gradients into `g` and returns dL/dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Linear& g) const {
    g.w.noalias() += x.transpose() * dy;
    g.b += dy.colwise().sum();
    return dy * w.transpose();
  }

  void backward_no_input(const Mat<T>& x, const Mat<T>& dy, Linear& g) const {
    g.w.noalias() += x.transpose() * dy;
    g.b += dy.colwise().sum();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

template <typename T>
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Mat<T> gain;  // 1 x d
  Mat<T> bias;  // 1 x d

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index d) : gain(Mat<T>::Ones(1, d)), bias(Mat<T>::Zero(1, d)) {}

  struct Cache {
    Mat<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
  };

  Mat<T> forward(const Mat<T>& x, Cache& cache) const {
    const auto d = static_cast<T>(x.cols());
    cache.xhat.resize(x.rows(), x.cols());
    cache.rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T mean = x.row(r).sum() / d;
      const auto centered = (x.row(r).array() - mean).eval();
      const T var = centered.square().sum() / d;
      const T rstd = T(1) / std::sqrt(var + static_cast<T>(kEps));
      cache.rstd(r) = rstd;
      cache.xhat.row(r) = centered * rstd;
    }
    Mat<T> y = cache.xhat.array().rowwise() * gain.row(0).array();
    y.rowwise() += bias.row(0);
    return y;
  }

  Mat<T> backward(const Cache& cache, const Mat<T>& dy, LayerNorm& g) const {
    g.gain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    g.bias += dy.colwise().sum();
    const Mat<T> dxhat = dy.array().rowwise() * gain.row(0).array();
    const auto d = static_cast<T>(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const T mean_d = dxhat.row(r).sum() / d;
      const T mean_dx = (dxhat.row(r).array() * cache.xhat.row(r).array()).sum() / d;
      dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
    }
    return dx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
inline T activate(Activation act, T x) {
  if (act == Activation::Relu) return x > T(0) ? x : T(0);
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <typename T>
inline T activate_grad(Activation act, T x) {
  if (act == Activation::Relu) return x > T(0) ? T(1) : T(0);
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.3989422804014327);
  return cdf + x * pdf;
}

/// Multi-head self-attention over `batch` stacked sequences of length `seq`.
/// The fused projection produces [Q | K | V]; masked scores are dropped from
/// the softmax outright, so masked probabilities are exactly zero.
template <typename T>
struct SelfAttention {
  struct Cache {
    Mat<T> qkv;
    Mat<T> heads;              // concatenated head outputs, rows x d
    std::vector<Mat<T>> prob;  // batch * n_heads matrices, seq x seq
  };

  static Mat<T> forward(const Mat<T>& qkv, Eigen::Index batch, Eigen::Index seq, int n_heads, bool causal, Cache& cache) {
    const Eigen::Index d = qkv.cols() / 3;
    const Eigen::Index dh = d / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    cache.qkv = qkv;
    cache.heads.resize(qkv.rows(), d);
    cache.prob.assign(static_cast<std::size_t>(batch * n_heads), Mat<T>());
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int h = 0; h < n_heads; ++h) {
        const auto q = qkv.block(b * seq, h * dh, seq, dh);
        const auto k = qkv.block(b * seq, d + h * dh, seq, dh);
        const auto v = qkv.block(b * seq, 2 * d + h * dh, seq, dh);
        Mat<T>& p = cache.prob[static_cast<std::size_t>(b * n_heads + h)];
        p.noalias() = (q * k.transpose()) * scale;
        for (Eigen::Index i = 0; i < seq; ++i) {
          const Eigen::Index width = causal ? i + 1 : seq;
          auto row = p.row(i).head(width);
          const T mx = row.maxCoeff();
          row = (row.array() - mx).exp();
          row /= row.sum();
          if (width < seq) p.row(i).tail(seq - width).setZero();
        }
        cache.heads.block(b * seq, h * dh, seq, dh).noalias() = p * v;
      }
    }
    return cache.heads;
  }

  static Mat<T> backward(const Cache& cache, const Mat<T>& dheads, Eigen::Index batch, Eigen::Index seq, int n_heads) {
    const Eigen::Index d = dheads.cols();
    const Eigen::Index dh = d / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> dqkv(cache.qkv.rows(), cache.qkv.cols());
    Mat<T> dp;
    Mat<T> ds;
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int h = 0; h < n_heads; ++h) {
        const auto q = cache.qkv.block(b * seq, h * dh, seq, dh);
        const auto k = cache.qkv.block(b * seq, d + h * dh, seq, dh);
        const auto v = cache.qkv.block(b * seq, 2 * d + h * dh, seq, dh);
        const Mat<T>& p = cache.prob[static_cast<std::size_t>(b * n_heads + h)];
        const auto dout = dheads.block(b * seq, h * dh, seq, dh);
        dp.noalias() = dout * v.transpose();
        dqkv.block(b * seq, 2 * d + h * dh, seq, dh).noalias() = p.transpose() * dout;
        const auto row_dot = (dp.array() * p.array()).rowwise().sum().eval();
        ds = p.array() * (dp.array().colwise() - row_dot);
        dqkv.block(b * seq, h * dh, seq, dh).noalias() = (ds * k) * scale;
        dqkv.block(b * seq, d + h * dh, seq, dh).noalias() = (ds.transpose() * q) * scale;
      }
    }
    return dqkv;
  }
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + FF(LN(.)).
template <typename T>
struct Block {
  LayerNorm<T> ln1;
  Linear<T> qkv;
  Linear<T> proj;
  LayerNorm<T> ln2;
  Linear<T> ff1;
  Linear<T> ff2;

  Block() = default;
  Block(Eigen::Index d, Eigen::Index ff_width)
      : ln1(d), qkv(d, 3 * d), proj(d, d), ln2(d), ff1(d, ff_width), ff2(ff_width, d) {}

  void init(Rng& rng) {
    qkv.init(rng);
    proj.init(rng);
    ff1.init(rng);
    ff2.init(rng);
  }

  struct Cache {
    typename LayerNorm<T>::Cache ln1;
    Mat<T> a;
    typename SelfAttention<T>::Cache attn;
    Mat<T> h;
    typename LayerNorm<T>::Cache ln2;
    Mat<T> c;
    Mat<T> pre;
    Mat<T> act;
  };

  struct Shape {
    Eigen::Index batch;
    Eigen::Index seq;
    int n_heads;
    bool causal;
    Activation activation;
  };

  Mat<T> forward(const Mat<T>& x, const Shape& s, Cache& cache) const {
    cache.a = ln1.forward(x, cache.ln1);
    const Mat<T> heads = SelfAttention<T>::forward(qkv.forward(cache.a), s.batch, s.seq, s.n_heads, s.causal, cache.attn);
    cache.h = x + proj.forward(heads);
    cache.c = ln2.forward(cache.h, cache.ln2);
    cache.pre = ff1.forward(cache.c);
    cache.act = cache.pre.unaryExpr([act = s.activation](T v) { return activate(act, v); });
    return cache.h + ff2.forward(cache.act);
  }

  Mat<T> backward(const Cache& cache, const Mat<T>& dy, const Shape& s, Block& g) const {
    Mat<T> dact = ff2.backward(cache.act, dy, g.ff2);
    dact.array() *= cache.pre.unaryExpr([act = s.activation](T v) { return activate_grad(act, v); }).array();
    const Mat<T> dc = ff1.backward(cache.c, dact, g.ff1);
    Mat<T> dh = dy + ln2.backward(cache.ln2, dc, g.ln2);
    const Mat<T> dheads = proj.backward(cache.attn.heads, dh, g.proj);
    const Mat<T> dqkv = SelfAttention<T>::backward(cache.attn, dheads, s.batch, s.seq, s.n_heads);
    const Mat<T> da = qkv.backward(cache.a, dqkv, g.qkv);
    dh += ln1.backward(cache.ln1, da, g.ln1);
    return dh;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    qkv.visit(prefix + ".qkv", f);
    proj.visit(prefix + ".proj", f);
    ln2.visit(prefix + ".ln2", f);
    ff1.visit(prefix + ".ff1", f);
    ff2.visit(prefix + ".ff2", f);
  }
};

}  // namespace dtsp::nn
