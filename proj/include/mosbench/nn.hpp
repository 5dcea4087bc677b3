#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mosbench/common.hpp"
#include "mosbench/rng.hpp"

namespace mosbench {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// One learnable tensor. Gradients accumulate across samples until the
// optimizer consumes them.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
  size_t count() const { return static_cast<size_t>(value.size()); }
};

// Channel-major feature map: row = channel, column = y*w + x.
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  Mat data;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_) {
    data.setZero(c_, static_cast<Eigen::Index>(h_) * w_);
  }
  double& at(int ch, int y, int x) { return data(ch, y * w + x); }
  double at(int ch, int y, int x) const { return data(ch, y * w + x); }
};

inline void check_tensor(const Tensor3& t, int c, int h, int w,
                         const std::string& where) {
  if (t.c != c || t.h != h || t.w != w)
    throw MosError(ErrorCode::kShapeMismatch,
                   where + ": expected " + std::to_string(c) + "x" +
                       std::to_string(h) + "x" + std::to_string(w) +
                       ", got " + std::to_string(t.c) + "x" +
                       std::to_string(t.h) + "x" + std::to_string(t.w));
}

inline void kaiming_uniform(Mat& m, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = (rng.uniform() * 2.0 - 1.0) * bound;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// 3x3-style convolution, stride 1, zero padding, via im2col + GEMM.
struct Conv2d {
  int in_c, out_c, k, pad;
  Parameter w;  // out_c x (in_c*k*k)
  Parameter b;  // out_c x 1

  Conv2d(std::string name, int in_c_, int out_c_, int k_ = 3, int pad_ = 1)
      : in_c(in_c_), out_c(out_c_), k(k_), pad(pad_) {
    w.name = name + ".w";
    b.name = name + ".b";
    w.resize(out_c, static_cast<Eigen::Index>(in_c) * k * k);
    b.resize(out_c, 1);
  }

  void init(Rng& rng) {
    kaiming_uniform(w.value, in_c * k * k, rng);
    b.value.setZero();
  }

  int out_h(int h) const { return h + 2 * pad - k + 1; }
  int out_w(int wd) const { return wd + 2 * pad - k + 1; }

  struct Cache {
    Mat cols;  // (in_c*k*k) x (oh*ow)
    int h = 0, wd = 0;
  };

  Tensor3 forward(const Tensor3& x, Cache* cache) const {
    if (x.c != in_c)
      throw MosError(ErrorCode::kShapeMismatch,
                     w.name + ": expected " + std::to_string(in_c) +
                         " input channels, got " + std::to_string(x.c));
    const int oh = out_h(x.h), ow = out_w(x.w);
    Mat cols = Mat::Zero(static_cast<Eigen::Index>(in_c) * k * k,
                         static_cast<Eigen::Index>(oh) * ow);
    for (int c = 0; c < in_c; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Eigen::Index r =
              (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
          for (int y = 0; y < oh; ++y) {
            const int sy = y - pad + ky;
            if (sy < 0 || sy >= x.h) continue;
            for (int xx = 0; xx < ow; ++xx) {
              const int sx = xx - pad + kx;
              if (sx < 0 || sx >= x.w) continue;
              cols(r, static_cast<Eigen::Index>(y) * ow + xx) =
                  x.data(c, sy * x.w + sx);
            }
          }
        }
      }
    }
    Tensor3 out(out_c, oh, ow);
    out.data.noalias() = w.value * cols;
    out.data.colwise() += b.value.col(0);
    if (cache) {
      cache->cols = std::move(cols);
      cache->h = x.h;
      cache->wd = x.w;
    }
    return out;
  }

  Tensor3 backward(const Cache& cache, const Tensor3& gout) {
    w.grad.noalias() += gout.data * cache.cols.transpose();
    b.grad.col(0) += gout.data.rowwise().sum();
    Mat dcols = w.value.transpose() * gout.data;
    Tensor3 gin(in_c, cache.h, cache.wd);
    const int oh = gout.h, ow = gout.w;
    for (int c = 0; c < in_c; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Eigen::Index r =
              (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
          for (int y = 0; y < oh; ++y) {
            const int sy = y - pad + ky;
            if (sy < 0 || sy >= cache.h) continue;
            for (int xx = 0; xx < ow; ++xx) {
              const int sx = xx - pad + kx;
              if (sx < 0 || sx >= cache.wd) continue;
              gin.data(c, sy * cache.wd + sx) +=
                  dcols(r, static_cast<Eigen::Index>(y) * ow + xx);
            }
          }
        }
      }
    }
    return gin;
  }
};

struct ReluT {
  struct Cache {
    Mat mask;
  };
  static Tensor3 forward(const Tensor3& x, Cache* cache) {
    Tensor3 out = x;
    out.data = out.data.cwiseMax(0.0);
    if (cache) cache->mask = (x.data.array() > 0.0).cast<double>().matrix();
    return out;
  }
  static Tensor3 backward(const Cache& cache, const Tensor3& gout) {
    Tensor3 gin = gout;
    gin.data = gin.data.cwiseProduct(cache.mask);
    return gin;
  }
};

// 2x2 max pool, stride 2, floor spatial division; first scan-order winner
// receives the gradient on exact ties.
struct MaxPool2d {
  struct Cache {
    std::vector<int> argmax;  // flat source index per (channel * out_pos)
    int in_h = 0, in_w = 0;
  };
  static Tensor3 forward(const Tensor3& x, Cache* cache) {
    const int oh = x.h / 2, ow = x.w / 2;
    if (oh < 1 || ow < 1)
      throw MosError(ErrorCode::kShapeMismatch,
                     "max_pool: input " + std::to_string(x.h) + "x" +
                         std::to_string(x.w) + " too small for 2x2 pooling");
    Tensor3 out(x.c, oh, ow);
    if (cache) {
      cache->argmax.assign(static_cast<size_t>(x.c) * oh * ow, 0);
      cache->in_h = x.h;
      cache->in_w = x.w;
    }
    for (int c = 0; c < x.c; ++c) {
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          double best = -std::numeric_limits<double>::infinity();
          int best_idx = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int idx = (2 * y + dy) * x.w + (2 * xx + dx);
              const double v = x.data(c, idx);
              if (v > best) {
                best = v;
                best_idx = idx;
              }
            }
          }
          out.data(c, y * ow + xx) = best;
          if (cache)
            cache->argmax[(static_cast<size_t>(c) * oh + y) * ow + xx] =
                best_idx;
        }
      }
    }
    return out;
  }
  static Tensor3 backward(const Cache& cache, const Tensor3& gout) {
    Tensor3 gin(gout.c, cache.in_h, cache.in_w);
    for (int c = 0; c < gout.c; ++c)
      for (int p = 0; p < gout.h * gout.w; ++p)
        gin.data(c, cache.argmax[static_cast<size_t>(c) * gout.h * gout.w + p]) +=
            gout.data(c, p);
    return gin;
  }
};

// Spatial mean per channel.
struct Gap {
  struct Cache {
    int h = 0, w = 0;
  };
  static Vec forward(const Tensor3& x, Cache* cache) {
    if (cache) {
      cache->h = x.h;
      cache->w = x.w;
    }
    return x.data.rowwise().mean();
  }
  static Tensor3 backward(const Cache& cache, const Vec& gout) {
    Tensor3 gin(static_cast<int>(gout.size()), cache.h, cache.w);
    const double inv = 1.0 / (static_cast<double>(cache.h) * cache.w);
    for (int c = 0; c < gin.c; ++c)
      gin.data.row(c).setConstant(gout(c) * inv);
    return gin;
  }
};

struct Linear {
  int in_f, out_f;
  Parameter w;  // out x in
  Parameter b;  // out x 1

  Linear(std::string name, int in_f_, int out_f_) : in_f(in_f_), out_f(out_f_) {
    w.name = name + ".w";
    b.name = name + ".b";
    w.resize(out_f, in_f);
    b.resize(out_f, 1);
  }
  void init(Rng& rng) {
    kaiming_uniform(w.value, in_f, rng);
    b.value.setZero();
  }

  struct Cache {
    Vec x;
  };
  Vec forward(const Vec& x, Cache* cache) const {
    if (x.size() != in_f)
      throw MosError(ErrorCode::kShapeMismatch,
                     w.name + ": expected input dim " + std::to_string(in_f) +
                         ", got " + std::to_string(x.size()));
    if (cache) cache->x = x;
    return w.value * x + b.value.col(0);
  }
  Vec backward(const Cache& cache, const Vec& gout) {
    w.grad.noalias() += gout * cache.x.transpose();
    b.grad.col(0) += gout;
    return w.value.transpose() * gout;
  }

  // Row-per-timestep variant: X is n x in, result n x out.
  struct SeqCache {
    Mat x;
  };
  Mat forward_seq(const Mat& x, SeqCache* cache) const {
    if (x.cols() != in_f)
      throw MosError(ErrorCode::kShapeMismatch,
                     w.name + ": expected input dim " + std::to_string(in_f) +
                         ", got " + std::to_string(x.cols()));
    if (cache) cache->x = x;
    Mat out = x * w.value.transpose();
    out.rowwise() += b.value.col(0).transpose();
    return out;
  }
  Mat backward_seq(const SeqCache& cache, const Mat& gout) {
    w.grad.noalias() += gout.transpose() * cache.x;
    b.grad.col(0) += gout.colwise().sum().transpose();
    return gout * w.value;
  }
};

inline Vec softmax(const Vec& u) {
  const double m = u.maxCoeff();
  Vec e = (u.array() - m).exp();
  return e / e.sum();
}

// Additive sinusoidal position code over sequence rows.
inline Mat positional_encoding(Eigen::Index n, Eigen::Index d) {
  Mat pe(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
      const double angle = static_cast<double>(t) / std::pow(10000.0, expo);
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// Single-head scaled dot-product self-attention with a residual connection.
// Rows of the input are timesteps.
struct SelfAttention {
  int d;
  Linear q, k, v, o;

  explicit SelfAttention(std::string name, int d_)
      : d(d_),
        q(name + ".q", d_, d_),
        k(name + ".k", d_, d_),
        v(name + ".v", d_, d_),
        o(name + ".o", d_, d_) {}

  void init(Rng& rng) {
    q.init(rng);
    k.init(rng);
    v.init(rng);
    o.init(rng);
  }

  struct Cache {
    Linear::SeqCache cq, ck, cv, co;
    Mat qm, km, vm, attn, h;
  };

  Mat forward(const Mat& x, Cache* cache) const {
    Cache local;
    Cache& cc = cache ? *cache : local;
    cc.qm = q.forward_seq(x, &cc.cq);
    cc.km = k.forward_seq(x, &cc.ck);
    cc.vm = v.forward_seq(x, &cc.cv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Mat scores = cc.qm * cc.km.transpose() * scale;
    cc.attn.resize(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
      cc.attn.row(i) = softmax(scores.row(i).transpose()).transpose();
    cc.h = cc.attn * cc.vm;
    Mat out = o.forward_seq(cc.h, &cc.co);
    return x + out;
  }

  Mat backward(const Cache& cache, const Mat& gout) {
    Mat gx = gout;  // residual path
    Mat gh = o.backward_seq(cache.co, gout);
    Mat gattn = gh * cache.vm.transpose();
    Mat gv = cache.attn.transpose() * gh;
    Mat gscores(gattn.rows(), gattn.cols());
    for (Eigen::Index i = 0; i < gattn.rows(); ++i) {
      const double dot = gattn.row(i).dot(cache.attn.row(i));
      gscores.row(i) = cache.attn.row(i).cwiseProduct(
          (gattn.row(i).array() - dot).matrix());
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Mat gq = gscores * cache.km * scale;
    Mat gk = gscores.transpose() * cache.qm * scale;
    gx += q.backward_seq(cache.cq, gq);
    gx += k.backward_seq(cache.ck, gk);
    gx += v.backward_seq(cache.cv, gv);
    return gx;
  }
};

// Attention pooling: score each timestep with v . tanh(W h + b), softmax the
// scores, return the weighted sum of timesteps.
struct AttentionPool {
  int d, hidden;
  Parameter w;  // hidden x d
  Parameter b;  // hidden x 1
  Parameter v;  // hidden x 1

  AttentionPool(std::string name, int d_, int hidden_) : d(d_), hidden(hidden_) {
    w.name = name + ".w";
    b.name = name + ".b";
    v.name = name + ".v";
    w.resize(hidden, d);
    b.resize(hidden, 1);
    v.resize(hidden, 1);
  }
  void init(Rng& rng) {
    kaiming_uniform(w.value, d, rng);
    b.value.setZero();
    kaiming_uniform(v.value, hidden, rng);
  }

  struct Cache {
    Mat x;     // n x d
    Mat tanh;  // n x hidden
    Vec alpha;
  };

  Vec forward(const Mat& x, Cache* cache) const {
    Cache local;
    Cache& cc = cache ? *cache : local;
    cc.x = x;
    Mat z = x * w.value.transpose();
    z.rowwise() += b.value.col(0).transpose();
    cc.tanh = z.array().tanh().matrix();
    Vec u = cc.tanh * v.value.col(0);
    cc.alpha = softmax(u);
    return x.transpose() * cc.alpha;
  }

  Mat backward(const Cache& cache, const Vec& gout) {
    Mat gx = cache.alpha * gout.transpose();
    Vec galpha = cache.x * gout;
    const double dot = cache.alpha.dot(galpha);
    Vec gu = cache.alpha.cwiseProduct((galpha.array() - dot).matrix());
    v.grad.col(0) += cache.tanh.transpose() * gu;
    Mat gtanh = gu * v.value.col(0).transpose();
    Mat gz = gtanh.cwiseProduct(
        (1.0 - cache.tanh.array().square()).matrix());
    w.grad.noalias() += gz.transpose() * cache.x;
    b.grad.col(0) += gz.colwise().sum().transpose();
    gx += gz * w.value;
    return gx;
  }

  const Vec& last_alpha(const Cache& cache) const { return cache.alpha; }
};

// Coordinatewise max over a sequence of vectors; the earliest maximizer of
// each coordinate takes the gradient.
struct TemporalMaxPool {
  struct Cache {
    std::vector<int> argmax;
    size_t n = 0;
  };
  static Vec forward(const std::vector<Vec>& seq, Cache* cache) {
    if (seq.empty())
      throw ValidationError("temporal max-pool: empty sequence");
    const Eigen::Index d = seq.front().size();
    Vec out = seq.front();
    std::vector<int> arg(static_cast<size_t>(d), 0);
    for (size_t t = 1; t < seq.size(); ++t) {
      for (Eigen::Index i = 0; i < d; ++i) {
        if (seq[t](i) > out(i)) {
          out(i) = seq[t](i);
          arg[static_cast<size_t>(i)] = static_cast<int>(t);
        }
      }
    }
    if (cache) {
      cache->argmax = std::move(arg);
      cache->n = seq.size();
    }
    return out;
  }
  static std::vector<Vec> backward(const Cache& cache, const Vec& gout) {
    std::vector<Vec> gin(cache.n, Vec::Zero(gout.size()));
    for (Eigen::Index i = 0; i < gout.size(); ++i)
      gin[static_cast<size_t>(cache.argmax[static_cast<size_t>(i)])](i) +=
          gout(i);
    return gin;
  }
};

// Maps an unbounded score into the open interval (1,5).
struct RangeHead {
  static constexpr double kClip = 30.0;
  struct Cache {
    double z = 0.0;
  };
  static double forward(double z, Cache* cache) {
    if (cache) cache->z = z;
    const double zc = std::clamp(z, -kClip, kClip);
    return 1.0 + 4.0 * sigmoid(zc);
  }
  static double backward(const Cache& cache, double gout) {
    if (cache.z <= -kClip || cache.z >= kClip) return 0.0;
    const double s = sigmoid(cache.z);
    return gout * 4.0 * s * (1.0 - s);
  }
};

// Nearest-neighbour spatial resize (used by the mirrored decoder).
struct NearestResize {
  struct Cache {
    int in_h = 0, in_w = 0;
    std::vector<int> src;  // flat source index per output position
  };
  static Tensor3 forward(const Tensor3& x, int oh, int ow, Cache* cache) {
    Tensor3 out(x.c, oh, ow);
    std::vector<int> src(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
      const int sy = std::min(x.h - 1, y * x.h / oh);
      for (int xx = 0; xx < ow; ++xx) {
        const int sx = std::min(x.w - 1, xx * x.w / ow);
        src[static_cast<size_t>(y) * ow + xx] = sy * x.w + sx;
      }
    }
    for (int c = 0; c < x.c; ++c)
      for (int p = 0; p < oh * ow; ++p)
        out.data(c, p) = x.data(c, src[static_cast<size_t>(p)]);
    if (cache) {
      cache->in_h = x.h;
      cache->in_w = x.w;
      cache->src = std::move(src);
    }
    return out;
  }
  static Tensor3 backward(const Cache& cache, const Tensor3& gout) {
    Tensor3 gin(gout.c, cache.in_h, cache.in_w);
    for (int c = 0; c < gout.c; ++c)
      for (int p = 0; p < gout.h * gout.w; ++p)
        gin.data(c, cache.src[static_cast<size_t>(p)]) += gout.data(c, p);
    return gin;
  }
};

}  // namespace mosbench
