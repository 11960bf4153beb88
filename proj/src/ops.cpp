#include "drrff/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>

namespace drrff {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

struct ConvGeom {
  int n, c, h, w, o, k, stride, pad, ho, wo;
  std::size_t spatial_out() const { return static_cast<std::size_t>(n) * ho * wo; }
  std::size_t patch() const { return static_cast<std::size_t>(c) * k * k; }
};

// Output columns [lo, hi) whose input column ow * stride - pad + kj lies inside [0, w).
inline void valid_cols(const ConvGeom& g, int kj, int& lo, int& hi) {
  lo = 0;
  while (lo < g.wo && lo * g.stride - g.pad + kj < 0) ++lo;
  hi = g.wo;
  while (hi > lo && (hi - 1) * g.stride - g.pad + kj >= g.w) --hi;
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t cols_w = g.spatial_out();
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        int lo, hi;
        valid_cols(g, kj, lo, hi);
        const int off = kj - g.pad;
        T* dst = cols + ((static_cast<std::size_t>(c) * g.k + ki) * g.k + kj) * cols_w;
        for (int n = 0; n < g.n; ++n) {
          const T* plane = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            T* row = dst + (static_cast<std::size_t>(n) * g.ho + oh) * g.wo;
            if (ih < 0 || ih >= g.h) {
              std::fill(row, row + g.wo, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(ih) * g.w;
            std::fill(row, row + lo, T(0));
            if (g.stride == 1) {
              std::copy(src + lo + off, src + hi + off, row + lo);
            } else {
              for (int ow = lo; ow < hi; ++ow) row[ow] = src[ow * g.stride + off];
            }
            std::fill(row + hi, row + g.wo, T(0));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::size_t cols_w = g.spatial_out();
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        int lo, hi;
        valid_cols(g, kj, lo, hi);
        const int off = kj - g.pad;
        const T* srcrow = cols + ((static_cast<std::size_t>(c) * g.k + ki) * g.k + kj) * cols_w;
        for (int n = 0; n < g.n; ++n) {
          T* plane = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.h) continue;
            const T* row = srcrow + (static_cast<std::size_t>(n) * g.ho + oh) * g.wo;
            T* dst = plane + static_cast<std::size_t>(ih) * g.w;
            if (g.stride == 1) {
              for (int ow = lo; ow < hi; ++ow) dst[ow + off] += row[ow];
            } else {
              for (int ow = lo; ow < hi; ++ow) dst[ow * g.stride + off] += row[ow];
            }
          }
        }
      }
    }
  }
}

// Samples per im2col chunk, so that the column buffer stays cache-sized.
inline int chunk_samples(const ConvGeom& g) {
  constexpr std::size_t kTargetCols = 2048;
  const std::size_t hw = static_cast<std::size_t>(g.ho) * g.wo;
  return static_cast<int>(std::clamp<std::size_t>((kTargetCols + hw - 1) / hw, 1, static_cast<std::size_t>(g.n)));
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  require_rank(x.shape(), 4, "conv2d");
  require_rank(weight.shape(), 4, "conv2d weight");
  ConvGeom g{};
  g.n = x.shape()[0];
  g.c = x.shape()[1];
  g.h = x.shape()[2];
  g.w = x.shape()[3];
  g.o = weight.shape()[0];
  g.k = weight.shape()[2];
  g.stride = stride;
  g.pad = pad;
  if (weight.shape()[1] != g.c || weight.shape()[3] != g.k) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: empty output for input " + to_string(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != static_cast<std::size_t>(g.o)) throw ShapeError("conv2d: bias size");

  const std::size_t hw = static_cast<std::size_t>(g.ho) * g.wo;
  const std::size_t in_plane = static_cast<std::size_t>(g.c) * g.h * g.w;
  const int chunk = chunk_samples(g);
  std::vector<T> cols(g.patch() * chunk * hw);
  std::vector<T> out_buf(static_cast<std::size_t>(g.o) * chunk * hw);
  const ConstMatMap<T> wmat(weight.value().data(), g.o, g.patch());

  Tensor<T> out(Shape{g.n, g.o, g.ho, g.wo});
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    ConvGeom gc = g;
    gc.n = std::min(chunk, g.n - n0);
    const std::size_t sp = gc.spatial_out();
    im2col(x.value().data() + n0 * in_plane, gc, cols.data());
    MatMap<T>(out_buf.data(), g.o, sp).noalias() = wmat * ConstMatMap<T>(cols.data(), g.patch(), sp);
    for (int n = 0; n < gc.n; ++n) {
      for (int o = 0; o < g.o; ++o) {
        const T b = has_bias ? bias.value()[o] : T(0);
        const T* src = out_buf.data() + static_cast<std::size_t>(o) * sp + n * hw;
        T* dst = out.data() + (static_cast<std::size_t>(n0 + n) * g.o + o) * hw;
        for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + b;
      }
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_var(std::move(out), inputs, [x, weight, bias, g, has_bias](const Tensor<T>& grad) {
    const std::size_t hw = static_cast<std::size_t>(g.ho) * g.wo;
    const std::size_t in_plane = static_cast<std::size_t>(g.c) * g.h * g.w;
    if (has_bias && bias.requires_grad()) {
      Tensor<T> db(bias.shape());
      for (int n = 0; n < g.n; ++n) {
        for (int o = 0; o < g.o; ++o) {
          const T* src = grad.data() + (static_cast<std::size_t>(n) * g.o + o) * hw;
          double acc = 0.0;
          for (std::size_t p = 0; p < hw; ++p) acc += src[p];
          db[o] += static_cast<T>(acc);
        }
      }
      accumulate_grad(bias, db);
    }
    const bool need_w = weight.requires_grad();
    const bool need_x = x.requires_grad();
    if (!need_w && !need_x) return;

    const int chunk = chunk_samples(g);
    const ConstMatMap<T> wmat(weight.value().data(), g.o, g.patch());
    std::vector<T> gbuf(static_cast<std::size_t>(g.o) * chunk * hw);
    std::vector<T> cols(need_w ? g.patch() * chunk * hw : 0);
    std::vector<T> dcols(need_x ? g.patch() * chunk * hw : 0);
    RowMat<T> dw_acc = RowMat<T>::Zero(need_w ? g.o : 0, g.patch());
    Tensor<T> dx(need_x ? x.shape() : Shape{0});
    for (int n0 = 0; n0 < g.n; n0 += chunk) {
      ConvGeom gc = g;
      gc.n = std::min(chunk, g.n - n0);
      const std::size_t sp = gc.spatial_out();
      for (int n = 0; n < gc.n; ++n) {
        for (int o = 0; o < g.o; ++o) {
          const T* src = grad.data() + (static_cast<std::size_t>(n0 + n) * g.o + o) * hw;
          std::copy(src, src + hw, gbuf.data() + static_cast<std::size_t>(o) * sp + n * hw);
        }
      }
      const ConstMatMap<T> gm(gbuf.data(), g.o, sp);
      if (need_w) {
        im2col(x.value().data() + n0 * in_plane, gc, cols.data());
        dw_acc.noalias() += gm * ConstMatMap<T>(cols.data(), g.patch(), sp).transpose();
      }
      if (need_x) {
        MatMap<T>(dcols.data(), g.patch(), sp).noalias() = wmat.transpose() * gm;
        col2im(dcols.data(), gc, dx.data() + n0 * in_plane);
      }
    }
    if (need_w) accumulate_grad(weight, Tensor<T>(weight.shape(), std::vector<T>(dw_acc.data(), dw_acc.data() + dw_acc.size())));
    if (need_x) accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, NormMode mode, T momentum,
                  T eps) {
  const Shape& s = x.shape();
  if (s.size() != 4 && s.size() != 2) throw ShapeError("batch_norm: expected rank 2 or 4, got " + to_string(s));
  const int n = s[0];
  const int c = s[1];
  const std::size_t hw = s.size() == 4 ? static_cast<std::size_t>(s[2]) * s[3] : 1;
  if (gamma.size() != static_cast<std::size_t>(c) || running_mean.size() != static_cast<std::size_t>(c)) {
    throw ShapeError("batch_norm: channel count mismatch for input " + to_string(s));
  }
  const std::size_t count = static_cast<std::size_t>(n) * hw;
  const T* xv = x.value().data();

  std::vector<T> mu(c), invstd(c);
  const bool batch_stats = mode != NormMode::kRunning;
  for (int ch = 0; ch < c; ++ch) {
    if (batch_stats) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = xv + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) acc += p[j];
      }
      const double m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = xv + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double d = p[j] - m;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mu[ch] = static_cast<T>(m);
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      if (mode == NormMode::kBatchUpdate) {
        const double unbiased = count > 1 ? var * count / static_cast<double>(count - 1) : var;
        running_mean[ch] = static_cast<T>((1.0 - momentum) * running_mean[ch] + momentum * m);
        running_var[ch] = static_cast<T>((1.0 - momentum) * running_var[ch] + momentum * unbiased);
      }
    } else {
      mu[ch] = running_mean[ch];
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps));
    }
  }

  Tensor<T> xhat(s);
  Tensor<T> out(s);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      const T gm = gamma.value()[ch];
      const T bt = beta.value()[ch];
      for (std::size_t j = 0; j < hw; ++j) {
        const T h = (xv[base + j] - mu[ch]) * invstd[ch];
        xhat[base + j] = h;
        out[base + j] = gm * h + bt;
      }
    }
  }

  return make_var(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd), batch_stats, n, c,
                   hw, count](const Tensor<T>& grad) {
                    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                    for (int i = 0; i < n; ++i) {
                      for (int ch = 0; ch < c; ++ch) {
                        const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
                        for (std::size_t j = 0; j < hw; ++j) {
                          sum_g[ch] += grad[base + j];
                          sum_gx[ch] += grad[base + j] * xhat[base + j];
                        }
                      }
                    }
                    if (gamma.requires_grad()) {
                      Tensor<T> dg(gamma.shape());
                      for (int ch = 0; ch < c; ++ch) dg[ch] = static_cast<T>(sum_gx[ch]);
                      accumulate_grad(gamma, dg);
                    }
                    if (beta.requires_grad()) {
                      Tensor<T> db(beta.shape());
                      for (int ch = 0; ch < c; ++ch) db[ch] = static_cast<T>(sum_g[ch]);
                      accumulate_grad(beta, db);
                    }
                    if (!x.requires_grad()) return;
                    Tensor<T> dx(x.shape());
                    const double m = static_cast<double>(count);
                    for (int i = 0; i < n; ++i) {
                      for (int ch = 0; ch < c; ++ch) {
                        const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
                        const double gm = gamma.value()[ch];
                        const double is = invstd[ch];
                        for (std::size_t j = 0; j < hw; ++j) {
                          if (batch_stats) {
                            // d/dx of gamma * (x - mean) / std with batch statistics
                            dx[base + j] = static_cast<T>(
                                gm * is / m *
                                (m * grad[base + j] - sum_g[ch] - xhat[base + j] * sum_gx[ch]));
                          } else {
                            dx[base + j] = static_cast<T>(gm * is * grad[base + j]);
                          }
                        }
                      }
                    }
                    accumulate_grad(x, dx);
                  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
  return make_var(std::move(out), {x}, [x, slope](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    const T* xv = x.value().data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xv[i] > T(0) ? grad[i] : slope * grad[i];
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.value()[i]);
  Tensor<T> y = out;
  return make_var(std::move(out), {x}, [x, y = std::move(y)](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad[i] * (T(1) - y[i] * y[i]);
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  require_rank(x.shape(), 4, "max_pool2");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError("max_pool2: odd spatial size in " + to_string(x.shape()));
  }
  const int ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{n, c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  const T* xv = x.value().data();
  std::size_t idx = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::size_t plane = static_cast<std::size_t>(p) * h * w;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j, ++idx) {
        std::size_t best = plane + static_cast<std::size_t>(2 * i) * w + 2 * j;
        for (int di = 0; di < 2; ++di) {
          for (int dj = 0; dj < 2; ++dj) {
            const std::size_t k = plane + static_cast<std::size_t>(2 * i + di) * w + 2 * j + dj;
            if (xv[k] > xv[best]) best = k;
          }
        }
        out[idx] = xv[best];
        argmax[idx] = best;
      }
    }
  }
  return make_var(std::move(out), {x}, [x, argmax = std::move(argmax)](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += grad[i];
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> upsample2(const Var<T>& x) {
  require_rank(x.shape(), 4, "upsample2");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor<T> out(Shape{n, c, 2 * h, 2 * w});
  for (int p = 0; p < n * c; ++p) {
    const T* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * w; ++j) dst[static_cast<std::size_t>(i) * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return make_var(std::move(out), {x}, [x, n, c, h, w](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (int p = 0; p < n * c; ++p) {
      const T* src = grad.data() + static_cast<std::size_t>(p) * 4 * h * w;
      T* dst = dx.data() + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < 2 * h; ++i) {
        for (int j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[static_cast<std::size_t>(i) * 2 * w + j];
      }
    }
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 4, "concat_channels");
  require_rank(b.shape(), 4, "concat_channels");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("concat_channels: " + to_string(sa) + " vs " + to_string(sb));
  }
  const int n = sa[0], ca = sa[1], cb = sb[1];
  const std::size_t hw = static_cast<std::size_t>(sa[2]) * sa[3];
  Tensor<T> out(Shape{n, ca + cb, sa[2], sa[3]});
  for (int i = 0; i < n; ++i) {
    const T* pa = a.value().data() + static_cast<std::size_t>(i) * ca * hw;
    const T* pb = b.value().data() + static_cast<std::size_t>(i) * cb * hw;
    T* dst = out.data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
    std::copy(pa, pa + ca * hw, dst);
    std::copy(pb, pb + cb * hw, dst + ca * hw);
  }
  return make_var(std::move(out), {a, b}, [a, b, n, ca, cb, hw](const Tensor<T>& grad) {
    Tensor<T> da(a.shape()), db(b.shape());
    for (int i = 0; i < n; ++i) {
      const T* src = grad.data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
      std::copy(src, src + ca * hw, da.data() + static_cast<std::size_t>(i) * ca * hw);
      std::copy(src + ca * hw, src + (ca + cb) * hw, db.data() + static_cast<std::size_t>(i) * cb * hw);
    }
    accumulate_grad(a, da);
    accumulate_grad(b, db);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_var(std::move(out), {a, b}, [a, b](const Tensor<T>& grad) {
    accumulate_grad(a, grad);
    accumulate_grad(b, grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_var(std::move(out), {a, b}, [a, b](const Tensor<T>& grad) {
    accumulate_grad(a, grad);
    if (b.requires_grad()) {
      Tensor<T> db(b.shape());
      for (std::size_t i = 0; i < db.size(); ++i) db[i] = -grad[i];
      accumulate_grad(b, db);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_var(std::move(out), {a, b}, [a, b](const Tensor<T>& grad) {
    if (a.requires_grad()) {
      Tensor<T> da(a.shape());
      for (std::size_t i = 0; i < da.size(); ++i) da[i] = grad[i] * b.value()[i];
      accumulate_grad(a, da);
    }
    if (b.requires_grad()) {
      Tensor<T> db(b.shape());
      for (std::size_t i = 0; i < db.size(); ++i) db[i] = grad[i] * a.value()[i];
      accumulate_grad(b, db);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  return make_var(std::move(out), {x}, [x, factor](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad[i] * factor;
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + c;
  return make_var(std::move(out), {x}, [x](const Tensor<T>& grad) { accumulate_grad(x, grad); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * x.value()[i];
  return make_var(std::move(out), {x}, [x](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = T(2) * x.value()[i] * grad[i];
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.value()[i]);
  return make_var(std::move(out), {x}, [x](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T v = x.value()[i];
      dx[i] = v > T(0) ? grad[i] : (v < T(0) ? -grad[i] : T(0));
    }
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_var(std::move(out), {x}, [x](const Tensor<T>& grad) {
    accumulate_grad(x, grad.reshaped(x.shape()));
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.shape(), 2, "linear");
  require_rank(weight.shape(), 2, "linear weight");
  const int n = x.shape()[0], d = x.shape()[1], o = weight.shape()[0];
  if (weight.shape()[1] != d) {
    throw ShapeError("linear: weight " + to_string(weight.shape()) + " vs input " + to_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  Tensor<T> out(Shape{n, o});
  MatMap<T> y(out.data(), n, o);
  y.noalias() = ConstMatMap<T>(x.value().data(), n, d) * ConstMatMap<T>(weight.value().data(), o, d).transpose();
  if (has_bias) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < o; ++j) y(i, j) += bias.value()[j];
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_var(std::move(out), inputs, [x, weight, bias, has_bias, n, d, o](const Tensor<T>& grad) {
    ConstMatMap<T> g(grad.data(), n, o);
    if (x.requires_grad()) {
      Tensor<T> dx(x.shape());
      MatMap<T>(dx.data(), n, d).noalias() = g * ConstMatMap<T>(weight.value().data(), o, d);
      accumulate_grad(x, dx);
    }
    if (weight.requires_grad()) {
      Tensor<T> dw(weight.shape());
      MatMap<T>(dw.data(), o, d).noalias() = g.transpose() * ConstMatMap<T>(x.value().data(), n, d);
      accumulate_grad(weight, dw);
    }
    if (has_bias && bias.requires_grad()) {
      Tensor<T> db(bias.shape());
      for (int j = 0; j < o; ++j) db[j] = g.col(j).sum();
      accumulate_grad(bias, db);
    }
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  return linear(a, b, Var<T>());
}

template <typename T>
Var<T> normalize_rows(const Var<T>& x, T radius) {
  require_rank(x.shape(), 2, "normalize_rows");
  const int n = x.shape()[0], d = x.shape()[1];
  Tensor<T> out(x.shape());
  std::vector<T> norms(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double v = x.value()[static_cast<std::size_t>(i) * d + j];
      acc += v * v;
    }
    if (!(acc > 0.0)) throw DegenerateError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    norms[i] = static_cast<T>(std::sqrt(acc));
    for (int j = 0; j < d; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * d + j;
      out[k] = radius * x.value()[k] / norms[i];
    }
  }
  Tensor<T> y = out;
  return make_var(std::move(out), {x}, [x, radius, n, d, norms = std::move(norms), y = std::move(y)](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * d;
      // y = r * u with u = x / |x|; dx = r / |x| * (g - u (u . g))
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += grad[base + j] * (y[base + j] / radius);
      for (int j = 0; j < d; ++j) {
        const double u = y[base + j] / radius;
        dx[base + j] = static_cast<T>(radius / norms[i] * (grad[base + j] - u * dot));
      }
    }
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  require_rank(x.shape(), 2, "softmax_rows");
  const int n = x.shape()[0], k = x.shape()[1];
  Tensor<T> out(x.shape());
  for (int i = 0; i < n; ++i) {
    const T* row = x.value().data() + static_cast<std::size_t>(i) * k;
    T* dst = out.data() + static_cast<std::size_t>(i) * k;
    const T mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    for (int j = 0; j < k; ++j) dst[j] = static_cast<T>(dst[j] / total);
  }
  Tensor<T> y = out;
  return make_var(std::move(out), {x}, [x, n, k, y = std::move(y)](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * k;
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += grad[base + j] * y[base + j];
      for (int j = 0; j < k; ++j) dx[base + j] = static_cast<T>(y[base + j] * (grad[base + j] - dot));
    }
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> log_floor(const Var<T>& p, T floor) {
  Tensor<T> out(p.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(p.value()[i], floor));
  return make_var(std::move(out), {p}, [p, floor](const Tensor<T>& grad) {
    Tensor<T> dp(p.shape());
    for (std::size_t i = 0; i < dp.size(); ++i) {
      const T v = p.value()[i];
      dp[i] = v > floor ? grad[i] / v : T(0);
    }
    accumulate_grad(p, dp);
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const int> index) {
  require_rank(x.shape(), 2, "gather_rows");
  const int n = x.shape()[0], k = x.shape()[1];
  if (index.size() != static_cast<std::size_t>(n)) throw ShapeError("gather_rows: index count mismatch");
  std::vector<int> idx(index.begin(), index.end());
  Tensor<T> out(Shape{n});
  for (int i = 0; i < n; ++i) {
    if (idx[i] < 0 || idx[i] >= k) throw ShapeError("gather_rows: index out of range");
    out[i] = x.value()[static_cast<std::size_t>(i) * k + idx[i]];
  }
  return make_var(std::move(out), {x}, [x, k, idx = std::move(idx)](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) dx[i * k + idx[i]] = grad[i];
    accumulate_grad(x, dx);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0.0;
  for (T v : x.value().values()) acc += v;
  return make_var(Tensor<T>::scalar(static_cast<T>(acc)), {x}, [x](const Tensor<T>& grad) {
    accumulate_grad(x, Tensor<T>(x.shape(), grad[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mse");
  if (a.size() == 0) throw ShapeError("mse of empty tensors");
  Tensor<T> diff(a.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = a.value()[i] - b.value()[i];
    acc += static_cast<double>(diff[i]) * diff[i];
  }
  const double count = static_cast<double>(diff.size());
  return make_var(Tensor<T>::scalar(static_cast<T>(acc / count)), {a, b},
                  [a, b, diff = std::move(diff), count](const Tensor<T>& grad) {
                    const T f = static_cast<T>(2.0 * grad[0] / count);
                    Tensor<T> da(diff.shape());
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] = f * diff[i];
                    accumulate_grad(a, da);
                    if (b.requires_grad()) {
                      for (auto& v : da.values()) v = -v;
                      accumulate_grad(b, da);
                    }
                  });
}

template <typename T>
Var<T> index_select(const Var<T>& x, std::span<const int> rows) {
  if (x.value().rank() < 1) throw ShapeError("index_select on scalar");
  const int n = x.shape()[0];
  const std::size_t stride = n > 0 ? x.size() / n : 0;
  Shape shape = x.shape();
  shape[0] = static_cast<int>(rows.size());
  std::vector<int> idx(rows.begin(), rows.end());
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw ShapeError("index_select: row out of range");
    std::copy_n(x.value().data() + idx[i] * stride, stride, out.data() + i * stride);
  }
  return make_var(std::move(out), {x}, [x, stride, idx = std::move(idx)](const Tensor<T>& grad) {
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < stride; ++j) dx[idx[i] * stride + j] += grad[i * stride + j];
    }
    accumulate_grad(x, dx);
  });
}

#define DRRFF_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                 \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, \
                             NormMode, T, T);                                                     \
  template Var<T> leaky_relu(const Var<T>&, T);                                                   \
  template Var<T> tanh(const Var<T>&);                                                            \
  template Var<T> max_pool2(const Var<T>&);                                                       \
  template Var<T> upsample2(const Var<T>&);                                                       \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                  \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> add_scalar(const Var<T>&, T);                                                   \
  template Var<T> square(const Var<T>&);                                                          \
  template Var<T> abs(const Var<T>&);                                                             \
  template Var<T> reshape(const Var<T>&, Shape);                                                  \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                        \
  template Var<T> normalize_rows(const Var<T>&, T);                                               \
  template Var<T> softmax_rows(const Var<T>&);                                                    \
  template Var<T> log_floor(const Var<T>&, T);                                                    \
  template Var<T> gather_rows(const Var<T>&, std::span<const int>);                               \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> mean(const Var<T>&);                                                            \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                              \
  template Var<T> index_select(const Var<T>&, std::span<const int>);

DRRFF_INSTANTIATE_OPS(float)
DRRFF_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace drrff
