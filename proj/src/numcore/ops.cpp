#include "mobyal/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <sstream>
#include <string>

#include "mobyal/numcore/kernels.hpp"

namespace mobyal::numcore {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

constexpr std::size_t kParallelElems = std::size_t{1} << 15;

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(shape));
  }
}

template <class T>
Tensor<T> make_output(Shape shape, bool record) {
  Tensor<T> out(std::move(shape));
  out.set_requires_grad(record);
  return out;
}

}  // namespace

template <class T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " . " +
                         shape_string(b.shape()));
  }
  const bool record = needs_record(tape, a, b);
  auto out = make_output<T>({p, r}, record);
  kernels::gemm(p, r, q, a.data().data(), b.data().data(), out.data().data(), false);
  if (record) {
    tape->record("matmul", {a, b}, out, [a = a, b = b, out, p, q, r]() mutable {
      const T* dc = out.grad().data();
      if (a.requires_grad()) {
        std::vector<T> bt(r * q);
        kernels::transpose(q, r, b.data().data(), bt.data());
        kernels::gemm(p, q, r, dc, bt.data(), a.ensure_grad().data(), true);
      }
      if (b.requires_grad()) {
        std::vector<T> at(q * p);
        kernels::transpose(p, q, a.data().data(), at.data());
        kernels::gemm(q, r, p, at.data(), dc, b.ensure_grad().data(), true);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "linear");
  require_rank(weight.shape(), 2, "linear");
  require_rank(bias.shape(), 1, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out_dim) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + ", weight " + shape_string(weight.shape()) +
                         ", bias " + shape_string(bias.shape()));
  }
  const bool record = needs_record(tape, x, weight, bias);
  auto out = make_output<T>({n, out_dim}, record);
  std::vector<T> wt(in * out_dim);
  kernels::transpose(out_dim, in, weight.data().data(), wt.data());
  kernels::gemm(n, out_dim, in, x.data().data(), wt.data(), out.data().data(), false);
  auto y = out.data();
  const auto b = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) y[i * out_dim + j] += b[j];
  }
  if (record) {
    tape->record("linear", {x, weight, bias}, out, [x = x, weight = weight, bias = bias, out, n, in, out_dim]() mutable {
      const auto dy = out.grad();
      if (x.requires_grad()) {
        kernels::gemm(n, in, out_dim, dy.data(), weight.data().data(), x.ensure_grad().data(), true);
      }
      if (weight.requires_grad()) {
        std::vector<T> dyt(out_dim * n);
        kernels::transpose(n, out_dim, dy.data(), dyt.data());
        kernels::gemm(out_dim, in, n, dyt.data(), x.data().data(), weight.ensure_grad().data(), true);
      }
      if (bias.requires_grad()) {
        auto db = bias.ensure_grad();
        for (std::size_t j = 0; j < out_dim; ++j) {
          T acc{0};
          for (std::size_t i = 0; i < n; ++i) acc += dy[i * out_dim + j];
          db[j] += acc;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride) {
  require_rank(x.shape(), 4, "conv2d");
  require_rank(weight.shape(), 4, "conv2d");
  if (weight.dim(2) != 3 || weight.dim(3) != 3) {
    throw DimensionError("conv2d: only 3x3 kernels are supported, got " + shape_string(weight.shape()));
  }
  if (weight.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                         std::to_string(weight.dim(1)));
  }
  if (x.dim(2) < 3 || x.dim(3) < 3) throw DimensionError("conv2d: spatial size must be at least 3x3");
  if (stride != 1 && stride != 2) throw DimensionError("conv2d: stride must be 1 or 2");

  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = weight.dim(0);
  g.stride = stride;

  const bool record = needs_record(tape, x, weight);
  auto out = make_output<T>({g.batch, g.out_channels, g.out_height(), g.out_width()}, record);
  auto col = record ? std::make_shared<std::vector<T>>() : nullptr;
  kernels::conv2d_forward<T>(g, x.data(), weight.data(), out.data(), col.get());
  if (record) {
    tape->record("conv2d", {x, weight}, out, [x = x, weight = weight, out, g, col]() mutable {
      std::span<T> dx;
      if (x.requires_grad()) dx = x.ensure_grad();
      // The weight gradient is always formed; it is discarded if not needed.
      std::vector<T> scratch;
      std::span<T> dw;
      if (weight.requires_grad()) {
        dw = weight.ensure_grad();
      } else {
        scratch.assign(weight.numel(), T{0});
        dw = scratch;
      }
      kernels::conv2d_backward<T>(g, *col, weight.data(), out.grad(), dx, dw);
    });
  }
  return out;
}

template <class T>
Tensor<T> batchnorm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, BnMode mode, bool update_running) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw DimensionError("batchnorm: expected [N x C] or [N x C x H x W], got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != channels || beta.numel() != channels || stats.running_mean.size() != channels ||
      stats.running_var.size() != channels) {
    throw DimensionError("batchnorm: parameter size does not match " + std::to_string(channels) + " channels");
  }
  if (mode == BnMode::Train && n < 2) {
    throw DegenerateBatchError("batchnorm: train mode needs a batch of at least 2, got " + std::to_string(n));
  }
  const std::size_t count = n * inner;
  const bool record = needs_record(tape, x, gamma, beta);
  auto out = make_output<T>(x.shape(), record);

  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  const auto xs = x.data();
  auto ys = out.data();
  const auto gs = gamma.data();
  const auto bs = beta.data();

  const auto nc = static_cast<std::int64_t>(channels);
#pragma omp parallel for schedule(static) if (x.numel() > kParallelElems)
  for (std::int64_t ci = 0; ci < nc; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double mean = 0.0, var = 0.0;
    if (mode == BnMode::Train) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xs.data() + (i * channels + c) * inner;
#pragma omp simd reduction(+ : mean)
        for (std::size_t j = 0; j < inner; ++j) mean += p[j];
      }
      mean /= static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xs.data() + (i * channels + c) * inner;
#pragma omp simd reduction(+ : var)
        for (std::size_t j = 0; j < inner; ++j) {
          const double d = p[j] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      if (update_running) {
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        stats.running_mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.running_mean[c] +
                                               kBatchNormMomentum * mean);
        stats.running_var[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.running_var[c] +
                                              kBatchNormMomentum * unbiased);
      }
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + kBatchNormEpsilon);
    (*inv_std)[c] = istd;
    T* xh = xhat->data();
    const T gc = gs[c], bc = bs[c];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * channels + c) * inner;
#pragma omp simd
      for (std::size_t j = 0; j < inner; ++j) {
        const T h = static_cast<T>((xs[base + j] - mean) * istd);
        xh[base + j] = h;
        ys[base + j] = gc * h + bc;
      }
    }
  }

  if (record) {
    tape->record("batchnorm", {x, gamma, beta}, out,
                 [x = x, gamma = gamma, beta = beta, out, xhat, inv_std, n, channels, inner, count, mode]() mutable {
                   const auto dy = out.grad();
                   std::span<T> dx, dg, db;
                   if (x.requires_grad()) dx = x.ensure_grad();
                   if (gamma.requires_grad()) dg = gamma.ensure_grad();
                   if (beta.requires_grad()) db = beta.ensure_grad();
                   const auto gs = gamma.data();
                   const auto nc = static_cast<std::int64_t>(channels);
#pragma omp parallel for schedule(static) if (x.numel() > kParallelElems)
                   for (std::int64_t ci = 0; ci < nc; ++ci) {
                     const auto c = static_cast<std::size_t>(ci);
                     double sum_dy = 0.0, sum_dy_xhat = 0.0;
                     const T* xh = xhat->data();
                     for (std::size_t i = 0; i < n; ++i) {
                       const std::size_t base = (i * channels + c) * inner;
#pragma omp simd reduction(+ : sum_dy, sum_dy_xhat)
                       for (std::size_t j = 0; j < inner; ++j) {
                         sum_dy += dy[base + j];
                         sum_dy_xhat += static_cast<double>(dy[base + j]) * xh[base + j];
                       }
                     }
                     if (!dg.empty()) dg[c] += static_cast<T>(sum_dy_xhat);
                     if (!db.empty()) db[c] += static_cast<T>(sum_dy);
                     if (dx.empty()) continue;
                     const double scale = gs[c] * (*inv_std)[c];
                     const double mean_dy = sum_dy / static_cast<double>(count);
                     const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(count);
                     const bool train = mode == BnMode::Train;
                     for (std::size_t i = 0; i < n; ++i) {
                       const std::size_t base = (i * channels + c) * inner;
                       T* dxp = dx.data() + base;
                       const T* dyp = dy.data() + base;
                       if (train) {
#pragma omp simd
                         for (std::size_t j = 0; j < inner; ++j) {
                           dxp[j] += static_cast<T>(scale * (dyp[j] - mean_dy - xh[base + j] * mean_dy_xhat));
                         }
                       } else {
#pragma omp simd
                         for (std::size_t j = 0; j < inner; ++j) dxp[j] += static_cast<T>(scale * dyp[j]);
                       }
                     }
                   }
                 });
  }
  return out;
}

template <class T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  const bool record = needs_record(tape, x);
  auto out = make_output<T>(x.shape(), record);
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > T{0} ? xs[i] : T{0};
  if (record) {
    tape->record("relu", {x}, out, [x = x, out]() mutable {
      const auto xs = x.data();
      const auto dy = out.grad();
      auto dx = x.ensure_grad();
      for (std::size_t i = 0; i < xs.size(); ++i) dx[i] += xs[i] > T{0} ? dy[i] : T{0};
    });
  }
  return out;
}

template <class T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.dim(2) * x.dim(3);
  const bool record = needs_record(tape, x);
  auto out = make_output<T>({n, c}, record);
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t j = 0; j < inner; ++j) acc += xs[p * inner + j];
    ys[p] = static_cast<T>(acc / static_cast<double>(inner));
  }
  if (record) {
    tape->record("global_avg_pool", {x}, out, [x = x, out, n, c, inner]() mutable {
      const auto dy = out.grad();
      auto dx = x.ensure_grad();
      const T w = T{1} / static_cast<T>(inner);
      for (std::size_t p = 0; p < n * c; ++p) {
        const T g = dy[p] * w;
        for (std::size_t j = 0; j < inner; ++j) dx[p * inner + j] += g;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
  }
  const bool record = needs_record(tape, logits);
  auto probs = std::make_shared<std::vector<double>>(n * classes);
  const auto ls = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = ls.data() + i * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < classes; ++j) (*probs)[i * classes + j] = std::exp(row[j] - log_z);
    total += log_z - row[labels[i]];
  }
  auto out = make_output<T>({1}, record);
  out[0] = static_cast<T>(total / static_cast<double>(n));
  if (record) {
    std::vector<int> ys(labels.begin(), labels.end());
    tape->record("softmax_cross_entropy", {logits}, out, [logits = logits, out, probs, ys, n, classes]() mutable {
      const double g = static_cast<double>(out.grad()[0]) / static_cast<double>(n);
      auto dl = logits.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < classes; ++j) {
          const double onehot = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
          dl[i * classes + j] += static_cast<T>(g * ((*probs)[i * classes + j] - onehot));
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> l2_normalize(Tape<T>* tape, const Tensor<T>& x) {
  require_rank(x.shape(), 2, "l2_normalize");
  const std::size_t n = x.dim(0), d = x.dim(1);
  const bool record = needs_record(tape, x);
  auto out = make_output<T>(x.shape(), record);
  auto norms = std::make_shared<std::vector<double>>(n);
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(xs[i * d + j]) * xs[i * d + j];
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NormalizationError("l2_normalize: row " + std::to_string(i) + " has norm " + std::to_string(norm));
    }
    (*norms)[i] = norm;
    for (std::size_t j = 0; j < d; ++j) ys[i * d + j] = static_cast<T>(xs[i * d + j] / norm);
  }
  if (record) {
    tape->record("l2_normalize", {x}, out, [x = x, out, norms, n, d]() mutable {
      const auto ys = out.data();
      const auto dy = out.grad();
      auto dx = x.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(ys[i * d + j]) * dy[i * d + j];
        for (std::size_t j = 0; j < d; ++j) {
          dx[i * d + j] += static_cast<T>((dy[i * d + j] - ys[i * d + j] * dot) / (*norms)[i]);
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const bool record = needs_record(tape, a, b);
  auto out = make_output<T>(a.shape(), record);
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (record) {
    tape->record("add", {a, b}, out, [a = a, b = b, out]() mutable {
      const auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, double factor) {
  const bool record = needs_record(tape, a);
  auto out = make_output<T>(a.shape(), record);
  const T f = static_cast<T>(factor);
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f * a[i];
  if (record) {
    tape->record("scale", {a}, out, [a = a, out, f]() mutable {
      const auto dy = out.grad();
      auto da = a.ensure_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += f * dy[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const bool record = needs_record(tape, a, b);
  auto out = make_output<T>(a.shape(), record);
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (record) {
    tape->record("mul", {a, b}, out, [a = a, b = b, out]() mutable {
      const auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto db = b.ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& a) {
  const bool record = needs_record(tape, a);
  auto out = make_output<T>({1}, record);
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  out[0] = static_cast<T>(acc);
  if (record) {
    tape->record("sum", {a}, out, [a = a, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : a.ensure_grad()) v += g;
    });
  }
  return out;
}

template <class T>
std::vector<double> softmax_rows(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax_rows");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<double> p(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (p[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] /= z;
  }
  return p;
}

#define MOBYAL_INSTANTIATE(T)                                                                                  \
  template Tensor<T> matmul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> linear<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> conv2d<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, std::size_t);                    \
  template Tensor<T> batchnorm<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                  BatchNormStats<T>&, BnMode, bool);                                          \
  template Tensor<T> relu<T>(Tape<T>*, const Tensor<T>&);                                                     \
  template Tensor<T> global_avg_pool<T>(Tape<T>*, const Tensor<T>&);                                          \
  template Tensor<T> softmax_cross_entropy<T>(Tape<T>*, const Tensor<T>&, std::span<const int>);              \
  template Tensor<T> l2_normalize<T>(Tape<T>*, const Tensor<T>&);                                             \
  template Tensor<T> add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale<T>(Tape<T>*, const Tensor<T>&, double);                                            \
  template Tensor<T> mul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sum<T>(Tape<T>*, const Tensor<T>&);                                                      \
  template std::vector<double> softmax_rows<T>(const Tensor<T>&);

MOBYAL_INSTANTIATE(float)
MOBYAL_INSTANTIATE(double)
#undef MOBYAL_INSTANTIATE

}  // namespace mobyal::numcore
