#include "mobyal/numcore/kernels.hpp"

namespace mobyal::numcore::kernels::reference {

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[j * k + kk];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

namespace {

// Input coordinate for output position o and kernel tap t, or -1 if padded.
inline long tap(std::size_t o, std::size_t t, std::size_t stride, std::size_t extent) {
  const long i = static_cast<long>(o * stride + t) - 1;
  return (i < 0 || i >= static_cast<long>(extent)) ? -1 : i;
}

}  // namespace

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc{0};
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t kh = 0; kh < 3; ++kh) {
              for (std::size_t kw = 0; kw < 3; ++kw) {
                const long iy = tap(oy, kh, g.stride, g.height);
                const long ix = tap(ox, kw, g.stride, g.width);
                if (iy < 0 || ix < 0) continue;
                acc += w[((f * g.in_channels + c) * 3 + kh) * 3 + kw] *
                       x[((n * g.in_channels + c) * g.height + static_cast<std::size_t>(iy)) * g.width +
                         static_cast<std::size_t>(ix)];
              }
            }
          }
          y[((n * g.out_channels + f) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T g_out = dy[((n * g.out_channels + f) * oh + oy) * ow + ox];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t kh = 0; kh < 3; ++kh) {
              for (std::size_t kw = 0; kw < 3; ++kw) {
                const long iy = tap(oy, kh, g.stride, g.height);
                const long ix = tap(ox, kw, g.stride, g.width);
                if (iy < 0 || ix < 0) continue;
                const std::size_t xi = ((n * g.in_channels + c) * g.height + static_cast<std::size_t>(iy)) *
                                           g.width +
                                       static_cast<std::size_t>(ix);
                const std::size_t wi = ((f * g.in_channels + c) * 3 + kh) * 3 + kw;
                dw[wi] += g_out * x[xi];
                if (!dx.empty()) dx[xi] += g_out * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

void min_sq_distance_update(std::span<const double> points, std::size_t dim, std::span<const double> center,
                            std::span<double> dist) {
  for (std::size_t i = 0; i < dist.size(); ++i) {
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = points[i * dim + d] - center[d];
      acc += diff * diff;
    }
    if (acc < dist[i]) dist[i] = acc;
  }
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void conv2d_forward<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                    std::span<float>);
template void conv2d_forward<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                     std::span<double>);
template void conv2d_backward<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                     std::span<const float>, std::span<float>, std::span<float>);
template void conv2d_backward<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                      std::span<const double>, std::span<double>, std::span<double>);

}  // namespace mobyal::numcore::kernels::reference
