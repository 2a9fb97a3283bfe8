#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Raw compute kernels behind the differentiable ops.
//
// kernels::*            OpenMP-parallel versions used by the ops.
// kernels::reference::* straightforward serial loops, kept as the test and
//                       benchmark baseline.
//
// Every parallel kernel partitions work by output element and keeps each
// element's reduction in a fixed serial order, so results do not depend on
// the thread count or schedule.
namespace mobyal::numcore::kernels {

// 3x3 convolution with zero padding 1.
struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;

  std::size_t out_height() const { return (height + 2 - 3) / stride + 1; }
  std::size_t out_width() const { return (width + 2 - 3) / stride + 1; }
  std::size_t out_pixels() const { return out_height() * out_width(); }
  std::size_t patch_size() const { return in_channels * 9; }
};

int max_threads();
void set_threads(int n);

// c[m x n] = a[m x k] * b[k x n] (or += when accumulate), all row-major.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

// c[m x n] = a[m x k] * b[n x k]^T (or += when accumulate).
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

// col has shape [in_channels*9, batch*out_pixels].
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col);

// dx += fold(col); inverse scatter of im2col.
template <class T>
void col2im(const ConvGeometry& g, const T* col, T* dx);

// y = conv(x, w). When col is non-null it receives the im2col buffer for reuse
// in the backward pass.
template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y,
                    std::vector<T>* col);

// dw += dL/dw; dx += dL/dx when dx is non-empty. col is the forward im2col buffer.
template <class T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> col, std::span<const T> w,
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw);

// dist[i] = min(dist[i], ||points_i - center||^2) over rows of a [n x d] matrix.
void min_sq_distance_update(std::span<const double> points, std::size_t dim, std::span<const double> center,
                            std::span<double> dist);

namespace reference {

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);

template <class T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw);

void min_sq_distance_update(std::span<const double> points, std::size_t dim, std::span<const double> center,
                            std::span<double> dist);

}  // namespace reference
}  // namespace mobyal::numcore::kernels
