#include <algorithm>
#include <cstdint>
#include <cstring>
#include <type_traits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mobyal/numcore/kernels.hpp"

namespace mobyal::numcore::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 16;

template <class T>
struct VecOf {
  typedef T type __attribute__((vector_size(64)));
};
template <class T>
using Vec = typename VecOf<T>::type;

template <class T>
struct Tile {
  static constexpr std::size_t lanes = 64 / sizeof(T);
  static constexpr std::size_t rows = 6;
  static constexpr std::size_t cols = 2 * lanes;
};

template <class T>
inline Vec<T> load(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <class T>
inline void store(T* p, std::type_identity_t<Vec<T>> v) {
  std::memcpy(p, &v, sizeof(v));
}

// R rows by two vectors of c. The accumulator starts at zero and adds a*b in
// ascending k for every element.
template <class T, std::size_t R>
inline void gemm_tile_full(std::size_t i0, std::size_t k, const T* a, const T* panel, T* c, std::size_t ldc,
                           bool accumulate) {
  constexpr std::size_t L = Tile<T>::lanes;
  constexpr std::size_t NR = Tile<T>::cols;
  Vec<T> acc0[R], acc1[R];
  for (std::size_t r = 0; r < R; ++r) acc0[r] = acc1[r] = Vec<T>{};
  const T* arow = a + i0 * k;
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* brow = panel + kk * NR;
    const Vec<T> b0 = load(brow);
    const Vec<T> b1 = load(brow + L);
    for (std::size_t r = 0; r < R; ++r) {
      const T av = arow[r * k + kk];
      acc0[r] += av * b0;
      acc1[r] += av * b1;
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    T* crow = c + (i0 + r) * ldc;
    if (accumulate) {
      store(crow, load(crow) + acc0[r]);
      store(crow + L, load(crow + L) + acc1[r]);
    } else {
      store(crow, acc0[r]);
      store(crow + L, acc1[r]);
    }
  }
}

// Narrow right-hand edge, same per-element order.
template <class T>
inline void gemm_tile_edge(std::size_t i0, std::size_t mr, std::size_t nr, std::size_t k, const T* a,
                           const T* panel, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t MR = Tile<T>::rows;
  constexpr std::size_t NR = Tile<T>::cols;
  alignas(64) T acc[MR][NR] = {};
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* brow = panel + kk * NR;
    for (std::size_t r = 0; r < mr; ++r) {
      const T av = a[(i0 + r) * k + kk];
      for (std::size_t j = 0; j < nr; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < mr; ++r) {
    T* crow = c + (i0 + r) * ldc;
    if (accumulate) {
      for (std::size_t j = 0; j < nr; ++j) crow[j] += acc[r][j];
    } else {
      for (std::size_t j = 0; j < nr; ++j) crow[j] = acc[r][j];
    }
  }
}

template <class T>
inline void gemm_tile(std::size_t i0, std::size_t mr, std::size_t nr, std::size_t k, const T* a, const T* panel,
                      T* c, std::size_t ldc, bool accumulate) {
  if (nr != Tile<T>::cols) return gemm_tile_edge<T>(i0, mr, nr, k, a, panel, c, ldc, accumulate);
  switch (mr) {
    case 6: return gemm_tile_full<T, 6>(i0, k, a, panel, c, ldc, accumulate);
    case 5: return gemm_tile_full<T, 5>(i0, k, a, panel, c, ldc, accumulate);
    case 4: return gemm_tile_full<T, 4>(i0, k, a, panel, c, ldc, accumulate);
    case 3: return gemm_tile_full<T, 3>(i0, k, a, panel, c, ldc, accumulate);
    case 2: return gemm_tile_full<T, 2>(i0, k, a, panel, c, ldc, accumulate);
    default: return gemm_tile_full<T, 1>(i0, k, a, panel, c, ldc, accumulate);
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  constexpr std::size_t MR = Tile<T>::rows;
  constexpr std::size_t NR = Tile<T>::cols;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    return;
  }
  // Parallel over column strips of c. Each strip of b is packed into a
  // contiguous [k x NR] panel first so the inner loop walks memory linearly.
  const auto strips = static_cast<std::int64_t>((n + NR - 1) / NR);
#pragma omp parallel if (m * n * k > kParallelWork)
  {
    std::vector<T> panel(k * NR);
#pragma omp for schedule(static)
    for (std::int64_t sidx = 0; sidx < strips; ++sidx) {
      const std::size_t j0 = static_cast<std::size_t>(sidx) * NR;
      const std::size_t nr = std::min(NR, n - j0);
      for (std::size_t kk = 0; kk < k; ++kk) std::copy_n(b + kk * n + j0, nr, panel.data() + kk * NR);
      for (std::size_t i0 = 0; i0 < m; i0 += MR) {
        gemm_tile<T>(i0, std::min(MR, m - i0), nr, k, a, panel.data(), c + j0, n, accumulate);
      }
    }
  }
}

namespace {

// c[i0.., j0..] (+)= a_rows . b_rows over columns [k0, k1), lanes summed in a
// fixed order at the end.
template <class T, std::size_t RI, std::size_t RJ>
inline void dot_tile(std::size_t i0, std::size_t j0, std::size_t k0, std::size_t k1, std::size_t k, const T* a,
                     const T* b, T* c, std::size_t n, bool overwrite) {
  constexpr std::size_t L = Tile<T>::lanes;
  Vec<T> acc[RI][RJ];
  for (std::size_t i = 0; i < RI; ++i)
    for (std::size_t j = 0; j < RJ; ++j) acc[i][j] = Vec<T>{};
  std::size_t kk = k0;
  for (; kk + L <= k1; kk += L) {
    Vec<T> av[RI], bv[RJ];
    for (std::size_t i = 0; i < RI; ++i) av[i] = load(a + (i0 + i) * k + kk);
    for (std::size_t j = 0; j < RJ; ++j) bv[j] = load(b + (j0 + j) * k + kk);
    for (std::size_t i = 0; i < RI; ++i)
      for (std::size_t j = 0; j < RJ; ++j) acc[i][j] += av[i] * bv[j];
  }
  for (std::size_t i = 0; i < RI; ++i) {
    for (std::size_t j = 0; j < RJ; ++j) {
      T sum{0};
      for (std::size_t l = 0; l < L; ++l) sum += acc[i][j][l];
      for (std::size_t t = kk; t < k1; ++t) sum += a[(i0 + i) * k + t] * b[(j0 + j) * k + t];
      T& out = c[(i0 + i) * n + j0 + j];
      out = overwrite ? sum : out + sum;
    }
  }
}

template <class T>
inline void dot_tile_any(std::size_t i0, std::size_t ri, std::size_t j0, std::size_t rj, std::size_t k0,
                         std::size_t k1, std::size_t k, const T* a, const T* b, T* c, std::size_t n,
                         bool overwrite) {
  if (ri == 4 && rj == 4) return dot_tile<T, 4, 4>(i0, j0, k0, k1, k, a, b, c, n, overwrite);
  for (std::size_t i = 0; i < ri; ++i)
    for (std::size_t j = 0; j < rj; ++j) dot_tile<T, 1, 1>(i0 + i, j0 + j, k0, k1, k, a, b, c, n, overwrite);
}

}  // namespace

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  constexpr std::size_t R = 4;
  constexpr std::size_t KB = 512;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    return;
  }
  const std::size_t row_tiles = (m + R - 1) / R;
  const auto tiles = static_cast<std::int64_t>(row_tiles * ((n + R - 1) / R));
  // Blocks of k run in ascending order; within one block every output tile
  // belongs to a single thread, so the sum order is fixed.
#pragma omp parallel if (m * n * k > kParallelWork)
  for (std::size_t k0 = 0; k0 < k; k0 += KB) {
    const std::size_t k1 = std::min(k, k0 + KB);
    const bool overwrite = k0 == 0 && !accumulate;
#pragma omp for schedule(static)
    for (std::int64_t t = 0; t < tiles; ++t) {
      const std::size_t i0 = static_cast<std::size_t>(t) % row_tiles * R;
      const std::size_t j0 = static_cast<std::size_t>(t) / row_tiles * R;
      dot_tile_any<T>(i0, std::min(R, m - i0), j0, std::min(R, n - j0), k0, k1, k, a, b, c, n, overwrite);
    }
  }
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t B = 32;
  const auto row_blocks = static_cast<std::int64_t>((rows + B - 1) / B);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::int64_t rb = 0; rb < row_blocks; ++rb) {
    const std::size_t r0 = static_cast<std::size_t>(rb) * B;
    const std::size_t r1 = std::min(rows, r0 + B);
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), op = oh * ow;
  const std::size_t h = g.height, w = g.width, s = g.stride;
  const std::size_t row_len = g.batch * op;
  const auto rows = static_cast<std::int64_t>(g.patch_size());
#pragma omp parallel for schedule(static) if (g.patch_size() * row_len > kParallelWork)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / 9;
    const std::size_t kh = static_cast<std::size_t>(r) % 9 / 3;
    const std::size_t kw = static_cast<std::size_t>(r) % 3;
    T* out = col + static_cast<std::size_t>(r) * row_len;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* plane = x + (n * g.in_channels + c) * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        // iy = oy*s + kh - 1, computed without unsigned underflow.
        const std::size_t iy1 = oy * s + kh;
        const bool row_ok = iy1 >= 1 && iy1 - 1 < h;
        T* dst = out + n * op + oy * ow;
        if (!row_ok) {
          std::fill(dst, dst + ow, T{0});
          continue;
        }
        const T* src = plane + (iy1 - 1) * w;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t ix1 = ox * s + kw;
          dst[ox] = (ix1 >= 1 && ix1 - 1 < w) ? src[ix1 - 1] : T{0};
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), op = oh * ow;
  const std::size_t h = g.height, w = g.width, s = g.stride;
  const std::size_t row_len = g.batch * op;
  // Parallel over (n, c) planes: each plane of dx is written by one thread,
  // and its 9 contributions are added in fixed (kh, kw) order.
  const auto planes = static_cast<std::int64_t>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static) if (g.patch_size() * row_len > kParallelWork)
  for (std::int64_t pc = 0; pc < planes; ++pc) {
    const std::size_t n = static_cast<std::size_t>(pc) / g.in_channels;
    const std::size_t c = static_cast<std::size_t>(pc) % g.in_channels;
    T* plane = dx + (n * g.in_channels + c) * h * w;
    for (std::size_t kh = 0; kh < 3; ++kh) {
      for (std::size_t kw = 0; kw < 3; ++kw) {
        const T* src = col + (c * 9 + kh * 3 + kw) * row_len + n * op;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::size_t iy1 = oy * s + kh;
          if (iy1 < 1 || iy1 - 1 >= h) continue;
          T* dst = plane + (iy1 - 1) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::size_t ix1 = ox * s + kw;
            if (ix1 >= 1 && ix1 - 1 < w) dst[ix1 - 1] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y,
                    std::vector<T>* col_out) {
  const std::size_t op = g.out_pixels();
  const std::size_t cols = g.batch * op;
  std::vector<T> local;
  std::vector<T>& col = col_out ? *col_out : local;
  col.resize(g.patch_size() * cols);
  im2col(g, x.data(), col.data());

  std::vector<T> out(g.out_channels * cols);
  gemm(g.out_channels, cols, g.patch_size(), w.data(), col.data(), out.data(), false);

  // [F, N*P] -> [N, F, P]
  const auto planes = static_cast<std::int64_t>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static) if (out.size() > kParallelWork)
  for (std::int64_t nf = 0; nf < planes; ++nf) {
    const std::size_t n = static_cast<std::size_t>(nf) / g.out_channels;
    const std::size_t f = static_cast<std::size_t>(nf) % g.out_channels;
    std::copy_n(out.data() + f * cols + n * op, op, y.data() + (n * g.out_channels + f) * op);
  }
}

template <class T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> col, std::span<const T> w,
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw) {
  const std::size_t op = g.out_pixels();
  const std::size_t cols = g.batch * op;
  const std::size_t patch = g.patch_size();

  // [N, F, P] -> [F, N*P]
  std::vector<T> dyc(g.out_channels * cols);
  const auto planes = static_cast<std::int64_t>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static) if (dyc.size() > kParallelWork)
  for (std::int64_t nf = 0; nf < planes; ++nf) {
    const std::size_t n = static_cast<std::size_t>(nf) / g.out_channels;
    const std::size_t f = static_cast<std::size_t>(nf) % g.out_channels;
    std::copy_n(dy.data() + (n * g.out_channels + f) * op, op, dyc.data() + f * cols + n * op);
  }

  gemm_nt(g.out_channels, patch, cols, dyc.data(), col.data(), dw.data(), true);

  if (dx.empty()) return;
  std::vector<T> w_t(patch * g.out_channels);
  transpose(g.out_channels, patch, w.data(), w_t.data());
  std::vector<T> dcol(patch * cols);
  gemm(patch, cols, g.out_channels, w_t.data(), dyc.data(), dcol.data(), false);
  col2im(g, dcol.data(), dx.data());
}

void min_sq_distance_update(std::span<const double> points, std::size_t dim, std::span<const double> center,
                            std::span<double> dist) {
  const auto n = static_cast<std::int64_t>(dist.size());
#pragma omp parallel for schedule(static) if (dist.size() * dim > kParallelWork)
  for (std::int64_t i = 0; i < n; ++i) {
    const double* p = points.data() + static_cast<std::size_t>(i) * dim;
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = p[d] - center[d];
      acc += diff * diff;
    }
    if (acc < dist[static_cast<std::size_t>(i)]) dist[static_cast<std::size_t>(i)] = acc;
  }
}

#define MOBYAL_INSTANTIATE(T)                                                                              \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);            \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);         \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);                                     \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                             \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                             \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,           \
                                  std::span<T>, std::vector<T>*);                                         \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,          \
                                   std::span<const T>, std::span<T>, std::span<T>);

MOBYAL_INSTANTIATE(float)
MOBYAL_INSTANTIATE(double)
#undef MOBYAL_INSTANTIATE

}  // namespace mobyal::numcore::kernels
