#include "mdcl/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace mdcl {
namespace {

// Column strip width. B is packed one strip at a time so the microkernel
// streams contiguous panels; 32 floats = 4 AVX2 / 2 AVX-512 vectors per row.
constexpr int kNR = 32;

// C strip (MR x jn) = op(A) rows i0.. x packed panel. Accumulators live in a
// fixed-size local array so the compiler keeps them in vector registers
// across the k loop.
template <typename T, int MR>
void microkernel(int K, const T* a, long a_rs, long a_cs, const T* panel, T* c,
                 int ldc, int jn, bool accumulate) {
  T acc[MR][kNR];
  for (int r = 0; r < MR; ++r)
    for (int j = 0; j < kNR; ++j) acc[r][j] = T(0);
  for (int k = 0; k < K; ++k) {
    const T* b = panel + static_cast<long>(k) * kNR;
    for (int r = 0; r < MR; ++r) {
      const T av = a[r * a_rs + k * a_cs];
      for (int j = 0; j < kNR; ++j) acc[r][j] += av * b[j];
    }
  }
  for (int r = 0; r < MR; ++r) {
    T* crow = c + static_cast<long>(r) * ldc;
    if (accumulate) {
      for (int j = 0; j < jn; ++j) crow[j] += acc[r][j];
    } else {
      for (int j = 0; j < jn; ++j) crow[j] = acc[r][j];
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, int lda,
          const T* b, int ldb, T* c, int ldc, bool accumulate) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate)
      for (int i = 0; i < m; ++i) std::memset(c + static_cast<long>(i) * ldc, 0, sizeof(T) * n);
    return;
  }
  const long a_rs = trans_a ? 1 : lda;
  const long a_cs = trans_a ? lda : 1;
  std::vector<T> panel(static_cast<std::size_t>(k) * kNR);
  for (int j0 = 0; j0 < n; j0 += kNR) {
    const int jn = std::min(kNR, n - j0);
    for (int kk = 0; kk < k; ++kk) {
      T* dst = panel.data() + static_cast<long>(kk) * kNR;
      if (trans_b) {
        for (int j = 0; j < jn; ++j) dst[j] = b[static_cast<long>(j0 + j) * ldb + kk];
      } else {
        const T* src = b + static_cast<long>(kk) * ldb + j0;
        for (int j = 0; j < jn; ++j) dst[j] = src[j];
      }
      for (int j = jn; j < kNR; ++j) dst[j] = T(0);
    }
    int i = 0;
    for (; i + 2 <= m; i += 2)
      microkernel<T, 2>(k, a + i * a_rs, a_rs, a_cs, panel.data(),
                        c + static_cast<long>(i) * ldc + j0, ldc, jn, accumulate);
    if (i < m)
      microkernel<T, 1>(k, a + i * a_rs, a_rs, a_cs, panel.data(),
                        c + static_cast<long>(i) * ldc + j0, ldc, jn, accumulate);
  }
}

template void gemm<float>(bool, bool, int, int, int, const float*, int, const float*, int,
                          float*, int, bool);
template void gemm<double>(bool, bool, int, int, int, const double*, int, const double*, int,
                           double*, int, bool);

}  // namespace mdcl
