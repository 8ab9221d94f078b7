#pragma once

namespace mdcl {

// Row-major matrix multiply: C (MxN) = op(A) * op(B), optionally accumulating
// into C. op(A) is A (MxK, leading dim lda) or A^T when trans_a is set (A is
// then KxM). Single-threaded and deterministic: every C element is reduced in
// ascending k order regardless of blocking.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, int lda,
          const T* b, int ldb, T* c, int ldc, bool accumulate);

}  // namespace mdcl
