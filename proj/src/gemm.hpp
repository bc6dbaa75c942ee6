#pragma once

#include <cstdint>

namespace odenorm::detail {

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], all row-major. op transposes when the
// flag is set; A is then stored [k,m] and B [n,k].
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const double* a,
          const double* b, double* c, bool accumulate);

}  // namespace odenorm::detail
