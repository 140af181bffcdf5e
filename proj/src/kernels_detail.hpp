#pragma once

#include <cstddef>

namespace lrdif::kernels::detail {

// sum_p a[p * stride] * b[p] with four interleaved partial sums, combined as
// (s0 + s1) + (s2 + s3), then the tail in order.
inline double dot(const double* a, std::size_t stride, const double* b, std::size_t k) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
        s0 += a[p * stride] * b[p];
        s1 += a[(p + 1) * stride] * b[p + 1];
        s2 += a[(p + 2) * stride] * b[p + 2];
        s3 += a[(p + 3) * stride] * b[p + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; p < k; ++p) s += a[p * stride] * b[p];
    return s;
}

}  // namespace lrdif::kernels::detail
