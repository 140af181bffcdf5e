#include "lrdif/kernels.hpp"

#include "kernels_detail.hpp"

#include <vector>

namespace lrdif::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        if (!accumulate)
            for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        if (!trans_b) {
            for (std::size_t p = 0; p < k; ++p) {
                const double av = trans_a ? a[p * m + i] : a[i * k + p];
                const double* bp = b + p * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = b + j * k;
                ci[j] += trans_a ? detail::dot(a + i, m, bj, k) : detail::dot(a + i * k, 1, bj, k);
            }
        }
    }
}

void depthwise3x3(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                  const double* x, const double* weight, double* y) {
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const double* xs = x + bc * h * w;
        const double* ws = weight + (bc % channels) * 9;
        double* ys = y + bc * h * w;
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t col = 0; col < w; ++col) {
                double acc = 0.0;
                for (int dr = -1; dr <= 1; ++dr) {
                    const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
                    if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (int dc = -1; dc <= 1; ++dc) {
                        const auto cc = static_cast<std::ptrdiff_t>(col) + dc;
                        if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                        acc += ws[(dr + 1) * 3 + (dc + 1)] * xs[rr * static_cast<std::ptrdiff_t>(w) + cc];
                    }
                }
                ys[r * w + col] = acc;
            }
        }
    }
}

void depthwise3x3_grad_input(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                             const double* dy, const double* weight, double* dx) {
    // Correlation with the 180-degree rotated kernel.
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const double* gs = dy + bc * h * w;
        const double* ws = weight + (bc % channels) * 9;
        double* ds = dx + bc * h * w;
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t col = 0; col < w; ++col) {
                double acc = 0.0;
                for (int dr = -1; dr <= 1; ++dr) {
                    const auto rr = static_cast<std::ptrdiff_t>(r) - dr;
                    if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (int dc = -1; dc <= 1; ++dc) {
                        const auto cc = static_cast<std::ptrdiff_t>(col) - dc;
                        if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                        acc += ws[(dr + 1) * 3 + (dc + 1)] * gs[rr * static_cast<std::ptrdiff_t>(w) + cc];
                    }
                }
                ds[r * w + col] += acc;
            }
        }
    }
}

void depthwise3x3_grad_weight(std::size_t batch, std::size_t channels, std::size_t h,
                              std::size_t w, const double* dy, const double* x, double* dweight) {
    for (std::size_t c = 0; c < channels; ++c) {
        for (int tap = 0; tap < 9; ++tap) {
            const int dr = tap / 3 - 1;
            const int dc = tap % 3 - 1;
            double acc = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* gs = dy + (b * channels + c) * h * w;
                const double* xs = x + (b * channels + c) * h * w;
                for (std::size_t r = 0; r < h; ++r) {
                    const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
                    if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t col = 0; col < w; ++col) {
                        const auto cc = static_cast<std::ptrdiff_t>(col) + dc;
                        if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                        acc += gs[r * w + col] * xs[rr * static_cast<std::ptrdiff_t>(w) + cc];
                    }
                }
            }
            dweight[c * 9 + tap] += acc;
        }
    }
}

void permute(std::span<const std::size_t> shape, std::span<const std::size_t> perm,
             const double* src, double* dst) {
    const std::size_t rank = shape.size();
    std::size_t total = 1;
    for (auto d : shape) total *= d;
    if (rank == 0) {
        if (total) dst[0] = src[0];
        return;
    }
    std::vector<std::size_t> src_strides(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) src_strides[i - 1] = src_strides[i] * shape[i];
    std::vector<std::size_t> out_shape(rank), step(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = shape[perm[i]];
        step[i] = src_strides[perm[i]];
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t offset = 0;
    for (std::size_t o = 0; o < total; ++o) {
        dst[o] = src[offset];
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            offset += step[ax];
            if (idx[ax] < out_shape[ax]) break;
            offset -= step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

}  // namespace lrdif::kernels::reference
