#include "lrdif/kernels.hpp"

#include "kernels_detail.hpp"

#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lrdif::kernels {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;
}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
    const auto rows = static_cast<std::int64_t>(m);
    const bool big = m * n * k >= kParallelWork;
    if (!trans_b) {
#pragma omp parallel for schedule(static) if (big)
        for (std::int64_t ii = 0; ii < rows; ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            double* __restrict ci = c + i * n;
            if (!accumulate)
                for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = trans_a ? a[p * m + i] : a[i * k + p];
                const double* __restrict bp = b + p * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    } else {
#pragma omp parallel for schedule(static) if (big)
        for (std::int64_t ii = 0; ii < rows; ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            double* __restrict ci = c + i * n;
            if (!accumulate)
                for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double* __restrict bj = b + j * k;
                ci[j] += trans_a ? detail::dot(a + i, m, bj, k) : detail::dot(a + i * k, 1, bj, k);
            }
        }
    }
}

void depthwise3x3(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                  const double* x, const double* weight, double* y) {
    const auto planes = static_cast<std::int64_t>(batch * channels);
    const auto H = static_cast<std::ptrdiff_t>(h);
    const auto W = static_cast<std::ptrdiff_t>(w);
#pragma omp parallel for schedule(static) if (batch * channels * h * w * 9 >= kParallelWork)
    for (std::int64_t bc = 0; bc < planes; ++bc) {
        const double* xs = x + bc * H * W;
        const double* ws = weight + (static_cast<std::size_t>(bc) % channels) * 9;
        double* ys = y + bc * H * W;
        for (std::ptrdiff_t r = 0; r < H; ++r) {
            for (std::ptrdiff_t col = 0; col < W; ++col) {
                double acc = 0.0;
                for (int dr = -1; dr <= 1; ++dr) {
                    const auto rr = r + dr;
                    if (rr < 0 || rr >= H) continue;
                    for (int dc = -1; dc <= 1; ++dc) {
                        const auto cc = col + dc;
                        if (cc < 0 || cc >= W) continue;
                        acc += ws[(dr + 1) * 3 + (dc + 1)] * xs[rr * W + cc];
                    }
                }
                ys[r * W + col] = acc;
            }
        }
    }
}

void depthwise3x3_grad_input(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                             const double* dy, const double* weight, double* dx) {
    const auto planes = static_cast<std::int64_t>(batch * channels);
    const auto H = static_cast<std::ptrdiff_t>(h);
    const auto W = static_cast<std::ptrdiff_t>(w);
#pragma omp parallel for schedule(static) if (batch * channels * h * w * 9 >= kParallelWork)
    for (std::int64_t bc = 0; bc < planes; ++bc) {
        const double* gs = dy + bc * H * W;
        const double* ws = weight + (static_cast<std::size_t>(bc) % channels) * 9;
        double* ds = dx + bc * H * W;
        for (std::ptrdiff_t r = 0; r < H; ++r) {
            for (std::ptrdiff_t col = 0; col < W; ++col) {
                double acc = 0.0;
                for (int dr = -1; dr <= 1; ++dr) {
                    const auto rr = r - dr;
                    if (rr < 0 || rr >= H) continue;
                    for (int dc = -1; dc <= 1; ++dc) {
                        const auto cc = col - dc;
                        if (cc < 0 || cc >= W) continue;
                        acc += ws[(dr + 1) * 3 + (dc + 1)] * gs[rr * W + cc];
                    }
                }
                ds[r * W + col] += acc;
            }
        }
    }
}

void depthwise3x3_grad_weight(std::size_t batch, std::size_t channels, std::size_t h,
                              std::size_t w, const double* dy, const double* x, double* dweight) {
    const auto H = static_cast<std::ptrdiff_t>(h);
    const auto W = static_cast<std::ptrdiff_t>(w);
#pragma omp parallel for schedule(static) if (batch * channels * h * w * 9 >= kParallelWork)
    for (std::int64_t ci = 0; ci < static_cast<std::int64_t>(channels); ++ci) {
        const auto c = static_cast<std::size_t>(ci);
        for (int tap = 0; tap < 9; ++tap) {
            const int dr = tap / 3 - 1;
            const int dc = tap % 3 - 1;
            double acc = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* gs = dy + (b * channels + c) * h * w;
                const double* xs = x + (b * channels + c) * h * w;
                for (std::ptrdiff_t r = 0; r < H; ++r) {
                    const auto rr = r + dr;
                    if (rr < 0 || rr >= H) continue;
                    for (std::ptrdiff_t col = 0; col < W; ++col) {
                        const auto cc = col + dc;
                        if (cc < 0 || cc >= W) continue;
                        acc += gs[r * W + col] * xs[rr * W + cc];
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
    if (rank < 2) {
        reference::permute(shape, perm, src, dst);
        return;
    }
    std::vector<std::size_t> src_strides(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) src_strides[i - 1] = src_strides[i] * shape[i];
    std::vector<std::size_t> out_shape(rank), step(rank);
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = shape[perm[i]];
        step[i] = src_strides[perm[i]];
        total *= shape[i];
    }
    const std::size_t outer = out_shape[0];
    const std::size_t inner_total = outer ? total / outer : 0;
#pragma omp parallel for schedule(static) if (total >= kParallelWork)
    for (std::int64_t oo = 0; oo < static_cast<std::int64_t>(outer); ++oo) {
        const auto o0 = static_cast<std::size_t>(oo);
        std::vector<std::size_t> idx(rank, 0);
        std::size_t offset = o0 * step[0];
        double* out = dst + o0 * inner_total;
        for (std::size_t o = 0; o < inner_total; ++o) {
            out[o] = src[offset];
            for (std::size_t ax = rank; ax-- > 1;) {
                ++idx[ax];
                offset += step[ax];
                if (idx[ax] < out_shape[ax]) break;
                offset -= step[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
}

}  // namespace lrdif::kernels
