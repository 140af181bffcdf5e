#pragma once

// Dense compute kernels behind the autodiff primitives.
//
// Every kernel exists twice: `reference::` is the plain serial loop nest kept
// as the testing oracle, and the unqualified version is the OpenMP-parallel
// one used by the engine. Parallel versions split work only over independent
// output elements and keep each element's reduction order identical to the
// reference, so both produce bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace lrdif::kernels {

// c[m,n] (=|+=) op(a) * op(b), with op(a) of shape [m,k] and op(b) of shape [k,n].
// trans_a: a is stored [k,m]; trans_b: b is stored [n,k].
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

// 3x3 depthwise convolution with zero padding 1 on x[batch, channels, h, w],
// weight[channels, 3, 3].
void depthwise3x3(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                  const double* x, const double* weight, double* y);
void depthwise3x3_grad_input(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                             const double* dy, const double* weight, double* dx);
void depthwise3x3_grad_weight(std::size_t batch, std::size_t channels, std::size_t h,
                              std::size_t w, const double* dy, const double* x, double* dweight);

// dst = src permuted: dst axis i is src axis perm[i].
void permute(std::span<const std::size_t> shape, std::span<const std::size_t> perm,
             const double* src, double* dst);

// Threads the parallel kernels will use (1 when built without OpenMP).
int max_threads();

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
void depthwise3x3(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                  const double* x, const double* weight, double* y);
void depthwise3x3_grad_input(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                             const double* dy, const double* weight, double* dx);
void depthwise3x3_grad_weight(std::size_t batch, std::size_t channels, std::size_t h,
                              std::size_t w, const double* dy, const double* x, double* dweight);
void permute(std::span<const std::size_t> shape, std::span<const std::size_t> perm,
             const double* src, double* dst);

}  // namespace reference

}  // namespace lrdif::kernels
