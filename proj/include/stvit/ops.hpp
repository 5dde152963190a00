#pragma once

#include <chrono>
#include <cstdint>
#include <span>

#include "stvit/tensor.hpp"

namespace stvit {

// Multiply-accumulate accounting. Every matmul-like kernel in this header adds
// its nominal MAC count to a per-thread counter, which lets the FLOPs engine be
// checked against what the forward pass actually executes.
namespace macs {
std::uint64_t count() noexcept;
void reset() noexcept;
void add(std::uint64_t n) noexcept;

/// Captures the MACs executed on this thread while the scope is alive.
class Scope {
public:
    Scope() noexcept : start_(count()) {}
    std::uint64_t elapsed() const noexcept { return count() - start_; }

private:
    std::uint64_t start_;
};
}  // namespace macs

/// Wall-clock stopwatch started at construction.
class Timer {
public:
    Timer() noexcept : start_(std::chrono::steady_clock::now()) {}
    double seconds() const noexcept {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

// Worker threads used inside large kernels. Row partitioning never changes the
// per-element summation order, so results are independent of this setting.
void set_num_threads(unsigned n);
unsigned num_threads() noexcept;

/// a[m,k] x b[k,n]. Accumulates in double.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m,k] x b[n,k]^T, used for attention logits.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
/// x[m,in] W[in,out] + bias.
Tensor linear(const Tensor& x, const LinearWeights& w);

/// Row-wise softmax with max subtraction. NaN input raises NumericError.
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const LayerNormParams& params, double eps = 1e-6);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// Tanh-approximation GELU, elementwise.
double gelu(double x) noexcept;
Tensor gelu(const Tensor& x);

/// Per-channel 2-D correlation with zero "same" padding. x[h,w,c], kernel[k,k,c], odd k.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Output cell (i,j) averages rows [floor(i*h/oh), ceil((i+1)*h/oh)) and the
/// analogous column range.
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Half-open index range of adaptive pooling cell `i` when splitting `extent` into `cells`.
struct IndexRange {
    std::size_t begin;
    std::size_t end;
    std::size_t size() const noexcept { return end - begin; }
};
IndexRange adaptive_range(std::size_t i, std::size_t extent, std::size_t cells);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor transpose(const Tensor& a);

/// Selected rows of a rank-2 tensor, in the given order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Writes the rows of `src` into `dst` at the given row indices.
void scatter_rows(Tensor& dst, const Tensor& src, std::span<const std::size_t> rows);
/// Stacks rank-2 tensors with equal column counts along the row axis.
Tensor concat_rows(const Tensor& a, const Tensor& b);
/// Column slice [begin, begin+count) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
/// Mean over rows, returned as [1, cols].
Tensor mean_rows(const Tensor& x);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace stvit
