#include "stvit/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numbers>
#include <thread>
#include <vector>

namespace stvit {

namespace macs {
namespace {
thread_local std::uint64_t g_count = 0;
}
std::uint64_t count() noexcept { return g_count; }
void reset() noexcept { g_count = 0; }
void add(std::uint64_t n) noexcept { g_count += n; }
}  // namespace macs

namespace {

std::atomic<unsigned> g_threads{1};

// Runs body(begin, end) over [0, rows) split into contiguous chunks.
void parallel_rows(std::size_t rows, std::size_t work_per_row, const std::function<void(std::size_t, std::size_t)>& body) {
    const unsigned threads = g_threads.load();
    if (threads <= 1 || rows < 2 || rows * work_per_row < (1u << 16)) {
        body(0, rows);
        return;
    }
    const std::size_t n = std::min<std::size_t>(threads, rows);
    const std::size_t chunk = (rows + n - 1) / n;
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t b = t * chunk;
        const std::size_t e = std::min(rows, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             shape_to_string(t.shape()));
    }
}

}  // namespace

void set_num_threads(unsigned n) { g_threads.store(std::max(1u, n)); }
unsigned num_threads() noexcept { return g_threads.load(); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    parallel_rows(m, k * n, [=](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            double* orow = po + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = pa[i * k + p];
                const double* brow = pb + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    });
    macs::add(static_cast<std::uint64_t>(m) * k * n);
    return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_transposed lhs");
    require_rank(b, 2, "matmul_transposed rhs");
    if (a.dim(1) != b.dim(1)) {
        throw DimensionError("matmul_transposed: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()) + "^T");
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    parallel_rows(m, k * n, [=](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            const double* arow = pa + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = pb + j * k;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                po[i * n + j] = acc;
            }
        }
    });
    macs::add(static_cast<std::uint64_t>(m) * k * n);
    return out;
}

Tensor linear(const Tensor& x, const LinearWeights& w) {
    Tensor y = matmul(x, w.weight);
    if (w.bias) {
        const auto& b = *w.bias;
        if (b.numel() != y.dim(1)) throw DimensionError("linear: bias length does not match output width");
        for (std::size_t i = 0; i < y.dim(0); ++i) {
            auto r = y.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
        }
    }
    return y;
}

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    Tensor out = x;
    for (std::size_t i = 0; i < out.dim(0); ++i) {
        auto r = out.row(i);
        double mx = -INFINITY;
        for (double v : r) {
            if (std::isnan(v)) throw NumericError("softmax_rows: NaN in row " + std::to_string(i));
            mx = std::max(mx, v);
        }
        if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite row maximum in row " + std::to_string(i));
        double sum = 0.0;
        for (double& v : r) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : r) v /= sum;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 2, "layer_norm");
    const std::size_t n = x.dim(1);
    if (gamma.numel() != n || beta.numel() != n) {
        throw DimensionError("layer_norm: affine params must have length " + std::to_string(n));
    }
    Tensor out = x;
    for (std::size_t i = 0; i < out.dim(0); ++i) {
        auto r = out.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double denom = std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            const double centered = r[j] - mean;
            // Zero-variance rows normalize to exactly zero.
            const double z = denom > 0.0 ? centered / denom : 0.0;
            r[j] = z * gamma[j] + beta[j];
        }
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& params, double eps) {
    return layer_norm(x, params.gamma, params.beta, eps);
}

double gelu(double x) noexcept {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) v = gelu(v);
    return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
    require_rank(x, 3, "depthwise_conv2d input");
    require_rank(kernel, 3, "depthwise_conv2d kernel");
    const std::size_t k = kernel.dim(0);
    if (kernel.dim(1) != k) throw ConfigError("depthwise_conv2d: kernel must be square");
    if (k % 2 == 0) throw ConfigError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (kernel.dim(2) != c) {
        throw DimensionError("depthwise_conv2d: kernel channels " + shape_to_string(kernel.shape()) +
                             " do not match input " + shape_to_string(x.shape()));
    }
    const long half = static_cast<long>(k / 2);
    Tensor out({h, w, c});
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t di = 0; di < k; ++di) {
                const long si = static_cast<long>(i) + static_cast<long>(di) - half;
                if (si < 0 || si >= static_cast<long>(h)) continue;
                for (std::size_t dj = 0; dj < k; ++dj) {
                    const long sj = static_cast<long>(j) + static_cast<long>(dj) - half;
                    if (sj < 0 || sj >= static_cast<long>(w)) continue;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        out(i, j, ch) += x(static_cast<std::size_t>(si), static_cast<std::size_t>(sj), ch) *
                                         kernel(di, dj, ch);
                    }
                }
            }
        }
    }
    // Nominal count, padded taps included.
    macs::add(static_cast<std::uint64_t>(h) * w * c * k * k);
    return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    Tensor out = depthwise_conv2d(x, kernel);
    const std::size_t c = out.dim(2);
    if (bias.numel() != c) throw DimensionError("depthwise_conv2d: bias length must equal channels");
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += bias[i % c];
    return out;
}

IndexRange adaptive_range(std::size_t i, std::size_t extent, std::size_t cells) {
    const std::size_t begin = (i * extent) / cells;
    const std::size_t end = ((i + 1) * extent + cells - 1) / cells;
    return {begin, end};
}

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    require_rank(x, 3, "adaptive_avg_pool");
    if (out_h == 0 || out_w == 0) throw ConfigError("adaptive_avg_pool: output extents must be >= 1");
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (out_h > h || out_w > w) {
        throw ConfigError("adaptive_avg_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                          " larger than input " + shape_to_string(x.shape()));
    }
    Tensor out({out_h, out_w, c});
    for (std::size_t i = 0; i < out_h; ++i) {
        const auto rr = adaptive_range(i, h, out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
            const auto cr = adaptive_range(j, w, out_w);
            const double inv = 1.0 / static_cast<double>(rr.size() * cr.size());
            for (std::size_t r = rr.begin; r < rr.end; ++r) {
                for (std::size_t s = cr.begin; s < cr.end; ++s) {
                    for (std::size_t ch = 0; ch < c; ++ch) out(i, j, ch) += x(r, s, ch);
                }
            }
            for (std::size_t ch = 0; ch < c; ++ch) out(i, j, ch) *= inv;
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    add_inplace(out, b);
    return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shapes differ, " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += db[i];
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    Tensor out({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i) {
        for (std::size_t j = 0; j < a.dim(1); ++j) out(j, i) = a(i, j);
    }
    return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank(x, 2, "gather_rows");
    if (rows.empty()) throw DimensionError("gather_rows: empty row selection");
    const std::size_t c = x.dim(1);
    Tensor out({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.dim(0)) throw DimensionError("gather_rows: row index out of range");
        std::copy_n(x.row(rows[i]).begin(), c, out.row(i).begin());
    }
    return out;
}

void scatter_rows(Tensor& dst, const Tensor& src, std::span<const std::size_t> rows) {
    if (src.dim(0) != rows.size() || src.dim(1) != dst.dim(1)) throw DimensionError("scatter_rows: shape mismatch");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(src.row(i).begin(), src.dim(1), dst.row(rows[i]).begin());
    }
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_rows lhs");
    require_rank(b, 2, "concat_rows rhs");
    if (a.dim(1) != b.dim(1)) {
        throw DimensionError("concat_rows: column counts differ, " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    std::vector<double> data(a.values());
    data.insert(data.end(), b.values().begin(), b.values().end());
    return Tensor({a.dim(0) + b.dim(0), a.dim(1)}, std::move(data));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank(x, 2, "slice_cols");
    if (begin + count > x.dim(1) || count == 0) throw DimensionError("slice_cols: range out of bounds");
    Tensor out({x.dim(0), count});
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        std::copy_n(x.row(i).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(i).begin());
    }
    return out;
}

Tensor mean_rows(const Tensor& x) {
    require_rank(x, 2, "mean_rows");
    Tensor out({1, x.dim(1)});
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        auto r = x.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
    }
    return scale(out, 1.0 / static_cast<double>(x.dim(0)));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff: shapes differ, " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace stvit
