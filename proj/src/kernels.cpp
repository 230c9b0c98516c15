#include "cgt/kernels.hpp"

#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cgt::kernels {

namespace {

inline double a_at(const GemmArgs& g, std::size_t i, std::size_t p) {
    return g.trans_a == Trans::No ? g.a[i * g.k + p] : g.a[p * g.m + i];
}

void gemm_row(const GemmArgs& g, std::size_t i) {
    double* crow = g.c + i * g.n;
    if (!g.accumulate) {
        for (std::size_t j = 0; j < g.n; ++j) crow[j] = 0.0;
    }
    if (g.trans_b == Trans::No) {
        for (std::size_t p = 0; p < g.k; ++p) {
            const double aip = a_at(g, i, p);
            const double* brow = g.b + p * g.n;
            for (std::size_t j = 0; j < g.n; ++j) crow[j] += aip * brow[j];
        }
    } else {
        for (std::size_t j = 0; j < g.n; ++j) {
            const double* brow = g.b + j * g.k;
            double acc = 0.0;
            if (g.trans_a == Trans::No) {
                const double* arow = g.a + i * g.k;
                for (std::size_t p = 0; p < g.k; ++p) acc += arow[p] * brow[p];
            } else {
                for (std::size_t p = 0; p < g.k; ++p) acc += g.a[p * g.m + i] * brow[p];
            }
            crow[j] += acc;
        }
    }
}

void softmax_row(const double* s, const std::uint8_t* vis, std::size_t cols, double* out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
        if (vis[j] && s[j] > mx) mx = s[j];
    }
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        if (vis[j]) {
            out[j] = std::exp(s[j] - mx);
            total += out[j];
        } else {
            out[j] = 0.0;
        }
    }
    if (total > 0.0) {
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
    }
}

void layer_norm_row(const double* x, std::size_t d, double eps, double* xhat, double* inv_std) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    *inv_std = is;
    for (std::size_t j = 0; j < d; ++j) xhat[j] = (x[j] - mean) * is;
}

// One output row (channel c, spatial row r) of a zero-padded 3x3 cross-correlation.
void conv_row(const double* in, std::size_t h, std::size_t w, const double* kern, double bias, std::size_t r,
              double* out_row) {
    for (std::size_t x = 0; x < w; ++x) out_row[x] = bias;
    for (int dr = -1; dr <= 1; ++dr) {
        const long rr = static_cast<long>(r) + dr;
        if (rr < 0 || rr >= static_cast<long>(h)) continue;
        const double* irow = in + static_cast<std::size_t>(rr) * w;
        for (int dc = -1; dc <= 1; ++dc) {
            const double kv = kern[(dr + 1) * 3 + (dc + 1)];
            const std::size_t x0 = dc < 0 ? 1 : 0;
            const std::size_t x1 = dc > 0 ? w - 1 : w;
            for (std::size_t x = x0; x < x1; ++x) out_row[x] += kv * irow[x + dc];
        }
    }
}

}  // namespace

namespace serial {

void gemm(const GemmArgs& g) {
    for (std::size_t i = 0; i < g.m; ++i) gemm_row(g, i);
}

void masked_softmax_rows(const double* scores, const std::uint8_t* visible, std::size_t rows, std::size_t cols,
                         double* out) {
    for (std::size_t i = 0; i < rows; ++i) softmax_row(scores + i * cols, visible + i * cols, cols, out + i * cols);
}

void layer_norm_rows(const double* x, std::size_t rows, std::size_t d, double eps, double* xhat, double* inv_std) {
    for (std::size_t i = 0; i < rows; ++i) layer_norm_row(x + i * d, d, eps, xhat + i * d, inv_std + i);
}

void conv3x3_same(const double* in, std::size_t h, std::size_t w, const double* kernels, const double* bias,
                  std::size_t c_out, double* out) {
    for (std::size_t c = 0; c < c_out; ++c) {
        for (std::size_t r = 0; r < h; ++r) conv_row(in, h, w, kernels + c * 9, bias[c], r, out + (c * h + r) * w);
    }
}

}  // namespace serial

namespace parallel {

void gemm(const GemmArgs& g) {
    const long m = static_cast<long>(g.m);
#pragma omp parallel for schedule(static) if (g.m * g.n * g.k > 32768)
    for (long i = 0; i < m; ++i) gemm_row(g, static_cast<std::size_t>(i));
}

void masked_softmax_rows(const double* scores, const std::uint8_t* visible, std::size_t rows, std::size_t cols,
                         double* out) {
    const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
    for (long i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        softmax_row(scores + r * cols, visible + r * cols, cols, out + r * cols);
    }
}

void layer_norm_rows(const double* x, std::size_t rows, std::size_t d, double eps, double* xhat, double* inv_std) {
    const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * d > 16384)
    for (long i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        layer_norm_row(x + r * d, d, eps, xhat + r * d, inv_std + r);
    }
}

void conv3x3_same(const double* in, std::size_t h, std::size_t w, const double* kernels, const double* bias,
                  std::size_t c_out, double* out) {
    const long total = static_cast<long>(c_out * h);
#pragma omp parallel for schedule(static)
    for (long t = 0; t < total; ++t) {
        const auto c = static_cast<std::size_t>(t) / h;
        const auto r = static_cast<std::size_t>(t) % h;
        conv_row(in, h, w, kernels + c * 9, bias[c], r, out + (c * h + r) * w);
    }
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace cgt::kernels
