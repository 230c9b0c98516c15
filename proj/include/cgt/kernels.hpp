#pragma once

// Dense inner loops used by the tensor ops.
//
// Each kernel exists twice: `serial::` is the plain reference loop nest and
// `parallel::` splits the outermost output dimension across OpenMP threads.
// Both accumulate every output element in the same order, so results are
// bitwise identical for any thread count. Ops call `parallel::`; tests and
// the benchmark compare the two.

#include <cstddef>
#include <cstdint>

namespace cgt::kernels {

enum class Trans { No, Yes };

/// Row-major C[m x n] = op(A) * op(B), or += when `accumulate`.
/// op(A) is m x k, op(B) is k x n. With Trans::Yes, A is stored k x m
/// (resp. B stored n x k).
struct GemmArgs {
    Trans trans_a = Trans::No;
    Trans trans_b = Trans::No;
    std::size_t m = 0, n = 0, k = 0;
    const double* a = nullptr;
    const double* b = nullptr;
    double* c = nullptr;
    bool accumulate = false;
};

namespace serial {
void gemm(const GemmArgs& g);
void masked_softmax_rows(const double* scores, const std::uint8_t* visible, std::size_t rows, std::size_t cols,
                         double* out);
void layer_norm_rows(const double* x, std::size_t rows, std::size_t d, double eps, double* xhat, double* inv_std);
void conv3x3_same(const double* in, std::size_t h, std::size_t w, const double* kernels, const double* bias,
                  std::size_t c_out, double* out);
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& g);
void masked_softmax_rows(const double* scores, const std::uint8_t* visible, std::size_t rows, std::size_t cols,
                         double* out);
void layer_norm_rows(const double* x, std::size_t rows, std::size_t d, double eps, double* xhat, double* inv_std);
void conv3x3_same(const double* in, std::size_t h, std::size_t w, const double* kernels, const double* bias,
                  std::size_t c_out, double* out);
}  // namespace parallel

int max_threads();

}  // namespace cgt::kernels
