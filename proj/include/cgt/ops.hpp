#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cgt/tensor.hpp"

namespace cgt {

/// Boolean attention-visibility mask over a rows x cols score matrix.
struct AttentionMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> visible;  // row-major, 1 = may attend

    static AttentionMask all_visible(std::size_t rows, std::size_t cols);
    static AttentionMask causal(std::size_t n);

    bool at(std::size_t r, std::size_t c) const { return visible[r * cols + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { visible[r * cols + c] = v ? 1 : 0; }
};

/// Running statistics for batch normalization, one entry per channel.
struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> var;
    bool updated = false;

    explicit BatchNormStats(std::size_t channels = 0) : mean(channels, 0.0), var(channels, 1.0) {}
};

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x[m x n] + bias[n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means of a matrix, [m x n] -> [1 x n].
Tensor mean_rows(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);

/// Row-wise softmax restricted to visible entries; hidden entries are exactly 0.
/// Throws ContractError if a row has no visible entry.
Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask);
Tensor softmax_rows(const Tensor& scores);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kNormEps);

/// Per-channel normalization for x of shape [N, C, ...]. Training mode uses
/// batch statistics (population variance) and folds them into `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormStats& stats, bool training,
                  double momentum = kBatchNormMomentum, double eps = kNormEps);

/// Zero-padded 3x3 cross-correlation of a single-channel map.
/// x: [1 x H x W] (or [H x W]); weights: [c_out x 3 x 3]; bias: [c_out].
/// Returns [c_out x H x W].
Tensor conv2d_3x3(const Tensor& x, const Tensor& weights, const Tensor& bias);

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);

/// Mean negative log-likelihood over rows whose target != ignore_index.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets, int ignore_index = -1);

}  // namespace ops
}  // namespace cgt
