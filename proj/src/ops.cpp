#include "cgt/ops.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cgt/kernels.hpp"

namespace cgt {

AttentionMask AttentionMask::all_visible(std::size_t rows, std::size_t cols) {
    return AttentionMask{rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

AttentionMask AttentionMask::causal(std::size_t n) {
    AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
    }
    return m;
}

namespace ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
namespace K = kernels::parallel;

bool needs_tape(std::initializer_list<const Tensor*> inputs) {
    if (!grad_mode_enabled()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (needs_tape(inputs)) {
        node->requires_grad = true;
        for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
        node->backward_fn = std::move(backward);
    }
    return Tensor::from_node(std::move(node));
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    K::gemm({kernels::Trans::No, kernels::Trans::No, m, n, k, a.data().data(), b.data().data(), out.data(), false});
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    return make_result({m, n}, std::move(out), {&a, &b}, [an, bn, m, n, k](Node& self) {
        if (an->requires_grad) {
            // dA = dC * B^T
            K::gemm({kernels::Trans::No, kernels::Trans::Yes, m, k, n, self.grad.data(), bn->data.data(),
                     an->ensure_grad().data(), true});
        }
        if (bn->requires_grad) {
            // dB = A^T * dC
            K::gemm({kernels::Trans::Yes, kernels::Trans::No, k, n, m, an->data.data(), self.grad.data(),
                     bn->ensure_grad().data(), true});
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw DimensionError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    std::vector<double> out(m * n);
    K::gemm({kernels::Trans::No, kernels::Trans::Yes, m, n, k, a.data().data(), b.data().data(), out.data(), false});
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    return make_result({m, n}, std::move(out), {&a, &b}, [an, bn, m, n, k](Node& self) {
        if (an->requires_grad) {
            // dA = dC * B
            K::gemm({kernels::Trans::No, kernels::Trans::No, m, k, n, self.grad.data(), bn->data.data(),
                     an->ensure_grad().data(), true});
        }
        if (bn->requires_grad) {
            // dB = dC^T * A
            K::gemm({kernels::Trans::Yes, kernels::Trans::No, n, k, m, self.grad.data(), an->data.data(),
                     bn->ensure_grad().data(), true});
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Node& self) {
        for (Node* p : {an.get(), bn.get()}) {
            if (!p->requires_grad) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    NodePtr an = a.node_ptr();
    return make_result(a.shape(), std::move(out), {&a}, [an, s](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require_matrix(x, "add_row_bias");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (bias.numel() != n) {
        throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
    }
    NodePtr xn = x.node_ptr(), bn = bias.node_ptr();
    return make_result(x.shape(), std::move(out), {&x, &bias}, [xn, bn, m, n](Node& self) {
        if (xn->requires_grad) {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
            }
        }
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    NodePtr an = a.node_ptr();
    return make_result(a.shape(), std::move(out), {&a}, [an](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (an->data[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Tensor abs(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(a.data()[i]);
    NodePtr an = a.node_ptr();
    return make_result(a.shape(), std::move(out), {&a}, [an](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = an->data[i];
            if (x > 0.0) g[i] += self.grad[i];
            else if (x < 0.0) g[i] -= self.grad[i];
        }
    });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    NodePtr an = a.node_ptr();
    return make_result({1}, {total}, {&a}, [an](Node& self) {
        auto& g = an->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_rows(const Tensor& a) {
    require_matrix(a, "mean_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
    }
    const double inv = 1.0 / static_cast<double>(m);
    for (auto& v : out) v *= inv;
    NodePtr an = a.node_ptr();
    return make_result({1, n}, std::move(out), {&a}, [an, m, n, inv](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel()) {
        throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    NodePtr an = a.node_ptr();
    return make_result(std::move(shape), a.to_vector(), {&a}, [an](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    }
    NodePtr an = a.node_ptr();
    return make_result({n, m}, std::move(out), {&a}, [an, m, n](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
        }
    });
}

Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask) {
    require_matrix(scores, "masked_softmax");
    const std::size_t rows = scores.dim(0), cols = scores.dim(1);
    if (mask.rows != rows || mask.cols != cols || mask.visible.size() != rows * cols) {
        throw DimensionError("masked_softmax: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                             " vs scores " + shape_str(scores.shape()));
    }
    for (std::size_t i = 0; i < rows; ++i) {
        const auto* row = mask.visible.data() + i * cols;
        if (std::none_of(row, row + cols, [](std::uint8_t v) { return v != 0; })) {
            throw ContractError("masked_softmax: row " + std::to_string(i) + " has no visible entry");
        }
    }
    std::vector<double> out(rows * cols);
    K::masked_softmax_rows(scores.data().data(), mask.visible.data(), rows, cols, out.data());
    NodePtr sn = scores.node_ptr();
    auto result = make_result({rows, cols}, std::move(out), {&scores}, {});
    if (result.requires_grad()) {
        Node* rn = result.node();
        rn->backward_fn = [sn, rows, cols](Node& self) {
            auto& g = sn->ensure_grad();
            for (std::size_t i = 0; i < rows; ++i) {
                const double* p = self.data.data() + i * cols;
                const double* dp = self.grad.data() + i * cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += p[j] * dp[j];
                for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += p[j] * (dp[j] - dot);
            }
        };
    }
    return result;
}

Tensor softmax_rows(const Tensor& scores) {
    require_matrix(scores, "softmax_rows");
    return masked_softmax(scores, AttentionMask::all_visible(scores.dim(0), scores.dim(1)));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("layer_norm: empty feature dimension");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    if (gain.numel() != d || bias.numel() != d) {
        throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
    }
    std::vector<double> xhat(rows * d), inv_std(rows), out(rows * d);
    K::layer_norm_rows(x.data().data(), rows, d, eps, xhat.data(), inv_std.data());
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = gain.data()[j] * xhat[i * d + j] + bias.data()[j];
    }
    NodePtr xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr();
    return make_result(x.shape(), std::move(out), {&x, &gain, &bias},
                       [xn, gn, bn, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const double* dy = self.grad.data();
                           if (gn->requires_grad) {
                               auto& g = gn->ensure_grad();
                               for (std::size_t i = 0; i < rows; ++i) {
                                   for (std::size_t j = 0; j < d; ++j) g[j] += dy[i * d + j] * xhat[i * d + j];
                               }
                           }
                           if (bn->requires_grad) {
                               auto& g = bn->ensure_grad();
                               for (std::size_t i = 0; i < rows; ++i) {
                                   for (std::size_t j = 0; j < d; ++j) g[j] += dy[i * d + j];
                               }
                           }
                           if (xn->requires_grad) {
                               auto& g = xn->ensure_grad();
                               const double dd = static_cast<double>(d);
                               for (std::size_t i = 0; i < rows; ++i) {
                                   double s1 = 0.0, s2 = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gy = gn->data[j] * dy[i * d + j];
                                       s1 += gy;
                                       s2 += gy * xhat[i * d + j];
                                   }
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gy = gn->data[j] * dy[i * d + j];
                                       g[i * d + j] += inv_std[i] / dd * (dd * gy - s1 - xhat[i * d + j] * s2);
                                   }
                               }
                           }
                       });
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormStats& stats, bool training,
                  double momentum, double eps) {
    if (x.rank() < 2) throw DimensionError("batch_norm expects [N, C, ...], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.numel() / (n * c);
    if (gain.numel() != c || bias.numel() != c || stats.mean.size() != c || stats.var.size() != c) {
        throw DimensionError("batch_norm: parameter/statistics size does not match " + std::to_string(c) +
                             " channels");
    }
    const double count = static_cast<double>(n * inner);
    auto idx = [c, inner](std::size_t b, std::size_t ch, std::size_t s) { return (b * c + ch) * inner + s; };

    std::vector<double> xhat(x.numel()), out(x.numel()), inv_std(c);
    const auto xd = x.data();
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double mu = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t s = 0; s < inner; ++s) mu += xd[idx(b, ch, s)];
            }
            mu /= count;
            double var = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t s = 0; s < inner; ++s) {
                    const double dlt = xd[idx(b, ch, s)] - mu;
                    var += dlt * dlt;
                }
            }
            var /= count;
            inv_std[ch] = 1.0 / std::sqrt(var + eps);
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t s = 0; s < inner; ++s) xhat[idx(b, ch, s)] = (xd[idx(b, ch, s)] - mu) * inv_std[ch];
            }
            const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
            stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mu;
            stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * unbiased;
        }
        stats.updated = true;
    } else {
        if (!stats.updated) spdlog::warn("batch_norm: evaluating with initial running statistics (mean 0, var 1)");
        for (std::size_t ch = 0; ch < c; ++ch) {
            inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + eps);
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t s = 0; s < inner; ++s) {
                    xhat[idx(b, ch, s)] = (xd[idx(b, ch, s)] - stats.mean[ch]) * inv_std[ch];
                }
            }
        }
    }
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t s = 0; s < inner; ++s) {
                const auto i = idx(b, ch, s);
                out[i] = gain.data()[ch] * xhat[i] + bias.data()[ch];
            }
        }
    }
    NodePtr xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr();
    return make_result(
        x.shape(), std::move(out), {&x, &gain, &bias},
        [xn, gn, bn, n, c, inner, count, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            auto idx = [c, inner](std::size_t b, std::size_t ch, std::size_t s) { return (b * c + ch) * inner + s; };
            const double* dy = self.grad.data();
            for (std::size_t ch = 0; ch < c; ++ch) {
                double s_dy = 0.0, s_dy_xhat = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    for (std::size_t s = 0; s < inner; ++s) {
                        const auto i = idx(b, ch, s);
                        s_dy += dy[i];
                        s_dy_xhat += dy[i] * xhat[i];
                    }
                }
                if (gn->requires_grad) gn->ensure_grad()[ch] += s_dy_xhat;
                if (bn->requires_grad) bn->ensure_grad()[ch] += s_dy;
                if (!xn->requires_grad) continue;
                auto& g = xn->ensure_grad();
                const double gamma = gn->data[ch];
                for (std::size_t b = 0; b < n; ++b) {
                    for (std::size_t s = 0; s < inner; ++s) {
                        const auto i = idx(b, ch, s);
                        if (training) {
                            g[i] += gamma * inv_std[ch] / count * (count * dy[i] - s_dy - xhat[i] * s_dy_xhat);
                        } else {
                            g[i] += gamma * inv_std[ch] * dy[i];
                        }
                    }
                }
            }
        });
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& weights, const Tensor& bias) {
    std::size_t h = 0, w = 0;
    if (x.rank() == 3 && x.dim(0) == 1) {
        h = x.dim(1);
        w = x.dim(2);
    } else if (x.rank() == 2) {
        h = x.dim(0);
        w = x.dim(1);
    } else {
        throw DimensionError("conv2d_3x3 expects a single-channel [1 x H x W] map, got " + shape_str(x.shape()));
    }
    if (weights.rank() != 3 || weights.dim(1) != 3 || weights.dim(2) != 3) {
        throw DimensionError("conv2d_3x3 weights must be [c_out x 3 x 3], got " + shape_str(weights.shape()));
    }
    const std::size_t c_out = weights.dim(0);
    if (bias.numel() != c_out) throw DimensionError("conv2d_3x3 bias must have c_out entries");

    std::vector<double> out(c_out * h * w);
    K::conv3x3_same(x.data().data(), h, w, weights.data().data(), bias.data().data(), c_out, out.data());
    NodePtr xn = x.node_ptr(), wn = weights.node_ptr(), bn = bias.node_ptr();
    return make_result({c_out, h, w}, std::move(out), {&x, &weights, &bias}, [xn, wn, bn, c_out, h, w](Node& self) {
        const double* dy = self.grad.data();
        const double* in = xn->data.data();
        for (std::size_t c = 0; c < c_out; ++c) {
            const double* dyc = dy + c * h * w;
            if (bn->requires_grad) {
                double s = 0.0;
                for (std::size_t i = 0; i < h * w; ++i) s += dyc[i];
                bn->ensure_grad()[c] += s;
            }
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const std::size_t r0 = dr < 0 ? 1 : 0, r1 = dr > 0 ? h - 1 : h;
                    const std::size_t x0 = dc < 0 ? 1 : 0, x1 = dc > 0 ? w - 1 : w;
                    const std::size_t kidx = c * 9 + static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
                    if (wn->requires_grad) {
                        double s = 0.0;
                        for (std::size_t r = r0; r < r1; ++r) {
                            const double* irow = in + (r + dr) * w;
                            const double* grow = dyc + r * w;
                            for (std::size_t xx = x0; xx < x1; ++xx) s += grow[xx] * irow[xx + dc];
                        }
                        wn->ensure_grad()[kidx] += s;
                    }
                    if (xn->requires_grad) {
                        auto& g = xn->ensure_grad();
                        const double kv = wn->data[kidx];
                        for (std::size_t r = r0; r < r1; ++r) {
                            const double* grow = dyc + r * w;
                            double* gin = g.data() + (r + dr) * w;
                            for (std::size_t xx = x0; xx < x1; ++xx) gin[xx + dc] += kv * grow[xx];
                        }
                    }
                }
            }
        }
    });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    require_matrix(table, "embedding_lookup");
    const std::size_t v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                             std::to_string(v) + " rows");
        }
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + i * d);
    }
    NodePtr tn = table.node_ptr();
    std::vector<int> id_copy(ids.begin(), ids.end());
    return make_result({ids.size(), d}, std::move(out), {&table}, [tn, d, id_copy = std::move(id_copy)](Node& self) {
        auto& g = tn->ensure_grad();
        for (std::size_t i = 0; i < id_copy.size(); ++i) {
            double* row = g.data() + static_cast<std::size_t>(id_copy[i]) * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
        }
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
    const Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t rows = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
        if (Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
            throw DimensionError("concat_rows: trailing shapes differ " + shape_str(parts[0].shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        rows += p.dim(0);
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    Shape shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());

    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(out);
    bool any = false;
    if (grad_mode_enabled()) {
        for (const auto& p : parts) any = any || p.requires_grad();
    }
    if (any) {
        node->requires_grad = true;
        std::vector<NodePtr> srcs;
        for (const auto& p : parts) {
            node->parents.push_back(p.node_ptr());
            srcs.push_back(p.node_ptr());
        }
        node->backward_fn = [srcs](Node& self) {
            std::size_t off = 0;
            for (const auto& s : srcs) {
                const std::size_t len = s->data.size();
                if (s->requires_grad) {
                    auto& g = s->ensure_grad();
                    for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
                }
                off += len;
            }
        };
    }
    return Tensor::from_node(std::move(node));
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    const std::size_t m = parts[0].dim(0);
    std::size_t n = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
        widths.push_back(p.dim(1));
        n += p.dim(1);
    }
    std::vector<double> out(m * n);
    std::size_t col = 0;
    for (const auto& p : parts) {
        const std::size_t pw = p.dim(1);
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(i * pw), pw, out.begin() + i * n + col);
        }
        col += pw;
    }
    auto node = std::make_shared<Node>();
    node->shape = {m, n};
    node->data = std::move(out);
    bool any = false;
    if (grad_mode_enabled()) {
        for (const auto& p : parts) any = any || p.requires_grad();
    }
    if (any) {
        node->requires_grad = true;
        std::vector<NodePtr> srcs;
        for (const auto& p : parts) {
            node->parents.push_back(p.node_ptr());
            srcs.push_back(p.node_ptr());
        }
        node->backward_fn = [srcs, widths, m, n](Node& self) {
            std::size_t col = 0;
            for (std::size_t s = 0; s < srcs.size(); ++s) {
                const std::size_t pw = widths[s];
                if (srcs[s]->requires_grad) {
                    auto& g = srcs[s]->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < pw; ++j) g[i * pw + j] += self.grad[i * n + col + j];
                    }
                }
                col += pw;
            }
        };
    }
    return Tensor::from_node(std::move(node));
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    if (a.rank() < 1 || count == 0 || start + count > a.dim(0)) {
        throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                             shape_str(a.shape()));
    }
    const std::size_t row = a.numel() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = count;
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(start * row),
                            a.data().begin() + static_cast<std::ptrdiff_t>((start + count) * row));
    NodePtr an = a.node_ptr();
    return make_result(std::move(shape), std::move(out), {&a}, [an, start, row](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * row + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    require_matrix(a, "slice_cols");
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (count == 0 || start + count > n) throw DimensionError("slice_cols: range outside " + shape_str(a.shape()));
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(i * n + start), count, out.begin() + i * count);
    }
    NodePtr an = a.node_ptr();
    return make_result({m, count}, std::move(out), {&a}, [an, m, n, start, count](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad[i * count + j];
        }
    });
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets, int ignore_index) {
    require_matrix(logits, "cross_entropy_logits");
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n) {
        throw DimensionError("cross_entropy_logits: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(n) + " rows");
    }
    std::vector<double> probs(n * v, 0.0);
    std::vector<int> tgt(targets.begin(), targets.end());
    double total = 0.0;
    std::size_t counted = 0;
    const auto ld = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (tgt[i] == ignore_index) continue;
        if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= v) {
            throw IndexError("cross_entropy_logits: target " + std::to_string(tgt[i]) + " outside [0, " +
                             std::to_string(v) + ")");
        }
        const double* row = ld.data() + i * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        total += lse - row[tgt[i]];
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - lse);
        ++counted;
    }
    if (counted == 0) spdlog::warn("cross_entropy_logits: every target is ignored; loss defined as 0");
    const double denom = counted ? static_cast<double>(counted) : 1.0;
    NodePtr ln = logits.node_ptr();
    return make_result({1}, {total / denom}, {&logits},
                       [ln, n, v, denom, ignore_index, tgt = std::move(tgt), probs = std::move(probs)](Node& self) {
                           auto& g = ln->ensure_grad();
                           const double scale_by = self.grad[0] / denom;
                           for (std::size_t i = 0; i < n; ++i) {
                               if (tgt[i] == ignore_index) continue;
                               for (std::size_t j = 0; j < v; ++j) g[i * v + j] += scale_by * probs[i * v + j];
                               g[i * v + static_cast<std::size_t>(tgt[i])] -= scale_by;
                           }
                       });
}

}  // namespace ops
}  // namespace cgt
