#include "cgt/model.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "cgt/features.hpp"
#include "cgt/vocab.hpp"

namespace cgt {

const char* norm_mode_name(NormMode m) { return m == NormMode::LayerNorm ? "layernorm" : "batchnorm"; }

NormMode parse_norm_mode(const std::string& s) {
    if (s == "layernorm") return NormMode::LayerNorm;
    if (s == "batchnorm") return NormMode::BatchNorm;
    throw ConfigError("norm must be layernorm or batchnorm, got '" + s + "'");
}

ModelConfig ModelConfig::desk(std::size_t vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    return c;
}

ModelConfig ModelConfig::full(std::size_t vocab_size) {
    ModelConfig c;
    c.d_model = 512;
    c.heads = 8;
    c.encoder_layers = 6;
    c.decoder_layers = 6;
    c.d_ff = 2048;
    c.vocab_size = vocab_size;
    return c;
}

void ModelConfig::validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0) {
        throw ConfigError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of heads (" +
                          std::to_string(heads) + ")");
    }
    if (vocab_size <= static_cast<std::size_t>(kNumSpecial)) throw ConfigError("vocab_size must exceed the 4 special tokens");
    if (group_size != 6) throw ConfigError("group_size must be 6");
    if (graph_slots == 0 || 1 + graph_slots > max_T) {
        throw ConfigError("graph_slots + 1 must fit in max_T (" + std::to_string(max_T) + ")");
    }
    if (encoder_layers == 0 || decoder_layers == 0 || d_ff == 0 || conv_channels == 0 || max_report_len == 0) {
        throw ConfigError("layer counts, d_ff, conv_channels and max_report_len must be positive");
    }
    if (!(pe_base > 0.0)) throw ConfigError("pe_base must be positive");
}

std::vector<double> ModelConfig::to_values() const {
    return {double(d_model),     double(heads),      double(encoder_layers), double(decoder_layers),
            double(d_ff),        double(vocab_size), double(max_T),          double(group_size),
            double(graph_slots), double(conv_channels), double(max_report_len), pe_base,
            norm == NormMode::LayerNorm ? 0.0 : 1.0, tie_output ? 1.0 : 0.0};
}

ModelConfig ModelConfig::from_values(const std::vector<double>& v) {
    if (v.size() != 14) throw ConfigError("model config record has " + std::to_string(v.size()) + " fields, expected 14");
    auto z = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
    ModelConfig c;
    c.d_model = z(0);
    c.heads = z(1);
    c.encoder_layers = z(2);
    c.decoder_layers = z(3);
    c.d_ff = z(4);
    c.vocab_size = z(5);
    c.max_T = z(6);
    c.group_size = z(7);
    c.graph_slots = z(8);
    c.conv_channels = z(9);
    c.max_report_len = z(10);
    c.pe_base = v[11];
    c.norm = v[12] == 0.0 ? NormMode::LayerNorm : NormMode::BatchNorm;
    c.tie_output = v[13] != 0.0;
    return c;
}

TokenSequence TokenSequence::from_graph_tokens(const std::vector<int>& graph_tokens, std::size_t group_size,
                                               std::size_t max_T, std::size_t pad_to) {
    const std::size_t n = 1 + graph_tokens.size();
    const std::size_t total = std::max(n, pad_to);
    if (total > max_T) {
        throw ConfigError("token sequence of length " + std::to_string(total) + " exceeds max_T " + std::to_string(max_T));
    }
    TokenSequence s;
    s.tokens.reserve(total);
    s.tokens.push_back(kVisualSlot);
    s.tokens.insert(s.tokens.end(), graph_tokens.begin(), graph_tokens.end());
    s.tokens.resize(total, kPad);
    s.group_of.resize(total);
    s.pad.assign(total, 0);
    for (std::size_t k = 1; k < total; ++k) {
        s.group_of[k] = static_cast<int>(1 + (k - 1) / group_size);
        s.pad[k] = k >= n ? 1 : 0;
    }
    return s;
}

VisibleMatrix build_visible_matrix(const TokenSequence& seq) {
    const std::size_t n = seq.size();
    VisibleMatrix m{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const bool v = !seq.pad[i] && !seq.pad[j] && (seq.group_of[i] == seq.group_of[j] || i == 0 || j == 0);
            m.set(i, j, v || i == j);
        }
    }
    return m;
}

double position_encoding(std::size_t pos, std::size_t dim, std::size_t d, double base) {
    const double even = static_cast<double>(dim - dim % 2);
    const double angle = static_cast<double>(pos) / std::pow(base, even / static_cast<double>(d));
    return dim % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

Tensor position_encoding_table(std::size_t n, std::size_t d, double base) {
    std::vector<double> v(n * d);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t i = 0; i < d; ++i) v[p * d + i] = position_encoding(p, i, d, base);
    }
    return Tensor::from({n, d}, std::move(v));
}

std::vector<int> discretize_subgraph(const Tensor& slot_logits) {
    if (slot_logits.rank() != 2 || slot_logits.dim(1) <= static_cast<std::size_t>(kNumSpecial)) {
        throw DimensionError("slot logits must be [N x V] with V > 4");
    }
    const std::size_t n = slot_logits.dim(0), v = slot_logits.dim(1);
    const auto d = slot_logits.data();
    std::vector<int> ids(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = kNumSpecial;
        for (std::size_t c = kNumSpecial + 1; c < v; ++c) {
            if (d[r * v + c] > d[r * v + best]) best = c;
        }
        ids[r] = static_cast<int>(best);
    }
    return ids;
}

CgtModel::CgtModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), init_rng_(seed) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model, V = cfg_.vocab_size, N = cfg_.graph_slots, C = cfg_.conv_channels;

    token_table_ = add_param("embed.token", {V, d}, V, d);
    segment_table_ = add_param("embed.segment", {cfg_.segment_count(), d}, cfg_.segment_count(), d);
    pe_table_ = position_encoding_table(std::max(cfg_.max_T, cfg_.max_report_len + 1), d, cfg_.pe_base);

    conv_w_ = add_param("restore.conv.w", {C, 3, 3}, 9, 9 * C);
    conv_b_ = add_constant_param("restore.conv.b", {C}, 0.0);
    bn_gain_ = add_constant_param("restore.bn.gain", {C}, 1.0);
    bn_bias_ = add_constant_param("restore.bn.bias", {C}, 0.0);
    restore_bn_ = BatchNormStats(C);
    pool_w_ = add_param("restore.pool.w", {kFeatureRows, N}, kFeatureRows, N);
    pool_b_ = add_constant_param("restore.pool.b", {N}, 0.0);
    wf_ = add_param("restore.wf", {kFeatureDim, V}, kFeatureDim, V);
    bf_ = add_constant_param("restore.bf", {V}, 0.0);

    wc_ = add_param("compress.w", {kFeatureDim, d}, kFeatureDim, d);
    bc_ = add_constant_param("compress.b", {d}, 0.0);

    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
        const std::string p = "enc" + std::to_string(l) + ".";
        EncoderLayer layer;
        layer.attn = make_attention(p + "attn.");
        layer.norm1 = make_norm(p + "norm1");
        layer.ff = make_ff(p + "ff.");
        layer.norm2 = make_norm(p + "norm2");
        encoder_.push_back(std::move(layer));
    }
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
        const std::string p = "dec" + std::to_string(l) + ".";
        DecoderLayer layer;
        layer.self_attn = make_attention(p + "self.");
        layer.norm1 = make_norm(p + "norm1");
        layer.cross_attn = make_attention(p + "cross.");
        layer.norm2 = make_norm(p + "norm2");
        layer.ff = make_ff(p + "ff.");
        layer.norm3 = make_norm(p + "norm3");
        decoder_.push_back(std::move(layer));
    }
    if (!cfg_.tie_output) out_w_ = add_param("out.w", {d, V}, d, V);
    out_b_ = add_constant_param("out.b", {V}, 0.0);
}

Tensor CgtModel::add_param(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out) {
    // Xavier/Glorot uniform.
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = u(init_rng_);
    return params_.add(name, Tensor::from(std::move(shape), std::move(v)));
}

Tensor CgtModel::add_constant_param(const std::string& name, Shape shape, double value) {
    return params_.add(name, Tensor::full(std::move(shape), value));
}

CgtModel::Attention CgtModel::make_attention(const std::string& prefix) {
    const std::size_t d = cfg_.d_model;
    return {add_param(prefix + "wq", {d, d}, d, d), add_param(prefix + "wk", {d, d}, d, d),
            add_param(prefix + "wv", {d, d}, d, d), add_param(prefix + "wo", {d, d}, d, d)};
}

CgtModel::Norm CgtModel::make_norm(const std::string& prefix) {
    if (cfg_.norm == NormMode::BatchNorm) norm_stats_.emplace(prefix, BatchNormStats(cfg_.d_model));
    return {prefix, add_constant_param(prefix + ".gain", {cfg_.d_model}, 1.0),
            add_constant_param(prefix + ".bias", {cfg_.d_model}, 0.0)};
}

CgtModel::FeedForward CgtModel::make_ff(const std::string& prefix) {
    const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
    return {add_param(prefix + "w1", {d, f}, d, f), add_constant_param(prefix + "b1", {f}, 0.0),
            add_param(prefix + "w2", {f, d}, f, d), add_constant_param(prefix + "b2", {d}, 0.0)};
}

std::vector<Tensor> CgtModel::restore_subgraph(const std::vector<Tensor>& features) {
    if (features.empty()) throw DimensionError("restore_subgraph: empty batch");
    const std::size_t C = cfg_.conv_channels, plane = kFeatureRows * kFeatureDim;
    std::vector<Tensor> conv;
    conv.reserve(features.size());
    for (const auto& f : features) {
        if (f.rank() != 2 || f.dim(0) != kFeatureRows || f.dim(1) != kFeatureDim) {
            throw DimensionError("restore_subgraph: features must be 12x1024, got " + shape_str(f.shape()));
        }
        auto y = ops::conv2d_3x3(ops::reshape(f, {1, kFeatureRows, kFeatureDim}), conv_w_, conv_b_);
        conv.push_back(ops::reshape(y, {1, C * plane}));
    }
    const std::size_t B = features.size();
    auto stacked = ops::reshape(ops::concat_rows(conv), {B, C, kFeatureRows, kFeatureDim});
    auto act = ops::reshape(ops::relu(ops::batch_norm(stacked, bn_gain_, bn_bias_, restore_bn_, training_)), {B, C * plane});

    std::vector<Tensor> out;
    out.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        auto x = ops::reshape(ops::slice_rows(act, b, 1), {C, plane});
        if (C > 1) x = ops::mean_rows(x);
        x = ops::reshape(x, {kFeatureRows, kFeatureDim});
        // Temporal affine over the 12 rows: [1024 x 12] * [12 x N] -> [N x 1024].
        auto slots = ops::transpose(ops::add_row_bias(ops::matmul(ops::transpose(x), pool_w_), pool_b_));
        out.push_back(ops::add_row_bias(ops::matmul(slots, wf_), bf_));
    }
    return out;
}

Tensor CgtModel::restore_subgraph(const Tensor& features) { return restore_subgraph(std::vector<Tensor>{features})[0]; }

Tensor CgtModel::compress_visual_token(const Tensor& features) const {
    if (features.rank() != 2 || features.dim(0) != kFeatureRows || features.dim(1) != kFeatureDim) {
        throw DimensionError("compress_visual_token: features must be 12x1024, got " + shape_str(features.shape()));
    }
    return ops::add_row_bias(ops::matmul(ops::mean_rows(features), wc_), bc_);
}

Tensor CgtModel::embed_input(const TokenSequence& seq, const Tensor& visual_token) const {
    const std::size_t n = seq.size(), d = cfg_.d_model;
    if (n == 0 || seq.tokens[0] != kVisualSlot) throw ConfigError("token sequence must start with the visual slot");
    if (n > cfg_.max_T) throw ConfigError("token sequence longer than max_T");
    if (visual_token.numel() != d) throw DimensionError("visual token must have d_model values");
    for (int g : seq.group_of) {
        if (g < 0 || static_cast<std::size_t>(g) >= cfg_.segment_count()) {
            throw ConfigError("group index " + std::to_string(g) + " outside the segment table");
        }
    }
    std::vector<Tensor> rows{ops::reshape(visual_token, {1, d})};
    if (n > 1) {
        std::vector<int> ids(seq.tokens.begin() + 1, seq.tokens.end());
        rows.push_back(ops::embedding_lookup(token_table_, ids));
    }
    auto x = ops::concat_rows(rows);
    x = ops::add(x, ops::slice_rows(pe_table_, 0, n));
    return ops::add(x, ops::embedding_lookup(segment_table_, seq.group_of));
}

Tensor CgtModel::attend(const Attention& a, const Tensor& q_in, const Tensor& kv_in, const AttentionMask& mask) const {
    const std::size_t h = cfg_.heads, dh = cfg_.d_head();
    auto q = ops::matmul(q_in, a.wq);
    auto k = ops::matmul(kv_in, a.wk);
    auto v = ops::matmul(kv_in, a.wv);
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    heads.reserve(h);
    for (std::size_t i = 0; i < h; ++i) {
        auto qi = h == 1 ? q : ops::slice_cols(q, i * dh, dh);
        auto ki = h == 1 ? k : ops::slice_cols(k, i * dh, dh);
        auto vi = h == 1 ? v : ops::slice_cols(v, i * dh, dh);
        auto p = ops::masked_softmax(ops::scale(ops::matmul_nt(qi, ki), s), mask);
        heads.push_back(ops::matmul(p, vi));
    }
    auto cat = h == 1 ? heads[0] : ops::concat_cols(heads);
    return ops::matmul(cat, a.wo);
}

Tensor CgtModel::feed_forward(const FeedForward& f, const Tensor& x) const {
    auto hdn = ops::relu(ops::add_row_bias(ops::matmul(x, f.w1), f.b1));
    return ops::add_row_bias(ops::matmul(hdn, f.w2), f.b2);
}

Tensor CgtModel::normalize(const Norm& n, const Tensor& x) {
    if (cfg_.norm == NormMode::LayerNorm) return ops::layer_norm(x, n.gain, n.bias);
    // Positions act as the batch, model dimensions as channels.
    return ops::batch_norm(x, n.gain, n.bias, norm_stats_.at(n.name), training_);
}

Tensor CgtModel::encode(const Tensor& embedded, const VisibleMatrix& mask) {
    if (embedded.rank() != 2 || embedded.dim(1) != cfg_.d_model) {
        throw DimensionError("encode: expected [n x " + std::to_string(cfg_.d_model) + "], got " +
                             shape_str(embedded.shape()));
    }
    if (mask.rows != embedded.dim(0) || mask.cols != embedded.dim(0)) throw DimensionError("encode: mask size mismatch");
    auto x = embedded;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
        const auto& layer = encoder_[l];
        auto e = normalize(layer.norm1, ops::add(attend(layer.attn, x, x, mask), x));
        x = normalize(layer.norm2, ops::add(feed_forward(layer.ff, e), e));
        if (!x.all_finite()) throw ContractError("encoder layer " + std::to_string(l) + " produced non-finite values");
    }
    return x;
}

Tensor CgtModel::output_logits(const Tensor& h) const {
    auto logits = cfg_.tie_output ? ops::matmul_nt(h, token_table_) : ops::matmul(h, out_w_);
    return ops::add_row_bias(logits, out_b_);
}

Tensor CgtModel::decode(const std::vector<int>& prefix, const Tensor& memory,
                        const std::vector<std::uint8_t>& memory_visible) {
    const std::size_t L = prefix.size(), n = memory.dim(0);
    if (L == 0) throw GenerationError("decode: empty prefix");
    if (L > cfg_.max_report_len + 1) {
        throw GenerationError("decode: prefix of " + std::to_string(L) + " exceeds max report length " +
                              std::to_string(cfg_.max_report_len));
    }
    if (memory_visible.size() != n) throw DimensionError("decode: memory visibility size mismatch");
    AttentionMask cross{L, n, {}};
    cross.visible.reserve(L * n);
    for (std::size_t i = 0; i < L; ++i) cross.visible.insert(cross.visible.end(), memory_visible.begin(), memory_visible.end());
    const auto causal = AttentionMask::causal(L);

    auto y = ops::add(ops::embedding_lookup(token_table_, prefix), ops::slice_rows(pe_table_, 0, L));
    for (const auto& layer : decoder_) {
        auto s = normalize(layer.norm1, ops::add(attend(layer.self_attn, y, y, causal), y));
        auto c = normalize(layer.norm2, ops::add(attend(layer.cross_attn, s, memory, cross), s));
        y = normalize(layer.norm3, ops::add(feed_forward(layer.ff, c), c));
    }
    return output_logits(y);
}

Tensor CgtModel::decode_step(const std::vector<int>& prefix, const Tensor& memory,
                             const std::vector<std::uint8_t>& memory_visible) {
    auto logits = decode(prefix, memory, memory_visible);
    return ops::slice_rows(logits, prefix.size() - 1, 1);
}

CaseForward CgtModel::encode_case(const Tensor& features, const Tensor& slot_logits) {
    CaseForward out;
    out.slot_logits = slot_logits;
    out.graph_tokens = discretize_subgraph(slot_logits);
    const auto seq = TokenSequence::from_graph_tokens(out.graph_tokens, cfg_.group_size, cfg_.max_T);
    const auto mask = build_visible_matrix(seq);
    out.memory = encode(embed_input(seq, compress_visual_token(features)), mask);
    out.memory_visible.resize(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) out.memory_visible[i] = seq.pad[i] ? 0 : 1;
    return out;
}

CgtModel::Generation CgtModel::generate_greedy(const Tensor& features) {
    NoGradGuard no_grad;
    const bool was_training = training_;
    training_ = false;
    Generation g;
    g.slot_logits = restore_subgraph(features);
    auto fwd = encode_case(features, g.slot_logits);
    g.graph_tokens = fwd.graph_tokens;
    std::vector<int> prefix{kSos};
    while (true) {
        if (g.report.size() == cfg_.max_report_len) {
            g.truncated = true;
            spdlog::info("generate_greedy: truncated at {} tokens", cfg_.max_report_len);
            break;
        }
        const auto step = decode_step(prefix, fwd.memory, fwd.memory_visible);
        const auto logits = step.data();
        const int next = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (next == kEos) break;
        g.report.push_back(next);
        prefix.push_back(next);
    }
    training_ = was_training;
    return g;
}

std::vector<ArchiveRecord> CgtModel::to_records() const {
    std::vector<ArchiveRecord> recs;
    recs.push_back({"meta.model_config", {14}, cfg_.to_values()});
    for (const auto& [name, t] : params_.entries()) recs.push_back({name, t.shape(), t.to_vector()});
    const std::size_t C = cfg_.conv_channels;
    recs.push_back({"restore.bn.running_mean", {C}, restore_bn_.mean});
    recs.push_back({"restore.bn.running_var", {C}, restore_bn_.var});
    recs.push_back({"restore.bn.updated", {1}, {restore_bn_.updated ? 1.0 : 0.0}});
    for (const auto& [name, st] : norm_stats_) {
        recs.push_back({name + ".running_mean", {st.mean.size()}, st.mean});
        recs.push_back({name + ".running_var", {st.var.size()}, st.var});
        recs.push_back({name + ".updated", {1}, {st.updated ? 1.0 : 0.0}});
    }
    return recs;
}

void CgtModel::load_records(const std::vector<ArchiveRecord>& records) {
    std::map<std::string, const ArchiveRecord*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    auto need = [&](const std::string& name) -> const ArchiveRecord& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("checkpoint is missing '" + name + "'");
        return *it->second;
    };
    const auto stored = ModelConfig::from_values(need("meta.model_config").values);
    if (!(stored == cfg_)) throw ConfigError("checkpoint model config does not match this model");
    for (auto& [name, t] : params_.entries()) {
        const auto& r = need(name);
        if (r.shape != t.shape()) {
            throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(r.shape) + ", expected " +
                              shape_str(t.shape()));
        }
        std::copy(r.values.begin(), r.values.end(), t.mutable_data().begin());
    }
    auto load_stats = [&](const std::string& prefix, BatchNormStats& st) {
        const auto& m = need(prefix + ".running_mean");
        const auto& v = need(prefix + ".running_var");
        if (m.values.size() != st.mean.size() || v.values.size() != st.var.size()) {
            throw ConfigError("checkpoint statistics '" + prefix + "' have the wrong size");
        }
        st.mean = m.values;
        st.var = v.values;
        st.updated = need(prefix + ".updated").values.at(0) != 0.0;
    };
    load_stats("restore.bn", restore_bn_);
    for (auto& [name, st] : norm_stats_) load_stats(name, st);
}

}  // namespace cgt
