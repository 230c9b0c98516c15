#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgt/ops.hpp"
#include "cgt/params.hpp"
#include "cgt/tensor.hpp"

namespace cgt {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class NormMode { LayerNorm, BatchNorm };

const char* norm_mode_name(NormMode m);
NormMode parse_norm_mode(const std::string& s);

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t heads = 2;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t d_ff = 256;
    std::size_t vocab_size = 0;
    std::size_t max_T = 90;
    std::size_t group_size = 6;
    std::size_t graph_slots = 84;
    std::size_t conv_channels = 1;
    std::size_t max_report_len = 120;
    double pe_base = 1000.0;
    NormMode norm = NormMode::LayerNorm;
    bool tie_output = false;

    /// 64-wide, 2+2 layers, 2 heads.
    static ModelConfig desk(std::size_t vocab_size);
    /// 512-wide, 6+6 layers, 8 heads.
    static ModelConfig full(std::size_t vocab_size);

    void validate() const;
    std::size_t d_head() const { return d_model / heads; }
    /// Segment ids: 0 for the visual token, then one per token group.
    std::size_t segment_count() const { return 1 + (max_T - 1 + group_size - 1) / group_size; }

    std::vector<double> to_values() const;
    static ModelConfig from_values(const std::vector<double>& v);
    bool operator==(const ModelConfig&) const = default;
};

/// Placeholder id at position 0 for the compressed visual token.
inline constexpr int kVisualSlot = -1;

/// Encoder input T = {T_v, T_g}: the visual slot followed by graph tokens,
/// grouped six at a time, optionally padded.
struct TokenSequence {
    std::vector<int> tokens;
    std::vector<int> group_of;
    std::vector<std::uint8_t> pad;

    static TokenSequence from_graph_tokens(const std::vector<int>& graph_tokens, std::size_t group_size,
                                           std::size_t max_T, std::size_t pad_to = 0);
    std::size_t size() const { return tokens.size(); }
};

using VisibleMatrix = AttentionMask;

/// visible(i,j) = same group, or either is the visual token, or i == j;
/// pads see and are seen by nothing but themselves.
VisibleMatrix build_visible_matrix(const TokenSequence& seq);

/// Sinusoid at (pos, dim): sin(pos / base^(dim/d)) for even dim,
/// cos(pos / base^((dim-1)/d)) for odd dim.
double position_encoding(std::size_t pos, std::size_t dim, std::size_t d, double base = 1000.0);
Tensor position_encoding_table(std::size_t n, std::size_t d, double base = 1000.0);

/// Per-slot argmax over non-special ids; ties go to the lowest id.
std::vector<int> discretize_subgraph(const Tensor& slot_logits);

/// Everything the training step needs from one forward pass over a case.
struct CaseForward {
    Tensor slot_logits;             // [N_slots x V]
    std::vector<int> graph_tokens;  // discretized slots
    Tensor memory;                  // encoder output [n x d]
    std::vector<std::uint8_t> memory_visible;
};

class CgtModel {
public:
    CgtModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Training mode switches batch norm to batch statistics.
    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }

    /// Conv -> batch norm -> ReLU -> temporal affine -> vocabulary logits.
    /// Batch norm statistics are shared across the cases of one call.
    std::vector<Tensor> restore_subgraph(const std::vector<Tensor>& features);
    Tensor restore_subgraph(const Tensor& features);

    /// Row mean of the 12 feature rows through an affine map, [1 x d].
    Tensor compress_visual_token(const Tensor& features) const;

    Tensor embed_input(const TokenSequence& seq, const Tensor& visual_token) const;
    Tensor encode(const Tensor& embedded, const VisibleMatrix& mask);

    /// Teacher-forced logits [L x V] for every prefix position.
    Tensor decode(const std::vector<int>& prefix, const Tensor& memory, const std::vector<std::uint8_t>& memory_visible);
    /// Logits [1 x V] for the token following `prefix`.
    Tensor decode_step(const std::vector<int>& prefix, const Tensor& memory,
                       const std::vector<std::uint8_t>& memory_visible);

    /// Restores, discretizes and encodes one case given its slot logits.
    CaseForward encode_case(const Tensor& features, const Tensor& slot_logits);

    struct Generation {
        std::vector<int> report;  // without [SOS]/[EOS]
        std::vector<int> graph_tokens;
        Tensor slot_logits;
        bool truncated = false;
    };
    /// Greedy decoding in evaluation mode.
    Generation generate_greedy(const Tensor& features);

    /// Parameters plus batch-norm statistics and the config.
    std::vector<ArchiveRecord> to_records() const;
    /// Loads records written by to_records(); unknown names are ignored so
    /// callers may store extra state in the same archive.
    void load_records(const std::vector<ArchiveRecord>& records);

    const BatchNormStats& restore_stats() const { return restore_bn_; }

private:
    struct Attention {
        Tensor wq, wk, wv, wo;
    };
    struct Norm {
        std::string name;
        Tensor gain, bias;
    };
    struct FeedForward {
        Tensor w1, b1, w2, b2;
    };
    struct EncoderLayer {
        Attention attn;
        Norm norm1;
        FeedForward ff;
        Norm norm2;
    };
    struct DecoderLayer {
        Attention self_attn;
        Norm norm1;
        Attention cross_attn;
        Norm norm2;
        FeedForward ff;
        Norm norm3;
    };

    Tensor add_param(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out);
    Tensor add_constant_param(const std::string& name, Shape shape, double value);
    Attention make_attention(const std::string& prefix);
    Norm make_norm(const std::string& prefix);
    FeedForward make_ff(const std::string& prefix);

    Tensor attend(const Attention& a, const Tensor& q_in, const Tensor& kv_in, const AttentionMask& mask) const;
    Tensor feed_forward(const FeedForward& f, const Tensor& x) const;
    Tensor normalize(const Norm& n, const Tensor& x);
    Tensor output_logits(const Tensor& h) const;

    ModelConfig cfg_;
    ParamStore params_;
    std::mt19937_64 init_rng_;
    bool training_ = true;

    Tensor token_table_, segment_table_, pe_table_;
    Tensor conv_w_, conv_b_, bn_gain_, bn_bias_, pool_w_, pool_b_, wf_, bf_;
    Tensor wc_, bc_;
    Tensor out_w_, out_b_;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;

    BatchNormStats restore_bn_;
    std::map<std::string, BatchNormStats> norm_stats_;
};

}  // namespace cgt
