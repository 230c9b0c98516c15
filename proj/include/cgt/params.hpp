#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cgt/tensor.hpp"

namespace cgt {

/// Ordered registry of named trainable tensors. Registration order is the
/// iteration order everywhere (optimizer, checkpoint), which keeps runs
/// reproducible.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

    void zero_grad();
    std::size_t total_elements() const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
public:
    NonFiniteGradient(const std::string& param)
        : std::runtime_error("non-finite gradient in parameter '" + param + "'"), param_name(param) {}
    std::string param_name;
};

/// Bias-corrected ADAM. Moments are keyed by parameter name.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    /// Applies one update to every parameter with a gradient. Checks all
    /// gradients before touching anything, so a NonFiniteGradient leaves
    /// parameters and state unchanged.
    void step(ParamStore& params);

    std::int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

    const std::map<std::string, std::vector<double>>& first_moment() const { return m_; }
    const std::map<std::string, std::vector<double>>& second_moment() const { return v_; }
    void restore(std::int64_t steps, std::map<std::string, std::vector<double>> m,
                 std::map<std::string, std::vector<double>> v);

private:
    AdamConfig cfg_;
    std::int64_t step_count_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

/// One named array in a checkpoint archive.
struct ArchiveRecord {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), byte_offset(offset) {}
    std::uint64_t byte_offset;
};

/// Checkpoint archive: magic "CGTK", version byte, u32 record count, then per
/// record u32 name length, name bytes, u32 rank, rank x u64 dims, and the
/// row-major float64 values. All integers and floats are little-endian.
inline constexpr char kArchiveMagic[4] = {'C', 'G', 'T', 'K'};
inline constexpr std::uint8_t kArchiveVersion = 1;

void write_archive(const std::filesystem::path& path, const std::vector<ArchiveRecord>& records);
std::vector<ArchiveRecord> read_archive(const std::filesystem::path& path);

}  // namespace cgt
