#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cgt/losses.hpp"
#include "cgt/model.hpp"
#include "cgt/params.hpp"

namespace cgt {

enum class RocScore { Energy, Probability };

/// Everything a run needs. The seed fully determines the run.
struct RunConfig {
    std::string preset = "desk";
    ModelConfig model;  // vocab_size is filled in from the built vocabulary
    LossWeights loss;
    AdamConfig adam;
    std::size_t epochs = 50;
    std::size_t batch_size = 8;
    std::size_t min_frequency = 3;
    std::size_t eval_every = 1;
    std::uint64_t seed = 1;
    RocScore roc_score = RocScore::Energy;
    int threads = 0;  // 0 leaves the OpenMP default
    std::filesystem::path dataset;
    std::filesystem::path output_dir = "run";
    std::filesystem::path dictionary;
    std::filesystem::path relations;

    void validate() const;
};

/// Applies one `key = value` setting. Section prefixes ("model.d_model")
/// are accepted and ignored. Throws ConfigError on unknown keys or bad
/// values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value,
                   const std::filesystem::path& base_dir = {});
/// "key=value"
void apply_override(RunConfig& cfg, const std::string& assignment);

/// TOML-style file: `key = value` lines, `[section]` headers, `#` comments.
/// Relative paths resolve against the file's directory.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace cgt
