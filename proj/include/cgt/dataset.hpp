#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cgt/features.hpp"
#include "cgt/text.hpp"

namespace cgt {

/// One line of the dataset file:
/// {id, split, report, feature_path | synth_seed, n_images}.
struct DatasetCase {
    std::string id;
    std::string split;  // train | val | test
    std::string report;
    std::filesystem::path feature_path;  // resolved against the dataset file
    std::optional<std::uint64_t> synth_seed;
    std::optional<std::size_t> n_images;
};

std::vector<DatasetCase> read_dataset(const std::filesystem::path& path);
/// Feature paths are written relative to `path`'s directory when possible.
void write_dataset(const std::filesystem::path& path, const std::vector<DatasetCase>& cases);

VisualFeatures load_features(const DatasetCase& c);

/// Grammar for synthetic corpora. Every sentence carries two triples:
/// "<s1> <r1> <o1> and <s2> <r2> <o2> ."
struct Grammar {
    std::vector<std::string> entities;
    std::vector<std::string> relations;
    std::size_t world_triples = 40;
    std::size_t triples_per_case = 4;  // at most 4: three feature rows per triple
    double noise = 0.3;

    static Grammar standard();
    void validate() const;
};

struct SynthOptions {
    double train_fraction = 0.7;
    double val_fraction = 0.1;
};

struct SynthCorpus {
    Grammar grammar;
    std::vector<DatasetCase> cases;
    std::vector<std::vector<text::TermTriple>> triples;  // generating triples per case
    std::vector<VisualFeatures> features;
};

std::string render_report(const std::vector<text::TermTriple>& triples);

/// Deterministic in (seed, n_cases, grammar, options). Feature rows 3i..3i+2
/// hold fixed per-term codes of triple i plus seeded Gaussian noise.
SynthCorpus synthesize_corpus(std::uint64_t seed, std::size_t n_cases, const Grammar& grammar = Grammar::standard(),
                              const SynthOptions& options = {});

/// Writes dataset.jsonl, features/<id>.ffaf, dictionary.txt and relations.txt
/// under `dir`; returns the dataset path.
std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, SynthCorpus& corpus);

}  // namespace cgt
