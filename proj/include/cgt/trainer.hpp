#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cgt/config.hpp"
#include "cgt/dataset.hpp"
#include "cgt/graph.hpp"
#include "cgt/metrics.hpp"
#include "cgt/model.hpp"
#include "cgt/vocab.hpp"

namespace cgt {

/// Dataset, vocabulary and clinical graph ready for a run. The graph and
/// vocabulary come from the training split only.
struct PreparedData {
    std::vector<DatasetCase> cases;
    text::ExtractionResources resources;
    Vocabulary vocab;
    ClinicalGraph graph;                      // over vocabulary ids
    std::vector<std::vector<Triple>> gt;      // per case, extraction order
    std::vector<std::vector<int>> report_ids; // per case, truncated to max_report_len
    std::vector<Tensor> features;
    std::vector<std::size_t> train, val, test;
    std::uint64_t train_corpus_hash = 0;

    const std::vector<std::size_t>& split(const std::string& name) const;
};

/// Builds everything from `cfg`. With `vocab` given, it is used instead of
/// building a new one (evaluation of a finished run).
PreparedData prepare_data(const RunConfig& cfg, const Vocabulary* vocab = nullptr);

/// Ground-truth triples of a report, mapped to vocabulary ids.
std::vector<Triple> report_triples(const std::string& report, const text::ExtractionResources& res,
                                   const Vocabulary& vocab);

struct TrainSummary {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_val_cider = 0.0;
    LossRow last;
};

/// Trains and writes the run directory: config.toml, vocab.txt, graph.tsv,
/// graph.json, losses.csv, model.ckpt (best validation CIDEr) and
/// last.ckpt (resume state). With `resume`, continues from last.ckpt.
TrainSummary train(const RunConfig& cfg, bool resume = false);

struct EvaluationResult {
    metrics::Report report;
    std::optional<double> auc_rank;
    std::vector<metrics::RocPoint> roc;
    std::size_t cases = 0;
};

struct RestoredTriple {
    Triple triple;
    std::string tag;  // TP, FP or FN
};

/// Predicted sub-graph (unique slot triples that belong to the graph)
/// tagged against the ground truth.
std::vector<RestoredTriple> tag_restored(const std::vector<int>& graph_tokens, const ClinicalGraph& graph,
                                         const std::vector<Triple>& gt);

/// Per-candidate restoration scores for one case, one per graph triple.
std::vector<double> score_candidates(const Tensor& slot_logits, const Tensor& token_table, const ClinicalGraph& graph,
                                     RocScore mode);

/// Loads <run_dir>/model.ckpt and evaluates `split`, writing metrics.json,
/// roc.csv and generations.jsonl (suffixed with the split when not test).
EvaluationResult evaluate(const std::filesystem::path& run_dir, const std::string& split,
                          const std::optional<RunConfig>& override_cfg = std::nullopt);

/// Loads a trained model and its vocabulary from a run directory.
struct LoadedRun {
    RunConfig cfg;
    Vocabulary vocab;
    CgtModel model;
};
LoadedRun load_run(const std::filesystem::path& run_dir, const std::optional<RunConfig>& override_cfg = std::nullopt);

}  // namespace cgt
