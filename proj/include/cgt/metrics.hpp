#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cgt::metrics {

using Sentence = std::vector<std::string>;

/// Lowercased word tokens, shared with graph extraction.
Sentence tokens(std::string_view text);

/// Corpus BLEU-n: clipped n-gram precisions pooled over the corpus,
/// geometric mean with uniform weights, brevity penalty against the
/// closest reference length per case. Any zero precision gives 0.
double bleu(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references, int n);
double bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references, int n);

std::size_t lcs_length(const Sentence& a, const Sentence& b);
/// LCS F-measure with beta = 1.2.
double rouge_l(const Sentence& candidate, const Sentence& reference, double beta = 1.2);
double rouge_l(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references);

/// Per-case CIDEr: TF-IDF n-gram vectors (n = 1..4), cosine against each
/// reference, averaged over references and n, times 10. IDF is computed
/// from the references of the whole corpus.
std::vector<double> cider_per_case(const std::vector<Sentence>& candidates,
                                   const std::vector<std::vector<Sentence>>& references);
double cider(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references);
double cider(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references);

/// Unigram alignment (exact, then lemma), F-mean with alpha = 0.9 and
/// fragmentation penalty 0.5 * (chunks / matches)^3. No synonym stage.
double meteor(const Sentence& candidate, const Sentence& reference);
double meteor(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references);

struct RocPoint {
    double threshold;
    double tpr;
    double fpr;
};

/// Pooled threshold sweep from +inf downward, one point per distinct
/// score. Throws std::domain_error when only one class is present.
std::vector<RocPoint> roc_micro(std::span<const double> scores, std::span<const int> labels);
/// Trapezoidal area under ROC points (at least two).
double auc_trapezoid(const std::vector<RocPoint>& points);
/// Mann-Whitney U / (P * N) with midranks for ties.
double auc_rank(std::span<const double> scores, std::span<const int> labels);

struct Report {
    std::array<double, 4> bleu{};
    double meteor = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;
    std::optional<double> auc;
};

Report evaluate_text(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references);

std::string to_json(const Report& r, int indent = 2);
void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& points);

}  // namespace cgt::metrics
