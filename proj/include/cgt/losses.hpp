#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "cgt/graph.hpp"
#include "cgt/tensor.hpp"

namespace cgt {

struct LossWeights {
    double lambda_ce = 1.0;
    double lambda_tr = 1.0;
    double gamma = 1.0;

    void validate() const;
};

class AlignmentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// |e_s + r - e_o|_1
double transe_energy(std::span<const double> s, std::span<const double> r, std::span<const double> o);
Tensor transe_energy(const Tensor& s, const Tensor& r, const Tensor& o);

/// max(d_pos - d_neg + gamma, 0)
double hinge_term(double d_pos, double d_neg, double gamma);
Tensor hinge_term(const Tensor& d_pos, const Tensor& d_neg, double gamma);

/// Replaces the head or the tail of a graph triple with a random entity so
/// that the result is not in the graph.
class NegativeSampler {
public:
    NegativeSampler(const ClinicalGraph& graph, std::uint64_t seed);

    /// nullopt when no valid corruption exists (logged).
    std::optional<Triple> corrupt(const Triple& t);

    void reseed(std::uint64_t seed) { rng_.seed(seed); }

    static constexpr int kMaxRejections = 32;

private:
    const ClinicalGraph* graph_;
    std::vector<int> entities_;
    std::mt19937_64 rng_;
};

/// Softmax over the non-special ids of every slot, [N x (V - 4)].
Tensor slot_probabilities(const Tensor& slot_logits);

/// L1 distances from every non-special row of the [V x d] table to row `id`.
std::vector<double> candidate_distances(std::span<const double> table, std::size_t d, int id);

/// Hinge loss between ground-truth triples placed on consecutive slot
/// triples and their corruptions. The positive energy of triple i is the
/// table energy of the triple plus, averaged over its three slots, the
/// soft mismatch -log sum_k p_k exp(-|e_k - e_gt|_1); the mismatch is zero
/// for a one-hot slot on the right token and its distance otherwise. Slot
/// terms see the table as a constant: distances come from `distance_table`
/// when given (same layout), else from the current table values. The
/// negative is the table energy of `negatives[i]`; an empty entry skips i.
Tensor triple_restoration_loss(const Tensor& slot_logits, const std::vector<Triple>& gt,
                               const std::vector<std::optional<Triple>>& negatives, const Tensor& token_table,
                               double gamma, std::span<const double> distance_table = {});

/// Positive energy of candidate (s, r, o) against slot triple j, from
/// slot probabilities [N x (V - 4)] and the [V x d] table; no gradient.
double positive_energy(std::span<const double> probs, std::size_t slot_triple, std::span<const double> table,
                       std::size_t d, const Triple& t);

/// Mean NLL over non-[PAD] targets; logits row t predicts targets[t].
Tensor report_cross_entropy(const Tensor& logits, std::span<const int> targets);

/// lambda_ce * ce + lambda_tr * tr; aborts on non-finite input.
Tensor total_loss(const Tensor& ce, const Tensor& tr, const LossWeights& w);

struct LossRow {
    std::size_t epoch = 0;
    double ce = 0.0;
    double tr = 0.0;
    double total = 0.0;
};

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows);
std::vector<LossRow> read_loss_csv(const std::filesystem::path& path);

}  // namespace cgt
