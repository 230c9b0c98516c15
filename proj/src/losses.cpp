#include "cgt/losses.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cgt/ops.hpp"
#include "cgt/vocab.hpp"

namespace cgt {

void LossWeights::validate() const {
    if (!(lambda_ce >= 0.0) || !(lambda_tr >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    if (!(gamma > 0.0)) throw std::invalid_argument("margin gamma must be positive");
}

double transe_energy(std::span<const double> s, std::span<const double> r, std::span<const double> o) {
    if (s.size() != r.size() || s.size() != o.size()) throw DimensionError("transe_energy: dimension mismatch");
    double e = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) e += std::abs(s[i] + r[i] - o[i]);
    return e;
}

Tensor transe_energy(const Tensor& s, const Tensor& r, const Tensor& o) {
    return ops::sum(ops::abs(ops::sub(ops::add(s, r), o)));
}

double hinge_term(double d_pos, double d_neg, double gamma) { return std::max(d_pos - d_neg + gamma, 0.0); }

Tensor hinge_term(const Tensor& d_pos, const Tensor& d_neg, double gamma) {
    return ops::relu(ops::add(ops::sub(d_pos, d_neg), Tensor::scalar(gamma)));
}

NegativeSampler::NegativeSampler(const ClinicalGraph& graph, std::uint64_t seed)
    : graph_(&graph), entities_(graph.entity_set()), rng_(seed) {}

std::optional<Triple> NegativeSampler::corrupt(const Triple& t) {
    auto valid = [&](const Triple& c) { return c.subject != c.object && !graph_->contains(c); };
    if (!entities_.empty()) {
        std::uniform_int_distribution<int> side(0, 1);
        std::uniform_int_distribution<std::size_t> pick(0, entities_.size() - 1);
        for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
            Triple c = t;
            (side(rng_) == 0 ? c.subject : c.object) = entities_[pick(rng_)];
            if (valid(c)) return c;
        }
    }
    std::vector<Triple> options;
    for (int e : entities_) {
        if (Triple c{e, t.relation, t.object}; valid(c)) options.push_back(c);
        if (Triple c{t.subject, t.relation, e}; valid(c)) options.push_back(c);
    }
    if (options.empty()) {
        spdlog::warn("negative sampling: no valid corruption of ({}, {}, {}); triple skipped", t.subject, t.relation,
                     t.object);
        return std::nullopt;
    }
    std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
    return options[pick(rng_)];
}

Tensor slot_probabilities(const Tensor& slot_logits) {
    const std::size_t V = slot_logits.dim(1);
    if (V <= kNumSpecial) throw DimensionError("slot logits have no non-special column");
    return ops::softmax_rows(ops::slice_cols(slot_logits, kNumSpecial, V - kNumSpecial));
}

std::vector<double> candidate_distances(std::span<const double> table, std::size_t d, int id) {
    const std::size_t V = table.size() / d;
    const double* e = table.data() + static_cast<std::size_t>(id) * d;
    std::vector<double> out(V - kNumSpecial);
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double* c = table.data() + (kNumSpecial + k) * d;
        double acc = 0.0;
        for (std::size_t x = 0; x < d; ++x) acc += std::abs(c[x] - e[x]);
        out[k] = acc;
    }
    return out;
}

Tensor triple_restoration_loss(const Tensor& slot_logits, const std::vector<Triple>& gt,
                               const std::vector<std::optional<Triple>>& negatives, const Tensor& token_table,
                               double gamma, std::span<const double> distance_table) {
    if (negatives.size() != gt.size()) throw AlignmentError("one negative slot per ground-truth triple is required");
    const std::size_t V = slot_logits.dim(1);
    if (!distance_table.empty() && distance_table.size() != token_table.numel()) {
        throw DimensionError("distance table does not match the token table");
    }
    if (token_table.dim(0) != V) throw DimensionError("slot logits and token table disagree on vocabulary size");
    const std::size_t slot_triples = slot_logits.dim(0) / 3;
    const std::size_t used = std::min(gt.size(), slot_triples);
    bool any = false;
    for (std::size_t i = 0; i < used; ++i) any = any || negatives[i].has_value();
    if (!any) return Tensor::scalar(0.0);

    const std::size_t d = token_table.dim(1), K = V - kNumSpecial;
    const auto table = distance_table.empty() ? token_table.data() : distance_table;
    const auto z = ops::slice_cols(slot_logits, kNumSpecial, K);
    auto row = [&](int id) { return ops::embedding_lookup(token_table, std::span<const int>(&id, 1)); };
    Tensor loss;
    for (std::size_t i = 0; i < used; ++i) {
        if (!negatives[i]) continue;
        const Triple& t = gt[i];
        const int ids[3] = {t.subject, t.relation, t.object};
        // -log sum_k p_k exp(-dist_k) = CE(z, t) - CE(z - dist, t), since dist_t = 0.
        std::vector<double> dist;
        std::vector<int> targets;
        for (int id : ids) {
            const auto di = candidate_distances(table, d, id);
            dist.insert(dist.end(), di.begin(), di.end());
            targets.push_back(id - kNumSpecial);
        }
        const auto zi = ops::slice_rows(z, 3 * i, 3);
        const auto shifted = ops::sub(zi, Tensor::from({3, K}, std::move(dist)));
        const auto mismatch = ops::sub(ops::cross_entropy_logits(zi, targets), ops::cross_entropy_logits(shifted, targets));
        auto d_pos = ops::add(transe_energy(row(t.subject), row(t.relation), row(t.object)), mismatch);
        const Triple& n = *negatives[i];
        auto d_neg = transe_energy(row(n.subject), row(n.relation), row(n.object));
        auto term = hinge_term(d_pos, d_neg, gamma);
        loss = loss.defined() ? ops::add(loss, term) : term;
    }
    return loss;
}

double positive_energy(std::span<const double> probs, std::size_t j, std::span<const double> table, std::size_t d,
                       const Triple& t) {
    const std::size_t K = table.size() / d - kNumSpecial;
    const int ids[3] = {t.subject, t.relation, t.object};
    double mismatch = 0.0;
    std::vector<double> a(K);
    for (std::size_t slot = 0; slot < 3; ++slot) {
        const double* p = probs.data() + (3 * j + slot) * K;
        const auto dist = candidate_distances(table, d, ids[slot]);
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K; ++k) {
            a[k] = p[k] > 0.0 ? std::log(p[k]) - dist[k] : -std::numeric_limits<double>::infinity();
            top = std::max(top, a[k]);
        }
        double acc = 0.0;
        for (double v : a) acc += std::exp(v - top);
        mismatch -= top + std::log(acc);
    }
    const auto row = [&](int id) { return table.subspan(static_cast<std::size_t>(id) * d, d); };
    return transe_energy(row(t.subject), row(t.relation), row(t.object)) + mismatch / 3.0;
}

Tensor report_cross_entropy(const Tensor& logits, std::span<const int> targets) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
        throw AlignmentError("report_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_str(logits.shape()));
    }
    return ops::cross_entropy_logits(logits, targets, kPad);
}

Tensor total_loss(const Tensor& ce, const Tensor& tr, const LossWeights& w) {
    if (!ce.all_finite()) throw ContractError("non-finite cross-entropy branch");
    if (!tr.all_finite()) throw ContractError("non-finite triple-restoration branch");
    return ops::add(ops::scale(ce, w.lambda_ce), ops::scale(tr, w.lambda_tr));
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "epoch,ce,tr,total\n";
    for (const auto& r : rows) out << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.epoch, r.ce, r.tr, r.total);
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<LossRow> read_loss_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<LossRow> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        LossRow r;
        char comma;
        ss >> r.epoch >> comma >> r.ce >> comma >> r.tr >> comma >> r.total;
        if (!ss) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        rows.push_back(r);
    }
    return rows;
}

}  // namespace cgt
