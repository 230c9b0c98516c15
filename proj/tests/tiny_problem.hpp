#pragma once
// Two-case end-to-end problem on a d=16, 1+1 layer, 50-token model, with
// the same per-case loss as a training step.

#include <random>
#include <string>
#include <vector>

#include "cgt/features.hpp"
#include "cgt/losses.hpp"
#include "cgt/model.hpp"
#include "cgt/vocab.hpp"
#include "gradcheck.hpp"

namespace tiny {

struct Problem {
    cgt::CgtModel model;
    std::vector<cgt::Tensor> features;
    std::vector<std::vector<int>> reports;
    std::vector<std::vector<cgt::Triple>> gt;
    std::vector<std::vector<std::optional<cgt::Triple>>> negatives;
    std::vector<double> frozen_table;
    cgt::LossWeights weights;

    explicit Problem(std::uint64_t seed);
    cgt::Tensor loss();
};

inline cgt::ModelConfig config() {
    cgt::ModelConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.d_ff = 32;
    c.vocab_size = 50;
    c.graph_slots = 12;
    c.max_report_len = 12;
    return c;
}

inline Problem::Problem(std::uint64_t seed) : model(config(), seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> word(4, 49);
    std::vector<std::string> terms(50);
    for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = "t" + std::to_string(i);
    cgt::ClinicalGraph graph(terms, 4);
    for (int c = 0; c < 2; ++c) {
        features.push_back(cgt::synthetic_features(seed * 10 + static_cast<std::uint64_t>(c)).features);
        std::vector<int> r(8);
        for (auto& w : r) w = word(rng);
        reports.push_back(r);
        std::vector<cgt::Triple> g;
        while (g.size() < 3) {
            cgt::Triple t{word(rng), word(rng), word(rng)};
            if (t.subject != t.object) g.push_back(t);
        }
        for (const auto& t : g) graph.add(t, {"c" + std::to_string(c), 0});
        gt.push_back(g);
    }
    cgt::NegativeSampler sampler(graph, seed);
    for (const auto& g : gt) {
        std::vector<std::optional<cgt::Triple>> neg;
        for (const auto& t : g) neg.push_back(sampler.corrupt(t));
        negatives.push_back(neg);
    }
    const auto table = model.params().get("embed.token").data();
    frozen_table.assign(table.begin(), table.end());
    // Smallest margin that keeps every hinge term a unit away from its kink;
    // a larger one only inflates the loss and the difference roundoff.
    model.set_training(true);
    const std::size_t d = config().d_model;
    double gap = 0.0;
    {
        cgt::NoGradGuard ng;
        const auto slots = model.restore_subgraph(features);
        for (std::size_t b = 0; b < gt.size(); ++b) {
            const auto probs = cgt::slot_probabilities(slots[b]);
            for (std::size_t i = 0; i < gt[b].size(); ++i) {
                const auto& n = *negatives[b][i];
                const auto row = [&](int id) { return std::span<const double>(frozen_table).subspan(static_cast<std::size_t>(id) * d, d); };
                const double d_neg = cgt::transe_energy(row(n.subject), row(n.relation), row(n.object));
                gap = std::max(gap, d_neg - cgt::positive_energy(probs.data(), i, frozen_table, d, gt[b][i]));
            }
        }
    }
    weights = {1.0, 1.0, gap + 1.0};
}

inline cgt::Tensor Problem::loss() {
    const auto slots = model.restore_subgraph(features);
    cgt::Tensor sum;
    for (std::size_t b = 0; b < features.size(); ++b) {
        const auto fwd = model.encode_case(features[b], slots[b]);
        std::vector<int> prefix{cgt::kSos};
        prefix.insert(prefix.end(), reports[b].begin(), reports[b].end());
        std::vector<int> targets(reports[b]);
        targets.push_back(cgt::kEos);
        const auto ce = cgt::report_cross_entropy(model.decode(prefix, fwd.memory, fwd.memory_visible), targets);
        const auto tr = cgt::triple_restoration_loss(slots[b], gt[b], negatives[b], model.params().get("embed.token"),
                                                     weights.gamma, frozen_table);
        const auto total = cgt::total_loss(ce, tr, weights);
        sum = sum.defined() ? cgt::ops::add(sum, total) : total;
    }
    return cgt::ops::scale(sum, 1.0 / static_cast<double>(features.size()));
}

struct GradReport {
    double max_rel = 0.0;
    std::string worst;
    std::size_t tensors = 0;
    std::size_t entries = 0;
};

// Every parameter tensor, up to `per_tensor` entries each.
inline GradReport check_all_parameters(Problem& p, std::size_t per_tensor, double h, double floor) {
    std::vector<std::pair<std::string, cgt::Tensor>> inputs;
    for (const auto& [name, t] : p.model.params().entries()) inputs.emplace_back(name, t);
    const auto r = gradcheck::check([&] { return p.loss(); }, inputs, h, per_tensor, floor);
    return {r.max_rel, r.worst, inputs.size(), r.checked};
}

}  // namespace tiny
