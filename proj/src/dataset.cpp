#include "cgt/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "json.hpp"

namespace cgt {

std::vector<DatasetCase> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset " + path.string());
    const auto base = path.parent_path();
    std::vector<DatasetCase> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error(where + e.what());
        }
        DatasetCase c;
        try {
            c.id = j.at("id").get<std::string>();
            c.split = j.value("split", "train");
            c.report = j.contains("report") ? j["report"].get<std::string>() : j.at("report_text").get<std::string>();
            if (j.contains("feature_path")) {
                std::filesystem::path p = j["feature_path"].get<std::string>();
                c.feature_path = p.is_relative() ? base / p : p;
            }
            if (j.contains("synth_seed")) c.synth_seed = j["synth_seed"].get<std::uint64_t>();
            if (j.contains("n_images")) c.n_images = j["n_images"].get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + e.what());
        }
        if (c.split != "train" && c.split != "val" && c.split != "test") {
            throw std::runtime_error(where + "split must be train, val or test");
        }
        if (c.feature_path.empty() && !c.synth_seed) throw std::runtime_error(where + "needs feature_path or synth_seed");
        if (!ids.insert(c.id).second) throw std::runtime_error(where + "duplicate case id '" + c.id + "'");
        out.push_back(std::move(c));
    }
    return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<DatasetCase>& cases) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const auto base = path.parent_path();
    for (const auto& c : cases) {
        nlohmann::ordered_json j;
        j["id"] = c.id;
        j["split"] = c.split;
        j["report"] = c.report;
        if (!c.feature_path.empty()) {
            auto rel = base.empty() ? c.feature_path : c.feature_path.lexically_relative(base);
            j["feature_path"] = (rel.empty() ? c.feature_path : rel).generic_string();
        }
        if (c.synth_seed) j["synth_seed"] = *c.synth_seed;
        if (c.n_images) j["n_images"] = *c.n_images;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

VisualFeatures load_features(const DatasetCase& c) {
    if (!c.feature_path.empty()) return read_feature_file(c.feature_path, c.id);
    return synthetic_features(*c.synth_seed, c.id);
}

Grammar Grammar::standard() {
    Grammar g;
    g.entities = {"fluorescence", "hemorrhage", "macular", "laser",  "staining", "leakage", "exudate", "drusen",
                  "edema",        "fovea",      "disc",    "vessel", "choroid",  "retina",  "arcade",  "periphery"};
    g.relations = {"seen", "near", "under", "around", "within"};
    return g;
}

void Grammar::validate() const {
    if (entities.size() < 2) throw std::invalid_argument("grammar needs at least 2 entities");
    if (relations.empty()) throw std::invalid_argument("grammar needs at least 1 relation");
    if (triples_per_case == 0 || triples_per_case > kFeatureRows / 3) {
        throw std::invalid_argument("triples_per_case must be in [1, 4]");
    }
    if (triples_per_case % 2 != 0) throw std::invalid_argument("triples_per_case must be even (two per sentence)");
    const std::size_t possible = entities.size() * (entities.size() - 1) * relations.size();
    if (world_triples < triples_per_case || world_triples > possible) {
        throw std::invalid_argument("world_triples must lie in [triples_per_case, " + std::to_string(possible) + "]");
    }
}

std::string render_report(const std::vector<text::TermTriple>& triples) {
    std::string out;
    for (std::size_t i = 0; i + 1 < triples.size(); i += 2) {
        const auto& a = triples[i];
        const auto& b = triples[i + 1];
        if (!out.empty()) out += ' ';
        out += a.subject + ' ' + a.relation + ' ' + a.object + " and " + b.subject + ' ' + b.relation + ' ' + b.object +
               " .";
    }
    return out;
}

SynthCorpus synthesize_corpus(std::uint64_t seed, std::size_t n_cases, const Grammar& grammar,
                              const SynthOptions& options) {
    grammar.validate();
    if (n_cases == 0) throw std::invalid_argument("synthesize_corpus: n_cases must be positive");
    if (options.train_fraction < 0 || options.val_fraction < 0 || options.train_fraction + options.val_fraction > 1.0) {
        throw std::invalid_argument("synthesize_corpus: split fractions must be non-negative and sum to at most 1");
    }
    std::mt19937_64 rng(seed);
    const std::size_t E = grammar.entities.size(), R = grammar.relations.size();

    // The world: a fixed pool of admissible triples.
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> world;
    {
        std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
        std::uniform_int_distribution<std::size_t> pe(0, E - 1), pr(0, R - 1);
        while (world.size() < grammar.world_triples) {
            const auto s = pe(rng), r = pr(rng), o = pe(rng);
            if (s == o || !seen.insert({s, r, o}).second) continue;
            world.emplace_back(s, r, o);
        }
    }

    // One fixed code per term; entities first, then relations.
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> codes(E + R, std::vector<double>(kFeatureDim));
    for (auto& c : codes) {
        for (auto& x : c) x = normal(rng);
    }

    SynthCorpus corpus;
    corpus.grammar = grammar;
    std::vector<std::size_t> pool(world.size());
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t n = 0; n < n_cases; ++n) {
        std::vector<std::size_t> picked;
        std::sample(pool.begin(), pool.end(), std::back_inserter(picked), grammar.triples_per_case, rng);
        std::shuffle(picked.begin(), picked.end(), rng);

        std::vector<text::TermTriple> triples;
        std::vector<double> values(kFeatureRows * kFeatureDim, 0.0);
        for (std::size_t i = 0; i < picked.size(); ++i) {
            const auto [s, r, o] = world[picked[i]];
            triples.push_back({grammar.entities[s], grammar.relations[r], grammar.entities[o]});
            const std::size_t code_ids[3] = {s, E + r, o};
            for (std::size_t k = 0; k < 3; ++k) {
                std::copy(codes[code_ids[k]].begin(), codes[code_ids[k]].end(), values.begin() + (3 * i + k) * kFeatureDim);
            }
        }
        for (auto& x : values) x += grammar.noise * normal(rng);

        DatasetCase c;
        c.id = "case" + std::to_string(n + 1);
        c.report = render_report(triples);
        c.n_images = kResampledLength;
        corpus.cases.push_back(c);
        corpus.triples.push_back(std::move(triples));
        corpus.features.push_back({c.id, Tensor::from({kFeatureRows, kFeatureDim}, std::move(values))});
    }

    std::vector<std::size_t> order(n_cases);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(n_cases)));
    const auto n_val = static_cast<std::size_t>(std::llround(options.val_fraction * static_cast<double>(n_cases)));
    for (std::size_t k = 0; k < n_cases; ++k) {
        corpus.cases[order[k]].split = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
    }
    return corpus;
}

std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, SynthCorpus& corpus) {
    std::filesystem::create_directories(dir / "features");
    for (std::size_t i = 0; i < corpus.cases.size(); ++i) {
        auto& c = corpus.cases[i];
        c.feature_path = dir / "features" / (c.id + ".ffaf");
        write_feature_file(c.feature_path, corpus.features[i]);
    }
    const auto dataset = dir / "dataset.jsonl";
    write_dataset(dataset, corpus.cases);
    auto write_lines = [](const std::filesystem::path& p, const std::vector<std::string>& lines) {
        std::ofstream out(p);
        if (!out) throw std::runtime_error("cannot write " + p.string());
        for (const auto& l : lines) out << l << '\n';
    };
    write_lines(dir / "dictionary.txt", corpus.grammar.entities);
    write_lines(dir / "relations.txt", corpus.grammar.relations);
    return dataset;
}

}  // namespace cgt
