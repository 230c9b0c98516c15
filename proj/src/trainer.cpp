#include "cgt/trainer.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "cgt/ops.hpp"
#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cgt {

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

text::ExtractionResources resolve_resources(const RunConfig& cfg) {
    const auto base = cfg.dataset.parent_path();
    auto pick = [&](const std::filesystem::path& explicit_path, const char* sibling) -> std::string {
        if (!explicit_path.empty()) return explicit_path.string();
        const auto p = base / sibling;
        return std::filesystem::exists(p) ? p.string() : std::string();
    };
    const auto dict = pick(cfg.dictionary, "dictionary.txt");
    const auto rel = pick(cfg.relations, "relations.txt");
    if (rel.empty()) throw ConfigError("no relation lexicon: set `relations` or place relations.txt next to the dataset");
    if (dict.empty()) spdlog::warn("no user dictionary found; entity recognition falls back to nouns only");
    return text::load_resources(dict, rel);
}

void put_u64(std::vector<ArchiveRecord>& recs, const std::string& name, std::uint64_t v) {
    recs.push_back({name, {2}, {static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL)}});
}

std::uint64_t get_u64(const ArchiveRecord& r) {
    return (static_cast<std::uint64_t>(r.values.at(0)) << 32) | static_cast<std::uint64_t>(r.values.at(1));
}

const ArchiveRecord* find_record(const std::vector<ArchiveRecord>& recs, const std::string& name) {
    for (const auto& r : recs) {
        if (r.name == name) return &r;
    }
    return nullptr;
}

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

void check_vocab_hash(const std::vector<ArchiveRecord>& recs, const Vocabulary& vocab, const std::string& what) {
    const auto* r = find_record(recs, "meta.vocab_hash");
    if (!r) throw ConfigError(what + " has no vocabulary hash");
    if (get_u64(*r) != vocab.hash()) {
        throw ConfigError(what + " was trained with vocabulary " + hex(get_u64(*r)) + " but the run vocabulary is " +
                          hex(vocab.hash()));
    }
}

std::vector<metrics::Sentence> generate_reports(CgtModel& model, const PreparedData& data,
                                                const std::vector<std::size_t>& idx,
                                                std::vector<CgtModel::Generation>* gens = nullptr) {
    std::vector<metrics::Sentence> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        auto g = model.generate_greedy(data.features[i]);
        out.push_back(data.vocab.decode_tokens(g.report));
        if (gens) gens->push_back(std::move(g));
    }
    return out;
}

std::vector<metrics::Sentence> references(const PreparedData& data, const std::vector<std::size_t>& idx) {
    std::vector<metrics::Sentence> out;
    for (auto i : idx) out.push_back(metrics::tokens(data.cases[i].report));
    return out;
}

}  // namespace

const std::vector<std::size_t>& PreparedData::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

std::vector<Triple> report_triples(const std::string& report, const text::ExtractionResources& res,
                                   const Vocabulary& vocab) {
    std::vector<Triple> out;
    std::set<Triple> seen;
    for (const auto& st : text::extract_triples(report, res)) {
        const auto& t = st.triple;
        if (!vocab.contains(t.subject) || !vocab.contains(t.relation) || !vocab.contains(t.object)) continue;
        Triple ids{vocab.id(t.subject), vocab.id(t.relation), vocab.id(t.object)};
        if (ids.subject < kNumSpecial || ids.relation < kNumSpecial || ids.object < kNumSpecial) continue;
        if (ids.subject == ids.object || !seen.insert(ids).second) continue;
        out.push_back(ids);
    }
    return out;
}

PreparedData prepare_data(const RunConfig& cfg, const Vocabulary* vocab) {
    PreparedData d;
    d.cases = read_dataset(cfg.dataset);
    if (d.cases.empty()) throw std::runtime_error("dataset " + cfg.dataset.string() + " is empty");
    d.resources = resolve_resources(cfg);

    std::vector<ReportRecord> train_reports;
    std::vector<std::string> train_texts;
    for (std::size_t i = 0; i < d.cases.size(); ++i) {
        const auto& c = d.cases[i];
        d.split(c.split);  // validates the name
        (c.split == "train" ? d.train : c.split == "val" ? d.val : d.test).push_back(i);
        if (c.split == "train") {
            train_reports.push_back({c.id, c.split, c.report});
            train_texts.push_back(c.report);
        }
    }
    if (d.train.empty()) throw std::runtime_error("dataset has no training cases");
    d.train_corpus_hash = corpus_hash(train_reports);

    const auto raw_graph = build_clinical_graph(train_reports, d.resources);
    d.vocab = vocab ? *vocab : Vocabulary::build(train_texts, cfg.min_frequency, &raw_graph);
    d.graph = rebind(raw_graph, d.vocab.tokens(), kNumSpecial);

    const std::size_t max_len = cfg.model.max_report_len;
    for (const auto& c : d.cases) {
        d.gt.push_back(report_triples(c.report, d.resources, d.vocab));
        auto ids = d.vocab.encode(c.report);
        if (ids.size() > max_len) {
            spdlog::warn("report of '{}' has {} tokens; truncated to {}", c.id, ids.size(), max_len);
            ids.resize(max_len);
        }
        d.report_ids.push_back(std::move(ids));
        auto f = load_features(c);
        f.validate();
        d.features.push_back(f.features);
    }
    return d;
}

std::vector<RestoredTriple> tag_restored(const std::vector<int>& graph_tokens, const ClinicalGraph& graph,
                                         const std::vector<Triple>& gt) {
    std::vector<Triple> predicted;
    std::set<Triple> pset;
    for (std::size_t j = 0; j + 2 < graph_tokens.size(); j += 3) {
        Triple t{graph_tokens[j], graph_tokens[j + 1], graph_tokens[j + 2]};
        if (graph.contains(t) && pset.insert(t).second) predicted.push_back(t);
    }
    const std::set<Triple> gset(gt.begin(), gt.end());
    std::vector<RestoredTriple> out;
    for (const auto& t : predicted) out.push_back({t, gset.count(t) ? "TP" : "FP"});
    for (const auto& t : gt) {
        if (!pset.count(t)) out.push_back({t, "FN"});
    }
    return out;
}

std::vector<double> score_candidates(const Tensor& slot_logits, const Tensor& token_table, const ClinicalGraph& graph,
                                     RocScore mode) {
    NoGradGuard no_grad;
    const std::size_t slots = slot_logits.dim(0) / 3, d = token_table.dim(1);
    std::vector<double> scores;
    scores.reserve(graph.triples().size());
    if (mode == RocScore::Energy) {
        const auto probs = slot_probabilities(slot_logits);
        for (const auto& t : graph.triples()) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < slots; ++j) {
                best = std::min(best, positive_energy(probs.data(), j, token_table.data(), d, t));
            }
            scores.push_back(-best);
        }
        return scores;
    }
    const std::size_t V = slot_logits.dim(1), k = V - kNumSpecial;
    const auto p = ops::softmax_rows(ops::slice_cols(slot_logits, kNumSpecial, k));
    const auto pd = p.data();
    auto prob = [&](std::size_t slot, int id) { return pd[slot * k + static_cast<std::size_t>(id - kNumSpecial)]; };
    for (const auto& t : graph.triples()) {
        double best = 0.0;
        for (std::size_t j = 0; j < slots; ++j) {
            best = std::max(best, prob(3 * j, t.subject) * prob(3 * j + 1, t.relation) * prob(3 * j + 2, t.object));
        }
        scores.push_back(best);
    }
    return scores;
}

TrainSummary train(const RunConfig& cfg_in, bool resume) {
    RunConfig cfg = cfg_in;
    cfg.validate();
#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
    auto data = prepare_data(cfg);
    cfg.model.vocab_size = data.vocab.size();
    const auto& dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    save_config(cfg, dir / "config.toml");
    data.vocab.save(dir / "vocab.txt");
    write_graph_tsv(data.graph, dir / "graph.tsv");
    {
        const auto st = graph_stats(data.graph);
        nlohmann::ordered_json m;
        m["entities"] = st.entities;
        m["relations"] = st.relations;
        m["triples"] = st.triples;
        m["source_split"] = "train";
        m["train_reports"] = data.train.size();
        m["train_corpus_hash"] = hex(data.train_corpus_hash);
        m["vocab_size"] = data.vocab.size();
        m["vocab_hash"] = hex(data.vocab.hash());
        std::ofstream(dir / "graph.json") << m.dump(2) << '\n';
    }
    spdlog::info("train: {} train / {} val / {} test cases, vocab {}, graph {} triples", data.train.size(),
                 data.val.size(), data.test.size(), data.vocab.size(), data.graph.triples().size());

    CgtModel model(cfg.model, cfg.seed);
    Adam adam(cfg.adam);
    TrainSummary summary;
    summary.best_val_cider = -std::numeric_limits<double>::infinity();
    std::vector<LossRow> rows;
    std::size_t start_epoch = 1;

    const auto last_path = dir / "last.ckpt";
    const auto best_path = dir / "model.ckpt";
    if (resume) {
        if (!std::filesystem::exists(last_path)) throw std::runtime_error("cannot resume: " + last_path.string() + " missing");
        const auto recs = read_archive(last_path);
        check_vocab_hash(recs, data.vocab, last_path.string());
        model.load_records(recs);
        std::map<std::string, std::vector<double>> m, v;
        for (const auto& [name, t] : model.params().entries()) {
            if (const auto* r = find_record(recs, "adam.m." + name)) m[name] = r->values;
            if (const auto* r = find_record(recs, "adam.v." + name)) v[name] = r->values;
        }
        const auto* steps = find_record(recs, "adam.step");
        const auto* ep = find_record(recs, "train.epoch");
        const auto* best = find_record(recs, "train.best");
        if (!steps || !ep || !best) throw ConfigError(last_path.string() + " is not a resumable checkpoint");
        adam.restore(static_cast<std::int64_t>(steps->values[0]), std::move(m), std::move(v));
        start_epoch = static_cast<std::size_t>(ep->values[0]) + 1;
        summary.best_val_cider = best->values[0];
        summary.best_epoch = static_cast<std::size_t>(best->values[1]);
        if (std::filesystem::exists(dir / "losses.csv")) {
            for (const auto& r : read_loss_csv(dir / "losses.csv")) {
                if (r.epoch < start_epoch) rows.push_back(r);
            }
        }
        spdlog::info("resuming at epoch {}", start_epoch);
    }

    auto checkpoint = [&](std::size_t epoch, bool with_optimizer) {
        auto recs = model.to_records();
        put_u64(recs, "meta.vocab_hash", data.vocab.hash());
        recs.push_back({"train.epoch", {1}, {static_cast<double>(epoch)}});
        if (with_optimizer) {
            recs.push_back({"train.best", {2}, {summary.best_val_cider, static_cast<double>(summary.best_epoch)}});
            recs.push_back({"adam.step", {1}, {static_cast<double>(adam.step_count())}});
            for (const auto& [name, t] : model.params().entries()) {
                auto mi = adam.first_moment().find(name);
                auto vi = adam.second_moment().find(name);
                if (mi != adam.first_moment().end()) recs.push_back({"adam.m." + name, t.shape(), mi->second});
                if (vi != adam.second_moment().end()) recs.push_back({"adam.v." + name, t.shape(), vi->second});
            }
        }
        return recs;
    };

    const LossWeights& w = cfg.loss;
    for (std::size_t epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto order = data.train;
        auto rng = derived_rng(cfg.seed, epoch, 1);
        std::shuffle(order.begin(), order.end(), rng);
        NegativeSampler sampler(data.graph, derived_rng(cfg.seed, epoch, 2)());
        model.set_training(true);

        double ce_sum = 0.0, tr_sum = 0.0, total_sum = 0.0;
        std::size_t step = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size, ++step) {
            const std::size_t B = std::min(cfg.batch_size, order.size() - b0);
            model.params().zero_grad();
            std::vector<Tensor> feats;
            for (std::size_t b = 0; b < B; ++b) feats.push_back(data.features[order[b0 + b]]);
            const auto slot_logits = model.restore_subgraph(feats);
            Tensor batch;
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t i = order[b0 + b];
                const auto fwd = model.encode_case(feats[b], slot_logits[b]);
                std::vector<int> prefix{kSos};
                prefix.insert(prefix.end(), data.report_ids[i].begin(), data.report_ids[i].end());
                std::vector<int> targets(data.report_ids[i]);
                targets.push_back(kEos);
                const auto ce = report_cross_entropy(model.decode(prefix, fwd.memory, fwd.memory_visible), targets);
                Tensor tr = Tensor::scalar(0.0);
                if (w.lambda_tr > 0.0) {
                    std::vector<std::optional<Triple>> negatives;
                    for (const auto& t : data.gt[i]) {
                        negatives.push_back(data.graph.contains(t) ? sampler.corrupt(t) : std::nullopt);
                    }
                    tr = triple_restoration_loss(slot_logits[b], data.gt[i], negatives,
                                                 model.params().get("embed.token"), w.gamma);
                }
                const auto total = total_loss(ce, tr, w);
                ce_sum += ce.item();
                tr_sum += tr.item();
                total_sum += total.item();
                batch = batch.defined() ? ops::add(batch, total) : total;
            }
            const auto loss = ops::scale(batch, 1.0 / static_cast<double>(B));
            if (!loss.all_finite()) {
                throw ContractError(fmt::format("non-finite loss at epoch {} step {}", epoch, step));
            }
            loss.backward();
            try {
                adam.step(model.params());
            } catch (const NonFiniteGradient& e) {
                throw ContractError(fmt::format("epoch {} step {}: {}", epoch, step, e.what()));
            }
        }
        const double n = static_cast<double>(order.size());
        rows.push_back({epoch, ce_sum / n, tr_sum / n, total_sum / n});
        write_loss_csv(dir / "losses.csv", rows);
        summary.last = rows.back();
        summary.epochs_run = epoch;

        if (!data.val.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
            const auto cands = generate_reports(model, data, data.val);
            const double c = metrics::cider(cands, references(data, data.val));
            if (c > summary.best_val_cider) {
                summary.best_val_cider = c;
                summary.best_epoch = epoch;
                write_archive(best_path, checkpoint(epoch, false));
            }
            spdlog::info("epoch {}: ce {:.5f} tr {:.5f} total {:.5f} val CIDEr {:.4f} ({:.1f}s)", epoch, rows.back().ce,
                         rows.back().tr, rows.back().total, c,
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        } else {
            spdlog::info("epoch {}: ce {:.5f} tr {:.5f} total {:.5f} ({:.1f}s)", epoch, rows.back().ce, rows.back().tr,
                         rows.back().total, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        if (data.val.empty()) {
            summary.best_epoch = epoch;
            summary.best_val_cider = 0.0;
            write_archive(best_path, checkpoint(epoch, false));
        }
        write_archive(last_path, checkpoint(epoch, true));
    }
    return summary;
}

LoadedRun load_run(const std::filesystem::path& run_dir, const std::optional<RunConfig>& override_cfg) {
    RunConfig cfg = override_cfg ? *override_cfg : load_config(run_dir / "config.toml");
    auto vocab = Vocabulary::load(run_dir / "vocab.txt");
    cfg.model.vocab_size = vocab.size();
    const auto path = run_dir / "model.ckpt";
    const auto recs = read_archive(path);
    check_vocab_hash(recs, vocab, path.string());
    CgtModel model(cfg.model, cfg.seed);
    model.load_records(recs);
    model.set_training(false);
    return {std::move(cfg), std::move(vocab), std::move(model)};
}

EvaluationResult evaluate(const std::filesystem::path& run_dir, const std::string& split,
                          const std::optional<RunConfig>& override_cfg) {
    auto run = load_run(run_dir, override_cfg);
#ifdef _OPENMP
    if (run.cfg.threads > 0) omp_set_num_threads(run.cfg.threads);
#endif
    const auto data = prepare_data(run.cfg, &run.vocab);
    const auto& idx = data.split(split);
    if (idx.empty()) throw std::runtime_error("split '" + split + "' has no cases");

    std::vector<CgtModel::Generation> gens;
    const auto cands = generate_reports(run.model, data, idx, &gens);
    const auto refs = references(data, idx);

    EvaluationResult res;
    res.cases = idx.size();
    res.report = metrics::evaluate_text(cands, refs);

    std::vector<double> scores;
    std::vector<int> labels;
    const auto& table = run.model.params().get("embed.token");
    if (!data.graph.empty()) {
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto s = score_candidates(gens[k].slot_logits, table, data.graph, run.cfg.roc_score);
            const std::set<Triple> gset(data.gt[idx[k]].begin(), data.gt[idx[k]].end());
            for (std::size_t c = 0; c < s.size(); ++c) {
                scores.push_back(s[c]);
                labels.push_back(gset.count(data.graph.triples()[c]) ? 1 : 0);
            }
        }
        try {
            res.roc = metrics::roc_micro(scores, labels);
            res.report.auc = metrics::auc_trapezoid(res.roc);
            res.auc_rank = metrics::auc_rank(scores, labels);
            if (std::abs(*res.report.auc - *res.auc_rank) > 1e-9) {
                spdlog::warn("AUC cross-check disagrees: trapezoid {} vs rank {}", *res.report.auc, *res.auc_rank);
            }
        } catch (const std::domain_error& e) {
            spdlog::warn("evaluate: {}", e.what());
        }
    } else {
        spdlog::warn("evaluate: clinical graph is empty; ROC skipped");
    }

    const std::string suffix = split == "test" ? "" : "_" + split;
    {
        auto j = nlohmann::ordered_json::parse(metrics::to_json(res.report));
        j["AUC_rank"] = res.auc_rank ? nlohmann::ordered_json(*res.auc_rank) : nlohmann::ordered_json(nullptr);
        j["split"] = split;
        j["cases"] = res.cases;
        j["roc_score"] = run.cfg.roc_score == RocScore::Energy ? "energy" : "probability";
        std::ofstream(run_dir / ("metrics" + suffix + ".json")) << j.dump(2) << '\n';
    }
    if (!res.roc.empty()) metrics::write_roc_csv(run_dir / ("roc" + suffix + ".csv"), res.roc);
    std::ofstream gen(run_dir / ("generations" + suffix + ".jsonl"));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto i = idx[k];
        nlohmann::ordered_json j;
        j["case_id"] = data.cases[i].id;
        j["report"] = run.vocab.decode(gens[k].report);
        j["reference"] = data.cases[i].report;
        auto triples = nlohmann::ordered_json::array();
        for (const auto& rt : tag_restored(gens[k].graph_tokens, data.graph, data.gt[i])) {
            triples.push_back({{"subject", run.vocab.token(rt.triple.subject)},
                               {"relation", run.vocab.token(rt.triple.relation)},
                               {"object", run.vocab.token(rt.triple.object)},
                               {"tag", rt.tag}});
        }
        j["restored_triples"] = std::move(triples);
        gen << j.dump() << '\n';
    }
    if (!gen) throw std::runtime_error("write failed for generations");
    return res;
}

}  // namespace cgt
