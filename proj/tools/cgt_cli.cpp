// Command-line front end: extract-graph, build-vocab, synth, train,
// evaluate, decode.

#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cgt/config.hpp"
#include "cgt/dataset.hpp"
#include "cgt/graph.hpp"
#include "cgt/trainer.hpp"
#include "cgt/vocab.hpp"
#include "json.hpp"

namespace {

using namespace cgt;

std::vector<ReportRecord> load_reports(const std::string& path, bool train_only) {
    auto reports = read_reports_jsonl(path);
    if (train_only) {
        std::erase_if(reports, [](const ReportRecord& r) { return !r.split.empty() && r.split != "train"; });
    }
    return reports;
}

void write_manifest(const std::filesystem::path& path, const ClinicalGraph& g, const std::vector<ReportRecord>& reports) {
    const auto st = graph_stats(g);
    nlohmann::ordered_json m;
    m["entities"] = st.entities;
    m["relations"] = st.relations;
    m["triples"] = st.triples;
    m["source_split"] = "train";
    m["reports"] = reports.size();
    m["corpus_hash"] = fmt::format("{:016x}", corpus_hash(reports));
    std::ofstream out(path);
    out << m.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal clinical graph transformer: graph extraction, training, evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    // extract-graph
    auto* ex = app.add_subcommand("extract-graph", "Build the clinical graph from training reports");
    std::string ex_in, ex_out, ex_dict, ex_rel;
    std::uint64_t ex_seed = 1;
    bool ex_train_only = false;
    ex->add_option("--in", ex_in, "JSON-lines reports {id, split, report_text}")->required();
    ex->add_option("--out", ex_out, "Output TSV (subject, relation, object, count)")->required();
    ex->add_option("--dictionary", ex_dict, "User dictionary, one term per line");
    ex->add_option("--relations", ex_rel, "Relation lexicon, one term per line")->required();
    ex->add_flag("--train-only", ex_train_only, "Drop non-train reports instead of refusing them");
    ex->add_option("--seed", ex_seed, "Random seed (extraction is deterministic)")->capture_default_str();

    // build-vocab
    auto* bv = app.add_subcommand("build-vocab", "Build the word vocabulary from training reports");
    std::string bv_in, bv_out, bv_graph;
    std::size_t bv_min = 3;
    std::uint64_t bv_seed = 1;
    bool bv_train_only = false;
    bv->add_option("--in", bv_in, "JSON-lines reports")->required();
    bv->add_option("--out", bv_out, "Output vocabulary, one token per line")->required();
    bv->add_option("--min-frequency", bv_min, "Drop tokens seen fewer times")->capture_default_str();
    bv->add_option("--graph", bv_graph, "Graph TSV whose terms compete with their extraction counts");
    bv->add_flag("--train-only", bv_train_only, "Drop non-train reports instead of refusing them");
    bv->add_option("--seed", bv_seed, "Random seed (vocabulary building is deterministic)")->capture_default_str();

    // synth
    auto* sy = app.add_subcommand("synth", "Generate a synthetic corpus with feature files");
    std::uint64_t sy_seed = 1;
    std::size_t sy_cases = 200;
    std::string sy_out = "synth";
    Grammar grammar = Grammar::standard();
    SynthOptions sy_opts;
    sy->add_option("--seed", sy_seed, "Random seed")->capture_default_str();
    sy->add_option("--cases", sy_cases, "Number of cases")->capture_default_str();
    sy->add_option("--out", sy_out, "Output directory")->capture_default_str();
    sy->add_option("--world-triples", grammar.world_triples, "Size of the admissible triple pool")->capture_default_str();
    sy->add_option("--triples-per-case", grammar.triples_per_case, "Triples per report (2 or 4)")->capture_default_str();
    sy->add_option("--noise", grammar.noise, "Feature noise standard deviation")->capture_default_str();
    sy->add_option("--train-fraction", sy_opts.train_fraction, "Share of train cases")->capture_default_str();
    sy->add_option("--val-fraction", sy_opts.val_fraction, "Share of validation cases")->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "Train a model; writes a run directory");
    std::string tr_config, tr_dataset, tr_out;
    std::vector<std::string> tr_overrides;
    std::uint64_t tr_seed = 0;
    std::size_t tr_epochs = 0;
    bool tr_resume = false;
    tr->add_option("--config", tr_config, "TOML-style key = value file");
    tr->add_option("--override", tr_overrides, "key=value, repeatable, applied after the config file");
    tr->add_option("--dataset", tr_dataset, "Dataset JSON-lines file");
    tr->add_option("--out", tr_out, "Run directory");
    tr->add_option("--seed", tr_seed, "Random seed (overrides the config)");
    tr->add_option("--epochs", tr_epochs, "Number of epochs (overrides the config)");
    tr->add_flag("--resume", tr_resume, "Continue from <run>/last.ckpt");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Evaluate the best checkpoint of a run");
    std::string ev_run, ev_split = "test";
    std::vector<std::string> ev_overrides;
    std::uint64_t ev_seed = 0;
    ev->add_option("--run", ev_run, "Run directory")->required();
    ev->add_option("--split", ev_split, "train, val or test")->capture_default_str();
    ev->add_option("--override", ev_overrides, "key=value applied to the run config (e.g. roc_score=probability)");
    ev->add_option("--seed", ev_seed, "Random seed (evaluation is deterministic)");

    // decode
    auto* de = app.add_subcommand("decode", "Generate a report for one case or feature file");
    std::string de_run, de_features, de_case;
    std::uint64_t de_seed = 0;
    de->add_option("--run", de_run, "Run directory")->required();
    auto* de_f = de->add_option("--features", de_features, "Feature file (FFAF)");
    auto* de_c = de->add_option("--case", de_case, "Case id from the run's dataset");
    de_f->excludes(de_c);
    de->add_option("--seed", de_seed, "Random seed (greedy decoding is deterministic)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(log_level));

        if (*ex) {
            const auto res = text::load_resources(ex_dict, ex_rel);
            const auto reports = load_reports(ex_in, ex_train_only);
            const auto g = build_clinical_graph(reports, res);
            write_graph_tsv(g, ex_out);
            auto manifest = std::filesystem::path(ex_out).replace_extension(".json");
            write_manifest(manifest, g, reports);
            const auto st = graph_stats(g);
            std::cout << st.entities << " entities, " << st.relations << " relations, " << st.triples << " triples\n";
        } else if (*bv) {
            const auto reports = load_reports(bv_in, bv_train_only);
            for (const auto& r : reports) {
                if (!r.split.empty() && r.split != "train") {
                    throw LeakageError("report '" + r.id + "' is not a training report");
                }
            }
            std::vector<std::string> texts;
            for (const auto& r : reports) texts.push_back(r.text);
            std::optional<ClinicalGraph> g;
            if (!bv_graph.empty()) g = read_graph_tsv(bv_graph);
            const auto v = Vocabulary::build(texts, bv_min, g ? &*g : nullptr);
            v.save(bv_out);
            std::cout << v.size() << " tokens, hash " << fmt::format("{:016x}", v.hash()) << '\n';
        } else if (*sy) {
            auto corpus = synthesize_corpus(sy_seed, sy_cases, grammar, sy_opts);
            const auto path = write_synthetic_corpus(sy_out, corpus);
            std::cout << "wrote " << corpus.cases.size() << " cases to " << path.string() << '\n';
        } else if (*tr) {
            RunConfig cfg = tr_config.empty() ? RunConfig{} : load_config(tr_config);
            for (const auto& o : tr_overrides) apply_override(cfg, o);
            if (!tr_dataset.empty()) cfg.dataset = tr_dataset;
            if (!tr_out.empty()) cfg.output_dir = tr_out;
            if (tr->count("--seed")) cfg.seed = tr_seed;
            if (tr_epochs) cfg.epochs = tr_epochs;
            if (cfg.dataset.empty()) throw ConfigError("no dataset: pass --dataset or set dataset in the config");
            const auto s = train(cfg, tr_resume);
            std::cout << "trained " << s.epochs_run << " epochs; best epoch " << s.best_epoch << "; final ce "
                      << s.last.ce << " tr " << s.last.tr << '\n';
        } else if (*ev) {
            std::optional<RunConfig> cfg;
            if (!ev_overrides.empty()) {
                cfg = load_config(std::filesystem::path(ev_run) / "config.toml");
                for (const auto& o : ev_overrides) apply_override(*cfg, o);
            }
            const auto r = evaluate(ev_run, ev_split, cfg);
            std::cout << metrics::to_json(r.report) << '\n';
        } else if (*de) {
            auto run = load_run(de_run);
            Tensor feats;
            std::string id;
            if (!de_features.empty()) {
                auto f = read_feature_file(de_features);
                feats = f.features;
                id = f.case_id;
            } else if (!de_case.empty()) {
                for (const auto& c : read_dataset(run.cfg.dataset)) {
                    if (c.id == de_case) {
                        feats = load_features(c).features;
                        id = c.id;
                    }
                }
                if (!feats.defined()) throw std::runtime_error("case '" + de_case + "' not in " + run.cfg.dataset.string());
            } else {
                throw ConfigError("decode needs --features or --case");
            }
            const auto g = run.model.generate_greedy(feats);
            nlohmann::ordered_json j;
            j["case_id"] = id;
            j["report"] = run.vocab.decode(g.report);
            auto slots = nlohmann::ordered_json::array();
            for (std::size_t k = 0; k + 2 < g.graph_tokens.size(); k += 3) {
                slots.push_back({run.vocab.token(g.graph_tokens[k]), run.vocab.token(g.graph_tokens[k + 1]),
                                 run.vocab.token(g.graph_tokens[k + 2])});
            }
            j["slot_triples"] = std::move(slots);
            std::cout << j.dump() << '\n';
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
