#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "cgt/config.hpp"
#include "cgt/dataset.hpp"
#include "cgt/trainer.hpp"
#include "cgt/vocab.hpp"

using namespace cgt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("cgt_test_harness_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Cli {
    int code;
    std::string out;
};

Cli cli(const std::string& args) {
    const auto out = fs::temp_directory_path() / "cgt_test_harness_cli.txt";
    const std::string cmd = std::string("\"") + CGT_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
}

// Identical file names and bytes under both roots.
bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
    }
    for (const auto& e : fs::recursive_directory_iterator(b)) {
        if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
    }
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb || fa.empty()) return false;
    for (const auto& f : fa) {
        if (slurp(a / f) != slurp(b / f)) return false;
    }
    return true;
}

RunConfig small_run(const fs::path& dataset, const fs::path& out) {
    RunConfig cfg;
    for (const char* kv : {"d_model=16", "heads=2", "encoder_layers=1", "decoder_layers=1", "d_ff=32", "graph_slots=12",
                           "min_frequency=1", "batch_size=4", "eval_every=2", "lr=1e-3", "max_report_len=30"}) {
        apply_override(cfg, kv);
    }
    cfg.dataset = dataset;
    cfg.output_dir = out;
    cfg.epochs = 3;
    return cfg;
}

}  // namespace

TEST_CASE("config file parsing") {
    const auto dir = scratch("config");
    {
        std::ofstream out(dir / "run.toml");
        out << "# comment\nepochs = 7\n\n[model]\nd_model = 32   # trailing\nheads = 4\n[loss]\nlambda_tr = 0\n"
               "gamma = 2.5\nroc_score = \"probability\"\ndataset = \"data/d.jsonl\"\n";
    }
    const auto cfg = load_config(dir / "run.toml");
    CHECK(cfg.epochs == 7);
    CHECK(cfg.model.d_model == 32);
    CHECK(cfg.model.heads == 4);
    CHECK(cfg.loss.lambda_tr == 0.0);
    CHECK(cfg.loss.gamma == 2.5);
    CHECK(cfg.roc_score == RocScore::Probability);
    CHECK(cfg.dataset == dir / "data/d.jsonl");

    RunConfig c;
    apply_override(c, "lambda_tr=0");
    CHECK(c.loss.lambda_tr == 0.0);
    apply_override(c, "model.d_ff = 48");
    CHECK(c.model.d_ff == 48);
    CHECK_THROWS_AS(apply_override(c, "no_such_key=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "epochs=ten"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "epochs"), ConfigError);

    save_config(cfg, dir / "saved.toml");
    const auto back = load_config(dir / "saved.toml");
    CHECK(back.model == cfg.model);
    CHECK(back.loss.gamma == cfg.loss.gamma);
    CHECK(back.adam.lr == cfg.adam.lr);
    CHECK(back.dataset == cfg.dataset);
    CHECK(back.seed == cfg.seed);
    fs::remove_all(dir);
}

TEST_CASE("config defaults follow the training recipe") {
    RunConfig c;
    CHECK(c.adam.lr == 1e-4);
    CHECK(c.epochs == 50);
    CHECK(c.batch_size == 8);
    CHECK(c.min_frequency == 3);
    CHECK(c.loss.lambda_ce == 1.0);
    CHECK(c.loss.lambda_tr == 1.0);
    CHECK(c.loss.gamma == 1.0);
    CHECK(c.model.max_report_len == 120);
    const auto p = ModelConfig::full(3245);
    CHECK(p.d_model == 512);
    CHECK(p.heads == 8);
    CHECK(p.encoder_layers == 6);
    CHECK(p.decoder_layers == 6);
    CHECK(p.max_T == 90);
    CHECK(p.graph_slots == 84);
}

TEST_CASE("vocabulary") {
    const std::vector<std::string> reports{"Macular leakage. leakage near disc", "LEAKAGE near macular", "disc near disc"};
    const auto v = Vocabulary::build(reports, 3);
    REQUIRE(v.size() >= 4);
    CHECK(v.token(kPad) == Vocabulary::special_tokens()[0]);
    CHECK(v.id(v.token(kSos)) == kSos);
    CHECK(v.id(v.token(kEos)) == kEos);
    CHECK(v.id(v.token(kUnk)) == kUnk);
    // leakage x3, disc x3, near x3; macular x2 falls below the threshold.
    CHECK(v.size() == 4 + 3);
    CHECK_FALSE(v.contains("macular"));
    CHECK(v.encode("macular")[0] == kUnk);
    CHECK(v.token(4) == "disc");  // ties broken lexicographically
    for (std::size_t i = kNumSpecial; i < v.size(); ++i) {
        for (char ch : v.token(static_cast<int>(i))) CHECK_FALSE(std::isupper(static_cast<unsigned char>(ch)));
    }
    const auto ids = v.encode("leakage near disc");
    CHECK(v.encode(v.decode(ids)) == ids);
    CHECK(v.decode({kSos, ids[0], kPad, kEos}) == "leakage");

    const auto dir = scratch("vocab");
    v.save(dir / "v.txt");
    const auto back = Vocabulary::load(dir / "v.txt");
    CHECK(back.tokens() == v.tokens());
    CHECK(back.hash() == v.hash());
    CHECK(Vocabulary::build(reports, 1).hash() != v.hash());
    CHECK_THROWS(Vocabulary::build({}, 3));
    fs::remove_all(dir);
}

TEST_CASE("vocabulary admits graph terms by extraction count") {
    ClinicalGraph g;
    for (int k = 0; k < 3; ++k) g.add(text::TermTriple{"macular", "seen", "fovea"}, {"r" + std::to_string(k), 0});
    const auto v = Vocabulary::build({"macular seen fovea"}, 3, &g);
    CHECK(v.contains("macular"));
    CHECK(v.contains("seen"));
    CHECK(v.contains("fovea"));
}

TEST_CASE("dataset round trip") {
    const auto dir = scratch("dataset");
    std::vector<DatasetCase> cases(3);
    cases[0] = {"a", "train", "leakage near disc .", dir / "features" / "a.ffaf", std::nullopt, 40};
    cases[1] = {"b", "val", "edema .", {}, 17, std::nullopt};
    cases[2] = {"c", "test", "fovea .", {}, 3, 96};
    fs::create_directories(dir / "features");
    write_feature_file(cases[0].feature_path, synthetic_features(1, "a"));
    write_dataset(dir / "d.jsonl", cases);
    const auto back = read_dataset(dir / "d.jsonl");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].id == cases[i].id);
        CHECK(back[i].split == cases[i].split);
        CHECK(back[i].report == cases[i].report);
        CHECK(back[i].synth_seed == cases[i].synth_seed);
        CHECK(back[i].n_images == cases[i].n_images);
    }
    CHECK(fs::equivalent(back[0].feature_path, cases[0].feature_path));
    CHECK(slurp(dir / "d.jsonl").find(dir.string()) == std::string::npos);
    CHECK(load_features(back[1]).features.to_vector() == synthetic_features(17).features.to_vector());
    CHECK(load_features(back[0]).features.shape() == Shape{12, 1024});
    fs::remove_all(dir);
}

TEST_CASE("synthetic corpus") {
    SUBCASE("every report extracts back to its generating triples") {
        const auto corpus = synthesize_corpus(7, 200);
        REQUIRE(corpus.cases.size() == 200);
        text::ExtractionResources res;
        for (const auto& e : corpus.grammar.entities) res.dictionary.add(e);
        for (const auto& r : corpus.grammar.relations) res.relation_words.insert(r);
        std::size_t exact = 0;
        for (std::size_t i = 0; i < 200; ++i) {
            std::vector<text::TermTriple> got;
            for (const auto& st : text::extract_triples(corpus.cases[i].report, res)) got.push_back(st.triple);
            exact += got == corpus.triples[i];
        }
        CHECK(exact == 200);
    }
    SUBCASE("same seed, same bytes") {
        const auto a = scratch("synth_a"), b = scratch("synth_b");
        auto ca = synthesize_corpus(7, 20);
        auto cb = synthesize_corpus(7, 20);
        write_synthetic_corpus(a, ca);
        write_synthetic_corpus(b, cb);
        CHECK(same_tree(a, b));
        auto cc = synthesize_corpus(8, 20);
        CHECK(cc.cases[0].report + cc.cases[1].report != ca.cases[0].report + ca.cases[1].report);
        fs::remove_all(a);
        fs::remove_all(b);
    }
    SUBCASE("splits and features") {
        const auto c = synthesize_corpus(3, 100);
        std::size_t train = 0, val = 0, test = 0;
        for (const auto& k : c.cases) {
            train += k.split == "train";
            val += k.split == "val";
            test += k.split == "test";
        }
        CHECK(train == 70);
        CHECK(val == 10);
        CHECK(test == 20);
        for (const auto& f : c.features) CHECK(f.features.shape() == Shape{12, 1024});
        CHECK(render_report({{"a", "near", "b"}, {"c", "under", "d"}}) == "a near b and c under d .");
    }
    SUBCASE("bad requests") {
        CHECK_THROWS(synthesize_corpus(1, 0));
        Grammar g = Grammar::standard();
        g.entities = {"only"};
        CHECK_THROWS(synthesize_corpus(1, 10, g));
    }
}

TEST_CASE("restored triples partition into TP, FP and FN") {
    ClinicalGraph g({"<pad>", "<sos>", "<eos>", "<unk>", "a", "b", "c", "r"}, 4);
    g.add(Triple{4, 7, 5}, {"x", 0});
    g.add(Triple{5, 7, 6}, {"x", 0});
    g.add(Triple{4, 7, 6}, {"x", 0});
    // Slots: (a r b) hit, (a r c) in graph but not gt, (c r a) not in graph, (a r b) repeated.
    const std::vector<int> slots{4, 7, 5, 4, 7, 6, 6, 7, 4, 4, 7, 5};
    const std::vector<Triple> gt{{4, 7, 5}, {5, 7, 6}};
    const auto tags = tag_restored(slots, g, gt);
    std::map<std::string, std::set<Triple>> by;
    for (const auto& t : tags) CHECK(by[t.tag].insert(t.triple).second);
    CHECK(by["TP"] == std::set<Triple>{{4, 7, 5}});
    CHECK(by["FP"] == std::set<Triple>{{4, 7, 6}});
    CHECK(by["FN"] == std::set<Triple>{{5, 7, 6}});
    CHECK(tags.size() == 3);
}

TEST_CASE("training is deterministic and resumable") {
    const auto dir = scratch("train");
    auto corpus = synthesize_corpus(5, 16);
    const auto dataset = write_synthetic_corpus(dir / "corpus", corpus);

    const auto s1 = train(small_run(dataset, dir / "r1"));
    train(small_run(dataset, dir / "r2"));
    CHECK(s1.epochs_run == 3);
    for (const char* f : {"model.ckpt", "last.ckpt", "losses.csv", "vocab.txt", "graph.tsv", "graph.json"}) {
        INFO(f);
        REQUIRE(fs::exists(dir / "r1" / f));
        CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));
    }
    CHECK(read_loss_csv(dir / "r1" / "losses.csv").size() == 3);

    auto part = small_run(dataset, dir / "r3");
    part.epochs = 2;
    train(part);
    train(small_run(dataset, dir / "r3"), true);
    CHECK(slurp(dir / "r3" / "last.ckpt") == slurp(dir / "r1" / "last.ckpt"));
    CHECK(slurp(dir / "r3" / "losses.csv") == slurp(dir / "r1" / "losses.csv"));

    const auto e1 = evaluate(dir / "r1", "test");
    evaluate(dir / "r2", "test");
    CHECK(slurp(dir / "r1" / "metrics.json") == slurp(dir / "r2" / "metrics.json"));
    CHECK(slurp(dir / "r1" / "generations.jsonl") == slurp(dir / "r2" / "generations.jsonl"));
    const auto metrics = slurp(dir / "r1" / "metrics.json");
    for (const char* k : {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr"}) {
        CHECK(metrics.find(std::string("\"") + k + "\"") != std::string::npos);
    }
    CHECK(fs::exists(dir / "r1" / "roc.csv"));
    CHECK(e1.cases > 0);

    const auto graph = slurp(dir / "r1" / "graph.json");
    CHECK(graph.find("\"source_split\": \"train\"") != std::string::npos);
    CHECK(graph.find("train_corpus_hash") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("command line") {
    const auto dir = scratch("cli");
    SUBCASE("help and usage errors") {
        const auto top = cli("--help");
        CHECK(top.code == 0);
        for (const char* sub : {"extract-graph", "build-vocab", "synth", "train", "evaluate", "decode"}) {
            CHECK(top.out.find(sub) != std::string::npos);
            const auto h = cli(std::string(sub) + " --help");
            CHECK(h.code == 0);
            CHECK(h.out.find("--seed") != std::string::npos);
        }
        const auto tr = cli("train --help").out;
        for (const char* flag : {"--config", "--override", "--dataset", "--out", "--epochs", "--resume"}) {
            CHECK(tr.find(flag) != std::string::npos);
        }
        CHECK(cli("synth --no-such-flag").code == 2);
        CHECK(cli("train --bogus 3").code == 2);
        CHECK(cli("frobnicate").code == 2);
        CHECK(cli("").code == 2);
    }
    SUBCASE("synth twice gives identical trees") {
        const auto d = dir.string();
        CHECK(cli("synth --seed 7 --cases 50 --out \"" + d + "/a\"").code == 0);
        CHECK(cli("synth --seed 7 --cases 50 --out \"" + d + "/b\"").code == 0);
        CHECK(same_tree(dir / "a", dir / "b"));
    }
    SUBCASE("extract-graph and build-vocab") {
        {
            std::ofstream out(dir / "reports.jsonl");
            out << R"({"id": "r1", "split": "train", "report_text": "Spotted obscured fluorescence (hemorrhage?) was seen at the inferior edge of the macular arch ring during left eye imaging."})"
                << '\n';
            out << R"({"id": "r2", "split": "test", "report_text": "Leakage near disc."})" << '\n';
        }
        const std::string res = std::string(" --dictionary \"") + CGT_DATA_DIR + "/dictionary.txt\" --relations \"" +
                                CGT_DATA_DIR + "/relations.txt\"";
        const auto in = (dir / "reports.jsonl").string(), tsv = (dir / "graph.tsv").string();
        CHECK(cli("extract-graph --in \"" + in + "\" --out \"" + tsv + "\"" + res).code == 1);  // test report present
        const auto ok = cli("extract-graph --train-only --in \"" + in + "\" --out \"" + tsv + "\"" + res);
        CHECK(ok.code == 0);
        CHECK(ok.out.find("3 entities, 1 relations, 2 triples") != std::string::npos);
        const auto manifest = slurp(dir / "graph.json");
        CHECK(manifest.find("\"triples\": 2") != std::string::npos);
        CHECK(read_graph_tsv(dir / "graph.tsv").triples().size() == 2);
        const auto v = cli("build-vocab --train-only --min-frequency 1 --in \"" + in + "\" --out \"" +
                           (dir / "vocab.txt").string() + "\"");
        CHECK(v.code == 0);
        CHECK(Vocabulary::load(dir / "vocab.txt").contains("fluorescence"));
        CHECK_FALSE(Vocabulary::load(dir / "vocab.txt").contains("leakage"));
    }
    SUBCASE("train with an override, evaluate, decode") {
        const auto d = dir.string();
        REQUIRE(cli("synth --seed 2 --cases 12 --out \"" + d + "/c\"").code == 0);
        {
            std::ofstream out(dir / "run.toml");
            out << "d_model = 16\nheads = 2\nencoder_layers = 1\ndecoder_layers = 1\nd_ff = 32\ngraph_slots = 12\n"
                   "min_frequency = 1\nmax_report_len = 20\ndataset = \"c/dataset.jsonl\"\n";
        }
        const auto t = cli("train --config \"" + d + "/run.toml\" --override lambda_tr=0 --epochs 1 --seed 4 --out \"" + d +
                           "/run\"");
        CHECK(t.code == 0);
        CHECK(load_config(dir / "run" / "config.toml").loss.lambda_tr == 0.0);
        CHECK(load_config(dir / "run" / "config.toml").seed == 4);
        const auto e = cli("evaluate --run \"" + d + "/run\" --seed 1");
        CHECK(e.code == 0);
        CHECK(e.out.find("CIDEr") != std::string::npos);
        const auto ids = read_dataset(dir / "c" / "dataset.jsonl");
        const auto dec = cli("decode --run \"" + d + "/run\" --case " + ids[0].id);
        CHECK(dec.code == 0);
        CHECK(dec.out.find("\"slot_triples\"") != std::string::npos);
        CHECK(cli("decode --run \"" + d + "/run\" --case nope").code == 1);
        CHECK(cli("evaluate --run \"" + d + "/missing\"").code == 1);
    }
    fs::remove_all(dir);
}
