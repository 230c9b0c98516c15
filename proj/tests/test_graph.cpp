#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "cgt/graph.hpp"
#include "cgt/text.hpp"

using namespace cgt;
using namespace cgt::text;

namespace {

const char* kHedgedSentence =
    "Spotted obscured fluorescence (hemorrhage?) was seen at the inferior edge of the macular arch ring during left "
    "eye imaging.";

std::vector<std::string> surfaces(const std::vector<Token>& ts) {
    std::vector<std::string> out;
    for (const auto& t : ts) out.push_back(t.surface);
    return out;
}

std::vector<Token> prepared(std::string_view s) {
    auto ts = tokenize(s);
    pos_tag(ts);
    lemmatize(ts);
    return ts;
}

ExtractionResources shipped() { return load_resources(CGT_DATA_DIR "/dictionary.txt", CGT_DATA_DIR "/relations.txt"); }

ExtractionResources small(std::vector<std::string> dict, std::set<std::string> rels) {
    return {TermDictionary(dict), std::move(rels)};
}

}  // namespace

TEST_CASE("tokenize") {
    CHECK(surfaces(tokenize("Spotted obscured fluorescence (hemorrhage?)")) ==
          std::vector<std::string>{"spotted", "obscured", "fluorescence", "(", "hemorrhage", "?", ")"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("   \n\t").empty());
    CHECK(surfaces(tokenize("macular arch ring.")) == std::vector<std::string>{"macular", "arch", "ring", "."});
    CHECK(surfaces(tokenize("late-phase leakage of 1.5 dd")) ==
          std::vector<std::string>{"late-phase", "leakage", "of", "1.5", "dd"});
    CHECK(surfaces(tokenize("黄斑区渗漏。荧光")).size() == 3);
    const auto ts = tokenize("A (b)");
    CHECK(ts[1].begin == 2);
    CHECK(ts[1].end == 3);
}

TEST_CASE("part-of-speech tags") {
    CHECK(tag_word("seen") == Pos::Verb);
    CHECK(tag_word(".") == Pos::Punct);
    CHECK(tag_word("fluorescence") == Pos::Noun);
    CHECK(tag_word("zzqx") == Pos::Other);
    auto ts = tokenize("the leakage ;");
    pos_tag(ts);
    CHECK(ts[0].pos == Pos::Det);
    CHECK(ts[1].pos == Pos::Noun);
    CHECK(ts[2].pos == Pos::Punct);
}

TEST_CASE("lemmatize") {
    CHECK(lemmatize("was", tag_word("was")) == "is");
    CHECK(lemmatize("is", tag_word("is")) == "is");
    CHECK(lemmatize("spotted", tag_word("spotted")) == "spot");
    CHECK(lemmatize("the", Pos::Det) == "the");
    CHECK(lemmatize("vessels", Pos::Noun) == "vessel");
    CHECK(lemmatize("stained", Pos::Verb) == "stain");
}

TEST_CASE("sentence splitting") {
    CHECK(split_sentences(prepared("a b. c d.")).size() == 2);
    const auto one = split_sentences(prepared("a b c"));
    REQUIRE(one.size() == 1);
    CHECK(one[0].end == 3);
    CHECK(split_sentences(prepared("leakage near disc; edema under fovea; drusen within retina")).size() == 3);
    CHECK(split_sentences(prepared("渗漏。水肿；")).size() == 2);
    CHECK(split_sentences({}).empty());
}

TEST_CASE("entity recognition") {
    SUBCASE("dictionary term") {
        const auto ts = prepared("macular arch ring");
        const auto ms = recognize_entities(ts, {0, ts.size()}, TermDictionary({"macular"}));
        bool found = false;
        for (const auto& m : ms) found |= m.term == "macular" && m.from_dictionary;
        CHECK(found);
    }
    SUBCASE("empty dictionary falls back to every noun") {
        const auto ts = prepared("the leakage and the fluorescence");
        const auto ms = recognize_entities(ts, {0, ts.size()}, TermDictionary{});
        REQUIRE(ms.size() == 2);
        CHECK(ms[0].term == "leakage");
        CHECK(ms[1].term == "fluorescence");
    }
    SUBCASE("longest overlapping dictionary term wins") {
        const auto ts = prepared("optic disc edema");
        const auto ms = recognize_entities(ts, {0, ts.size()}, TermDictionary({"disc", "optic disc", "disc edema x"}));
        REQUIRE(!ms.empty());
        CHECK(ms[0].term == "optic disc");
        CHECK(ms[0].end - ms[0].begin == 2);
        for (const auto& m : ms) CHECK(m.term != "disc");
    }
}

TEST_CASE("hedged example sentence") {
    const auto triples = extract_triples(kHedgedSentence, shipped());
    std::set<TermTriple> got;
    for (const auto& t : triples) got.insert(t.triple);
    CHECK(got == std::set<TermTriple>{{"fluorescence", "seen", "macular"}, {"hemorrhage", "seen", "macular"}});

    const auto g = build_clinical_graph({{"r1", "train", kHedgedSentence}}, shipped());
    CHECK(graph_stats(g) == GraphStats{3, 1, 2});
}

TEST_CASE("linking") {
    const auto res = small({}, {"near", "under"});
    std::set<TermTriple> got;
    for (const auto& t : extract_triples("Leakage near disc; edema under fovea", res)) got.insert(t.triple);
    CHECK(got == std::set<TermTriple>{{"leakage", "near", "disc"}, {"edema", "under", "fovea"}});
    CHECK(extract_triples("leakage and edema.", res).empty());
    CHECK(extract_triples("near the disc.", res).empty());
}

TEST_CASE("no triple spans a sentence boundary") {
    const std::vector<std::string> words{"leakage", "disc", "edema", "fovea", "near", "under", ".", ";", "the"};
    const auto res = small({"leakage", "disc", "edema", "fovea"}, {"near", "under"});
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        std::string s;
        const int n = 3 + static_cast<int>(rng() % 12);
        for (int i = 0; i < n; ++i) s += words[rng() % words.size()] + " ";
        const auto ts = prepared(s);
        const auto spans = split_sentences(ts);
        for (const auto& st : extract_triples(s, res)) {
            REQUIRE(st.sentence < spans.size());
            std::set<std::string> in_sentence;
            for (std::size_t k = spans[st.sentence].begin; k < spans[st.sentence].end; ++k) in_sentence.insert(ts[k].lemma);
            CHECK(in_sentence.count(st.triple.subject));
            CHECK(in_sentence.count(st.triple.relation));
            CHECK(in_sentence.count(st.triple.object));
        }
    }
}

TEST_CASE("clinical graph") {
    SUBCASE("empty corpus") { CHECK(graph_stats(build_clinical_graph({}, shipped())) == GraphStats{0, 0, 0}); }
    SUBCASE("duplicate reports change nothing") {
        const auto once = build_clinical_graph({{"a", "train", kHedgedSentence}}, shipped());
        const auto twice = build_clinical_graph({{"a", "train", kHedgedSentence}, {"b", "", kHedgedSentence}}, shipped());
        CHECK(once.triples() == twice.triples());
        CHECK(twice.occurrence_count(0) == 2);
        CHECK(twice.provenance(0)[1].report_id == "b");
    }
    SUBCASE("k copies of one triple") {
        ClinicalGraph g;
        for (int k = 0; k < 5; ++k) g.add(TermTriple{"a", "r", "b"}, {"x", 0});
        CHECK(graph_stats(g).triples == 1);
        CHECK_FALSE(g.add(TermTriple{"a", "r", "a"}, {"x", 0}));
    }
    SUBCASE("leakage guard") {
        CHECK_THROWS_AS(build_clinical_graph({{"a", "train", "x"}, {"b", "test", "y"}}, shipped()), LeakageError);
        CHECK_THROWS_AS(build_clinical_graph({{"v", "val", "y"}}, shipped()), LeakageError);
    }
    SUBCASE("count bounds hold on random graphs") {
        std::mt19937_64 rng(2);
        for (int trial = 0; trial < 50; ++trial) {
            ClinicalGraph g;
            for (int i = 0; i < 40; ++i) {
                g.add(TermTriple{"e" + std::to_string(rng() % 10), "r" + std::to_string(rng() % 4),
                                 "e" + std::to_string(rng() % 10)},
                      {"x", 0});
            }
            const auto st = graph_stats(g);
            CHECK(st.entities <= 2 * st.triples);
            CHECK(st.relations <= st.triples);
        }
    }
    SUBCASE("rebind drops unknown and special terms") {
        ClinicalGraph g;
        g.add(TermTriple{"leakage", "near", "disc"}, {"x", 0});
        g.add(TermTriple{"edema", "near", "disc"}, {"x", 0});
        g.add(TermTriple{"<unk>", "near", "disc"}, {"x", 0});
        std::size_t dropped = 0;
        const auto r = rebind(g, {"<pad>", "<sos>", "<eos>", "<unk>", "leakage", "near", "disc"}, 4, &dropped);
        CHECK(dropped == 2);
        REQUIRE(r.triples().size() == 1);
        CHECK(r.triples()[0] == Triple{4, 5, 6});
    }
}

TEST_CASE("graph TSV round trip, hashing and report reading") {
    const auto dir = std::filesystem::temp_directory_path() / "cgt_test_graph";
    std::filesystem::create_directories(dir);
    const auto g = build_clinical_graph({{"a", "train", kHedgedSentence}, {"b", "train", kHedgedSentence}}, shipped());
    write_graph_tsv(g, dir / "g.tsv");
    const auto back = read_graph_tsv(dir / "g.tsv");
    REQUIRE(back.triples().size() == g.triples().size());
    for (std::size_t i = 0; i < g.triples().size(); ++i) {
        CHECK(back.to_terms(back.triples()[i]) == g.to_terms(g.triples()[i]));
        CHECK(back.occurrence_count(i) == 2);
    }
    CHECK(corpus_hash({{"a", "train", "x"}}) == corpus_hash({{"a", "train", "x"}}));
    CHECK(corpus_hash({{"a", "train", "x"}}) != corpus_hash({{"a", "train", "y"}}));
    {
        std::ofstream out(dir / "r.jsonl");
        out << R"({"id": "r1", "split": "train", "report_text": "leakage near disc."})" << '\n';
        out << R"({"id": "r2", "report_text": "edema."})" << '\n';
    }
    const auto rs = read_reports_jsonl(dir / "r.jsonl");
    REQUIRE(rs.size() == 2);
    CHECK(rs[0].split == "train");
    CHECK(rs[1].split.empty());
    CHECK(rs[1].text == "edema.");
    std::filesystem::remove_all(dir);
}

TEST_CASE("extraction is idempotent over exported text") {
    const auto res = shipped();
    const auto g = build_clinical_graph({{"a", "train", kHedgedSentence}}, res);
    std::string exported;
    for (const auto& t : g.triples()) {
        const auto tt = g.to_terms(t);
        exported += tt.subject + " " + tt.relation + " " + tt.object + ". ";
    }
    const auto g2 = build_clinical_graph({{"a", "train", kHedgedSentence}, {"e", "train", exported}}, res);
    CHECK(graph_stats(g2) == graph_stats(g));
}
