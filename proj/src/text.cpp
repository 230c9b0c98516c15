#include "cgt/text.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace cgt::text {

const char* pos_name(Pos p) {
    switch (p) {
        case Pos::Noun: return "NOUN";
        case Pos::Verb: return "VERB";
        case Pos::Adj: return "ADJ";
        case Pos::Adp: return "ADP";
        case Pos::Det: return "DET";
        case Pos::Punct: return "PUNCT";
        case Pos::Other: return "OTHER";
    }
    return "OTHER";
}

namespace {

const std::unordered_set<std::string> kCjkPunct = {"。", "；", "，", "、", "：", "？", "！", "（", "）"};

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0; }

std::size_t utf8_len(unsigned char lead) {
    if (lead >= 0xF0) return 4;
    if (lead >= 0xE0) return 3;
    if (lead >= 0xC0) return 2;
    return 1;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

bool is_punct_token(std::string_view s) {
    if (kCjkPunct.count(std::string(s))) return true;
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::ispunct(static_cast<unsigned char>(c)); });
}

const std::unordered_map<std::string, Pos>& lexicon() {
    static const std::unordered_map<std::string, Pos> table = [] {
        std::unordered_map<std::string, Pos> t;
        for (const char* w : {"the", "a", "an", "this", "that", "these", "those", "each", "every", "no", "some", "any",
                              "both", "all", "its", "their"}) {
            t[w] = Pos::Det;
        }
        for (const char* w : {"at",    "of",     "in",     "on",     "during",  "with",    "near",   "under",
                              "around", "along", "from",   "to",     "into",    "by",      "for",    "over",
                              "above", "below",  "within", "after",  "before",  "between", "through", "across",
                              "without", "beside", "behind", "among", "outside", "inside", "beneath", "upon"}) {
            t[w] = Pos::Adp;
        }
        for (const char* w : {"is",     "was",   "were",   "are",      "am",    "be",     "been",  "being",
                              "has",    "have",  "had",    "seen",     "see",   "shown",  "show",  "appear",
                              "observe", "note", "found",  "find",     "reveal", "can",   "may",   "could",
                              "did",    "does",  "do",     "leak",     "stain", "fill",   "block", "become",
                              "became", "remain", "remains", "exist", "exists", "suggest", "indicate"}) {
            t[w] = Pos::Verb;
        }
        for (const char* w : {"eye",     "edge",    "arch",    "ring",    "disc",   "disk",     "vessel",  "vessels",
                              "retina",  "fovea",   "choroid", "laser",   "hemorrhage", "exudate", "lesion", "lesions",
                              "area",    "areas",   "patch",   "patches", "region", "spot",     "spots",   "dye",
                              "phase",   "artery",  "vein",    "veins",   "arteries", "capillary", "capillaries",
                              "microaneurysm", "microaneurysms", "fluorescein", "macula", "periphery", "optic",
                              "pole",    "drusen",  "scar",    "edema",   "membrane", "nerve",    "head",    "time"}) {
            t[w] = Pos::Noun;
        }
        for (const char* w : {"left",     "right",    "inferior", "superior", "temporal", "nasal",   "macular",
                              "small",    "large",    "patchy",   "multiple", "scattered", "strong", "weak",
                              "late",     "early",    "obvious",  "normal",   "abnormal", "high",    "low",
                              "slight",   "mild",     "diffuse",  "focal",    "peripheral", "central", "posterior",
                              "anterior", "visible",  "clear",    "uneven",   "punctate", "flaky",   "dark",
                              "bright",   "hyper",    "hypo",     "local",    "whole",    "entire"}) {
            t[w] = Pos::Adj;
        }
        for (const char* w : {"and", "or", "but", "not", "also", "still", "then", "there", "as", "than", "very"}) {
            t[w] = Pos::Other;
        }
        return t;
    }();
    return table;
}

const std::unordered_map<std::string, std::string>& lemma_exceptions() {
    // The be-forms collapse to "is", not "be"; see README.
    static const std::unordered_map<std::string, std::string> table = {
        {"was", "is"},     {"were", "is"},  {"are", "is"},   {"am", "is"},   {"been", "is"},  {"being", "is"},
        {"be", "is"},      {"has", "have"}, {"had", "have"}, {"does", "do"}, {"did", "do"},   {"shown", "show"},
        {"found", "find"}, {"became", "become"}, {"vessels", "vessel"}, {"lesions", "lesion"},
        {"spots", "spot"}, {"patches", "patch"}, {"veins", "vein"}, {"arteries", "artery"}, {"areas", "area"},
        {"capillaries", "capillary"}, {"microaneurysms", "microaneurysm"}, {"drusen", "drusen"},
        {"this", "this"},  {"its", "its"},  {"as", "as"},    {"is", "is"}};
    return table;
}

// After stripping -ed/-ing: undouble a final consonant pair or restore a silent e.
std::string repair_verb_stem(std::string stem) {
    const std::size_t n = stem.size();
    if (n < 2) return stem;
    const char last = stem[n - 1];
    if (last == stem[n - 2] && !is_vowel(last) && last != 'l' && last != 's' && last != 'z') {
        stem.pop_back();
        return stem;
    }
    if (last == 'v' || last == 'c') return stem + "e";
    if (n >= 3 && !is_vowel(last) && last != 'w' && last != 'x' && last != 'y' && is_vowel(stem[n - 2]) &&
        !is_vowel(stem[n - 3])) {
        return stem + "e";
    }
    return stem;
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (c >= 0x80) {
            const std::size_t len = std::min(utf8_len(c), n - i);
            const std::string piece(text.substr(i, len));
            if (kCjkPunct.count(piece)) {
                tokens.push_back({piece, "", Pos::Other, i, i + len});
                i += len;
                continue;
            }
        }
        if (is_word_byte(c) || c >= 0x80) {
            const std::size_t start = i;
            while (i < n) {
                const auto ch = static_cast<unsigned char>(text[i]);
                if (ch >= 0x80) {
                    const std::size_t len = std::min(utf8_len(ch), n - i);
                    if (kCjkPunct.count(std::string(text.substr(i, len)))) break;
                    i += len;
                    continue;
                }
                if (is_word_byte(ch)) {
                    ++i;
                    continue;
                }
                const bool joiner = ch == '-' || ch == '\'';
                const bool decimal = ch == '.' && i > start && std::isdigit(static_cast<unsigned char>(text[i - 1]));
                if ((joiner || decimal) && i + 1 < n) {
                    const auto next = static_cast<unsigned char>(text[i + 1]);
                    if (decimal ? std::isdigit(next) != 0 : is_word_byte(next)) {
                        ++i;
                        continue;
                    }
                }
                break;
            }
            tokens.push_back({lower(text.substr(start, i - start)), "", Pos::Other, start, i});
            continue;
        }
        tokens.push_back({std::string(1, static_cast<char>(c)), "", Pos::Other, i, i + 1});
        ++i;
    }
    return tokens;
}

Pos tag_word(std::string_view word) {
    if (word.empty()) return Pos::Other;
    if (is_punct_token(word)) return Pos::Punct;
    const auto& lex = lexicon();
    if (auto it = lex.find(std::string(word)); it != lex.end()) return it->second;
    if (std::isdigit(static_cast<unsigned char>(word[0]))) return Pos::Other;
    if (word.size() >= 5) {
        for (const char* s : {"ence", "ance", "tion", "sion", "ment", "ness", "ity", "ism", "age", "ure", "osis"}) {
            if (ends_with(word, s)) return Pos::Noun;
        }
        for (const char* s : {"ed", "ing", "ize", "ise"}) {
            if (ends_with(word, s)) return Pos::Verb;
        }
        for (const char* s : {"al", "ous", "ive", "ic", "ar", "ful", "less", "able", "ible"}) {
            if (ends_with(word, s)) return Pos::Adj;
        }
    }
    return Pos::Other;
}

void pos_tag(std::vector<Token>& tokens) {
    for (auto& t : tokens) t.pos = tag_word(t.surface);
}

std::string lemmatize(std::string_view word, Pos pos) {
    const std::string w = lower(word);
    const auto& ex = lemma_exceptions();
    if (auto it = ex.find(w); it != ex.end()) return it->second;
    if (pos != Pos::Noun && pos != Pos::Verb && pos != Pos::Adj) return w;
    if (w.size() <= 3) return w;

    if (pos == Pos::Noun || pos == Pos::Verb) {
        if (ends_with(w, "ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
        if (ends_with(w, "sses") || ends_with(w, "xes") || ends_with(w, "ches") || ends_with(w, "shes")) {
            return w.substr(0, w.size() - 2);
        }
        if (ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") && !ends_with(w, "is")) {
            return w.substr(0, w.size() - 1);
        }
    }
    if (pos == Pos::Verb || pos == Pos::Adj) {
        if (ends_with(w, "ied") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
        if (ends_with(w, "ed") && w.size() > 4) return repair_verb_stem(w.substr(0, w.size() - 2));
        if (ends_with(w, "ing") && w.size() > 5) return repair_verb_stem(w.substr(0, w.size() - 3));
    }
    return w;
}

void lemmatize(std::vector<Token>& tokens) {
    for (auto& t : tokens) t.lemma = lemmatize(t.surface, t.pos);
}

bool is_sentence_terminator(std::string_view s) { return s == "." || s == ";" || s == "。" || s == "；"; }

std::vector<SentenceSpan> split_sentences(const std::vector<Token>& tokens) {
    std::vector<SentenceSpan> spans;
    std::size_t start = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (is_sentence_terminator(tokens[i].surface)) {
            spans.push_back({start, i + 1});
            start = i + 1;
        }
    }
    if (start < tokens.size()) spans.push_back({start, tokens.size()});
    return spans;
}

TermDictionary::TermDictionary(const std::vector<std::string>& terms) {
    for (const auto& t : terms) add(t);
}

void TermDictionary::add(std::string_view term) {
    std::vector<std::string> words;
    std::istringstream is{std::string(term)};
    std::string w;
    while (is >> w) words.push_back(lower(w));
    if (words.empty()) return;
    longest_ = std::max(longest_, words.size());
    terms_.insert(std::move(words));
}

std::vector<std::string> TermDictionary::terms() const {
    std::vector<std::string> out;
    for (const auto& words : terms_) {
        std::string joined;
        for (const auto& w : words) {
            if (!joined.empty()) joined += ' ';
            joined += w;
        }
        out.push_back(joined);
    }
    return out;
}

namespace {

std::vector<int> paren_depth(const std::vector<Token>& tokens, SentenceSpan s) {
    std::vector<int> depth(s.end - s.begin, 0);
    int d = 0;
    for (std::size_t i = s.begin; i < s.end; ++i) {
        const auto& w = tokens[i].surface;
        if (w == "(" || w == "（") {
            depth[i - s.begin] = d;
            ++d;
            continue;
        }
        if (w == ")" || w == "）") {
            d = std::max(0, d - 1);
            depth[i - s.begin] = d;
            continue;
        }
        depth[i - s.begin] = d;
    }
    return depth;
}

bool is_relation_token(const Token& t, const std::set<std::string>& relation_words) {
    if (t.pos == Pos::Punct) return false;
    return relation_words.count(t.lemma) || relation_words.count(t.surface);
}

const std::string& relation_term(const Token& t, const std::set<std::string>& relation_words) {
    return relation_words.count(t.lemma) ? t.lemma : t.surface;
}

}  // namespace

std::vector<Mention> recognize_entities(const std::vector<Token>& tokens, SentenceSpan s,
                                        const TermDictionary& dictionary,
                                        const std::set<std::string>& relation_words) {
    std::vector<Mention> mentions;
    const auto depth = paren_depth(tokens, s);
    std::size_t i = s.begin;
    while (i < s.end) {
        std::size_t best = 0;
        const std::size_t max_len = std::min(dictionary.longest(), s.end - i);
        for (std::size_t len = max_len; len >= 1 && best == 0; --len) {
            std::vector<std::string> by_surface, by_lemma;
            for (std::size_t k = i; k < i + len; ++k) {
                by_surface.push_back(tokens[k].surface);
                by_lemma.push_back(tokens[k].lemma);
            }
            if (dictionary.contains(by_surface)) {
                best = len;
                std::string term;
                for (const auto& w : by_surface) term += (term.empty() ? "" : " ") + w;
                mentions.push_back({i, i + len, i + len - 1, term, true, depth[i - s.begin] > 0});
            } else if (dictionary.contains(by_lemma)) {
                best = len;
                std::string term;
                for (const auto& w : by_lemma) term += (term.empty() ? "" : " ") + w;
                mentions.push_back({i, i + len, i + len - 1, term, true, depth[i - s.begin] > 0});
            }
        }
        if (best > 0) {
            i += best;
            continue;
        }
        if (tokens[i].pos == Pos::Noun && !is_relation_token(tokens[i], relation_words)) {
            mentions.push_back({i, i + 1, i, tokens[i].lemma, false, depth[i - s.begin] > 0});
        }
        ++i;
    }
    return mentions;
}

std::vector<TermTriple> link_entities(const std::vector<Token>& tokens, SentenceSpan s,
                                      const std::vector<Mention>& mentions,
                                      const std::set<std::string>& relation_words) {
    std::vector<TermTriple> triples;
    auto inside_mention = [&](std::size_t t) {
        return std::any_of(mentions.begin(), mentions.end(), [t](const Mention& m) { return t >= m.begin && t < m.end; });
    };
    for (std::size_t t = s.begin; t < s.end; ++t) {
        if (!is_relation_token(tokens[t], relation_words) || inside_mention(t)) continue;

        std::vector<const Mention*> before, after;
        for (const auto& m : mentions) {
            if (m.begin < s.begin || m.end > s.end) continue;
            if (m.end <= t) before.push_back(&m);
            else if (m.begin > t) after.push_back(&m);
        }
        auto prefer_dictionary = [](std::vector<const Mention*>& pool) {
            if (std::any_of(pool.begin(), pool.end(), [](const Mention* m) { return m->from_dictionary; })) {
                std::erase_if(pool, [](const Mention* m) { return !m->from_dictionary; });
            }
        };
        prefer_dictionary(before);
        prefer_dictionary(after);

        const Mention* subject = nullptr;
        for (auto it = before.rbegin(); it != before.rend(); ++it) {
            if (!(*it)->parenthesized) {
                subject = *it;
                break;
            }
        }
        if (!subject && !before.empty()) subject = before.back();
        const Mention* object = nullptr;
        for (const Mention* m : after) {
            if (!m->parenthesized) {
                object = m;
                break;
            }
        }
        if (!object && !after.empty()) object = after.front();
        if (!subject || !object) {
            spdlog::debug("relation '{}' at token {} has fewer than two entities; no triple", tokens[t].surface, t);
            continue;
        }

        std::vector<const Mention*> subjects{subject};
        // Hedge expansion: "X (Y?) rel Z" gives Y the subject role as well.
        if (!subject->parenthesized && subject->end < t &&
            (tokens[subject->end].surface == "(" || tokens[subject->end].surface == "（")) {
            for (const Mention* m : before) {
                if (m->parenthesized && m->begin > subject->end) {
                    bool closed = false;
                    for (std::size_t k = subject->end + 1; k < m->begin; ++k) {
                        if (tokens[k].surface == ")" || tokens[k].surface == "）") closed = true;
                    }
                    if (!closed) subjects.push_back(m);
                }
            }
        }
        const std::string& rel = relation_term(tokens[t], relation_words);
        for (const Mention* subj : subjects) {
            if (subj->term == object->term) continue;
            triples.push_back({subj->term, rel, object->term});
        }
    }
    return triples;
}

std::vector<SentenceTriple> extract_triples(std::string_view report, const ExtractionResources& resources) {
    auto tokens = tokenize(report);
    pos_tag(tokens);
    lemmatize(tokens);
    std::vector<SentenceTriple> out;
    const auto sentences = split_sentences(tokens);
    for (std::size_t si = 0; si < sentences.size(); ++si) {
        const auto mentions = recognize_entities(tokens, sentences[si], resources.dictionary, resources.relation_words);
        for (auto& t : link_entities(tokens, sentences[si], mentions, resources.relation_words)) {
            out.push_back({std::move(t), si});
        }
    }
    return out;
}

std::vector<std::string> read_term_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open term file " + path);
    std::vector<std::string> terms;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || std::isspace(static_cast<unsigned char>(line.back())))) {
            line.pop_back();
        }
        std::size_t start = 0;
        while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
        line = line.substr(start);
        if (line.empty() || line[0] == '#') continue;
        terms.push_back(lower(line));
    }
    return terms;
}

ExtractionResources load_resources(const std::string& dictionary_path, const std::string& relations_path) {
    ExtractionResources r;
    if (!dictionary_path.empty()) r.dictionary = TermDictionary(read_term_file(dictionary_path));
    if (!relations_path.empty()) {
        for (auto& w : read_term_file(relations_path)) r.relation_words.insert(w);
    }
    return r;
}

std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    for (auto& t : tokenize(text)) out.push_back(std::move(t.surface));
    return out;
}

}  // namespace cgt::text
