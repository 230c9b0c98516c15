#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace cgt::text {

enum class Pos { Noun, Verb, Adj, Adp, Det, Punct, Other };

const char* pos_name(Pos p);

struct Token {
    std::string surface;  // lowercased
    std::string lemma;    // lowercased base form, filled by lemmatize
    Pos pos = Pos::Other;
    std::size_t begin = 0;  // byte offsets into the source text
    std::size_t end = 0;
};

/// Word-level tokens, lowercased. Punctuation (including multi-byte CJK
/// marks) becomes standalone tokens; "1.5" and "late-phase" stay whole.
std::vector<Token> tokenize(std::string_view text);

/// Lexicon lookup with suffix-rule fallback; unknown words are Pos::Other.
Pos tag_word(std::string_view word);
void pos_tag(std::vector<Token>& tokens);

/// Exception table first, then -s / -ed / -ing stripping for open-class tags.
std::string lemmatize(std::string_view word, Pos pos);
void lemmatize(std::vector<Token>& tokens);

bool is_sentence_terminator(std::string_view surface);

/// Half-open token ranges. A terminator closes its sentence.
struct SentenceSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};
std::vector<SentenceSpan> split_sentences(const std::vector<Token>& tokens);

/// Lowercased user-dictionary of single- and multi-word terms.
class TermDictionary {
public:
    TermDictionary() = default;
    explicit TermDictionary(const std::vector<std::string>& terms);

    void add(std::string_view term);
    bool empty() const { return terms_.empty(); }
    std::size_t size() const { return terms_.size(); }
    std::size_t longest() const { return longest_; }
    bool contains(const std::vector<std::string>& words) const { return terms_.count(words) != 0; }
    std::vector<std::string> terms() const;

private:
    std::set<std::vector<std::string>> terms_;
    std::size_t longest_ = 0;
};

struct Mention {
    std::size_t begin = 0;  // token indices (absolute)
    std::size_t end = 0;
    std::size_t head = 0;
    std::string term;
    bool from_dictionary = false;
    bool parenthesized = false;
};

/// Longest-match, non-overlapping dictionary mentions plus any NOUN token
/// not covered by the dictionary. Tokens whose lemma is a relation word are
/// never NOUN-fallback entities.
std::vector<Mention> recognize_entities(const std::vector<Token>& tokens, SentenceSpan sentence,
                                        const TermDictionary& dictionary,
                                        const std::set<std::string>& relation_words = {});

struct TermTriple {
    std::string subject;
    std::string relation;
    std::string object;

    auto operator<=>(const TermTriple&) const = default;
};

/// Pattern linker: every relation word yields (nearest preceding entity,
/// relation, nearest following entity) inside its sentence. Dictionary
/// mentions take precedence over NOUN-fallback mentions on each side. A
/// parenthesized mention directly following the subject shares its role.
std::vector<TermTriple> link_entities(const std::vector<Token>& tokens, SentenceSpan sentence,
                                      const std::vector<Mention>& mentions,
                                      const std::set<std::string>& relation_words);

struct ExtractionResources {
    TermDictionary dictionary;
    std::set<std::string> relation_words;
};

struct SentenceTriple {
    TermTriple triple;
    std::size_t sentence = 0;
};

/// All seven stages on one report.
std::vector<SentenceTriple> extract_triples(std::string_view report, const ExtractionResources& resources);

/// One term per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> read_term_file(const std::string& path);
ExtractionResources load_resources(const std::string& dictionary_path, const std::string& relations_path);

/// Lowercased surface tokens, the unit used for vocabularies and metrics.
std::vector<std::string> word_tokens(std::string_view text);

}  // namespace cgt::text
