#include "cgt/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "cgt/graph.hpp"
#include "cgt/text.hpp"

namespace cgt {

const std::vector<std::string>& Vocabulary::special_tokens() {
    static const std::vector<std::string> s = {"[PAD]", "[SOS]", "[EOS]", "[UNK]"};
    return s;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& train_reports, std::size_t min_frequency,
                             const ClinicalGraph* graph) {
    if (train_reports.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& r : train_reports) {
        for (auto& w : text::word_tokens(r)) ++freq[w];
    }
    if (graph) {
        std::unordered_map<std::string, std::size_t> extracted;
        for (std::size_t i = 0; i < graph->triples().size(); ++i) {
            const auto t = graph->to_terms(graph->triples()[i]);
            const auto n = graph->occurrence_count(i);
            extracted[t.subject] += n;
            extracted[t.relation] += n;
            extracted[t.object] += n;
        }
        for (const auto& [term, n] : extracted) freq[term] = std::max(freq[term], n);
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [w, n] : freq) {
        if (n >= min_frequency && std::find(special_tokens().begin(), special_tokens().end(), w) == special_tokens().end()) {
            kept.emplace_back(w, n);
        }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::vector<std::string> tokens = special_tokens();
    for (auto& [w, _] : kept) tokens.push_back(w);
    return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < static_cast<std::size_t>(kNumSpecial) ||
        !std::equal(special_tokens().begin(), special_tokens().end(), tokens.begin())) {
        throw std::invalid_argument("vocabulary must start with [PAD], [SOS], [EOS], [UNK]");
    }
    Vocabulary v;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) {
            throw std::invalid_argument("duplicate vocabulary token '" + tokens[i] + "'");
        }
    }
    v.tokens_ = std::move(tokens);
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const { return encode_tokens(text::word_tokens(text)); }

std::vector<int> Vocabulary::encode_tokens(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
}

std::vector<std::string> Vocabulary::decode_tokens(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) {
        if (i == kPad || i == kSos || i == kEos) continue;
        out.push_back(token(i));
    }
    return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (const auto& w : decode_tokens(ids)) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
        for (unsigned char c : t) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0x0a;
        h *= 1099511628211ULL;
    }
    return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

}  // namespace cgt
