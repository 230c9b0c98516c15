#include "cgt/graph.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include "json.hpp"
#include <sstream>

namespace cgt {

ClinicalGraph::ClinicalGraph(std::vector<std::string> seed_terms, int first_usable_id)
    : terms_(std::move(seed_terms)), first_usable_(first_usable_id) {
    for (std::size_t i = 0; i < terms_.size(); ++i) term_index_.emplace(terms_[i], static_cast<int>(i));
}

int ClinicalGraph::intern(const std::string& term) {
    if (auto it = term_index_.find(term); it != term_index_.end()) return it->second;
    const int id = static_cast<int>(terms_.size());
    terms_.push_back(term);
    term_index_.emplace(term, id);
    return id;
}

std::optional<int> ClinicalGraph::find_term(const std::string& term) const {
    if (auto it = term_index_.find(term); it != term_index_.end()) return it->second;
    return std::nullopt;
}

bool ClinicalGraph::add(const Triple& t, const Provenance& where) {
    const auto n = static_cast<int>(terms_.size());
    for (int id : {t.subject, t.relation, t.object}) {
        if (id < first_usable_ || id >= n) throw std::out_of_range("triple id " + std::to_string(id) + " not a usable term");
    }
    if (t.subject == t.object) return false;
    if (auto it = index_.find(t); it != index_.end()) {
        provenance_[it->second].push_back(where);
        return false;
    }
    index_.emplace(t, triples_.size());
    triples_.push_back(t);
    provenance_.push_back({where});
    return true;
}

bool ClinicalGraph::add(const text::TermTriple& t, const Provenance& where) {
    if (t.subject == t.object) return false;
    return add(Triple{intern(t.subject), intern(t.relation), intern(t.object)}, where);
}

std::vector<int> ClinicalGraph::entity_set() const {
    std::set<int> s;
    for (const auto& t : triples_) {
        s.insert(t.subject);
        s.insert(t.object);
    }
    return {s.begin(), s.end()};
}

std::vector<int> ClinicalGraph::relation_set() const {
    std::set<int> s;
    for (const auto& t : triples_) s.insert(t.relation);
    return {s.begin(), s.end()};
}

text::TermTriple ClinicalGraph::to_terms(const Triple& t) const {
    return {term(t.subject), term(t.relation), term(t.object)};
}

GraphStats graph_stats(const ClinicalGraph& g) {
    return {g.entity_set().size(), g.relation_set().size(), g.triples().size()};
}

ClinicalGraph build_clinical_graph(const std::vector<ReportRecord>& reports, const text::ExtractionResources& res) {
    for (const auto& r : reports) {
        if (!r.split.empty() && r.split != "train") {
            throw LeakageError("report '" + r.id + "' belongs to split '" + r.split +
                               "'; the clinical graph may only be built from training reports");
        }
    }
    ClinicalGraph g;
    if (reports.empty()) {
        spdlog::warn("build_clinical_graph: empty corpus, graph is empty");
        return g;
    }
    for (const auto& r : reports) {
        for (const auto& st : text::extract_triples(r.text, res)) g.add(st.triple, {r.id, st.sentence});
    }
    return g;
}

ClinicalGraph rebind(const ClinicalGraph& g, const std::vector<std::string>& tokens, int first_usable_id,
                     std::size_t* dropped) {
    ClinicalGraph out(tokens, first_usable_id);
    std::size_t lost = 0;
    for (std::size_t i = 0; i < g.triples().size(); ++i) {
        const auto terms = g.to_terms(g.triples()[i]);
        const auto s = out.find_term(terms.subject), r = out.find_term(terms.relation), o = out.find_term(terms.object);
        if (!s || !r || !o || *s < first_usable_id || *r < first_usable_id || *o < first_usable_id) {
            ++lost;
            continue;
        }
        for (const auto& p : g.provenance(i)) out.add(Triple{*s, *r, *o}, p);
    }
    if (lost) spdlog::warn("rebind: dropped {} triple(s) with out-of-vocabulary terms", lost);
    if (dropped) *dropped = lost;
    return out;
}

void write_graph_tsv(const ClinicalGraph& g, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t i = 0; i < g.triples().size(); ++i) {
        const auto t = g.to_terms(g.triples()[i]);
        out << t.subject << '\t' << t.relation << '\t' << t.object << '\t' << g.occurrence_count(i) << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

ClinicalGraph read_graph_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open graph " + path.string());
    ClinicalGraph g;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) cols.push_back(cell);
        if (cols.size() < 3) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
        const std::size_t count = cols.size() >= 4 ? std::stoul(cols[3]) : 1;
        for (std::size_t k = 0; k < std::max<std::size_t>(count, 1); ++k) {
            g.add(text::TermTriple{cols[0], cols[1], cols[2]}, {"tsv", lineno});
        }
    }
    return g;
}

std::uint64_t corpus_hash(const std::vector<ReportRecord>& reports) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0xff;
        h *= 1099511628211ULL;
    };
    for (const auto& r : reports) {
        mix(r.id);
        mix(r.split);
        mix(r.text);
    }
    return h;
}

std::vector<ReportRecord> read_reports_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<ReportRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ReportRecord r;
        r.id = j.at("id").get<std::string>();
        r.split = j.value("split", "");
        if (j.contains("report_text")) r.text = j["report_text"].get<std::string>();
        else r.text = j.at("report").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace cgt
