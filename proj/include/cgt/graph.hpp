#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cgt/text.hpp"

namespace cgt {

/// (subject, relation, object) as ids into a term table.
struct Triple {
    int subject = 0;
    int relation = 0;
    int object = 0;

    auto operator<=>(const Triple&) const = default;
};

struct Provenance {
    std::string report_id;
    std::size_t sentence = 0;
};

class LeakageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Deduplicated triple store over a term table. Triple order is first-seen.
///
/// The term table may be seeded with an external token list (a Vocabulary),
/// in which case triple ids coincide with that list's ids.
class ClinicalGraph {
public:
    ClinicalGraph() = default;
    explicit ClinicalGraph(std::vector<std::string> seed_terms, int first_usable_id = 0);

    int intern(const std::string& term);
    std::optional<int> find_term(const std::string& term) const;
    const std::string& term(int id) const { return terms_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& terms() const { return terms_; }

    /// Returns true when the triple is new. Self-loops are rejected.
    bool add(const Triple& t, const Provenance& where);
    bool add(const text::TermTriple& t, const Provenance& where);

    bool contains(const Triple& t) const { return index_.count(t) != 0; }
    const std::vector<Triple>& triples() const { return triples_; }
    const std::vector<Provenance>& provenance(std::size_t triple_index) const { return provenance_.at(triple_index); }
    std::size_t occurrence_count(std::size_t triple_index) const { return provenance_.at(triple_index).size(); }

    /// Sorted ids, derived from the triples.
    std::vector<int> entity_set() const;
    std::vector<int> relation_set() const;

    text::TermTriple to_terms(const Triple& t) const;

    bool empty() const { return triples_.empty(); }
    int first_usable_id() const { return first_usable_; }

private:
    std::vector<std::string> terms_;
    std::map<std::string, int> term_index_;
    std::vector<Triple> triples_;
    std::vector<std::vector<Provenance>> provenance_;
    std::map<Triple, std::size_t> index_;
    int first_usable_ = 0;
};

struct GraphStats {
    std::size_t entities = 0;
    std::size_t relations = 0;
    std::size_t triples = 0;

    bool operator==(const GraphStats&) const = default;
};

GraphStats graph_stats(const ClinicalGraph& g);

struct ReportRecord {
    std::string id;
    std::string split;  // empty when unknown
    std::string text;
};

/// Runs extraction over every report and merges unique triples.
/// Throws LeakageError if any report carries a split other than "train".
ClinicalGraph build_clinical_graph(const std::vector<ReportRecord>& reports, const text::ExtractionResources& res);

/// Re-expresses `g` in the id space of `tokens` (e.g. a vocabulary).
/// Triples that mention a term absent from `tokens`, or whose id is below
/// `first_usable_id` (special tokens), are dropped and counted in `dropped`.
ClinicalGraph rebind(const ClinicalGraph& g, const std::vector<std::string>& tokens, int first_usable_id,
                     std::size_t* dropped = nullptr);

/// TSV: subject \t relation \t object \t count, first-seen order.
void write_graph_tsv(const ClinicalGraph& g, const std::filesystem::path& path);
ClinicalGraph read_graph_tsv(const std::filesystem::path& path);

/// FNV-1a over ids and texts, used to record which corpus a graph/vocab came from.
std::uint64_t corpus_hash(const std::vector<ReportRecord>& reports);

std::vector<ReportRecord> read_reports_jsonl(const std::filesystem::path& path);

}  // namespace cgt
