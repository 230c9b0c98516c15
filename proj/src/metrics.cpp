#include "cgt/metrics.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "cgt/text.hpp"
#include "json.hpp"

namespace cgt::metrics {

namespace {

using NGram = std::vector<std::string>;
using Counts = std::map<NGram, std::size_t>;

Counts ngram_counts(const Sentence& s, int n) {
    Counts c;
    if (s.size() < static_cast<std::size_t>(n)) return c;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[NGram(s.begin() + i, s.begin() + i + n)];
    return c;
}

void check_sizes(std::size_t a, std::size_t b) {
    if (a != b) throw std::invalid_argument(fmt::format("{} candidates for {} reference sets", a, b));
}

std::vector<std::vector<Sentence>> wrap(const std::vector<Sentence>& refs) {
    std::vector<std::vector<Sentence>> out;
    out.reserve(refs.size());
    for (const auto& r : refs) out.push_back({r});
    return out;
}

}  // namespace

Sentence tokens(std::string_view text) { return text::word_tokens(text); }

double bleu(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references, int n) {
    check_sizes(candidates.size(), references.size());
    if (n < 1) throw std::invalid_argument("bleu order must be >= 1");
    std::size_t cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const std::size_t c = candidates[i].size();
        cand_len += c;
        if (references[i].empty()) throw std::invalid_argument("bleu: case without references");
        std::size_t best = references[i][0].size();
        for (const auto& r : references[i]) {
            const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
            if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
        }
        ref_len += best;
    }
    if (cand_len == 0) return 0.0;

    double log_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        std::size_t matched = 0, total = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto cc = ngram_counts(candidates[i], k);
            Counts max_ref;
            for (const auto& r : references[i]) {
                for (const auto& [g, cnt] : ngram_counts(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
            }
            for (const auto& [g, cnt] : cc) {
                total += cnt;
                auto it = max_ref.find(g);
                if (it != max_ref.end()) matched += std::min(cnt, it->second);
            }
        }
        if (matched == 0 || total == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return bp * std::exp(log_sum / n);
}

double bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references, int n) {
    return bleu(candidates, wrap(references), n);
}

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const Sentence& candidate, const Sentence& reference, double beta) {
    if (reference.empty()) {
        spdlog::warn("rouge_l: empty reference scores 0");
        return 0.0;
    }
    if (candidate.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(candidate, reference));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(reference.size());
    const double b2 = beta * beta;
    return (1.0 + b2) * p * r / (r + b2 * p);
}

double rouge_l(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references) {
    check_sizes(candidates.size(), references.size());
    if (candidates.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) s += rouge_l(candidates[i], references[i]);
    return s / static_cast<double>(candidates.size());
}

std::vector<double> cider_per_case(const std::vector<Sentence>& candidates,
                                   const std::vector<std::vector<Sentence>>& references) {
    check_sizes(candidates.size(), references.size());
    const std::size_t N = references.size();
    std::vector<double> scores(N, 0.0);
    if (N == 0) return scores;
    const bool smooth = N == 1;
    if (smooth) spdlog::warn("cider: single-document corpus, using smoothed idf log((N+1)/(df+0.5))");

    for (int n = 1; n <= 4; ++n) {
        std::map<NGram, std::size_t> df;
        for (const auto& refs : references) {
            std::map<NGram, bool> seen;
            for (const auto& r : refs) {
                for (const auto& [g, _] : ngram_counts(r, n)) seen[g] = true;
            }
            for (const auto& [g, _] : seen) ++df[g];
        }
        auto idf = [&](const NGram& g) {
            auto it = df.find(g);
            const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
            if (smooth) return std::log((static_cast<double>(N) + 1.0) / (d + 0.5));
            return std::log(static_cast<double>(N) / std::max(d, 1.0));
        };
        auto vec = [&](const Sentence& s) {
            std::map<NGram, double> v;
            for (const auto& [g, c] : ngram_counts(s, n)) v[g] = static_cast<double>(c) * idf(g);
            return v;
        };
        auto norm = [](const std::map<NGram, double>& v) {
            double s = 0.0;
            for (const auto& [_, x] : v) s += x * x;
            return std::sqrt(s);
        };
        for (std::size_t i = 0; i < N; ++i) {
            const auto vc = vec(candidates[i]);
            const double nc = norm(vc);
            double acc = 0.0;
            for (const auto& r : references[i]) {
                const auto vr = vec(r);
                const double nr = norm(vr);
                if (nc == 0.0 || nr == 0.0) continue;
                double dot = 0.0;
                for (const auto& [g, x] : vc) {
                    auto it = vr.find(g);
                    if (it != vr.end()) dot += x * it->second;
                }
                acc += dot / (nc * nr);
            }
            if (!references[i].empty()) scores[i] += acc / static_cast<double>(references[i].size());
        }
    }
    for (auto& s : scores) s = s / 4.0 * 10.0;
    return scores;
}

double cider(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references) {
    const auto per = cider_per_case(candidates, references);
    if (per.empty()) return 0.0;
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

double cider(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references) {
    return cider(candidates, wrap(references));
}

double meteor(const Sentence& candidate, const Sentence& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> align(candidate.size(), kNone);
    std::vector<bool> used(reference.size(), false);
    auto stage = [&](auto key) {
        for (std::size_t i = 0; i < candidate.size(); ++i) {
            if (align[i] != kNone) continue;
            const auto k = key(candidate[i]);
            for (std::size_t j = 0; j < reference.size(); ++j) {
                if (!used[j] && key(reference[j]) == k) {
                    align[i] = j;
                    used[j] = true;
                    break;
                }
            }
        }
    };
    stage([](const std::string& w) { return w; });
    stage([](const std::string& w) { return text::lemmatize(w, text::tag_word(w)); });

    std::size_t m = 0, chunks = 0;
    std::size_t prev = kNone;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        if (align[i] == kNone) {
            prev = kNone;
            continue;
        }
        ++m;
        if (prev == kNone || align[i] != prev + 1) ++chunks;
        prev = align[i];
    }
    if (m == 0) return 0.0;
    const double p = static_cast<double>(m) / static_cast<double>(candidate.size());
    const double r = static_cast<double>(m) / static_cast<double>(reference.size());
    constexpr double alpha = 0.9;
    const double fmean = p * r / (alpha * p + (1.0 - alpha) * r);
    const double pen = 0.5 * std::pow(static_cast<double>(chunks) / static_cast<double>(m), 3.0);
    return fmean * (1.0 - pen);
}

double meteor(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references) {
    check_sizes(candidates.size(), references.size());
    if (candidates.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) s += meteor(candidates[i], references[i]);
    return s / static_cast<double>(candidates.size());
}

std::vector<RocPoint> roc_micro(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("roc_micro: scores and labels differ in length");
    const auto pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw std::domain_error("ROC undefined: labels contain a single class");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> pts{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    std::size_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        while (k < order.size() && scores[order[k]] == s) {
            (labels[order[k]] != 0 ? tp : fp) += 1;
            ++k;
        }
        pts.push_back({s, static_cast<double>(tp) / static_cast<double>(pos), static_cast<double>(fp) / static_cast<double>(neg)});
    }
    return pts;
}

double auc_trapezoid(const std::vector<RocPoint>& points) {
    if (points.size() < 2) throw std::invalid_argument("auc needs at least two ROC points");
    double a = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        a += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
    }
    return a;
}

double auc_rank(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc_rank: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < order.size();) {
        std::size_t e = k;
        while (e < order.size() && scores[order[e]] == scores[order[k]]) ++e;
        const double midrank = (static_cast<double>(k + 1) + static_cast<double>(e)) / 2.0;
        for (std::size_t t = k; t < e; ++t) {
            if (labels[order[t]] != 0) {
                rank_sum += midrank;
                ++pos;
            }
        }
        k = e;
    }
    const std::size_t neg = scores.size() - pos;
    if (pos == 0 || neg == 0) throw std::domain_error("AUC undefined: labels contain a single class");
    const double p = static_cast<double>(pos), q = static_cast<double>(neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

Report evaluate_text(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references) {
    Report r;
    for (int n = 1; n <= 4; ++n) r.bleu[n - 1] = bleu(candidates, references, n);
    r.meteor = meteor(candidates, references);
    r.rouge_l = rouge_l(candidates, references);
    r.cider = cider(candidates, references);
    return r;
}

std::string to_json(const Report& r, int indent) {
    nlohmann::ordered_json j;
    j["BLEU-1"] = r.bleu[0];
    j["BLEU-2"] = r.bleu[1];
    j["BLEU-3"] = r.bleu[2];
    j["BLEU-4"] = r.bleu[3];
    j["METEOR"] = r.meteor;
    j["ROUGE-L"] = r.rouge_l;
    j["CIDEr"] = r.cider;
    j["AUC"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json(nullptr);
    return j.dump(indent);
}

void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& points) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "threshold,fpr,tpr\n";
    for (const auto& p : points) out << fmt::format("{:.17g},{:.17g},{:.17g}\n", p.threshold, p.fpr, p.tpr);
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace cgt::metrics
