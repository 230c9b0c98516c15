#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cgt {

inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumSpecial = 4;

class ClinicalGraph;

/// Lowercased word vocabulary with [PAD]=0, [SOS]=1, [EOS]=2, [UNK]=3.
class Vocabulary {
public:
    static const std::vector<std::string>& special_tokens();

    /// Counts lowercased word tokens of the training reports, drops those
    /// seen fewer than `min_frequency` times and orders the rest by
    /// frequency (descending) then lexicographically. When a graph is given,
    /// its terms compete too, with frequency = number of extractions.
    static Vocabulary build(const std::vector<std::string>& train_reports, std::size_t min_frequency = 3,
                            const ClinicalGraph* graph = nullptr);
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    int id(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::vector<int> encode(std::string_view text) const;
    std::vector<int> encode_tokens(const std::vector<std::string>& words) const;
    /// Joins non-special tokens with single spaces.
    std::string decode(const std::vector<int>& ids) const;
    std::vector<std::string> decode_tokens(const std::vector<int>& ids) const;

    std::uint64_t hash() const;

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

}  // namespace cgt
