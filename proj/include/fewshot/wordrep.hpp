#pragma once

#include "fewshot/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fewshot::wordrep {

enum class OovPolicy { skip, zero, hash_bucket };

OovPolicy parse_oov_policy(std::string_view name);
std::string_view to_string(OovPolicy policy);

inline constexpr std::size_t kHashBuckets = 1024;

/// Static word -> vector lookup with a fixed out-of-vocabulary policy.
///
/// Immutable once built; safe to share across threads.
class WordVectorTable {
public:
    WordVectorTable(int dim, OovPolicy policy, std::uint64_t oov_seed = 0);

    int dim() const noexcept { return dim_; }
    OovPolicy oov_policy() const noexcept { return policy_; }
    std::uint64_t oov_seed() const noexcept { return oov_seed_; }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Inserts or replaces; the vector must be dim() wide.
    void insert(std::string word, Vector vec);

    /// Stored vector, or nullptr when the word is not in the table.
    const Vector* find(const std::string& word) const;

    /// Vector for a token under the OOV policy; nullopt means "drop the token".
    std::optional<Vector> resolve(const std::string& word) const;

    /// The hash-bucket vector an OOV word maps to (unit norm).
    const Vector& bucket_vector(const std::string& word) const;

private:
    int dim_;
    OovPolicy policy_;
    std::uint64_t oov_seed_;
    std::unordered_map<std::string, Vector> entries_;
    std::vector<Vector> buckets_;
};

struct TokenSequence {
    std::vector<std::string> tokens;
    Matrix vectors;  // one row per token
    std::string label;
    std::string source_id;

    int dim() const noexcept { return static_cast<int>(vectors.cols()); }
    int length() const noexcept { return static_cast<int>(vectors.rows()); }
};

struct LabelNameVectors {
    std::vector<std::string> names;
    Matrix vectors;  // row c is u_c
};

/// Reads a word2vec text file: "<count> <dim>" header then "<word> <floats...>".
/// Duplicate words keep the last occurrence.
WordVectorTable load_word_vectors(const std::filesystem::path& path, OovPolicy policy,
                                  std::uint64_t oov_seed = 0);

/// Lowercases, splits on whitespace and strips leading/trailing punctuation.
std::vector<std::string> tokenize(std::string_view text);

TokenSequence embed_sequence(const WordVectorTable& table, const std::vector<std::string>& tokens,
                             std::string label, std::string source_id = {});

/// u_c is the mean of the vectors of the name's tokens.
LabelNameVectors embed_label_names(const WordVectorTable& table,
                                   const std::vector<std::string>& names);

/// Reads the precomputed JSONL format:
/// {"id": str, "label": str, "tokens": [str...], "vectors": [[float...]...]} per line.
std::vector<TokenSequence> load_precomputed(const std::filesystem::path& path);

}  // namespace fewshot::wordrep
