#pragma once

#include "fewshot/common.hpp"
#include "fewshot/wordrep.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fewshot::episodes {

using wordrep::LabelNameVectors;
using wordrep::TokenSequence;
using SamplePtr = std::shared_ptr<const TokenSequence>;

enum class Split { train, valid, test };
std::string_view to_string(Split split);

struct LabeledCorpus {
    Split split = Split::train;
    std::vector<SamplePtr> samples;
    std::map<std::string, std::vector<std::size_t>> classes;  // label -> sample indices
    std::map<std::string, Vector> label_vectors;              // label -> u
    std::uint64_t fingerprint = 0;

    int dim() const;
};

struct Episode {
    int n_way = 0;
    int k_shot = 0;
    int m_query = 0;
    std::vector<std::string> classes;          // episode class c -> label
    std::vector<std::vector<SamplePtr>> support;  // [class][shot]
    std::vector<SamplePtr> query;              // sampler order
    std::vector<int> query_labels;             // episode class index per query
    LabelNameVectors label_names;
    std::uint64_t episode_seed = 0;

    int dim() const { return static_cast<int>(label_names.vectors.cols()); }
};

struct SyntheticSpec {
    int n_way = 5;
    int k_shot = 1;
    int m_query = 25;
    int dim = 16;
    double class_center_scale = 1.0;
    double intra_class_stddev = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticEpisode {
    Episode episode;
    Matrix true_centers;  // row c is the center of episode class c
};

struct Corpora {
    LabeledCorpus train;
    LabeledCorpus valid;
    LabeledCorpus test;
    std::vector<std::string> warnings;
    std::vector<std::string> short_classes;  // fewer than min_per_class samples
    std::uint64_t split_fingerprint = 0;
};

struct LoadOptions {
    /// Embeds text rows and label names. Required for text data; for precomputed
    /// data it is only used for label names.
    const wordrep::WordVectorTable* table = nullptr;
    /// Classes with fewer samples than this are reported in Corpora::short_classes.
    int min_per_class = 0;
};

/// Loads a dataset (JSONL text/label rows or the precomputed format) and splits
/// it by the label lists in the split JSON file.
Corpora load_dataset(const std::filesystem::path& data_path,
                     const std::filesystem::path& split_path, const LoadOptions& options);

/// Builds a corpus from in-memory samples; label vectors must cover every label.
LabeledCorpus make_corpus(Split split, std::vector<SamplePtr> samples,
                          std::map<std::string, Vector> label_vectors);

/// Draws n classes (uniform, without replacement) among classes with at least
/// k+m samples, then k+m samples per class; first k to support, next m to query.
Episode sample_episode(const LabeledCorpus& corpus, int n, int k, int m, Rng& rng);

/// sample_episode with a fresh generator seeded by `episode_seed`.
Episode sample_episode_seeded(const LabeledCorpus& corpus, int n, int k, int m,
                              std::uint64_t episode_seed);

SyntheticEpisode gen_synthetic_episode(const SyntheticSpec& spec, Rng& rng);

/// Reads the label column of a dataset file and partitions its sorted labels
/// into disjoint train/valid/test lists after a seeded shuffle.
struct SplitLists {
    std::vector<std::string> train, valid, test;
};
SplitLists make_splits(const std::filesystem::path& data_path, int n_train, int n_valid,
                       int n_test, std::uint64_t seed);

/// Serializes split lists in the split-file schema.
std::string split_to_json(const SplitLists& lists);

/// Anything that can produce an episode from a seed.
class EpisodeSource {
public:
    virtual ~EpisodeSource() = default;
    virtual Episode sample(std::uint64_t episode_seed) const = 0;
    virtual int dim() const = 0;
    virtual std::uint64_t fingerprint() const = 0;
};

class CorpusSource final : public EpisodeSource {
public:
    CorpusSource(std::shared_ptr<const LabeledCorpus> corpus, int n, int k, int m);
    Episode sample(std::uint64_t episode_seed) const override;
    int dim() const override { return corpus_->dim(); }
    std::uint64_t fingerprint() const override { return corpus_->fingerprint; }
    const LabeledCorpus& corpus() const { return *corpus_; }

private:
    std::shared_ptr<const LabeledCorpus> corpus_;
    int n_, k_, m_;
};

class SyntheticSource final : public EpisodeSource {
public:
    explicit SyntheticSource(SyntheticSpec spec);
    Episode sample(std::uint64_t episode_seed) const override;
    SyntheticEpisode sample_with_centers(std::uint64_t episode_seed) const;
    int dim() const override { return spec_.dim; }
    std::uint64_t fingerprint() const override;
    const SyntheticSpec& spec() const { return spec_; }

private:
    SyntheticSpec spec_;
};

}  // namespace fewshot::episodes
