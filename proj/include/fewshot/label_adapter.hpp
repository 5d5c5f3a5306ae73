#pragma once

#include "fewshot/common.hpp"
#include "fewshot/episodes.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fewshot::adapter {

struct AdapterConfig {
    int dim = 0;
    int heads = 4;
    double dropout_rate = 0.1;
    bool use_scaling = true;
    bool identity_init = true;
    bool residual = false;
    bool layer_norm = false;
};

/// The trainable tensors: per-head query/key/value projections (dim x dim/heads)
/// and the output projection (dim x dim). Also the shape of their gradients.
struct ParamTensors {
    std::vector<Matrix> query;
    std::vector<Matrix> key;
    std::vector<Matrix> value;
    Matrix output;

    static ParamTensors zeros_like(const ParamTensors& other);

    /// Visits every tensor with a stable name ("head0.query", ..., "output").
    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;

    std::size_t parameter_count() const;
    ParamTensors& operator+=(const ParamTensors& other);
};

struct AdapterParams {
    AdapterConfig config;
    ParamTensors tensors;

    int dim() const noexcept { return config.dim; }
    int heads() const noexcept { return config.heads; }
    int head_dim() const noexcept { return config.dim / config.heads; }

    /// Throws when shapes disagree with the config or a value is non-finite.
    void validate() const;
};

/// Identity-partitioned projections when config.identity_init, otherwise
/// N(0, 1/dim) entries drawn from `seed`.
AdapterParams init_params(const AdapterConfig& config, std::uint64_t seed = 0);

/// Rows: prefix h_0, sentence vectors h_1..h_n, label vectors u_1..u_N.
struct AdapterInput {
    Vector prefix;
    Matrix sentence;
    Matrix labels;

    int length() const noexcept {
        return 1 + static_cast<int>(sentence.rows()) + static_cast<int>(labels.rows());
    }
};

struct AdapterCache {
    int dim = 0;
    int heads = 0;
    bool residual = false;
    bool layer_norm = false;
    int sentence_rows = 0;
    Matrix x;                      // stacked input sequence
    std::vector<Vector> q0;        // position-0 query per head
    std::vector<Matrix> k;         // keys per head
    std::vector<Matrix> v;         // values per head
    std::vector<Vector> weights;   // softmax row per head, before dropout
    std::vector<Vector> dropped;   // after dropout (== weights in eval mode)
    std::vector<Vector> mask;      // dropout multipliers (empty in eval mode)
    Vector concat;                 // concatenated head outputs
    Vector pre_norm;               // after output projection (+ residual)
    Vector normalized;             // layer-norm x-hat (when enabled)
    double inv_std = 1.0;
    double scale = 1.0;
};

struct AdapterGradients {
    ParamTensors params;
    Vector prefix;
    Matrix sentence;
    Matrix labels;
};

/// Mean of the sentence's token vectors.
Vector init_prefix(const wordrep::TokenSequence& sequence);

/// v = h_0^* : the position-0 output of multi-head attention over the input.
/// `rng` is required in train mode when dropout_rate > 0.
Vector adapter_forward(const AdapterParams& params, const AdapterInput& input, bool train_mode,
                       Rng* rng, AdapterCache* cache = nullptr);

AdapterGradients adapter_backward(const AdapterParams& params, const AdapterCache& cache,
                                  const Vector& upstream);

struct EpisodeReps {
    std::vector<Matrix> support;  // per class: K x d
    Matrix query;                 // M_total x d
    std::vector<std::vector<AdapterCache>> support_caches;
    std::vector<AdapterCache> query_caches;
    bool bypass = false;
};

struct RepresentOptions {
    bool train_mode = false;
    bool bypass = false;      // v = init_prefix(sequence); params unused
    bool keep_caches = false;
    Rng* rng = nullptr;
};

/// Adapts every support and query sample of the episode with the same label
/// vectors appended. Support is class-major; queries keep sampler order.
EpisodeReps represent_episode(const AdapterParams* params, const episodes::Episode& episode,
                              const RepresentOptions& options);

/// Contracts per-sample upstream gradients through the cached forwards and
/// sums the parameter gradients. Requires keep_caches and no bypass.
ParamTensors backward_episode(const AdapterParams& params, const EpisodeReps& reps,
                              const std::vector<Matrix>& support_grad, const Matrix& query_grad);

}  // namespace fewshot::adapter
