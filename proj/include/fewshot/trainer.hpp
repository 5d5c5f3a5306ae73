#pragma once

#include "fewshot/common.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/label_adapter.hpp"
#include "fewshot/protonet.hpp"
#include "fewshot/qda.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fewshot::trainer {

using json = nlohmann::ordered_json;

/// Where episodes come from: generated Gaussian tasks or a labeled corpus.
struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "corpus"
    int dim = 16;
    double class_center_scale = 1.0;
    double intra_class_stddev = 0.5;
    std::string data_path;
    std::string split_path;
    std::string word_vectors;
    std::string oov_policy = "skip";
    std::uint64_t oov_seed = 0;
};

struct TrainConfig {
    int n_way = 5;
    int k_shot = 1;
    int m_query = 25;
    int r = 10;
    int epochs = 100;
    int episodes_train = 100;
    int episodes_val = 100;
    int episodes_test = 1000;
    double learning_rate = 1e-3;
    int warmup_steps = 100;
    double weight_decay = 0.1;
    double dropout = 0.1;
    int patience = 20;
    std::uint64_t seed = 0;
    double ot_epsilon = 0.05;  // relative to the mean cost of each solve
    double ot_tol = 1e-6;
    int ot_max_iter = 1000;
    std::string qda_projection = "retrieved_queries";
    int dim = 0;  // 0: take the data's embedding width
    int heads = 4;
    bool use_scaling = true;
    bool identity_init = true;
    bool residual = false;
    bool layer_norm = false;
    bool bypass_adapter = false;
    bool bypass_qda = false;
    DataConfig data;

    void validate() const;
    bool qda_enabled() const { return !bypass_qda && r > 0; }
    /// "full", "qda-off", "la-off" or "pn".
    std::string variant() const;
    qda::OtSettings ot_settings() const;
    adapter::AdapterConfig adapter_config(int data_dim) const;
};

json config_to_json(const TrainConfig& config);
/// Unknown keys are rejected.
TrainConfig config_from_json(const json& j);
TrainConfig load_config(const std::string& path);
/// Applies "dotted.key=value" overrides; every key must already exist.
TrainConfig apply_overrides(const TrainConfig& config, const std::vector<std::string>& overrides);

struct OptimizerState {
    adapter::ParamTensors first_moment;
    adapter::ParamTensors second_moment;
    long step = 0;

    static OptimizerState for_params(const adapter::AdapterParams& params);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One AdamW update of a flat parameter block. `step` is the 1-based step
/// used for bias correction.
void adamw_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                  std::span<double> v, long step, double lr, double weight_decay);

/// AdamW over every adapter tensor; increments state.step first.
void adamw_step(adapter::AdapterParams& params, const adapter::ParamTensors& grads, OptimizerState& state,
                double lr, double weight_decay);

/// Linear warmup from 0 to base_lr over warmup_steps, then constant.
double lr_schedule(long step, int warmup_steps, double base_lr);

struct EpisodeResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<int> predictions;
    std::optional<adapter::ParamTensors> gradients;
    std::vector<qda::PrototypeWeights> prototype_weights;
    protonet::PrototypeSet prototypes;
};

/// Adapter -> prototypes -> classifier on one episode. Gradients only in
/// train mode, with the transport plans held fixed. Passing `frozen` reuses
/// prototype combination weights from an earlier call instead of solving OT.
EpisodeResult episode_step(const adapter::AdapterParams& params, const episodes::Episode& episode,
                           const TrainConfig& config, Rng* rng, bool train_mode,
                           const std::vector<qda::PrototypeWeights>* frozen = nullptr);

class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    /// Records one validation score; true when training should stop.
    bool update(int epoch, double score);
    int best_epoch() const noexcept { return best_epoch_; }
    double best_score() const noexcept { return best_; }

private:
    int patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int stale_ = 0;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct RunReport {
    std::string variant;
    std::vector<EpochStats> per_epoch;
    int best_epoch = 0;
    double best_val_acc = 0.0;
    int epochs_run = 0;
    bool early_stopped = false;
    double test_acc_mean = 0.0;
    double test_acc_ci95 = 0.0;
    std::vector<double> episode_accuracies;
    std::vector<std::string> failures;
    double wall_clock_seconds = 0.0;
};

/// Report JSON. Wall-clock time is left out so reruns are byte-identical.
json report_to_json(const RunReport& report);
std::string format_report_table(const RunReport& report);

struct Checkpoint {
    adapter::AdapterParams params;
    TrainConfig config;
    double best_val_acc = 0.0;
    int best_epoch = 0;
    std::string corpus_fingerprint;
    std::string split_fingerprint;
};

json checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const json& j);
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Episode sources for the three phases of a run.
struct Sources {
    std::shared_ptr<const episodes::EpisodeSource> train;
    std::shared_ptr<const episodes::EpisodeSource> valid;
    std::shared_ptr<const episodes::EpisodeSource> test;
    std::string corpus_fingerprint;
    std::string split_fingerprint;
};

/// Builds sources from config.data (synthetic spec or corpus files).
Sources make_sources(const TrainConfig& config, std::vector<std::string>* warnings = nullptr);

struct TrainHooks {
    /// Called with the last good parameters when training aborts.
    std::function<void(const Checkpoint&)> on_abort;
    std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
    Checkpoint checkpoint;
    RunReport report;
};

/// Episodic training with validation-based early stopping, then evaluation of
/// the best parameters on episodes_test test episodes.
TrainResult train(const TrainConfig& config, const Sources& sources, const TrainHooks& hooks = {},
                  int threads = 1);

struct EvalOptions {
    int threads = 1;
};

/// Mean accuracy and normal-approximation 95% half-width over test episodes.
RunReport evaluate(const Checkpoint& checkpoint, const episodes::EpisodeSource& source,
                   const TrainConfig& config, const EvalOptions& options = {});

/// Seed of the i-th test episode; shared by every variant of a config seed.
std::uint64_t test_episode_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace fewshot::trainer
