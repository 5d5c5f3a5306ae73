#include "fewshot/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace fewshot::trainer {
namespace {

constexpr const char* kModule = "trainer";

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

std::span<double> flat(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<const double> flat(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

void check_arity(const episodes::Episode& episode, const TrainConfig& config) {
    if (episode.n_way != config.n_way || episode.k_shot != config.k_shot || episode.m_query != config.m_query) {
        fail(ErrorKind::consistency, "episode arity " + std::to_string(episode.n_way) + "/" +
                                         std::to_string(episode.k_shot) + "/" + std::to_string(episode.m_query) +
                                         " does not match config " + std::to_string(config.n_way) + "/" +
                                         std::to_string(config.k_shot) + "/" + std::to_string(config.m_query));
    }
}

struct Summary {
    double mean = 0.0;
    double ci95 = 0.0;
};

Summary summarize(const std::vector<double>& xs) {
    Summary s;
    if (xs.empty()) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    if (xs.size() < 2) return s;
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    s.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
    return s;
}

// Mean accuracy over episodes; failures are recorded and skipped.
struct EvalRun {
    std::vector<double> accuracies;
    std::vector<std::string> failures;
};

EvalRun run_episodes(const adapter::AdapterParams& params, const episodes::EpisodeSource& source,
                     const TrainConfig& config, int count, const std::function<std::uint64_t(int)>& seed_of,
                     int threads) {
    std::vector<std::optional<double>> acc(static_cast<std::size_t>(count));
    std::vector<std::string> errors(static_cast<std::size_t>(count));
    std::exception_ptr fatal;
    std::mutex fatal_mu;

    auto work = [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            try {
                const auto ep = source.sample(seed_of(i));
                acc[static_cast<std::size_t>(i)] = episode_step(params, ep, config, nullptr, false).accuracy;
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::sampling) {
                    std::lock_guard lock(fatal_mu);
                    if (!fatal) fatal = std::current_exception();
                    return;
                }
                errors[static_cast<std::size_t>(i)] = "episode " + std::to_string(i) + ": " + e.what();
            }
        }
    };

    const int workers = std::max(1, std::min(threads, count));
    if (workers == 1) {
        work(0, count);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            const int begin = static_cast<int>(static_cast<long>(count) * w / workers);
            const int end = static_cast<int>(static_cast<long>(count) * (w + 1) / workers);
            pool.emplace_back(work, begin, end);
        }
        for (auto& t : pool) t.join();
    }
    if (fatal) {
        try {
            std::rethrow_exception(fatal);
        } catch (const Error& e) {
            fail(ErrorKind::evaluation, std::string("cannot sample episodes: ") + e.what());
        }
    }

    EvalRun out;
    for (std::size_t i = 0; i < acc.size(); ++i) {
        if (acc[i]) out.accuracies.push_back(*acc[i]);
        else out.failures.push_back(errors[i]);
    }
    return out;
}

json tensors_to_json(const adapter::ParamTensors& t) {
    json out = json::object();
    t.for_each([&](const std::string& name, const Matrix& m) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
            rows.push_back(std::move(row));
        }
        out[name] = std::move(rows);
    });
    return out;
}

}  // namespace

// ---- optimizer ----

OptimizerState OptimizerState::for_params(const adapter::AdapterParams& params) {
    OptimizerState s;
    s.first_moment = adapter::ParamTensors::zeros_like(params.tensors);
    s.second_moment = adapter::ParamTensors::zeros_like(params.tensors);
    return s;
}

void adamw_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                  std::span<double> v, long step, double lr, double weight_decay) {
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
        fail(ErrorKind::shape, "optimizer buffers do not match parameter size");
    }
    if (step < 1) fail(ErrorKind::config, "optimizer step must be >= 1");
    if (lr < 0.0) fail(ErrorKind::config, "learning rate must be >= 0");
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g;
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g * g;
        params[i] *= 1.0 - lr * weight_decay;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
}

void adamw_step(adapter::AdapterParams& params, const adapter::ParamTensors& grads, OptimizerState& state,
                double lr, double weight_decay) {
    // Collect names and check gradients before touching anything.
    std::vector<std::string> names;
    std::vector<const Matrix*> g;
    grads.for_each([&](const std::string& name, const Matrix& m) {
        if (!m.allFinite()) fail(ErrorKind::numeric, "non-finite gradient for parameter " + name);
        names.push_back(name);
        g.push_back(&m);
    });
    std::vector<Matrix*> p, m1, m2;
    params.tensors.for_each([&](const std::string&, Matrix& m) { p.push_back(&m); });
    state.first_moment.for_each([&](const std::string&, Matrix& m) { m1.push_back(&m); });
    state.second_moment.for_each([&](const std::string&, Matrix& m) { m2.push_back(&m); });
    if (p.size() != g.size() || m1.size() != g.size() || m2.size() != g.size()) {
        fail(ErrorKind::shape, "gradient tensors do not mirror parameters");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i]->rows() != g[i]->rows() || p[i]->cols() != g[i]->cols()) {
            fail(ErrorKind::shape, "gradient shape mismatch for parameter " + names[i]);
        }
    }
    ++state.step;
    for (std::size_t i = 0; i < p.size(); ++i) {
        adamw_update(flat(*p[i]), flat(*g[i]), flat(*m1[i]), flat(*m2[i]), state.step, lr, weight_decay);
    }
}

double lr_schedule(long step, int warmup_steps, double base_lr) {
    if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(std::max(0L, step)) / static_cast<double>(warmup_steps);
}

// ---- one episode ----

EpisodeResult episode_step(const adapter::AdapterParams& params, const episodes::Episode& episode,
                           const TrainConfig& config, Rng* rng, bool train_mode,
                           const std::vector<qda::PrototypeWeights>* frozen) {
    check_arity(episode, config);
    const bool bypass = config.bypass_adapter;
    adapter::RepresentOptions opts;
    opts.train_mode = train_mode;
    opts.bypass = bypass;
    opts.keep_caches = train_mode && !bypass;
    opts.rng = rng;
    const adapter::EpisodeReps reps = adapter::represent_episode(bypass ? nullptr : &params, episode, opts);

    EpisodeResult out;
    if (frozen != nullptr) {
        out.prototype_weights = *frozen;
        out.prototypes.class_ids = episode.classes;
        out.prototypes.prototypes = qda::prototypes_from_weights(reps.support, reps.query, *frozen);
        out.prototypes.validate();
    } else {
        const int r = config.qda_enabled() ? config.r : 0;
        auto est = qda::estimate_prototypes(reps.support, reps.query, r, config.ot_settings(), episode.classes);
        out.prototypes = std::move(est.prototypes);
        for (auto& c : est.classes) out.prototype_weights.push_back(std::move(c.weights));
    }

    const auto post = protonet::class_posteriors(reps.query, out.prototypes);
    out.loss = protonet::cross_entropy(post, episode.query_labels);
    out.predictions = protonet::predict(reps.query, out.prototypes);
    out.accuracy = protonet::accuracy(out.predictions, episode.query_labels);

    if (train_mode && !bypass) {
        const auto g = protonet::classifier_backward(reps.query, out.prototypes, episode.query_labels);
        Matrix query_grad = g.queries;
        std::vector<Matrix> support_grad(reps.support.size());
        for (std::size_t c = 0; c < reps.support.size(); ++c) {
            const auto& w = out.prototype_weights[c];
            const auto gp = g.prototypes.row(static_cast<Eigen::Index>(c));
            support_grad[c] = w.support * gp;
            for (const auto& [q, wq] : w.query) query_grad.row(q) += wq * gp;
        }
        out.gradients = adapter::backward_episode(params, reps, support_grad, query_grad);
    }
    return out;
}

// ---- early stopping ----

bool EarlyStopping::update(int epoch, double score) {
    if (score > best_) {
        best_ = score;
        best_epoch_ = epoch;
        stale_ = 0;
        return false;
    }
    ++stale_;
    return stale_ >= patience_;
}

// ---- reports ----

json report_to_json(const RunReport& report) {
    json j;
    j["variant"] = report.variant;
    j["test_acc_mean"] = report.test_acc_mean;
    j["test_acc_ci95"] = report.test_acc_ci95;
    json epochs = json::array();
    for (const auto& e : report.per_epoch) {
        json row;
        row["epoch"] = e.epoch;
        row["train_loss"] = e.train_loss;
        row["train_acc"] = e.train_acc;
        row["val_acc"] = e.val_acc;
        epochs.push_back(std::move(row));
    }
    j["per_epoch"] = std::move(epochs);
    j["best_epoch"] = report.best_epoch;
    j["best_val_acc"] = report.best_val_acc;
    j["epochs_run"] = report.epochs_run;
    j["early_stopped"] = report.early_stopped;
    j["episodes_evaluated"] = report.episode_accuracies.size();
    j["episode_accuracies"] = report.episode_accuracies;
    j["failures"] = report.failures;
    return j;
}

std::string format_report_table(const RunReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "variant " << report.variant << "\n";
    if (!report.per_epoch.empty()) {
        os << std::setw(6) << "epoch" << std::setw(12) << "train_loss" << std::setw(11) << "train_acc"
           << std::setw(9) << "val_acc" << "\n";
        for (const auto& e : report.per_epoch) {
            os << std::setw(6) << e.epoch << std::setw(12) << e.train_loss << std::setw(11) << e.train_acc
               << std::setw(9) << e.val_acc << "\n";
        }
        os << "best epoch " << report.best_epoch << " (val " << report.best_val_acc << ")"
           << (report.early_stopped ? ", stopped early" : "") << "\n";
    }
    os << "test accuracy " << report.test_acc_mean << " +/- " << report.test_acc_ci95 << " over "
       << report.episode_accuracies.size() << " episodes";
    if (!report.failures.empty()) os << ", " << report.failures.size() << " failed";
    os << "\n";
    return os.str();
}

// ---- checkpoints ----

json checkpoint_to_json(const Checkpoint& ck) {
    const auto& cfg = ck.params.config;
    json j;
    j["dim"] = cfg.dim;
    j["heads"] = cfg.heads;
    j["use_scaling"] = cfg.use_scaling;
    j["matrices"] = tensors_to_json(ck.params.tensors);
    j["identity_init"] = cfg.identity_init;
    j["residual"] = cfg.residual;
    j["layer_norm"] = cfg.layer_norm;
    j["dropout_rate"] = cfg.dropout_rate;
    j["config"] = config_to_json(ck.config);
    j["best_val_acc"] = ck.best_val_acc;
    j["best_epoch"] = ck.best_epoch;
    j["corpus_fingerprint"] = ck.corpus_fingerprint;
    j["split_fingerprint"] = ck.split_fingerprint;
    return j;
}

Checkpoint checkpoint_from_json(const json& j) {
    Checkpoint ck;
    try {
        auto& cfg = ck.params.config;
        cfg.dim = j.at("dim").get<int>();
        cfg.heads = j.at("heads").get<int>();
        cfg.use_scaling = j.at("use_scaling").get<bool>();
        cfg.identity_init = j.value("identity_init", true);
        cfg.residual = j.value("residual", false);
        cfg.layer_norm = j.value("layer_norm", false);
        cfg.dropout_rate = j.value("dropout_rate", 0.0);
        if (cfg.dim < 1 || cfg.heads < 1 || cfg.dim % cfg.heads != 0) {
            fail(ErrorKind::format, "checkpoint dim/heads are inconsistent");
        }
        ck.params.tensors = adapter::init_params(cfg).tensors;
        const auto& mats = j.at("matrices");
        std::size_t seen = 0;
        ck.params.tensors.for_each([&](const std::string& name, Matrix& m) {
            if (!mats.contains(name)) fail(ErrorKind::format, "checkpoint is missing matrix " + name);
            const auto& rows = mats.at(name);
            if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != m.rows()) {
                fail(ErrorKind::format, "matrix " + name + " has the wrong row count");
            }
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                const auto& row = rows.at(static_cast<std::size_t>(r));
                if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m.cols()) {
                    fail(ErrorKind::format, "matrix " + name + " row " + std::to_string(r) + " has the wrong width");
                }
                for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
            }
            ++seen;
        });
        if (seen != mats.size()) fail(ErrorKind::format, "checkpoint has unexpected matrices");
        if (j.contains("config")) ck.config = config_from_json(j.at("config"));
        ck.best_val_acc = j.value("best_val_acc", 0.0);
        ck.best_epoch = j.value("best_epoch", 0);
        ck.corpus_fingerprint = j.value("corpus_fingerprint", std::string());
        ck.split_fingerprint = j.value("split_fingerprint", std::string());
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string("malformed checkpoint: ") + e.what());
    }
    ck.params.validate();
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    out << checkpoint_to_json(checkpoint).dump(1) << "\n";
    if (!out) fail(ErrorKind::io, "failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::format, "malformed checkpoint " + path + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

// ---- sources ----

Sources make_sources(const TrainConfig& config, std::vector<std::string>* warnings) {
    Sources s;
    if (config.data.source == "synthetic") {
        episodes::SyntheticSpec spec;
        spec.n_way = config.n_way;
        spec.k_shot = config.k_shot;
        spec.m_query = config.m_query;
        spec.dim = config.data.dim;
        spec.class_center_scale = config.data.class_center_scale;
        spec.intra_class_stddev = config.data.intra_class_stddev;
        spec.seed = config.seed;
        auto src = std::make_shared<const episodes::SyntheticSource>(spec);
        s.train = s.valid = s.test = src;
        s.corpus_fingerprint = hex64(src->fingerprint());
        return s;
    }

    std::optional<wordrep::WordVectorTable> table;
    if (!config.data.word_vectors.empty()) {
        table = wordrep::load_word_vectors(config.data.word_vectors,
                                           wordrep::parse_oov_policy(config.data.oov_policy), config.data.oov_seed);
    }
    episodes::LoadOptions opts;
    opts.table = table ? &*table : nullptr;
    opts.min_per_class = config.k_shot + config.m_query;
    auto corpora = episodes::load_dataset(config.data.data_path, config.data.split_path, opts);
    if (warnings != nullptr) {
        warnings->insert(warnings->end(), corpora.warnings.begin(), corpora.warnings.end());
        for (const auto& c : corpora.short_classes) warnings->push_back("class too small for episodes: " + c);
    }
    const auto make = [&](episodes::LabeledCorpus& corpus) {
        return std::make_shared<const episodes::CorpusSource>(
            std::make_shared<const episodes::LabeledCorpus>(std::move(corpus)), config.n_way, config.k_shot,
            config.m_query);
    };
    const std::uint64_t combined =
        splitmix64(corpora.train.fingerprint ^ splitmix64(corpora.valid.fingerprint ^ splitmix64(corpora.test.fingerprint)));
    s.split_fingerprint = hex64(corpora.split_fingerprint);
    s.corpus_fingerprint = hex64(combined);
    s.train = make(corpora.train);
    s.valid = make(corpora.valid);
    s.test = make(corpora.test);
    return s;
}

// ---- training ----

std::uint64_t test_episode_seed(std::uint64_t seed, std::uint64_t index) {
    return derive_seed(seed, "test", index);
}

RunReport evaluate(const Checkpoint& checkpoint, const episodes::EpisodeSource& source, const TrainConfig& config,
                   const EvalOptions& options) {
    config.validate();
    if (!config.bypass_adapter && checkpoint.params.dim() != source.dim()) {
        fail(ErrorKind::consistency, "checkpoint dim " + std::to_string(checkpoint.params.dim()) +
                                         " does not match data dim " + std::to_string(source.dim()));
    }
    const auto start = std::chrono::steady_clock::now();
    const auto run = run_episodes(
        checkpoint.params, source, config, config.episodes_test,
        [&](int i) { return test_episode_seed(config.seed, static_cast<std::uint64_t>(i)); }, options.threads);
    if (run.accuracies.empty()) fail(ErrorKind::evaluation, "every test episode failed");
    RunReport report;
    report.variant = config.variant();
    report.best_epoch = checkpoint.best_epoch;
    report.best_val_acc = checkpoint.best_val_acc;
    const auto s = summarize(run.accuracies);
    report.test_acc_mean = s.mean;
    report.test_acc_ci95 = s.ci95;
    report.episode_accuracies = run.accuracies;
    report.failures = run.failures;
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

TrainResult train(const TrainConfig& config, const Sources& sources, const TrainHooks& hooks, int threads) {
    config.validate();
    if (!sources.train || !sources.valid || !sources.test) fail(ErrorKind::config, "missing episode source");
    const auto start = std::chrono::steady_clock::now();

    Checkpoint best;
    best.config = config;
    best.params = adapter::init_params(config.adapter_config(sources.train->dim()), derive_seed(config.seed, "init"));
    best.corpus_fingerprint = sources.corpus_fingerprint;
    best.split_fingerprint = sources.split_fingerprint;

    RunReport report;
    report.variant = config.variant();

    const auto validate_epoch = [&](const adapter::AdapterParams& params, int epoch) {
        const auto run = run_episodes(
            params, *sources.valid, config, config.episodes_val,
            [&](int j) { return derive_seed(config.seed, "valid", static_cast<std::uint64_t>(epoch),
                                            static_cast<std::uint64_t>(j)); },
            threads);
        report.failures.insert(report.failures.end(), run.failures.begin(), run.failures.end());
        return summarize(run.accuracies).mean;
    };

    if (config.bypass_adapter || config.epochs == 0) {
        // Nothing to fit; the initial parameters are the result.
        best.best_val_acc = validate_epoch(best.params, 0);
        report.best_val_acc = best.best_val_acc;
    } else {
        adapter::AdapterParams params = best.params;
        OptimizerState state = OptimizerState::for_params(params);
        EarlyStopping stopper(config.patience);
        for (int epoch = 1; epoch <= config.epochs; ++epoch) {
            EpochStats stats;
            stats.epoch = epoch;
            for (int j = 0; j < config.episodes_train; ++j) {
                const auto e = static_cast<std::uint64_t>(epoch);
                const auto jj = static_cast<std::uint64_t>(j);
                try {
                    const auto ep = sources.train->sample(derive_seed(config.seed, "train", e, jj));
                    Rng rng(derive_seed(config.seed, "dropout", e, jj));
                    const auto res = episode_step(params, ep, config, &rng, true);
                    adamw_step(params, *res.gradients, state,
                               lr_schedule(state.step + 1, config.warmup_steps, config.learning_rate),
                               config.weight_decay);
                    stats.train_loss += res.loss;
                    stats.train_acc += res.accuracy;
                } catch (const Error&) {
                    if (hooks.on_abort) {
                        Checkpoint partial = best;
                        partial.params = params;
                        hooks.on_abort(partial);
                    }
                    throw;
                }
            }
            stats.train_loss /= config.episodes_train;
            stats.train_acc /= config.episodes_train;
            stats.val_acc = validate_epoch(params, epoch);
            report.per_epoch.push_back(stats);
            report.epochs_run = epoch;
            if (hooks.on_epoch) hooks.on_epoch(stats);

            const bool stop = stopper.update(epoch, stats.val_acc);
            if (stopper.best_epoch() == epoch) {
                best.params = params;
                best.best_epoch = epoch;
                best.best_val_acc = stats.val_acc;
            }
            if (stop) {
                report.early_stopped = epoch < config.epochs;
                break;
            }
        }
        report.best_epoch = best.best_epoch;
        report.best_val_acc = best.best_val_acc;
    }

    const RunReport test = evaluate(best, *sources.test, config, EvalOptions{threads});
    report.test_acc_mean = test.test_acc_mean;
    report.test_acc_ci95 = test.test_acc_ci95;
    report.episode_accuracies = test.episode_accuracies;
    report.failures.insert(report.failures.end(), test.failures.begin(), test.failures.end());
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(best), std::move(report)};
}

}  // namespace fewshot::trainer
