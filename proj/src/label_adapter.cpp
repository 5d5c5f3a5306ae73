#include "fewshot/label_adapter.hpp"

#include <cmath>

namespace fewshot::adapter {
namespace {

constexpr const char* kModule = "label_adapter";
constexpr double kLayerNormEps = 1e-5;

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

Matrix stack_input(const AdapterInput& in, int dim) {
    const int n = static_cast<int>(in.sentence.rows());
    const int labels = static_cast<int>(in.labels.rows());
    if (in.prefix.size() != dim || (n > 0 && in.sentence.cols() != dim) ||
        (labels > 0 && in.labels.cols() != dim)) {
        fail(ErrorKind::shape, "adapter input width does not match dim " + std::to_string(dim));
    }
    if (n < 1) fail(ErrorKind::shape, "adapter input needs at least one sentence vector");
    if (labels < 1) fail(ErrorKind::shape, "adapter input needs at least one label vector");
    Matrix x(1 + n + labels, dim);
    x.row(0) = in.prefix.transpose();
    x.middleRows(1, n) = in.sentence;
    x.bottomRows(labels) = in.labels;
    return x;
}

}  // namespace

ParamTensors ParamTensors::zeros_like(const ParamTensors& other) {
    ParamTensors out;
    auto zero = [](const Matrix& m) { return Matrix::Zero(m.rows(), m.cols()).eval(); };
    for (const auto& m : other.query) out.query.push_back(zero(m));
    for (const auto& m : other.key) out.key.push_back(zero(m));
    for (const auto& m : other.value) out.value.push_back(zero(m));
    out.output = zero(other.output);
    return out;
}

void ParamTensors::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
    for (std::size_t h = 0; h < query.size(); ++h) {
        const std::string prefix = "head" + std::to_string(h) + ".";
        fn(prefix + "query", query[h]);
        fn(prefix + "key", key[h]);
        fn(prefix + "value", value[h]);
    }
    fn("output", output);
}

void ParamTensors::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    for (std::size_t h = 0; h < query.size(); ++h) {
        const std::string prefix = "head" + std::to_string(h) + ".";
        fn(prefix + "query", query[h]);
        fn(prefix + "key", key[h]);
        fn(prefix + "value", value[h]);
    }
    fn("output", output);
}

std::size_t ParamTensors::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

ParamTensors& ParamTensors::operator+=(const ParamTensors& other) {
    for (std::size_t h = 0; h < query.size(); ++h) {
        query[h] += other.query[h];
        key[h] += other.key[h];
        value[h] += other.value[h];
    }
    output += other.output;
    return *this;
}

void AdapterParams::validate() const {
    const int d = config.dim;
    const int h = config.heads;
    if (d < 1 || h < 1 || d % h != 0) {
        fail(ErrorKind::config, "dim " + std::to_string(d) + " must be positive and divisible by heads " +
                                    std::to_string(h));
    }
    if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
        fail(ErrorKind::config, "dropout_rate must be in [0, 1)");
    }
    if (static_cast<int>(tensors.query.size()) != h || static_cast<int>(tensors.key.size()) != h ||
        static_cast<int>(tensors.value.size()) != h) {
        fail(ErrorKind::consistency, "per-head tensor count does not match heads");
    }
    tensors.for_each([&](const std::string& name, const Matrix& m) {
        const int cols = name == "output" ? d : d / h;
        if (m.rows() != d || m.cols() != cols) fail(ErrorKind::consistency, name + " has wrong shape");
        if (!m.allFinite()) fail(ErrorKind::numeric, name + " has non-finite entries");
    });
}

AdapterParams init_params(const AdapterConfig& config, std::uint64_t seed) {
    AdapterParams p;
    p.config = config;
    const int d = config.dim;
    if (d < 1 || config.heads < 1 || d % config.heads != 0) {
        fail(ErrorKind::config, "dim " + std::to_string(d) + " must be positive and divisible by heads " +
                                    std::to_string(config.heads));
    }
    const int dh = d / config.heads;
    Rng rng(derive_seed(seed, "adapter-init"));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    auto make = [&](int h, int cols) {
        Matrix m(d, cols);
        if (config.identity_init) {
            m.setZero();
            if (cols == d) {
                m.setIdentity();
            } else {
                for (int j = 0; j < cols; ++j) m(h * dh + j, j) = 1.0;
            }
        } else {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
        }
        return m;
    };
    for (int h = 0; h < config.heads; ++h) {
        p.tensors.query.push_back(make(h, dh));
        p.tensors.key.push_back(make(h, dh));
        p.tensors.value.push_back(make(h, dh));
    }
    p.tensors.output = make(0, d);
    return p;
}

Vector init_prefix(const wordrep::TokenSequence& sequence) {
    if (sequence.vectors.rows() < 1) fail(ErrorKind::empty_sequence, "cannot take prefix of empty sequence");
    return sequence.vectors.colwise().mean().transpose();
}

Vector adapter_forward(const AdapterParams& params, const AdapterInput& input, bool train_mode,
                       Rng* rng, AdapterCache* cache) {
    const int d = params.dim();
    const int heads = params.heads();
    const int dh = params.head_dim();
    const double p_drop = params.config.dropout_rate;
    const bool dropout = train_mode && p_drop > 0.0;
    if (dropout && rng == nullptr) fail(ErrorKind::config, "train-mode dropout requires an rng");

    Matrix x = stack_input(input, d);
    const double scale = params.config.use_scaling ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;

    Vector concat(d);
    AdapterCache local;
    AdapterCache& c = cache != nullptr ? *cache : local;
    c = AdapterCache{};
    c.dim = d;
    c.heads = heads;
    c.residual = params.config.residual;
    c.layer_norm = params.config.layer_norm;
    c.sentence_rows = static_cast<int>(input.sentence.rows());
    c.scale = scale;

    for (int h = 0; h < heads; ++h) {
        const auto hs = static_cast<std::size_t>(h);
        Vector q0 = (x.row(0) * params.tensors.query[hs]).transpose();
        Matrix k = x * params.tensors.key[hs];
        Matrix v = x * params.tensors.value[hs];
        Vector scores = scale * (k * q0);
        if (!scores.allFinite()) fail(ErrorKind::numeric, "non-finite attention scores in head " + std::to_string(h));
        const double mx = scores.maxCoeff();
        Vector w = (scores.array() - mx).exp().matrix();
        w /= w.sum();
        if (!w.allFinite()) fail(ErrorKind::numeric, "non-finite attention weights in head " + std::to_string(h));

        Vector dropped = w;
        Vector mask;
        if (dropout) {
            mask.resize(w.size());
            const double keep = 1.0 / (1.0 - p_drop);
            for (Eigen::Index j = 0; j < w.size(); ++j) mask[j] = rng->uniform01() < p_drop ? 0.0 : keep;
            dropped = w.cwiseProduct(mask);
        }
        concat.segment(h * dh, dh) = (dropped.transpose() * v).transpose();

        if (cache != nullptr) {
            c.q0.push_back(std::move(q0));
            c.k.push_back(std::move(k));
            c.v.push_back(std::move(v));
            c.weights.push_back(std::move(w));
            c.dropped.push_back(std::move(dropped));
            c.mask.push_back(std::move(mask));
        }
    }

    Vector y = (concat.transpose() * params.tensors.output).transpose();
    if (params.config.residual) y += input.prefix;
    Vector out = y;
    if (params.config.layer_norm) {
        const double mean = y.mean();
        const double var = (y.array() - mean).square().mean();
        c.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        out = (y.array() - mean).matrix() * c.inv_std;
        c.normalized = out;
    }
    if (!out.allFinite()) fail(ErrorKind::numeric, "non-finite adapter output");
    if (cache != nullptr) {
        c.x = std::move(x);
        c.concat = concat;
        c.pre_norm = y;
    }
    return out;
}

AdapterGradients adapter_backward(const AdapterParams& params, const AdapterCache& cache,
                                  const Vector& upstream) {
    const int d = params.dim();
    const int heads = params.heads();
    const int dh = params.head_dim();
    if (cache.dim != d || cache.heads != heads || static_cast<int>(cache.k.size()) != heads ||
        cache.residual != params.config.residual || cache.layer_norm != params.config.layer_norm ||
        cache.x.cols() != d) {
        fail(ErrorKind::consistency, "cache was not produced by these parameters");
    }
    if (upstream.size() != d) fail(ErrorKind::shape, "upstream gradient width mismatch");

    Vector gy = upstream;
    if (cache.layer_norm) {
        const Vector& xhat = cache.normalized;
        const double mean_g = upstream.mean();
        const double mean_gx = upstream.dot(xhat) / static_cast<double>(d);
        gy = cache.inv_std * (upstream.array() - mean_g - xhat.array() * mean_gx).matrix();
    }

    AdapterGradients g;
    const Eigen::Index len = cache.x.rows();
    Matrix gx = Matrix::Zero(len, d);
    if (cache.residual) gx.row(0) += gy.transpose();

    g.params.output = cache.concat * gy.transpose();
    const Vector gconcat = params.tensors.output * gy;

    for (int h = 0; h < heads; ++h) {
        const auto hs = static_cast<std::size_t>(h);
        const Vector go = gconcat.segment(h * dh, dh);
        const Matrix& k = cache.k[hs];
        const Matrix& v = cache.v[hs];
        const Vector& w = cache.weights[hs];

        Vector gdropped = v * go;
        Matrix gv = cache.dropped[hs] * go.transpose();
        Vector gw = cache.mask[hs].size() > 0 ? gdropped.cwiseProduct(cache.mask[hs]) : gdropped;
        const double inner = gw.dot(w);
        Vector gscores = w.cwiseProduct((gw.array() - inner).matrix());
        Vector gq0 = cache.scale * (k.transpose() * gscores);
        Matrix gk = cache.scale * (gscores * cache.q0[hs].transpose());

        g.params.query.push_back(cache.x.row(0).transpose() * gq0.transpose());
        g.params.key.push_back(cache.x.transpose() * gk);
        g.params.value.push_back(cache.x.transpose() * gv);

        gx.row(0) += (params.tensors.query[hs] * gq0).transpose();
        gx += gk * params.tensors.key[hs].transpose();
        gx += gv * params.tensors.value[hs].transpose();
    }

    g.prefix = gx.row(0).transpose();
    g.sentence = gx.middleRows(1, cache.sentence_rows);
    g.labels = gx.bottomRows(len - 1 - cache.sentence_rows);
    return g;
}

EpisodeReps represent_episode(const AdapterParams* params, const episodes::Episode& episode,
                              const RepresentOptions& options) {
    EpisodeReps reps;
    reps.bypass = options.bypass;
    if (!options.bypass && params == nullptr) fail(ErrorKind::config, "adapter parameters required");
    const int d = episode.dim();
    if (!options.bypass && params->dim() != d) {
        fail(ErrorKind::shape, "episode dim " + std::to_string(d) + " does not match adapter dim " +
                                   std::to_string(params->dim()));
    }

    auto represent = [&](const wordrep::TokenSequence& seq, AdapterCache* cache) -> Vector {
        if (seq.dim() != d) fail(ErrorKind::shape, "sample " + seq.source_id + " has mismatched dim");
        Vector prefix = init_prefix(seq);
        if (options.bypass) return prefix;
        AdapterInput in{std::move(prefix), seq.vectors, episode.label_names.vectors};
        return adapter_forward(*params, in, options.train_mode, options.rng, cache);
    };

    const bool caches = options.keep_caches && !options.bypass;
    reps.support.reserve(episode.support.size());
    if (caches) reps.support_caches.resize(episode.support.size());
    for (std::size_t c = 0; c < episode.support.size(); ++c) {
        const auto& shots = episode.support[c];
        Matrix s(static_cast<Eigen::Index>(shots.size()), d);
        if (caches) reps.support_caches[c].resize(shots.size());
        for (std::size_t j = 0; j < shots.size(); ++j) {
            s.row(static_cast<Eigen::Index>(j)) =
                represent(*shots[j], caches ? &reps.support_caches[c][j] : nullptr).transpose();
        }
        reps.support.push_back(std::move(s));
    }
    reps.query.resize(static_cast<Eigen::Index>(episode.query.size()), d);
    if (caches) reps.query_caches.resize(episode.query.size());
    for (std::size_t i = 0; i < episode.query.size(); ++i) {
        reps.query.row(static_cast<Eigen::Index>(i)) =
            represent(*episode.query[i], caches ? &reps.query_caches[i] : nullptr).transpose();
    }
    return reps;
}

ParamTensors backward_episode(const AdapterParams& params, const EpisodeReps& reps,
                              const std::vector<Matrix>& support_grad, const Matrix& query_grad) {
    if (reps.bypass) fail(ErrorKind::consistency, "bypassed representations carry no adapter gradient");
    if (reps.support_caches.size() != reps.support.size() ||
        reps.query_caches.size() != static_cast<std::size_t>(reps.query.rows())) {
        fail(ErrorKind::consistency, "representations were computed without caches");
    }
    ParamTensors total = ParamTensors::zeros_like(params.tensors);
    for (std::size_t c = 0; c < reps.support.size(); ++c) {
        for (std::size_t j = 0; j < reps.support_caches[c].size(); ++j) {
            const Vector g = support_grad[c].row(static_cast<Eigen::Index>(j)).transpose();
            if (g.isZero(0.0)) continue;
            total += adapter_backward(params, reps.support_caches[c][j], g).params;
        }
    }
    for (std::size_t i = 0; i < reps.query_caches.size(); ++i) {
        const Vector g = query_grad.row(static_cast<Eigen::Index>(i)).transpose();
        if (g.isZero(0.0)) continue;
        total += adapter_backward(params, reps.query_caches[i], g).params;
    }
    return total;
}

}  // namespace fewshot::adapter
