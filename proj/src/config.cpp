#include "fewshot/trainer.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fewshot::trainer {
namespace {

constexpr const char* kModule = "trainer";

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

template <typename T>
void read(const json& j, const char* key, T& out, std::set<std::string>& seen) {
    seen.insert(key);
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorKind::config, std::string("bad value for '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (!seen.contains(key)) fail(ErrorKind::config, "unknown config key '" + where + key + "'");
    }
}

json data_to_json(const DataConfig& d) {
    json j;
    j["source"] = d.source;
    j["dim"] = d.dim;
    j["class_center_scale"] = d.class_center_scale;
    j["intra_class_stddev"] = d.intra_class_stddev;
    j["data_path"] = d.data_path;
    j["split_path"] = d.split_path;
    j["word_vectors"] = d.word_vectors;
    j["oov_policy"] = d.oov_policy;
    j["oov_seed"] = d.oov_seed;
    return j;
}

DataConfig data_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorKind::config, "'data' must be an object");
    DataConfig d;
    std::set<std::string> seen;
    read(j, "source", d.source, seen);
    read(j, "dim", d.dim, seen);
    read(j, "class_center_scale", d.class_center_scale, seen);
    read(j, "intra_class_stddev", d.intra_class_stddev, seen);
    read(j, "data_path", d.data_path, seen);
    read(j, "split_path", d.split_path, seen);
    read(j, "word_vectors", d.word_vectors, seen);
    read(j, "oov_policy", d.oov_policy, seen);
    read(j, "oov_seed", d.oov_seed, seen);
    reject_unknown(j, seen, "data.");
    return d;
}

}  // namespace

void TrainConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) fail(ErrorKind::config, std::string(name) + " must be >= 1");
    };
    positive(n_way, "n_way");
    positive(k_shot, "k_shot");
    positive(m_query, "m_query");
    positive(episodes_train, "episodes_train");
    positive(episodes_val, "episodes_val");
    positive(episodes_test, "episodes_test");
    positive(patience, "patience");
    positive(heads, "heads");
    if (n_way < 2) fail(ErrorKind::config, "n_way must be >= 2");
    if (epochs < 0) fail(ErrorKind::config, "epochs must be >= 0");
    if (r < 0) fail(ErrorKind::config, "r must be >= 0");
    if (!(learning_rate > 0.0)) fail(ErrorKind::config, "learning_rate must be > 0");
    if (warmup_steps < 0) fail(ErrorKind::config, "warmup_steps must be >= 0");
    if (weight_decay < 0.0) fail(ErrorKind::config, "weight_decay must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::config, "dropout must be in [0, 1)");
    if (!(ot_epsilon > 0.0)) fail(ErrorKind::config, "ot_epsilon must be > 0");
    if (!(ot_tol > 0.0)) fail(ErrorKind::config, "ot_tol must be > 0");
    if (ot_max_iter < 1) fail(ErrorKind::config, "ot_max_iter must be >= 1");
    if (dim < 0) fail(ErrorKind::config, "dim must be >= 0");
    qda::parse_projection(qda_projection);
    if (data.source != "synthetic" && data.source != "corpus") {
        fail(ErrorKind::config, "data.source must be 'synthetic' or 'corpus'");
    }
    if (data.source == "corpus") {
        if (data.data_path.empty() || data.split_path.empty()) {
            fail(ErrorKind::config, "corpus data needs data.data_path and data.split_path");
        }
        wordrep::parse_oov_policy(data.oov_policy);
    }
}

std::string TrainConfig::variant() const {
    const bool qda = qda_enabled();
    if (bypass_adapter && !qda) return "pn";
    if (bypass_adapter) return "la-off";
    if (!qda) return "qda-off";
    return "full";
}

qda::OtSettings TrainConfig::ot_settings() const {
    qda::OtSettings s;
    s.epsilon_scale = ot_epsilon;
    s.tol = ot_tol;
    s.max_iter = ot_max_iter;
    s.projection = qda::parse_projection(qda_projection);
    return s;
}

adapter::AdapterConfig TrainConfig::adapter_config(int data_dim) const {
    adapter::AdapterConfig a;
    a.dim = dim > 0 ? dim : data_dim;
    if (dim > 0 && data_dim > 0 && dim != data_dim) {
        fail(ErrorKind::config, "config dim " + std::to_string(dim) + " does not match data dim " +
                                    std::to_string(data_dim));
    }
    a.heads = heads;
    a.dropout_rate = dropout;
    a.use_scaling = use_scaling;
    a.identity_init = identity_init;
    a.residual = residual;
    a.layer_norm = layer_norm;
    return a;
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["n_way"] = c.n_way;
    j["k_shot"] = c.k_shot;
    j["m_query"] = c.m_query;
    j["r"] = c.r;
    j["epochs"] = c.epochs;
    j["episodes_train"] = c.episodes_train;
    j["episodes_val"] = c.episodes_val;
    j["episodes_test"] = c.episodes_test;
    j["learning_rate"] = c.learning_rate;
    j["warmup_steps"] = c.warmup_steps;
    j["weight_decay"] = c.weight_decay;
    j["dropout"] = c.dropout;
    j["patience"] = c.patience;
    j["seed"] = c.seed;
    j["ot_epsilon"] = c.ot_epsilon;
    j["ot_tol"] = c.ot_tol;
    j["ot_max_iter"] = c.ot_max_iter;
    j["qda_projection"] = c.qda_projection;
    j["dim"] = c.dim;
    j["heads"] = c.heads;
    j["use_scaling"] = c.use_scaling;
    j["identity_init"] = c.identity_init;
    j["residual"] = c.residual;
    j["layer_norm"] = c.layer_norm;
    j["bypass_adapter"] = c.bypass_adapter;
    j["bypass_qda"] = c.bypass_qda;
    j["data"] = data_to_json(c.data);
    return j;
}

TrainConfig config_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorKind::config, "config must be a JSON object");
    TrainConfig c;
    std::set<std::string> seen;
    read(j, "n_way", c.n_way, seen);
    read(j, "k_shot", c.k_shot, seen);
    read(j, "m_query", c.m_query, seen);
    read(j, "r", c.r, seen);
    read(j, "epochs", c.epochs, seen);
    read(j, "episodes_train", c.episodes_train, seen);
    read(j, "episodes_val", c.episodes_val, seen);
    read(j, "episodes_test", c.episodes_test, seen);
    read(j, "learning_rate", c.learning_rate, seen);
    read(j, "warmup_steps", c.warmup_steps, seen);
    read(j, "weight_decay", c.weight_decay, seen);
    read(j, "dropout", c.dropout, seen);
    read(j, "patience", c.patience, seen);
    read(j, "seed", c.seed, seen);
    read(j, "ot_epsilon", c.ot_epsilon, seen);
    read(j, "ot_tol", c.ot_tol, seen);
    read(j, "ot_max_iter", c.ot_max_iter, seen);
    read(j, "qda_projection", c.qda_projection, seen);
    read(j, "dim", c.dim, seen);
    read(j, "heads", c.heads, seen);
    read(j, "use_scaling", c.use_scaling, seen);
    read(j, "identity_init", c.identity_init, seen);
    read(j, "residual", c.residual, seen);
    read(j, "layer_norm", c.layer_norm, seen);
    read(j, "bypass_adapter", c.bypass_adapter, seen);
    read(j, "bypass_qda", c.bypass_qda, seen);
    seen.insert("data");
    if (j.contains("data")) c.data = data_from_json(j.at("data"));
    reject_unknown(j, seen, "");
    c.validate();
    return c;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open config file " + path);
    try {
        return config_from_json(json::parse(in));
    } catch (const json::exception& e) {
        fail(ErrorKind::config, "malformed config " + path + ": " + e.what());
    }
}

TrainConfig apply_overrides(const TrainConfig& config, const std::vector<std::string>& overrides) {
    json j = config_to_json(config);
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            fail(ErrorKind::config, "override '" + item + "' is not key=value");
        }
        const std::string key = item.substr(0, eq);
        const std::string raw = item.substr(eq + 1);
        json* node = &j;
        std::stringstream path(key);
        std::string part;
        while (std::getline(path, part, '.')) {
            if (!node->is_object() || !node->contains(part)) {
                fail(ErrorKind::config, "override key '" + key + "' does not exist");
            }
            node = &(*node)[part];
        }
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;
        }
        // Keep strings as strings even when they look like numbers.
        if (node->is_string()) value = raw;
        *node = value;
    }
    return config_from_json(j);
}

}  // namespace fewshot::trainer
