#include "fewshot/episodes.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fewshot::episodes {
namespace {

constexpr const char* kModule = "episodes";
constexpr std::string_view kLabelRowPrefix = "label:";

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

// "label", or "category" in raw news-category rows.
std::string row_label(const nlohmann::json& j, const std::string& where) {
    for (const char* key : {"label", "category"}) {
        if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
    }
    fail(ErrorKind::format, "missing label" + where);
}

std::string read_file(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, std::string("cannot open ") + what + " " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t hash_sample(const TokenSequence& s, std::uint64_t h) {
    h = fnv1a64(s.source_id, h);
    h = fnv1a64(s.label, h);
    const auto* bytes = reinterpret_cast<const char*>(s.vectors.data());
    return fnv1a64(std::string_view(bytes, static_cast<std::size_t>(s.vectors.size()) * sizeof(double)), h);
}

template <typename T>
void partial_shuffle(std::vector<T>& items, std::size_t count, Rng& rng) {
    for (std::size_t i = 0; i < count && i + 1 < items.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.index(items.size() - i));
        std::swap(items[i], items[j]);
    }
}

}  // namespace

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "train";
}

int LabeledCorpus::dim() const {
    if (!samples.empty()) return samples.front()->dim();
    if (!label_vectors.empty()) return static_cast<int>(label_vectors.begin()->second.size());
    return 0;
}

void SyntheticSpec::validate() const {
    if (n_way < 1 || k_shot < 1 || m_query < 1 || dim < 1) {
        fail(ErrorKind::config, "synthetic counts and dim must all be >= 1");
    }
    if (!(intra_class_stddev > 0.0)) fail(ErrorKind::config, "intra_class_stddev must be > 0");
    if (!(class_center_scale >= 0.0)) fail(ErrorKind::config, "class_center_scale must be >= 0");
}

LabeledCorpus make_corpus(Split split, std::vector<SamplePtr> samples,
                          std::map<std::string, Vector> label_vectors) {
    LabeledCorpus corpus;
    corpus.split = split;
    corpus.samples = std::move(samples);
    corpus.label_vectors = std::move(label_vectors);
    std::uint64_t h = fnv1a64(to_string(split));
    int dim = -1;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        const auto& s = *corpus.samples[i];
        if (dim < 0) dim = s.dim();
        if (s.dim() != dim) fail(ErrorKind::shape, "sample " + s.source_id + " has mismatched dim");
        if (!corpus.label_vectors.contains(s.label)) {
            fail(ErrorKind::label_embedding, "no label vector for label '" + s.label + "'");
        }
        corpus.classes[s.label].push_back(i);
        h = hash_sample(s, h);
    }
    for (const auto& [label, vec] : corpus.label_vectors) {
        if (dim >= 0 && vec.size() != dim) {
            fail(ErrorKind::shape, "label vector for '" + label + "' has mismatched dim");
        }
    }
    corpus.fingerprint = h;
    return corpus;
}

Corpora load_dataset(const std::filesystem::path& data_path,
                     const std::filesystem::path& split_path, const LoadOptions& options) {
    Corpora out;
    const std::string split_text = read_file(split_path, "split file");
    out.split_fingerprint = fnv1a64(split_text);

    std::map<std::string, Split> label_split;
    std::array<std::vector<std::string>, 3> lists;
    try {
        const auto j = nlohmann::json::parse(split_text);
        const std::array<std::pair<const char*, Split>, 3> keys{
            {{"train", Split::train}, {"valid", Split::valid}, {"test", Split::test}}};
        for (std::size_t s = 0; s < keys.size(); ++s) {
            const auto& [key, split] = keys[s];
            lists[s] = j.at(key).get<std::vector<std::string>>();
            for (const auto& label : lists[s]) {
                auto [it, inserted] = label_split.emplace(label, split);
                if (!inserted) {
                    if (it->second == split) {
                        fail(ErrorKind::split, "label '" + label + "' listed twice in " + key);
                    }
                    fail(ErrorKind::split, "label '" + label + "' appears in both " +
                                               std::string(to_string(it->second)) + " and " + key);
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::split, std::string("malformed split file: ") + e.what());
    }

    std::ifstream in(data_path);
    if (!in) fail(ErrorKind::io, "cannot open data file " + data_path.string());

    std::array<std::vector<SamplePtr>, 3> per_split;
    std::map<std::string, std::vector<Vector>> label_rows;
    std::map<std::string, std::size_t> dropped_labels;
    std::size_t dropped_empty = 0;
    std::uint64_t data_hash = fnv1a64("data");
    std::string line;
    long long lineno = 0;
    int dim = -1;
    while (std::getline(in, line)) {
        ++lineno;
        data_hash = fnv1a64(line, data_hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = " at line " + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, std::string("invalid JSON") + where + ": " + e.what());
        }
        if (!j.is_object()) fail(ErrorKind::format, "row is not an object" + where);
        const std::string label = row_label(j, where);
        std::string id = j.contains("id") ? j["id"].get<std::string>() : "line" + std::to_string(lineno);

        TokenSequence seq;
        if (j.contains("vectors")) {
            const auto& vecs = j["vectors"];
            if (!vecs.is_array() || vecs.empty()) fail(ErrorKind::format, "empty vectors" + where);
            const auto width = static_cast<int>(vecs[0].size());
            if (dim < 0) dim = width;
            seq.vectors.resize(static_cast<Eigen::Index>(vecs.size()), width);
            for (std::size_t r = 0; r < vecs.size(); ++r) {
                if (static_cast<int>(vecs[r].size()) != dim) {
                    fail(ErrorKind::format, "ragged vector width" + where);
                }
                for (int k = 0; k < width; ++k) {
                    seq.vectors(static_cast<Eigen::Index>(r), k) = vecs[r][k].get<double>();
                }
            }
            if (j.contains("tokens")) seq.tokens = j["tokens"].get<std::vector<std::string>>();
            seq.label = label;
            seq.source_id = id;
            if (id.starts_with(kLabelRowPrefix)) {
                const std::string name = id.substr(kLabelRowPrefix.size());
                Vector mean = seq.vectors.colwise().mean().transpose();
                label_rows[name].push_back(std::move(mean));
                continue;
            }
        } else if (j.contains("text") || j.contains("headline")) {
            if (options.table == nullptr) {
                fail(ErrorKind::config, "text data requires a word-vector table" + where);
            }
            try {
                seq = wordrep::embed_sequence(*options.table, wordrep::tokenize(j.value("text", j.value("headline", std::string{}))),
                                              label, id);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::empty_sequence) throw;
                ++dropped_empty;
                continue;
            }
            if (dim < 0) dim = options.table->dim();
        } else {
            fail(ErrorKind::format, "row has neither text nor vectors" + where);
        }

        auto it = label_split.find(label);
        if (it == label_split.end()) {
            ++dropped_labels[label];
            continue;
        }
        per_split[static_cast<std::size_t>(it->second)].push_back(
            std::make_shared<const TokenSequence>(std::move(seq)));
    }

    for (const auto& [label, count] : dropped_labels) {
        out.warnings.push_back("label '" + label + "' is in no split; dropped " + std::to_string(count) +
                               " samples");
    }
    if (dropped_empty > 0) {
        out.warnings.push_back("dropped " + std::to_string(dropped_empty) +
                               " samples with no representable token");
    }

    // Label vectors: precomputed "label:<name>" rows win over the word table.
    std::map<std::string, Vector> label_vectors;
    for (const auto& [label, split] : label_split) {
        if (auto rows = label_rows.find(label); rows != label_rows.end()) {
            Vector sum = Vector::Zero(rows->second.front().size());
            for (const auto& r : rows->second) sum += r;
            label_vectors[label] = sum / static_cast<double>(rows->second.size());
        } else if (options.table != nullptr) {
            label_vectors[label] = wordrep::embed_label_names(*options.table, {label}).vectors.row(0).transpose();
        } else {
            fail(ErrorKind::label_embedding, "no vector source for label '" + label + "'");
        }
    }

    const std::array<Split, 3> order{Split::train, Split::valid, Split::test};
    for (std::size_t s = 0; s < 3; ++s) {
        std::map<std::string, Vector> split_vectors;
        for (const auto& label : lists[s]) split_vectors[label] = label_vectors.at(label);
        LabeledCorpus corpus = make_corpus(order[s], std::move(per_split[s]), std::move(split_vectors));
        corpus.fingerprint = splitmix64(corpus.fingerprint ^ data_hash ^ out.split_fingerprint);
        for (const auto& label : lists[s]) {
            const auto it = corpus.classes.find(label);
            const std::size_t n = it == corpus.classes.end() ? 0 : it->second.size();
            if (static_cast<int>(n) < options.min_per_class) {
                out.short_classes.push_back(std::string(to_string(order[s])) + ":" + label + " (" +
                                            std::to_string(n) + " samples)");
            }
        }
        (s == 0 ? out.train : s == 1 ? out.valid : out.test) = std::move(corpus);
    }
    return out;
}

Episode sample_episode(const LabeledCorpus& corpus, int n, int k, int m, Rng& rng) {
    if (n < 1 || k < 1 || m < 0) fail(ErrorKind::sampling, "episode arities must be n>=1, k>=1, m>=0");
    const std::size_t need = static_cast<std::size_t>(k + m);
    std::vector<const std::string*> eligible;
    std::vector<std::string> deficient;
    for (const auto& [label, idx] : corpus.classes) {
        if (idx.size() >= need) {
            eligible.push_back(&label);
        } else {
            deficient.push_back(label + " (" + std::to_string(idx.size()) + " < " + std::to_string(need) + ")");
        }
    }
    if (eligible.size() < static_cast<std::size_t>(n)) {
        std::string msg = "need " + std::to_string(n) + " classes with >= " + std::to_string(need) +
                          " samples, corpus has " + std::to_string(eligible.size());
        if (!deficient.empty()) {
            msg += "; deficient classes:";
            for (const auto& d : deficient) msg += " " + d;
        }
        fail(ErrorKind::sampling, msg);
    }

    partial_shuffle(eligible, static_cast<std::size_t>(n), rng);

    Episode ep;
    ep.n_way = n;
    ep.k_shot = k;
    ep.m_query = m;
    ep.support.resize(static_cast<std::size_t>(n));
    ep.label_names.vectors.resize(n, corpus.dim());
    for (int c = 0; c < n; ++c) {
        const std::string& label = *eligible[static_cast<std::size_t>(c)];
        ep.classes.push_back(label);
        ep.label_names.names.push_back(label);
        ep.label_names.vectors.row(c) = corpus.label_vectors.at(label).transpose();

        std::vector<std::size_t> pool = corpus.classes.at(label);
        partial_shuffle(pool, need, rng);
        for (int i = 0; i < k; ++i) ep.support[static_cast<std::size_t>(c)].push_back(corpus.samples[pool[static_cast<std::size_t>(i)]]);
        for (int i = 0; i < m; ++i) {
            ep.query.push_back(corpus.samples[pool[static_cast<std::size_t>(k + i)]]);
            ep.query_labels.push_back(c);
        }
    }
    return ep;
}

Episode sample_episode_seeded(const LabeledCorpus& corpus, int n, int k, int m,
                              std::uint64_t episode_seed) {
    Rng rng(episode_seed);
    Episode ep = sample_episode(corpus, n, k, m, rng);
    ep.episode_seed = episode_seed;
    return ep;
}

SyntheticEpisode gen_synthetic_episode(const SyntheticSpec& spec, Rng& rng) {
    spec.validate();
    SyntheticEpisode out;
    Episode& ep = out.episode;
    ep.n_way = spec.n_way;
    ep.k_shot = spec.k_shot;
    ep.m_query = spec.m_query;
    out.true_centers.resize(spec.n_way, spec.dim);
    for (int c = 0; c < spec.n_way; ++c) {
        for (int i = 0; i < spec.dim; ++i) {
            out.true_centers(c, i) = rng.uniform(-spec.class_center_scale, spec.class_center_scale);
        }
    }
    ep.label_names.vectors = out.true_centers;
    ep.support.resize(static_cast<std::size_t>(spec.n_way));
    for (int c = 0; c < spec.n_way; ++c) {
        const std::string name = "class" + std::to_string(c);
        ep.classes.push_back(name);
        ep.label_names.names.push_back(name);
        for (int i = 0; i < spec.k_shot + spec.m_query; ++i) {
            TokenSequence seq;
            seq.tokens = {"c" + std::to_string(c) + "_" + std::to_string(i)};
            seq.vectors.resize(1, spec.dim);
            for (int d = 0; d < spec.dim; ++d) {
                seq.vectors(0, d) = out.true_centers(c, d) + spec.intra_class_stddev * rng.normal();
            }
            seq.label = name;
            seq.source_id = "s" + std::to_string(c) + "_" + std::to_string(i);
            auto ptr = std::make_shared<const TokenSequence>(std::move(seq));
            if (i < spec.k_shot) {
                ep.support[static_cast<std::size_t>(c)].push_back(std::move(ptr));
            } else {
                ep.query.push_back(std::move(ptr));
                ep.query_labels.push_back(c);
            }
        }
    }
    return out;
}

SplitLists make_splits(const std::filesystem::path& data_path, int n_train, int n_valid,
                       int n_test, std::uint64_t seed) {
    if (n_train < 0 || n_valid < 0 || n_test < 0) fail(ErrorKind::split, "split counts must be >= 0");
    std::ifstream in(data_path);
    if (!in) fail(ErrorKind::io, "cannot open data file " + data_path.string());
    std::set<std::string> labels;
    std::string line;
    long long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const std::string id = j.value("id", std::string{});
            if (id.starts_with(kLabelRowPrefix)) continue;
            labels.insert(row_label(j, " at line " + std::to_string(lineno)));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    const std::size_t want = static_cast<std::size_t>(n_train + n_valid + n_test);
    if (want > labels.size()) {
        fail(ErrorKind::split, "requested " + std::to_string(n_train) + "/" + std::to_string(n_valid) + "/" +
                                   std::to_string(n_test) + " classes but dataset has " +
                                   std::to_string(labels.size()));
    }
    std::vector<std::string> pool(labels.begin(), labels.end());
    Rng rng(derive_seed(seed, "make-splits"));
    partial_shuffle(pool, want, rng);
    SplitLists out;
    auto take = [&](std::vector<std::string>& dst, std::size_t from, int count) {
        dst.assign(pool.begin() + static_cast<std::ptrdiff_t>(from),
                   pool.begin() + static_cast<std::ptrdiff_t>(from) + count);
        std::sort(dst.begin(), dst.end());
    };
    take(out.train, 0, n_train);
    take(out.valid, static_cast<std::size_t>(n_train), n_valid);
    take(out.test, static_cast<std::size_t>(n_train + n_valid), n_test);
    return out;
}

std::string split_to_json(const SplitLists& lists) {
    nlohmann::ordered_json j;
    j["train"] = lists.train;
    j["valid"] = lists.valid;
    j["test"] = lists.test;
    return j.dump(2) + "\n";
}

CorpusSource::CorpusSource(std::shared_ptr<const LabeledCorpus> corpus, int n, int k, int m)
    : corpus_(std::move(corpus)), n_(n), k_(k), m_(m) {}

Episode CorpusSource::sample(std::uint64_t episode_seed) const {
    return sample_episode_seeded(*corpus_, n_, k_, m_, episode_seed);
}

SyntheticSource::SyntheticSource(SyntheticSpec spec) : spec_(spec) { spec_.validate(); }

SyntheticEpisode SyntheticSource::sample_with_centers(std::uint64_t episode_seed) const {
    Rng rng(episode_seed);
    SyntheticEpisode out = gen_synthetic_episode(spec_, rng);
    out.episode.episode_seed = episode_seed;
    return out;
}

Episode SyntheticSource::sample(std::uint64_t episode_seed) const {
    return sample_with_centers(episode_seed).episode;
}

std::uint64_t SyntheticSource::fingerprint() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "synthetic " << spec_.n_way << ' ' << spec_.k_shot << ' ' << spec_.m_query << ' ' << spec_.dim
       << ' ' << spec_.class_center_scale << ' ' << spec_.intra_class_stddev << ' ' << spec_.seed;
    return fnv1a64(ss.str());
}

}  // namespace fewshot::episodes
