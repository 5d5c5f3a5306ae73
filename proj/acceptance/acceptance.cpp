// Acceptance checks. One line per criterion: "C<n> PASS|FAIL <details>".
// Usage: fewshot_acceptance [c1 .. c7]   (no arguments runs all)

#include "fewshot/cli.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/label_adapter.hpp"
#include "fewshot/protonet.hpp"
#include "fewshot/qda.hpp"
#include "fewshot/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace fewshot;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kC1RelGap = 0.01;
constexpr double kC1Violation = 1e-8;
constexpr double kC1Seconds = 10.0;
constexpr double kC2Abs = 1e-10;
constexpr double kC3Step = 1e-5;
constexpr double kC3Rel = 1e-4;
constexpr int kC3Configs = 60;
constexpr double kC5Reduction = 0.20;
constexpr double kC6Baseline = 0.316;
constexpr double kC6BaselineBand = 0.04;
constexpr double kC6MinGain = 0.04;
constexpr double kC6Seconds = 1800.0;
constexpr double kZ95 = 1.96;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << x;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

struct PairedStats {
    double mean = 0, half = 0;
};

PairedStats paired(const std::vector<double>& a, const std::vector<double>& b) {
    PairedStats s;
    const auto n = static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) s.mean += a[i] - b[i];
    s.mean /= n;
    double ss = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - s.mean) * (a[i] - b[i] - s.mean);
    s.half = kZ95 * std::sqrt(ss / (n - 1)) / std::sqrt(n);
    return s;
}

double mean_of(const std::vector<double>& xs) {
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

Matrix uniform_matrix(Rng& rng, int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform01();
    return m;
}

Matrix normal_matrix(Rng& rng, int r, int c, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// ---- C1 ----

Outcome c1() {
    Rng rng(derive_seed(1, "acceptance-c1"));
    double worst_gap = 0, worst_violation = 0;
    int bad = 0, unconverged = 0;
    const auto start = std::chrono::steady_clock::now();
    for (int t = 0; t < 100; ++t) {
        const int n = 2 + static_cast<int>(rng.index(4));
        const Matrix c = uniform_matrix(rng, n, n);
        const auto plan = qda::sinkhorn(c, 1e-3 * c.mean(), 1e-10, 1000000);
        const auto exact = qda::exact_ot_oracle(c);
        const double gap = std::abs(plan.cost - exact.cost) / std::max(exact.cost, 1e-300);
        worst_gap = std::max(worst_gap, gap);
        worst_violation = std::max(worst_violation, plan.marginal_violation);
        unconverged += !plan.converged;
        bad += !(gap < kC1RelGap && plan.marginal_violation < kC1Violation);
    }
    const double secs = seconds_since(start);
    Outcome o;
    o.pass = bad == 0 && secs < kC1Seconds;
    o.detail = "100 matrices, worst rel gap " + fmt(worst_gap) + " (< " + fmt(kC1RelGap) + "), worst violation " +
               fmt(worst_violation) + " (< " + fmt(kC1Violation) + "), unconverged " + std::to_string(unconverged) +
               ", " + fmt(secs, 3) + " s (< " + fmt(kC1Seconds) + ")";
    return o;
}

// ---- C2 ----

Outcome c2() {
    Rng rng(derive_seed(1, "acceptance-c2"));
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        const int m = 2 + static_cast<int>(rng.index(40));
        const int k = 1 + static_cast<int>(rng.index(10));
        const int d = 1 + static_cast<int>(rng.index(16));
        const Matrix q = normal_matrix(rng, m, d, 2.0);
        const Matrix s = normal_matrix(rng, k, d, 2.0);
        const Matrix c = qda::cost_matrix(q, s);
        const auto plan = qda::sinkhorn(c, (0.01 + 0.2 * rng.uniform01()) * c.mean());
        const int r = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(m)));
        const auto idx = qda::retrieve_top_r(plan, c, r);
        const auto rows = qda::barycentric_map(plan, idx, s);
        const Matrix mat = qda::barycentric_map_matrix(plan, idx, s);
        worst = std::max(worst, (rows.points - mat).cwiseAbs().maxCoeff());
    }
    return {worst < kC2Abs, "100 instances, max componentwise difference " + fmt(worst) + " (< " + fmt(kC2Abs) + ")"};
}

// ---- C3 ----

struct FdTally {
    double worst = 0, worst_analytic = 0, worst_numeric = 0;
    long checked = 0;
    void add(double analytic, double numeric) {
        const double e = rel_err(analytic, numeric);
        if (e > worst) {
            worst = e;
            worst_analytic = analytic;
            worst_numeric = numeric;
        }
        ++checked;
    }
};

double central(double* x, const std::function<double()>& f) {
    const double orig = *x;
    *x = orig + kC3Step;
    const double up = f();
    *x = orig - kC3Step;
    const double down = f();
    *x = orig;
    return (up - down) / (2 * kC3Step);
}

void each_entry(Matrix& m, const std::function<void(double*, Eigen::Index)>& fn) {
    for (Eigen::Index i = 0; i < m.size(); ++i) fn(m.data() + i, i);
}

void each_entry(Vector& v, const std::function<void(double*, Eigen::Index)>& fn) {
    for (Eigen::Index i = 0; i < v.size(); ++i) fn(v.data() + i, i);
}

adapter::AdapterConfig random_adapter_config(Rng& rng, int d) {
    std::vector<int> heads;
    for (int h = 1; h <= d; ++h)
        if (d % h == 0) heads.push_back(h);
    adapter::AdapterConfig ac;
    ac.dim = d;
    ac.heads = heads[rng.index(heads.size())];
    ac.use_scaling = rng.uniform01() < 0.5;
    ac.residual = rng.uniform01() < 0.3;
    ac.layer_norm = rng.uniform01() < 0.3;
    ac.identity_init = false;
    ac.dropout_rate = rng.uniform01() < 0.3 ? 0.2 : 0.0;
    return ac;
}

// Scalar loss g . v through one adapter forward; dropout mask fixed by reseeding.
void check_adapter(Rng& rng, const adapter::AdapterConfig& ac, FdTally& tally) {
    auto params = adapter::init_params(ac, rng.next_u64());
    const int n = 1 + static_cast<int>(rng.index(6));
    adapter::AdapterInput in;
    in.sentence = normal_matrix(rng, n, ac.dim);
    in.prefix = in.sentence.colwise().mean().transpose();
    in.labels = normal_matrix(rng, 5, ac.dim);
    const Vector g = normal_matrix(rng, ac.dim, 1).col(0);
    const std::uint64_t mask_seed = rng.next_u64();
    const bool train = ac.dropout_rate > 0;
    const auto loss = [&] {
        Rng r(mask_seed);
        return g.dot(adapter::adapter_forward(params, in, train, &r));
    };
    adapter::AdapterCache cache;
    Rng r(mask_seed);
    adapter::adapter_forward(params, in, train, &r, &cache);
    auto grads = adapter::adapter_backward(params, cache, g);

    std::vector<Matrix*> p, gp;
    params.tensors.for_each([&](const std::string&, Matrix& m) { p.push_back(&m); });
    grads.params.for_each([&](const std::string&, Matrix& m) { gp.push_back(&m); });
    for (std::size_t t = 0; t < p.size(); ++t) {
        each_entry(*p[t], [&](double* x, Eigen::Index i) { tally.add(gp[t]->data()[i], central(x, loss)); });
    }
    each_entry(in.prefix, [&](double* x, Eigen::Index i) { tally.add(grads.prefix[i], central(x, loss)); });
    each_entry(in.sentence, [&](double* x, Eigen::Index i) { tally.add(grads.sentence.data()[i], central(x, loss)); });
    each_entry(in.labels, [&](double* x, Eigen::Index i) { tally.add(grads.labels.data()[i], central(x, loss)); });
}

void check_classifier(Rng& rng, int d, FdTally& tally) {
    const int nq = 1 + static_cast<int>(rng.index(12));
    Matrix q = normal_matrix(rng, nq, d);
    protonet::PrototypeSet ps;
    ps.prototypes = normal_matrix(rng, 5, d);
    for (int c = 0; c < 5; ++c) ps.class_ids.push_back(std::to_string(c));
    std::vector<int> labels;
    for (int i = 0; i < nq; ++i) labels.push_back(static_cast<int>(rng.index(5)));
    const auto loss = [&] { return protonet::cross_entropy(protonet::class_posteriors(q, ps), labels); };
    const auto g = protonet::classifier_backward(q, ps, labels);
    each_entry(q, [&](double* x, Eigen::Index i) { tally.add(g.queries.data()[i], central(x, loss)); });
    each_entry(ps.prototypes, [&](double* x, Eigen::Index i) { tally.add(g.prototypes.data()[i], central(x, loss)); });
}

// A corpus of random multi-token sequences, 5 classes.
std::shared_ptr<const episodes::LabeledCorpus> token_corpus(Rng& rng, int d, int max_len, int per_class) {
    std::vector<episodes::SamplePtr> samples;
    std::map<std::string, Vector> labels;
    for (int c = 0; c < 5; ++c) {
        const std::string name = "class" + std::to_string(c);
        const Vector center = normal_matrix(rng, d, 1).col(0);
        labels[name] = center;
        for (int i = 0; i < per_class; ++i) {
            wordrep::TokenSequence s;
            const int len = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(max_len)));
            s.vectors = normal_matrix(rng, len, d);
            s.vectors.rowwise() += center.transpose();
            for (int t = 0; t < len; ++t) s.tokens.push_back("t" + std::to_string(t));
            s.label = name;
            s.source_id = name + "_" + std::to_string(i);
            samples.push_back(std::make_shared<const wordrep::TokenSequence>(std::move(s)));
        }
    }
    return std::make_shared<const episodes::LabeledCorpus>(
        episodes::make_corpus(episodes::Split::train, std::move(samples), std::move(labels)));
}

void check_episode(Rng& rng, const adapter::AdapterConfig& ac, FdTally& tally) {
    const auto corpus = token_corpus(rng, ac.dim, 6, 4);
    trainer::TrainConfig cfg;
    cfg.n_way = 5;
    cfg.k_shot = 1 + static_cast<int>(rng.index(2));
    cfg.m_query = 2;
    cfg.r = static_cast<int>(rng.index(6));
    cfg.qda_projection = rng.uniform01() < 0.5 ? "retrieved_queries" : "support_barycentric";
    cfg.heads = ac.heads;
    cfg.dropout = ac.dropout_rate;
    auto params = adapter::init_params(ac, rng.next_u64());
    const auto ep = episodes::sample_episode_seeded(*corpus, cfg.n_way, cfg.k_shot, cfg.m_query, rng.next_u64());
    const std::uint64_t mask_seed = rng.next_u64();
    Rng r(mask_seed);
    const auto res = trainer::episode_step(params, ep, cfg, &r, true);
    const auto loss = [&] {
        Rng rr(mask_seed);
        return trainer::episode_step(params, ep, cfg, &rr, true, &res.prototype_weights).loss;
    };
    auto grads = *res.gradients;
    std::vector<Matrix*> p, gp;
    params.tensors.for_each([&](const std::string&, Matrix& m) { p.push_back(&m); });
    grads.for_each([&](const std::string&, Matrix& m) { gp.push_back(&m); });
    for (std::size_t t = 0; t < p.size(); ++t) {
        each_entry(*p[t], [&](double* x, Eigen::Index i) { tally.add(gp[t]->data()[i], central(x, loss)); });
    }
}

Outcome c3() {
    Rng rng(derive_seed(1, "acceptance-c3"));
    FdTally adapter_t, classifier_t, episode_t;
    for (int k = 0; k < kC3Configs; ++k) {
        const int d = 2 + static_cast<int>(rng.index(7));
        const auto ac = random_adapter_config(rng, d);
        check_adapter(rng, ac, adapter_t);
        check_classifier(rng, d, classifier_t);
        check_episode(rng, ac, episode_t);
    }
    const double worst = std::max({adapter_t.worst, classifier_t.worst, episode_t.worst});
    Outcome o;
    o.pass = worst < kC3Rel;
    const auto part = [](const char* name, const FdTally& t) {
        return std::string(name) + " " + fmt(t.worst) + " over " + std::to_string(t.checked) + " entries (at " +
               fmt(t.worst_analytic, 6) + " vs " + fmt(t.worst_numeric, 6) + ")";
    };
    o.detail = std::to_string(kC3Configs) + " configs, step " + fmt(kC3Step) + ", worst rel err: " +
               part("adapter", adapter_t) + ", " + part("classifier", classifier_t) + ", " +
               part("episode", episode_t) + "; limit " + fmt(kC3Rel) + " with denominator floor 1e-6";
    return o;
}

// ---- C4 ----

// Nearest support-mean prototype on mean-of-token representations.
std::vector<int> reference_predictions(const episodes::Episode& ep) {
    const auto rep = [](const wordrep::TokenSequence& s) {
        Vector v = Vector::Zero(s.vectors.cols());
        for (Eigen::Index i = 0; i < s.vectors.rows(); ++i) v += s.vectors.row(i).transpose();
        return Vector(v / static_cast<double>(s.vectors.rows()));
    };
    std::vector<Vector> protos;
    for (const auto& shots : ep.support) {
        Vector p = Vector::Zero(ep.dim());
        for (const auto& s : shots) p += rep(*s);
        protos.push_back(p / static_cast<double>(shots.size()));
    }
    std::vector<int> out;
    for (const auto& q : ep.query) {
        const Vector v = rep(*q);
        int best = 0;
        double bd = (v - protos[0]).squaredNorm();
        for (std::size_t c = 1; c < protos.size(); ++c) {
            const double dc = (v - protos[c]).squaredNorm();
            if (dc < bd) {
                bd = dc;
                best = static_cast<int>(c);
            }
        }
        out.push_back(best);
    }
    return out;
}

Outcome c4() {
    Rng rng(derive_seed(1, "acceptance-c4"));
    trainer::TrainConfig cfg;
    cfg.seed = 4;
    const auto synthetic = trainer::make_sources(cfg).test;
    cfg.m_query = 10;
    cfg.k_shot = 3;
    const episodes::CorpusSource corpus(token_corpus(rng, 16, 6, 40), 5, cfg.k_shot, cfg.m_query);
    const auto params = adapter::init_params(cfg.adapter_config(16));

    int mismatched = 0, episodes_run = 0;
    const auto run = [&](const episodes::EpisodeSource& src, trainer::TrainConfig c) {
        c.bypass_adapter = true;
        for (int i = 0; i < 100; ++i) {
            const auto ep = src.sample(trainer::test_episode_seed(c.seed, static_cast<std::uint64_t>(i)));
            mismatched += trainer::episode_step(params, ep, c, nullptr, false).predictions != reference_predictions(ep);
            ++episodes_run;
        }
    };
    trainer::TrainConfig both = trainer::TrainConfig{};
    both.seed = 4;
    both.bypass_qda = true;
    run(*synthetic, both);
    trainer::TrainConfig r0 = trainer::TrainConfig{};
    r0.seed = 4;
    r0.r = 0;
    run(*synthetic, r0);
    cfg.bypass_qda = true;
    run(corpus, cfg);
    return {mismatched == 0, std::to_string(episodes_run) + " episodes (synthetic bypass, synthetic R=0, multi-token corpus), " +
                                 std::to_string(mismatched) + " with differing predictions"};
}

// ---- C5 ----

Outcome c5() {
    episodes::SyntheticSpec spec;
    spec.dim = 16;
    spec.class_center_scale = 1.0;
    spec.intra_class_stddev = 1.0;
    spec.seed = 5;
    const episodes::SyntheticSource src(spec);
    trainer::TrainConfig qda_cfg;
    qda_cfg.bypass_adapter = true;
    qda_cfg.r = 10;
    auto pn_cfg = qda_cfg;
    pn_cfg.bypass_qda = true;
    const auto params = adapter::init_params(qda_cfg.adapter_config(16));

    double plain_dist = 0, qda_dist = 0;
    std::vector<double> acc_qda, acc_pn;
    for (int i = 0; i < 1000; ++i) {
        const auto se = src.sample_with_centers(derive_seed(spec.seed, "acceptance-c5", static_cast<std::uint64_t>(i)));
        const auto q = trainer::episode_step(params, se.episode, qda_cfg, nullptr, false);
        const auto p = trainer::episode_step(params, se.episode, pn_cfg, nullptr, false);
        for (int c = 0; c < 5; ++c) {
            plain_dist += (p.prototypes.prototypes.row(c) - se.true_centers.row(c)).norm();
            qda_dist += (q.prototypes.prototypes.row(c) - se.true_centers.row(c)).norm();
        }
        acc_qda.push_back(q.accuracy);
        acc_pn.push_back(p.accuracy);
    }
    const double reduction = 1.0 - qda_dist / plain_dist;
    const auto gain = paired(acc_qda, acc_pn);
    Outcome o;
    o.pass = reduction >= kC5Reduction && gain.mean - gain.half > 0;
    o.detail = "1000 episodes, distance reduction " + fmt(reduction * 100, 3) + "% (>= " + fmt(kC5Reduction * 100) +
               "%), accuracy " + fmt(mean_of(acc_pn)) + " -> " + fmt(mean_of(acc_qda)) + ", paired gain " +
               fmt(gain.mean) + " +/- " + fmt(gain.half) + " (lower bound > 0)";
    return o;
}

// ---- C6 ----

Outcome c6() {
    const char* data = std::getenv("FEWSHOT_HUFFPOST_DATA");
    const char* split = std::getenv("FEWSHOT_HUFFPOST_SPLIT");
    const char* vectors = std::getenv("FEWSHOT_WORD_VECTORS");
    if (!data || !split || !vectors) {
        return {false,
                "blocked: needs the news-category corpus and public word vectors; set FEWSHOT_HUFFPOST_DATA, "
                "FEWSHOT_HUFFPOST_SPLIT and FEWSHOT_WORD_VECTORS"};
    }
    const auto start = std::chrono::steady_clock::now();
    trainer::TrainConfig cfg;
    cfg.episodes_test = 1000;
    cfg.r = 10;
    cfg.bypass_adapter = true;
    cfg.data.source = "corpus";
    cfg.data.data_path = data;
    cfg.data.split_path = split;
    cfg.data.word_vectors = vectors;
    const auto sources = trainer::make_sources(cfg);
    trainer::Checkpoint ck;
    ck.params = adapter::init_params(cfg.adapter_config(sources.test->dim()));
    const auto qda = trainer::evaluate(ck, *sources.test, cfg);
    cfg.bypass_qda = true;
    const auto pn = trainer::evaluate(ck, *sources.test, cfg);
    const double secs = seconds_since(start);
    const double gain = qda.test_acc_mean - pn.test_acc_mean;
    Outcome o;
    o.pass = std::abs(pn.test_acc_mean - kC6Baseline) <= kC6BaselineBand && gain >= kC6MinGain && secs < kC6Seconds;
    o.detail = "PN " + fmt(pn.test_acc_mean) + " (target " + fmt(kC6Baseline) + " +/- " + fmt(kC6BaselineBand) +
               "), with QDA " + fmt(qda.test_acc_mean) + " (gain " + fmt(gain) + ", need >= " + fmt(kC6MinGain) + "), " +
               fmt(secs, 4) + " s";
    return o;
}

// ---- C7 ----

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "fewshot");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream sink;
    auto* old_out = std::cout.rdbuf(sink.rdbuf());
    auto* old_err = std::cerr.rdbuf(sink.rdbuf());
    const int code = cli::run(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    return code;
}

Outcome c7() {
    const fs::path root = fs::temp_directory_path() / ("fewshot-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);

    // Small labeled text corpus (16 topics) plus matching word vectors.
    {
        Rng rng(7);
        std::ofstream data(root / "data.jsonl");
        for (int c = 0; c < 16; ++c)
            for (int i = 0; i < 8; ++i)
                data << "{\"text\": \"w" << (c % 5) << " w" << ((c * 3 + i) % 5) << "\", \"label\": \"topic" << c
                     << "\"}\n";
        std::ofstream vec(root / "vectors.txt");
        vec.precision(17);
        vec << 21 << " 4\n";
        for (int k = 0; k < 5; ++k) {
            vec << "w" << k;
            for (int j = 0; j < 4; ++j) vec << ' ' << rng.normal();
            vec << "\n";
        }
        for (int c = 0; c < 16; ++c) {
            vec << "topic" << c;
            for (int j = 0; j < 4; ++j) vec << ' ' << rng.normal();
            vec << "\n";
        }
        trainer::TrainConfig cfg;
        cfg.epochs = 3;
        cfg.episodes_train = 5;
        cfg.episodes_val = 5;
        cfg.episodes_test = 20;
        cfg.m_query = 6;
        cfg.r = 4;
        cfg.heads = 2;
        cfg.seed = 7;
        cfg.data.dim = 8;
        std::ofstream(root / "config.json") << trainer::config_to_json(cfg).dump(2);
    }
    const std::string cfg = (root / "config.json").string();
    const std::vector<std::string> corpus_overrides{
        "data.source=corpus", "data.data_path=" + (root / "data.jsonl").string(),
        "data.split_path=" + (root / "split.json").string(), "data.word_vectors=" + (root / "vectors.txt").string(),
        "data.dim=4"};

    struct Step {
        std::string name;
        std::function<std::vector<std::string>(const std::string& out)> args;
        std::vector<std::string> files;
    };
    const auto with = [](std::vector<std::string> a, const std::vector<std::string>& extra) {
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    const std::vector<Step> steps{
        {"make-splits",
         [&](const std::string& out) {
             return std::vector<std::string>{"make-splits", "--data", (root / "data.jsonl").string(), "--counts",
                                             "6/5/5", "--seed", "7", "--out", out};
         },
         {"split.json"}},
        {"train", [&](const std::string& out) { return std::vector<std::string>{"train", "--config", cfg, "--out", out}; },
         {"checkpoint.json", "report.json"}},
        {"train-corpus",
         [&](const std::string& out) {
             return with({"train", "--config", cfg, "--out", out}, corpus_overrides);
         },
         {"checkpoint.json", "report.json"}},
        {"eval",
         [&](const std::string& out) {
             return std::vector<std::string>{"eval", "--checkpoint", (root / "train-a" / "checkpoint.json").string(),
                                             "--out", out};
         },
         {"report.json"}},
        {"ablate",
         [&](const std::string& out) { return std::vector<std::string>{"ablate", "--config", cfg, "--out", out}; },
         {"ablation.json"}},
        {"dump-reps",
         [&](const std::string& out) {
             return std::vector<std::string>{"dump-reps", "--checkpoint",
                                             (root / "train-a" / "checkpoint.json").string(), "--out", out};
         },
         {"reps.jsonl"}},
    };

    std::vector<std::string> problems;
    int compared = 0;
    for (const auto& step : steps) {
        const auto a = (root / (step.name + "-a")).string();
        const auto b = (root / (step.name + "-b")).string();
        const int ca = invoke(step.args(a));
        const int cb = invoke(step.args(b));
        if (ca != 0 || cb != 0) {
            problems.push_back(step.name + " exit " + std::to_string(ca) + "/" + std::to_string(cb));
            continue;
        }
        if (step.name == "make-splits") fs::copy_file(fs::path(a) / "split.json", root / "split.json");
        for (const auto& f : step.files) {
            ++compared;
            const auto x = slurp(fs::path(a) / f);
            if (x.empty() || x != slurp(fs::path(b) / f)) problems.push_back(step.name + "/" + f + " differs");
        }
    }
    std::error_code ec;
    fs::remove_all(root, ec);
    Outcome o;
    o.pass = problems.empty();
    o.detail = std::to_string(steps.size()) + " commands run twice, " + std::to_string(compared) + " artifacts compared";
    for (const auto& p : problems) o.detail += "; " + p;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
        {"c1", c1}, {"c2", c2}, {"c3", c3}, {"c4", c4}, {"c5", c5}, {"c6", c6}, {"c7", c7}};
    std::vector<std::string> wanted(argv + 1, argv + argc);
    if (wanted.empty())
        for (const auto& [name, fn] : all) wanted.push_back(name);

    bool ok = true;
    for (const auto& w : wanted) {
        auto it = std::find_if(all.begin(), all.end(), [&](const auto& p) { return p.first == w; });
        if (it == all.end()) {
            std::cerr << "unknown criterion " << w << "\n";
            return 2;
        }
        Outcome o;
        try {
            o = it->second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::string label = w;
        label[0] = 'C';
        std::cout << label << (o.pass ? " PASS " : " FAIL ") << o.detail << std::endl;
        ok = ok && o.pass;
    }
    return ok ? 0 : 1;
}
