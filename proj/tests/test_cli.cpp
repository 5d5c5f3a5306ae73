#include "fewshot/cli.hpp"
#include "fewshot/trainer.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

using fewshot::trainer::json;
using testutil::read_file;
using testutil::TempDir;
using testutil::write_file;

namespace {

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "fewshot");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return fewshot::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string small_config(const TempDir& dir) {
    json c = fewshot::trainer::config_to_json(fewshot::trainer::TrainConfig{});
    c["epochs"] = 2;
    c["episodes_train"] = 4;
    c["episodes_val"] = 5;
    c["episodes_test"] = 10;
    c["m_query"] = 8;
    c["r"] = 4;
    c["heads"] = 2;
    c["seed"] = 5;
    c["data"]["dim"] = 8;
    return write_file(dir / "config.json", c.dump(2)).string();
}

std::vector<json> read_jsonl(const std::filesystem::path& p) {
    std::vector<json> rows;
    std::istringstream in(read_file(p));
    std::string line;
    while (std::getline(in, line)) rows.push_back(json::parse(line));
    return rows;
}

// 41 labels, `per_class` short texts each, over a tiny vocabulary.
std::string text_corpus(const TempDir& dir, int per_class) {
    std::string rows;
    for (int c = 0; c < 41; ++c) {
        for (int i = 0; i < per_class; ++i) {
            json r;
            r["text"] = "w" + std::to_string(c % 7) + " w" + std::to_string((c + i) % 7) + " filler";
            r["label"] = "topic" + std::to_string(c);
            rows += r.dump() + "\n";
        }
    }
    return write_file(dir / "data.jsonl", rows).string();
}

std::string word_vectors(const TempDir& dir) {
    fewshot::Rng rng(17);
    std::ostringstream out;
    out.precision(17);
    out << 8 + 41 << " 4\n";
    auto line = [&](const std::string& w) {
        out << w;
        for (int k = 0; k < 4; ++k) out << ' ' << rng.normal();
        out << "\n";
    };
    for (int k = 0; k < 7; ++k) line("w" + std::to_string(k));
    line("filler");
    for (int c = 0; c < 41; ++c) line("topic" + std::to_string(c));
    return write_file(dir / "vectors.txt", out.str()).string();
}

}  // namespace

TEST(CliTrain, WritesCheckpointAndReport) {
    TempDir dir;
    const auto cfg = small_config(dir);
    ASSERT_EQ(run({"train", "--config", cfg, "--out", (dir / "out").string()}), 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "checkpoint.json"));
    const auto report = json::parse(read_file(dir / "out" / "report.json"));
    EXPECT_EQ(report.at("variant"), "full");
    EXPECT_EQ(report.at("episodes_evaluated"), 10);
}

TEST(CliTrain, MissingDataFileExitsTwo) {
    TempDir dir;
    const auto cfg = small_config(dir);
    const std::string missing = (dir / "nowhere" / "data.jsonl").string();
    testing::internal::CaptureStderr();
    const int code = run({"train", "--config", cfg, "--out", (dir / "out").string(), "data.source=corpus",
                          "data.data_path=" + missing, "data.split_path=" + missing + ".split"});
    const std::string err = testing::internal::GetCapturedStderr();
    EXPECT_EQ(code, 2);
    EXPECT_NE(err.find(missing), std::string::npos) << err;
    EXPECT_FALSE(std::filesystem::exists(dir / "out" / "report.json"));
}

TEST(CliTrain, MissingConfigAndBadUsage) {
    TempDir dir;
    testing::internal::CaptureStderr();
    EXPECT_EQ(run({"train", "--config", (dir / "none.json").string()}), 2);
    EXPECT_EQ(run({"train", "--config", small_config(dir), "not_a_key=3"}), 2);
    EXPECT_EQ(run({"frobnicate"}), 2);
    EXPECT_EQ(run({"eval"}), 2);
    testing::internal::GetCapturedStderr();
}

TEST(CliTrain, OverrideRZeroMarksVariant) {
    TempDir dir;
    ASSERT_EQ(run({"train", "--config", small_config(dir), "--out", dir.path().string(), "r=0"}), 0);
    EXPECT_EQ(json::parse(read_file(dir / "report.json")).at("variant"), "qda-off");
}

TEST(CliEval, MatchesTrainReport) {
    TempDir dir;
    const auto cfg = small_config(dir);
    ASSERT_EQ(run({"train", "--config", cfg, "--out", (dir / "t").string()}), 0);
    ASSERT_EQ(run({"eval", "--checkpoint", (dir / "t" / "checkpoint.json").string(), "--out", (dir / "e").string()}),
              0);
    const auto t = json::parse(read_file(dir / "t" / "report.json"));
    const auto e = json::parse(read_file(dir / "e" / "report.json"));
    EXPECT_EQ(t.at("episode_accuracies"), e.at("episode_accuracies"));
    EXPECT_EQ(t.at("test_acc_mean"), e.at("test_acc_mean"));
}

TEST(CliAblate, FourRowsAndPnMatchesDirectRun) {
    TempDir dir;
    const auto cfg = small_config(dir);
    testing::internal::CaptureStderr();
    ASSERT_EQ(run({"ablate", "--config", cfg, "--out", (dir / "a").string()}), 0);
    testing::internal::GetCapturedStderr();
    const auto doc = json::parse(read_file(dir / "a" / "ablation.json"));
    const auto& rows = doc.at("variants");
    ASSERT_EQ(rows.size(), 4u);
    std::set<std::string> names;
    for (const auto& r : rows) {
        names.insert(r.at("variant").get<std::string>());
        EXPECT_TRUE(r.at("report").contains("test_acc_mean"));
    }
    EXPECT_EQ(names, (std::set<std::string>{"full", "la-only", "qda-only", "pn"}));
    ASSERT_EQ(run({"train", "--config", cfg, "--out", (dir / "pn").string(), "bypass_adapter=true",
                   "bypass_qda=true"}),
              0);
    const auto direct = json::parse(read_file(dir / "pn" / "report.json"));
    EXPECT_EQ(rows[3].at("variant"), "pn");
    EXPECT_EQ(rows[3].at("report").dump(), direct.dump());
}

TEST(CliDumpReps, FiveShotHundredFiftyQueryEpisode) {
    TempDir dir;
    const auto cfg = small_config(dir);
    ASSERT_EQ(run({"train", "--config", cfg, "--out", dir.path().string()}), 0);
    const auto ck = (dir / "checkpoint.json").string();
    for (const char* sub : {"d1", "d2"}) {
        ASSERT_EQ(run({"dump-reps", "--checkpoint", ck, "--out", (dir / sub).string(), "k_shot=5", "m_query=150"}), 0);
    }
    const auto rows = read_jsonl(dir / "d1" / "reps.jsonl");
    int samples = 0, support_protos = 0, qda_protos = 0;
    for (const auto& r : rows) {
        EXPECT_EQ(r.at("rep").size(), 8u);
        const auto kind = r.at("kind").get<std::string>();
        samples += kind == "sample";
        support_protos += kind == "support_prototype";
        qda_protos += kind == "qda_prototype";
    }
    EXPECT_EQ(samples, 775);
    EXPECT_EQ(support_protos, 5);
    EXPECT_EQ(qda_protos, 5);
    EXPECT_EQ(read_file(dir / "d1" / "reps.jsonl"), read_file(dir / "d2" / "reps.jsonl"));
}

TEST(CliMakeSplits, FortyOneClasses) {
    TempDir dir;
    const auto data = text_corpus(dir, 2);
    ASSERT_EQ(run({"make-splits", "--data", data, "--counts", "20/5/16", "--seed", "3", "--out", (dir / "a").string()}),
              0);
    ASSERT_EQ(run({"make-splits", "--data", data, "--counts", "20/5/16", "--seed", "3", "--out", (dir / "b").string()}),
              0);
    const auto text = read_file(dir / "a" / "split.json");
    EXPECT_EQ(text, read_file(dir / "b" / "split.json"));
    const auto j = json::parse(text);
    EXPECT_EQ(j.at("train").size(), 20u);
    EXPECT_EQ(j.at("valid").size(), 5u);
    EXPECT_EQ(j.at("test").size(), 16u);
    std::set<std::string> all;
    for (const char* k : {"train", "valid", "test"})
        for (const auto& l : j.at(k)) all.insert(l.get<std::string>());
    EXPECT_EQ(all.size(), 41u);

    testing::internal::CaptureStderr();
    EXPECT_NE(run({"make-splits", "--data", data, "--counts", "50/5/16", "--out", (dir / "c").string()}), 0);
    EXPECT_EQ(run({"make-splits", "--data", data, "--counts", "20/5", "--out", (dir / "c").string()}), 2);
    testing::internal::GetCapturedStderr();
    EXPECT_FALSE(std::filesystem::exists(dir / "c" / "split.json"));
}

TEST(CliCorpus, TextDataEndToEnd) {
    TempDir dir;
    const auto data = text_corpus(dir, 8);
    const auto vectors = word_vectors(dir);
    ASSERT_EQ(run({"make-splits", "--data", data, "--counts", "20/5/16", "--out", dir.path().string()}), 0);
    const std::vector<std::string> common{"--config",
                                          small_config(dir),
                                          "data.source=corpus",
                                          "data.dim=4",
                                          "m_query=5",
                                          "data.data_path=" + data,
                                          "data.split_path=" + (dir / "split.json").string(),
                                          "data.word_vectors=" + vectors};
    for (const char* sub : {"r1", "r2"}) {
        std::vector<std::string> args{"train", "--out", (dir / sub).string()};
        args.insert(args.end(), common.begin(), common.end());
        ASSERT_EQ(run(args), 0);
    }
    EXPECT_EQ(read_file(dir / "r1" / "checkpoint.json"), read_file(dir / "r2" / "checkpoint.json"));
    EXPECT_EQ(read_file(dir / "r1" / "report.json"), read_file(dir / "r2" / "report.json"));
    const auto ck = json::parse(read_file(dir / "r1" / "checkpoint.json"));
    EXPECT_EQ(ck.at("dim"), 4);
    EXPECT_NE(ck.at("split_fingerprint"), "");
}
