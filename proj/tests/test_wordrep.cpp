#include "fewshot/wordrep.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace fewshot;
using namespace fewshot::wordrep;
using testutil::TempDir;
using testutil::write_file;

namespace {

template <typename Fn>
Error capture(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e;
    }
    ADD_FAILURE() << "expected an Error";
    return Error(ErrorKind::io, "test", "no error");
}

WordVectorTable table_of(int dim, OovPolicy policy, std::initializer_list<std::pair<std::string, std::vector<double>>> rows) {
    WordVectorTable t(dim, policy);
    for (const auto& [w, v] : rows) t.insert(w, Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    return t;
}

}  // namespace

TEST(LoadWordVectors, ThreeDimTable) {
    TempDir dir;
    const auto path = write_file(dir / "v.txt", "2 3\na 1 0 0\nb 0 1 0");
    const auto t = load_word_vectors(path, OovPolicy::skip);
    EXPECT_EQ(t.dim(), 3);
    EXPECT_EQ(t.size(), 2u);
    ASSERT_NE(t.find("a"), nullptr);
    EXPECT_EQ(*t.find("a"), Vector::Unit(3, 0));
}

TEST(LoadWordVectors, NegativeValues) {
    TempDir dir;
    const auto t = load_word_vectors(write_file(dir / "v.txt", "1 2\nx 0.5 -0.5\n"), OovPolicy::skip);
    ASSERT_NE(t.find("x"), nullptr);
    EXPECT_EQ((*t.find("x"))[0], 0.5);
    EXPECT_EQ((*t.find("x"))[1], -0.5);
}

TEST(LoadWordVectors, WidthMismatchNamesLine) {
    TempDir dir;
    const auto path = write_file(dir / "v.txt", "1 3\nx 1 2\n");
    const auto e = capture([&] { load_word_vectors(path, OovPolicy::skip); });
    EXPECT_EQ(e.kind(), ErrorKind::load);
    EXPECT_NE(std::string(e.what()).find("inconsistent vector width at line 2"), std::string::npos) << e.what();
}

TEST(LoadWordVectors, MalformedHeader) {
    TempDir dir;
    const auto e = capture([&] { load_word_vectors(write_file(dir / "v.txt", "two 3\n"), OovPolicy::skip); });
    EXPECT_EQ(e.kind(), ErrorKind::load);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
}

TEST(LoadWordVectors, UnreadableFloatNamesLine) {
    TempDir dir;
    const auto e =
        capture([&] { load_word_vectors(write_file(dir / "v.txt", "2 2\na 1 2\nb 1 zz\n"), OovPolicy::skip); });
    EXPECT_EQ(e.kind(), ErrorKind::load);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
}

TEST(LoadWordVectors, DuplicateKeepsLast) {
    TempDir dir;
    const auto t = load_word_vectors(write_file(dir / "v.txt", "2 2\na 1 2\na 3 4\n"), OovPolicy::skip);
    EXPECT_EQ(t.size(), 1u);
    EXPECT_EQ((*t.find("a"))[0], 3.0);
}

TEST(LoadWordVectors, DeterministicAcrossLoads) {
    TempDir dir;
    const auto path = write_file(dir / "v.txt", "2 3\na 0.1 0.2 0.3\nb -1e-3 4 5\n");
    const auto t1 = load_word_vectors(path, OovPolicy::hash_bucket, 5);
    const auto t2 = load_word_vectors(path, OovPolicy::hash_bucket, 5);
    EXPECT_EQ(*t1.find("b"), *t2.find("b"));
    EXPECT_EQ(t1.bucket_vector("unseen"), t2.bucket_vector("unseen"));
}

TEST(Tokenize, LowercasesAndStrips) {
    EXPECT_EQ(tokenize("Stock Markets Fall!"), (std::vector<std::string>{"stock", "markets", "fall"}));
}

TEST(Tokenize, CollapsesWhitespace) {
    EXPECT_EQ(tokenize("a  b"), (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(tokenize("\ta\n b c"), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Tokenize, PunctuationOnlyIsEmpty) {
    EXPECT_EQ(capture([] { tokenize("..."); }).kind(), ErrorKind::empty_sequence);
    EXPECT_EQ(capture([] { tokenize("   "); }).kind(), ErrorKind::empty_sequence);
}

TEST(Tokenize, KeepsInnerPunctuation) {
    EXPECT_EQ(tokenize("\"don't\" U.S."), (std::vector<std::string>{"don't", "u.s"}));
}

TEST(EmbedSequence, DirectLookup) {
    const auto t = table_of(2, OovPolicy::skip, {{"a", {1, 0}}, {"b", {0, 1}}});
    const auto s = embed_sequence(t, {"a", "b"}, "x");
    ASSERT_EQ(s.vectors.rows(), 2);
    EXPECT_EQ(s.vectors.row(0), Eigen::RowVector2d(1, 0));
    EXPECT_EQ(s.vectors.row(1), Eigen::RowVector2d(0, 1));
    EXPECT_EQ(s.label, "x");
}

TEST(EmbedSequence, ZeroPolicy) {
    const auto t = table_of(2, OovPolicy::zero, {{"a", {1, 0}}});
    const auto s = embed_sequence(t, {"a", "zz"}, "x");
    ASSERT_EQ(s.vectors.rows(), 2);
    EXPECT_EQ(s.vectors.row(1), Eigen::RowVector2d(0, 0));
    EXPECT_EQ(s.tokens.size(), 2u);
}

TEST(EmbedSequence, SkipPolicyAllOov) {
    const auto t = table_of(2, OovPolicy::skip, {{"a", {1, 0}}});
    EXPECT_EQ(capture([&] { embed_sequence(t, {"zz"}, "x"); }).kind(), ErrorKind::empty_sequence);
    const auto s = embed_sequence(t, {"zz", "a"}, "x");
    EXPECT_EQ(s.tokens, std::vector<std::string>{"a"});
    EXPECT_EQ(s.vectors.rows(), 1);
}

TEST(EmbedSequence, HashBucketsAreUnitAndStable) {
    const auto t = table_of(7, OovPolicy::hash_bucket, {{"a", {1, 0, 0, 0, 0, 0, 0}}});
    const auto s = embed_sequence(t, {"zz", "qq", "zz"}, "x");
    ASSERT_EQ(s.vectors.rows(), 3);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.vectors.row(i).norm(), 1.0, 1e-9);
    EXPECT_EQ(s.vectors.row(0), s.vectors.row(2));
    for (int w = 0; w < 200; ++w) EXPECT_NEAR(t.bucket_vector("w" + std::to_string(w)).norm(), 1.0, 1e-9);
}

TEST(EmbedLabelNames, SingleToken) {
    const auto t = table_of(2, OovPolicy::skip, {{"sports", {2, 4}}});
    const auto u = embed_label_names(t, {"sports"});
    EXPECT_EQ(u.vectors.row(0), Eigen::RowVector2d(2, 4));
}

TEST(EmbedLabelNames, TwoTokenMean) {
    const auto t = table_of(2, OovPolicy::skip, {{"world", {1, 0}}, {"news", {0, 1}}});
    const auto u = embed_label_names(t, {"world news"});
    EXPECT_NEAR(u.vectors(0, 0), 0.5, 1e-12);
    EXPECT_NEAR(u.vectors(0, 1), 0.5, 1e-12);
}

TEST(EmbedLabelNames, ArityAndIndependentMean) {
    Rng rng(11);
    WordVectorTable t(5, OovPolicy::skip);
    const std::vector<std::string> words{"arts", "culture", "food", "drink", "travel", "money", "tech"};
    for (const auto& w : words) t.insert(w, testutil::random_matrix(rng, 5, 1).col(0));
    const std::vector<std::string> names{"arts & culture", "food drink", "travel", "money", "tech"};
    const auto u = embed_label_names(t, names);
    ASSERT_EQ(u.vectors.rows(), 5);
    EXPECT_EQ(u.names, names);
    // recompute the first two by hand
    const Vector first = (*t.find("arts") + *t.find("culture")) / 2.0;
    const Vector second = (*t.find("food") + *t.find("drink")) / 2.0;
    EXPECT_LT((u.vectors.row(0).transpose() - first).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((u.vectors.row(1).transpose() - second).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EmbedLabelNames, UnrepresentableNameIsNamed) {
    const auto t = table_of(2, OovPolicy::skip, {{"a", {1, 0}}});
    const auto e = capture([&] { embed_label_names(t, {"a", "queer voices"}); });
    EXPECT_EQ(e.kind(), ErrorKind::label_embedding);
    EXPECT_NE(std::string(e.what()).find("queer voices"), std::string::npos);
}

TEST(LoadPrecomputed, SingleLine) {
    TempDir dir;
    const auto path = write_file(
        dir / "p.jsonl",
        R"({"id":"s1","label":"a","tokens":["x","y","z"],"vectors":[[1,2,3,4],[5,6,7,8],[9,10,11,12]]})"
        "\n");
    const auto seqs = load_precomputed(path);
    ASSERT_EQ(seqs.size(), 1u);
    EXPECT_EQ(seqs[0].vectors.rows(), 3);
    EXPECT_EQ(seqs[0].vectors.cols(), 4);
    EXPECT_EQ(seqs[0].vectors(2, 3), 12.0);
}

TEST(LoadPrecomputed, RaggedDimsAcrossLines) {
    TempDir dir;
    const auto path = write_file(dir / "p.jsonl",
                                 R"({"id":"s1","label":"a","tokens":["x"],"vectors":[[1,2,3,4]]})"
                                 "\n"
                                 R"({"id":"s2","label":"a","tokens":["x"],"vectors":[[1,2,3,4,5]]})"
                                 "\n");
    const auto e = capture([&] { load_precomputed(path); });
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
}

TEST(LoadPrecomputed, EmptyFile) {
    TempDir dir;
    EXPECT_TRUE(load_precomputed(write_file(dir / "p.jsonl", "")).empty());
}

TEST(LoadPrecomputed, GoldenFixture) {
    const auto seqs = load_precomputed(std::string(FEWSHOT_TEST_DATA) + "/precomputed_golden.jsonl");
    ASSERT_EQ(seqs.size(), 3u);
    EXPECT_EQ(seqs[0].source_id, "g0");
    EXPECT_EQ(seqs[0].label, "sports");
    EXPECT_EQ(seqs[0].tokens, (std::vector<std::string>{"the", "team", "won"}));
    EXPECT_EQ(seqs[0].vectors(1, 0), 0.125);
    EXPECT_EQ(seqs[0].vectors(1, 2), -1.5);
    EXPECT_EQ(seqs[1].vectors.rows(), 1);
    EXPECT_EQ(seqs[1].vectors(0, 3), 3.0);
    EXPECT_EQ(seqs[2].vectors.rows(), 2);
    for (const auto& s : seqs) EXPECT_EQ(s.dim(), 4);
}
