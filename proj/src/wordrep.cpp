#include "fewshot/wordrep.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace fewshot::wordrep {
namespace {

constexpr const char* kModule = "wordrep";

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

bool parse_double(std::string_view text, double& out) {
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

std::vector<std::string_view> split_ascii_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

// Decodes one UTF-8 code point at `pos`; malformed bytes decode as themselves.
char32_t decode_utf8(std::string_view s, std::size_t pos, std::size_t& len) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    auto cont = [&](std::size_t k) -> int {
        if (pos + k >= s.size()) return -1;
        const auto b = static_cast<unsigned char>(s[pos + k]);
        return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
    };
    if (b0 < 0x80) {
        len = 1;
        return b0;
    }
    if ((b0 & 0xE0) == 0xC0) {
        const int c1 = cont(1);
        if (c1 >= 0) {
            len = 2;
            return static_cast<char32_t>(((b0 & 0x1F) << 6) | c1);
        }
    } else if ((b0 & 0xF0) == 0xE0) {
        const int c1 = cont(1), c2 = cont(2);
        if (c1 >= 0 && c2 >= 0) {
            len = 3;
            return static_cast<char32_t>(((b0 & 0x0F) << 12) | (c1 << 6) | c2);
        }
    } else if ((b0 & 0xF8) == 0xF0) {
        const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
        if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
            len = 4;
            return static_cast<char32_t>(((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3);
        }
    }
    len = 1;
    return b0;
}

bool is_space(char32_t c) {
    switch (c) {
        case U' ': case U'\t': case U'\n': case U'\v': case U'\f': case U'\r':
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029: case 0x202F:
        case 0x205F: case 0x3000:
            return true;
        default:
            return c >= 0x2000 && c <= 0x200A;
    }
}

bool is_punct(char32_t c) {
    if (c < 0x80) {
        return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
               (c >= 0x7B && c <= 0x7E);
    }
    switch (c) {
        case 0xA1: case 0xAB: case 0xBB: case 0xBF: case 0x2010: case 0x2011: case 0x2012:
        case 0x2013: case 0x2014: case 0x2015: case 0x2018: case 0x2019: case 0x201A:
        case 0x201C: case 0x201D: case 0x201E: case 0x2022: case 0x2026: case 0x2032:
        case 0x2033: case 0x3001: case 0x3002:
            return true;
        default:
            return false;
    }
}

struct CodePoint {
    char32_t value;
    std::size_t offset;
    std::size_t length;
};

std::string strip_punct(std::string_view word) {
    std::vector<CodePoint> cps;
    for (std::size_t pos = 0; pos < word.size();) {
        std::size_t len = 1;
        const char32_t c = decode_utf8(word, pos, len);
        cps.push_back({c, pos, len});
        pos += len;
    }
    std::size_t lo = 0, hi = cps.size();
    while (lo < hi && is_punct(cps[lo].value)) ++lo;
    while (hi > lo && is_punct(cps[hi - 1].value)) --hi;
    if (lo == hi) return {};
    const std::size_t begin = cps[lo].offset;
    const std::size_t end = cps[hi - 1].offset + cps[hi - 1].length;
    return std::string(word.substr(begin, end - begin));
}

Vector mean_rows(const std::vector<Vector>& rows, int dim) {
    Vector sum = Vector::Zero(dim);
    for (const auto& r : rows) sum += r;
    return sum / static_cast<double>(rows.size());
}

}  // namespace

OovPolicy parse_oov_policy(std::string_view name) {
    if (name == "skip") return OovPolicy::skip;
    if (name == "zero") return OovPolicy::zero;
    if (name == "hash-bucket" || name == "hash_bucket") return OovPolicy::hash_bucket;
    throw Error(ErrorKind::config, kModule, "unknown oov policy '" + std::string(name) + "'");
}

std::string_view to_string(OovPolicy policy) {
    switch (policy) {
        case OovPolicy::skip: return "skip";
        case OovPolicy::zero: return "zero";
        case OovPolicy::hash_bucket: return "hash-bucket";
    }
    return "skip";
}

WordVectorTable::WordVectorTable(int dim, OovPolicy policy, std::uint64_t oov_seed)
    : dim_(dim), policy_(policy), oov_seed_(oov_seed) {
    if (dim < 1) fail(ErrorKind::shape, "embedding dim must be >= 1");
    if (policy_ == OovPolicy::hash_bucket) {
        Rng rng(derive_seed(oov_seed, "oov-buckets"));
        buckets_.reserve(kHashBuckets);
        for (std::size_t b = 0; b < kHashBuckets; ++b) {
            Vector v(dim);
            double norm = 0.0;
            while (norm == 0.0) {
                for (int i = 0; i < dim; ++i) v[i] = rng.normal();
                norm = v.norm();
            }
            buckets_.push_back(v / norm);
        }
    }
}

void WordVectorTable::insert(std::string word, Vector vec) {
    if (vec.size() != dim_) {
        fail(ErrorKind::shape, "vector for '" + word + "' has width " + std::to_string(vec.size()) +
                                   ", expected " + std::to_string(dim_));
    }
    entries_.insert_or_assign(std::move(word), std::move(vec));
}

const Vector* WordVectorTable::find(const std::string& word) const {
    auto it = entries_.find(word);
    return it == entries_.end() ? nullptr : &it->second;
}

const Vector& WordVectorTable::bucket_vector(const std::string& word) const {
    if (buckets_.empty()) fail(ErrorKind::config, "table has no hash buckets (policy is not hash-bucket)");
    const std::uint64_t h = splitmix64(fnv1a64(word) ^ oov_seed_);
    return buckets_[h % kHashBuckets];
}

std::optional<Vector> WordVectorTable::resolve(const std::string& word) const {
    if (const Vector* v = find(word)) return *v;
    switch (policy_) {
        case OovPolicy::skip: return std::nullopt;
        case OovPolicy::zero: return Vector::Zero(dim_);
        case OovPolicy::hash_bucket: return bucket_vector(word);
    }
    return std::nullopt;
}

WordVectorTable load_word_vectors(const std::filesystem::path& path, OovPolicy policy,
                                  std::uint64_t oov_seed) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open word-vector file " + path.string());

    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::load, "malformed header at line 1 (empty file)");
    const auto header = split_ascii_ws(line);
    long long count = 0, dim = 0;
    auto parse_int = [](std::string_view t, long long& out) {
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
        return ec == std::errc{} && ptr == t.data() + t.size();
    };
    if (header.size() != 2 || !parse_int(header[0], count) || !parse_int(header[1], dim) ||
        count < 0 || dim < 1) {
        fail(ErrorKind::load, "malformed header at line 1");
    }

    WordVectorTable table(static_cast<int>(dim), policy, oov_seed);
    long long lineno = 1;
    long long seen = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto fields = split_ascii_ws(line);
        if (fields.empty()) continue;
        if (static_cast<long long>(fields.size()) != dim + 1) {
            fail(ErrorKind::load, "inconsistent vector width at line " + std::to_string(lineno));
        }
        Vector v(dim);
        for (long long i = 0; i < dim; ++i) {
            if (!parse_double(fields[i + 1], v[i])) {
                fail(ErrorKind::load, "unreadable float '" + std::string(fields[i + 1]) +
                                          "' at line " + std::to_string(lineno));
            }
        }
        table.insert(std::string(fields[0]), std::move(v));
        ++seen;
    }
    if (seen != count) {
        fail(ErrorKind::load, "header declares " + std::to_string(count) + " entries but file has " +
                                  std::to_string(seen) + " (line " + std::to_string(lineno) + ")");
    }
    return table;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (current.empty()) return;
        std::string stripped = strip_punct(current);
        if (!stripped.empty()) out.push_back(std::move(stripped));
        current.clear();
    };
    for (std::size_t pos = 0; pos < text.size();) {
        std::size_t len = 1;
        const char32_t c = decode_utf8(text, pos, len);
        if (is_space(c)) {
            flush();
        } else if (c < 0x80) {
            char ch = static_cast<char>(c);
            if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
            current.push_back(ch);
        } else {
            current.append(text.substr(pos, len));
        }
        pos += len;
    }
    flush();
    if (out.empty()) fail(ErrorKind::empty_sequence, "text has no tokens after tokenization");
    return out;
}

TokenSequence embed_sequence(const WordVectorTable& table, const std::vector<std::string>& tokens,
                             std::string label, std::string source_id) {
    if (tokens.empty()) fail(ErrorKind::empty_sequence, "empty token list");
    TokenSequence seq;
    std::vector<Vector> rows;
    for (const auto& tok : tokens) {
        if (auto v = table.resolve(tok)) {
            seq.tokens.push_back(tok);
            rows.push_back(std::move(*v));
        }
    }
    if (rows.empty()) {
        fail(ErrorKind::empty_sequence, "every token is out of vocabulary" +
                                            (source_id.empty() ? std::string{} : " in sample " + source_id));
    }
    seq.vectors.resize(static_cast<Eigen::Index>(rows.size()), table.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) seq.vectors.row(static_cast<Eigen::Index>(i)) = rows[i];
    seq.label = std::move(label);
    seq.source_id = std::move(source_id);
    return seq;
}

LabelNameVectors embed_label_names(const WordVectorTable& table,
                                   const std::vector<std::string>& names) {
    LabelNameVectors out;
    out.names = names;
    out.vectors.resize(static_cast<Eigen::Index>(names.size()), table.dim());
    for (std::size_t c = 0; c < names.size(); ++c) {
        std::vector<Vector> rows;
        try {
            for (const auto& tok : tokenize(names[c])) {
                if (auto v = table.resolve(tok)) rows.push_back(std::move(*v));
            }
        } catch (const Error&) {
            rows.clear();
        }
        if (rows.empty()) {
            fail(ErrorKind::label_embedding, "label '" + names[c] + "' has no representable token");
        }
        out.vectors.row(static_cast<Eigen::Index>(c)) = mean_rows(rows, table.dim());
    }
    return out;
}

std::vector<TokenSequence> load_precomputed(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open precomputed file " + path.string());

    std::vector<TokenSequence> out;
    std::string line;
    long long lineno = 0;
    long long dim = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = " at line " + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, std::string("invalid JSON") + where + ": " + e.what());
        }
        TokenSequence seq;
        try {
            seq.source_id = j.at("id").get<std::string>();
            seq.label = j.at("label").get<std::string>();
            seq.tokens = j.at("tokens").get<std::vector<std::string>>();
            const auto& vecs = j.at("vectors");
            if (!vecs.is_array() || vecs.empty()) fail(ErrorKind::format, "empty vectors" + where);
            if (vecs.size() != seq.tokens.size()) {
                fail(ErrorKind::format, "token/vector count mismatch" + where);
            }
            for (const auto& v : vecs) {
                const auto width = static_cast<long long>(v.size());
                if (dim < 0) dim = width;
                if (width != dim || width < 1) {
                    fail(ErrorKind::format, "ragged vector width " + std::to_string(width) +
                                                " (expected " + std::to_string(dim) + ")" + where);
                }
            }
            seq.vectors.resize(static_cast<Eigen::Index>(vecs.size()), dim);
            for (std::size_t r = 0; r < vecs.size(); ++r) {
                for (long long k = 0; k < dim; ++k) {
                    seq.vectors(static_cast<Eigen::Index>(r), k) = vecs[r][k].get<double>();
                }
            }
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, std::string("schema violation") + where + ": " + e.what());
        }
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace fewshot::wordrep
