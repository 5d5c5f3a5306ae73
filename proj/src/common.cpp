#include "fewshot/common.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace fewshot {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::load: return "load error";
        case ErrorKind::format: return "format error";
        case ErrorKind::empty_sequence: return "empty-sequence error";
        case ErrorKind::label_embedding: return "label-embedding error";
        case ErrorKind::split: return "split error";
        case ErrorKind::sampling: return "sampling error";
        case ErrorKind::shape: return "shape error";
        case ErrorKind::numeric: return "numeric error";
        case ErrorKind::consistency: return "consistency error";
        case ErrorKind::degenerate_plan: return "degenerate-plan error";
        case ErrorKind::unsupported_size: return "unsupported-size error";
        case ErrorKind::evaluation: return "evaluation error";
        case ErrorKind::config: return "config error";
        case ErrorKind::io: return "io error";
    }
    return "error";
}

Error::Error(ErrorKind kind, std::string module, const std::string& message)
    : std::runtime_error(module + ": " + message), kind_(kind), module_(std::move(module)) {}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t Rng::index(std::uint64_t n) {
    // Rejection on the top of the range keeps every residue equally likely.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = 0;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                          std::uint64_t b) {
    std::uint64_t h = splitmix64(base ^ fnv1a64(tag));
    h = splitmix64(h ^ a);
    return splitmix64(h ^ (b * 0x2545f4914f6cdd1dULL));
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace fewshot
