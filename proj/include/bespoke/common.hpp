#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bespoke {

inline constexpr const char* kToolVersion = "0.1.0";

/// Error codes shared across the toolchain. Every failure path maps to one
/// of these so the CLI can emit machine-readable errors.
enum class ErrorCode {
    ParseError,
    OutOfRangeWeight,
    DimensionMismatch,
    UnsupportedActivationBits,
    InvalidTopology,
    Infeasible,
    InstanceTooLarge,
    TimeBudgetExceeded,
    BudgetExceeded,
    SlotOverflow,
    ActivationOutOfRange,
    ProgramConfigMismatch,
    AccumulatorOverflow,
    MismatchedModels,
    IoError,
    InvalidArgument,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::ParseError: return "parse_error";
        case ErrorCode::OutOfRangeWeight: return "out_of_range_weight";
        case ErrorCode::DimensionMismatch: return "dimension_mismatch";
        case ErrorCode::UnsupportedActivationBits: return "unsupported_activation_bits";
        case ErrorCode::InvalidTopology: return "invalid_topology";
        case ErrorCode::Infeasible: return "infeasible";
        case ErrorCode::InstanceTooLarge: return "instance_too_large";
        case ErrorCode::TimeBudgetExceeded: return "time_budget_exceeded";
        case ErrorCode::BudgetExceeded: return "budget_exceeded";
        case ErrorCode::SlotOverflow: return "slot_overflow";
        case ErrorCode::ActivationOutOfRange: return "activation_out_of_range";
        case ErrorCode::ProgramConfigMismatch: return "program_config_mismatch";
        case ErrorCode::AccumulatorOverflow: return "accumulator_overflow";
        case ErrorCode::MismatchedModels: return "mismatched_models";
        case ErrorCode::IoError: return "io_error";
        case ErrorCode::InvalidArgument: return "invalid_argument";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

/// FNV-1a 64-bit. Stable across platforms; used for manifest hashes and
/// seed mixing, not for security.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

/// Mix independent stream identifiers into one 64-bit seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
    h = fnv1a64(&a, sizeof a, h);
    h = fnv1a64(&b, sizeof b, h);
    return h;
}

/// Worker cap for parallel sections: min(hardware, BESPOKE_FORGE_THREADS).
inline unsigned max_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("BESPOKE_FORGE_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1 && static_cast<unsigned>(v) < hw) hw = static_cast<unsigned>(v);
    }
    return hw;
}

/// Index-sharded parallel loop. Each index is processed exactly once by some
/// worker; results must be written to per-index slots so the outcome does not
/// depend on the thread count. `sequential` forces single-thread execution
/// (reproducible mode).
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, bool sequential = false) {
    unsigned workers = sequential ? 1u : max_threads();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (workers > n) workers = static_cast<unsigned>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace bespoke
