#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

namespace mapn {

/// 64-bit FNV-1a; used for stable hashes of configs, stream names, and files.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Seed for a named random stream, e.g. derive_seed(base, "mask", {anatomy, split}).
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::initializer_list<std::uint64_t> ids = {});

/// mt19937_64 with distribution code that does not depend on the standard library
/// implementation, so streams are reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n);
    double normal();

    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 engine_;
};

}  // namespace mapn
