#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

namespace mapunetr {

// Counter-based deterministic generator. Each draw hashes (key, counter)
// with the splitmix64 finalizer, so streams can be split without sharing
// state and results are identical across platforms and compilers.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x5851F42D4C957F2DULL)) {}

    // Independent stream derived from this one; advancing either does not
    // affect the other.
    Rng split(uint64_t stream) const {
        Rng r(0);
        r.key_ = mix(key_ ^ mix(stream + 0x9E3779B97F4A7C15ULL));
        r.counter_ = 0;
        return r;
    }

    uint64_t next_u64() {
        ++counter_;
        return mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // 16-byte serialized state (key, counter), little-endian.
    std::vector<uint8_t> state() const {
        std::vector<uint8_t> out(16);
        for (int i = 0; i < 8; ++i) {
            out[i] = static_cast<uint8_t>(key_ >> (8 * i));
            out[8 + i] = static_cast<uint8_t>(counter_ >> (8 * i));
        }
        return out;
    }

    static Rng from_state(const std::vector<uint8_t>& bytes) {
        Rng r(0);
        if (bytes.size() == 16) {
            uint64_t k = 0, c = 0;
            for (int i = 0; i < 8; ++i) {
                k |= static_cast<uint64_t>(bytes[i]) << (8 * i);
                c |= static_cast<uint64_t>(bytes[8 + i]) << (8 * i);
            }
            r.key_ = k;
            r.counter_ = c;
        }
        return r;
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace mapunetr
