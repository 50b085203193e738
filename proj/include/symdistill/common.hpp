#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace symdistill {

// Every error carries a stable name; the CLI prints it on stderr.
class Error : public std::runtime_error {
public:
    Error(const char* name, const std::string& what) : std::runtime_error(what), name_(name) {}
    const char* name() const noexcept { return name_; }

private:
    const char* name_;
};

#define SYMDISTILL_ERROR(Name)                                              \
    struct Name : ::symdistill::Error {                                     \
        explicit Name(const std::string& what) : Error(#Name, what) {}      \
    }

SYMDISTILL_ERROR(ShapeMismatch);
SYMDISTILL_ERROR(IoError);
SYMDISTILL_ERROR(SchemaError);
SYMDISTILL_ERROR(InvalidArgument);

// SplitMix64 finalizer, used to derive independent seeds for sub-streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

/// Worker count for data-parallel loops. SYMDISTILL_WORKERS overrides the
/// hardware default; set_worker_count overrides both.
int worker_count();
void set_worker_count(int n);

}  // namespace symdistill
