#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sparc {

inline constexpr const char* kToolVersion = "0.1.0";

// Base class for library failures. The CLI maps these to exit code 2;
// argument problems are caught earlier and exit with 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
// A scorer was asked for a granularity it cannot produce (e.g. Wanda heads).
struct GranularityError : Error { using Error::Error; };
struct EvalError : Error { using Error::Error; };

// ---- hashing ---------------------------------------------------------------

inline uint64_t fnv1a(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v);

// murmur3 finalizer; the stateless mix behind the counter-based init RNG.
constexpr uint64_t mix64(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ull;
  x ^= x >> 33;
  return x;
}

constexpr double unit_double(uint64_t x) {
  // top 53 bits -> [0, 1)
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// ---- deterministic RNG -----------------------------------------------------

// splitmix64 stream. Fully specified, platform independent; used everywhere a
// stateful generator is needed (batch order, sampling, random scorer).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double next_unit() { return unit_double(next_u64()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // unbiased bounded draw (rejection)
  uint64_t below(uint64_t n) {
    if (n == 0) throw Error("Rng::below: n must be positive");
    const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<size_t>(below(i))]);
    }
  }

 private:
  uint64_t state_;
};

// ---- provenance ------------------------------------------------------------

// Run metadata embedded in every artifact this toolkit writes: checkpoints,
// relevance maps, masks, curves, reports. Notes record method caveats that
// downstream readers should see next to the numbers.
struct Provenance {
  std::string tool_version = kToolVersion;
  uint64_t seed = 0;
  std::string config_hash;  // hex64 of fnv1a over the resolved run settings
  std::vector<std::string> notes;
};

// Compact single-line JSON object for embedding in headers and sidecars.
std::string provenance_json(const Provenance& p);

// ---- parallel helpers ------------------------------------------------------

// Resolve a thread-count request; 0 means "auto" (SPARC_THREADS env var, then
// hardware concurrency).
int resolve_threads(int requested);

// Runs fn(i) for i in [0, n). Work is chunked across `threads` workers; any
// exception is rethrown on the caller thread. Results must be written to
// index-addressed slots so reductions stay order-fixed.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace sparc
