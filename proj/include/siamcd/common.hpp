#pragma once

// Shared infrastructure: error taxonomy, deterministic RNG, parallel loops.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace siamcd {

// ============================================================================
// Errors
// ============================================================================
// Every failure surfaced by the library derives from Error. The CLI maps the
// concrete type to an exit code (config -> 2, data/shape/parse -> 3,
// everything else -> 4).

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Aligned storage
// ============================================================================
// Every buffer the GEMM kernels touch gets a fixed 64-byte alignment. SIMD
// kernels peel loops based on pointer alignment; pinning it makes results
// bit-stable across runs instead of varying with heap layout.

template <typename T, std::size_t Align>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + Align - 1) / Align * Align;
    void* p = std::aligned_alloc(Align, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  bool operator==(const AlignedAllocator&) const noexcept { return true; }
  bool operator!=(const AlignedAllocator&) const noexcept { return false; }
};

using AlignedFloats = std::vector<float, AlignedAllocator<float, 64>>;

// ============================================================================
// Seeding and RNG
// ============================================================================
// All randomness in the toolkit flows from explicit 64-bit seeds through this
// PCG32 generator. No std:: distributions are used anywhere so that streams
// are bit-stable across standard library implementations.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a child seed from a parent seed and a stream tag. Used to build the
// seed hierarchy (run seed -> epoch seed -> per-patch seed, ...).
inline std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t tag) {
  return splitmix64(parent ^ splitmix64(tag + 0x9e3779b97f4a7c15ULL));
}

// FNV-1a, used to fold identifiers (site ids) into the seed hierarchy.
inline std::uint64_t str_hash64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0x14057b7ef767814fULL) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += splitmix64(seed);
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((~rot + 1u) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform_float() { return static_cast<float>(next_u32() >> 8) * 0x1.0p-24f; }

  // Uniform integer in [0, n), Lemire rejection, unbiased.
  std::int64_t uniform_int(std::int64_t n) {
    if (n <= 0) throw ContractError("Rng::uniform_int requires n > 0");
    std::uint32_t bound = static_cast<std::uint32_t>(n);
    std::uint32_t threshold = (~bound + 1u) % bound;
    while (true) {
      std::uint32_t x = next_u32();
      std::uint64_t m = static_cast<std::uint64_t>(x) * bound;
      if (static_cast<std::uint32_t>(m) >= threshold) {
        return static_cast<std::int64_t>(m >> 32);
      }
    }
  }

  // Standard normal via Box-Muller (no cached spare; keeps state two words).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::pair<std::uint64_t, std::uint64_t> state() const { return {state_, inc_}; }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

// ============================================================================
// Parallelism
// ============================================================================
// One knob caps every parallel region (the CLI --workers flag sets it).
// Loops are statically partitioned and every output element is written by
// exactly one iteration, so results do not depend on the worker count.

inline int& worker_cap() {
  static int cap = 0;  // 0 = hardware default
  return cap;
}

inline void set_max_workers(int n) { worker_cap() = n; }

inline int effective_workers() {
#ifdef _OPENMP
  int cap = worker_cap();
  int hw = omp_get_max_threads();
  return cap > 0 ? (cap < hw ? cap : hw) : hw;
#else
  return 1;
#endif
}

template <typename F>
void parallel_for(std::int64_t n, F&& f) {
#ifdef _OPENMP
  int workers = effective_workers();
  if (workers > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(workers)
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace siamcd
