#pragma once

// Shared vocabulary types, error classes and seeded RNG helpers.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ttcal {

using TokenId = std::uint32_t;
using Tokens = std::vector<TokenId>;

/// Raised when a caller breaks an operation's precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a configuration cannot be realized (e.g. a world whose gold
/// path does not fit in max_len).
class ConstructionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an exhaustive computation would exceed its configured cap.
class CapExceeded : public std::runtime_error {
 public:
  CapExceeded(const std::string& what, std::uint64_t required, std::uint64_t cap)
      : std::runtime_error(what + ": requires " + std::to_string(required) +
                           " but cap is " + std::to_string(cap)),
        required_(required),
        cap_(cap) {}
  std::uint64_t required() const noexcept { return required_; }
  std::uint64_t cap() const noexcept { return cap_; }

 private:
  std::uint64_t required_;
  std::uint64_t cap_;
};

inline void require(bool ok, const char* what) {
  if (!ok) throw ContractViolation(what);
}

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent per-rollout streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return mix64(mix64(base) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                    std::uint64_t b) noexcept {
  return derive_seed(derive_seed(base, a), b);
}

/// Uniform draw in [0, 1).
inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// FNV-1a, 64 bit. Stable across platforms, used for config hashes and
/// per-completion noise seeds.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_tokens(const Tokens& tokens) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (TokenId t : tokens) h = fnv1a(&t, sizeof t, h);
  return h;
}

}  // namespace ttcal
