#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ragaudit {

using Vec = std::vector<double>;

/// Error category carried by every exception thrown from this library.
enum class ErrorCode {
  invalid_config,
  arity_too_large,
  oracle_failure,
  rank_deficient,
  missing_anchor,
  coalition_deficit,
  dimension_mismatch,
  empty_corpus,
  unknown_special_token,
  invalid_steps,
  degenerate_denominator,
  invalid_p,
  nonfinite_input,
  zero_variance,
  insufficient_data,
  empty_input,
  transport,
  token_alignment,
  empty_generation,
  shape_mismatch,
  schema,
  io,
};

class RagError : public std::runtime_error {
 public:
  RagError(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

const char* error_code_name(ErrorCode code);

/// Deterministic RNG wrapper. mt19937_64 output is fully specified by the
/// standard; the helpers below avoid std::*_distribution, whose sequences
/// are implementation defined, so identical seeds give identical streams on
/// any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return (next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased via rejection.
  int bounded(int n);

  /// Standard normal via Box-Muller.
  double normal();

  /// In-place Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[static_cast<std::size_t>(bounded(i + 1))]);
    }
  }

  /// `take` distinct values from {0..n-1}, in draw order.
  std::vector<int> sample_without_replacement(int n, int take);

  /// Derive an independent child seed for a named sub-stream.
  std::uint64_t derive(std::uint64_t stream);

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 step; used for seed derivation and stable hashing of configs.
std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a over a byte string; stable across platforms.
std::uint64_t fnv1a64(const std::string& data);

std::string to_hex(std::uint64_t value);

}  // namespace ragaudit
