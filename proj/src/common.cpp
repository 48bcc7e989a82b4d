#include "ragaudit/common.hpp"

#include <cmath>

namespace ragaudit {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::arity_too_large: return "arity_too_large";
    case ErrorCode::oracle_failure: return "oracle_failure";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::missing_anchor: return "missing_anchor";
    case ErrorCode::coalition_deficit: return "coalition_deficit";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::empty_corpus: return "empty_corpus";
    case ErrorCode::unknown_special_token: return "unknown_special_token";
    case ErrorCode::invalid_steps: return "invalid_steps";
    case ErrorCode::degenerate_denominator: return "degenerate_denominator";
    case ErrorCode::invalid_p: return "invalid_p";
    case ErrorCode::nonfinite_input: return "nonfinite_input";
    case ErrorCode::zero_variance: return "zero_variance";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::transport: return "transport";
    case ErrorCode::token_alignment: return "token_alignment";
    case ErrorCode::empty_generation: return "empty_generation";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::schema: return "schema";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

int Rng::bounded(int n) {
  if (n <= 0) throw RagError(ErrorCode::invalid_config, "Rng::bounded requires n > 0");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

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
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<int> Rng::sample_without_replacement(int n, int take) {
  if (take > n) throw RagError(ErrorCode::invalid_config, "sample_without_replacement: take > n");
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(take));
  for (int i = 0; i < take; ++i) {
    const int j = i + bounded(n - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    out.push_back(pool[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::uint64_t Rng::derive(std::uint64_t stream) {
  // Mix the stream id through splitmix so child streams are decorrelated.
  return splitmix64(next() ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace ragaudit
