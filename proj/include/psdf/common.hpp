#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace psdf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Error taxonomy. Codes map 1:1 onto the CLI's nonzero exit statuses.
enum class Errc {
  file_not_found = 1,
  parse_error = 2,
  io_error = 3,
  contract_violation = 4,
  numeric_error = 5,
  bad_argument = 6,
  empty_observation = 7,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic, platform-independent RNG (xoshiro256** seeded via splitmix64).
// All sampling in the library goes through this so seeds mean the same thing
// everywhere, independent of the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection-free modulo bias is negligible for n << 2^64; keep it exact anyway.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
    std::uint64_t x = next_u64();
    while (x > limit) x = next_u64();
    return x % n;
  }

  // Standard normal via Box-Muller, pair-cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  Vec3 normal3() {
    Vec3 v;
    v.x() = normal();
    v.y() = normal();
    v.z() = normal();
    return v;
  }

  // Derive an independent stream, e.g. one per epoch or per object.
  Rng fork(std::uint64_t tag) {
    std::uint64_t sm = next_u64() ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
    return Rng(splitmix64(sm));
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
  double cached_ = 0.0;
  bool has_cached_ = false;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = seed;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::uint64_t hash_combine(std::uint64_t hash, const MatrixXd& m) {
  return fnv1a64(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), hash);
}

std::string hex64(std::uint64_t value);

inline constexpr char kToolVersion[] = "0.1.0";

// Worker-thread bound for the batch helpers below. 0 means hardware concurrency.
void set_thread_count(int threads);
int thread_count();

// Runs fn(i) for i in [0, n). Each index writes only its own outputs, so the
// result is identical for any thread count; reductions happen at call sites in
// index order.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace psdf
