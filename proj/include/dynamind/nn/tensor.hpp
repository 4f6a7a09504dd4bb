#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dynamind::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG. All randomness in the project flows through explicitly
// seeded streams; children derived by name so call order does not matter.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : base_seed_(seed), state_(splitmix64(seed ^ 0x5851f42d4c957f2dULL)) {
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ULL;
  }

  RandomStream child(std::string_view tag) const { return RandomStream(splitmix64(base_seed_ ^ hash_tag(tag))); }
  RandomStream child(std::string_view tag, std::uint64_t index) const {
    return RandomStream(splitmix64(splitmix64(base_seed_ ^ hash_tag(tag)) + index));
  }

  std::uint64_t next_u64() {
    // xorshift64*
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dULL;
  }

  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // inclusive range, rejection sampled
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = std::uint64_t(hi - lo + 1);
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return lo + std::int64_t(r % span);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = std::size_t(uniform_int(0, std::int64_t(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  Matrix randn(Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal() * scale;
    return m;
  }

  std::string save_state() const {
    std::ostringstream os;
    os << base_seed_ << ' ' << state_;
    return os.str();
  }
  void load_state(const std::string& s) {
    std::istringstream is(s);
    if (!(is >> base_seed_ >> state_)) throw std::runtime_error("RandomStream: bad state string");
  }

 private:
  std::uint64_t base_seed_;
  std::uint64_t state_;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace dynamind::nn
