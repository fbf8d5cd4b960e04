#pragma once
// Counter-based splittable RNG. Every stochastic operation takes an explicit
// stream, so seeded A/B experiments consume randomness reproducibly no matter
// how the surrounding code is reordered or batched.
#include <cmath>
#include <cstdint>
#include <string_view>

namespace poseshift::num {

namespace detail {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// splitmix64 output function; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_bytes(std::string_view s) {
  // FNV-1a 64
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

class RngStream {
 public:
  RngStream() = default;
  static RngStream root(std::uint64_t seed) { return RngStream(detail::mix64(seed + detail::kGolden)); }

  // Child streams are independent of the parent's counter position.
  RngStream split(std::string_view name) const {
    return RngStream(detail::mix64(key_ ^ detail::hash_bytes(name)));
  }
  RngStream split(std::uint64_t index) const {
    return RngStream(detail::mix64(key_ ^ detail::mix64((index + 1) * detail::kGolden)));
  }

  std::uint64_t next_u64() {
    std::uint64_t c = ctr_++;
    return detail::mix64(key_ + detail::mix64((c + 1) * detail::kGolden));
  }

  // [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [lo, hi)
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo));
  }

  // Box-Muller; always consumes exactly two draws so the counter advance is
  // independent of the value pattern.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return ctr_; }

 private:
  explicit RngStream(std::uint64_t key) : key_(key) {}
  std::uint64_t key_ = 0;
  std::uint64_t ctr_ = 0;
};

}  // namespace poseshift::num
