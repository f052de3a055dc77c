#pragma once

// Dense real vectors/matrices, the SplitMix64 generator and the reductions
// everything else is built on. Reductions accumulate strictly left to right
// so results are bit-reproducible for a given input.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedalign/error.hpp"

namespace fedalign {

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorKind::NonFiniteResult,
                  std::string(what) + ": entry " + std::to_string(i) + " is not finite");
    }
  }
}

inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(what) + ": lengths " + std::to_string(a) + " and " + std::to_string(b));
  }
}

}  // namespace detail

// Immutable flat vector of finite doubles.
class RealVec {
 public:
  RealVec() = default;
  explicit RealVec(std::vector<double> data) : data_(std::move(data)) {
    detail::require_finite(data_, "RealVec");
  }
  RealVec(std::initializer_list<double> init) : RealVec(std::vector<double>(init)) {}

  static RealVec zeros(std::size_t n) { return RealVec(std::vector<double>(n, 0.0)); }

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const RealVec&, const RealVec&) = default;

 private:
  std::vector<double> data_;
};

// Row-major dense matrix.
class RealMat {
 public:
  RealMat() = default;
  RealMat(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  RealMat(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorKind::DimensionMismatch,
                  "RealMat: data length " + std::to_string(data_.size()) + " != " +
                      std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const RealMat&, const RealMat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// SplitMix64 (Steele, Lea & Flood 2014): a Weyl counter stepped by the golden
// gamma and passed through a fixed 64-bit finalizer. Fully specified, so a seed
// produces the same stream on every platform and in every language port.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() noexcept {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection of the short final bucket.
  std::uint64_t uniform_int(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  // Standard normal via Box-Muller; one draw per pair of uniforms, no caching.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

// Child seed for a (parent, tag...) path. Adding a new tag never perturbs
// streams derived under other tags.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
  return Rng::mix(Rng::mix(parent + Rng::kGamma) ^ (tag * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag_a, std::uint64_t tag_b) noexcept {
  return derive_seed(derive_seed(parent, tag_a), tag_b);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_length(a.size(), b.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double dot(const RealVec& a, const RealVec& b) { return dot(a.span(), b.span()); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  detail::require_same_length(a.size(), b.size(), "squared_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline double squared_distance(const RealVec& a, const RealVec& b) {
  return squared_distance(a.span(), b.span());
}

inline double norm(const RealVec& a) { return std::sqrt(dot(a, a)); }

inline RealVec axpby(double alpha, const RealVec& a, double beta, const RealVec& b) {
  detail::require_same_length(a.size(), b.size(), "axpby");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i] + beta * b[i];
  detail::require_finite(out, "axpby");
  return RealVec(std::move(out));
}

inline RealVec scale(double alpha, const RealVec& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i];
  detail::require_finite(out, "scale");
  return RealVec(std::move(out));
}

// Fisher-Yates driven by rng; returns a permutation of 0..n-1.
inline std::vector<std::size_t> shuffle(Rng& rng, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace fedalign
