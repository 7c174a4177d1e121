#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fsc {

/// Dense row-major matrix of 32-bit reals.
///
/// Every public operation keeps the entries finite; reductions accumulate in
/// double precision and round once on store.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  /// "rows x cols", used in error messages.
  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// x (n x in) times w (in x out) plus a per-column bias (empty = no bias).
Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias);

Matrix transpose(const Matrix& a);

inline constexpr float kLayerNormEps = 1e-5f;

std::vector<float> layer_norm(std::span<const float> x, std::span<const float> gain,
                              std::span<const float> bias, float eps = kLayerNormEps);

/// Applies layer_norm to every row of x.
Matrix layer_norm_rows(const Matrix& x, std::span<const float> gain, std::span<const float> bias,
                       float eps = kLayerNormEps);

/// Max-shifted softmax. Throws ShapeError on empty input.
std::vector<double> softmax(std::span<const double> x);

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// ln(1 + e^x) without overflow for large |x|.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr double kGeluTanhScale = 0.7978845608;  // sqrt(2/pi)

/// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluTanhScale * (x + 0.044715 * x * x * x)));
}

/// Counter-based 64-bit generator (SplitMix64 finalizer over key + n * golden
/// gamma). A stream is a value: copying it forks an identical sequence.
/// Independent streams come from derive()/child() with a label, never from
/// sharing one stream between owners.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  static RngStream derive(std::uint64_t seed, std::uint64_t label);
  static RngStream derive(std::uint64_t seed, std::string_view label);

  RngStream child(std::uint64_t label) const;
  RngStream child(std::string_view label) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t z);

/// Standard normal variate, Box-Muller (cosine branch) over two uniforms.
double gaussian(RngStream& rng);

/// Fills out with standard normals by Marsaglia's polar method; each
/// accepted uniform pair yields two variates (the last may be dropped).
void fill_gaussian(std::span<double> out, RngStream& rng);

/// Fisher-Yates shuffle driven by rng.
template <typename T>
void shuffle(std::vector<T>& items, RngStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Throws NumericError if any entry is NaN/Inf; what names the tensor.
void check_finite(std::span<const float> values, std::string_view what);

}  // namespace fsc
