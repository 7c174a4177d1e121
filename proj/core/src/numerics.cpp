#include "fsc/numerics.hpp"

#include <algorithm>
#include <limits>

#include "fsc/error.hpp"

namespace fsc {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix dimensions must be positive, got " + shape_string());
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix dimensions must be positive, got " + shape_string());
  }
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix " + shape_string() + " given " + std::to_string(data_.size()) +
                     " values");
  }
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) { return linear(a, b, {}); }

Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias) {
  if (x.cols() != w.rows()) {
    throw ShapeError("matmul shape mismatch: " + x.shape_string() + " * " + w.shape_string());
  }
  if (!bias.empty() && bias.size() != w.cols()) {
    throw ShapeError("bias of length " + std::to_string(bias.size()) + " for output width " +
                     std::to_string(w.cols()));
  }
  Matrix out(x.rows(), w.cols());
  std::vector<double> acc(w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (bias.empty()) {
      std::fill(acc.begin(), acc.end(), 0.0);
    } else {
      std::copy(bias.begin(), bias.end(), acc.begin());
    }
    const auto xi = x.row(i);
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xik = xi[k];
      if (xik == 0.0) {
        continue;
      }
      const float* wk = w.row(k).data();
      double* a = acc.data();
      const std::size_t n = acc.size();
      for (std::size_t j = 0; j < n; ++j) {
        a[j] += xik * static_cast<double>(wk[j]);
      }
    }
    auto oi = out.row(i);
    std::transform(acc.begin(), acc.end(), oi.begin(),
                   [](double v) { return static_cast<float>(v); });
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      t(c, r) = a(r, c);
    }
  }
  return t;
}

std::vector<float> layer_norm(std::span<const float> x, std::span<const float> gain,
                              std::span<const float> bias, float eps) {
  if (x.size() != gain.size() || x.size() != bias.size() || x.empty()) {
    throw ShapeError("layer_norm length mismatch: x=" + std::to_string(x.size()) +
                     " gain=" + std::to_string(gain.size()) + " bias=" + std::to_string(bias.size()));
  }
  double mean = 0.0;
  for (float v : x) {
    mean += v;
  }
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (float v : x) {
    const double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>((x[i] - mean) * inv * gain[i] + bias[i]);
  }
  return out;
}

Matrix layer_norm_rows(const Matrix& x, std::span<const float> gain, std::span<const float> bias,
                       float eps) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto normed = layer_norm(x.row(r), gain, bias, eps);
    std::copy(normed.begin(), normed.end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) {
    throw ShapeError("softmax of an empty vector");
  }
  const double peak = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - peak);
    total += out[i];
  }
  for (double& v : out) {
    v /= total;
  }
  return out;
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t hash_label(std::string_view label) {
  // FNV-1a, then finalized so short labels spread over all bits.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

std::uint64_t combine(std::uint64_t key, std::uint64_t label) {
  return mix64(key ^ mix64(label + kGamma));
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed)), counter_(0) {}

RngStream RngStream::derive(std::uint64_t seed, std::uint64_t label) {
  return RngStream(seed).child(label);
}

RngStream RngStream::derive(std::uint64_t seed, std::string_view label) {
  return RngStream(seed).child(label);
}

RngStream RngStream::child(std::uint64_t label) const { return {combine(key_, label), 0}; }

RngStream RngStream::child(std::string_view label) const {
  return {combine(key_, hash_label(label)), 0};
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGamma);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) {
    throw UsageError("RngStream::below requires n > 0");
  }
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = next_u64();
  while (v >= limit) {
    v = next_u64();
  }
  return v % n;
}

double gaussian(RngStream& rng) {
  constexpr double kTwoPi = 6.283185307179586476925;
  const double u1 = 1.0 - rng.uniform();  // (0, 1]
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

void fill_gaussian(std::span<double> out, RngStream& rng) {
  std::size_t i = 0;
  while (i < out.size()) {
    const double u = 2.0 * rng.uniform() - 1.0;
    const double v = 2.0 * rng.uniform() - 1.0;
    const double s = u * u + v * v;
    if (s >= 1.0 || s == 0.0) continue;
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    out[i++] = u * f;
    if (i < out.size()) out[i++] = v * f;
  }
}

void check_finite(std::span<const float> values, std::string_view what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value in " + std::string(what) + "[" + std::to_string(i) + "]");
    }
  }
}

}  // namespace fsc
