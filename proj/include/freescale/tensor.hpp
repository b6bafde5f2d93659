#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace freescale {

/// Base class for errors raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration (CLI exit code 2).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// A NaN or Inf showed up where finite values are required (CLI exit code 3).
class NumericError : public Error {
public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of 32-bit reals. Images and latents use NCHW.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != element_count(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + to_string(shape_));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-D accessors (NCHW).
  float& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  float at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  // 2-D accessors (rows, cols).
  float& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
      throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  static void validate_shape(const Shape& shape) {
    for (auto d : shape) {
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + to_string(shape));
    }
  }

  Shape shape_;
  std::vector<float> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + to_string(t.shape()));
  }
}

// Elementwise helpers. These are exact float ops, so no 64-bit accumulation is needed.

template <typename F>
Tensor map(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F&& f, const char* what = "zip") {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](float x, float y) { return x + y; }, "add");
}
inline Tensor operator-(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](float x, float y) { return x - y; }, "sub");
}
inline Tensor operator*(float s, const Tensor& a) {
  return map(a, [s](float x) { return s * x; });
}

/// a*x + b*y evaluated in double and rounded once.
inline Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
  return zip(x, y, [a, b](float u, float v) { return static_cast<float>(a * u + b * v); }, "axpby");
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

inline Moments moments(const Tensor& t) {
  if (t.empty()) return {};
  double sum = 0.0;
  for (float v : t.data()) sum += v;
  const double mean = sum / double(t.size());
  double sq = 0.0;
  for (float v : t.data()) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / double(t.size()))};
}

}  // namespace freescale
