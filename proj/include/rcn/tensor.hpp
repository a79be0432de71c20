#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rcn {

/// Extents of a rank-4 (batch, channel, row, col) array.
struct Dims {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Dims&) const = default;
  std::string str() const;
};

/// Dense row-major (n, c, h, w) array of doubles.
///
/// A zero channel count is accepted so that concatenation has a neutral
/// element; every other extent is expected to be positive.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Dims dims, double fill = 0.0);
  Tensor4(Dims dims, std::vector<double> values);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * dims_.c + c) * dims_.h + h) * dims_.w + w;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return values_[index(n, c, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return values_[index(n, c, h, w)];
  }

  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }
  double* raw() { return values_.data(); }
  const double* raw() const { return values_.data(); }

  /// Contiguous h*w plane of sample n, channel c.
  std::span<double> plane(std::size_t n, std::size_t c) {
    return {values_.data() + index(n, c, 0, 0), dims_.plane()};
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return {values_.data() + index(n, c, 0, 0), dims_.plane()};
  }

  /// Copy of sample range [first, first + count).
  Tensor4 slice_batch(std::size_t first, std::size_t count) const;

  void fill(double v);
  /// this += other, dims must agree.
  void add(const Tensor4& other);
  void scale(double s);
  double sum() const;
  double squared_norm() const;
  bool all_finite() const;

  /// Bitwise value equality (NaN never equal).
  bool operator==(const Tensor4& other) const = default;

 private:
  Dims dims_{};
  std::vector<double> values_;
};

/// Stack single-sample tensors along the batch axis.
Tensor4 stack_batch(std::span<const Tensor4> samples);

double max_abs_diff(const Tensor4& a, const Tensor4& b);

// "T4v1" block: magic, four little-endian u64 dims, n*c*h*w little-endian
// IEEE-754 doubles in row-major order.
void write_tensor(std::ostream& out, const Tensor4& t);
Tensor4 read_tensor(std::istream& in);

}  // namespace rcn
