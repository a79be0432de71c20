#include "rcn/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>

#include "rcn/error.hpp"

namespace rcn {

std::string Dims::str() const {
  std::ostringstream s;
  s << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return s.str();
}

Tensor4::Tensor4(Dims dims, double fill) : dims_(dims), values_(dims.size(), fill) {}

Tensor4::Tensor4(Dims dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
  if (values_.size() != dims_.size()) {
    throw ShapeError("tensor " + dims_.str() + " given " + std::to_string(values_.size()) +
                     " values");
  }
}

Tensor4 Tensor4::slice_batch(std::size_t first, std::size_t count) const {
  if (first + count > dims_.n) throw ShapeError("batch slice out of range for " + dims_.str());
  Dims d = dims_;
  d.n = count;
  const std::size_t per = dims_.c * dims_.plane();
  std::vector<double> v(values_.begin() + static_cast<std::ptrdiff_t>(first * per),
                        values_.begin() + static_cast<std::ptrdiff_t>((first + count) * per));
  return Tensor4(d, std::move(v));
}

void Tensor4::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void Tensor4::add(const Tensor4& other) {
  if (other.dims_ != dims_) {
    throw ShapeError("add: " + dims_.str() + " vs " + other.dims_.str());
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
}

void Tensor4::scale(double s) {
  for (double& v : values_) v *= s;
}

double Tensor4::sum() const {
  double s = 0.0;
  for (double v : values_) s += v;
  return s;
}

double Tensor4::squared_norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

bool Tensor4::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor4 stack_batch(std::span<const Tensor4> samples) {
  if (samples.empty()) throw ShapeError("stack_batch: no samples");
  Dims d = samples.front().dims();
  std::vector<double> v;
  v.reserve(d.size() * samples.size());
  std::size_t n = 0;
  for (const Tensor4& s : samples) {
    Dims sd = s.dims();
    if (sd.c != d.c || sd.h != d.h || sd.w != d.w) {
      throw ShapeError("stack_batch: " + sd.str() + " vs " + d.str());
    }
    v.insert(v.end(), s.data().begin(), s.data().end());
    n += sd.n;
  }
  d.n = n;
  return Tensor4(d, std::move(v));
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (a.dims() != b.dims()) throw ShapeError("max_abs_diff: " + a.dims().str() + " vs " + b.dims().str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

namespace {

constexpr std::array<char, 4> kMagic{'T', '4', 'v', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), 8);
  if (!in) throw LoadError("truncated tensor block");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor4& t) {
  out.write(kMagic.data(), 4);
  const Dims& d = t.dims();
  for (std::size_t e : {d.n, d.c, d.h, d.w}) put_u64(out, e);
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

Tensor4 read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kMagic) throw LoadError("missing T4v1 magic");
  Dims d;
  d.n = get_u64(in);
  d.c = get_u64(in);
  d.h = get_u64(in);
  d.w = get_u64(in);
  // 2^31 elements is far beyond anything this library produces.
  if (d.n == 0 || d.h == 0 || d.w == 0 || d.size() > (std::size_t{1} << 31)) {
    throw LoadError("implausible tensor dims " + d.str());
  }
  std::vector<double> v(d.size());
  for (double& x : v) x = std::bit_cast<double>(get_u64(in));
  return Tensor4(d, std::move(v));
}

}  // namespace rcn
