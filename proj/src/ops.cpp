#include "rcn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rcn/error.hpp"

namespace rcn::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void check_factor(int factor) {
  if (factor < 1) throw ConfigError("upsample factor must be >= 1, got " + std::to_string(factor));
}

void check_same_dims(const Tensor4& a, const Tensor4& b, const char* what) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(what) + ": " + a.dims().str() + " vs " + b.dims().str());
  }
}

struct ConvGeometry {
  std::size_t in_c, out_c, kh, kw, h, w;
  std::size_t rows() const { return in_c * kh * kw; }
  std::size_t cols() const { return h * w; }
};

ConvGeometry conv_geometry(const Tensor4& input, const Tensor4& kernels) {
  const Dims& x = input.dims();
  const Dims& k = kernels.dims();
  if (k.h % 2 == 0 || k.w % 2 == 0) {
    throw ConfigError("conv2d_same needs odd kernel extents, got " + std::to_string(k.h) + "x" +
                      std::to_string(k.w));
  }
  if (x.c != k.c) {
    throw ConfigError("conv2d_same channel mismatch: input has " + std::to_string(x.c) +
                      ", kernels expect " + std::to_string(k.c));
  }
  return {x.c, k.n, k.h, k.w, x.h, x.w};
}

// col[(c, di, dj), (i, j)] = x[c, i + di - ph, j + dj - pw], zero outside.
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (std::size_t di = 0; di < g.kh; ++di) {
      for (std::size_t dj = 0; dj < g.kw; ++dj) {
        const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(di) - ph;
        const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(dj) - pw;
        const std::ptrdiff_t j_lo = std::max<std::ptrdiff_t>(0, -oj);
        const std::ptrdiff_t j_hi = std::min<std::ptrdiff_t>(w, w - oj);
        for (std::ptrdiff_t i = 0; i < h; ++i) {
          double* dst = col + i * w;
          const std::ptrdiff_t si = i + oi;
          if (si < 0 || si >= h || j_lo >= j_hi) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          std::fill(dst, dst + j_lo, 0.0);
          std::copy(plane + si * w + j_lo + oj, plane + si * w + j_hi + oj, dst + j_lo);
          std::fill(dst + j_hi, dst + w, 0.0);
        }
        col += g.h * g.w;
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.in_c; ++c) {
    double* plane = x + c * g.h * g.w;
    for (std::size_t di = 0; di < g.kh; ++di) {
      for (std::size_t dj = 0; dj < g.kw; ++dj) {
        const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(di) - ph;
        const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(dj) - pw;
        const std::ptrdiff_t j_lo = std::max<std::ptrdiff_t>(0, -oj);
        const std::ptrdiff_t j_hi = std::min<std::ptrdiff_t>(w, w - oj);
        for (std::ptrdiff_t i = 0; i < h; ++i) {
          const std::ptrdiff_t si = i + oi;
          if (si < 0 || si >= h) continue;
          const double* src = col + i * w;
          double* dst = plane + si * w;
          for (std::ptrdiff_t j = j_lo; j < j_hi; ++j) dst[j + oj] += src[j];
        }
        col += g.h * g.w;
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.kh == 1 && g.kw == 1; }

}  // namespace

Tensor4 conv2d_same(const Tensor4& input, const Tensor4& kernels, std::span<const double> bias) {
  const ConvGeometry g = conv_geometry(input, kernels);
  if (bias.size() != g.out_c) {
    throw ConfigError("conv2d_same bias has " + std::to_string(bias.size()) + " entries for " +
                      std::to_string(g.out_c) + " output channels");
  }
  const std::size_t n = input.dims().n;
  Tensor4 out({n, g.out_c, g.h, g.w});
  ConstMapMat weights(kernels.raw(), static_cast<Eigen::Index>(g.out_c),
                      static_cast<Eigen::Index>(g.rows()));
  RowMat col;
  if (!is_pointwise(g)) col.resize(static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
  for (std::size_t s = 0; s < n; ++s) {
    const double* x = input.raw() + s * g.in_c * g.cols();
    MapMat y(out.raw() + s * g.out_c * g.cols(), static_cast<Eigen::Index>(g.out_c),
             static_cast<Eigen::Index>(g.cols()));
    if (is_pointwise(g)) {
      ConstMapMat xm(x, static_cast<Eigen::Index>(g.in_c), static_cast<Eigen::Index>(g.cols()));
      y.noalias() = weights * xm;
    } else {
      im2col(x, g, col.data());
      y.noalias() = weights * col;
    }
    for (std::size_t o = 0; o < g.out_c; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  }
  return out;
}

void conv2d_same_backward(const Tensor4& input, const Tensor4& kernels, const Tensor4& grad_out,
                          Tensor4* grad_input, Tensor4* grad_kernels, std::span<double> grad_bias) {
  const ConvGeometry g = conv_geometry(input, kernels);
  const std::size_t n = input.dims().n;
  if (grad_out.dims() != Dims{n, g.out_c, g.h, g.w}) {
    throw ShapeError("conv2d_same_backward: grad " + grad_out.dims().str());
  }
  if (grad_input) check_same_dims(*grad_input, input, "conv2d_same_backward input grad");
  if (grad_kernels) check_same_dims(*grad_kernels, kernels, "conv2d_same_backward kernel grad");
  if (!grad_bias.empty() && grad_bias.size() != g.out_c) {
    throw ShapeError("conv2d_same_backward: bias grad size");
  }
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto cols = static_cast<Eigen::Index>(g.cols());
  const auto outc = static_cast<Eigen::Index>(g.out_c);
  ConstMapMat weights(kernels.raw(), outc, rows);
  RowMat col;
  RowMat dcol;
  for (std::size_t s = 0; s < n; ++s) {
    const double* x = input.raw() + s * g.in_c * g.cols();
    ConstMapMat dy(grad_out.raw() + s * g.out_c * g.cols(), outc, cols);
    if (!grad_bias.empty()) {
      // Plain loop: Eigen's vectorized sum rounds differently depending on alignment.
      for (std::size_t o = 0; o < g.out_c; ++o) {
        const double* row = grad_out.raw() + (s * g.out_c + o) * g.cols();
        double acc = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) acc += row[j];
        grad_bias[o] += acc;
      }
    }
    if (grad_kernels) {
      MapMat dw(grad_kernels->raw(), outc, rows);
      if (is_pointwise(g)) {
        dw.noalias() += dy * ConstMapMat(x, rows, cols).transpose();
      } else {
        col.resize(rows, cols);
        im2col(x, g, col.data());
        dw.noalias() += dy * col.transpose();
      }
    }
    if (grad_input) {
      double* dx = grad_input->raw() + s * g.in_c * g.cols();
      if (is_pointwise(g)) {
        MapMat(dx, rows, cols).noalias() += weights.transpose() * dy;
      } else {
        dcol.noalias() = weights.transpose() * dy;
        col2im_add(dcol.data(), g, dx);
      }
    }
  }
}

std::size_t pooled_extent(std::size_t extent, int size, int stride) {
  if (size < 1 || stride < 1) throw ConfigError("pool size and stride must be >= 1");
  if (extent < static_cast<std::size_t>(size)) {
    throw ConfigError("pool window " + std::to_string(size) + " larger than input extent " +
                      std::to_string(extent));
  }
  return (extent - static_cast<std::size_t>(size)) / static_cast<std::size_t>(stride) + 1;
}

Pooled maxpool(const Tensor4& input, int size, int stride) {
  const Dims& d = input.dims();
  const std::size_t oh = pooled_extent(d.h, size, stride);
  const std::size_t ow = pooled_extent(d.w, size, stride);
  Pooled p{Tensor4({d.n, d.c, oh, ow}), std::vector<std::uint32_t>(d.n * d.c * oh * ow)};
  const auto sz = static_cast<std::size_t>(size);
  const auto st = static_cast<std::size_t>(stride);
  std::size_t o = 0;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = input.index(n, c, 0, 0);
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j, ++o) {
          std::size_t best = base + i * st * d.w + j * st;
          double best_v = input.data()[best];
          for (std::size_t di = 0; di < sz; ++di) {
            for (std::size_t dj = 0; dj < sz; ++dj) {
              const std::size_t idx = base + (i * st + di) * d.w + j * st + dj;
              if (input.data()[idx] > best_v) {
                best_v = input.data()[idx];
                best = idx;
              }
            }
          }
          p.output.data()[o] = best_v;
          p.argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return p;
}

void maxpool_backward(const Tensor4& grad_out, std::span<const std::uint32_t> argmax,
                      Tensor4& grad_input) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool_backward: argmax size");
  for (std::size_t o = 0; o < argmax.size(); ++o) grad_input.data()[argmax[o]] += grad_out.data()[o];
}

Tensor4 relu(const Tensor4& input) {
  Tensor4 out(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i) out.data()[i] = std::max(0.0, input.data()[i]);
  return out;
}

void relu_backward(const Tensor4& input, const Tensor4& grad_out, Tensor4& grad_input) {
  check_same_dims(input, grad_out, "relu_backward");
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (input.data()[i] > 0.0) grad_input.data()[i] += grad_out.data()[i];
  }
}

Tensor4 upsample_tile(const Tensor4& input, int factor) {
  check_factor(factor);
  const Dims& d = input.dims();
  const auto f = static_cast<std::size_t>(factor);
  Tensor4 out({d.n, d.c, d.h * f, d.w * f});
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto src = input.plane(n, c);
      auto dst = out.plane(n, c);
      const std::size_t ow = d.w * f;
      for (std::size_t i = 0; i < d.h * f; ++i) {
        for (std::size_t j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / f) * d.w + j / f];
      }
    }
  }
  return out;
}

void upsample_tile_backward(const Tensor4& grad_out, int factor, Tensor4& grad_input) {
  check_factor(factor);
  const Dims& d = grad_input.dims();
  const auto f = static_cast<std::size_t>(factor);
  if (grad_out.dims() != Dims{d.n, d.c, d.h * f, d.w * f}) {
    throw ShapeError("upsample_tile_backward: " + grad_out.dims().str());
  }
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto src = grad_out.plane(n, c);
      auto dst = grad_input.plane(n, c);
      const std::size_t ow = d.w * f;
      for (std::size_t i = 0; i < d.h * f; ++i) {
        for (std::size_t j = 0; j < ow; ++j) dst[(i / f) * d.w + j / f] += src[i * ow + j];
      }
    }
  }
}

namespace {

// Corner-aligned source position of output index i, split into an integer
// cell and an exact fractional weight.
struct Tap {
  std::size_t lo, hi;
  double t;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    if (out == 1 || in == 1) {
      taps[i] = {0, 0, 0.0};
      continue;
    }
    const std::size_t num = i * (in - 1);
    const std::size_t den = out - 1;
    const std::size_t lo = num / den;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, static_cast<double>(num % den) / static_cast<double>(den)};
  }
  return taps;
}

}  // namespace

Tensor4 resize_bilinear(const Tensor4& input, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ConfigError("resize_bilinear: empty target");
  const Dims& d = input.dims();
  const auto rt = bilinear_taps(d.h, out_h);
  const auto ct = bilinear_taps(d.w, out_w);
  Tensor4 out({d.n, d.c, out_h, out_w});
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto src = input.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < out_h; ++i) {
        const Tap& r = rt[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const Tap& q = ct[j];
          const double top = src[r.lo * d.w + q.lo] * (1.0 - q.t) + src[r.lo * d.w + q.hi] * q.t;
          const double bot = src[r.hi * d.w + q.lo] * (1.0 - q.t) + src[r.hi * d.w + q.hi] * q.t;
          dst[i * out_w + j] = top * (1.0 - r.t) + bot * r.t;
        }
      }
    }
  }
  return out;
}

void resize_bilinear_backward(const Tensor4& grad_out, Tensor4& grad_input) {
  const Dims& d = grad_input.dims();
  const Dims& g = grad_out.dims();
  if (g.n != d.n || g.c != d.c) throw ShapeError("resize_bilinear_backward: " + g.str());
  const auto rt = bilinear_taps(d.h, g.h);
  const auto ct = bilinear_taps(d.w, g.w);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto src = grad_out.plane(n, c);
      auto dst = grad_input.plane(n, c);
      for (std::size_t i = 0; i < g.h; ++i) {
        const Tap& r = rt[i];
        for (std::size_t j = 0; j < g.w; ++j) {
          const Tap& q = ct[j];
          const double v = src[i * g.w + j];
          dst[r.lo * d.w + q.lo] += v * (1.0 - r.t) * (1.0 - q.t);
          dst[r.lo * d.w + q.hi] += v * (1.0 - r.t) * q.t;
          dst[r.hi * d.w + q.lo] += v * r.t * (1.0 - q.t);
          dst[r.hi * d.w + q.hi] += v * r.t * q.t;
        }
      }
    }
  }
}

Tensor4 upsample_bilinear(const Tensor4& input, int factor) {
  check_factor(factor);
  const auto f = static_cast<std::size_t>(factor);
  return resize_bilinear(input, input.dims().h * f, input.dims().w * f);
}

namespace {

// For each output cell, the pool windows that read it.
std::vector<std::vector<std::size_t>> window_cover(std::size_t in, std::size_t out, int size,
                                                   int stride) {
  std::vector<std::vector<std::size_t>> cover(out);
  const auto sz = static_cast<std::size_t>(size);
  const auto st = static_cast<std::size_t>(stride);
  for (std::size_t j = 0; j < in; ++j) {
    for (std::size_t k = 0; k < sz; ++k) {
      const std::size_t i = j * st + k;
      if (i < out) cover[i].push_back(j);
    }
  }
  for (std::size_t i = 0; i < out; ++i) {
    if (cover[i].empty()) cover[i].push_back(std::min(i / st, in - 1));
  }
  return cover;
}

}  // namespace

Tensor4 upsample_windows(const Tensor4& input, int size, int stride, std::size_t out_h,
                         std::size_t out_w) {
  if (size < 1 || stride < 1) throw ConfigError("upsample_windows: size and stride must be >= 1");
  const Dims& d = input.dims();
  const auto rc = window_cover(d.h, out_h, size, stride);
  const auto cc = window_cover(d.w, out_w, size, stride);
  Tensor4 out({d.n, d.c, out_h, out_w});
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto src = input.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < out_h; ++i) {
        for (std::size_t j = 0; j < out_w; ++j) {
          double s = 0.0;
          for (std::size_t a : rc[i]) {
            for (std::size_t b : cc[j]) s += src[a * d.w + b];
          }
          dst[i * out_w + j] = s / static_cast<double>(rc[i].size() * cc[j].size());
        }
      }
    }
  }
  return out;
}

void upsample_windows_backward(const Tensor4& grad_out, int size, int stride, Tensor4& grad_input) {
  const Dims& d = grad_input.dims();
  const Dims& g = grad_out.dims();
  if (g.n != d.n || g.c != d.c) throw ShapeError("upsample_windows_backward: " + g.str());
  const auto rc = window_cover(d.h, g.h, size, stride);
  const auto cc = window_cover(d.w, g.w, size, stride);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto src = grad_out.plane(n, c);
      auto dst = grad_input.plane(n, c);
      for (std::size_t i = 0; i < g.h; ++i) {
        for (std::size_t j = 0; j < g.w; ++j) {
          const double v = src[i * g.w + j] / static_cast<double>(rc[i].size() * cc[j].size());
          for (std::size_t a : rc[i]) {
            for (std::size_t b : cc[j]) dst[a * d.w + b] += v;
          }
        }
      }
    }
  }
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  const Dims& da = a.dims();
  const Dims& db = b.dims();
  if (da.n != db.n || da.h != db.h || da.w != db.w) {
    throw ShapeError("concat_channels: " + da.str() + " vs " + db.str());
  }
  Tensor4 out({da.n, da.c + db.c, da.h, da.w});
  const std::size_t pa = da.c * da.plane();
  const std::size_t pb = db.c * db.plane();
  for (std::size_t n = 0; n < da.n; ++n) {
    std::copy_n(a.raw() + n * pa, pa, out.raw() + n * (pa + pb));
    std::copy_n(b.raw() + n * pb, pb, out.raw() + n * (pa + pb) + pa);
  }
  return out;
}

void concat_channels_backward(const Tensor4& grad_out, Tensor4* grad_a, Tensor4* grad_b) {
  const Dims& g = grad_out.dims();
  const std::size_t ca = grad_a ? grad_a->dims().c : g.c - (grad_b ? grad_b->dims().c : 0);
  const std::size_t pa = ca * g.plane();
  const std::size_t pb = (g.c - ca) * g.plane();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* src = grad_out.raw() + n * (pa + pb);
    if (grad_a) {
      double* dst = grad_a->raw() + n * pa;
      for (std::size_t i = 0; i < pa; ++i) dst[i] += src[i];
    }
    if (grad_b) {
      double* dst = grad_b->raw() + n * pb;
      for (std::size_t i = 0; i < pb; ++i) dst[i] += src[pa + i];
    }
  }
}

namespace {

std::vector<std::size_t> resolve_rows(std::size_t maps, const Tensor4& alpha,
                                      std::span<const std::size_t> rows) {
  std::vector<std::size_t> r(rows.begin(), rows.end());
  if (r.empty()) {
    if (alpha.dims().n != maps) {
      throw ConfigError("weighted_sum_maps: " + std::to_string(maps) + " branch maps but " +
                        std::to_string(alpha.dims().n) + " alpha branches");
    }
    for (std::size_t i = 0; i < maps; ++i) r.push_back(i);
  }
  if (r.size() != maps) throw ConfigError("weighted_sum_maps: row selection size mismatch");
  for (std::size_t x : r) {
    if (x >= alpha.dims().n) throw ConfigError("weighted_sum_maps: alpha row out of range");
  }
  return r;
}

}  // namespace

Tensor4 weighted_sum_maps(std::span<const Tensor4* const> maps, const Tensor4& alpha,
                          std::span<const std::size_t> rows) {
  if (maps.empty()) throw ConfigError("weighted_sum_maps: no branch maps");
  const auto r = resolve_rows(maps.size(), alpha, rows);
  const Dims d = maps.front()->dims();
  for (const Tensor4* m : maps) {
    if (m->dims() != d) throw ShapeError("weighted_sum_maps: branch dims " + m->dims().str() + " vs " + d.str());
  }
  const Dims& ad = alpha.dims();
  if (ad.c != d.c || ad.h != d.h || ad.w != d.w) {
    throw ShapeError("weighted_sum_maps: alpha " + ad.str() + " vs maps " + d.str());
  }
  Tensor4 out(d);
  for (std::size_t b = 0; b < maps.size(); ++b) {
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t k = 0; k < d.c; ++k) {
        auto a = alpha.plane(r[b], k);
        auto m = maps[b]->plane(n, k);
        auto o = out.plane(n, k);
        for (std::size_t i = 0; i < d.plane(); ++i) o[i] += a[i] * m[i];
      }
    }
  }
  return out;
}

void weighted_sum_maps_backward(std::span<const Tensor4* const> maps, const Tensor4& alpha,
                                std::span<const std::size_t> rows, const Tensor4& grad_out,
                                std::span<Tensor4* const> grad_maps, Tensor4* grad_alpha) {
  const auto r = resolve_rows(maps.size(), alpha, rows);
  const Dims d = grad_out.dims();
  for (std::size_t b = 0; b < maps.size(); ++b) {
    Tensor4* gm = b < grad_maps.size() ? grad_maps[b] : nullptr;
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t k = 0; k < d.c; ++k) {
        auto a = alpha.plane(r[b], k);
        auto m = maps[b]->plane(n, k);
        auto g = grad_out.plane(n, k);
        if (gm) {
          auto dm = gm->plane(n, k);
          for (std::size_t i = 0; i < d.plane(); ++i) dm[i] += a[i] * g[i];
        }
        if (grad_alpha) {
          auto da = grad_alpha->plane(r[b], k);
          for (std::size_t i = 0; i < d.plane(); ++i) da[i] += m[i] * g[i];
        }
      }
    }
  }
}

Tensor4 spatial_softmax(const Tensor4& pre_softmax) {
  const Dims& d = pre_softmax.dims();
  Tensor4 out(d);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto z = pre_softmax.plane(n, c);
      auto p = out.plane(n, c);
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        s += p[i];
      }
      for (double& v : p) v /= s;
    }
  }
  return out;
}

void spatial_softmax_backward(const Tensor4& probs, const Tensor4& grad_probs, Tensor4& grad_pre) {
  check_same_dims(probs, grad_probs, "spatial_softmax_backward");
  const Dims& d = probs.dims();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto p = probs.plane(n, c);
      auto g = grad_probs.plane(n, c);
      auto dz = grad_pre.plane(n, c);
      double dot = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * g[i];
      for (std::size_t i = 0; i < p.size(); ++i) dz[i] += p[i] * (g[i] - dot);
    }
  }
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
  check_same_dims(a, b, "add");
  Tensor4 out = a;
  out.add(b);
  return out;
}

}  // namespace rcn::ops
