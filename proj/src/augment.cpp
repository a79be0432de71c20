#include "rcn/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rcn/error.hpp"

namespace rcn {

void JitterSpec::validate() const {
  if (translate < 0.0 || scale < 0.0 || scale >= 1.0 || rotate_deg < 0.0 || rotate_deg > 180.0) {
    throw ConfigError("jitter ranges must be nonnegative with scale < 1 and rotation <= 180");
  }
  if (max_tries < 1) throw ConfigError("jitter max_tries must be positive");
}

void Affine2::apply(double x, double y, double* ox, double* oy) const {
  *ox = a * x + b * y + tx;
  *oy = c * x + d * y + ty;
}

Affine2 Affine2::inverse() const {
  const double det = a * d - b * c;
  if (det == 0.0) throw NumericalError("singular affine transform");
  Affine2 r;
  r.a = d / det;
  r.b = -b / det;
  r.c = -c / det;
  r.d = a / det;
  r.tx = -(r.a * tx + r.b * ty);
  r.ty = -(r.c * tx + r.d * ty);
  return r;
}

Affine2 Affine2::then(const Affine2& n) const {
  Affine2 r;
  r.a = n.a * a + n.b * c;
  r.b = n.a * b + n.b * d;
  r.c = n.c * a + n.d * c;
  r.d = n.c * b + n.d * d;
  r.tx = n.a * tx + n.b * ty + n.tx;
  r.ty = n.c * tx + n.d * ty + n.ty;
  return r;
}

JitterDraw sample_jitter(const JitterSpec& spec, Rng& rng) {
  JitterDraw j;
  j.angle_deg = rng.uniform(-spec.rotate_deg, spec.rotate_deg);
  j.scale = 1.0 + rng.uniform(-spec.scale, spec.scale);
  j.shift_x = rng.uniform(-spec.translate, spec.translate);
  j.shift_y = rng.uniform(-spec.translate, spec.translate);
  return j;
}

Affine2 jitter_affine(const KeypointSet& keypoints, const JitterDraw& draw) {
  if (keypoints.empty()) throw InputError("jitter: sample has no keypoints");
  int r0 = keypoints[0].row, r1 = r0, c0 = keypoints[0].col, c1 = c0;
  for (const Keypoint& p : keypoints) {
    r0 = std::min(r0, p.row);
    r1 = std::max(r1, p.row);
    c0 = std::min(c0, p.col);
    c1 = std::max(c1, p.col);
  }
  const double cx = 0.5 * (c0 + c1), cy = 0.5 * (r0 + r1);
  const double th = draw.angle_deg * std::numbers::pi / 180.0;
  const double cs = draw.scale * std::cos(th), sn = draw.scale * std::sin(th);
  Affine2 m;
  m.a = cs;
  m.b = -sn;
  m.c = sn;
  m.d = cs;
  m.tx = cx - (cs * cx - sn * cy) + draw.shift_x * (c1 - c0);
  m.ty = cy - (sn * cx + cs * cy) + draw.shift_y * (r1 - r0);
  return m;
}

Tensor4 warp_image(const Tensor4& image, const Affine2& forward) {
  const Dims& dm = image.dims();
  const Affine2 inv = forward.inverse();
  Tensor4 out(dm);
  const auto h = static_cast<long>(dm.h), w = static_cast<long>(dm.w);
  for (std::size_t n = 0; n < dm.n; ++n) {
    for (std::size_t ch = 0; ch < dm.c; ++ch) {
      auto src = image.plane(n, ch);
      auto dst = out.plane(n, ch);
      auto at = [&](long r, long c) { return (r < 0 || c < 0 || r >= h || c >= w) ? 0.0 : src[static_cast<std::size_t>(r * w + c)]; };
      for (long r = 0; r < h; ++r) {
        for (long c = 0; c < w; ++c) {
          double sx = 0.0, sy = 0.0;
          inv.apply(static_cast<double>(c), static_cast<double>(r), &sx, &sy);
          const double fx = std::floor(sx), fy = std::floor(sy);
          const double ax = sx - fx, ay = sy - fy;
          const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
          dst[static_cast<std::size_t>(r * w + c)] = (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                                                      ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
        }
      }
    }
  }
  return out;
}

KeypointSet warp_keypoints(const KeypointSet& keypoints, const Affine2& forward) {
  KeypointSet out;
  out.reserve(keypoints.size());
  for (const Keypoint& p : keypoints) {
    double x = 0.0, y = 0.0;
    forward.apply(p.col, p.row, &x, &y);
    out.push_back({static_cast<int>(std::lround(y)), static_cast<int>(std::lround(x))});
  }
  return out;
}

Sample jitter_augment(const Sample& sample, const JitterSpec& spec, Rng& rng, Affine2* used) {
  spec.validate();
  const auto h = static_cast<int>(sample.image.dims().h), w = static_cast<int>(sample.image.dims().w);
  for (int t = 0; t < spec.max_tries; ++t) {
    const Affine2 m = jitter_affine(sample.keypoints, sample_jitter(spec, rng));
    KeypointSet kps = warp_keypoints(sample.keypoints, m);
    const bool inside = std::all_of(kps.begin(), kps.end(),
                                    [&](const Keypoint& p) { return p.row >= 0 && p.col >= 0 && p.row < h && p.col < w; });
    if (!inside) continue;
    if (used) *used = m;
    return {sample.id, warp_image(sample.image, m), std::move(kps)};
  }
  if (used) *used = Affine2{};
  return sample;
}

void OcclusionSpec::validate() const {
  if (side_min < 0 || side_max < side_min) throw ConfigError("occlusion side range must satisfy 0 <= min <= max");
}

Sample occlude(const Sample& sample, const OcclusionSpec& spec, Rng& rng, Rect* where) {
  spec.validate();
  const Dims& d = sample.image.dims();
  if (static_cast<std::size_t>(spec.side_max) > std::min(d.h, d.w)) {
    throw ConfigError("occlusion side_max " + std::to_string(spec.side_max) + " exceeds image size " + d.str());
  }
  Rect r;
  r.height = static_cast<int>(rng.uniform_int(spec.side_min, spec.side_max));
  r.width = static_cast<int>(rng.uniform_int(spec.side_min, spec.side_max));
  r.row = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(d.h) - r.height));
  r.col = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(d.w) - r.width));
  if (where) *where = r;
  Sample out = sample;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      for (int i = r.row; i < r.row + r.height; ++i) {
        for (int j = r.col; j < r.col + r.width; ++j) {
          out.image(n, c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = spec.fill;
        }
      }
    }
  }
  return out;
}

}  // namespace rcn
