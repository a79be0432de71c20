#pragma once

#include "rcn/dataset.hpp"
#include "rcn/rng.hpp"

namespace rcn {

/// Symmetric jitter ranges: translation and scale as fractions, rotation in
/// degrees. Translation is relative to the tight keypoint bounding box.
struct JitterSpec {
  double translate = 0.10;
  double scale = 0.10;
  double rotate_deg = 40.0;
  int max_tries = 20;

  void validate() const;
};

/// Maps (x, y) = (col, row) to (a x + b y + tx, c x + d y + ty).
struct Affine2 {
  double a = 1.0, b = 0.0, tx = 0.0;
  double c = 0.0, d = 1.0, ty = 0.0;

  void apply(double x, double y, double* ox, double* oy) const;
  Affine2 inverse() const;
  Affine2 then(const Affine2& next) const;
};

/// One sampled jitter draw.
struct JitterDraw {
  double angle_deg = 0.0;
  double scale = 1.0;
  /// Fractions of the bounding-box width / height.
  double shift_x = 0.0;
  double shift_y = 0.0;
};

JitterDraw sample_jitter(const JitterSpec& spec, Rng& rng);

/// Rotation by angle and scaling about the centre of the keypoints' bounding
/// box, followed by a shift of (shift_x * box_w, shift_y * box_h).
Affine2 jitter_affine(const KeypointSet& keypoints, const JitterDraw& draw);

/// Output pixel q samples the input at forward.inverse()(q) with bilinear
/// interpolation; samples outside the image read 0.
Tensor4 warp_image(const Tensor4& image, const Affine2& forward);

/// Keypoints mapped through `forward` and rounded to the grid.
KeypointSet warp_keypoints(const KeypointSet& keypoints, const Affine2& forward);

/// Draws transforms until every mapped keypoint stays in the image (at most
/// spec.max_tries); if none does the sample is returned unchanged. `used`
/// receives the applied transform (identity on fallback).
Sample jitter_augment(const Sample& sample, const JitterSpec& spec, Rng& rng, Affine2* used = nullptr);

struct OcclusionSpec {
  int side_min = 20;
  int side_max = 50;
  double fill = 0.0;

  void validate() const;
};

struct Rect {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
};

/// Sets one rectangle with independently drawn sides in [side_min, side_max]
/// to `fill`, placed uniformly among positions fully inside the image.
Sample occlude(const Sample& sample, const OcclusionSpec& spec, Rng& rng, Rect* where = nullptr);

}  // namespace rcn
