#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcn/dataset.hpp"
#include "rcn/rng.hpp"

namespace rcn {

/// Layout parameters of the procedural face renderer.
struct SynthSpec {
  int image_size = 80;
  /// 5 (eyes, nose tip, mouth corners) or 68.
  int num_keypoints = 5;
  /// Eye-centre distance range as a fraction of image_size.
  double eye_distance_min = 0.30;
  double eye_distance_max = 0.40;
  /// Head centre offset range from the image centre, fraction of image_size.
  double max_offset = 0.08;
  double max_rotation_deg = 15.0;
  /// Std of additive pixel noise before quantization.
  double noise = 0.02;
  /// Eye-like decoys (skin disc plus dark blob) scattered over the background.
  int distractors = 6;
  int max_attempts = 100;

  void validate() const;
};

/// Analytic geometry of one rendered face, in pixel coordinates (x = col,
/// y = row). Canonical face units are multiples of the eye distance.
struct FaceGeometry {
  double cx = 0.0;
  double cy = 0.0;
  double unit = 1.0;
  double angle = 0.0;

  /// Canonical (u, v) to pixel (x, y).
  void to_pixel(double u, double v, double* x, double* y) const;
  /// Pixel (x, y) to canonical (u, v).
  void to_canonical(double x, double y, double* u, double* v) const;
  /// Whether pixel (x, y) lies inside the head ellipse, optionally grown by
  /// `margin` pixels.
  bool inside_head(double x, double y, double margin = 0.0) const;
};

/// Head ellipse in canonical units.
inline constexpr double kHeadCenterV = 0.15;
inline constexpr double kHeadAxisU = 0.92;
inline constexpr double kHeadAxisV = 1.18;

struct SynthFace {
  Sample sample;
  FaceGeometry geometry;
};

std::vector<std::string> synth_keypoint_names(int num_keypoints);
EvalConfig synth_eval_config(int num_keypoints);

/// Canonical (u, v) position of every keypoint.
std::vector<std::pair<double, double>> canonical_layout(int num_keypoints);

/// Renders one face from `rng`; retries poses whose keypoints leave the image
/// and throws InputError after spec.max_attempts failures.
SynthFace render_face(const SynthSpec& spec, Rng& rng, const std::string& id);

/// `count` faces; sample i uses the stream derived from (seed, i) and is
/// named "s<seed>_<i>" zero-padded.
std::vector<SynthFace> generate_faces(int count, std::uint64_t seed, const SynthSpec& spec);
Dataset generate_synthetic(int count, std::uint64_t seed, const SynthSpec& spec);

}  // namespace rcn
