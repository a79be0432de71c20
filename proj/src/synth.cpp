#include "rcn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "rcn/error.hpp"

namespace rcn {

void SynthSpec::validate() const {
  if (image_size < 8) throw ConfigError("synth image_size must be at least 8, got " + std::to_string(image_size));
  if (num_keypoints != 5 && num_keypoints != 68) {
    throw ConfigError("synth num_keypoints must be 5 or 68, got " + std::to_string(num_keypoints));
  }
  if (!(eye_distance_min > 0.0) || eye_distance_max < eye_distance_min || eye_distance_max > 0.6) {
    throw ConfigError("synth eye distance range must satisfy 0 < min <= max <= 0.6");
  }
  if (max_offset < 0.0 || max_offset > 0.25) throw ConfigError("synth max_offset must be in [0, 0.25]");
  if (max_rotation_deg < 0.0 || max_rotation_deg > 90.0) throw ConfigError("synth max_rotation_deg must be in [0, 90]");
  if (noise < 0.0) throw ConfigError("synth noise must be nonnegative");
  if (distractors < 0) throw ConfigError("synth distractors must be nonnegative");
  if (max_attempts < 1) throw ConfigError("synth max_attempts must be positive");
}

void FaceGeometry::to_pixel(double u, double v, double* x, double* y) const {
  const double c = std::cos(angle), s = std::sin(angle);
  *x = cx + unit * (u * c - v * s);
  *y = cy + unit * (u * s + v * c);
}

void FaceGeometry::to_canonical(double x, double y, double* u, double* v) const {
  const double c = std::cos(angle), s = std::sin(angle);
  const double dx = (x - cx) / unit, dy = (y - cy) / unit;
  *u = dx * c + dy * s;
  *v = -dx * s + dy * c;
}

bool FaceGeometry::inside_head(double x, double y, double margin) const {
  double u = 0.0, v = 0.0;
  to_canonical(x, y, &u, &v);
  const double au = kHeadAxisU + margin / unit;
  const double av = kHeadAxisV + margin / unit;
  const double dv = v - kHeadCenterV;
  return (u * u) / (au * au) + (dv * dv) / (av * av) <= 1.0;
}

std::vector<std::string> synth_keypoint_names(int num_keypoints) {
  if (num_keypoints == 5) return {"left_eye", "right_eye", "nose", "mouth_left", "mouth_right"};
  if (num_keypoints != 68) throw ConfigError("no keypoint layout for K=" + std::to_string(num_keypoints));
  std::vector<std::string> names;
  auto add = [&](const char* group, int count) {
    for (int i = 0; i < count; ++i) names.push_back(std::string(group) + std::to_string(i));
  };
  add("jaw", 17);
  add("brow_left", 5);
  add("brow_right", 5);
  add("nose_bridge", 4);
  add("nostril", 5);
  add("eye_left", 6);
  add("eye_right", 6);
  add("mouth_outer", 12);
  add("mouth_inner", 8);
  return names;
}

EvalConfig synth_eval_config(int num_keypoints) {
  if (num_keypoints == 68) return {36, 45};
  return {0, 1};
}

namespace {

constexpr double kPi = std::numbers::pi;

// Per-face shape variation in canonical units.
struct FaceShape {
  double nose_v = 0.25;
  double mouth_v = 0.62;
  double mouth_half_width = 0.38;
};

using Layout = std::vector<std::pair<double, double>>;

Layout layout_for(int k, const FaceShape& f) {
  if (k == 5) {
    return {{-0.5, -0.25}, {0.5, -0.25}, {0.0, f.nose_v}, {-f.mouth_half_width, f.mouth_v}, {f.mouth_half_width, f.mouth_v}};
  }
  Layout p;
  for (int i = 0; i < 17; ++i) {
    const double t = kPi * i / 16.0;
    p.emplace_back(-0.80 * std::cos(t), 0.15 + 1.0 * std::sin(t));
  }
  for (int side = -1; side <= 1; side += 2) {
    for (int i = 0; i < 5; ++i) {
      const double a = i / 4.0;
      const double u = side < 0 ? -0.72 + 0.56 * a : 0.16 + 0.56 * a;
      p.emplace_back(u, -0.50 - 0.08 * std::sin(kPi * a));
    }
  }
  for (int i = 0; i < 4; ++i) p.emplace_back(0.0, -0.22 + (f.nose_v + 0.22) * i / 3.0);
  for (int i = 0; i < 5; ++i) p.emplace_back(-0.14 + 0.07 * i, f.nose_v + 0.06);
  for (double cu : {-0.5, 0.5}) {
    for (int i = 0; i < 6; ++i) {
      const double phi = kPi - kPi * i / 3.0;
      p.emplace_back(cu + 0.15 * std::cos(phi), -0.25 - 0.06 * std::sin(phi));
    }
  }
  for (int i = 0; i < 12; ++i) {
    const double phi = kPi - 2.0 * kPi * i / 12.0;
    p.emplace_back(f.mouth_half_width * std::cos(phi), f.mouth_v - 0.12 * std::sin(phi));
  }
  for (int i = 0; i < 8; ++i) {
    const double phi = kPi - 2.0 * kPi * i / 8.0;
    p.emplace_back(0.7 * f.mouth_half_width * std::cos(phi), f.mouth_v - 0.05 * std::sin(phi));
  }
  return p;
}

// Fraction of a 4x4 subpixel grid around pixel (x, y) where `inside` holds.
template <typename F>
double coverage(double x, double y, F&& inside) {
  int hits = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (inside(x + (j + 0.5) / 4.0 - 0.5, y + (i + 0.5) / 4.0 - 0.5)) ++hits;
    }
  }
  return hits / 16.0;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - ax - t * vx, py - ay - t * vy);
}

struct Paint {
  double background;
  double skin;
  double eye_depth;
  double nose_depth;
  double mouth_depth;
  double brow_depth;
  double grad_x;
  double grad_y;
  double waves[3][4];
};

Paint draw_paint(Rng& rng) {
  Paint p{};
  p.skin = rng.uniform(0.35, 0.85);
  do {
    p.background = rng.uniform(0.02, 0.98);
  } while (std::abs(p.background - p.skin) < 0.2);
  p.eye_depth = rng.uniform(0.25, 0.35);
  p.nose_depth = rng.uniform(0.10, 0.20);
  p.mouth_depth = rng.uniform(0.20, 0.30);
  p.brow_depth = rng.uniform(0.15, 0.25);
  p.grad_x = rng.uniform(-0.1, 0.1);
  p.grad_y = rng.uniform(-0.1, 0.1);
  for (auto& w : p.waves) {
    w[0] = rng.uniform(0.0, 0.04);
    w[1] = rng.uniform(0.05, 0.3);
    w[2] = rng.uniform(0.0, 2.0 * kPi);
    w[3] = rng.uniform(0.0, 2.0 * kPi);
  }
  return p;
}

}  // namespace

std::vector<std::pair<double, double>> canonical_layout(int num_keypoints) {
  synth_keypoint_names(num_keypoints);
  return layout_for(num_keypoints, FaceShape{});
}

SynthFace render_face(const SynthSpec& spec, Rng& rng, const std::string& id) {
  spec.validate();
  const int s = spec.image_size;
  const auto sd = static_cast<double>(s);
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    FaceGeometry g;
    g.unit = rng.uniform(spec.eye_distance_min, spec.eye_distance_max) * sd;
    g.angle = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * kPi / 180.0;
    const double ox = rng.uniform(-spec.max_offset, spec.max_offset) * sd;
    const double oy = rng.uniform(-spec.max_offset, spec.max_offset) * sd;
    FaceShape shape;
    shape.nose_v = rng.uniform(0.18, 0.30);
    shape.mouth_v = rng.uniform(0.55, 0.68);
    shape.mouth_half_width = rng.uniform(0.30, 0.42);
    // Place the head centre at the image centre plus the offset.
    const double c = std::cos(g.angle), sn = std::sin(g.angle);
    g.cx = (sd - 1.0) / 2.0 + ox + g.unit * kHeadCenterV * sn;
    g.cy = (sd - 1.0) / 2.0 + oy - g.unit * kHeadCenterV * c;
    const Paint paint = draw_paint(rng);

    const Layout layout = layout_for(spec.num_keypoints, shape);
    KeypointSet kps;
    bool ok = true;
    for (const auto& [u, v] : layout) {
      double x = 0.0, y = 0.0;
      g.to_pixel(u, v, &x, &y);
      const Keypoint kp{static_cast<int>(std::lround(y)), static_cast<int>(std::lround(x))};
      if (kp.row < 1 || kp.col < 1 || kp.row > s - 2 || kp.col > s - 2) ok = false;
      kps.push_back(kp);
    }
    if (!ok) continue;

    // Feature anchors at rounded keypoint pixels so labels match the drawing.
    std::vector<std::pair<double, double>> eyes;
    std::pair<double, double> nose_tip;
    std::pair<double, double> mouth_l, mouth_r;
    std::vector<std::vector<std::pair<double, double>>> brows;
    auto px = [&](const Keypoint& k) { return std::pair<double, double>{k.col, k.row}; };
    if (spec.num_keypoints == 5) {
      eyes = {px(kps[0]), px(kps[1])};
      nose_tip = px(kps[2]);
      mouth_l = px(kps[3]);
      mouth_r = px(kps[4]);
    } else {
      for (double cu : {-0.5, 0.5}) {
        double x = 0.0, y = 0.0;
        g.to_pixel(cu, -0.25, &x, &y);
        eyes.emplace_back(x, y);
      }
      nose_tip = px(kps[30]);
      mouth_l = px(kps[48]);
      mouth_r = px(kps[54]);
      for (int b = 0; b < 2; ++b) {
        std::vector<std::pair<double, double>> chain;
        for (int i = 0; i < 5; ++i) chain.push_back(px(kps[static_cast<std::size_t>(17 + 5 * b + i)]));
        brows.push_back(chain);
      }
    }
    const double eye_sigma = std::max(0.7, 0.08 * g.unit);
    const double mouth_radius = std::max(0.7, 0.05 * g.unit);
    const double brow_radius = std::max(0.6, 0.03 * g.unit);
    // Nose triangle: apex at the tip, base towards the eyes.
    double nb1x = 0.0, nb1y = 0.0, nb2x = 0.0, nb2y = 0.0;
    {
      double tu = 0.0, tv = 0.0;
      g.to_canonical(nose_tip.first, nose_tip.second, &tu, &tv);
      g.to_pixel(tu - 0.14, tv - 0.32, &nb1x, &nb1y);
      g.to_pixel(tu + 0.14, tv - 0.32, &nb2x, &nb2y);
    }
    auto cross = [](double ax, double ay, double bx, double by, double x, double y) {
      return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
    };
    const double tx = nose_tip.first, ty = nose_tip.second;
    const double orient = cross(tx, ty, nb1x, nb1y, nb2x, nb2y);
    auto in_nose = [&](double x, double y) {
      const double a = cross(tx, ty, nb1x, nb1y, x, y) * orient;
      const double b = cross(nb1x, nb1y, nb2x, nb2y, x, y) * orient;
      const double c2 = cross(nb2x, nb2y, tx, ty, x, y) * orient;
      return a >= 0.0 && b >= 0.0 && c2 >= 0.0;
    };
    auto in_head = [&](double x, double y) { return g.inside_head(x, y); };
    // Background decoys: a skin-toned disc around an eye-like blob. Locally
    // they look like an eye; only the missing face around them gives them
    // away. They never overlap the head, so labels stay unambiguous.
    struct Decoy {
      double x, y, sigma, depth, radius;
    };
    std::vector<Decoy> decoys;
    for (int i = 0; i < spec.distractors; ++i) {
      const double sig = eye_sigma * rng.uniform(0.8, 1.25);
      const double depth = paint.eye_depth * rng.uniform(0.8, 1.2);
      const double radius = g.unit * rng.uniform(0.30, 0.45);
      for (int t = 0; t < 20; ++t) {
        const double bx = rng.uniform(0.0, sd - 1.0), by = rng.uniform(0.0, sd - 1.0);
        if (g.inside_head(bx, by, radius + 1.0)) continue;
        decoys.push_back({bx, by, sig, depth, radius});
        break;
      }
    }
    auto in_mouth = [&](double x, double y) {
      return segment_distance(x, y, mouth_l.first, mouth_l.second, mouth_r.first, mouth_r.second) <= mouth_radius;
    };
    auto in_brow = [&](double x, double y) {
      for (const auto& chain : brows) {
        for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
          if (segment_distance(x, y, chain[i].first, chain[i].second, chain[i + 1].first, chain[i + 1].second) <=
              brow_radius) {
            return true;
          }
        }
      }
      return false;
    };

    Sample smp;
    smp.id = id;
    smp.keypoints = kps;
    smp.image = Tensor4({1, 1, static_cast<std::size_t>(s), static_cast<std::size_t>(s)});
    auto img = smp.image.plane(0, 0);
    for (int r = 0; r < s; ++r) {
      for (int q = 0; q < s; ++q) {
        const double x = q, y = r;
        double bg = paint.background + paint.grad_x * (x / sd - 0.5) + paint.grad_y * (y / sd - 0.5);
        for (const auto& w : paint.waves) bg += w[0] * std::sin(w[1] * (x * std::cos(w[3]) + y * std::sin(w[3])) + w[2]);
        for (const Decoy& d : decoys) {
          const double a = coverage(x, y, [&](double px_, double py_) {
            return (px_ - d.x) * (px_ - d.x) + (py_ - d.y) * (py_ - d.y) <= d.radius * d.radius;
          });
          if (a == 0.0) continue;
          const double d2 = (x - d.x) * (x - d.x) + (y - d.y) * (y - d.y);
          const double patch = paint.skin - d.depth * std::exp(-d2 / (2.0 * d.sigma * d.sigma));
          bg = a * patch + (1.0 - a) * bg;
        }
        double skin = paint.skin;
        skin -= paint.nose_depth * coverage(x, y, in_nose);
        skin -= paint.mouth_depth * coverage(x, y, in_mouth);
        if (!brows.empty()) skin -= paint.brow_depth * coverage(x, y, in_brow);
        for (const auto& [ex, ey] : eyes) {
          const double d2 = (x - ex) * (x - ex) + (y - ey) * (y - ey);
          skin -= paint.eye_depth * std::exp(-d2 / (2.0 * eye_sigma * eye_sigma));
        }
        const double a = coverage(x, y, in_head);
        double v = a * skin + (1.0 - a) * bg;
        if (spec.noise > 0.0) v += spec.noise * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        img[static_cast<std::size_t>(r * s + q)] = std::round(v * 255.0) / 255.0;
      }
    }
    return {std::move(smp), g};
  }
  throw InputError("synthetic face " + id + ": no in-bounds pose after " + std::to_string(spec.max_attempts) +
                   " attempts");
}

std::vector<SynthFace> generate_faces(int count, std::uint64_t seed, const SynthSpec& spec) {
  if (count < 1) throw ConfigError("synthetic count must be at least 1, got " + std::to_string(count));
  spec.validate();
  std::vector<SynthFace> faces;
  faces.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    char id[48];
    std::snprintf(id, sizeof id, "s%llu_%05d", static_cast<unsigned long long>(seed), i);
    Rng rng = Rng::derive(seed, {0x5359u, static_cast<std::uint64_t>(i)});
    faces.push_back(render_face(spec, rng, id));
  }
  return faces;
}

Dataset generate_synthetic(int count, std::uint64_t seed, const SynthSpec& spec) {
  Dataset ds;
  ds.keypoint_names = synth_keypoint_names(spec.num_keypoints);
  ds.eval = synth_eval_config(spec.num_keypoints);
  for (SynthFace& f : generate_faces(count, seed, spec)) ds.samples.push_back(std::move(f.sample));
  return ds;
}

}  // namespace rcn
