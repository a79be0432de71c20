#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"
#include "rcn/augment.hpp"
#include "rcn/dataset.hpp"
#include "rcn/error.hpp"
#include "rcn/image.hpp"
#include "rcn/synth.hpp"

using namespace rcn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("data-pipeline") {

TEST_CASE("synthetic generation is deterministic per seed") {
  SynthSpec spec;
  const Dataset a = generate_synthetic(10, 7, spec);
  const Dataset b = generate_synthetic(10, 7, spec);
  CHECK(a == b);
  CHECK(a.size() == 10);
  CHECK(a.image_size() == 80);
  CHECK(a.num_keypoints() == 5);
  CHECK_NOTHROW(a.validate());
  CHECK_FALSE(generate_synthetic(10, 8, spec) == a);
  for (const Sample& s : a.samples)
    for (double v : s.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(std::round(v * 255.0) == v * 255.0);
    }
  CHECK_THROWS_AS(generate_synthetic(0, 1, spec), ConfigError);
  SynthSpec bad = spec;
  bad.num_keypoints = 13;
  CHECK_THROWS_AS(generate_synthetic(1, 1, bad), ConfigError);
}

TEST_CASE("generated keypoints lie inside the head ellipse") {
  for (int k : {5, 68}) {
    SynthSpec spec;
    spec.num_keypoints = k;
    for (const SynthFace& f : generate_faces(40, 3, spec)) {
      CHECK(f.sample.keypoints.size() == static_cast<std::size_t>(k));
      for (const Keypoint& p : f.sample.keypoints) CHECK(f.geometry.inside_head(p.col, p.row, 0.75));
    }
  }
}

TEST_CASE("mean interocular distance matches the configured range") {
  SynthSpec spec;
  spec.noise = 0.0;
  spec.distractors = 0;
  const Dataset ds = generate_synthetic(1000, 5, spec);
  double sum = 0.0, lo = 1e9, hi = 0.0;
  for (const Sample& s : ds.samples) {
    const double d = interocular_distance(s.keypoints, ds.eval) / spec.image_size;
    sum += d;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  const double mid = (spec.eye_distance_min + spec.eye_distance_max) / 2.0;
  CHECK(std::abs(sum / 1000.0 - mid) <= 0.05 * mid);
  CHECK(lo >= spec.eye_distance_min * 0.95);
  CHECK(hi <= spec.eye_distance_max * 1.05);
}

TEST_CASE("impossible layouts fail after the retry budget") {
  SynthSpec spec;
  spec.image_size = 16;
  spec.eye_distance_min = spec.eye_distance_max = 0.6;
  spec.max_offset = 0.25;
  spec.max_attempts = 5;
  spec.num_keypoints = 68;
  CHECK_THROWS_AS(generate_synthetic(3, 1, spec), InputError);
}

TEST_CASE("preprocess examples") {
  const Tensor4 c({1, 1, 12, 12}, 0.37);
  CHECK(local_contrast_normalize(c).squared_norm() == 0.0);

  Rng rng(41);
  const Tensor4 g = oracle::random_tensor({1, 1, 12, 12}, rng, 0, 1);
  CHECK(to_grayscale(g) == g);
  const Tensor4 rgb = oracle::random_tensor({1, 3, 4, 4}, rng, 0, 1);
  const Tensor4 gray = to_grayscale(rgb);
  CHECK(gray.dims() == Dims{1, 1, 4, 4});
  CHECK(gray(0, 0, 2, 3) ==
        doctest::Approx(0.299 * rgb(0, 0, 2, 3) + 0.587 * rgb(0, 1, 2, 3) + 0.114 * rgb(0, 2, 2, 3)).epsilon(1e-14));

  Tensor4 affine = g;
  for (double& v : affine.data()) v = 2.5 * v + 0.3;
  CHECK(max_abs_diff(preprocess(affine), preprocess(g)) < 1e-6);
}

TEST_CASE("LCN matches a direct Gaussian-window computation away from the border") {
  Rng rng(42);
  const Tensor4 noise = oracle::random_tensor({1, 1, 32, 32}, rng, 0, 1);
  SynthSpec spec;
  spec.image_size = 32;
  const Tensor4 face = generate_synthetic(1, 9, spec).samples[0].image;
  long double w[9][9], wsum = 0.0L;
  for (int a = 0; a < 9; ++a)
    for (int b = 0; b < 9; ++b) {
      w[a][b] = std::exp(-((a - 4) * (a - 4) + (b - 4) * (b - 4)) / 18.0L);
      wsum += w[a][b];
    }
  for (const Tensor4* t : {&noise, &face}) {
    const Tensor4 out = local_contrast_normalize(*t);
    auto centred = [&](int r, int c) {
      long double m = 0.0L;
      for (int a = 0; a < 9; ++a)
        for (int b = 0; b < 9; ++b) m += w[a][b] * (*t)(0, 0, r + a - 4, c + b - 4);
      return (*t)(0, 0, r, c) - m / wsum;
    };
    double worst = 0.0;
    for (int r = 8; r < 24; ++r)
      for (int c = 8; c < 24; ++c) {
        long double var = 0.0L;
        for (int a = 0; a < 9; ++a)
          for (int b = 0; b < 9; ++b) {
            const long double v = centred(r + a - 4, c + b - 4);
            var += w[a][b] * v * v;
          }
        const long double sd = std::max(std::sqrt(var / wsum), 1e-4L);
        worst = std::max(worst, std::abs(out(0, 0, r, c) - static_cast<double>(centred(r, c) / sd)));
      }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("PGM and PPM round trips") {
  const fs::path d = fresh_dir("rcn_pnm");
  fs::create_directories(d);
  const Sample s = generate_synthetic(1, 4, {}).samples[0];
  write_pgm((d / "a.pgm").string(), s.image);
  CHECK(read_pnm((d / "a.pgm").string()) == s.image);
  Tensor4 rgb({1, 3, 3, 2});
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb.data()[i] = static_cast<double>(i * 13 % 256) / 255.0;
  write_ppm((d / "b.ppm").string(), rgb);
  CHECK(read_pnm((d / "b.ppm").string()) == rgb);
  CHECK_THROWS_AS(read_pnm((d / "missing.pgm").string()), LoadError);
  fs::remove_all(d);
}

TEST_CASE("jitter with zero ranges is the identity") {
  const Sample s = generate_synthetic(1, 2, {}).samples[0];
  Rng rng(1);
  Affine2 used;
  const Sample j = jitter_augment(s, {0.0, 0.0, 0.0, 20}, rng, &used);
  CHECK(j == s);
}

TEST_CASE("jitter keypoints follow an independent affine oracle") {
  const KeypointSet kps{{20, 30}, {22, 50}, {35, 40}, {50, 32}, {51, 49}};
  const JitterDraw draw{17.0, 1.06, 0.05, -0.08};
  const Affine2 a = jitter_affine(kps, draw);
  // Oracle: translate the box centre to the origin, rotate+scale, move back, shift.
  const double cx = (30 + 50) / 2.0, cy = (20 + 51) / 2.0, bw = 20, bh = 31;
  const double th = draw.angle_deg * std::numbers::pi / 180.0;
  for (const Keypoint& p : kps) {
    const double dx = p.col - cx, dy = p.row - cy;
    const double ex = draw.scale * (std::cos(th) * dx - std::sin(th) * dy) + cx + draw.shift_x * bw;
    const double ey = draw.scale * (std::sin(th) * dx + std::cos(th) * dy) + cy + draw.shift_y * bh;
    double ox = 0.0, oy = 0.0;
    a.apply(p.col, p.row, &ox, &oy);
    CHECK(ox == doctest::Approx(ex).epsilon(1e-12));
    CHECK(oy == doctest::Approx(ey).epsilon(1e-12));
  }
  const KeypointSet warped = warp_keypoints(kps, a);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    double ox = 0.0, oy = 0.0;
    a.apply(kps[i].col, kps[i].row, &ox, &oy);
    CHECK(warped[i] == Keypoint{static_cast<int>(std::lround(oy)), static_cast<int>(std::lround(ox))});
  }
}

TEST_CASE("rotating by theta then -theta restores keypoints") {
  Rng rng(43);
  const Dataset ds = generate_synthetic(20, 11, {});
  for (const Sample& s : ds.samples) {
    const JitterDraw d = sample_jitter(JitterSpec{}, rng);
    const Affine2 fwd = jitter_affine(s.keypoints, {d.angle_deg, 1.0, 0.0, 0.0});
    const KeypointSet there = warp_keypoints(s.keypoints, fwd);
    const Affine2 back = jitter_affine(s.keypoints, {-d.angle_deg, 1.0, 0.0, 0.0});
    for (std::size_t i = 0; i < there.size(); ++i) {
      double x = 0.0, y = 0.0, bx = 0.0, by = 0.0;
      fwd.apply(s.keypoints[i].col, s.keypoints[i].row, &x, &y);
      back.apply(x, y, &bx, &by);
      CHECK(std::abs(bx - s.keypoints[i].col) < 1e-9);
      CHECK(std::abs(by - s.keypoints[i].row) < 1e-9);
      back.apply(there[i].col, there[i].row, &bx, &by);
      CHECK(std::hypot(bx - s.keypoints[i].col, by - s.keypoints[i].row) <= 1.0);
    }
  }
}

TEST_CASE("augmented keypoints stay on the transformed face") {
  SynthSpec spec;
  const auto faces = generate_faces(30, 12, spec);
  Rng rng(44);
  for (const SynthFace& f : faces) {
    Affine2 used;
    const Sample j = jitter_augment(f.sample, JitterSpec{}, rng, &used);
    const Affine2 inv = used.inverse();
    for (std::size_t i = 0; i < j.keypoints.size(); ++i) {
      const Keypoint& p = j.keypoints[i];
      CHECK(p.row >= 0);
      CHECK(p.col >= 0);
      CHECK(p.row < spec.image_size);
      CHECK(p.col < spec.image_size);
      double x = 0.0, y = 0.0;
      inv.apply(p.col, p.row, &x, &y);
      CHECK(f.geometry.inside_head(x, y, 1.5));
    }
    // Pixels are the original image sampled at the inverse-mapped location.
    const Keypoint& nose = j.keypoints[2];
    double x = 0.0, y = 0.0;
    inv.apply(nose.col, nose.row, &x, &y);
    const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    const Tensor4& im = f.sample.image;
    const double expect = (1 - fy) * ((1 - fx) * im(0, 0, y0, x0) + fx * im(0, 0, y0, x0 + 1)) +
                          fy * ((1 - fx) * im(0, 0, y0 + 1, x0) + fx * im(0, 0, y0 + 1, x0 + 1));
    CHECK(j.image(0, 0, nose.row, nose.col) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("jitter falls back to the original sample") {
  Sample s = generate_synthetic(1, 2, {}).samples[0];
  s.keypoints[0] = {0, 0};
  s.keypoints[1] = {79, 79};
  Rng rng(45);
  JitterSpec spec;
  spec.scale = 0.0;
  spec.rotate_deg = 0.0;
  spec.translate = 0.5;
  spec.max_tries = 3;
  CHECK(jitter_augment(s, spec, rng) == s);
}

TEST_CASE("occlusion examples") {
  const Sample s = generate_synthetic(1, 3, {}).samples[0];
  Rng rng(46);
  for (int trial = 0; trial < 200; ++trial) {
    Rect r;
    const Sample o = occlude(s, {}, rng, &r);
    CHECK(o.keypoints == s.keypoints);
    CHECK(r.height >= 20);
    CHECK(r.height <= 50);
    CHECK(r.width >= 20);
    CHECK(r.width <= 50);
    CHECK(r.row >= 0);
    CHECK(r.col >= 0);
    CHECK(r.row + r.height <= 80);
    CHECK(r.col + r.width <= 80);
    const double frac = static_cast<double>(r.height * r.width) / 6400.0;
    CHECK(frac >= 400.0 / 6400.0);
    CHECK(frac <= 2500.0 / 6400.0);
    for (int i = 0; i < 80; ++i)
      for (int j = 0; j < 80; ++j) {
        const bool in = i >= r.row && i < r.row + r.height && j >= r.col && j < r.col + r.width;
        if (in) {
          CHECK(o.image(0, 0, i, j) == 0.0);
        } else if (o.image(0, 0, i, j) != s.image(0, 0, i, j)) {
          FAIL("pixel outside the rectangle changed");
        }
      }
  }
  CHECK(occlude(s, {0, 0, 0.0}, rng) == s);
  CHECK_THROWS_AS(occlude(s, {20, 90, 0.0}, rng), ConfigError);
  CHECK_THROWS_AS(occlude(s, {30, 20, 0.0}, rng), ConfigError);
}

TEST_CASE("augmentation streams are deterministic") {
  const Sample s = generate_synthetic(1, 3, {}).samples[0];
  Rng a = Rng::derive(9, {1, 2}), b = Rng::derive(9, {1, 2});
  CHECK(occlude(jitter_augment(s, {}, a), {}, a) == occlude(jitter_augment(s, {}, b), {}, b));
}

TEST_CASE("dataset save/load round trip") {
  const fs::path d = fresh_dir("rcn_ds");
  SynthSpec spec;
  spec.num_keypoints = 68;
  spec.image_size = 40;
  const Dataset ds = generate_synthetic(5, 21, spec);
  save_dataset(ds, d.string());
  CHECK(fs::exists(d / "manifest.csv"));
  CHECK(fs::exists(d / "dataset.meta"));
  const Dataset back = load_dataset(d.string());
  CHECK(back == ds);
  CHECK(back.eval.left_eye == 36);
  CHECK(back.eval.right_eye == 45);
  fs::remove_all(d);
}

TEST_CASE("dataset load errors carry context") {
  const fs::path d = fresh_dir("rcn_ds_err");
  const Dataset ds = generate_synthetic(3, 22, {});
  save_dataset(ds, d.string());
  const std::string manifest = (d / "manifest.csv").string();
  std::ifstream in(manifest);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  in.close();
  auto write = [&](const std::vector<std::string>& ls) {
    std::ofstream out(manifest, std::ios::trunc);
    for (const auto& l : ls) out << l << '\n';
  };

  fs::rename(d / (ds.samples[1].id + ".pgm"), d / "moved.pgm");
  std::string e = error_of([&] { load_dataset(d.string()); });
  CHECK(e.find(ds.samples[1].id + ".pgm") != std::string::npos);
  fs::rename(d / "moved.pgm", d / (ds.samples[1].id + ".pgm"));

  auto bad = lines;
  auto cells = split(bad[2], ',');
  cells[2] = "80";
  std::string joined;
  for (std::size_t i = 0; i < cells.size(); ++i) joined += (i ? "," : "") + cells[i];
  bad[2] = joined;
  write(bad);
  e = error_of([&] { load_dataset(d.string()); });
  CHECK(e.find(ds.samples[1].id) != std::string::npos);

  bad = lines;
  bad[3] = bad[2];
  write(bad);
  e = error_of([&] { load_dataset(d.string()); });
  CHECK(e.find("duplicate") != std::string::npos);

  bad = lines;
  bad[1] = bad[1].substr(0, bad[1].rfind(','));
  write(bad);
  e = error_of([&] { load_dataset(d.string()); });
  CHECK(e.find(":2") != std::string::npos);
  CHECK_THROWS_AS(load_dataset(d.string()), LoadError);

  write(lines);
  CHECK(load_dataset(d.string()) == ds);
  fs::remove_all(d);
}

}  // TEST_SUITE
