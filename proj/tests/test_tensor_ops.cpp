#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "rcn/error.hpp"
#include "rcn/ops.hpp"
#include "rcn/tape.hpp"

using namespace rcn;

namespace {

std::vector<double> bias_of(const Tensor4& b) { return {b.data().begin(), b.data().end()}; }

}  // namespace

TEST_SUITE("tensor-core") {

TEST_CASE("tensor layout and serialization") {
  Tensor4 t({2, 3, 4, 5});
  CHECK(t.size() == 120);
  t(1, 2, 3, 4) = 7.5;
  CHECK(t.data()[t.size() - 1] == 7.5);
  Rng rng(3);
  const Tensor4 r = oracle::random_tensor({2, 1, 3, 2}, rng);
  std::stringstream ss;
  write_tensor(ss, r);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "T4v1");
  CHECK(bytes.size() == 4 + 4 * 8 + 12 * 8);
  CHECK(read_tensor(ss) == r);
  std::stringstream bad("T4v0xxxxxxxx");
  CHECK_THROWS(read_tensor(bad));
}

TEST_CASE("conv2d_same examples") {
  Rng rng(1);
  const Tensor4 zero({1, 1, 4, 4});
  const Tensor4 k = oracle::random_tensor({3, 1, 3, 3}, rng);
  CHECK(ops::conv2d_same(zero, k, std::vector<double>(3, 0.0)) == Tensor4({1, 3, 4, 4}));

  Tensor4 ident({1, 1, 3, 3});
  ident(0, 0, 1, 1) = 1.0;
  const Tensor4 x = oracle::random_tensor({2, 1, 6, 5}, rng);
  CHECK(ops::conv2d_same(x, ident, std::vector<double>{0.0}) == x);

  const Tensor4 x2 = oracle::random_tensor({2, 3, 5, 5}, rng);
  const Tensor4 k2 = oracle::random_tensor({4, 3, 3, 3}, rng);
  const std::vector<double> b2{0.1, -0.2, 0.3, 0.0};
  CHECK(max_abs_diff(ops::conv2d_same(x2, k2, b2), oracle::conv(x2, k2, b2)) < 1e-10);

  CHECK_THROWS_AS(ops::conv2d_same(x2, oracle::random_tensor({4, 2, 3, 3}, rng), b2), ConfigError);
  CHECK_THROWS_AS(ops::conv2d_same(x2, oracle::random_tensor({4, 3, 2, 3}, rng), b2), ConfigError);
}

TEST_CASE("maxpool examples") {
  const Tensor4 x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto p = ops::maxpool(x, 2, 2);
  CHECK(p.output.dims() == Dims{1, 1, 1, 1});
  CHECK(p.output.data()[0] == 4.0);
  Rng rng(2);
  CHECK(ops::maxpool(oracle::random_tensor({1, 1, 5, 5}, rng), 3, 2).output.dims() == Dims{1, 1, 2, 2});
  const Tensor4 r = oracle::random_tensor({1, 2, 6, 6}, rng);
  CHECK(ops::maxpool(r, 2, 2).output == oracle::maxpool(r, 2, 2));
  CHECK_THROWS_AS(ops::maxpool(x, 3, 1), ConfigError);
}

TEST_CASE("maxpool ties route gradient to the first cell") {
  const Tensor4 x({1, 1, 2, 2}, {5, 5, 5, 5});
  const auto p = ops::maxpool(x, 2, 2);
  Tensor4 g(x.dims());
  ops::maxpool_backward(Tensor4({1, 1, 1, 1}, 1.0), p.argmax, g);
  CHECK(g == Tensor4({1, 1, 2, 2}, {1, 0, 0, 0}));
}

TEST_CASE("relu examples") {
  const Tensor4 x({1, 1, 1, 3}, {-1, 0, 2});
  CHECK(ops::relu(x) == Tensor4({1, 1, 1, 3}, {0, 0, 2}));
  const Tensor4 neg({1, 2, 3, 3}, -0.5);
  CHECK(ops::relu(neg).sum() == 0.0);
  Tensor4 g(neg.dims());
  ops::relu_backward(neg, Tensor4(neg.dims(), 1.0), g);
  CHECK(g.squared_norm() == 0.0);
  Rng rng(4);
  const Tensor4 r = oracle::random_tensor({2, 3, 4, 4}, rng);
  CHECK(ops::relu(r) == oracle::relu(r));
}

TEST_CASE("upsample_tile examples") {
  CHECK(ops::upsample_tile(Tensor4({1, 1, 1, 1}, 5.0), 2) == Tensor4({1, 1, 2, 2}, 5.0));
  Rng rng(5);
  const Tensor4 r = oracle::random_tensor({1, 1, 3, 3}, rng);
  CHECK(ops::upsample_tile(r, 1) == r);
  const Tensor4 up = ops::upsample_tile(r, 4);
  CHECK(up.dims() == Dims{1, 1, 12, 12});
  CHECK(up == oracle::tile(r, 4));
  CHECK_THROWS_AS(ops::upsample_tile(r, 0), ConfigError);
  Tensor4 g(r.dims());
  ops::upsample_tile_backward(Tensor4(up.dims(), 1.0), 4, g);
  CHECK(g == Tensor4(r.dims(), 16.0));
}

TEST_CASE("upsample_bilinear examples") {
  const Tensor4 c({1, 2, 3, 3}, 0.7);
  const Tensor4 up = ops::upsample_bilinear(c, 3);
  CHECK(up.dims() == Dims{1, 2, 9, 9});
  for (double v : up.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-14));
  Rng rng(6);
  const Tensor4 r = oracle::random_tensor({1, 1, 3, 4}, rng);
  CHECK(ops::upsample_bilinear(r, 1) == r);
  CHECK_THROWS_AS(ops::upsample_bilinear(r, 0), ConfigError);

  const Tensor4 ramp({1, 1, 2, 2}, {0, 1, 0, 1});
  const Tensor4 u = ops::upsample_bilinear(ramp, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(u(0, 0, i, 0) == 0.0);
    CHECK(u(0, 0, i, 3) == 1.0);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(u(0, 0, i, j) == u(0, 0, 0, j));
      if (j > 0) CHECK(u(0, 0, i, j) >= u(0, 0, i, j - 1));
    }
  }
  CHECK(max_abs_diff(ops::resize_bilinear(r, 7, 9), oracle::bilinear(r, 7, 9)) < 1e-12);
}

TEST_CASE("upsample_windows inverts pool geometry") {
  Rng rng(7);
  const Tensor4 r = oracle::random_tensor({1, 2, 2, 2}, rng);
  CHECK(ops::upsample_windows(r, 2, 2, 4, 4) == ops::upsample_tile(r, 2));
  // 3x3 stride-2 windows over 5 cells overlap on the middle row/column.
  const Tensor4 u = ops::upsample_windows(r, 3, 2, 5, 5);
  CHECK(u.dims() == Dims{1, 2, 5, 5});
  CHECK(u(0, 0, 0, 0) == r(0, 0, 0, 0));
  CHECK(u(0, 0, 4, 4) == r(0, 0, 1, 1));
  CHECK(u(0, 1, 2, 0) == doctest::Approx((r(0, 1, 0, 0) + r(0, 1, 1, 0)) / 2.0));
}

TEST_CASE("concat_channels examples") {
  Rng rng(8);
  const Tensor4 a = oracle::random_tensor({1, 2, 4, 4}, rng);
  const Tensor4 b = oracle::random_tensor({1, 3, 4, 4}, rng);
  const Tensor4 ab = ops::concat_channels(a, b);
  CHECK(ab.dims() == Dims{1, 5, 4, 4});
  CHECK(ab(0, 0, 2, 3) == a(0, 0, 2, 3));
  CHECK(ab(0, 2, 1, 1) == b(0, 0, 1, 1));
  CHECK(ab == oracle::concat(a, b));
  CHECK(ops::concat_channels(a, Tensor4({1, 0, 4, 4})) == a);
  CHECK_THROWS_AS(ops::concat_channels(a, Tensor4({1, 1, 3, 4})), ShapeError);
  Tensor4 ga(a.dims()), gb(b.dims());
  Tensor4 go = oracle::random_tensor(ab.dims(), rng);
  ops::concat_channels_backward(go, &ga, &gb);
  CHECK(ops::concat_channels(ga, gb) == go);
}

TEST_CASE("weighted_sum_maps examples") {
  Rng rng(9);
  const Tensor4 m = oracle::random_tensor({1, 2, 4, 4}, rng);
  const Tensor4* one[] = {&m};
  CHECK(ops::weighted_sum_maps(one, Tensor4({1, 2, 4, 4}, 1.0)) == m);

  const Tensor4 m2 = oracle::random_tensor({1, 2, 4, 4}, rng);
  const Tensor4* two[] = {&m, &m2};
  Tensor4 alpha = oracle::random_tensor({2, 2, 4, 4}, rng);
  for (std::size_t k = 0; k < 2; ++k)
    for (double& v : alpha.plane(1, k)) v = 0.0;
  const Tensor4 first = ops::weighted_sum_maps(std::span<const Tensor4* const>(two, 1), alpha.slice_batch(0, 1));
  CHECK(ops::weighted_sum_maps(two, alpha) == first);

  std::vector<Tensor4> maps;
  for (int r = 0; r < 3; ++r) maps.push_back(oracle::random_tensor({1, 2, 4, 4}, rng));
  const Tensor4* ptrs[] = {&maps[0], &maps[1], &maps[2]};
  const Tensor4 a3 = oracle::random_tensor({3, 2, 4, 4}, rng);
  CHECK(max_abs_diff(ops::weighted_sum_maps(ptrs, a3), oracle::weighted_sum(maps, a3)) < 1e-12);
  CHECK_THROWS_AS(ops::weighted_sum_maps(ptrs, alpha), ConfigError);
}

TEST_CASE("spatial_softmax examples") {
  const Tensor4 u = ops::spatial_softmax(Tensor4({1, 1, 3, 5}, 2.0));
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 15.0).epsilon(1e-14));
  Rng rng(10);
  const Tensor4 z = oracle::random_tensor({2, 3, 4, 4}, rng, -5, 5);
  Tensor4 shifted = z;
  for (double& v : shifted.data()) v += 123.25;
  CHECK(max_abs_diff(ops::spatial_softmax(z), ops::spatial_softmax(shifted)) <= 1e-12);
  const Tensor4 p = ops::spatial_softmax(Tensor4({1, 1, 2, 2}, {0, std::log(3.0), 0, 0}));
  CHECK(p(0, 0, 0, 0) == doctest::Approx(1.0 / 6).epsilon(1e-14));
  CHECK(p(0, 0, 0, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p(0, 0, 1, 0) == doctest::Approx(1.0 / 6).epsilon(1e-14));
  CHECK(p(0, 0, 1, 1) == doctest::Approx(1.0 / 6).epsilon(1e-14));
  // Overflow safety.
  const Tensor4 big = ops::spatial_softmax(Tensor4({1, 1, 1, 3}, {1000, 1000, 0}));
  CHECK(big.all_finite());
  CHECK(big(0, 0, 0, 0) == doctest::Approx(0.5));
}

TEST_CASE("shape algebra over random dims") {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const Dims d{static_cast<std::size_t>(rng.uniform_int(1, 2)), static_cast<std::size_t>(rng.uniform_int(1, 4)),
                 static_cast<std::size_t>(rng.uniform_int(3, 8)), static_cast<std::size_t>(rng.uniform_int(3, 8))};
    const Tensor4 x = oracle::random_tensor(d, rng);
    const std::size_t oc = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const std::size_t kh = 2 * static_cast<std::size_t>(rng.uniform_int(0, 2)) + 1;
    const std::size_t kw = 2 * static_cast<std::size_t>(rng.uniform_int(0, 2)) + 1;
    CHECK(ops::conv2d_same(x, Tensor4({oc, d.c, kh, kw}), std::vector<double>(oc, 0.0)).dims() ==
          Dims{d.n, oc, d.h, d.w});
    const int size = static_cast<int>(rng.uniform_int(1, 3)), stride = static_cast<int>(rng.uniform_int(1, 3));
    CHECK(ops::maxpool(x, size, stride).output.dims() ==
          Dims{d.n, d.c, (d.h - size) / stride + 1, (d.w - size) / stride + 1});
    const int f = static_cast<int>(rng.uniform_int(1, 4));
    CHECK(ops::upsample_tile(x, f).dims() == Dims{d.n, d.c, d.h * f, d.w * f});
    CHECK(ops::upsample_bilinear(x, f).dims() == Dims{d.n, d.c, d.h * f, d.w * f});
    CHECK(ops::relu(x).dims() == d);
    CHECK(ops::spatial_softmax(x).dims() == d);
    CHECK(ops::concat_channels(x, x).dims() == Dims{d.n, 2 * d.c, d.h, d.w});
  }
}

TEST_CASE("brute-force oracle sweep up to (2,4,8,8)") {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    const Dims d{static_cast<std::size_t>(rng.uniform_int(1, 2)), static_cast<std::size_t>(rng.uniform_int(1, 4)),
                 static_cast<std::size_t>(rng.uniform_int(4, 8)), static_cast<std::size_t>(rng.uniform_int(4, 8))};
    const Tensor4 x = oracle::random_tensor(d, rng);
    const Tensor4 k = oracle::random_tensor({3, d.c, 3, 3}, rng);
    const Tensor4 b = oracle::random_tensor({1, 3, 1, 1}, rng);
    CHECK(max_abs_diff(ops::conv2d_same(x, k, b.data()), oracle::conv(x, k, bias_of(b))) < 1e-10);
    CHECK(ops::maxpool(x, 2, 2).output == oracle::maxpool(x, 2, 2));
    CHECK(ops::upsample_tile(x, 2) == oracle::tile(x, 2));
    const Tensor4 y = oracle::random_tensor({d.n, 2, d.h, d.w}, rng);
    CHECK(ops::concat_channels(x, y) == oracle::concat(x, y));
    std::vector<Tensor4> maps{x, oracle::random_tensor(d, rng)};
    const Tensor4* ptrs[] = {&maps[0], &maps[1]};
    const Tensor4 alpha = oracle::random_tensor({2, d.c, d.h, d.w}, rng);
    CHECK(max_abs_diff(ops::weighted_sum_maps(ptrs, alpha), oracle::weighted_sum(maps, alpha)) < 1e-10);
  }
}

TEST_CASE("tape backward visits every op once in reverse order") {
  Rng rng(13);
  Tape tape;
  Parameter k("k", oracle::random_tensor({2, 1, 3, 3}, rng));
  Parameter b("b", Tensor4({1, 2, 1, 1}));
  Parameter unused("unused", oracle::random_tensor({1, 1, 1, 1}, rng));
  Var x = tape.input(oracle::random_tensor({1, 1, 4, 4}, rng));
  Var c = tape.conv2d(x, tape.parameter(k), tape.parameter(b));
  Var r = tape.relu(c);
  Var p = tape.maxpool(r, 2, 2);
  Var u = tape.upsample_tile(p, 2);
  Var s = tape.add(u, r);
  Var out = tape.softmax(s);
  tape.parameter(unused);
  tape.backward(out, Tensor4(tape.value(out).dims(), 1.0 / 32));
  const auto log = tape.visit_log();
  std::vector<std::size_t> ops_ids{c.id, r.id, p.id, u.id, s.id, out.id};
  std::vector<std::size_t> visited(log.begin(), log.end());
  std::sort(visited.begin(), visited.end());
  CHECK(visited == ops_ids);
  for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i] < log[i - 1]);
  CHECK(unused.grad.squared_norm() == 0.0);
}

}  // TEST_SUITE
