#include "doctest.h"
#include "oracles.hpp"
#include "rcn/error.hpp"
#include "rcn/gradcheck_suite.hpp"
#include "rcn/loss.hpp"
#include "rcn/ops.hpp"

using namespace rcn;

TEST_SUITE("tensor-core") {

TEST_CASE("grad_check flags a wrong gradient and lists coordinates") {
  Tensor4 x({1, 1, 1, 3}, {0.5, -1.0, 2.0});
  // f = sum x^2, true gradient 2x; report x instead.
  std::vector<GradCheckInput> in{{"x", &x, Tensor4({1, 1, 1, 3}, {0.5, -1.0, 2.0})}};
  auto f = [&] {
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    return s;
  };
  const GradCheckReport bad = check_gradients("square", in, f, {});
  CHECK_FALSE(bad.passed());
  CHECK(bad.offenders.size() == 3);
  CHECK(bad.offenders[1].index == 1);
  CHECK(x == Tensor4({1, 1, 1, 3}, {0.5, -1.0, 2.0}));
  in[0].analytic = Tensor4({1, 1, 1, 3}, {1.0, -2.0, 4.0});
  CHECK(check_gradients("square", in, f, {}).passed());
}

TEST_CASE("relative error definition") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 1e-12) == doctest::Approx(1e-4));
}

TEST_CASE("softmax-NLL gradient is p minus one-hot over N") {
  Rng rng(21);
  const Tensor4 z = oracle::random_tensor({3, 2, 4, 5}, rng, -3, 3);
  const auto truth = oracle::random_keypoints(3, 2, 4, rng);
  const NllTerms t = softmax_nll(z, truth);
  Tensor4 expect = oracle::softmax(z);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t k = 0; k < 2; ++k) expect(n, k, truth[n][k].row, truth[n][k].col) -= 1.0;
  expect.scale(1.0 / 3.0);
  CHECK(max_abs_diff(t.grad, expect) < 1e-12);
  CHECK(t.loss == doctest::Approx(oracle::nll(oracle::softmax(z), truth)).epsilon(1e-12));
}

TEST_CASE("full gradient-check suite passes") {
  const GradCheckSuiteResult res = run_gradcheck_suite({});
  for (const auto& r : res.reports) {
    INFO(r.summary());
    CHECK(r.passed());
  }
  CHECK(res.passed());
  CHECK(res.reports.size() == gradcheck_names().size());
}

TEST_CASE("gradcheck filtering and fault injection") {
  GradCheckSuiteOptions opt;
  opt.ops = {"conv2d"};
  const auto only = run_gradcheck_suite(opt);
  for (const auto& r : only.reports) CHECK(r.name.rfind("conv2d", 0) == 0);
  CHECK(only.reports.size() == 3);
  opt.inject_sign_error = "conv2d_1x1";
  const auto broken = run_gradcheck_suite(opt);
  CHECK_FALSE(broken.passed());
  CHECK(broken.failed() == std::vector<std::string>{"conv2d_1x1"});
  opt.ops = {"nonexistent"};
  CHECK_THROWS_AS(run_gradcheck_suite(opt), ConfigError);
}

}  // TEST_SUITE
