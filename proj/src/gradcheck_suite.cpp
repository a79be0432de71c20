#include "rcn/gradcheck_suite.hpp"

#include <functional>

#include "rcn/denoiser.hpp"
#include "rcn/error.hpp"
#include "rcn/loss.hpp"
#include "rcn/network.hpp"
#include "rcn/rng.hpp"
#include "rcn/tape.hpp"

namespace rcn {

bool GradCheckSuiteResult::passed() const {
  for (const auto& r : reports) {
    if (!r.passed()) return false;
  }
  return !reports.empty();
}

std::vector<std::string> GradCheckSuiteResult::failed() const {
  std::vector<std::string> out;
  for (const auto& r : reports) {
    if (!r.passed()) out.push_back(r.name);
  }
  return out;
}

namespace {

constexpr double kEps = 1e-4;
constexpr int kMaxResamples = 50;

Tensor4 random_tensor(Dims d, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4 t(d);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensor4& a, const Tensor4& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a.data()[i]) * b.data()[i];
  return static_cast<double>(s);
}

using Build = std::function<Var(Tape&, std::vector<Var>&)>;
using Make = std::function<std::vector<Parameter>(Rng&)>;

struct Check {
  std::string name;
  std::function<GradCheckReport(Rng&, bool flip)> run;
};

// Records `build` on parameter leaves, seeds backward with a random
// projection and compares against finite differences of <proj, output>.
GradCheckReport check_op(const std::string& name, Rng& rng, bool flip, const Make& make, const Build& build,
                         double tolerance, std::size_t max_coords) {
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    std::vector<Parameter> params = make(rng);
    Tape tape;
    std::vector<Var> leaves;
    for (Parameter& p : params) leaves.push_back(tape.parameter(p));
    Var out = build(tape, leaves);
    if (tape.kink_margin() <= 4.0 * kEps) continue;
    const Tensor4 proj = random_tensor(tape.value(out).dims(), rng);
    tape.backward(out, proj);
    std::vector<GradCheckInput> inputs;
    for (Parameter& p : params) {
      Tensor4 g = p.grad;
      if (flip) g.scale(-1.0);
      inputs.push_back({p.name, &p.value, std::move(g)});
    }
    auto objective = [&] {
      Tape t;
      std::vector<Var> l;
      for (Parameter& p : params) l.push_back(t.constant(p.value));
      return dot(proj, t.value(build(t, l)));
    };
    GradCheckOptions opt;
    opt.epsilon = kEps;
    opt.tolerance = tolerance;
    opt.max_coords_per_tensor = max_coords;
    opt.seed = rng.next();
    return check_gradients(name, inputs, objective, opt);
  }
  GradCheckReport r;
  r.name = name;
  r.tolerance = tolerance;
  r.offenders.push_back({"<resample>", 0, 0.0, 0.0, 0.0});
  return r;
}

Make tensors(std::vector<std::pair<std::string, Dims>> spec) {
  return [spec](Rng& rng) {
    std::vector<Parameter> p;
    for (const auto& [n, d] : spec) p.emplace_back(n, random_tensor(d, rng));
    return p;
  };
}

Check primitive(std::string name, Make make, Build build, double tol = 1e-4) {
  return {name, [=](Rng& rng, bool flip) { return check_op(name, rng, flip, make, build, tol, 256); }};
}

// Network parameters drawn at random so no unit sits on a ReLU kink by
// construction (zero biases would leave exact zeros).
void randomize(std::vector<Parameter>& params, Rng& rng) {
  for (Parameter& p : params) {
    const bool bias = p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
    for (double& v : p.value.data()) v = bias ? rng.uniform(-0.2, 0.2) : v * rng.uniform(0.8, 1.2);
  }
}

std::vector<KeypointSet> random_truth(std::size_t n, std::size_t k, std::size_t s, Rng& rng) {
  std::vector<KeypointSet> t(n, KeypointSet(k));
  for (auto& set : t) {
    for (auto& p : set) {
      p.row = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(s) - 1));
      p.col = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(s) - 1));
    }
  }
  return t;
}

// Whole-network check of the NLL loss with respect to every parameter.
template <typename Model, typename Forward>
GradCheckReport check_model(const std::string& name, Rng& rng, bool flip, const std::function<Model(Rng&)>& build,
                            const Tensor4& input_dims_probe, Forward forward_pre, std::size_t k, std::size_t s) {
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    Model model = build(rng);
    randomize(model.params(), rng);
    const Tensor4 x = random_tensor(input_dims_probe.dims(), rng);
    const auto truth = random_truth(x.dims().n, k, s, rng);
    Tape tape;
    Var in = tape.input(x);
    Var z = model.forward_pre_softmax(tape, in);
    if (tape.kink_margin() <= 4.0 * kEps) continue;
    NllTerms terms = softmax_nll(tape.value(z), truth);
    model.zero_grad();
    tape.backward(z, terms.grad);
    std::vector<GradCheckInput> inputs;
    for (Parameter& p : model.params()) {
      Tensor4 g = p.grad;
      if (flip) g.scale(-1.0);
      inputs.push_back({p.name, &p.value, std::move(g)});
    }
    auto objective = [&] { return softmax_nll(forward_pre(model, x), truth).loss; };
    GradCheckOptions opt;
    opt.epsilon = kEps;
    opt.tolerance = 1e-3;
    opt.max_coords_per_tensor = 24;
    opt.seed = rng.next();
    return check_gradients(name, inputs, objective, opt);
  }
  GradCheckReport r;
  r.name = name;
  r.tolerance = 1e-3;
  r.offenders.push_back({"<resample>", 0, 0.0, 0.0, 0.0});
  return r;
}

Check network_check(const std::string& name, NetworkConfig cfg) {
  return {name, [=](Rng& rng, bool flip) {
            const auto s = static_cast<std::size_t>(cfg.input_size);
            return check_model<Network>(
                name, rng, flip,
                [&](Rng& r) {
                  NetworkConfig c = cfg;
                  c.init_seed = r.next();
                  return build_network(c);
                },
                Tensor4({2, 1, s, s}), [](const Network& net, const Tensor4& x) { return net.pre_softmax(x); },
                static_cast<std::size_t>(cfg.num_keypoints), s);
          }};
}

std::vector<Check> registry() {
  std::vector<Check> c;
  c.push_back(primitive("conv2d", tensors({{"x", {2, 3, 5, 5}}, {"k", {4, 3, 3, 3}}, {"b", {1, 4, 1, 1}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.conv2d(v[0], v[1], v[2]); }));
  c.push_back(primitive("conv2d_1x1", tensors({{"x", {2, 3, 4, 4}}, {"k", {2, 3, 1, 1}}, {"b", {1, 2, 1, 1}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.conv2d(v[0], v[1], v[2]); }));
  c.push_back(primitive("conv2d_3x5", tensors({{"x", {1, 2, 6, 7}}, {"k", {3, 2, 3, 5}}, {"b", {1, 3, 1, 1}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.conv2d(v[0], v[1], v[2]); }));
  c.push_back(primitive("relu", tensors({{"x", {2, 2, 4, 4}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.relu(v[0]); }));
  c.push_back(primitive("maxpool", tensors({{"x", {2, 2, 6, 6}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.maxpool(v[0], 2, 2); }));
  c.push_back(primitive("maxpool_3s2", tensors({{"x", {1, 2, 5, 5}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.maxpool(v[0], 3, 2); }));
  c.push_back(primitive("upsample_tile", tensors({{"x", {2, 2, 3, 3}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.upsample_tile(v[0], 3); }));
  c.push_back(primitive("upsample_bilinear", tensors({{"x", {1, 2, 3, 4}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.resize_bilinear(v[0], 7, 9); }));
  c.push_back(primitive("upsample_windows", tensors({{"x", {1, 2, 2, 2}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.upsample_windows(v[0], 3, 2, 5, 5); }));
  c.push_back(primitive("concat", tensors({{"a", {2, 2, 3, 3}}, {"b", {2, 3, 3, 3}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.concat(v[0], v[1]); }));
  c.push_back(primitive("weighted_sum",
                        tensors({{"m0", {2, 2, 4, 4}}, {"m1", {2, 2, 4, 4}}, {"m2", {2, 2, 4, 4}}, {"alpha", {3, 2, 4, 4}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.weighted_sum({v[0], v[1], v[2]}, v[3]); }));
  c.push_back(primitive("softmax", tensors({{"z", {2, 3, 4, 5}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.softmax(v[0]); }));
  c.push_back(primitive("add", tensors({{"a", {1, 2, 3, 3}}, {"b", {1, 2, 3, 3}}}),
                        [](Tape& t, std::vector<Var>& v) { return t.add(v[0], v[1]); }));
  c.push_back({"softmax_nll", [](Rng& rng, bool flip) {
                 Tensor4 z = random_tensor({3, 2, 4, 4}, rng, -2.0, 2.0);
                 const auto truth = random_truth(3, 2, 4, rng);
                 Tensor4 g = softmax_nll(z, truth).grad;
                 if (flip) g.scale(-1.0);
                 std::vector<GradCheckInput> in{{"z", &z, g}};
                 GradCheckOptions opt;
                 opt.tolerance = 1e-6;
                 opt.max_coords_per_tensor = 256;
                 opt.seed = rng.next();
                 return check_gradients("softmax_nll", in, [&] { return softmax_nll(z, truth).loss; }, opt);
               }});

  NetworkConfig base;
  base.input_size = 8;
  base.num_keypoints = 2;
  base.num_branches = 3;
  base.channels = 3;
  NetworkConfig sum = base;
  sum.arch = Arch::SumNet;
  c.push_back(network_check("sumnet", sum));
  c.push_back(network_check("rcn", base));
  NetworkConfig skip = base;
  skip.skip = true;
  skip.extra_final_1x1 = 1;
  c.push_back(network_check("rcn_skip", skip));
  NetworkConfig five = base;
  five.input_size = 10;
  five.num_branches = 3;
  c.push_back(network_check("rcn_pool3", five));
  NetworkConfig bil = base;
  bil.upsample = UpsampleMode::Bilinear;
  c.push_back(network_check("rcn_bilinear", bil));

  c.push_back({"denoiser", [](Rng& rng, bool flip) {
                 const std::size_t s = 6;
                 return check_model<Denoiser>(
                     "denoiser", rng, flip,
                     [](Rng& r) {
                       DenoiserConfig dc;
                       dc.num_keypoints = 2;
                       dc.map_size = 6;
                       dc.layers = 3;
                       dc.kernel = 3;
                       dc.channels = 3;
                       dc.init_seed = r.next();
                       return build_denoiser(dc);
                     },
                     Tensor4({2, 2, s, s}), [](const Denoiser& d, const Tensor4& x) { return d.pre_softmax(x); }, 2, s);
               }});
  return c;
}

bool matches(const std::string& name, const std::string& prefix) { return name.rfind(prefix, 0) == 0; }

}  // namespace

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const Check& c : registry()) names.push_back(c.name);
  return names;
}

GradCheckSuiteResult run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  const auto checks = registry();
  for (const std::string& want : options.ops) {
    bool any = false;
    for (const Check& c : checks) any = any || matches(c.name, want);
    if (!any) {
      std::string all;
      for (const Check& c : checks) all += (all.empty() ? "" : ", ") + c.name;
      throw ConfigError("unknown gradcheck op '" + want + "'; available: " + all);
    }
  }
  GradCheckSuiteResult result;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const Check& c = checks[i];
    bool selected = options.ops.empty();
    for (const std::string& want : options.ops) selected = selected || matches(c.name, want);
    if (!selected) continue;
    const bool flip = !options.inject_sign_error.empty() && matches(c.name, options.inject_sign_error);
    Rng rng = Rng::derive(options.seed, {0x6C4u, i});
    result.reports.push_back(c.run(rng, flip));
  }
  return result;
}

}  // namespace rcn
