#include "rcn/denoiser.hpp"

#include <algorithm>
#include <numeric>

#include "rcn/checkpoint.hpp"
#include "rcn/error.hpp"
#include "rcn/ops.hpp"

namespace rcn {

Tensor4 one_hot_maps(std::span<const KeypointSet> locations, std::size_t map_size) {
  if (locations.empty()) throw InputError("one_hot_maps: empty batch");
  const std::size_t k = locations.front().size();
  Tensor4 out({locations.size(), k, map_size, map_size});
  for (std::size_t n = 0; n < locations.size(); ++n) {
    if (locations[n].size() != k) throw InputError("one_hot_maps: sample " + std::to_string(n) + " keypoint count differs");
    for (std::size_t i = 0; i < k; ++i) {
      const Keypoint& p = locations[n][i];
      if (p.row < 0 || p.col < 0 || static_cast<std::size_t>(p.row) >= map_size ||
          static_cast<std::size_t>(p.col) >= map_size) {
        throw InputError("one_hot_maps: sample " + std::to_string(n) + " keypoint " + std::to_string(i) + " at (" +
                         std::to_string(p.row) + "," + std::to_string(p.col) + ") outside " +
                         std::to_string(map_size) + "x" + std::to_string(map_size));
      }
      out(n, i, static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col)) = 1.0;
    }
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> CorruptionRecord::include_mask(std::size_t num_keypoints) const {
  std::vector<std::vector<std::uint8_t>> m(indices.size(), std::vector<std::uint8_t>(num_keypoints, 0));
  for (std::size_t n = 0; n < indices.size(); ++n) {
    for (int k : indices[n]) m[n].at(static_cast<std::size_t>(k)) = 1;
  }
  return m;
}

KeypointSet corrupt_keypoints(const KeypointSet& truth, int count, std::size_t map_size, Rng& rng,
                              CorruptionRecord* record) {
  const auto k = static_cast<int>(truth.size());
  if (count < 1 || count > k) {
    throw ConfigError("corrupt count must be in [1, " + std::to_string(k) + "], got " + std::to_string(count));
  }
  // Partial Fisher-Yates: the first `count` entries are a uniform subset.
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i, k - 1));
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
  }
  std::vector<int> chosen(order.begin(), order.begin() + count);
  std::sort(chosen.begin(), chosen.end());
  KeypointSet out = truth;
  KeypointSet originals;
  const auto hi = static_cast<std::int64_t>(map_size) - 1;
  for (int idx : chosen) {
    originals.push_back(truth[static_cast<std::size_t>(idx)]);
    out[static_cast<std::size_t>(idx)] = {static_cast<int>(rng.uniform_int(0, hi)), static_cast<int>(rng.uniform_int(0, hi))};
  }
  if (record) {
    record->indices.push_back(std::move(chosen));
    record->original.push_back(std::move(originals));
  }
  return out;
}

int DenoiserConfig::effective_corrupt_count() const {
  if (corrupt_count > 0) return corrupt_count;
  return num_keypoints == 68 ? 35 : std::min(2, num_keypoints);
}

void DenoiserConfig::validate() const {
  if (num_keypoints < 1) throw ConfigError("denoiser num_keypoints must be positive");
  if (map_size < 1) throw ConfigError("denoiser map_size must be positive");
  if (layers < 1) throw ConfigError("denoiser layers must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("denoiser kernel must be odd, got " + std::to_string(kernel));
  if (channels < 1) throw ConfigError("denoiser channels must be positive");
  const int cc = effective_corrupt_count();
  if (cc < 1 || cc > num_keypoints) {
    throw ConfigError("denoiser corrupt_count must be in [1, " + std::to_string(num_keypoints) + "], got " +
                      std::to_string(cc));
  }
}

KeyValues DenoiserConfig::to_key_values() const {
  return {{"num_keypoints", std::to_string(num_keypoints)},
          {"map_size", std::to_string(map_size)},
          {"layers", std::to_string(layers)},
          {"kernel", std::to_string(kernel)},
          {"channels", std::to_string(channels)},
          {"corrupt_count", std::to_string(effective_corrupt_count())},
          {"init_seed", std::to_string(init_seed)},
          {"init_scheme", "xavier_uniform"}};
}

DenoiserConfig DenoiserConfig::from_key_values(const KeyValues& kv) {
  DenoiserConfig c;
  c.num_keypoints = kv_int(kv, "num_keypoints", c.num_keypoints);
  c.map_size = kv_int(kv, "map_size", c.map_size);
  c.layers = kv_int(kv, "layers", c.layers);
  c.kernel = kv_int(kv, "kernel", c.kernel);
  c.channels = kv_int(kv, "channels", c.channels);
  c.corrupt_count = kv_int(kv, "corrupt_count", c.corrupt_count);
  c.init_seed = std::stoull(kv_string(kv, "init_seed", "1"));
  c.validate();
  return c;
}

namespace {
std::string layer_name(int i) { return "den.conv" + std::to_string(i); }
}  // namespace

Denoiser::Denoiser(DenoiserConfig config, std::vector<Parameter> params)
    : config_(std::move(config)), params_(std::move(params)) {}

Denoiser build_denoiser(const DenoiserConfig& config) {
  config.validate();
  std::vector<Parameter> params;
  const auto k = static_cast<std::size_t>(config.kernel);
  for (int i = 0; i < config.layers; ++i) {
    const auto in_c = static_cast<std::size_t>(i == 0 ? config.num_keypoints : config.channels);
    const auto out_c = static_cast<std::size_t>(i == config.layers - 1 ? config.num_keypoints : config.channels);
    params.emplace_back(layer_name(i) + ".weight", init_conv_kernel(config.init_seed, layer_name(i), out_c, in_c, k));
    params.emplace_back(layer_name(i) + ".bias", Tensor4({1, out_c, 1, 1}));
  }
  return Denoiser(config, std::move(params));
}

void Denoiser::check_maps(const Tensor4& maps) const {
  const Dims& d = maps.dims();
  const auto s = static_cast<std::size_t>(config_.map_size);
  if (d.c != static_cast<std::size_t>(config_.num_keypoints) || d.h != s || d.w != s) {
    throw ShapeError("denoiser expects (n," + std::to_string(config_.num_keypoints) + "," + std::to_string(s) + "," +
                     std::to_string(s) + ") maps, got " + d.str());
  }
}

Var Denoiser::graph(Tape& tape, Var maps, const std::function<Var(std::size_t)>& leaf) const {
  Var x = maps;
  for (int i = 0; i < config_.layers; ++i) {
    const auto w = static_cast<std::size_t>(2 * i);
    x = tape.conv2d(x, leaf(w), leaf(w + 1));
    if (i + 1 < config_.layers) x = tape.relu(x);
  }
  return x;
}

Var Denoiser::forward_pre_softmax(Tape& tape, Var maps) {
  check_maps(tape.value(maps));
  return graph(tape, maps, [&](std::size_t i) { return tape.parameter(params_[i]); });
}

Tensor4 Denoiser::pre_softmax(const Tensor4& maps) const {
  check_maps(maps);
  Tape tape;
  Var x = tape.constant(maps);
  return tape.value(graph(tape, x, [&](std::size_t i) { return tape.constant(params_[i].value); }));
}

ProbMaps Denoiser::forward(const Tensor4& maps) const { return ops::spatial_softmax(pre_softmax(maps)); }

void Denoiser::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

double Denoiser::squared_weight_norm() const {
  double s = 0.0;
  for (const Parameter& p : params_) s += p.value.squared_norm();
  return s;
}

double denoiser_loss(const Tensor4& pre_softmax, std::span<const KeypointSet> truth, const CorruptionRecord& record,
                     double lambda, double squared_weight_norm, Tensor4* grad) {
  if (record.indices.size() != pre_softmax.dims().n) {
    throw InputError("denoiser_loss: corruption record covers " + std::to_string(record.indices.size()) +
                     " samples, batch has " + std::to_string(pre_softmax.dims().n));
  }
  const auto mask = record.include_mask(pre_softmax.dims().c);
  NllTerms t = masked_softmax_nll(pre_softmax, truth, mask);
  if (grad) *grad = std::move(t.grad);
  return t.loss + lambda * squared_weight_norm;
}

ProbMaps joint_predict(const Network& rcn, const Denoiser& den, const Tensor4& images) {
  const NetworkConfig& rc = rcn.config();
  const DenoiserConfig& dc = den.config();
  if (rc.num_keypoints != dc.num_keypoints || rc.input_size != dc.map_size) {
    throw ConfigError("joint_predict: model has K=" + std::to_string(rc.num_keypoints) + ", S=" +
                      std::to_string(rc.input_size) + " but denoiser has K=" + std::to_string(dc.num_keypoints) +
                      ", S=" + std::to_string(dc.map_size));
  }
  Tensor4 z = rcn.pre_softmax(images);
  const auto hard = argmax_keypoints(ops::spatial_softmax(z));
  z.add(den.pre_softmax(one_hot_maps(hard, static_cast<std::size_t>(dc.map_size))));
  return ops::spatial_softmax(z);
}

void save_denoiser(const std::string& path, const Denoiser& den) {
  save_checkpoint(path, "DEN", den.config().to_key_values(), den.params());
}

Denoiser load_denoiser(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.tag != "DEN") throw LoadError(path + ": tag " + ck.tag + " is not a denoiser");
  DenoiserConfig config;
  try {
    config = DenoiserConfig::from_key_values(ck.config);
  } catch (const ConfigError& e) {
    throw LoadError(path + ": " + e.what());
  }
  Denoiser den = build_denoiser(config);
  restore_parameters(ck, den.params(), path);
  return den;
}

}  // namespace rcn
