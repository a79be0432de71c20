#include "rcn/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rcn/error.hpp"
#include "rcn/ops.hpp"
#include "rcn/rng.hpp"

namespace rcn {

std::string to_string(Arch a) { return a == Arch::SumNet ? "sumnet" : "rcn"; }
std::string to_string(UpsampleMode m) { return m == UpsampleMode::Tile ? "tile" : "bilinear"; }

BranchMask BranchMask::parse(const std::string& text) {
  BranchMask m;
  for (char ch : text) {
    if (ch == '1') {
      m.bits.push_back(true);
    } else if (ch == '0') {
      m.bits.push_back(false);
    } else if (ch != ',' && ch != ' ') {
      throw ConfigError("branch mask '" + text + "': expected digits 0/1 separated by commas");
    }
  }
  if (m.bits.empty()) throw ConfigError("branch mask '" + text + "' is empty");
  return m;
}

std::string BranchMask::str() const {
  std::string s;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (i) s += ',';
    s += bits[i] ? '1' : '0';
  }
  return s;
}

NetworkConfig NetworkConfig::preset_68() {
  NetworkConfig c;
  c.arch = Arch::RCN;
  c.num_keypoints = 68;
  c.num_branches = 5;
  c.channels = 64;
  c.extra_final_1x1 = 2;
  return c;
}

int NetworkConfig::effective_branch_convs() const {
  if (branch_convs > 0) return branch_convs;
  return arch == Arch::SumNet ? 3 : 2;
}

BranchMask NetworkConfig::effective_mask() const {
  return mask.bits.empty() ? BranchMask::all(num_branches) : mask;
}

bool NetworkConfig::branch_on(int level) const {
  return mask.bits.empty() || mask.bits.at(static_cast<std::size_t>(level));
}

int NetworkConfig::channels_at(int level) const {
  if (level_channels.empty()) return channels;
  return level_channels.at(static_cast<std::size_t>(level));
}

std::vector<std::size_t> NetworkConfig::level_sizes() const {
  if (num_branches < 1 || input_size < 1) throw ConfigError("input_size and branches must be positive");
  std::vector<std::size_t> sizes(static_cast<std::size_t>(num_branches));
  std::size_t s = static_cast<std::size_t>(input_size);
  sizes.back() = s;
  for (int l = num_branches - 2; l >= 0; --l) {
    if (s % 2 == 0) {
      s /= 2;
    } else if (s == 5) {
      s = 2;
    } else {
      throw ConfigError("input_size " + std::to_string(input_size) + " cannot be pooled to " +
                        std::to_string(num_branches) + " branches: a " + std::to_string(s) + "x" +
                        std::to_string(s) + " map has no 2x2 (or 5->2 3x3/2) pooling step");
    }
    sizes[static_cast<std::size_t>(l)] = s;
  }
  return sizes;
}

PoolStep NetworkConfig::pool_into(int level) const {
  const auto sizes = level_sizes();
  const std::size_t finer = sizes.at(static_cast<std::size_t>(level) + 1);
  // 5x5 -> 2x2 uses 3x3/2 windows so the result stays left-right symmetric.
  if (finer == 5) return {3, 2};
  return {2, 2};
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("network config: " + m); };
  if (num_branches < 1 || num_branches > 7) fail("branches must be in [1, 7], got " + std::to_string(num_branches));
  if (num_keypoints < 1) fail("keypoints must be positive");
  if (channels < 1) fail("channels must be positive");
  if (!level_channels.empty()) {
    if (level_channels.size() != static_cast<std::size_t>(num_branches)) fail("level_channels needs one entry per branch");
    for (int c : level_channels) {
      if (c < 1) fail("level_channels entries must be positive");
    }
  }
  if (conv_kernel < 1 || conv_kernel % 2 == 0) fail("conv_kernel must be odd, got " + std::to_string(conv_kernel));
  if (trunk_convs < 1) fail("trunk_convs must be >= 1");
  if (branch_convs < 0) fail("branch_convs must be >= 0");
  if (extra_final_1x1 < 0) fail("extra_final_1x1 must be >= 0");
  if (arch == Arch::SumNet && skip) fail("skip connections apply to RCN only");
  if (arch == Arch::SumNet && extra_final_1x1 > 0) fail("extra_final_1x1 applies to RCN only");
  if (!mask.bits.empty()) {
    if (mask.size() != static_cast<std::size_t>(num_branches)) {
      fail("mask " + mask.str() + " has " + std::to_string(mask.size()) + " bits for " +
           std::to_string(num_branches) + " branches");
    }
    if (std::none_of(mask.bits.begin(), mask.bits.end(), [](bool b) { return b; })) fail("mask enables no branch");
    if (arch == Arch::RCN && !mask.bits.back()) fail("RCN mask must keep the finest branch (it produces the output)");
  }
  (void)level_sizes();
}

NetworkConfig apply_branch_mask(const NetworkConfig& config, const BranchMask& mask) {
  NetworkConfig c = config;
  c.mask = mask;
  c.validate();
  return c;
}

KeyValues NetworkConfig::to_key_values() const {
  KeyValues kv;
  kv["arch"] = to_string(arch);
  kv["input_size"] = std::to_string(input_size);
  kv["keypoints"] = std::to_string(num_keypoints);
  kv["branches"] = std::to_string(num_branches);
  kv["channels"] = std::to_string(channels);
  std::string lc;
  for (std::size_t i = 0; i < level_channels.size(); ++i) lc += (i ? "," : "") + std::to_string(level_channels[i]);
  kv["level_channels"] = lc;
  kv["conv_kernel"] = std::to_string(conv_kernel);
  kv["trunk_convs"] = std::to_string(trunk_convs);
  kv["branch_convs"] = std::to_string(effective_branch_convs());
  kv["skip"] = skip ? "1" : "0";
  kv["mask"] = effective_mask().str();
  kv["extra_final_1x1"] = std::to_string(extra_final_1x1);
  kv["upsample"] = to_string(upsample);
  kv["init_seed"] = std::to_string(init_seed);
  kv["init_scheme"] = init == InitScheme::He ? "he_uniform" : "xavier_uniform";
  kv["init_alpha"] = "1/R";
  return kv;
}

NetworkConfig NetworkConfig::from_key_values(const KeyValues& kv) {
  NetworkConfig c;
  const std::string arch = kv_string(kv, "arch", "rcn");
  if (arch == "sumnet") {
    c.arch = Arch::SumNet;
  } else if (arch == "rcn") {
    c.arch = Arch::RCN;
  } else {
    throw ConfigError("unknown arch '" + arch + "' (expected sumnet or rcn)");
  }
  c.input_size = kv_int(kv, "input_size", c.input_size);
  c.num_keypoints = kv_int(kv, "keypoints", c.num_keypoints);
  c.num_branches = kv_int(kv, "branches", c.num_branches);
  c.channels = kv_int(kv, "channels", c.channels);
  const std::string lc = kv_string(kv, "level_channels", "");
  if (!lc.empty()) {
    for (const std::string& p : split(lc, ',')) {
      KeyValues one{{"level_channels", trim(p)}};
      c.level_channels.push_back(kv_int(one, "level_channels", 0));
    }
  }
  c.conv_kernel = kv_int(kv, "conv_kernel", c.conv_kernel);
  c.trunk_convs = kv_int(kv, "trunk_convs", c.trunk_convs);
  c.branch_convs = kv_int(kv, "branch_convs", c.branch_convs);
  c.skip = kv_bool(kv, "skip", c.skip);
  const std::string mask = kv_string(kv, "mask", "");
  if (!mask.empty()) c.mask = BranchMask::parse(mask);
  if (c.mask == BranchMask::all(c.num_branches)) c.mask = {};
  c.extra_final_1x1 = kv_int(kv, "extra_final_1x1", c.extra_final_1x1);
  const std::string up = kv_string(kv, "upsample", "tile");
  if (up == "tile") {
    c.upsample = UpsampleMode::Tile;
  } else if (up == "bilinear") {
    c.upsample = UpsampleMode::Bilinear;
  } else {
    throw ConfigError("unknown upsample mode '" + up + "' (expected tile or bilinear)");
  }
  c.init_seed = static_cast<std::uint64_t>(std::stoull(kv_string(kv, "init_seed", "1")));
  const std::string scheme = kv_string(kv, "init_scheme", "xavier_uniform");
  if (scheme == "xavier_uniform") {
    c.init = InitScheme::Glorot;
  } else if (scheme == "he_uniform") {
    c.init = InitScheme::He;
  } else {
    throw ConfigError("unknown init_scheme '" + scheme + "' (expected xavier_uniform or he_uniform)");
  }
  c.validate();
  return c;
}

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string conv_name(const std::string& prefix, int i) { return prefix + ".conv" + std::to_string(i); }

// Channels fed into RCN branch `level` from coarser branches.
int rcn_feed_channels(const NetworkConfig& c, int level) {
  int feed = 0;
  for (int j = 0; j < level; ++j) {
    if (!c.branch_on(j)) continue;
    feed = c.skip ? feed + c.channels_at(j) : c.channels_at(j);
  }
  return feed;
}

class ParamBuilder {
 public:
  ParamBuilder(std::uint64_t seed, InitScheme scheme) : seed_(seed), scheme_(scheme) {}
  void conv(const std::string& name, int out_c, int in_c, int k) {
    params_.emplace_back(name + ".weight", init_conv_kernel(seed_, name, static_cast<std::size_t>(out_c),
                                                            static_cast<std::size_t>(in_c),
                                                            static_cast<std::size_t>(k), scheme_));
    params_.emplace_back(name + ".bias", Tensor4({1, static_cast<std::size_t>(out_c), 1, 1}));
  }
  void add(std::string name, Tensor4 value) { params_.emplace_back(std::move(name), std::move(value)); }
  std::vector<Parameter> take() { return std::move(params_); }

 private:
  std::uint64_t seed_;
  InitScheme scheme_;
  std::vector<Parameter> params_;
};

void add_trunk(ParamBuilder& pb, const NetworkConfig& c) {
  for (int l = c.num_branches - 1; l >= 0; --l) {
    int in = l == c.num_branches - 1 ? 1 : c.channels_at(l + 1);
    for (int i = 0; i < c.trunk_convs; ++i) {
      pb.conv(conv_name("trunk." + std::to_string(l), i), c.channels_at(l), in, c.conv_kernel);
      in = c.channels_at(l);
    }
  }
}

}  // namespace

Tensor4 init_conv_kernel(std::uint64_t seed, const std::string& name, std::size_t out_c,
                         std::size_t in_c, std::size_t k, InitScheme scheme) {
  Rng rng = Rng::derive(seed, {name_hash(name)});
  const double fan_in = static_cast<double>(in_c * k * k);
  const double fan_out = static_cast<double>(out_c * k * k);
  const double limit = std::sqrt(6.0 / (scheme == InitScheme::He ? fan_in : fan_in + fan_out));
  Tensor4 w({out_c, in_c, k, k});
  for (double& v : w.data()) v = rng.uniform(-limit, limit);
  return w;
}

Network build_sumnet(const NetworkConfig& config) {
  if (config.arch != Arch::SumNet) throw ConfigError("build_sumnet: config arch is " + to_string(config.arch));
  config.validate();
  ParamBuilder pb(config.init_seed, config.init);
  add_trunk(pb, config);
  const int bc = config.effective_branch_convs();
  for (int l = 0; l < config.num_branches; ++l) {
    const std::string prefix = "branch." + std::to_string(l);
    const int ch = config.channels_at(l);
    for (int i = 0; i < bc; ++i) {
      const int out = i == bc - 1 ? config.num_keypoints : ch;
      pb.conv(conv_name(prefix, i), out, ch, config.conv_kernel);
    }
  }
  const auto s = static_cast<std::size_t>(config.input_size);
  pb.add("alpha", Tensor4({static_cast<std::size_t>(config.num_branches),
                           static_cast<std::size_t>(config.num_keypoints), s, s},
                          1.0 / config.num_branches));
  return Network(config, pb.take());
}

Network build_rcn(const NetworkConfig& config) {
  if (config.arch != Arch::RCN) throw ConfigError("build_rcn: config arch is " + to_string(config.arch));
  config.validate();
  ParamBuilder pb(config.init_seed, config.init);
  add_trunk(pb, config);
  const int bc = config.effective_branch_convs();
  const int finest = config.num_branches - 1;
  for (int l = 0; l < config.num_branches; ++l) {
    if (!config.branch_on(l)) continue;
    const std::string prefix = "branch." + std::to_string(l);
    const int ch = config.channels_at(l);
    int in = ch + rcn_feed_channels(config, l);
    int idx = 0;
    if (l < finest) {
      for (int i = 0; i < bc; ++i, ++idx) {
        pb.conv(conv_name(prefix, idx), ch, in, config.conv_kernel);
        in = ch;
      }
      continue;
    }
    for (int i = 0; i < bc - 1; ++i, ++idx) {
      pb.conv(conv_name(prefix, idx), ch, in, config.conv_kernel);
      in = ch;
    }
    for (int i = 0; i < config.extra_final_1x1; ++i, ++idx) {
      pb.conv(conv_name(prefix, idx), ch, in, 1);
      in = ch;
    }
    pb.conv(conv_name(prefix, idx), config.num_keypoints, in, config.conv_kernel);
  }
  return Network(config, pb.take());
}

Network build_network(const NetworkConfig& config) {
  return config.arch == Arch::SumNet ? build_sumnet(config) : build_rcn(config);
}

Network::Network(NetworkConfig config, std::vector<Parameter> params)
    : config_(std::move(config)), params_(std::move(params)) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!index_.emplace(params_[i].name, i).second) throw ConfigError("duplicate parameter " + params_[i].name);
  }
}

Parameter& Network::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("network has no parameter " + name);
  return params_[it->second];
}

const Parameter& Network::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("network has no parameter " + name);
  return params_[it->second];
}

void Network::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

double Network::squared_weight_norm() const {
  double s = 0.0;
  for (const Parameter& p : params_) s += p.value.squared_norm();
  return s;
}

void Network::check_images(const Tensor4& images) const {
  const Dims& d = images.dims();
  const auto s = static_cast<std::size_t>(config_.input_size);
  if (d.n < 1 || d.c != 1 || d.h != s || d.w != s) {
    throw ShapeError("network expects images (n,1," + std::to_string(s) + "," + std::to_string(s) +
                     "), got " + d.str());
  }
}

Var Network::forward_pre_softmax(Tape& tape, Var images) {
  check_images(tape.value(images));
  return graph(tape, images, [&](std::size_t i) { return tape.parameter(params_[i]); });
}

Tensor4 Network::pre_softmax(const Tensor4& images) const {
  check_images(images);
  Tape tape;
  Var x = tape.constant(images);
  Var z = graph(tape, x, [&](std::size_t i) { return tape.constant(params_[i].value); });
  return tape.value(z);
}

ProbMaps Network::forward(const Tensor4& images) const { return ops::spatial_softmax(pre_softmax(images)); }

Var Network::graph(Tape& tape, Var images, const std::function<Var(std::size_t)>& leaf) const {
  const NetworkConfig& c = config_;
  const auto sizes = c.level_sizes();
  const int R = c.num_branches;
  const int finest = R - 1;
  const int bc = c.effective_branch_convs();

  std::unordered_map<std::string, Var> leaves;
  auto p = [&](const std::string& name) {
    auto it = leaves.find(name);
    if (it != leaves.end()) return it->second;
    auto idx = index_.find(name);
    if (idx == index_.end()) throw ConfigError("network has no parameter " + name);
    Var v = leaf(idx->second);
    leaves.emplace(name, v);
    return v;
  };
  auto conv = [&](Var x, const std::string& name) {
    return tape.conv2d(x, p(name + ".weight"), p(name + ".bias"));
  };

  int coarsest = 0;
  while (!c.branch_on(coarsest)) ++coarsest;

  std::vector<Var> trunk(static_cast<std::size_t>(R));
  Var x = images;
  for (int l = finest; l >= coarsest; --l) {
    if (l < finest) {
      const PoolStep ps = c.pool_into(l);
      x = tape.maxpool(x, ps.size, ps.stride);
    }
    for (int i = 0; i < c.trunk_convs; ++i) x = tape.relu(conv(x, conv_name("trunk." + std::to_string(l), i)));
    trunk[static_cast<std::size_t>(l)] = x;
  }

  const auto S = static_cast<std::size_t>(c.input_size);

  if (c.arch == Arch::SumNet) {
    std::vector<Var> maps;
    std::vector<std::size_t> rows;
    for (int l = coarsest; l < R; ++l) {
      if (!c.branch_on(l)) continue;
      const std::string prefix = "branch." + std::to_string(l);
      Var y = trunk[static_cast<std::size_t>(l)];
      for (int i = 0; i < bc - 1; ++i) y = tape.relu(conv(y, conv_name(prefix, i)));
      y = conv(y, conv_name(prefix, bc - 1));
      const std::size_t sz = sizes[static_cast<std::size_t>(l)];
      if (sz != S) {
        if (c.upsample == UpsampleMode::Tile) {
          if (S % sz != 0) throw ConfigError("branch size " + std::to_string(sz) + " does not tile to input size");
          y = tape.upsample_tile(y, static_cast<int>(S / sz));
        } else {
          y = tape.resize_bilinear(y, S, S);
        }
      }
      maps.push_back(y);
      rows.push_back(static_cast<std::size_t>(l));
    }
    return tape.weighted_sum(std::move(maps), p("alpha"), std::move(rows));
  }

  // RCN: coarse branch outputs are carried up the resolution ladder one level
  // at a time and concatenated into each finer branch.
  auto step_up = [&](Var v, int from_level) {
    const std::size_t from = sizes[static_cast<std::size_t>(from_level)];
    const std::size_t to = sizes[static_cast<std::size_t>(from_level) + 1];
    if (c.upsample == UpsampleMode::Bilinear) return tape.resize_bilinear(v, to, to);
    if (to == 2 * from) return tape.upsample_tile(v, 2);
    const PoolStep ps = c.pool_into(from_level);
    return tape.upsample_windows(v, ps.size, ps.stride, to, to);
  };

  std::vector<Var> feeds;  // nearest coarser branch first
  for (int l = coarsest; l < R; ++l) {
    if (c.branch_on(l)) {
      const std::string prefix = "branch." + std::to_string(l);
      Var y = trunk[static_cast<std::size_t>(l)];
      for (Var f : feeds) y = tape.concat(y, f);
      int idx = 0;
      if (l < finest) {
        for (int i = 0; i < bc; ++i, ++idx) y = tape.relu(conv(y, conv_name(prefix, idx)));
        if (!c.skip) feeds.clear();
        feeds.insert(feeds.begin(), y);
      } else {
        for (int i = 0; i < bc - 1; ++i, ++idx) y = tape.relu(conv(y, conv_name(prefix, idx)));
        for (int i = 0; i < c.extra_final_1x1; ++i, ++idx) y = tape.relu(conv(y, conv_name(prefix, idx)));
        return conv(y, conv_name(prefix, idx));
      }
    }
    for (Var& f : feeds) f = step_up(f, l);
  }
  throw ConfigError("RCN finest branch is masked");
}

}  // namespace rcn
