#include "rcn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rcn/checkpoint.hpp"
#include "rcn/error.hpp"
#include "rcn/loss.hpp"

namespace rcn {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) {
    throw ConfigError("validation_fraction must be in (0, 0.5]");
  }
  if (target_error < 0.0) throw ConfigError("target_error must be nonnegative");
  jitter_spec.validate();
  occlusion_spec.validate();
  lcn.validate();
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  kv["learning_rate"] = format_double(learning_rate);
  kv["momentum"] = format_double(momentum);
  kv["batch_size"] = std::to_string(batch_size);
  kv["max_epochs"] = std::to_string(max_epochs);
  kv["patience"] = std::to_string(patience);
  kv["lambda"] = format_double(lambda);
  kv["seed"] = std::to_string(seed);
  kv["jitter"] = jitter ? "true" : "false";
  kv["occlude"] = occlude ? "true" : "false";
  kv["augment_order"] = occlude_before_jitter ? "occlude,jitter,preprocess" : "jitter,occlude,preprocess";
  kv["validation_fraction"] = format_double(validation_fraction);
  kv["halve_on_plateau"] = halve_on_plateau ? "true" : "false";
  kv["target_error"] = format_double(target_error);
  std::string th;
  for (std::size_t i = 0; i < thresholds.size(); ++i) th += (i ? "," : "") + format_double(thresholds[i]);
  kv["thresholds"] = th;
  kv["jitter_translate"] = format_double(jitter_spec.translate);
  kv["jitter_scale"] = format_double(jitter_spec.scale);
  kv["jitter_rotate_deg"] = format_double(jitter_spec.rotate_deg);
  kv["occlusion_side_min"] = std::to_string(occlusion_spec.side_min);
  kv["occlusion_side_max"] = std::to_string(occlusion_spec.side_max);
  kv["occlusion_fill"] = format_double(occlusion_spec.fill);
  kv["lcn_window"] = std::to_string(lcn.window);
  kv["lcn_sigma"] = format_double(lcn.sigma);
  kv["lcn_epsilon"] = format_double(lcn.epsilon);
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) { return from_key_values(kv, TrainConfig{}); }

TrainConfig TrainConfig::from_key_values(const KeyValues& kv, const TrainConfig& base) {
  TrainConfig c = base;
  c.learning_rate = kv_double(kv, "learning_rate", c.learning_rate);
  c.momentum = kv_double(kv, "momentum", c.momentum);
  c.batch_size = kv_int(kv, "batch_size", c.batch_size);
  c.max_epochs = kv_int(kv, "max_epochs", c.max_epochs);
  c.patience = kv_int(kv, "patience", c.patience);
  c.lambda = kv_double(kv, "lambda", c.lambda);
  c.seed = std::stoull(kv_string(kv, "seed", std::to_string(c.seed)));
  c.jitter = kv_bool(kv, "jitter", c.jitter);
  c.occlude = kv_bool(kv, "occlude", c.occlude);
  const std::string order = kv_string(kv, "augment_order", c.occlude_before_jitter ? "occlude,jitter,preprocess"
                                                                                    : "jitter,occlude,preprocess");
  if (order == "occlude,jitter,preprocess") {
    c.occlude_before_jitter = true;
  } else if (order == "jitter,occlude,preprocess") {
    c.occlude_before_jitter = false;
  } else {
    throw ConfigError("augment_order must be jitter,occlude,preprocess or occlude,jitter,preprocess");
  }
  c.validation_fraction = kv_double(kv, "validation_fraction", c.validation_fraction);
  c.halve_on_plateau = kv_bool(kv, "halve_on_plateau", c.halve_on_plateau);
  c.target_error = kv_double(kv, "target_error", c.target_error);
  if (kv.count("thresholds")) {
    c.thresholds.clear();
    for (const std::string& t : split(kv.at("thresholds"), ',')) {
      if (!trim(t).empty()) c.thresholds.push_back(kv_double({{"t", t}}, "t", 0.0));
    }
  }
  c.jitter_spec.translate = kv_double(kv, "jitter_translate", c.jitter_spec.translate);
  c.jitter_spec.scale = kv_double(kv, "jitter_scale", c.jitter_spec.scale);
  c.jitter_spec.rotate_deg = kv_double(kv, "jitter_rotate_deg", c.jitter_spec.rotate_deg);
  c.occlusion_spec.side_min = kv_int(kv, "occlusion_side_min", c.occlusion_spec.side_min);
  c.occlusion_spec.side_max = kv_int(kv, "occlusion_side_max", c.occlusion_spec.side_max);
  c.occlusion_spec.fill = kv_double(kv, "occlusion_fill", c.occlusion_spec.fill);
  c.lcn.window = kv_int(kv, "lcn_window", c.lcn.window);
  c.lcn.sigma = kv_double(kv, "lcn_sigma", c.lcn.sigma);
  c.lcn.epsilon = kv_double(kv, "lcn_epsilon", c.lcn.epsilon);
  c.validate();
  return c;
}

bool TrainReport::same_numbers(const TrainReport& o) const {
  if (epochs.size() != o.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const EpochRecord &a = epochs[i], &b = o.epochs[i];
    if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.val_error != b.val_error ||
        a.best_val_error != b.best_val_error || a.learning_rate != b.learning_rate) {
      return false;
    }
  }
  return model == o.model && initial_loss == o.initial_loss && best_val_error == o.best_val_error &&
         best_epoch == o.best_epoch && epochs_to_threshold == o.epochs_to_threshold && stop_reason == o.stop_reason &&
         config == o.config;
}

std::string TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["initial_loss"] = initial_loss;
  j["final_train_loss"] = final_train_loss();
  j["best_val_error"] = best_val_error;
  j["best_epoch"] = best_epoch;
  j["stop_reason"] = stop_reason;
  j["checkpoint"] = checkpoint_path;
  nlohmann::ordered_json th = nlohmann::ordered_json::object();
  for (const auto& [t, e] : epochs_to_threshold) th[format_double(t)] = e;
  j["epochs_to_threshold"] = th;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  j["config"] = cfg;
  nlohmann::ordered_json ep = nlohmann::ordered_json::array();
  for (const EpochRecord& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"val_error", e.val_error},
                  {"best_val_error", e.best_val_error},
                  {"learning_rate", e.learning_rate},
                  {"seconds", e.seconds}});
  }
  j["epochs"] = ep;
  return j.dump(2) + "\n";
}

std::string TrainReport::curve_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_error,best_val_error,learning_rate,seconds\n";
  for (const EpochRecord& e : epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_error) << ','
        << format_double(e.best_val_error) << ',' << format_double(e.learning_rate) << ',' << format_double(e.seconds)
        << '\n';
  }
  return out.str();
}

Split split_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (n < 2) throw InputError("need at least 2 samples to split, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, {0x5B11u});
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  }
  const auto nv = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))), 1, n - 1);
  Split s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nv));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(nv), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

bool early_stop_check(std::span<const double> history, int patience) {
  if (history.empty()) throw InputError("early_stop_check: empty history");
  const auto best = static_cast<std::size_t>(std::min_element(history.begin(), history.end()) - history.begin());
  return history.size() - 1 - best >= static_cast<std::size_t>(patience);
}

Tensor4 preprocess_batch(std::span<const Sample> samples, const LcnSpec& lcn) {
  std::vector<Tensor4> images;
  images.reserve(samples.size());
  for (const Sample& s : samples) images.push_back(preprocess(s.image, lcn));
  return stack_batch(images);
}

std::vector<KeypointSet> predict_keypoints(const Network& net, const Tensor4& images, std::size_t chunk) {
  std::vector<KeypointSet> out;
  const std::size_t n = images.dims().n;
  for (std::size_t i = 0; i < n; i += chunk) {
    const std::size_t m = std::min(chunk, n - i);
    auto part = argmax_keypoints(net.forward(images.slice_batch(i, m)));
    for (auto& k : part) out.push_back(std::move(k));
  }
  return out;
}

double evaluate_error(const Network& net, const Dataset& data, const LcnSpec& lcn) {
  const auto pred = predict_keypoints(net, preprocess_batch(data.samples, lcn));
  return interocular_error(pred, keypoints_of(data.samples), data.eval);
}

namespace {

class Momentum {
 public:
  explicit Momentum(const std::vector<Parameter>& params) {
    for (const Parameter& p : params) velocity_.emplace_back(p.value.dims());
  }

  // g += 2 lambda w; v = mu v - lr g; w += v.
  void step(std::vector<Parameter>& params, double lr, double mu, double lambda) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].value.data();
      auto g = params[i].grad.data();
      auto v = velocity_[i].data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double grad = g[j] + 2.0 * lambda * w[j];
        v[j] = mu * v[j] - lr * grad;
        w[j] += v[j];
      }
    }
  }

 private:
  std::vector<Tensor4> velocity_;
};

void check_finite(double loss, const std::vector<Parameter>& params, int epoch, double lr) {
  bool ok = std::isfinite(loss);
  for (const Parameter& p : params) ok = ok && p.grad.all_finite() && p.value.all_finite();
  if (!ok) {
    throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " with learning rate " +
                         format_double(lr) + " (loss " + format_double(loss) + ")");
  }
}

std::vector<std::vector<double>> snapshot(const std::vector<Parameter>& params) {
  std::vector<std::vector<double>> s;
  for (const Parameter& p : params) s.emplace_back(p.value.data().begin(), p.value.data().end());
  return s;
}

void restore(std::vector<Parameter>& params, const std::vector<std::vector<double>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(s[i].begin(), s[i].end(), params[i].value.data().begin());
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, {0x0DE4u, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  }
  return order;
}

// Shared epoch bookkeeping: best tracking, plateau halving, stopping.
class Progress {
 public:
  Progress(TrainReport& report, const std::vector<double>& thresholds, int patience, bool halve, double target)
      : report_(report), patience_(patience), halve_(halve), target_(target) {
    for (double t : thresholds) report_.epochs_to_threshold[t] = -1;
  }

  // Returns true when `metric` is a new best.
  bool record(EpochRecord rec, double* lr) {
    history_.push_back(rec.val_error);
    const bool improved = report_.epochs.empty() || rec.val_error < report_.best_val_error;
    if (improved) {
      report_.best_val_error = rec.val_error;
      report_.best_epoch = rec.epoch;
    }
    rec.best_val_error = report_.best_val_error;
    for (auto& [t, e] : report_.epochs_to_threshold) {
      if (e < 0 && rec.val_error <= t) e = rec.epoch;
    }
    report_.epochs.push_back(rec);
    const int since = rec.epoch - report_.best_epoch;
    if (halve_ && since > 0 && since % std::max(1, patience_ / 2) == 0) *lr *= 0.5;
    return improved;
  }

  bool should_stop() {
    if (target_ > 0.0 && report_.best_val_error <= target_) {
      report_.stop_reason = "target";
      return true;
    }
    if (early_stop_check(history_, patience_)) {
      report_.stop_reason = "patience";
      return true;
    }
    return false;
  }

 private:
  TrainReport& report_;
  std::vector<double> history_;
  int patience_;
  bool halve_;
  double target_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TrainReport train(Network& net, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  const NetworkConfig& nc = net.config();
  if (train_set.num_keypoints() != nc.num_keypoints || val_set.num_keypoints() != nc.num_keypoints) {
    throw ConfigError("dataset has " + std::to_string(train_set.num_keypoints()) + " keypoints, model expects " +
                      std::to_string(nc.num_keypoints));
  }
  if (train_set.size() == 0 || val_set.size() == 0) throw InputError("train and validation sets must be nonempty");
  if (train_set.image_size() != nc.input_size || val_set.image_size() != nc.input_size) {
    throw ConfigError("dataset images are " + std::to_string(train_set.image_size()) + " px, model expects " +
                      std::to_string(nc.input_size));
  }
  if (cfg.occlude && cfg.occlusion_spec.side_max > nc.input_size) {
    throw ConfigError("occlusion side_max " + std::to_string(cfg.occlusion_spec.side_max) + " exceeds image size " +
                      std::to_string(nc.input_size));
  }

  TrainReport report;
  report.model = network_tag(nc);
  report.config = cfg.to_key_values();
  for (const auto& [k, v] : nc.to_key_values()) report.config["net." + k] = v;
  report.checkpoint_path = hooks.checkpoint_path;
  Progress progress(report, cfg.thresholds, cfg.patience, cfg.halve_on_plateau, cfg.target_error);

  const Tensor4 val_images = preprocess_batch(val_set.samples, cfg.lcn);
  const auto val_truth = keypoints_of(val_set.samples);
  const bool augment = cfg.jitter || cfg.occlude;
  std::vector<Tensor4> cached;
  if (!augment) {
    for (const Sample& s : train_set.samples) cached.push_back(preprocess(s.image, cfg.lcn));
  }

  Momentum opt(net.params());
  auto best = snapshot(net.params());
  double lr = cfg.learning_rate;
  const std::size_t n = train_set.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  bool first_batch = true;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(n, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t m = std::min(bs, n - start);
      std::vector<Tensor4> images;
      std::vector<KeypointSet> truth;
      for (std::size_t j = start; j < start + m; ++j) {
        const std::size_t idx = order[j];
        if (!augment) {
          images.push_back(cached[idx]);
          truth.push_back(train_set.samples[idx].keypoints);
          continue;
        }
        Rng rng = Rng::derive(cfg.seed, {0xA06u, static_cast<std::uint64_t>(epoch), idx});
        Sample s = train_set.samples[idx];
        if (cfg.occlude && cfg.occlude_before_jitter) s = occlude(s, cfg.occlusion_spec, rng);
        if (cfg.jitter) s = jitter_augment(s, cfg.jitter_spec, rng);
        if (cfg.occlude && !cfg.occlude_before_jitter) s = occlude(s, cfg.occlusion_spec, rng);
        images.push_back(preprocess(s.image, cfg.lcn));
        truth.push_back(std::move(s.keypoints));
      }
      Tape tape;
      Var x = tape.input(stack_batch(images));
      Var z = net.forward_pre_softmax(tape, x);
      NllTerms terms = softmax_nll(tape.value(z), truth);
      net.zero_grad();
      tape.backward(z, terms.grad);
      const double loss = terms.loss + cfg.lambda * net.squared_weight_norm();
      check_finite(loss, net.params(), epoch, lr);
      if (first_batch) {
        report.initial_loss = loss;
        first_batch = false;
      }
      loss_sum += loss * static_cast<double>(m);
      opt.step(net.params(), lr, cfg.momentum, cfg.lambda);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.learning_rate = lr;
    rec.val_error = interocular_error(predict_keypoints(net, val_images), val_truth, val_set.eval);
    rec.seconds = seconds_since(t0);
    if (progress.record(rec, &lr)) {
      best = snapshot(net.params());
      if (!hooks.checkpoint_path.empty()) save_network(hooks.checkpoint_path, net);
    }
    if (hooks.on_epoch) hooks.on_epoch(report.epochs.back());
    if (progress.should_stop()) break;
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  restore(net.params(), best);
  return report;
}

TrainReport train(Network& net, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const Split s = split_indices(data.size(), cfg.validation_fraction, cfg.seed);
  return train(net, data.subset(s.train), data.subset(s.val), cfg, hooks);
}

std::vector<AblationRow> ablation_sweep(const NetworkConfig& base, std::span<const BranchMask> masks,
                                        const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
  std::vector<NetworkConfig> configs;
  for (const BranchMask& m : masks) configs.push_back(apply_branch_mask(base, m));
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    Network net = build_network(configs[i]);
    const TrainReport r = train(net, train_set, val_set, cfg);
    rows.push_back({masks[i], base.arch, r.best_val_error, r.best_epoch});
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::vector<std::string> masks;
  bool has[2] = {false, false};
  for (const AblationRow& r : rows) {
    const std::string m = r.mask.str();
    if (std::find(masks.begin(), masks.end(), m) == masks.end()) masks.push_back(m);
    has[r.arch == Arch::RCN] = true;
  }
  std::ostringstream out;
  out << "| Mask |";
  if (has[0]) out << " SumNet |";
  if (has[1]) out << " RCN |";
  out << "\n|---|";
  if (has[0]) out << "---|";
  if (has[1]) out << "---|";
  out << '\n';
  for (const std::string& m : masks) {
    out << "| " << m << " |";
    for (int a = 0; a < 2; ++a) {
      if (!has[a]) continue;
      std::string cell = "n/a";
      for (const AblationRow& r : rows) {
        if (r.mask.str() == m && static_cast<int>(r.arch == Arch::RCN) == a) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.4f", r.val_error);
          cell = buf;
        }
      }
      out << ' ' << cell << " |";
    }
    out << '\n';
  }
  return out.str();
}

void DenoiserTrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) {
    throw ConfigError("validation_fraction must be in (0, 0.5]");
  }
  jitter_spec.validate();
}

KeyValues DenoiserTrainConfig::to_key_values() const {
  return {{"learning_rate", format_double(learning_rate)},
          {"momentum", format_double(momentum)},
          {"batch_size", std::to_string(batch_size)},
          {"max_epochs", std::to_string(max_epochs)},
          {"patience", std::to_string(patience)},
          {"lambda", format_double(lambda)},
          {"seed", std::to_string(seed)},
          {"validation_fraction", format_double(validation_fraction)},
          {"jitter", jitter ? "true" : "false"},
          {"jitter_translate", format_double(jitter_spec.translate)},
          {"jitter_scale", format_double(jitter_spec.scale)},
          {"jitter_rotate_deg", format_double(jitter_spec.rotate_deg)}};
}

DenoiseStats evaluate_denoiser(const Denoiser& den, std::span<const KeypointSet> truth, int count,
                               std::uint64_t seed, double tolerance_px) {
  const auto s = static_cast<std::size_t>(den.config().map_size);
  DenoiseStats st;
  double dist_sum = 0.0;
  std::size_t within = 0, closer = 0;
  const std::size_t chunk = 32;
  for (std::size_t i = 0; i < truth.size(); i += chunk) {
    const std::size_t m = std::min(chunk, truth.size() - i);
    CorruptionRecord rec;
    std::vector<KeypointSet> corrupted;
    for (std::size_t j = i; j < i + m; ++j) {
      Rng rng = Rng::derive(seed, {0xC0Eu, j});
      corrupted.push_back(corrupt_keypoints(truth[j], count, s, rng, &rec));
    }
    const auto pred = argmax_keypoints(den.forward(one_hot_maps(corrupted, s)));
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t c = 0; c < rec.indices[j].size(); ++c) {
        const auto k = static_cast<std::size_t>(rec.indices[j][c]);
        const Keypoint& t = rec.original[j][c];
        const double d = std::hypot(pred[j][k].row - t.row, pred[j][k].col - t.col);
        const double d_in = std::hypot(corrupted[j][k].row - t.row, corrupted[j][k].col - t.col);
        dist_sum += d;
        within += d <= tolerance_px;
        closer += d < d_in;
        ++st.cases;
      }
    }
  }
  if (st.cases == 0) throw EvalError("evaluate_denoiser: no cases");
  st.within_tolerance = static_cast<double>(within) / static_cast<double>(st.cases);
  st.closer = static_cast<double>(closer) / static_cast<double>(st.cases);
  st.mean_distance = dist_sum / static_cast<double>(st.cases);
  return st;
}

TrainReport train_denoiser(Denoiser& den, std::span<const KeypointSet> train_sets,
                           std::span<const KeypointSet> val_sets, const DenoiserTrainConfig& cfg,
                           const TrainHooks& hooks) {
  cfg.validate();
  const DenoiserConfig& dc = den.config();
  if (train_sets.empty() || val_sets.empty()) throw InputError("denoiser training needs train and validation sets");
  for (const auto* sets : {&train_sets, &val_sets}) {
    for (const KeypointSet& k : *sets) {
      if (static_cast<int>(k.size()) != dc.num_keypoints) {
        throw ConfigError("keypoint sets have " + std::to_string(k.size()) + " keypoints, denoiser expects " +
                          std::to_string(dc.num_keypoints));
      }
    }
  }
  const auto s = static_cast<std::size_t>(dc.map_size);
  const int count = dc.effective_corrupt_count();

  TrainReport report;
  report.model = "DEN";
  report.config = cfg.to_key_values();
  for (const auto& [k, v] : dc.to_key_values()) report.config["den." + k] = v;
  report.checkpoint_path = hooks.checkpoint_path;
  Progress progress(report, {}, cfg.patience, true, 0.0);

  // Fixed validation corruption.
  CorruptionRecord val_rec;
  std::vector<KeypointSet> val_in;
  for (std::size_t i = 0; i < val_sets.size(); ++i) {
    Rng rng = Rng::derive(cfg.seed, {0x7A1u, i});
    val_in.push_back(corrupt_keypoints(val_sets[i], count, s, rng, &val_rec));
  }
  const Tensor4 val_maps = one_hot_maps(val_in, s);
  const auto val_mask = val_rec.include_mask(static_cast<std::size_t>(dc.num_keypoints));

  Momentum opt(den.params());
  auto best = snapshot(den.params());
  double lr = cfg.learning_rate;
  const std::size_t n = train_sets.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  bool first_batch = true;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(n, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t m = std::min(bs, n - start);
      CorruptionRecord rec;
      std::vector<KeypointSet> truth, input;
      for (std::size_t j = start; j < start + m; ++j) {
        const std::size_t idx = order[j];
        Rng rng = Rng::derive(cfg.seed, {0xDE7u, static_cast<std::uint64_t>(epoch), idx});
        KeypointSet t = train_sets[idx];
        if (cfg.jitter) {
          for (int tries = 0; tries < cfg.jitter_spec.max_tries; ++tries) {
            KeypointSet w = warp_keypoints(t, jitter_affine(t, sample_jitter(cfg.jitter_spec, rng)));
            if (std::all_of(w.begin(), w.end(), [&](const Keypoint& p) {
                  return p.row >= 0 && p.col >= 0 && p.row < dc.map_size && p.col < dc.map_size;
                })) {
              t = std::move(w);
              break;
            }
          }
        }
        input.push_back(corrupt_keypoints(t, count, s, rng, &rec));
        truth.push_back(std::move(t));
      }
      Tape tape;
      Var x = tape.input(one_hot_maps(input, s));
      Var z = den.forward_pre_softmax(tape, x);
      Tensor4 g;
      const double loss = denoiser_loss(tape.value(z), truth, rec, cfg.lambda, den.squared_weight_norm(), &g);
      den.zero_grad();
      tape.backward(z, g);
      check_finite(loss, den.params(), epoch, lr);
      if (first_batch) {
        report.initial_loss = loss;
        first_batch = false;
      }
      loss_sum += loss * static_cast<double>(m);
      opt.step(den.params(), lr, cfg.momentum, cfg.lambda);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.learning_rate = lr;
    std::vector<Tensor4> val_z;
    for (std::size_t i = 0; i < val_sets.size(); i += 32) {
      val_z.push_back(den.pre_softmax(val_maps.slice_batch(i, std::min<std::size_t>(32, val_sets.size() - i))));
    }
    rec.val_error = masked_softmax_nll(stack_batch(val_z), val_sets, val_mask).loss;
    rec.seconds = seconds_since(t0);
    if (progress.record(rec, &lr)) {
      best = snapshot(den.params());
      if (!hooks.checkpoint_path.empty()) save_denoiser(hooks.checkpoint_path, den);
    }
    if (hooks.on_epoch) hooks.on_epoch(report.epochs.back());
    if (progress.should_stop()) break;
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  restore(den.params(), best);
  return report;
}

}  // namespace rcn
