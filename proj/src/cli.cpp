#include "rcn/cli.hpp"

#include <chrono>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rcn/checkpoint.hpp"
#include "rcn/config_text.hpp"
#include "rcn/dataset.hpp"
#include "rcn/denoiser.hpp"
#include "rcn/error.hpp"
#include "rcn/gradcheck_suite.hpp"
#include "rcn/image.hpp"
#include "rcn/ops.hpp"
#include "rcn/synth.hpp"
#include "rcn/trainer.hpp"

namespace fs = std::filesystem;

namespace rcn {

namespace {

constexpr const char* kVersion = "1.0.0";

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options whose values are forwarded into the key=value configuration only
// when given on the command line, so they override config-file entries.
class KvFlags {
 public:
  CLI::Option* option(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    values_.emplace_back();
    CLI::Option* o = app->add_option(name, values_.back(), help);
    items_.push_back({o, key, &values_.back(), ""});
    return o;
  }
  CLI::Option* flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& value,
                    const std::string& help) {
    CLI::Option* o = app->add_flag(name, help);
    items_.push_back({o, key, nullptr, value});
    return o;
  }
  void apply(KeyValues& kv) const {
    for (const Item& it : items_) {
      if (it.opt->count() == 0) continue;
      kv[it.key] = it.value ? *it.value : it.fixed;
    }
  }

 private:
  struct Item {
    CLI::Option* opt;
    std::string key;
    const std::string* value;
    std::string fixed;
  };
  std::deque<std::string> values_;
  std::vector<Item> items_;
};

struct Globals {
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out;
  bool force = false;
  bool quiet = false;
  std::vector<std::string> argv;
};

std::set<std::string> known_keys() {
  std::set<std::string> keys;
  for (const auto& [k, v] : NetworkConfig{}.to_key_values()) keys.insert(k);
  for (const auto& [k, v] : TrainConfig{}.to_key_values()) keys.insert(k);
  for (const auto& [k, v] : DenoiserConfig{}.to_key_values()) keys.insert("den." + k);
  for (const auto& [k, v] : DenoiserTrainConfig{}.to_key_values()) keys.insert("den." + k);
  for (const char* k : {"synth.count", "synth.keypoints", "synth.size", "synth.eye_min", "synth.eye_max",
                        "synth.rotation_deg", "synth.offset", "synth.noise", "synth.distractors"}) {
    keys.insert(k);
  }
  return keys;
}

KeyValues load_config(const Globals& g) {
  if (g.config_path.empty()) return {};
  KeyValues kv = read_key_values_file(g.config_path);
  const auto keys = known_keys();
  for (const auto& [k, v] : kv) {
    if (!keys.count(k)) throw ConfigError(g.config_path + ": unknown key '" + k + "'");
  }
  return kv;
}

void prepare_out_dir(const Globals& g) {
  if (g.out.empty()) throw ValidationError("--out is required");
  if (fs::exists(g.out)) {
    if (!fs::is_directory(g.out)) throw ValidationError("--out " + g.out + " exists and is not a directory");
    if (!fs::is_empty(g.out) && !g.force) {
      throw ValidationError("output directory " + g.out + " is not empty (use --force to overwrite)");
    }
    if (g.force) {
      for (const auto& e : fs::directory_iterator(g.out)) fs::remove_all(e.path());
    }
  }
  fs::create_directories(g.out);
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_manifest(const Globals& g, const std::string& command, const KeyValues& config,
                    const std::map<std::string, std::string>& artifacts) {
  nlohmann::ordered_json j;
  j["tool"] = "rcn";
  j["version"] = kVersion;
  j["command"] = command;
  j["argv"] = g.argv;
  j["seed"] = g.seed;
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) c[k] = v;
  j["config"] = c;
  nlohmann::ordered_json a = nlohmann::ordered_json::object();
  for (const auto& [k, v] : artifacts) a[k] = v;
  j["artifacts"] = a;
  j["created"] = timestamp();
  write_text(fs::path(g.out) / "run_manifest.json", j.dump(2) + "\n");
}

void log(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- synth

int cmd_synth(const Globals& g, const KeyValues& flags) {
  KeyValues kv = load_config(g);
  for (const auto& [k, v] : flags) kv[k] = v;
  SynthSpec spec;
  const int count = kv_int(kv, "synth.count", 200);
  spec.num_keypoints = kv_int(kv, "synth.keypoints", 5);
  spec.image_size = kv_int(kv, "synth.size", spec.image_size);
  spec.eye_distance_min = kv_double(kv, "synth.eye_min", spec.eye_distance_min);
  spec.eye_distance_max = kv_double(kv, "synth.eye_max", spec.eye_distance_max);
  spec.max_rotation_deg = kv_double(kv, "synth.rotation_deg", spec.max_rotation_deg);
  spec.max_offset = kv_double(kv, "synth.offset", spec.max_offset);
  spec.noise = kv_double(kv, "synth.noise", spec.noise);
  spec.distractors = kv_int(kv, "synth.distractors", spec.distractors);
  spec.validate();
  if (count < 1) throw ConfigError("--count must be at least 1");
  prepare_out_dir(g);
  const Dataset ds = generate_synthetic(count, g.seed, spec);
  save_dataset(ds, g.out);
  KeyValues resolved{{"synth.count", std::to_string(count)},
                     {"synth.keypoints", std::to_string(spec.num_keypoints)},
                     {"synth.size", std::to_string(spec.image_size)},
                     {"synth.eye_min", format_double(spec.eye_distance_min)},
                     {"synth.eye_max", format_double(spec.eye_distance_max)},
                     {"synth.rotation_deg", format_double(spec.max_rotation_deg)},
                     {"synth.offset", format_double(spec.max_offset)},
                     {"synth.noise", format_double(spec.noise)},
                     {"synth.distractors", std::to_string(spec.distractors)}};
  write_manifest(g, "synth", resolved, {{"dataset", g.out}});
  log(g, "wrote " + std::to_string(count) + " samples (K=" + std::to_string(spec.num_keypoints) + ") to " + g.out);
  return 0;
}

// ---------------------------------------------------------------- train

struct Resolved {
  NetworkConfig net;
  TrainConfig train;
  KeyValues kv;
};

Resolved resolve_training(const Globals& g, const KeyValues& flags, const Dataset& data) {
  KeyValues kv = load_config(g);
  if (!kv.count("seed")) kv["seed"] = std::to_string(g.seed);
  if (!kv.count("init_seed")) kv["init_seed"] = std::to_string(g.seed);
  for (const auto& [k, v] : flags) kv[k] = v;
  if (kv_bool(kv, "preset_68", false)) {
    const NetworkConfig p = NetworkConfig::preset_68();
    for (const auto& [k, v] : p.to_key_values()) {
      if (k == "branches" || k == "channels" || k == "extra_final_1x1") {
        if (!flags.count(k)) kv[k] = v;
      }
    }
  }
  kv.erase("preset_68");
  const std::string s = std::to_string(data.image_size());
  const std::string k = std::to_string(data.num_keypoints());
  if (kv.count("keypoints") && kv["keypoints"] != k) {
    throw ConfigError("configured keypoints=" + kv["keypoints"] + " but dataset has K=" + k);
  }
  if (kv.count("input_size") && kv["input_size"] != s) {
    throw ConfigError("configured input_size=" + kv["input_size"] + " but dataset images are " + s + " px");
  }
  kv["keypoints"] = k;
  kv["input_size"] = s;
  Resolved r;
  r.net = NetworkConfig::from_key_values(kv);
  r.train = TrainConfig::from_key_values(kv);
  r.kv = r.net.to_key_values();
  for (const auto& [key, v] : r.train.to_key_values()) r.kv[key] = v;
  return r;
}

void add_net_flags(CLI::App* app, KvFlags& f) {
  f.option(app, "--arch", "arch", "sumnet or rcn")->check(CLI::IsMember({"sumnet", "rcn"}));
  f.option(app, "--branches", "branches", "number of branches R (1..7)");
  f.option(app, "--channels", "channels", "channels per layer");
  f.flag(app, "--skip", "skip", "true", "RCN skip connections from all coarser branches");
  f.option(app, "--mask", "mask", "branch mask, coarsest first, e.g. 1,0,0,1");
  f.option(app, "--upsample", "upsample", "tile or bilinear")->check(CLI::IsMember({"tile", "bilinear"}));
  f.option(app, "--init", "init_scheme", "xavier_uniform or he_uniform")
      ->check(CLI::IsMember({"xavier_uniform", "he_uniform"}));
  f.option(app, "--extra-1x1", "extra_final_1x1", "1x1 conv+ReLU layers before the RCN output");
  f.option(app, "--trunk-convs", "trunk_convs", "conv layers per trunk level");
  f.option(app, "--branch-convs", "branch_convs", "conv layers per branch");
  f.flag(app, "--preset-68", "preset_68", "true", "5 branches, 64 channels, two extra 1x1 convs");
}

void add_train_flags(CLI::App* app, KvFlags& f) {
  f.option(app, "--epochs", "max_epochs", "maximum epochs");
  f.option(app, "--patience", "patience", "early-stopping patience in epochs");
  f.option(app, "--lr", "learning_rate", "learning rate");
  f.option(app, "--momentum", "momentum", "SGD momentum");
  f.option(app, "--batch", "batch_size", "mini-batch size");
  f.option(app, "--lambda", "lambda", "L2 weight penalty");
  f.option(app, "--val-fraction", "validation_fraction", "held-out fraction");
  f.option(app, "--target-error", "target_error", "stop once validation error reaches this");
  f.flag(app, "--occlude", "occlude", "true", "random black rectangle augmentation");
  f.flag(app, "--jitter", "jitter", "true", "scale/rotation/translation jitter (default on)");
  f.flag(app, "--no-jitter", "jitter", "false", "disable jitter");
  f.option(app, "--occlusion-min", "occlusion_side_min", "smallest rectangle side in px");
  f.option(app, "--occlusion-max", "occlusion_side_max", "largest rectangle side in px");
}

int cmd_train(const Globals& g, const KeyValues& flags, const std::string& data_dir) {
  const Dataset data = load_dataset(data_dir);
  const Resolved r = resolve_training(g, flags, data);
  if (r.train.occlude && r.train.occlusion_spec.side_max > data.image_size()) {
    throw ConfigError("occlusion side_max " + std::to_string(r.train.occlusion_spec.side_max) +
                      " exceeds the dataset image size " + std::to_string(data.image_size()));
  }
  prepare_out_dir(g);
  const Split split = split_indices(data.size(), r.train.validation_fraction, r.train.seed);
  const Dataset train_set = data.subset(split.train);
  const Dataset val_set = data.subset(split.val);
  {
    std::ostringstream ids;
    for (const Sample& s : val_set.samples) ids << s.id << '\n';
    write_text(fs::path(g.out) / "split.txt", ids.str());
  }
  Network net = build_network(r.net);
  TrainHooks hooks;
  hooks.checkpoint_path = (fs::path(g.out) / "model.ckpt").string();
  hooks.on_epoch = [&](const EpochRecord& e) {
    log(g, "epoch " + std::to_string(e.epoch) + " loss " + fmt(e.train_loss) + " val " + fmt(e.val_error) + " best " +
               fmt(e.best_val_error) + " lr " + format_double(e.learning_rate));
  };
  const TrainReport report = train(net, train_set, val_set, r.train, hooks);
  write_text(fs::path(g.out) / "report.json", report.to_json());
  write_text(fs::path(g.out) / "curve.csv", report.curve_csv());
  KeyValues resolved = r.kv;
  resolved["data"] = data_dir;
  write_manifest(g, "train", resolved,
                 {{"checkpoint", hooks.checkpoint_path},
                  {"report", (fs::path(g.out) / "report.json").string()},
                  {"curve", (fs::path(g.out) / "curve.csv").string()},
                  {"split", (fs::path(g.out) / "split.txt").string()}});
  std::cout << network_tag(r.net) << " best_val_error " << format_double(report.best_val_error) << " epoch "
            << report.best_epoch << " (" << report.stop_reason << ")\n";
  return 0;
}

// ---------------------------------------------------------------- eval

Dataset select_split(const Dataset& data, const std::string& which, const std::string& split_file) {
  if (which == "all") return data;
  std::ifstream in(split_file);
  if (!in) throw LoadError("cannot read split file " + split_file);
  std::set<std::string> val;
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) val.insert(trim(line));
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if ((val.count(data.samples[i].id) > 0) == (which == "val")) idx.push_back(i);
  }
  if (idx.empty()) throw InputError("split '" + which + "' selects no samples from " + split_file);
  return data.subset(idx);
}

// Rescales each map so its first maximum is the only pixel at 255.
Tensor4 heatmap_bytes(std::span<const double> plane, std::size_t h, std::size_t w) {
  Tensor4 out({1, 1, h, w});
  const Keypoint am = argmax_location(plane, h, w);
  const double mx = plane[static_cast<std::size_t>(am.row) * w + static_cast<std::size_t>(am.col)];
  for (std::size_t i = 0; i < h * w; ++i) {
    double b = mx > 0.0 ? std::round(255.0 * plane[i] / mx) : 0.0;
    b = std::min(b, 254.0);
    out.data()[i] = b / 255.0;
  }
  out(0, 0, static_cast<std::size_t>(am.row), static_cast<std::size_t>(am.col)) = 1.0;
  return out;
}

void write_overlay(const fs::path& path, const Sample& s, const KeypointSet& pred) {
  const Dims& d = s.image.dims();
  Tensor4 rgb({1, 3, d.h, d.w});
  for (std::size_t c = 0; c < 3; ++c) std::copy(s.image.data().begin(), s.image.data().end(), rgb.plane(0, c).begin());
  auto mark = [&](const Keypoint& p, double r, double gr, double b) {
    const auto i = static_cast<std::size_t>(p.row), j = static_cast<std::size_t>(p.col);
    rgb(0, 0, i, j) = r;
    rgb(0, 1, i, j) = gr;
    rgb(0, 2, i, j) = b;
  };
  for (const Keypoint& p : s.keypoints) mark(p, 0.0, 1.0, 0.0);
  for (const Keypoint& p : pred) mark(p, 1.0, 0.0, 0.0);
  write_ppm(path.string(), rgb);
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "all";
  std::string split_file;
  std::string denoiser;
  bool joint = false;
  bool dump = false;
  int dump_count = 8;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const Network net = load_network(a.checkpoint);
  const Dataset all = load_dataset(a.data);
  const NetworkConfig& nc = net.config();
  if (all.num_keypoints() != nc.num_keypoints || all.image_size() != nc.input_size) {
    throw ConfigError("checkpoint " + a.checkpoint + " has K=" + std::to_string(nc.num_keypoints) + ", S=" +
                      std::to_string(nc.input_size) + " but dataset " + a.data + " has K=" +
                      std::to_string(all.num_keypoints()) + ", S=" + std::to_string(all.image_size()));
  }
  if (a.joint && a.denoiser.empty()) throw ValidationError("--joint needs --denoiser");
  std::optional<Denoiser> den;
  if (!a.denoiser.empty()) {
    den = load_denoiser(a.denoiser);
    const DenoiserConfig& dc = den->config();
    if (dc.num_keypoints != nc.num_keypoints || dc.map_size != nc.input_size) {
      throw ConfigError("denoiser " + a.denoiser + " has K=" + std::to_string(dc.num_keypoints) + ", S=" +
                        std::to_string(dc.map_size) + " but checkpoint " + a.checkpoint + " has K=" +
                        std::to_string(nc.num_keypoints) + ", S=" + std::to_string(nc.input_size));
    }
  }
  const std::string split_file =
      a.split_file.empty() ? (fs::path(a.checkpoint).parent_path() / "split.txt").string() : a.split_file;
  const Dataset data = select_split(all, a.split, split_file);
  const LcnSpec lcn;
  prepare_out_dir(g);

  const Tensor4 images = preprocess_batch(data.samples, lcn);
  const auto truth = keypoints_of(data.samples);
  const auto pred = predict_keypoints(net, images);
  const double err = interocular_error(pred, truth, data.eval);
  std::vector<std::string> ids;
  for (const Sample& s : data.samples) ids.push_back(s.id);
  {
    std::ofstream out(fs::path(g.out) / "eval.csv");
    write_eval_csv(out, ids, pred, truth, data.eval);
  }
  nlohmann::ordered_json metrics;
  metrics["samples"] = data.size();
  metrics["split"] = a.split;
  metrics["interocular_error"] = err;
  std::map<std::string, std::string> artifacts{{"eval_csv", (fs::path(g.out) / "eval.csv").string()},
                                               {"metrics", (fs::path(g.out) / "metrics.json").string()}};
  std::cout << "interocular_error " << format_double(err) << " over " << data.size() << " samples\n";
  if (a.joint) {
    std::vector<KeypointSet> jp;
    for (std::size_t i = 0; i < data.size(); i += 32) {
      const std::size_t m = std::min<std::size_t>(32, data.size() - i);
      for (auto& k : argmax_keypoints(joint_predict(net, *den, images.slice_batch(i, m)))) jp.push_back(std::move(k));
    }
    const double jerr = interocular_error(jp, truth, data.eval);
    std::ofstream out(fs::path(g.out) / "eval_joint.csv");
    write_eval_csv(out, ids, jp, truth, data.eval);
    metrics["joint_interocular_error"] = jerr;
    artifacts["eval_joint_csv"] = (fs::path(g.out) / "eval_joint.csv").string();
    std::cout << "joint_interocular_error " << format_double(jerr) << "\n";
  }
  write_text(fs::path(g.out) / "metrics.json", metrics.dump(2) + "\n");
  if (a.dump) {
    const fs::path hm = fs::path(g.out) / "heatmaps";
    fs::create_directories(hm);
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(a.dump_count, 0)), data.size());
    if (n > 0) {
      const ProbMaps probs = net.forward(images.slice_batch(0, n));
      const auto s = static_cast<std::size_t>(nc.input_size);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < probs.dims().c; ++k) {
          write_pgm((hm / (data.samples[i].id + "_k" + std::to_string(k) + ".pgm")).string(),
                    heatmap_bytes(probs.plane(i, k), s, s));
        }
        write_overlay(hm / (data.samples[i].id + "_overlay.ppm"), data.samples[i], pred[i]);
      }
    }
    artifacts["heatmaps"] = hm.string();
  }
  KeyValues resolved = nc.to_key_values();
  resolved["checkpoint"] = a.checkpoint;
  resolved["data"] = a.data;
  resolved["split"] = a.split;
  if (a.split != "all") resolved["split_file"] = split_file;
  if (!a.denoiser.empty()) resolved["denoiser"] = a.denoiser;
  resolved["joint"] = a.joint ? "true" : "false";
  write_manifest(g, "eval", resolved, artifacts);
  return 0;
}

// ---------------------------------------------------------------- ablate

int cmd_ablate(const Globals& g, const KeyValues& flags, const std::string& data_dir, const std::string& archs,
               const std::string& masks_text) {
  const Dataset data = load_dataset(data_dir);
  KeyValues f = flags;
  f.erase("arch");
  Resolved r = resolve_training(g, f, data);
  const int R = r.net.num_branches;
  std::vector<BranchMask> masks;
  if (masks_text.empty()) {
    if (R == 4) {
      for (const char* m : {"1,0,0,0", "0,0,0,1", "1,0,0,1", "1,1,1,1"}) masks.push_back(BranchMask::parse(m));
    } else {
      masks.push_back(BranchMask::all(R));
    }
  } else {
    for (const std::string& m : split(masks_text, ';')) masks.push_back(BranchMask::parse(trim(m)));
  }
  std::vector<Arch> run;
  if (archs == "sumnet" || archs == "both") run.push_back(Arch::SumNet);
  if (archs == "rcn" || archs == "both") run.push_back(Arch::RCN);
  // Validate every cell before training anything.
  std::vector<std::pair<Arch, BranchMask>> cells;
  for (Arch a : run) {
    NetworkConfig base = r.net;
    base.arch = a;
    base.branch_convs = flags.count("branch_convs") ? base.branch_convs : 0;
    for (const BranchMask& m : masks) {
      if (a == Arch::RCN && !m.bits.empty() && !m.bits.back()) continue;
      apply_branch_mask(base, m);
      cells.emplace_back(a, m);
    }
  }
  prepare_out_dir(g);
  const Split split = split_indices(data.size(), r.train.validation_fraction, r.train.seed);
  const Dataset train_set = data.subset(split.train);
  const Dataset val_set = data.subset(split.val);
  std::vector<AblationRow> rows;
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& [a, m] : cells) {
    NetworkConfig base = r.net;
    base.arch = a;
    base.branch_convs = flags.count("branch_convs") ? base.branch_convs : 0;
    const auto part = ablation_sweep(base, std::span<const BranchMask>(&m, 1), train_set, val_set, r.train);
    rows.push_back(part.front());
    log(g, to_string(a) + " mask " + m.str() + " val error " + fmt(part.front().val_error));
    j.push_back({{"arch", to_string(a)}, {"mask", m.str()}, {"val_error", part.front().val_error},
                 {"best_epoch", part.front().best_epoch}});
  }
  const std::string table = format_ablation_table(rows);
  write_text(fs::path(g.out) / "ablation.md", table);
  write_text(fs::path(g.out) / "ablation.json", j.dump(2) + "\n");
  KeyValues resolved = r.kv;
  resolved["data"] = data_dir;
  resolved["ablate_archs"] = archs;
  write_manifest(g, "ablate", resolved,
                 {{"table", (fs::path(g.out) / "ablation.md").string()},
                  {"json", (fs::path(g.out) / "ablation.json").string()}});
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const Globals& g, const std::vector<std::string>& ops, const std::string& inject, bool list) {
  if (list) {
    for (const std::string& n : gradcheck_names()) std::cout << n << '\n';
    return 0;
  }
  GradCheckSuiteOptions opt;
  for (const std::string& o : ops) {
    for (const std::string& p : split(o, ',')) {
      if (!trim(p).empty()) opt.ops.push_back(trim(p));
    }
  }
  opt.inject_sign_error = inject;
  opt.seed = g.seed;
  const GradCheckSuiteResult res = run_gradcheck_suite(opt);
  std::ostringstream text;
  for (const GradCheckReport& r : res.reports) text << r.summary() << '\n';
  const bool ok = res.passed();
  if (!ok) {
    text << "FAILED:";
    for (const std::string& n : res.failed()) text << ' ' << n;
    text << '\n';
  }
  std::cout << text.str();
  if (!g.out.empty()) {
    prepare_out_dir(g);
    write_text(fs::path(g.out) / "gradcheck.txt", text.str());
    KeyValues resolved{{"ops", ops.empty() ? "all" : split(ops.front(), ',').front()},
                       {"inject_sign_error", inject},
                       {"seed", std::to_string(g.seed)}};
    write_manifest(g, "gradcheck", resolved, {{"report", (fs::path(g.out) / "gradcheck.txt").string()}});
  }
  return ok ? 0 : 3;
}

// ---------------------------------------------------------------- denoise-train

int cmd_denoise_train(const Globals& g, const KeyValues& flags, const std::string& data_dir, double tolerance) {
  const Dataset data = load_dataset(data_dir);
  KeyValues kv = load_config(g);
  for (const auto& [k, v] : flags) kv[k] = v;
  DenoiserConfig dc;
  dc.num_keypoints = data.num_keypoints();
  dc.map_size = data.image_size();
  if (kv.count("den.num_keypoints") && kv["den.num_keypoints"] != std::to_string(dc.num_keypoints)) {
    throw ConfigError("configured den.num_keypoints=" + kv["den.num_keypoints"] + " but dataset has K=" +
                      std::to_string(dc.num_keypoints));
  }
  if (kv.count("den.map_size") && kv["den.map_size"] != std::to_string(dc.map_size)) {
    throw ConfigError("configured den.map_size=" + kv["den.map_size"] + " but dataset images are " +
                      std::to_string(dc.map_size) + " px");
  }
  dc.layers = kv_int(kv, "den.layers", dc.layers);
  dc.kernel = kv_int(kv, "den.kernel", dc.kernel);
  dc.channels = kv_int(kv, "den.channels", dc.channels);
  dc.corrupt_count = kv_int(kv, "den.corrupt_count", dc.corrupt_count);
  dc.init_seed = std::stoull(kv_string(kv, "den.init_seed", std::to_string(g.seed)));
  dc.validate();
  DenoiserTrainConfig tc;
  tc.learning_rate = kv_double(kv, "den.learning_rate", tc.learning_rate);
  tc.momentum = kv_double(kv, "den.momentum", tc.momentum);
  tc.batch_size = kv_int(kv, "den.batch_size", tc.batch_size);
  tc.max_epochs = kv_int(kv, "den.max_epochs", tc.max_epochs);
  tc.patience = kv_int(kv, "den.patience", tc.patience);
  tc.lambda = kv_double(kv, "den.lambda", tc.lambda);
  tc.seed = std::stoull(kv_string(kv, "den.seed", std::to_string(g.seed)));
  tc.validation_fraction = kv_double(kv, "den.validation_fraction", tc.validation_fraction);
  tc.jitter = kv_bool(kv, "den.jitter", tc.jitter);
  tc.validate();
  if (tolerance <= 0.0) tolerance = 5.0 * dc.map_size / 80.0;
  prepare_out_dir(g);

  const Split split = split_indices(data.size(), tc.validation_fraction, tc.seed);
  const auto train_sets = keypoints_of(data.subset(split.train).samples);
  const auto val_sets = keypoints_of(data.subset(split.val).samples);
  Denoiser den = build_denoiser(dc);
  TrainHooks hooks;
  hooks.checkpoint_path = (fs::path(g.out) / "denoiser.ckpt").string();
  hooks.on_epoch = [&](const EpochRecord& e) {
    log(g, "epoch " + std::to_string(e.epoch) + " loss " + fmt(e.train_loss) + " val_loss " + fmt(e.val_error) +
               " lr " + format_double(e.learning_rate));
  };
  const TrainReport report = train_denoiser(den, train_sets, val_sets, tc, hooks);
  const DenoiseStats st = evaluate_denoiser(den, val_sets, 1, tc.seed, tolerance);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(report.to_json());
  j["single_corruption"] = {{"tolerance_px", tolerance},
                            {"within_tolerance", st.within_tolerance},
                            {"closer_than_input", st.closer},
                            {"mean_distance_px", st.mean_distance},
                            {"cases", st.cases}};
  write_text(fs::path(g.out) / "report.json", j.dump(2) + "\n");
  write_text(fs::path(g.out) / "curve.csv", report.curve_csv());
  KeyValues resolved;
  for (const auto& [k, v] : dc.to_key_values()) resolved["den." + k] = v;
  for (const auto& [k, v] : tc.to_key_values()) resolved["den." + k] = v;
  resolved["data"] = data_dir;
  write_manifest(g, "denoise-train", resolved,
                 {{"checkpoint", hooks.checkpoint_path},
                  {"report", (fs::path(g.out) / "report.json").string()},
                  {"curve", (fs::path(g.out) / "curve.csv").string()}});
  std::cout << "denoiser corrected " << fmt(100.0 * st.within_tolerance, 1) << "% of single corruptions within "
            << format_double(tolerance) << " px\n";
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Recombinator Networks and SumNet keypoint localization"};
  app.require_subcommand(1);
  Globals g;
  for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);
  app.add_option("--seed", g.seed, "master random seed")->capture_default_str();
  app.add_option("--config", g.config_path, "flat key=value config file; flags override it")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--force", g.force, "overwrite a non-empty output directory");
  app.add_flag("-q,--quiet", g.quiet, "suppress progress output");
  app.set_version_flag("--version", kVersion);

  KvFlags synth_flags;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic face dataset");
  synth_flags.option(synth, "--count", "synth.count", "number of samples (default 200)");
  synth_flags.option(synth, "--keypoints", "synth.keypoints", "5 or 68")->check(CLI::IsMember({"5", "68"}));
  synth_flags.option(synth, "--size", "synth.size", "image side in px (default 80)");
  synth_flags.option(synth, "--eye-min", "synth.eye_min", "smallest eye distance / size");
  synth_flags.option(synth, "--eye-max", "synth.eye_max", "largest eye distance / size");
  synth_flags.option(synth, "--rotation", "synth.rotation_deg", "maximum head rotation in degrees");
  synth_flags.option(synth, "--offset", "synth.offset", "largest head-centre offset / size");
  synth_flags.option(synth, "--noise", "synth.noise", "pixel noise std");
  synth_flags.option(synth, "--distractors", "synth.distractors", "eye-like background decoys per image");

  KvFlags train_flags;
  std::string train_data;
  CLI::App* train_cmd = app.add_subcommand("train", "train a SumNet or RCN model");
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  add_net_flags(train_cmd, train_flags);
  add_train_flags(train_cmd, train_flags);

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_args.data, "dataset directory")->required();
  eval->add_option("--split", eval_args.split, "all, val or train")->check(CLI::IsMember({"all", "val", "train"}));
  eval->add_option("--split-file", eval_args.split_file, "validation ids (default: split.txt next to checkpoint)");
  eval->add_option("--denoiser", eval_args.denoiser, "denoiser checkpoint")->check(CLI::ExistingFile);
  eval->add_flag("--joint", eval_args.joint, "also evaluate the joint model");
  eval->add_flag("--dump-heatmaps", eval_args.dump, "write per-keypoint PGM heatmaps and overlays");
  eval->add_option("--dump-count", eval_args.dump_count, "samples to dump")->capture_default_str();

  KvFlags ablate_flags;
  std::string ablate_data, ablate_archs = "both", ablate_masks;
  CLI::App* ablate = app.add_subcommand("ablate", "branch-mask ablation sweep");
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--archs", ablate_archs, "sumnet, rcn or both")->check(CLI::IsMember({"sumnet", "rcn", "both"}));
  ablate->add_option("--masks", ablate_masks, "masks separated by ';' (default with 4 branches: 1,0,0,0;0,0,0,1;1,0,0,1;1,1,1,1)");
  add_net_flags(ablate, ablate_flags);
  add_train_flags(ablate, ablate_flags);

  std::vector<std::string> gc_ops;
  std::string gc_inject;
  bool gc_list = false;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--ops", gc_ops, "check name prefixes, comma separated");
  gc->add_option("--inject-sign-error", gc_inject, "flip analytic gradients of matching checks (test hook)");
  gc->add_flag("--list", gc_list, "list available checks");

  KvFlags den_flags;
  std::string den_data;
  double den_tol = 0.0;
  CLI::App* den = app.add_subcommand("denoise-train", "train the keypoint denoising model");
  den->add_option("--data", den_data, "dataset directory")->required();
  den_flags.option(den, "--layers", "den.layers", "conv layers (default 5)");
  den_flags.option(den, "--kernel", "den.kernel", "odd kernel size (default 9)");
  den_flags.option(den, "--channels", "den.channels", "channels (default 64)");
  den_flags.option(den, "--corrupt", "den.corrupt_count", "keypoints corrupted per example");
  den_flags.option(den, "--epochs", "den.max_epochs", "maximum epochs");
  den_flags.option(den, "--patience", "den.patience", "early-stopping patience");
  den_flags.option(den, "--lr", "den.learning_rate", "learning rate");
  den_flags.option(den, "--momentum", "den.momentum", "SGD momentum");
  den_flags.option(den, "--batch", "den.batch_size", "mini-batch size");
  den_flags.option(den, "--lambda", "den.lambda", "L2 weight penalty");
  den_flags.option(den, "--val-fraction", "den.validation_fraction", "held-out fraction");
  den_flags.flag(den, "--no-jitter", "den.jitter", "false", "disable keypoint jitter");
  den->add_option("--tolerance", den_tol, "pixel tolerance for the report (default 5 px at 80 px)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    KeyValues flags;
    if (*synth) {
      synth_flags.apply(flags);
      return cmd_synth(g, flags);
    }
    if (*train_cmd) {
      train_flags.apply(flags);
      return cmd_train(g, flags, train_data);
    }
    if (*eval) return cmd_eval(g, eval_args);
    if (*ablate) {
      ablate_flags.apply(flags);
      return cmd_ablate(g, flags, ablate_data, ablate_archs, ablate_masks);
    }
    if (*gc) return cmd_gradcheck(g, gc_ops, gc_inject, gc_list);
    if (*den) {
      den_flags.apply(flags);
      return cmd_denoise_train(g, flags, den_data, den_tol);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace rcn
