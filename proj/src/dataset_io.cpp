#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "rcn/config_text.hpp"
#include "rcn/dataset.hpp"
#include "rcn/error.hpp"
#include "rcn/image.hpp"

namespace fs = std::filesystem;

namespace rcn {

int Dataset::image_size() const {
  return samples.empty() ? 0 : static_cast<int>(samples.front().image.dims().h);
}

void Dataset::validate() const {
  const std::size_t k = keypoint_names.size();
  if (k == 0) throw InputError("dataset has no keypoint names");
  eval.validate(static_cast<int>(k));
  std::set<std::string> ids;
  const int s = image_size();
  for (const Sample& smp : samples) {
    if (!ids.insert(smp.id).second) throw InputError("duplicate sample id " + smp.id);
    const Dims& d = smp.image.dims();
    if (d.n != 1 || d.c != 1 || d.h != d.w || static_cast<int>(d.h) != s) {
      throw InputError("sample " + smp.id + ": image dims " + d.str() + ", expected (1,1," + std::to_string(s) + "," +
                       std::to_string(s) + ")");
    }
    if (!smp.image.all_finite()) throw InputError("sample " + smp.id + ": non-finite pixel");
    if (smp.keypoints.size() != k) {
      throw InputError("sample " + smp.id + ": " + std::to_string(smp.keypoints.size()) + " keypoints, expected " +
                       std::to_string(k));
    }
    for (std::size_t i = 0; i < k; ++i) {
      const Keypoint& p = smp.keypoints[i];
      if (p.row < 0 || p.col < 0 || p.row >= s || p.col >= s) {
        throw InputError("sample " + smp.id + ": keypoint " + std::to_string(i) + " at (" + std::to_string(p.row) +
                         "," + std::to_string(p.col) + ") outside the image");
      }
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{{}, keypoint_names, eval};
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(samples.at(i));
  return out;
}

bool Dataset::operator==(const Dataset& other) const {
  return samples == other.samples && keypoint_names == other.keypoint_names &&
         eval.left_eye == other.eval.left_eye && eval.right_eye == other.eval.right_eye;
}

Tensor4 stack_images(std::span<const Sample> samples) {
  std::vector<Tensor4> images;
  images.reserve(samples.size());
  for (const Sample& s : samples) images.push_back(s.image);
  return stack_batch(images);
}

std::vector<KeypointSet> keypoints_of(std::span<const Sample> samples) {
  std::vector<KeypointSet> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.keypoints);
  return out;
}

namespace {

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

int parse_coord(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(t, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (t.empty() || pos != t.size()) throw LoadError(where + ": '" + text + "' is not an integer coordinate");
  return v;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  ds.validate();
  fs::create_directories(dir);
  const fs::path root(dir);
  KeyValues meta;
  meta["keypoint_names"] = join(ds.keypoint_names, ',');
  meta["left_eye"] = std::to_string(ds.eval.left_eye);
  meta["right_eye"] = std::to_string(ds.eval.right_eye);
  meta["image_size"] = std::to_string(ds.image_size());
  meta["count"] = std::to_string(ds.size());
  {
    std::ofstream out(root / "dataset.meta", std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + (root / "dataset.meta").string());
    out << format_key_values(meta);
  }
  std::ofstream manifest(root / "manifest.csv", std::ios::trunc);
  if (!manifest) throw ConfigError("cannot write " + (root / "manifest.csv").string());
  manifest << "id,image_file";
  for (std::size_t k = 0; k < ds.keypoint_names.size(); ++k) manifest << ",row" << k << ",col" << k;
  manifest << '\n';
  for (const Sample& s : ds.samples) {
    const std::string file = s.id + ".pgm";
    write_pgm((root / file).string(), s.image);
    manifest << s.id << ',' << file;
    for (const Keypoint& p : s.keypoints) manifest << ',' << p.row << ',' << p.col;
    manifest << '\n';
  }
  if (!manifest) throw ConfigError("failed writing manifest in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path meta_path = root / "dataset.meta";
  const fs::path manifest_path = root / "manifest.csv";
  if (!fs::exists(meta_path)) throw LoadError("missing " + meta_path.string());
  if (!fs::exists(manifest_path)) throw LoadError("missing " + manifest_path.string());

  Dataset ds;
  KeyValues meta;
  int image_size = 0;
  std::size_t count = 0;
  try {
    meta = read_key_values_file(meta_path.string());
    ds.keypoint_names = split(kv_string(meta, "keypoint_names", ""), ',');
    ds.eval.left_eye = kv_int(meta, "left_eye", -1);
    ds.eval.right_eye = kv_int(meta, "right_eye", -1);
    image_size = kv_int(meta, "image_size", 0);
    count = static_cast<std::size_t>(kv_int(meta, "count", -1));
  } catch (const ConfigError& e) {
    throw LoadError(meta_path.string() + ": " + e.what());
  }
  if (ds.keypoint_names.empty() || ds.keypoint_names.front().empty()) {
    throw LoadError(meta_path.string() + ": missing keypoint_names");
  }
  if (image_size <= 0) throw LoadError(meta_path.string() + ": missing or invalid image_size");
  try {
    ds.eval.validate(ds.num_keypoints());
  } catch (const ConfigError& e) {
    throw LoadError(meta_path.string() + ": " + e.what());
  }

  const std::size_t k = ds.keypoint_names.size();
  std::ifstream in(manifest_path);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw LoadError(manifest_path.string() + ": empty manifest");
  const auto header = split(trim(line), ',');
  if (header.size() != 2 + 2 * k || header[0] != "id" || header[1] != "image_file") {
    throw LoadError(manifest_path.string() + ":1: header does not match " + std::to_string(k) + " keypoints");
  }
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    const auto cols = split(trim(line), ',');
    if (cols.size() != 2 + 2 * k) {
      throw LoadError(where + ": expected " + std::to_string(2 + 2 * k) + " columns, got " + std::to_string(cols.size()));
    }
    Sample s;
    s.id = trim(cols[0]);
    if (s.id.empty()) throw LoadError(where + ": empty sample id");
    if (!ids.insert(s.id).second) throw LoadError(where + ": duplicate sample id " + s.id);
    const fs::path image_path = root / trim(cols[1]);
    if (!fs::exists(image_path)) throw LoadError(where + ": sample " + s.id + ": missing image file " + image_path.string());
    s.image = read_pnm(image_path.string());
    if (s.image.dims().c != 1) throw LoadError(image_path.string() + ": expected a grayscale PGM");
    if (s.image.dims().h != static_cast<std::size_t>(image_size) ||
        s.image.dims().w != static_cast<std::size_t>(image_size)) {
      throw LoadError(where + ": sample " + s.id + ": image is " + std::to_string(s.image.dims().h) + "x" +
                      std::to_string(s.image.dims().w) + ", dataset.meta says " + std::to_string(image_size));
    }
    for (std::size_t i = 0; i < k; ++i) {
      Keypoint p{parse_coord(cols[2 + 2 * i], where), parse_coord(cols[3 + 2 * i], where)};
      if (p.row < 0 || p.col < 0 || p.row >= image_size || p.col >= image_size) {
        throw LoadError(where + ": sample " + s.id + ": keypoint " + std::to_string(i) + " at (" +
                        std::to_string(p.row) + "," + std::to_string(p.col) + ") is outside the " +
                        std::to_string(image_size) + "x" + std::to_string(image_size) + " image");
      }
      s.keypoints.push_back(p);
    }
    ds.samples.push_back(std::move(s));
  }
  if (meta.count("count") && ds.samples.size() != count) {
    throw LoadError(manifest_path.string() + ": " + std::to_string(ds.samples.size()) + " records, dataset.meta says " +
                    std::to_string(count));
  }
  return ds;
}

}  // namespace rcn
