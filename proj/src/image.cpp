#include "rcn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

#include "rcn/error.hpp"

namespace rcn {

void LcnSpec::validate() const {
  if (window < 1 || window % 2 == 0) throw ConfigError("lcn window must be odd and positive, got " + std::to_string(window));
  if (!(sigma > 0.0)) throw ConfigError("lcn sigma must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("lcn epsilon must be positive");
}

Tensor4 to_grayscale(const Tensor4& image) {
  const Dims& d = image.dims();
  if (d.c == 1) return image;
  if (d.c != 3) throw ShapeError("to_grayscale: expected 1 or 3 channels, got " + d.str());
  Tensor4 out({d.n, 1, d.h, d.w});
  for (std::size_t n = 0; n < d.n; ++n) {
    auto r = image.plane(n, 0), g = image.plane(n, 1), b = image.plane(n, 2);
    auto o = out.plane(n, 0);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  }
  return out;
}

namespace {

// Weighted average over the in-bounds part of the window, weights renormalized.
class GaussianWindow {
 public:
  GaussianWindow(int window, double sigma) : half_(window / 2), taps_(static_cast<std::size_t>(window)) {
    for (int i = -half_; i <= half_; ++i) {
      taps_[static_cast<std::size_t>(i + half_)] = std::exp(-0.5 * i * i / (sigma * sigma));
    }
  }

  // Returns sum_j wn_j * f(j) over the window around (r, c).
  template <typename F>
  double average(std::size_t h, std::size_t w, std::size_t r, std::size_t c, F&& f) const {
    const long rl = std::max(0L, static_cast<long>(r) - half_);
    const long rh = std::min(static_cast<long>(h) - 1, static_cast<long>(r) + half_);
    const long cl = std::max(0L, static_cast<long>(c) - half_);
    const long ch = std::min(static_cast<long>(w) - 1, static_cast<long>(c) + half_);
    double num = 0.0, den = 0.0;
    for (long i = rl; i <= rh; ++i) {
      const double wr = taps_[static_cast<std::size_t>(i - static_cast<long>(r) + half_)];
      for (long j = cl; j <= ch; ++j) {
        const double wt = wr * taps_[static_cast<std::size_t>(j - static_cast<long>(c) + half_)];
        num += wt * f(static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j));
        den += wt;
      }
    }
    return num / den;
  }

 private:
  long half_;
  std::vector<double> taps_;
};

}  // namespace

Tensor4 local_contrast_normalize(const Tensor4& image, const LcnSpec& spec) {
  spec.validate();
  const Dims& d = image.dims();
  const GaussianWindow g(spec.window, spec.sigma);
  Tensor4 out(d);
  std::vector<double> v(d.plane());
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      auto x = image.plane(n, c);
      auto y = out.plane(n, c);
      // Mean removal written as sum_j wn_j (x_i - x_j) so constant regions
      // give exactly zero.
      for (std::size_t r = 0; r < d.h; ++r) {
        for (std::size_t q = 0; q < d.w; ++q) {
          const double xi = x[r * d.w + q];
          v[r * d.w + q] = g.average(d.h, d.w, r, q, [&](std::size_t j) { return xi - x[j]; });
        }
      }
      for (std::size_t r = 0; r < d.h; ++r) {
        for (std::size_t q = 0; q < d.w; ++q) {
          const double var = g.average(d.h, d.w, r, q, [&](std::size_t j) { return v[j] * v[j]; });
          y[r * d.w + q] = v[r * d.w + q] / std::max(std::sqrt(var), spec.epsilon);
        }
      }
    }
  }
  return out;
}

Tensor4 preprocess(const Tensor4& image, const LcnSpec& spec) {
  return local_contrast_normalize(to_grayscale(image), spec);
}

namespace {

unsigned char to_byte(double v) {
  const double s = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(s);
}

void write_pnm(const std::string& path, const char* magic, const Tensor4& t, std::size_t n,
               std::size_t first_c, std::size_t channels) {
  const Dims& d = t.dims();
  if (n >= d.n || first_c + channels > d.c) throw ShapeError("write " + path + ": plane out of range for " + d.str());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out << magic << '\n' << d.w << ' ' << d.h << "\n255\n";
  std::vector<unsigned char> bytes(d.plane() * channels);
  for (std::size_t i = 0; i < d.plane(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) bytes[i * channels + c] = to_byte(t.plane(n, first_c + c)[i]);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing " + path);
}

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const std::string& path) {
  std::string tok;
  while (true) {
    const int ch = in.get();
    if (ch == EOF) break;
    if (ch == '#') {
      std::string rest;
      std::getline(in, rest);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw LoadError(path + ": truncated header");
  return tok;
}

std::size_t header_number(std::istream& in, const std::string& path) {
  const std::string tok = header_token(in, path);
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size() || v == 0) throw LoadError(path + ": bad header value '" + tok + "'");
  return v;
}

}  // namespace

void write_pgm(const std::string& path, const Tensor4& image, std::size_t n, std::size_t c) {
  write_pnm(path, "P5", image, n, c, 1);
}

void write_ppm(const std::string& path, const Tensor4& rgb, std::size_t n) { write_pnm(path, "P6", rgb, n, 0, 3); }

Tensor4 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image file " + path);
  const std::string magic = header_token(in, path);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw LoadError(path + ": unsupported image type '" + magic + "' (need P5 or P6)");
  }
  const std::size_t w = header_number(in, path);
  const std::size_t h = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (maxval > 255) throw LoadError(path + ": only 8-bit images are supported");
  std::vector<unsigned char> bytes(w * h * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw LoadError(path + ": truncated pixel data");
  Tensor4 out({1, channels, h, w});
  for (std::size_t c = 0; c < channels; ++c) {
    auto p = out.plane(0, c);
    for (std::size_t i = 0; i < w * h; ++i) p[i] = bytes[i * channels + c] / static_cast<double>(maxval);
  }
  return out;
}

}  // namespace rcn
