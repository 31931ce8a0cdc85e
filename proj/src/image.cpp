#include "edgeguard/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "edgeguard/errors.hpp"

namespace edgeguard {

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DataError("expected an RGB image [3,H,W], got " + shape_string(image.shape()));
  }
}

namespace {

// Per-axis sampling plan: the two source taps, their weights, and whether the
// sample falls outside the image (zero padding).
struct Tap {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  float frac = 0.0f;  // weight of i1
  bool outside = false;
};

std::vector<Tap> plan_axis(double start, double extent, std::size_t out, std::size_t in) {
  std::vector<Tap> taps(out);
  const double step = extent / static_cast<double>(out);
  for (std::size_t j = 0; j < out; ++j) {
    const double u = start + (static_cast<double>(j) + 0.5) * step;
    Tap& t = taps[j];
    if (u < 0.0 || u > static_cast<double>(in)) {
      t.outside = true;
      continue;
    }
    const double pos = std::clamp(u - 0.5, 0.0, static_cast<double>(in - 1));
    const double base = std::floor(pos);
    const double frac = pos - base;
    t.i0 = static_cast<std::size_t>(base);
    t.i1 = std::min(t.i0 + 1, in - 1);
    t.frac = static_cast<float>(frac);
  }
  return taps;
}

}  // namespace

Tensor crop_resize(const Tensor& image, const FaceBox& box, std::size_t out_h, std::size_t out_w) {
  check_image(image);
  if (!(box.x2 > box.x1) || !(box.y2 > box.y1)) throw DegenerateInputError("crop box has no area");
  if (out_h == 0 || out_w == 0) throw ConfigError("crop output size must be >= 1");
  const std::size_t h = image_height(image), w = image_width(image);
  if (box.x2 <= 0.0f || box.y2 <= 0.0f || box.x1 >= static_cast<float>(w) || box.y1 >= static_cast<float>(h)) {
    throw DataError("crop box lies entirely outside the image");
  }
  const std::vector<Tap> ty = plan_axis(box.y1, static_cast<double>(box.y2) - box.y1, out_h, h);
  const std::vector<Tap> tx = plan_axis(box.x1, static_cast<double>(box.x2) - box.x1, out_w, w);

  Tensor out({3, out_h, out_w});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      const Tap& a = ty[i];
      if (a.outside) continue;
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& b = tx[j];
        if (b.outside) continue;
        // a + t * (b - a) keeps constant regions exactly constant
        const float p00 = image.at(c, a.i0, b.i0), p01 = image.at(c, a.i0, b.i1);
        const float p10 = image.at(c, a.i1, b.i0), p11 = image.at(c, a.i1, b.i1);
        const float top = p00 + b.frac * (p01 - p00);
        const float bottom = p10 + b.frac * (p11 - p10);
        out.at(c, i, j) = top + a.frac * (bottom - top);
      }
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  check_image(image);
  const FaceBox full{0.0f, 0.0f, static_cast<float>(image_width(image)), static_cast<float>(image_height(image)), 0.0f};
  return crop_resize(image, full, out_h, out_w);
}

Tensor normalize_pixels(const Tensor& image) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = normalize_pixel(image[i]);
  return out;
}

namespace {

// Skips whitespace and '#' comments; returns false at EOF.
bool skip_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == EOF) return false;
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return true;
    }
  }
}

std::size_t read_header_int(std::istream& in, const char* what) {
  if (!skip_space(in)) throw DataError(std::string("PPM header truncated before ") + what);
  std::size_t v = 0;
  bool any = false;
  while (std::isdigit(in.peek())) {
    v = v * 10 + static_cast<std::size_t>(in.get() - '0');
    any = true;
    if (v > (1u << 20)) throw DataError(std::string("PPM ") + what + " too large");
  }
  if (!any) throw DataError(std::string("PPM header: expected ") + what);
  return v;
}

}  // namespace

std::optional<Tensor> read_ppm(std::istream& in) {
  if (!skip_space(in)) return std::nullopt;
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2 || magic[0] != 'P' || magic[1] != '6') throw DataError("not a binary PPM (P6) frame");
  const std::size_t w = read_header_int(in, "width");
  const std::size_t h = read_header_int(in, "height");
  const std::size_t maxval = read_header_int(in, "maxval");
  if (w == 0 || h == 0) throw DataError("PPM image has zero size");
  if (maxval != 255) throw DataError("PPM maxval must be 255, got " + std::to_string(maxval));
  if (!std::isspace(in.get())) throw DataError("PPM header must end with a single whitespace byte");
  std::vector<unsigned char> raw(w * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError("PPM pixel data truncated");
  Tensor img({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = raw[(y * w + x) * 3 + c];
  return img;
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path.string() + "'");
  try {
    std::optional<Tensor> img = read_ppm(in);
    if (!img) throw DataError("empty file");
    return std::move(*img);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_ppm(std::ostream& out, const Tensor& image) {
  check_image(image);
  const std::size_t h = image_height(image), w = image_width(image);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(std::nearbyint(image.at(c, y, x)), 0.0f, 255.0f);
        raw[(y * w + x) * 3 + c] = static_cast<unsigned char>(v);
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_ppm(out, image);
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace edgeguard
