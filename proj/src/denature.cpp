#include "edgeguard/denature.hpp"

#include <sodium.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"

namespace edgeguard {

PixelRegion clip_region(const PixelRegion& region, std::size_t height, std::size_t width) noexcept {
  PixelRegion r = region;
  r.x1 = std::min(r.x1, width);
  r.y1 = std::min(r.y1, height);
  r.x0 = std::min(r.x0, r.x1);
  r.y0 = std::min(r.y0, r.y1);
  return r;
}

PixelRegion region_from_box(const FaceBox& box, std::size_t height, std::size_t width) noexcept {
  auto lo = [](float v, std::size_t limit) {
    return static_cast<std::size_t>(std::clamp(std::floor(static_cast<double>(v)), 0.0, static_cast<double>(limit)));
  };
  auto hi = [](float v, std::size_t limit) {
    return static_cast<std::size_t>(std::clamp(std::ceil(static_cast<double>(v)), 0.0, static_cast<double>(limit)));
  };
  return clip_region({lo(box.x1, width), lo(box.y1, height), hi(box.x2, width), hi(box.y2, height)}, height, width);
}

ScrambleKey parse_scramble_key(std::string_view hex) {
  ScrambleKey key{};
  if (hex.size() != 32) throw ConfigError("scramble key must be 32 hex digits (128 bits)");
  for (std::size_t i = 0; i < 16; ++i) {
    unsigned v = 0;
    auto [p, ec] = std::from_chars(hex.data() + 2 * i, hex.data() + 2 * i + 2, v, 16);
    if (ec != std::errc() || p != hex.data() + 2 * i + 2) throw ConfigError("scramble key is not valid hex");
    key[i] = static_cast<std::uint8_t>(v);
  }
  return key;
}

DenatureMethod parse_denature_method(std::string_view text) {
  const std::size_t colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  if (name == "pixelate") {
    std::size_t block = 0;
    auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), block);
    if (ec != std::errc() || p != arg.data() + arg.size() || block < 1)
      throw ConfigError("pixelate needs a block size >= 1, e.g. pixelate:8");
    return Pixelate{block};
  }
  if (name == "blur") {
    double sigma = 0.0;
    auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), sigma);
    if (ec != std::errc() || p != arg.data() + arg.size() || !(sigma > 0.0))
      throw ConfigError("blur needs sigma > 0, e.g. blur:2.5");
    return GaussianBlur{sigma};
  }
  if (name == "scramble") return KeyedScramble{parse_scramble_key(arg)};
  throw ConfigError("unknown denature method '" + std::string(text) + "' (pixelate:N, blur:S, scramble:HEXKEY)");
}

std::string describe(const DenatureMethod& method) {
  if (const auto* p = std::get_if<Pixelate>(&method)) return "pixelate:" + std::to_string(p->block_size);
  if (const auto* b = std::get_if<GaussianBlur>(&method)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "blur:%g", b->sigma);
    return buf;
  }
  return "scramble";
}

void pixelate_in_place(Tensor& image, const PixelRegion& region, std::size_t block_size) {
  check_image(image);
  if (block_size < 1) throw ConfigError("pixelate block size must be >= 1");
  const PixelRegion r = clip_region(region, image_height(image), image_width(image));
  if (r.empty() || block_size == 1) return;
  for (std::size_t ty = r.y0; ty < r.y1; ty += block_size) {
    const std::size_t ey = std::min(ty + block_size, r.y1);
    for (std::size_t tx = r.x0; tx < r.x1; tx += block_size) {
      const std::size_t ex = std::min(tx + block_size, r.x1);
      const double n = static_cast<double>((ey - ty) * (ex - tx));
      for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (std::size_t y = ty; y < ey; ++y)
          for (std::size_t x = tx; x < ex; ++x) sum += image.at(c, y, x);
        const auto mean = static_cast<float>(sum / n);
        for (std::size_t y = ty; y < ey; ++y)
          for (std::size_t x = tx; x < ex; ++x) image.at(c, y, x) = mean;
      }
    }
  }
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

void blur_in_place(Tensor& image, const PixelRegion& region, double sigma) {
  check_image(image);
  if (!(sigma > 0.0)) throw ConfigError("blur sigma must be > 0");
  const PixelRegion r = clip_region(region, image_height(image), image_width(image));
  if (r.empty()) return;
  const std::vector<double> k = gaussian_kernel(sigma);
  const auto radius = static_cast<long>(k.size() / 2);
  const long w = static_cast<long>(r.width()), h = static_cast<long>(r.height());
  std::vector<double> tmp(static_cast<std::size_t>(w * h));
  for (std::size_t c = 0; c < 3; ++c) {
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -radius; t <= radius; ++t) {
          const long sx = std::clamp(x + t, 0L, w - 1);
          acc += k[static_cast<std::size_t>(t + radius)] * image.at(c, r.y0 + y, r.x0 + sx);
        }
        tmp[static_cast<std::size_t>(y * w + x)] = acc;
      }
    }
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -radius; t <= radius; ++t) {
          const long sy = std::clamp(y + t, 0L, h - 1);
          acc += k[static_cast<std::size_t>(t + radius)] * tmp[static_cast<std::size_t>(sy * w + x)];
        }
        image.at(c, r.y0 + y, r.x0 + x) = static_cast<float>(acc);
      }
    }
  }
}

namespace {

void ensure_sodium() {
  static const int status = sodium_init();
  if (status < 0) throw InvariantViolation("libsodium failed to initialize");
}

// Keystream for one region: 8 bytes per Fisher-Yates draw, then 3 bytes per
// pixel for the XOR.
std::vector<std::uint8_t> region_keystream(const ScrambleKey& key, const PixelRegion& r, std::size_t bytes) {
  ensure_sodium();
  char label[96];
  const int len = std::snprintf(label, sizeof label, "edgeguard-scramble:%zu,%zu,%zu,%zu", r.x0, r.y0, r.x1, r.y1);
  std::array<unsigned char, crypto_stream_chacha20_KEYBYTES> subkey{};
  crypto_generichash(subkey.data(), subkey.size(), reinterpret_cast<const unsigned char*>(label),
                     static_cast<unsigned long long>(len), key.data(), key.size());
  std::array<unsigned char, crypto_stream_chacha20_NONCEBYTES> nonce{};
  std::vector<std::uint8_t> stream(bytes);
  crypto_stream_chacha20(stream.data(), stream.size(), nonce.data(), subkey.data());
  sodium_memzero(subkey.data(), subkey.size());
  return stream;
}

// perm[k] = source pixel index placed at position k.
std::vector<std::size_t> keyed_permutation(std::span<const std::uint8_t> stream, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i-- > 1;) {
    std::uint64_t word = 0;
    for (int b = 0; b < 8; ++b) word |= static_cast<std::uint64_t>(stream[8 * (n - 1 - i) + b]) << (8 * b);
    const std::size_t j = static_cast<std::size_t>(word % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0f, 255.0f)); }

void scramble_impl(Tensor& image, const PixelRegion& region, const ScrambleKey& key, bool forward) {
  check_image(image);
  const PixelRegion r = clip_region(region, image_height(image), image_width(image));
  if (r.empty()) return;
  const std::size_t w = r.width(), n = r.width() * r.height();
  const std::vector<std::uint8_t> stream = region_keystream(key, r, 8 * n + 3 * n);
  const std::vector<std::size_t> perm = keyed_permutation(stream, n);
  const std::uint8_t* pad = stream.data() + 8 * n;

  std::vector<std::uint8_t> src(3 * n), dst(3 * n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < 3; ++c) src[3 * k + c] = to_byte(image.at(c, r.y0 + k / w, r.x0 + k % w));

  if (forward) {
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t c = 0; c < 3; ++c) dst[3 * k + c] = src[3 * perm[k] + c] ^ pad[3 * k + c];
  } else {
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t c = 0; c < 3; ++c) dst[3 * perm[k] + c] = src[3 * k + c] ^ pad[3 * k + c];
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < 3; ++c) image.at(c, r.y0 + k / w, r.x0 + k % w) = dst[3 * k + c];
}

}  // namespace

void scramble_in_place(Tensor& image, const PixelRegion& region, const ScrambleKey& key) {
  scramble_impl(image, region, key, true);
}

void unscramble_in_place(Tensor& image, const PixelRegion& region, const ScrambleKey& key) {
  scramble_impl(image, region, key, false);
}

Tensor pixelate_region(const Tensor& image, const PixelRegion& region, std::size_t block_size) {
  Tensor out = image;
  pixelate_in_place(out, region, block_size);
  return out;
}

Tensor blur_region(const Tensor& image, const PixelRegion& region, double sigma) {
  Tensor out = image;
  blur_in_place(out, region, sigma);
  return out;
}

Tensor scramble_region(const Tensor& image, const PixelRegion& region, const ScrambleKey& key) {
  Tensor out = image;
  scramble_in_place(out, region, key);
  return out;
}

Tensor unscramble_region(const Tensor& image, const PixelRegion& region, const ScrambleKey& key) {
  Tensor out = image;
  unscramble_in_place(out, region, key);
  return out;
}

void apply_method_in_place(Tensor& image, const PixelRegion& region, const DenatureMethod& method) {
  if (const auto* p = std::get_if<Pixelate>(&method)) {
    pixelate_in_place(image, region, p->block_size);
  } else if (const auto* b = std::get_if<GaussianBlur>(&method)) {
    blur_in_place(image, region, b->sigma);
  } else {
    scramble_in_place(image, region, std::get<KeyedScramble>(method).key);
  }
}

void RedactionPolicy::validate() const {
  if (!(box_expansion >= 0.0f)) throw ConfigError("box expansion must be >= 0");
}

Redaction apply_policy(const Tensor& frame, std::span<const LabeledDetection> detections,
                       const RedactionPolicy& policy, const DenatureMethod& method) {
  policy.validate();
  check_image(frame);
  Redaction out{frame, {}};
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].detection.box.score > detections[b].detection.box.score;
  });
  for (std::size_t i : order) {
    const LabeledDetection& d = detections[i];
    std::string reason;
    if (policy.redact_labels.contains(d.classification.label)) {
      reason = "label:" + std::string(to_string(d.classification.label));
    } else if (policy.redact_on_tie && d.classification.is_tie()) {
      reason = "tie";
    } else {
      continue;
    }
    const PixelRegion region = region_from_box(expand_box(d.detection.box, policy.box_expansion),
                                               image_height(frame), image_width(frame));
    if (region.empty()) continue;
    apply_method_in_place(out.frame, region, method);
    out.log.push_back({i, region, reason});
  }
  return out;
}

}  // namespace edgeguard
