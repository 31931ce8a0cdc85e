#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "edgeguard/geometry.hpp"
#include "edgeguard/tensor.hpp"

// Images are Tensor[3,H,W] holding RGB values on the 8-bit scale [0, 255].
namespace edgeguard {

inline std::size_t image_height(const Tensor& image) { return image.dim(1); }
inline std::size_t image_width(const Tensor& image) { return image.dim(2); }

// Throws DataError unless `image` is [3,H,W] with H, W >= 1.
void check_image(const Tensor& image);

// Bilinear crop of `box` resized to out_h x out_w.
//
// Sample (i, j) reads the source at x = x1 + (j + 0.5) * w / out_w (and the
// same for y), i.e. the align-corners-false convention. Samples falling
// outside [0,W] x [0,H] are zero; samples inside interpolate with
// clamp-to-edge. Throws DegenerateInputError for an empty box and DataError
// when the box lies entirely outside the image.
Tensor crop_resize(const Tensor& image, const FaceBox& box, std::size_t out_h, std::size_t out_w);
inline Tensor crop_resize(const Tensor& image, const FaceBox& box, std::size_t out_size) {
  return crop_resize(image, box, out_size, out_size);
}

// Whole-image bilinear resize (crop of the full extent).
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

// Maps an 8-bit value to roughly [-1, 1]: (v - 127.5) / 128.
inline float normalize_pixel(float v) noexcept { return (v - 127.5f) / 128.0f; }
Tensor normalize_pixels(const Tensor& image);

// Binary PPM (P6, maxval 255). Header comments are accepted on read.
Tensor read_ppm(const std::filesystem::path& path);
// Reads the next frame from a concatenated P6 stream; nullopt at clean EOF.
std::optional<Tensor> read_ppm(std::istream& in);
// Values are rounded and clamped to [0, 255].
void write_ppm(const std::filesystem::path& path, const Tensor& image);
void write_ppm(std::ostream& out, const Tensor& image);

}  // namespace edgeguard
