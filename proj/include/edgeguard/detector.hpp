#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "edgeguard/cascade_nets.hpp"
#include "edgeguard/geometry.hpp"
#include "edgeguard/network.hpp"
#include "edgeguard/tensor.hpp"

// Three-stage cascaded face detector.
//
//   pyramid -> P-Net scan per level -> NMS per level -> NMS across levels
//   -> regress + square -> R-Net on 24x24 crops -> NMS -> regress + square
//   -> O-Net on 48x48 crops (adds landmarks) -> regress -> min-mode NMS
//
// Stage inputs are normalized with normalize_pixel(); images passed in are on
// the 8-bit scale and are never modified.
namespace edgeguard {

struct DetectorConfig {
  float min_face_size = 20.0f;
  float scale_factor = 0.709f;
  std::array<float, 3> stage_thresholds{0.6f, 0.7f, 0.7f};
  float nms_intra_scale = 0.5f;
  float nms_after_pnet = 0.7f;
  float nms_after_rnet = 0.7f;
  float nms_after_onet = 0.7f;  // applied in min mode

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

// Effective P-Net stride and window size in pyramid-level pixels.
inline constexpr std::size_t kPnetStride = 2;
inline constexpr std::size_t kPnetCell = 12;

struct PyramidLevel {
  double scale = 1.0;
  Tensor image;  // bilinear resize of the original, 8-bit scale
};

// Scales (12 / min_face) * factor^k while min(H, W) * scale >= 12.
std::vector<double> pyramid_scales(std::size_t height, std::size_t width, const DetectorConfig& config);

// Throws NoFacePossibleError when min(H, W) < 12. Level k has size
// ceil(H * s_k) x ceil(W * s_k).
std::vector<PyramidLevel> build_pyramid(const Tensor& image, const DetectorConfig& config);

using BoxOffsets = std::array<float, 4>;

struct Candidate {
  FaceBox box;
  BoxOffsets offsets{};
  std::optional<Landmarks> landmarks;
};

// Original-image box covered by P-Net output cell (row, col) at `scale`:
// floor(col*2/scale), floor(row*2/scale), floor((col*2+12)/scale), floor((row*2+12)/scale).
FaceBox cell_to_box(std::size_t row, std::size_t col, double scale, float score);
// Inverse of cell_to_box at scale 1, from the box centre.
std::pair<std::size_t, std::size_t> box_center_to_cell(const FaceBox& box);

// Candidates from a P-Net probability map [2,H,W] (channel 1 = face) and box
// map [4,H,W]; cells with probability >= threshold are emitted in row-major order.
std::vector<Candidate> candidates_from_maps(const Tensor& face_prob, const Tensor& box_map, double scale,
                                            float threshold);

std::vector<Candidate> pnet_scan(const PyramidLevel& level, const NetworkDef& pnet, const WeightStore& weights,
                                 float threshold);

enum class OverlapMode { Union, Min };

float box_overlap(const FaceBox& a, const FaceBox& b, OverlapMode mode) noexcept;

// Greedy non-maximum suppression. Boxes are visited by descending score
// (ties by lower index); a box is dropped when its overlap with an already
// kept box exceeds `threshold`. Returns kept indices in visiting order.
std::vector<std::size_t> nms(std::span<const FaceBox> boxes, float threshold, OverlapMode mode);

// Applies (dx1, dy1, dx2, dy2) scaled by the box width/height.
FaceBox apply_regression(const FaceBox& box, const BoxOffsets& offsets) noexcept;

// Regresses every candidate and squares the result. Candidates whose
// regressed box is degenerate are dropped and counted in `dropped`.
std::vector<FaceBox> refine_boxes(std::span<const Candidate> candidates, std::size_t* dropped = nullptr);

// Decodes normalized landmark outputs (x0, y0, ..., x4, y4) relative to `box`.
Landmarks decode_landmarks(const FaceBox& box, std::span<const float> normalized);

enum class Stage { RNet, ONet };

// Crops each candidate (24x24 for R-Net, 48x48 for O-Net), scores it, and
// keeps those at or above threshold with fresh offsets. Only O-Net results
// carry landmarks. Boxes lying entirely outside the image are skipped.
std::vector<Candidate> refinement_stage(Stage stage, const Tensor& image, std::span<const FaceBox> boxes,
                                        const NetworkDef& net, const WeightStore& weights, float threshold);

struct DetectionDiagnostics {
  std::size_t pyramid_levels = 0;
  std::size_t pnet_candidates = 0;
  std::size_t rnet_candidates = 0;
  std::size_t onet_candidates = 0;
  std::size_t dropped_degenerate = 0;
  std::string note;  // set when the cascade could not run (e.g. tiny image)
};

// Full cascade. Deterministic; results sorted by descending score, boxes
// clipped to the image, landmarks kept within the 1.5x-expanded box.
std::vector<Detection> detect_faces(const Tensor& image, const CascadeNets& nets, const WeightStore& weights,
                                    const DetectorConfig& config, DetectionDiagnostics* diagnostics = nullptr);

// Networks, weights and config bundled together; immutable after construction.
class FaceDetector {
 public:
  FaceDetector(WeightStore weights, DetectorConfig config);
  FaceDetector(CascadeNets nets, WeightStore weights, DetectorConfig config);

  std::vector<Detection> detect(const Tensor& image, DetectionDiagnostics* diagnostics = nullptr) const;

  const CascadeNets& nets() const noexcept { return nets_; }
  const WeightStore& weights() const noexcept { return weights_; }
  const DetectorConfig& config() const noexcept { return config_; }

 private:
  CascadeNets nets_;
  WeightStore weights_;
  DetectorConfig config_;
};

}  // namespace edgeguard
