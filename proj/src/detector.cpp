#include "edgeguard/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"

namespace edgeguard {

void DetectorConfig::validate() const {
  auto in_unit = [](float v) { return v > 0.0f && v < 1.0f; };
  if (!(min_face_size > 0.0f)) throw ConfigError("min_face_size must be > 0");
  if (!in_unit(scale_factor)) throw ConfigError("scale_factor must lie in (0,1)");
  for (float t : stage_thresholds)
    if (!(t > 0.0f && t <= 1.0f)) throw ConfigError("stage thresholds must lie in (0,1]");
  for (float t : {nms_intra_scale, nms_after_pnet, nms_after_rnet, nms_after_onet})
    if (!in_unit(t)) throw ConfigError("NMS thresholds must lie in (0,1)");
}

std::vector<double> pyramid_scales(std::size_t height, std::size_t width, const DetectorConfig& config) {
  config.validate();
  const double base = static_cast<double>(kPnetCell) / config.min_face_size;
  const double min_side = static_cast<double>(std::min(height, width));
  std::vector<double> scales;
  for (int k = 0;; ++k) {
    const double s = base * std::pow(static_cast<double>(config.scale_factor), k);
    if (min_side * s < static_cast<double>(kPnetCell)) break;
    scales.push_back(s);
  }
  return scales;
}

std::vector<PyramidLevel> build_pyramid(const Tensor& image, const DetectorConfig& config) {
  check_image(image);
  const std::size_t h = image_height(image), w = image_width(image);
  if (std::min(h, w) < kPnetCell) {
    throw NoFacePossibleError("image " + std::to_string(w) + "x" + std::to_string(h) +
                              " is smaller than the 12 px proposal window");
  }
  std::vector<PyramidLevel> levels;
  for (double s : pyramid_scales(h, w, config)) {
    const auto lh = static_cast<std::size_t>(std::ceil(static_cast<double>(h) * s - 1e-9));
    const auto lw = static_cast<std::size_t>(std::ceil(static_cast<double>(w) * s - 1e-9));
    levels.push_back({s, resize_bilinear(image, lh, lw)});
  }
  return levels;
}

FaceBox cell_to_box(std::size_t row, std::size_t col, double scale, float score) {
  const double x = static_cast<double>(col * kPnetStride);
  const double y = static_cast<double>(row * kPnetStride);
  const double cell = static_cast<double>(kPnetCell);
  return FaceBox{static_cast<float>(std::floor(x / scale)), static_cast<float>(std::floor(y / scale)),
                 static_cast<float>(std::floor((x + cell) / scale)), static_cast<float>(std::floor((y + cell) / scale)),
                 score};
}

std::pair<std::size_t, std::size_t> box_center_to_cell(const FaceBox& box) {
  const double half = 0.5 * static_cast<double>(kPnetCell);
  const double row = (static_cast<double>(box.center_y()) - half) / static_cast<double>(kPnetStride);
  const double col = (static_cast<double>(box.center_x()) - half) / static_cast<double>(kPnetStride);
  return {static_cast<std::size_t>(std::lround(std::max(0.0, row))), static_cast<std::size_t>(std::lround(std::max(0.0, col)))};
}

std::vector<Candidate> candidates_from_maps(const Tensor& face_prob, const Tensor& box_map, double scale,
                                            float threshold) {
  if (face_prob.rank() != 3 || face_prob.dim(0) != 2) {
    throw ConfigError("P-Net score map must be [2,H,W], got " + shape_string(face_prob.shape()));
  }
  const std::size_t h = face_prob.dim(1), w = face_prob.dim(2);
  if (box_map.shape() != Tensor::Shape{4, h, w}) {
    throw ConfigError("P-Net box map must be [4," + std::to_string(h) + "," + std::to_string(w) + "], got " +
                      shape_string(box_map.shape()));
  }
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const float p = face_prob.at(1, i, j);
      if (!(p >= threshold)) continue;
      Candidate c;
      c.box = cell_to_box(i, j, scale, p);
      for (std::size_t k = 0; k < 4; ++k) c.offsets[k] = box_map.at(k, i, j);
      out.push_back(c);
    }
  }
  return out;
}

std::vector<Candidate> pnet_scan(const PyramidLevel& level, const NetworkDef& pnet, const WeightStore& weights,
                                 float threshold) {
  const HeadMap heads = net_forward(pnet, weights, normalize_pixels(level.image));
  return candidates_from_maps(heads.at("face_score"), heads.at("box"), level.scale, threshold);
}

float box_overlap(const FaceBox& a, const FaceBox& b, OverlapMode mode) noexcept {
  const float inter = intersection_area(a, b);
  const float denom = mode == OverlapMode::Union ? a.area() + b.area() - inter : std::min(a.area(), b.area());
  return denom > 0.0f ? inter / denom : 0.0f;
}

std::vector<std::size_t> nms(std::span<const FaceBox> boxes, float threshold, OverlapMode mode) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  std::vector<bool> suppressed(boxes.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && box_overlap(boxes[i], boxes[j], mode) > threshold) suppressed[j] = true;
    }
  }
  return kept;
}

FaceBox apply_regression(const FaceBox& box, const BoxOffsets& offsets) noexcept {
  const float w = box.width(), h = box.height();
  FaceBox out = box;
  out.x1 = box.x1 + offsets[0] * w;
  out.y1 = box.y1 + offsets[1] * h;
  out.x2 = box.x2 + offsets[2] * w;
  out.y2 = box.y2 + offsets[3] * h;
  return out;
}

std::vector<FaceBox> refine_boxes(std::span<const Candidate> candidates, std::size_t* dropped) {
  std::vector<FaceBox> out;
  out.reserve(candidates.size());
  std::size_t bad = 0;
  for (const Candidate& c : candidates) {
    const FaceBox r = apply_regression(c.box, c.offsets);
    if (!(r.x2 > r.x1) || !(r.y2 > r.y1)) {
      ++bad;
      continue;
    }
    out.push_back(square_box(r));
  }
  if (dropped) *dropped += bad;
  return out;
}

Landmarks decode_landmarks(const FaceBox& box, std::span<const float> normalized) {
  if (normalized.size() != 10) throw ConfigError("landmark head must have 10 values");
  Landmarks lm{};
  for (std::size_t k = 0; k < 5; ++k) {
    lm[k].x = box.x1 + normalized[2 * k] * box.width();
    lm[k].y = box.y1 + normalized[2 * k + 1] * box.height();
  }
  return lm;
}

namespace {

bool overlaps_image(const FaceBox& b, std::size_t h, std::size_t w) {
  return b.x2 > 0.0f && b.y2 > 0.0f && b.x1 < static_cast<float>(w) && b.y1 < static_cast<float>(h);
}

std::vector<FaceBox> boxes_of(std::span<const Candidate> cands) {
  std::vector<FaceBox> out;
  out.reserve(cands.size());
  for (const Candidate& c : cands) out.push_back(c.box);
  return out;
}

std::vector<Candidate> select(const std::vector<Candidate>& cands, const std::vector<std::size_t>& keep) {
  std::vector<Candidate> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(cands[i]);
  return out;
}

std::vector<Candidate> run_nms(const std::vector<Candidate>& cands, float threshold, OverlapMode mode) {
  const std::vector<FaceBox> boxes = boxes_of(cands);
  return select(cands, nms(boxes, threshold, mode));
}

}  // namespace

std::vector<Candidate> refinement_stage(Stage stage, const Tensor& image, std::span<const FaceBox> boxes,
                                        const NetworkDef& net, const WeightStore& weights, float threshold) {
  check_image(image);
  const std::size_t size = stage == Stage::RNet ? kRnetInput : kOnetInput;
  const std::size_t h = image_height(image), w = image_width(image);
  std::vector<Candidate> out;
  for (const FaceBox& b : boxes) {
    if (!(b.x2 > b.x1) || !(b.y2 > b.y1) || !overlaps_image(b, h, w)) continue;
    const Tensor crop = normalize_pixels(crop_resize(image, b, size));
    const HeadMap heads = net_forward(net, weights, crop);
    const float p = heads.at("face_score")[1];
    if (!(p >= threshold)) continue;
    Candidate c;
    c.box = b;
    c.box.score = p;
    const Tensor& off = heads.at("box");
    for (std::size_t k = 0; k < 4; ++k) c.offsets[k] = off[k];
    if (stage == Stage::ONet) c.landmarks = decode_landmarks(b, heads.at("landmarks").data());
    out.push_back(c);
  }
  return out;
}

std::vector<Detection> detect_faces(const Tensor& image, const CascadeNets& nets, const WeightStore& weights,
                                    const DetectorConfig& config, DetectionDiagnostics* diagnostics) {
  DetectionDiagnostics local;
  DetectionDiagnostics& diag = diagnostics ? *diagnostics : local;
  diag = {};
  config.validate();
  check_image(image);
  const std::size_t h = image_height(image), w = image_width(image);

  std::vector<PyramidLevel> levels;
  try {
    levels = build_pyramid(image, config);
  } catch (const NoFacePossibleError& e) {
    diag.note = e.what();
    return {};
  }
  diag.pyramid_levels = levels.size();
  if (levels.empty()) {
    diag.note = "min_face_size exceeds the image; no pyramid levels";
    return {};
  }

  std::vector<Candidate> proposals;
  for (const PyramidLevel& level : levels) {
    std::vector<Candidate> c = pnet_scan(level, nets.pnet, weights, config.stage_thresholds[0]);
    c = run_nms(c, config.nms_intra_scale, OverlapMode::Union);
    proposals.insert(proposals.end(), c.begin(), c.end());
  }
  proposals = run_nms(proposals, config.nms_after_pnet, OverlapMode::Union);
  diag.pnet_candidates = proposals.size();

  std::vector<FaceBox> boxes = refine_boxes(proposals, &diag.dropped_degenerate);
  std::vector<Candidate> refined =
      refinement_stage(Stage::RNet, image, boxes, nets.rnet, weights, config.stage_thresholds[1]);
  refined = run_nms(refined, config.nms_after_rnet, OverlapMode::Union);
  diag.rnet_candidates = refined.size();

  boxes = refine_boxes(refined, &diag.dropped_degenerate);
  const std::vector<Candidate> outputs =
      refinement_stage(Stage::ONet, image, boxes, nets.onet, weights, config.stage_thresholds[2]);

  std::vector<Candidate> final_cands;
  for (const Candidate& c : outputs) {
    Candidate r = c;
    r.box = apply_regression(c.box, c.offsets);
    if (!(r.box.x2 > r.box.x1) || !(r.box.y2 > r.box.y1)) {
      ++diag.dropped_degenerate;
      continue;
    }
    final_cands.push_back(r);
  }
  final_cands = run_nms(final_cands, config.nms_after_onet, OverlapMode::Min);

  std::vector<Detection> detections;
  for (const Candidate& c : final_cands) {
    Detection d;
    d.box = c.box;
    d.box.x1 = std::clamp(d.box.x1, 0.0f, static_cast<float>(w));
    d.box.x2 = std::clamp(d.box.x2, 0.0f, static_cast<float>(w));
    d.box.y1 = std::clamp(d.box.y1, 0.0f, static_cast<float>(h));
    d.box.y2 = std::clamp(d.box.y2, 0.0f, static_cast<float>(h));
    if (!(d.box.x2 > d.box.x1) || !(d.box.y2 > d.box.y1)) {
      ++diag.dropped_degenerate;
      continue;
    }
    const FaceBox bound = expand_box(d.box, 0.5f);
    d.landmarks = *c.landmarks;
    for (Point& p : d.landmarks) {
      p.x = std::clamp(p.x, bound.x1, bound.x2);
      p.y = std::clamp(p.y, bound.y1, bound.y2);
    }
    detections.push_back(d);
  }
  diag.onet_candidates = detections.size();
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.box.score > b.box.score; });
  return detections;
}

FaceDetector::FaceDetector(WeightStore weights, DetectorConfig config)
    : nets_(CascadeNets::from_weights(weights)), weights_(std::move(weights)), config_(config) {
  config_.validate();
}

FaceDetector::FaceDetector(CascadeNets nets, WeightStore weights, DetectorConfig config)
    : nets_(std::move(nets)), weights_(std::move(weights)), config_(config) {
  nets_.pnet.validate(weights_);
  nets_.rnet.validate(weights_);
  nets_.onet.validate(weights_);
  config_.validate();
}

std::vector<Detection> FaceDetector::detect(const Tensor& image, DetectionDiagnostics* diagnostics) const {
  return detect_faces(image, nets_, weights_, config_, diagnostics);
}

}  // namespace edgeguard
