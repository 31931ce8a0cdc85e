// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "edgeguard/cascade_nets.hpp"
#include "edgeguard/denature.hpp"
#include "edgeguard/detector.hpp"
#include "edgeguard/embedder.hpp"
#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"
#include "edgeguard/layers.hpp"
#include "edgeguard/pipeline.hpp"
#include "edgeguard/recognizer.hpp"
#include "edgeguard/synthetic.hpp"
#include "edgeguard/training.hpp"
#include "edgeguard/weights_io.hpp"
#include "oracles.hpp"

using namespace edgeguard;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Models shared by the training, end-to-end and determinism criteria.
struct Trained {
  TrainResult embedder;
  TrainResult detector;
  double embedder_seconds = 0.0;
  double detector_seconds = 0.0;
};

Trained& trained() {
  static Trained t = [] {
    Trained out;
    TrainerConfig cfg;  // defaults, seed 42
    auto t0 = Clock::now();
    out.embedder = train_toy(ToyTask::Embedder, cfg);
    out.embedder_seconds = seconds_since(t0);
    t0 = Clock::now();
    out.detector = train_toy(ToyTask::Detector, cfg);
    out.detector_seconds = seconds_since(t0);
    return out;
  }();
  return t;
}

constexpr std::uint64_t kGallerySeed = 1001;
constexpr std::uint64_t kProbeSeed = 2002;

Gallery synthetic_gallery(const Embedder& embedder) {
  Rng rng(kGallerySeed);
  std::vector<GallerySample> samples;
  for (int i = 0; i < 20; ++i) {
    const AgeLabel label = i % 2 == 0 ? AgeLabel::Child : AgeLabel::Adult;
    const SynthScene s = synth_scene(rng, SceneSpec{}, label);
    samples.push_back({"ref" + std::to_string(i), label, embedder.chip(s.image, s.faces.front().box)});
  }
  GalleryBuild b = gallery_build(samples, embedder);
  if (!b.failures.empty()) throw InvariantViolation("gallery sample failed: " + b.failures.front().second);
  return b.gallery;
}

std::vector<SynthScene> synthetic_probes(std::size_t n) {
  Rng rng(kProbeSeed);
  std::vector<SynthScene> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_scene(rng, SceneSpec{}));
  return out;
}

Pipeline trained_pipeline() {
  WeightStore weights = trained().detector.weights;
  weights.merge(trained().embedder.weights);
  PipelineConfig cfg;
  cfg.method = Pixelate{8};
  const Embedder embedder(weights);
  return Pipeline(FaceDetector(weights, cfg.detector), embedder, synthetic_gallery(embedder), cfg);
}

Outcome kernels() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t kh = pick(1, 5), kw = pick(1, 5), pad = pick(0, 2), stride = pick(1, 3);
    const Tensor in = oracle::random_tensor(rng, {pick(1, 6), pick(kh, 20), pick(kw, 20)});
    const Tensor w = oracle::random_tensor(rng, {pick(1, 8), in.dim(0), kh, kw});
    const Tensor b = oracle::random_tensor(rng, {w.dim(0)});
    const Tensor got = nn::conv2d(in, w, b, stride, pad), want = oracle::conv2d(in, w, b, stride, pad);
    if (got.shape() != want.shape()) return {false, "conv2d shape mismatch"};
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, double(std::abs(got[i] - want[i])));
  }
  std::size_t pool_mismatch = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t k = pick(1, 4), s = pick(1, 3);
    const Tensor in = oracle::random_tensor(rng, {pick(1, 6), pick(1, 20), pick(1, 20)});
    if (!bit_identical(nn::maxpool2d(in, k, s), oracle::maxpool2d(in, k, s))) ++pool_mismatch;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && pool_mismatch == 0 && secs < 30.0,
          fmt("conv max abs err %.2e over 100 configs, maxpool mismatches %zu/100, %.2fs", worst, pool_mismatch, secs)};
}

Outcome nms_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::size_t mismatches = 0, ties = 0;
  for (int set = 0; set < 1000; ++set) {
    const std::size_t n = rng() % 65;
    std::vector<FaceBox> boxes;
    for (std::size_t i = 0; i < n; ++i) {
      const float x = float(rng() % 48), y = float(rng() % 48);
      boxes.push_back({x, y, x + float(1 + rng() % 24), y + float(1 + rng() % 24), float(1 + rng() % 8) / 10.0f});
    }
    for (std::size_t i = 1; i < n; ++i)
      if (boxes[i].score == boxes[0].score) ++ties;
    for (OverlapMode mode : {OverlapMode::Union, OverlapMode::Min}) {
      const float thr = float(1 + rng() % 9) / 10.0f;
      if (nms(boxes, thr, mode) != oracle::nms(boxes, thr, mode)) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && ties > 0 && secs < 10.0,
          fmt("%zu mismatches over 1000 sets x 2 modes, %zu tied scores seen, %.2fs", mismatches, ties, secs)};
}

Outcome gradients() {
  const auto t0 = Clock::now();
  const std::vector<GradCheckResult> results = run_gradient_suite(42, 20);
  const double secs = seconds_since(t0);
  bool ok = secs < 60.0;
  std::string worst_name;
  double worst_ratio = 0.0;
  for (const GradCheckResult& r : results) {
    ok = ok && r.passed() && r.draws >= 20;
    const double ratio = r.max_error / r.tolerance;
    if (ratio >= worst_ratio) worst_ratio = ratio, worst_name = r.name;
  }
  return {ok, fmt("%zu checks x 20 draws, worst %s at %.2f of tolerance, %.2fs", results.size(), worst_name.c_str(),
                  worst_ratio, secs)};
}

Outcome embedding_norm() {
  std::mt19937_64 rng(404);
  const NetworkDef net = make_toy_embedder();
  double worst = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    const WeightStore w = random_weights(net, rng());
    const Tensor img = oracle::random_tensor(rng, {3, 64, 64}, 0.0f, 255.0f);
    const float x = float(rng() % 20), y = float(rng() % 20), side = float(12 + rng() % 44);
    const Embedding e = embed(align_crop(img, FaceBox{x, y, x + side, y + side, 1}, kToyChipSize), net, w);
    worst = std::max(worst, std::abs(e.norm() - 1.0));
  }
  return {worst <= 1e-6, fmt("max |norm - 1| = %.2e over 1000 weight/chip draws", worst)};
}

Outcome pnet_consistency() {
  const NetworkDef pnet = make_pnet();
  std::mt19937_64 rng(505);
  double worst = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    const WeightStore w = random_weights(pnet, rng());
    const Tensor in = oracle::random_tensor(rng, {3, 24, 24});
    const HeadMap dense = net_forward(pnet, w, in);
    const Tensor& score = dense.at("face_score");
    if (score.dim(1) != 7 || score.dim(2) != 7) return {false, "unexpected dense map size"};
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        Tensor win({3, kPnetCell, kPnetCell});
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t y = 0; y < kPnetCell; ++y)
            for (std::size_t x = 0; x < kPnetCell; ++x)
              win.at(c, y, x) = in.at(c, kPnetStride * i + y, kPnetStride * j + x);
        const HeadMap one = net_forward(pnet, w, win);
        for (const char* head : {"face_score", "box", "landmarks"}) {
          const Tensor& d = dense.at(head);
          const Tensor& o = one.at(head);
          for (std::size_t c = 0; c < d.dim(0); ++c) worst = std::max(worst, double(std::abs(o[c] - d.at(c, i, j))));
        }
        const FaceBox b = cell_to_box(i, j, 1.0, 1.0f);
        if (b.x1 != float(kPnetStride * j) || b.y1 != float(kPnetStride * i) || b.width() != float(kPnetCell))
          return {false, "cell-to-box mapping disagrees with the window origin"};
      }
  }
  return {worst <= 1e-5, fmt("max |dense - window| = %.2e over 20 nets x 49 cells", worst)};
}

Outcome triplets() {
  std::mt19937_64 rng(606);
  std::vector<Embedding> e;
  std::vector<int> labels;
  std::size_t mismatches = 0, selected = 0;
  for (int batch = 0; batch < 200; ++batch) {
    oracle::random_batch(rng, e, labels);
    const std::vector<TripletIndex> got = select_triplets(e, labels);
    selected += got.size();
    if (got != oracle::select_triplets(e, labels)) ++mismatches;
  }
  return {mismatches == 0, fmt("%zu mismatching batches of 200, %zu triplets compared", mismatches, selected)};
}

Outcome embedder_training() {
  const Trained& t = trained();
  const double sat = t.embedder.stages.front().epochs.back().accuracy;
  return {sat >= 0.9 && t.embedder_seconds < 120.0,
          fmt("held-out triplet satisfaction %.4f, %.1fs", sat, t.embedder_seconds)};
}

Outcome end_to_end() {
  const auto t0 = Clock::now();
  const Pipeline pipeline = trained_pipeline();
  const std::vector<SynthScene> probes = synthetic_probes(200);
  std::vector<Prediction> preds;
  std::vector<std::pair<std::string, AgeLabel>> truth;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const std::string id = "probe" + std::to_string(i);
    const FrameResult r = pipeline.process(probes[i].image, i, id);
    preds.push_back(prediction_from(r.report));
    truth.emplace_back(id, probes[i].faces.front().label);
    const SynthFace& face = probes[i].faces.front();
    for (const FaceReport& f : r.report.faces) {
      const FaceBox& b = f.detection.box;
      if (b.x1 <= face.box.center_x() && face.box.center_x() <= b.x2 && b.y1 <= face.box.center_y() &&
          face.box.center_y() <= b.y2) {
        ++covered;
        break;
      }
    }
  }
  const EvalSummary s = evaluate(preds, truth);
  if (!s.roc) return {false, "ROC missing"};
  bool monotone = true;
  for (std::size_t i = 1; i < s.roc->points.size(); ++i) {
    monotone = monotone && s.roc->points[i].false_positive_rate >= s.roc->points[i - 1].false_positive_rate &&
               s.roc->points[i].true_positive_rate >= s.roc->points[i - 1].true_positive_rate;
  }
  std::vector<double> scores;
  std::vector<AgeLabel> labels;
  for (std::size_t i = 0; i < preds.size(); ++i) scores.push_back(preds[i].score), labels.push_back(truth[i].second);
  const double auc_gap = std::abs(s.roc->auc - oracle::pairwise_auc(scores, labels));
  return {s.accuracy >= 0.95 && s.roc->auc >= 0.95 && monotone && auc_gap <= 1e-9,
          fmt("accuracy %.3f, AUC %.4f, |AUC - pairwise| %.1e, ROC monotone %s, face centre covered %zu/200, "
              "detector trained in %.1fs, eval %.1fs",
              s.accuracy, s.roc->auc, auc_gap, monotone ? "yes" : "no", covered, trained().detector_seconds,
              seconds_since(t0))};
}

Outcome evaluation_fixture() {
  const EvalSummary tally = summarize_counts(2000, 158);
  std::vector<Prediction> preds;
  std::vector<std::pair<std::string, AgeLabel>> truth;
  for (int i = 0; i < 2000; ++i) {
    const AgeLabel label = i % 2 ? AgeLabel::Adult : AgeLabel::Child;
    const bool wrong = i < 158;
    const AgeLabel pred = wrong ? (label == AgeLabel::Child ? AgeLabel::Adult : AgeLabel::Child) : label;
    preds.push_back({"img" + std::to_string(i), pred, pred == AgeLabel::Child ? 0.5 : -0.5});
    truth.emplace_back("img" + std::to_string(i), label);
  }
  const EvalSummary full = evaluate(preds, truth);
  const bool ok = tally.miss_rate == 0.079 && tally.detection_rate == 0.921 && full.miss_count == 158 &&
                  full.miss_rate == 0.079 && full.detection_rate == 0.921;
  return {ok, fmt("tally: miss_rate %.17g detection_rate %.17g; from predictions: %zu misses, %.17g / %.17g",
                  tally.miss_rate, tally.detection_rate, full.miss_count, full.miss_rate, full.detection_rate)};
}

bool same_outside(const Tensor& a, const Tensor& b, const std::vector<PixelRegion>& regions) {
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < a.dim(1); ++y)
      for (std::size_t x = 0; x < a.dim(2); ++x) {
        const bool inside = std::any_of(regions.begin(), regions.end(), [&](const PixelRegion& r) {
          return x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
        });
        if (!inside && std::bit_cast<std::uint32_t>(a.at(c, y, x)) != std::bit_cast<std::uint32_t>(b.at(c, y, x)))
          return false;
      }
  return true;
}

Outcome redaction() {
  std::mt19937_64 rng(1010);
  std::size_t roundtrip_fail = 0, outside_fail = 0, idempotent_fail = 0;
  for (int frame = 0; frame < 500; ++frame) {
    const std::size_t h = 12 + rng() % 60, w = 12 + rng() % 60;
    Tensor img({3, h, w});
    for (float& v : img.data()) v = float(rng() % 256);
    const std::size_t x0 = rng() % w, y0 = rng() % h;
    const PixelRegion r{x0, y0, x0 + 1 + rng() % (w - x0), y0 + 1 + rng() % (h - y0)};
    ScrambleKey key;
    for (auto& b : key) b = static_cast<std::uint8_t>(rng());

    const Tensor s = scramble_region(img, r, key);
    if (!bit_identical(unscramble_region(s, r, key), img)) ++roundtrip_fail;
    const std::size_t block = 1 + rng() % 8;
    const Tensor p = pixelate_region(img, r, block);
    if (!bit_identical(pixelate_region(p, r, block), p)) ++idempotent_fail;
    const Tensor b = blur_region(img, r, 0.5 + double(rng() % 40) / 10.0);
    if (!same_outside(img, s, {r}) || !same_outside(img, p, {r}) || !same_outside(img, b, {r})) ++outside_fail;

    // whole-policy path with several overlapping detections
    std::vector<LabeledDetection> dets;
    for (std::size_t k = 0, n = rng() % 4; k < n; ++k) {
      const float bx = float(rng() % w), by = float(rng() % h), side = float(4 + rng() % 20);
      ClassificationResult c;
      c.label = rng() % 2 ? AgeLabel::Child : AgeLabel::Adult;
      c.score = c.label == AgeLabel::Child ? 0.3 : -0.3;
      dets.push_back({Detection{FaceBox{bx, by, bx + side, by + side, float(rng() % 100) / 100.0f}, {}}, c});
    }
    const DenatureMethod methods[] = {Pixelate{block}, GaussianBlur{1.5}, KeyedScramble{key}};
    const Redaction red = apply_policy(img, dets, RedactionPolicy{}, methods[rng() % 3]);
    std::vector<PixelRegion> touched;
    for (const RedactionLogEntry& e : red.log) touched.push_back(e.region);
    if (!same_outside(img, red.frame, touched)) ++outside_fail;
  }
  return {roundtrip_fail + outside_fail + idempotent_fail == 0,
          fmt("500 frames: round-trip failures %zu, outside-region changes %zu, pixelate idempotence failures %zu",
              roundtrip_fail, outside_fail, idempotent_fail)};
}

std::string report_stream(const Pipeline& p, const fs::path& dir) {
  std::ostringstream out;
  const std::unique_ptr<FrameSource> src = open_frame_source(dir);
  run_pipeline(p, *src, [&](const Tensor&, const FrameReport& r) { write_report_line(out, r, {false}); }, {});
  return out.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism_and_formats() {
  const fs::path dir = fs::temp_directory_path() / "edgeguard_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir / "frames");
  const std::vector<SynthScene> probes = synthetic_probes(40);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.ppm", i);
    write_ppm(dir / "frames" / name, probes[i].image);
  }

  // same seed, same config: retrain the embedder and rebuild everything
  const TrainResult again = train_toy(ToyTask::Embedder, TrainerConfig{});
  const bool weights_same = encode_weights(again.weights) == encode_weights(trained().embedder.weights);
  const std::string a = report_stream(trained_pipeline(), dir / "frames");
  const std::string b = report_stream(trained_pipeline(), dir / "frames");
  const bool stream_same = !a.empty() && a == b;

  WeightStore all = trained().detector.weights;
  all.merge(trained().embedder.weights);
  save_weights(all, dir / "w.mprw");
  const bool mprw_same = bit_identical(load_weights(dir / "w.mprw"), all) &&
                         slurp(dir / "w.mprw") == std::string(reinterpret_cast<const char*>(encode_weights(all).data()),
                                                              encode_weights(all).size());

  const Gallery g = synthetic_gallery(Embedder(all));
  save_gallery(dir / "g.txt", g);
  const Gallery g2 = load_gallery(dir / "g.txt");
  save_gallery(dir / "g2.txt", g2);
  bool gallery_same = g2.entries.size() == g.entries.size() && slurp(dir / "g.txt") == slurp(dir / "g2.txt");
  for (std::size_t i = 0; gallery_same && i < g.entries.size(); ++i)
    gallery_same = g.entries[i].label == g2.entries[i].label && g.entries[i].embedding == g2.entries[i].embedding;

  std::vector<Tensor> frames;
  for (const SynthScene& s : probes) frames.push_back(s.image);
  const BenchResult bench_result = bench(trained_pipeline(), frames, 200);
  fs::remove_all(dir);

  return {weights_same && stream_same && mprw_same && gallery_same && bench_result.additivity_violations == 0,
          fmt("retrained weights identical %s, report stream identical %s (%zu bytes), MPRW round-trip %s, "
              "gallery round-trip %s, timing additivity violations %zu/%zu",
              weights_same ? "yes" : "no", stream_same ? "yes" : "no", a.size(), mprw_same ? "yes" : "no",
              gallery_same ? "yes" : "no", bench_result.additivity_violations, bench_result.frames)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"kernel oracles", kernels},
      {"NMS equivalence", nms_equivalence},
      {"gradient suite", gradients},
      {"embedding norm", embedding_norm},
      {"P-Net dense/window consistency", pnet_consistency},
      {"triplet selection", triplets},
      {"toy embedder training", embedder_training},
      {"synthetic end-to-end", end_to_end},
      {"evaluation arithmetic (158 of 2000)", evaluation_fixture},
      {"redaction properties", redaction},
      {"determinism and formats", determinism_and_formats},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
