#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "edgeguard/cascade_nets.hpp"
#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"
#include "edgeguard/pipeline.hpp"
#include "edgeguard/synthetic.hpp"
#include "oracles.hpp"

using namespace edgeguard;
namespace fs = std::filesystem;

namespace {

WeightStore random_cascade(std::uint64_t seed) {
  const CascadeNets nets = CascadeNets::build(CascadeWidths::toy());
  WeightStore w = random_weights(nets.pnet, seed);
  w.merge(random_weights(nets.rnet, seed + 1));
  w.merge(random_weights(nets.onet, seed + 2));
  return w;
}

WeightStore random_embedder(std::uint64_t seed) {
  WeightStore w = random_weights(make_toy_embedder(), seed);
  w.add(kEmbedderInputShapeKey, Tensor({3}, std::vector<float>{3, 48, 48}));
  return w;
}

PipelineConfig loose_config() {
  PipelineConfig c;
  c.detector.stage_thresholds = {0.05f, 0.05f, 0.05f};
  c.method = Pixelate{4};
  return c;
}

Pipeline full_pipeline(PipelineConfig c = loose_config()) {
  std::mt19937_64 rng(1);
  Gallery g{{{AgeLabel::Child, oracle::random_embedding(rng)}, {AgeLabel::Adult, oracle::random_embedding(rng)}}, ""};
  return Pipeline(FaceDetector(random_cascade(31), c.detector), Embedder(random_embedder(32)), g, c);
}

// Fresh scratch directory under the system temp dir.
fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("edgeguard_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<Tensor> scenes(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_scene(rng, SceneSpec{}).image);
  return out;
}

std::string run_to_string(const Pipeline& p, const fs::path& dir, bool timing) {
  std::ostringstream out;
  const std::unique_ptr<FrameSource> src = open_frame_source(dir);
  run_pipeline(p, *src, [&](const Tensor&, const FrameReport& r) { write_report_line(out, r, {timing}); }, {});
  return out.str();
}

}  // namespace

TEST_CASE("timing additivity rule") {
  TimingReport t{10, 20, 30, 40, 100};
  CHECK(t.stage_sum_ns() == 100);
  CHECK(t.additive());
  t.total_ns = 105;
  CHECK(t.additive());
  t.total_ns = 106;
  CHECK_FALSE(t.additive());
  t.total_ns = 99;
  CHECK_FALSE(t.additive());
}

TEST_CASE("processing keeps the frame size and fills every report field") {
  const Pipeline p = full_pipeline();
  for (const Tensor& frame : scenes(5, 3)) {
    const Tensor before = frame;
    const FrameResult r = p.process(frame, 7, "x.ppm");
    CHECK(bit_identical(frame, before));
    CHECK(r.frame.shape() == frame.shape());
    CHECK(r.report.index == 7);
    CHECK(r.report.width == 64);
    CHECK(r.report.timing.additive());
    CHECK(r.report.timing.total_ns > 0);
    for (const FaceReport& f : r.report.faces) {
      REQUIRE(f.classification.has_value());
      CHECK(f.classification->score == doctest::Approx(f.classification->d_adult - f.classification->d_child));
      CHECK(f.redacted == (f.classification->label == AgeLabel::Child || f.classification->is_tie()));
    }
  }
}

TEST_CASE("frames without faces still carry timing") {
  PipelineConfig c;
  c.detector.stage_thresholds = {1.0f, 1.0f, 1.0f};
  const Pipeline p(FaceDetector(random_cascade(1), c.detector), c);
  const FrameResult r = p.process(Tensor({3, 40, 40}, 90.0f));
  CHECK(r.report.faces.empty());
  CHECK(r.report.timing.total_ns > 0);
  const nlohmann::json j = to_json(r.report);
  CHECK(j.at("faces").empty());
  CHECK(j.contains("timing_ms"));
}

TEST_CASE("disabling redaction leaves pixels untouched") {
  PipelineConfig c = loose_config();
  c.method.reset();
  const Pipeline p = full_pipeline(c);
  for (const Tensor& frame : scenes(4, 5)) {
    const FrameResult r = p.process(frame);
    CHECK(bit_identical(r.frame, frame));
    for (const FaceReport& f : r.report.faces) CHECK_FALSE(f.redacted);
  }
}

TEST_CASE("report JSON layout and parsing back") {
  FrameReport r;
  r.index = 3;
  r.source = "a.ppm";
  r.width = 10;
  r.height = 8;
  FaceReport f;
  f.detection.box = {1, 2, 5, 6, 0.75f};
  ClassificationResult c;
  c.label = AgeLabel::Child;
  c.d_child = 0.25;
  c.d_adult = 1.0;
  c.score = 0.75;
  f.classification = c;
  f.redacted = true;
  f.reason = "label:child";
  r.faces.push_back(f);
  r.timing = {1000000, 0, 0, 0, 1000000};

  const nlohmann::json j = to_json(r);
  CHECK(j.at("frame") == 3);
  CHECK(j.at("faces")[0].at("box") == nlohmann::json::array({1.0, 2.0, 5.0, 6.0}));
  CHECK(j.at("faces")[0].at("landmarks").size() == 5);
  CHECK(j.at("faces")[0].at("label") == "child");
  CHECK(j.at("faces")[0].at("reason") == "label:child");
  CHECK(j.at("timing_ms").at("detect") == 1.0);
  CHECK_FALSE(to_json(r, {false}).contains("timing_ms"));

  std::stringstream s;
  write_report_line(s, r);
  r.faces.clear();
  r.index = 4;
  r.source = "b.ppm";
  write_report_line(s, r);
  const std::vector<ReportSummary> back = read_reports(s);
  REQUIRE(back.size() == 2);
  CHECK(back[0].label == AgeLabel::Child);
  CHECK(back[0].score == 0.75);
  CHECK_FALSE(back[1].label.has_value());
  CHECK(prediction_from(back[1]).score == kNoFaceScore);
  CHECK(prediction_from(back[1]).predicted == AgeLabel::Adult);
  CHECK(prediction_from(r).score == kNoFaceScore);

  std::istringstream broken("{\"frame\":1}\nnot json\n");
  CHECK_THROWS_AS(read_reports(broken), DataError);
}

TEST_CASE("directory runs are ordered, skip bad frames and are reproducible") {
  const fs::path dir = scratch("run");
  const std::vector<Tensor> frames = scenes(6, 9);
  for (std::size_t i = 0; i < frames.size(); ++i) write_ppm(dir / ("f" + std::to_string(i) + ".ppm"), frames[i]);
  std::ofstream(dir / "f3b.ppm") << "P6\n2 2\n255\nxx";
  std::ofstream(dir / "notes.txt") << "ignored";

  PipelineConfig c = loose_config();
  c.workers = 3;
  const Pipeline p = full_pipeline(c);
  std::vector<std::string> seen, failed;
  const std::unique_ptr<FrameSource> src = open_frame_source(dir);
  const RunStats s = run_pipeline(
      p, *src, [&](const Tensor&, const FrameReport& r) { seen.push_back(r.source); },
      [&](const std::string& name, const std::string&) { failed.push_back(name); });
  CHECK(s.frames == 6);
  CHECK(s.skipped == 1);
  CHECK(failed == std::vector<std::string>{"f3b.ppm"});
  CHECK(seen == std::vector<std::string>{"f0.ppm", "f1.ppm", "f2.ppm", "f3.ppm", "f4.ppm", "f5.ppm"});

  const std::string a = run_to_string(p, dir, false), b = run_to_string(full_pipeline(), dir, false);
  CHECK(a == b);
  CHECK(a.find("timing_ms") == std::string::npos);

  const fs::path empty = scratch("empty");
  CHECK(run_to_string(p, empty, true).empty());
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST_CASE("concatenated stream source") {
  const fs::path dir = scratch("stream");
  const std::vector<Tensor> frames = scenes(3, 4);
  {
    std::ofstream out(dir / "all.ppm", std::ios::binary);
    for (const Tensor& f : frames) write_ppm(out, f);
    out << "P6\n5 5\n255\ntruncated";
  }
  const std::unique_ptr<FrameSource> src = open_frame_source(dir / "all.ppm");
  std::vector<SourceFrame> got;
  while (std::optional<SourceFrame> f = src->next()) got.push_back(std::move(*f));
  REQUIRE(got.size() == 4);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(got[i].name == "all.ppm#" + std::to_string(i));
    REQUIRE(got[i].image.has_value());
    Tensor stored = frames[i];
    for (float& v : stored.data()) v = std::clamp(std::nearbyint(v), 0.0f, 255.0f);
    CHECK(*got[i].image == stored);
  }
  CHECK_FALSE(got[3].image.has_value());
  CHECK_FALSE(got[3].error.empty());
  CHECK_THROWS_AS(open_frame_source(dir / "missing.ppm"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("labels file parsing") {
  std::istringstream in("filename,label\n# comment\n\na.ppm, child\nb.ppm,adult\r\n");
  const auto labels = read_labels(in);
  REQUIRE(labels.size() == 2);
  CHECK(labels[0] == std::pair<std::string, AgeLabel>{"a.ppm", AgeLabel::Child});
  CHECK(labels[1].second == AgeLabel::Adult);
  std::istringstream bad("a.ppm,teen\n");
  CHECK_THROWS_AS(read_labels(bad), DataError);
}

TEST_CASE("evaluation arithmetic") {
  const EvalSummary table = summarize_counts(2000, 158);
  CHECK(table.miss_rate == 0.079);
  CHECK(table.detection_rate == 0.921);
  CHECK(table.miss_count == 158);

  const std::vector<std::pair<std::string, AgeLabel>> truth{
      {"a", AgeLabel::Child}, {"b", AgeLabel::Adult}, {"c", AgeLabel::Child}, {"d", AgeLabel::Adult}};
  const std::vector<Prediction> right{
      {"a", AgeLabel::Child, 0.4}, {"b", AgeLabel::Adult, -0.3}, {"c", AgeLabel::Child, 0.1}, {"d", AgeLabel::Adult, -2}};
  const EvalSummary all = evaluate(right, truth);
  CHECK(all.accuracy == 1.0);
  CHECK(all.miss_rate == 0.0);
  REQUIRE(all.roc.has_value());
  CHECK(all.roc->auc == 1.0);

  std::vector<Prediction> one_wrong = right;
  one_wrong[2] = {"c", AgeLabel::Adult, -0.5};
  const EvalSummary s = evaluate(one_wrong, truth);
  CHECK(s.miss_count == 1);
  CHECK(s.miss_rate == 0.25);
  CHECK(s.detection_rate == 0.75);

  std::vector<Prediction> extra = right;
  extra.push_back({"zz", AgeLabel::Adult, 0});
  try {
    evaluate(extra, truth);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("zz") != std::string::npos);
  }
  CHECK_THROWS_AS(evaluate(std::span(right).first(3), truth), DataError);
  const nlohmann::json j = to_json(s);
  CHECK(j.at("miss_rate") == 0.25);
  CHECK(j.contains("auc"));
}

TEST_CASE("bench statistics") {
  PipelineConfig c;
  const Pipeline p(FaceDetector(random_cascade(2), c.detector), c);
  const std::vector<Tensor> one = scenes(1, 8);
  const BenchResult r1 = bench(p, one, 1);
  CHECK(r1.frames == 1);
  REQUIRE(r1.timings.size() == 1);
  const double total = TimingReport::to_ms(r1.timings[0].total_ns);
  CHECK(r1.stages.at("total").mean_ms == total);
  CHECK(r1.stages.at("total").median_ms == total);
  CHECK(r1.stages.at("total").p95_ms == total);
  CHECK(r1.additivity_violations == 0);

  std::vector<TimingReport> ts;
  for (std::int64_t i = 1; i <= 20; ++i) ts.push_back({i, 0, 0, 0, i});
  const BenchResult s = summarize_timings(ts);
  CHECK(s.stages.at("detect").p95_ms == TimingReport::to_ms(19));
  CHECK(s.stages.at("detect").median_ms == doctest::Approx(TimingReport::to_ms(21) / 2));
  CHECK(s.stages.at("detect").mean_ms == doctest::Approx(TimingReport::to_ms(21) / 2));
}

TEST_CASE("detection time grows with resolution") {
  PipelineConfig c;
  const Pipeline p(FaceDetector(random_cascade(3), c.detector), c);
  std::mt19937_64 rng(3);
  const std::vector<Tensor> small{oracle::random_tensor(rng, {3, 96, 96}, 0, 255)};
  const std::vector<Tensor> large{oracle::random_tensor(rng, {3, 192, 192}, 0, 255)};
  const BenchResult a = bench(p, small, 5), b = bench(p, large, 5);
  CHECK(b.stages.at("detect").median_ms > a.stages.at("detect").median_ms);
  CHECK(a.additivity_violations == 0);
  CHECK(b.additivity_violations == 0);
}

TEST_CASE("pipeline config validation") {
  PipelineConfig c;
  c.workers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.threshold = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  std::mt19937_64 rng(1);
  const Gallery one_sided{{{AgeLabel::Child, oracle::random_embedding(rng)}}, ""};
  CHECK_THROWS_AS(Pipeline(FaceDetector(random_cascade(1), {}), Embedder(random_embedder(1)), one_sided, {}),
                  ConfigError);
}
