#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgeguard/denature.hpp"
#include "edgeguard/detector.hpp"
#include "edgeguard/embedder.hpp"
#include "edgeguard/recognizer.hpp"
#include "edgeguard/tensor.hpp"

// Frame-by-frame orchestration: detect -> embed -> classify -> redact, with
// per-stage timing, line-delimited JSON reports and offline evaluation.
namespace edgeguard {

// Stage durations in nanoseconds from one monotonic clock. Stage boundaries
// share timestamps, so the stages sum to the total exactly.
struct TimingReport {
  std::int64_t detect_ns = 0;
  std::int64_t embed_ns = 0;
  std::int64_t classify_ns = 0;
  std::int64_t denature_ns = 0;
  std::int64_t total_ns = 0;

  std::int64_t stage_sum_ns() const noexcept { return detect_ns + embed_ns + classify_ns + denature_ns; }
  // sum <= total <= sum * 1.05
  bool additive() const noexcept;
  static double to_ms(std::int64_t ns) noexcept { return static_cast<double>(ns) / 1e6; }
};

struct FaceReport {
  Detection detection;
  std::optional<ClassificationResult> classification;  // absent in detect-only runs
  bool redacted = false;
  std::string reason;  // redaction reason when redacted
};

struct FrameReport {
  std::size_t index = 0;
  std::string source;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<FaceReport> faces;  // descending detection score
  TimingReport timing;
};

struct ReportOptions {
  bool include_timing = true;  // off for byte-reproducible streams
};

nlohmann::json to_json(const FrameReport& report, const ReportOptions& options = {});
// One JSON object per line.
void write_report_line(std::ostream& out, const FrameReport& report, const ReportOptions& options = {});

// Parsed back from a report line: only what evaluation needs.
struct ReportSummary {
  std::size_t index = 0;
  std::string source;
  std::optional<AgeLabel> label;  // top face; nullopt when no face was classified
  double score = 0.0;
  std::size_t faces = 0;
};
// Throws DataError naming the line on malformed input.
std::vector<ReportSummary> read_reports(std::istream& in);

struct PipelineConfig {
  DetectorConfig detector;
  double threshold = 0.0;
  RedactionPolicy policy;
  std::optional<DenatureMethod> method;  // nullopt disables redaction
  bool classify = true;                  // false: detection only
  std::size_t workers = 1;

  void validate() const;
};

struct FrameResult {
  Tensor frame;  // redacted copy, same size as the input
  FrameReport report;
};

// Immutable after construction; process() may run concurrently.
class Pipeline {
 public:
  // Detection only.
  Pipeline(FaceDetector detector, PipelineConfig config);
  Pipeline(FaceDetector detector, Embedder embedder, Gallery gallery, PipelineConfig config);

  FrameResult process(const Tensor& frame, std::size_t index = 0, std::string source = {}) const;

  const PipelineConfig& config() const noexcept { return config_; }

 private:
  FaceDetector detector_;
  std::optional<Embedder> embedder_;
  Gallery gallery_;
  PipelineConfig config_;
};

// A frame from a source: either an image or the reason it could not be read.
struct SourceFrame {
  std::size_t index = 0;
  std::string name;
  std::optional<Tensor> image;
  std::string error;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  // nullopt once the source is exhausted.
  virtual std::optional<SourceFrame> next() = 0;
};

// Every *.ppm file of a directory in file-name order.
class DirectoryFrameSource : public FrameSource {
 public:
  explicit DirectoryFrameSource(const std::filesystem::path& dir);
  std::optional<SourceFrame> next() override;

 private:
  std::vector<std::filesystem::path> files_;
  std::size_t pos_ = 0;
};

// Concatenated binary PPM frames in one file. A malformed frame ends the
// stream, since the next frame boundary cannot be found.
class StreamFrameSource : public FrameSource {
 public:
  explicit StreamFrameSource(const std::filesystem::path& file);
  std::optional<SourceFrame> next() override;

 private:
  std::ifstream in_;
  std::string name_;
  std::size_t index_ = 0;
  bool done_ = false;
};

// Directory or stream file, chosen by what `path` is.
std::unique_ptr<FrameSource> open_frame_source(const std::filesystem::path& path);

struct RunStats {
  std::size_t frames = 0;
  std::size_t skipped = 0;
  std::size_t faces = 0;
  std::size_t redacted = 0;
};

using FrameSink = std::function<void(const Tensor& frame, const FrameReport& report)>;
using ErrorSink = std::function<void(const std::string& name, const std::string& message)>;

// Streams every frame of `source` through the pipeline, emitting results in
// input order. At most `workers` frames are held at once. Unreadable or
// failing frames are passed to `on_error` and skipped.
RunStats run_pipeline(const Pipeline& pipeline, FrameSource& source, const FrameSink& on_frame,
                      const ErrorSink& on_error);

// `filename,label` lines; blank lines and '#' comments ignored.
std::vector<std::pair<std::string, AgeLabel>> read_labels(std::istream& in);
std::vector<std::pair<std::string, AgeLabel>> load_labels(const std::filesystem::path& path);

struct Prediction {
  std::string id;
  AgeLabel predicted = AgeLabel::Adult;
  double score = 0.0;
};

// Score given to a probe without any classified face: below every real
// margin, predicted adult.
inline constexpr double kNoFaceScore = -2.0;

Prediction prediction_from(const ReportSummary& report);
Prediction prediction_from(const FrameReport& report);

struct EvalSummary {
  std::size_t total = 0;
  std::size_t miss_count = 0;
  double miss_rate = 0.0;
  double detection_rate = 0.0;
  double accuracy = 0.0;
  std::optional<RocCurve> roc;  // needs both classes
};

// Rates from a bare tally.
EvalSummary summarize_counts(std::size_t total, std::size_t misses);

// Matches predictions to truth by id. Throws DataError listing ids present
// on only one side.
EvalSummary evaluate(std::span<const Prediction> predictions,
                     std::span<const std::pair<std::string, AgeLabel>> truth);

nlohmann::json to_json(const EvalSummary& summary);

struct StageStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

struct BenchResult {
  std::size_t frames = 0;
  std::map<std::string, StageStats> stages;  // detect, embed, classify, denature, total
  std::size_t additivity_violations = 0;
  std::vector<TimingReport> timings;
};

// Nearest-rank percentiles over the given reports.
BenchResult summarize_timings(std::span<const TimingReport> timings);

// Runs `frames` frames, cycling through `inputs`.
BenchResult bench(const Pipeline& pipeline, std::span<const Tensor> inputs, std::size_t frames);

nlohmann::json to_json(const BenchResult& result);

}  // namespace edgeguard
