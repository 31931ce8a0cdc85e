#include "edgeguard/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>

#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"

namespace edgeguard {

using nlohmann::json;

bool TimingReport::additive() const noexcept {
  const std::int64_t sum = stage_sum_ns();
  return sum <= total_ns && total_ns * 100 <= sum * 105;
}

json to_json(const FrameReport& report, const ReportOptions& options) {
  json faces = json::array();
  for (const FaceReport& f : report.faces) {
    const FaceBox& b = f.detection.box;
    json lm = json::array();
    for (const Point& p : f.detection.landmarks) lm.push_back({p.x, p.y});
    json face{{"box", {b.x1, b.y1, b.x2, b.y2}}, {"score", b.score}, {"landmarks", std::move(lm)}};
    if (f.classification) {
      const ClassificationResult& c = *f.classification;
      face["label"] = to_string(c.label);
      face["d_child"] = c.d_child;
      face["d_adult"] = c.d_adult;
      face["margin"] = c.score;
    }
    face["redacted"] = f.redacted;
    if (f.redacted) face["reason"] = f.reason;
    faces.push_back(std::move(face));
  }
  json j{{"frame", report.index},
         {"source", report.source},
         {"width", report.width},
         {"height", report.height},
         {"faces", std::move(faces)}};
  if (options.include_timing) {
    const TimingReport& t = report.timing;
    j["timing_ms"] = {{"detect", TimingReport::to_ms(t.detect_ns)},
                      {"embed", TimingReport::to_ms(t.embed_ns)},
                      {"classify", TimingReport::to_ms(t.classify_ns)},
                      {"denature", TimingReport::to_ms(t.denature_ns)},
                      {"total", TimingReport::to_ms(t.total_ns)}};
  }
  return j;
}

void write_report_line(std::ostream& out, const FrameReport& report, const ReportOptions& options) {
  out << to_json(report, options).dump() << '\n';
}

std::vector<ReportSummary> read_reports(std::istream& in) {
  std::vector<ReportSummary> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ReportSummary r;
      r.index = j.at("frame").get<std::size_t>();
      r.source = j.at("source").get<std::string>();
      const json& faces = j.at("faces");
      r.faces = faces.size();
      if (!faces.empty() && faces[0].contains("label")) {
        const std::optional<AgeLabel> label = parse_age_label(faces[0].at("label").get<std::string>());
        if (!label) throw DataError("unknown label");
        r.label = label;
        r.score = faces[0].at("margin").get<double>();
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("report line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("report line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void PipelineConfig::validate() const {
  detector.validate();
  policy.validate();
  if (!std::isfinite(threshold)) throw ConfigError("classification threshold must be finite");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

Pipeline::Pipeline(FaceDetector detector, PipelineConfig config)
    : detector_(std::move(detector)), config_(std::move(config)) {
  config_.classify = false;
  config_.validate();
}

Pipeline::Pipeline(FaceDetector detector, Embedder embedder, Gallery gallery, PipelineConfig config)
    : detector_(std::move(detector)),
      embedder_(std::move(embedder)),
      gallery_(std::move(gallery)),
      config_(std::move(config)) {
  config_.validate();
  if (config_.classify && !gallery_.usable()) {
    throw ConfigError("gallery needs at least one child and one adult entry");
  }
}

FrameResult Pipeline::process(const Tensor& frame, std::size_t index, std::string source) const {
  check_image(frame);
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const std::vector<Detection> detections = detector_.detect(frame);
  const auto t1 = Clock::now();

  const bool classify = config_.classify && embedder_.has_value();
  std::vector<Embedding> embeddings;
  if (classify) {
    embeddings.reserve(detections.size());
    for (const Detection& d : detections) embeddings.push_back(embedder_->embed(embedder_->chip(frame, d.box)));
  }
  const auto t2 = Clock::now();

  std::vector<LabeledDetection> labeled;
  if (classify) {
    labeled.reserve(detections.size());
    for (std::size_t i = 0; i < detections.size(); ++i)
      labeled.push_back({detections[i], edgeguard::classify(embeddings[i], gallery_, config_.threshold)});
  }
  const auto t3 = Clock::now();

  FrameResult out;
  std::vector<RedactionLogEntry> log;
  if (classify && config_.method) {
    Redaction r = apply_policy(frame, labeled, config_.policy, *config_.method);
    out.frame = std::move(r.frame);
    log = std::move(r.log);
  } else {
    out.frame = frame;
  }
  const auto t4 = Clock::now();

  FrameReport& rep = out.report;
  rep.index = index;
  rep.source = std::move(source);
  rep.height = image_height(frame);
  rep.width = image_width(frame);
  rep.faces.resize(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) {
    rep.faces[i].detection = detections[i];
    if (classify) rep.faces[i].classification = labeled[i].classification;
  }
  for (const RedactionLogEntry& e : log) {
    rep.faces[e.detection_index].redacted = true;
    rep.faces[e.detection_index].reason = e.reason;
  }
  auto ns = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count();
  };
  rep.timing = {ns(t0, t1), ns(t1, t2), ns(t2, t3), ns(t3, t4), ns(t0, t4)};
  if (!rep.timing.additive()) throw InvariantViolation("stage timings do not add up to the frame total");
  if (out.frame.shape() != frame.shape()) throw InvariantViolation("redaction changed the frame size");
  return out;
}

DirectoryFrameSource::DirectoryFrameSource(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError("'" + dir.string() + "' is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files_.push_back(entry.path());
  }
  std::sort(files_.begin(), files_.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
}

std::optional<SourceFrame> DirectoryFrameSource::next() {
  if (pos_ >= files_.size()) return std::nullopt;
  const std::filesystem::path& p = files_[pos_];
  SourceFrame f;
  f.index = pos_++;
  f.name = p.filename().string();
  try {
    f.image = read_ppm(p);
  } catch (const DataError& e) {
    f.error = e.what();
  }
  return f;
}

StreamFrameSource::StreamFrameSource(const std::filesystem::path& file)
    : in_(file, std::ios::binary), name_(file.filename().string()) {
  if (!in_) throw DataError("cannot open '" + file.string() + "'");
}

std::optional<SourceFrame> StreamFrameSource::next() {
  if (done_) return std::nullopt;
  SourceFrame f;
  f.index = index_;
  f.name = name_ + "#" + std::to_string(index_);
  try {
    f.image = read_ppm(in_);
    if (!f.image) {
      done_ = true;
      return std::nullopt;
    }
  } catch (const DataError& e) {
    f.error = e.what();
    done_ = true;
  }
  ++index_;
  return f;
}

std::unique_ptr<FrameSource> open_frame_source(const std::filesystem::path& path) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) return std::make_unique<DirectoryFrameSource>(path);
  return std::make_unique<StreamFrameSource>(path);
}

RunStats run_pipeline(const Pipeline& pipeline, FrameSource& source, const FrameSink& on_frame,
                      const ErrorSink& on_error) {
  RunStats stats;
  const std::size_t workers = pipeline.config().workers;
  for (;;) {
    std::vector<SourceFrame> batch;
    while (batch.size() < workers) {
      std::optional<SourceFrame> f = source.next();
      if (!f) break;
      batch.push_back(std::move(*f));
    }
    if (batch.empty()) break;

    std::vector<std::optional<FrameResult>> results(batch.size());
    std::vector<std::string> errors(batch.size());
    std::vector<std::exception_ptr> fatal(batch.size());
    auto work = [&](std::size_t i) {
      if (!batch[i].image) {
        errors[i] = batch[i].error;
        return;
      }
      try {
        results[i] = pipeline.process(*batch[i].image, batch[i].index, batch[i].name);
      } catch (const InvariantViolation&) {
        fatal[i] = std::current_exception();
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    };
    if (batch.size() == 1) {
      work(0);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t i = 1; i < batch.size(); ++i) threads.emplace_back(work, i);
      work(0);
      for (std::thread& t : threads) t.join();
    }

    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (fatal[i]) std::rethrow_exception(fatal[i]);
      if (!results[i]) {
        ++stats.skipped;
        if (on_error) on_error(batch[i].name, errors[i]);
        continue;
      }
      ++stats.frames;
      stats.faces += results[i]->report.faces.size();
      stats.redacted += static_cast<std::size_t>(std::count_if(
          results[i]->report.faces.begin(), results[i]->report.faces.end(), [](const FaceReport& f) { return f.redacted; }));
      if (on_frame) on_frame(results[i]->frame, results[i]->report);
    }
  }
  return stats;
}

std::vector<std::pair<std::string, AgeLabel>> read_labels(std::istream& in) {
  std::vector<std::pair<std::string, AgeLabel>> out;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) throw DataError("labels line " + std::to_string(line_no) + ": expected filename,label");
    const std::string name = trim(line.substr(0, comma)), label_text = trim(line.substr(comma + 1));
    if (line_no == 1 && name == "filename" && label_text == "label") continue;
    const std::optional<AgeLabel> label = parse_age_label(label_text);
    if (!label || name.empty()) {
      throw DataError("labels line " + std::to_string(line_no) + ": bad entry '" + line + "'");
    }
    out.emplace_back(name, *label);
  }
  return out;
}

std::vector<std::pair<std::string, AgeLabel>> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels file '" + path.string() + "'");
  return read_labels(in);
}

Prediction prediction_from(const ReportSummary& report) {
  if (!report.label) return {report.source, AgeLabel::Adult, kNoFaceScore};
  return {report.source, *report.label, report.score};
}

Prediction prediction_from(const FrameReport& report) {
  if (report.faces.empty() || !report.faces.front().classification) {
    return {report.source, AgeLabel::Adult, kNoFaceScore};
  }
  const ClassificationResult& c = *report.faces.front().classification;
  return {report.source, c.label, c.score};
}

EvalSummary summarize_counts(std::size_t total, std::size_t misses) {
  if (total == 0) throw DataError("evaluation needs at least one sample");
  if (misses > total) throw DataError("more misses than samples");
  EvalSummary s;
  s.total = total;
  s.miss_count = misses;
  s.miss_rate = static_cast<double>(misses) / static_cast<double>(total);
  s.detection_rate = static_cast<double>(total - misses) / static_cast<double>(total);
  s.accuracy = s.detection_rate;
  return s;
}

EvalSummary evaluate(std::span<const Prediction> predictions,
                     std::span<const std::pair<std::string, AgeLabel>> truth) {
  std::map<std::string, const Prediction*> by_id;
  std::vector<std::string> duplicates;
  for (const Prediction& p : predictions)
    if (!by_id.emplace(p.id, &p).second) duplicates.push_back(p.id);
  std::set<std::string> labeled;
  for (const auto& [id, label] : truth)
    if (!labeled.insert(id).second) duplicates.push_back(id);

  auto list = [](const std::vector<std::string>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? ", " : "") + ids[i];
    if (ids.size() > 20) s += ", ... (" + std::to_string(ids.size()) + " total)";
    return s;
  };
  if (!duplicates.empty()) throw DataError("duplicate sample ids: " + list(duplicates));
  std::vector<std::string> unknown, unlabeled;
  for (const auto& [id, label] : truth)
    if (!by_id.contains(id)) unknown.push_back(id);
  for (const Prediction& p : predictions)
    if (!labeled.contains(p.id)) unlabeled.push_back(p.id);
  if (!unknown.empty()) throw DataError("labels reference samples with no prediction: " + list(unknown));
  if (!unlabeled.empty()) throw DataError("predictions without a truth label: " + list(unlabeled));

  std::size_t misses = 0;
  std::vector<double> scores;
  std::vector<AgeLabel> labels;
  for (const auto& [id, label] : truth) {
    const Prediction& p = *by_id.at(id);
    misses += p.predicted != label ? 1 : 0;
    scores.push_back(p.score);
    labels.push_back(label);
  }
  EvalSummary s = summarize_counts(truth.size(), misses);
  const bool both = std::count(labels.begin(), labels.end(), AgeLabel::Child) > 0 &&
                    std::count(labels.begin(), labels.end(), AgeLabel::Adult) > 0;
  if (both) s.roc = compute_roc(scores, labels);
  return s;
}

json to_json(const EvalSummary& s) {
  json j{{"total", s.total},
         {"miss_count", s.miss_count},
         {"miss_rate", s.miss_rate},
         {"detection_rate", s.detection_rate},
         {"accuracy", s.accuracy}};
  j["auc"] = s.roc ? json(s.roc->auc) : json(nullptr);
  return j;
}

BenchResult summarize_timings(std::span<const TimingReport> timings) {
  BenchResult r;
  r.frames = timings.size();
  r.timings.assign(timings.begin(), timings.end());
  if (timings.empty()) return r;
  auto stats = [&](auto field) {
    std::vector<double> v;
    for (const TimingReport& t : timings) v.push_back(TimingReport::to_ms(field(t)));
    std::sort(v.begin(), v.end());
    StageStats s;
    s.mean_ms = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const std::size_t n = v.size();
    s.median_ms = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    s.p95_ms = v[static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1];
    return s;
  };
  r.stages["detect"] = stats([](const TimingReport& t) { return t.detect_ns; });
  r.stages["embed"] = stats([](const TimingReport& t) { return t.embed_ns; });
  r.stages["classify"] = stats([](const TimingReport& t) { return t.classify_ns; });
  r.stages["denature"] = stats([](const TimingReport& t) { return t.denature_ns; });
  r.stages["total"] = stats([](const TimingReport& t) { return t.total_ns; });
  r.additivity_violations = static_cast<std::size_t>(
      std::count_if(timings.begin(), timings.end(), [](const TimingReport& t) { return !t.additive(); }));
  return r;
}

BenchResult bench(const Pipeline& pipeline, std::span<const Tensor> inputs, std::size_t frames) {
  if (inputs.empty()) throw ConfigError("bench needs at least one input frame");
  std::vector<TimingReport> timings;
  timings.reserve(frames);
  for (std::size_t i = 0; i < frames; ++i)
    timings.push_back(pipeline.process(inputs[i % inputs.size()], i).report.timing);
  return summarize_timings(timings);
}

json to_json(const BenchResult& r) {
  json stages = json::object();
  for (const auto& [name, s] : r.stages)
    stages[name] = {{"mean_ms", s.mean_ms}, {"median_ms", s.median_ms}, {"p95_ms", s.p95_ms}};
  return {{"frames", r.frames}, {"stages", std::move(stages)}, {"additivity_violations", r.additivity_violations}};
}

}  // namespace edgeguard
