// edgeguard command-line tool. Exit codes: 0 success, 1 usage error,
// 2 data error, 3 internal invariant violation.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "edgeguard/denature.hpp"
#include "edgeguard/detector.hpp"
#include "edgeguard/embedder.hpp"
#include "edgeguard/errors.hpp"
#include "edgeguard/image.hpp"
#include "edgeguard/pipeline.hpp"
#include "edgeguard/recognizer.hpp"
#include "edgeguard/synthetic.hpp"
#include "edgeguard/training.hpp"
#include "edgeguard/weights_io.hpp"

namespace fs = std::filesystem;
using namespace edgeguard;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

WeightStore load_all(const std::vector<std::string>& paths) {
  WeightStore store;
  for (const std::string& p : paths) store.merge(load_weights(p));
  return store;
}

struct DetectorOptions {
  float min_face = 20.0f;
  float scale_factor = 0.709f;
  std::vector<float> thresholds;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--min-face", min_face, "Smallest face size in pixels")->capture_default_str();
    cmd->add_option("--scale-factor", scale_factor, "Pyramid scale step")->capture_default_str();
    cmd->add_option("--thresholds", thresholds, "P,R,O stage thresholds, e.g. 0.6,0.7,0.7")
        ->delimiter(',')
        ->expected(3);
  }
  DetectorConfig config() const {
    DetectorConfig c;
    c.min_face_size = min_face;
    c.scale_factor = scale_factor;
    if (!thresholds.empty()) c.stage_thresholds = {thresholds[0], thresholds[1], thresholds[2]};
    c.validate();
    return c;
  }
};

void log_error(const std::string& name, const std::string& message) {
  std::cerr << "edgeguard: skipped " << name << ": " << message << '\n';
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::string frame_file_name(const std::string& source_name, std::size_t index) {
  if (fs::path(source_name).extension() == ".ppm") return source_name;
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu.ppm", index);
  return buf;
}

int cmd_detect(const std::vector<std::string>& weights, const std::string& input, const std::string& out_path,
               const DetectorOptions& det, bool deterministic, std::size_t workers) {
  PipelineConfig cfg;
  cfg.detector = det.config();
  cfg.workers = workers;
  const Pipeline pipeline(FaceDetector(load_all(weights), cfg.detector), cfg);
  const std::unique_ptr<FrameSource> source = open_frame_source(input);
  std::ofstream out = open_out(out_path);
  const ReportOptions ropt{!deterministic};
  const RunStats s = run_pipeline(
      pipeline, *source, [&](const Tensor&, const FrameReport& r) { write_report_line(out, r, ropt); }, log_error);
  std::cerr << "edgeguard: " << s.frames << " frames, " << s.faces << " faces, " << s.skipped << " skipped\n";
  return kOk;
}

struct RunOptions {
  std::vector<std::string> weights;
  std::string gallery, method = "pixelate:8", input, out_dir;
  double threshold = 0.0;
  std::vector<std::string> redact_labels{"child"};
  bool no_tie = false, no_redact = false, deterministic = false;
  float expand = 0.1f;
  std::size_t workers = 1;
  DetectorOptions det;
};

int cmd_run(const RunOptions& o) {
  PipelineConfig cfg;
  cfg.detector = o.det.config();
  cfg.threshold = o.threshold;
  cfg.workers = o.workers;
  cfg.policy.redact_labels.clear();
  for (const std::string& l : o.redact_labels) {
    const std::optional<AgeLabel> label = parse_age_label(l);
    if (!label) throw ConfigError("unknown label '" + l + "' in --redact");
    cfg.policy.redact_labels.insert(*label);
  }
  cfg.policy.redact_on_tie = !o.no_tie;
  cfg.policy.box_expansion = o.expand;
  if (!o.no_redact) cfg.method = parse_denature_method(o.method);

  const WeightStore weights = load_all(o.weights);
  const Pipeline pipeline(FaceDetector(weights, cfg.detector), Embedder(weights), load_gallery(o.gallery), cfg);
  const std::unique_ptr<FrameSource> source = open_frame_source(o.input);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  std::ofstream reports = open_out(dir / "reports.jsonl");
  const ReportOptions ropt{!o.deterministic};
  const RunStats s = run_pipeline(
      pipeline, *source,
      [&](const Tensor& frame, const FrameReport& r) {
        write_ppm(dir / frame_file_name(r.source, r.index), frame);
        write_report_line(reports, r, ropt);
        reports.flush();
      },
      log_error);
  std::cerr << "edgeguard: " << s.frames << " frames, " << s.faces << " faces, " << s.redacted << " redacted, "
            << s.skipped << " skipped\n";
  return kOk;
}

int cmd_build_gallery(const std::vector<std::string>& weights, const std::string& input, const std::string& labels,
                      const std::string& out) {
  const Embedder embedder(load_all(weights));
  std::vector<GallerySample> samples;
  std::size_t unreadable = 0;
  for (const auto& [name, label] : load_labels(labels)) {
    try {
      const Tensor img = read_ppm(fs::path(input) / name);
      const FaceBox whole{0.0f, 0.0f, static_cast<float>(image_width(img)), static_cast<float>(image_height(img)), 1.0f};
      samples.push_back({name, label, embedder.chip(img, whole)});
    } catch (const DataError& e) {
      log_error(name, e.what());
      ++unreadable;
    }
  }
  GalleryBuild g = gallery_build(samples, embedder);
  for (const auto& [id, why] : g.failures) log_error(id, why);
  g.gallery.provenance = fs::path(labels).filename().string() + ", " + std::to_string(g.gallery.entries.size()) +
                         " entries";
  save_gallery(out, g.gallery);
  std::cerr << "edgeguard: gallery with " << g.gallery.count(AgeLabel::Child) << " child and "
            << g.gallery.count(AgeLabel::Adult) << " adult entries\n";
  if (!g.gallery.usable()) {
    std::cerr << "edgeguard: warning: gallery lacks one of the labels and cannot classify\n";
  }
  return unreadable + g.failures.size() == 0 ? kOk : kData;
}

int cmd_eval(const std::string& reports_path, const std::string& labels, const std::string& roc_path) {
  std::ifstream in(reports_path);
  if (!in) throw DataError("cannot open reports '" + reports_path + "'");
  std::vector<Prediction> preds;
  for (const ReportSummary& r : read_reports(in)) preds.push_back(prediction_from(r));
  const auto truth = load_labels(labels);
  const EvalSummary s = evaluate(preds, truth);
  if (!roc_path.empty()) {
    if (!s.roc) throw DataError("ROC needs both child and adult samples");
    std::ofstream out = open_out(roc_path);
    write_roc_csv(out, *s.roc);
  }
  std::cout << to_json(s).dump(2) << '\n';
  return kOk;
}

int cmd_train(const std::string& task, const TrainerConfig& cfg, const std::string& out) {
  const ToyTask t = task == "detector" ? ToyTask::Detector : ToyTask::Embedder;
  const TrainResult r = train_toy(t, cfg);
  save_weights(r.weights, out);
  for (const StageHistory& h : r.stages) {
    const std::string csv = t == ToyTask::Embedder ? out + ".metrics.csv" : out + "." + h.name + ".metrics.csv";
    std::ofstream m = open_out(csv);
    write_metrics_csv(m, h);
    const EpochMetrics& last = h.epochs.back();
    std::printf("%s: loss %.6f, %s %.4f\n", h.name.c_str(), last.loss,
                t == ToyTask::Embedder ? "triplet satisfaction" : "held-out accuracy", last.accuracy);
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t draws) {
  bool ok = true;
  for (const GradCheckResult& r : run_gradient_suite(seed, draws)) {
    std::printf("%-26s %-4s max rel error %.3e (tolerance %.0e, %zu draws)\n", r.name.c_str(),
                r.passed() ? "ok" : "FAIL", r.max_error, r.tolerance, r.draws);
    ok = ok && r.passed();
  }
  return ok ? kOk : kInternal;
}

template <class T>
T json_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

int cmd_bench(const std::string& config_path, std::size_t frames) {
  std::ifstream in(config_path);
  if (!in) throw DataError("cannot open bench config '" + config_path + "'");
  nlohmann::json c;
  try {
    c = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(config_path + ": " + e.what());
  }
  const fs::path base = fs::path(config_path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  PipelineConfig cfg;
  std::vector<std::string> weight_paths;
  std::vector<Tensor> inputs;
  std::optional<Gallery> gallery;
  try {
    for (const std::string& w : c.at("weights").get<std::vector<std::string>>()) weight_paths.push_back(resolve(w));
    if (c.contains("detector")) {
      const nlohmann::json& d = c.at("detector");
      cfg.detector.min_face_size = json_or(d, "min_face", cfg.detector.min_face_size);
      cfg.detector.scale_factor = json_or(d, "scale_factor", cfg.detector.scale_factor);
      if (d.contains("thresholds")) {
        const auto t = d.at("thresholds").get<std::vector<float>>();
        if (t.size() != 3) throw ConfigError("detector.thresholds needs 3 values");
        cfg.detector.stage_thresholds = {t[0], t[1], t[2]};
      }
    }
    cfg.threshold = json_or(c, "threshold", 0.0);
    if (c.contains("method")) cfg.method = parse_denature_method(c.at("method").get<std::string>());
    if (c.contains("gallery")) gallery = load_gallery(resolve(c.at("gallery").get<std::string>()));
    if (c.contains("input")) {
      const std::unique_ptr<FrameSource> src = open_frame_source(resolve(c.at("input").get<std::string>()));
      while (std::optional<SourceFrame> f = src->next())
        if (f->image) inputs.push_back(std::move(*f->image));
    }
    if (c.contains("synthetic")) {
      const nlohmann::json& s = c.at("synthetic");
      SceneSpec spec;
      spec.width = json_or<std::size_t>(s, "width", 64);
      spec.height = json_or<std::size_t>(s, "height", 64);
      const float scale = static_cast<float>(std::min(spec.width, spec.height)) / 64.0f;
      spec.min_face *= scale;
      spec.max_face *= scale;
      Rng rng(json_or<std::uint64_t>(s, "seed", 1));
      const std::size_t count = json_or<std::size_t>(s, "count", 8);
      for (std::size_t i = 0; i < count; ++i) inputs.push_back(synth_scene(rng, spec).image);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(config_path + ": " + e.what());
  }
  if (inputs.empty()) throw ConfigError("bench config needs \"input\" or \"synthetic\" frames");

  const WeightStore weights = load_all(weight_paths);
  const FaceDetector detector(weights, cfg.detector);
  const Pipeline pipeline = gallery ? Pipeline(detector, Embedder(weights), *gallery, cfg) : Pipeline(detector, cfg);
  const BenchResult r = bench(pipeline, inputs, frames);
  std::cout << to_json(r).dump(2) << '\n';
  return r.additivity_violations == 0 ? kOk : kInternal;
}

int cmd_synth(const std::string& out, std::size_t count, std::uint64_t seed, std::size_t size,
              const std::string& gallery_out, std::size_t gallery_count) {
  Rng rng(seed);
  SceneSpec spec;
  spec.width = spec.height = size;
  const float scale = static_cast<float>(size) / 64.0f;
  spec.min_face *= scale;
  spec.max_face *= scale;
  fs::create_directories(out);
  std::ofstream labels = open_out(fs::path(out) / "labels.csv");
  for (std::size_t i = 0; i < count; ++i) {
    const SynthScene s = synth_scene(rng, spec);
    char name[32];
    std::snprintf(name, sizeof name, "probe_%05zu.ppm", i);
    write_ppm(fs::path(out) / name, s.image);
    labels << name << ',' << to_string(s.faces.front().label) << '\n';
  }
  if (!gallery_out.empty()) {
    fs::create_directories(gallery_out);
    std::ofstream gl = open_out(fs::path(gallery_out) / "labels.csv");
    for (std::size_t i = 0; i < gallery_count; ++i) {
      const AgeLabel label = i % 2 == 0 ? AgeLabel::Child : AgeLabel::Adult;
      const SynthScene s = synth_scene(rng, spec, label);
      char name[32];
      std::snprintf(name, sizeof name, "ref_%05zu.ppm", i);
      write_ppm(fs::path(gallery_out) / name, crop_resize(s.image, s.faces.front().box, 64));
      gl << name << ',' << to_string(label) << '\n';
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face detection, age-group classification and redaction for video frames"};
  app.require_subcommand(1);

  std::vector<std::string> weights;
  std::string input, out, gallery, labels, reports, roc, config;
  DetectorOptions det;
  bool deterministic = false;
  std::size_t workers = 1;

  CLI::App* detect = app.add_subcommand("detect", "Detect faces and write one JSON report per frame");
  detect->add_option("--weights", weights, "Weight file (repeatable)")->required();
  detect->add_option("--input", input, "Directory of .ppm frames or a concatenated P6 stream")->required();
  detect->add_option("--out", out, "Report file (JSON lines)")->required();
  detect->add_flag("--deterministic", deterministic, "Omit timing so reports are reproducible");
  detect->add_option("--workers", workers, "Frames processed in parallel")->capture_default_str();
  det.add_to(detect);

  RunOptions run_opts;
  CLI::App* run = app.add_subcommand("run", "Detect, classify and redact frames");
  run->add_option("--weights", run_opts.weights, "Weight file (repeatable)")->required();
  run->add_option("--gallery", run_opts.gallery, "Gallery file")->required();
  run->add_option("--threshold", run_opts.threshold, "Margin threshold; child iff margin > threshold")
      ->capture_default_str();
  run->add_option("--method", run_opts.method, "pixelate:N | blur:SIGMA | scramble:HEXKEY")->capture_default_str();
  run->add_option("--input", run_opts.input, "Directory of .ppm frames or a concatenated P6 stream")->required();
  run->add_option("--out-dir", run_opts.out_dir, "Output directory for frames and reports.jsonl")->required();
  run->add_option("--redact", run_opts.redact_labels, "Labels to redact")->delimiter(',')->capture_default_str();
  run->add_flag("--no-tie-redaction", run_opts.no_tie, "Leave faces exactly at the threshold untouched");
  run->add_flag("--no-redact", run_opts.no_redact, "Classify only; output frames equal the input");
  run->add_option("--expand", run_opts.expand, "Box expansion before redaction")->capture_default_str();
  run->add_flag("--deterministic", run_opts.deterministic, "Omit timing so reports are reproducible");
  run->add_option("--workers", run_opts.workers, "Frames processed in parallel")->capture_default_str();
  run_opts.det.add_to(run);

  CLI::App* build = app.add_subcommand("build-gallery", "Embed labeled face images into a gallery file");
  build->add_option("--weights", weights, "Embedder weight file (repeatable)")->required();
  build->add_option("--input", input, "Directory of face images (.ppm)")->required();
  build->add_option("--labels", labels, "filename,label lines")->required();
  build->add_option("--out", out, "Gallery file to write")->required();

  CLI::App* eval = app.add_subcommand("eval", "Score reports against truth labels");
  eval->add_option("--reports", reports, "Report file (JSON lines)")->required();
  eval->add_option("--labels", labels, "filename,label lines")->required();
  eval->add_option("--roc", roc, "Write the ROC curve as CSV");

  std::string task;
  TrainerConfig tcfg;
  CLI::App* train = app.add_subcommand("train-toy", "Train toy networks on synthetic data");
  train->add_option("--task", task, "detector | embedder")->required()->check(CLI::IsMember({"detector", "embedder"}));
  train->add_option("--seed", tcfg.rng_seed, "Random seed")->capture_default_str();
  train->add_option("--out", out, "Weight file to write")->required();
  train->add_option("--epochs", tcfg.epochs, "Epochs")->capture_default_str();
  train->add_option("--lr", tcfg.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--batch", tcfg.batch_size, "Batch size")->capture_default_str();
  train->add_option("--margin", tcfg.margin, "Triplet margin")->capture_default_str();
  train->add_option("--scenes", tcfg.train_scenes, "Training scenes")->capture_default_str();

  std::uint64_t seed = 42;
  std::size_t draws = 20;
  CLI::App* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  grad->add_option("--seed", seed, "Random seed")->capture_default_str();
  grad->add_option("--draws", draws, "Random points per check")->capture_default_str();

  std::size_t frames = 100;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Per-stage latency statistics");
  bench_cmd->add_option("--config", config, "JSON bench config")->required();
  bench_cmd->add_option("--frames", frames, "Frames to process")->capture_default_str();

  std::size_t count = 200, size = 64, gallery_count = 20;
  std::string gallery_dir;
  CLI::App* synth = app.add_subcommand("synth", "Write synthetic probe frames and labels");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--count", count, "Number of probe frames")->capture_default_str();
  synth->add_option("--seed", seed, "Random seed")->capture_default_str();
  synth->add_option("--size", size, "Frame side in pixels")->capture_default_str();
  synth->add_option("--gallery-out", gallery_dir, "Also write labeled reference faces here");
  synth->add_option("--gallery-count", gallery_count, "Reference faces")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*detect) return cmd_detect(weights, input, out, det, deterministic, workers);
    if (*run) return cmd_run(run_opts);
    if (*build) return cmd_build_gallery(weights, input, labels, out);
    if (*eval) return cmd_eval(reports, labels, roc);
    if (*train) return cmd_train(task, tcfg, out);
    if (*grad) return cmd_gradcheck(seed, draws);
    if (*bench_cmd) return cmd_bench(config, frames);
    if (*synth) return cmd_synth(out, count, seed, size, gallery_dir, gallery_count);
  } catch (const ConfigError& e) {
    std::cerr << "edgeguard: " << e.what() << '\n';
    return kUsage;
  } catch (const InvariantViolation& e) {
    std::cerr << "edgeguard: internal error: " << e.what() << '\n';
    return kInternal;
  } catch (const Error& e) {
    std::cerr << "edgeguard: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "edgeguard: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "edgeguard: internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
