#include "edgeguard/recognizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "edgeguard/errors.hpp"

namespace edgeguard {

std::string_view to_string(AgeLabel label) noexcept { return label == AgeLabel::Child ? "child" : "adult"; }

std::optional<AgeLabel> parse_age_label(std::string_view text) noexcept {
  if (text == "child") return AgeLabel::Child;
  if (text == "adult") return AgeLabel::Adult;
  return std::nullopt;
}

std::size_t Gallery::count(AgeLabel label) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const GalleryEntry& e) { return e.label == label; }));
}

ClassificationResult classify(const Embedding& embedding, const Gallery& gallery, double threshold) {
  if (!gallery.usable()) {
    throw ConfigError("gallery needs at least one child and one adult entry (has " +
                      std::to_string(gallery.count(AgeLabel::Child)) + " child, " +
                      std::to_string(gallery.count(AgeLabel::Adult)) + " adult)");
  }
  double best_child = std::numeric_limits<double>::infinity();
  double best_adult = std::numeric_limits<double>::infinity();
  for (const GalleryEntry& e : gallery.entries) {
    const double d = embedding.distance(e.embedding);
    double& best = e.label == AgeLabel::Child ? best_child : best_adult;
    best = std::min(best, d);
  }
  ClassificationResult r;
  r.d_child = best_child;
  r.d_adult = best_adult;
  r.score = best_adult - best_child;
  r.threshold = threshold;
  r.label = r.score > threshold ? AgeLabel::Child : AgeLabel::Adult;
  return r;
}

RocCurve compute_roc(std::span<const double> scores, std::span<const AgeLabel> truth) {
  if (scores.size() != truth.size()) {
    throw DataError("ROC: " + std::to_string(scores.size()) + " scores but " + std::to_string(truth.size()) + " labels");
  }
  const auto positives = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), AgeLabel::Child));
  const std::size_t negatives = truth.size() - positives;
  if (positives == 0 || negatives == 0) throw DataError("ROC needs both child and adult samples");
  if (std::any_of(scores.begin(), scores.end(), [](double s) { return std::isnan(s); })) {
    throw DataError("ROC scores must not be NaN");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double inf = std::numeric_limits<double>::infinity();
  RocCurve roc;
  roc.points.push_back({inf, 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  // A sample is positive at threshold t iff score > t. Lowering t from one
  // distinct score to the next admits the whole tied group at once.
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    roc.points.push_back({s, static_cast<double>(tp) / positives, static_cast<double>(fp) / negatives});
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == s; ++j) (truth[order[j]] == AgeLabel::Child ? tp : fp)++;
    i = j;
  }
  roc.points.push_back({-inf, static_cast<double>(tp) / positives, static_cast<double>(fp) / negatives});

  // The +inf point and the highest-score point coincide at (0,0); keep both
  // so every swept threshold is reported. Duplicates add zero area.
  double area = 0.0;
  for (std::size_t k = 1; k < roc.points.size(); ++k) {
    const RocPoint& a = roc.points[k - 1];
    const RocPoint& b = roc.points[k];
    area += (b.false_positive_rate - a.false_positive_rate) * 0.5 * (a.true_positive_rate + b.true_positive_rate);
  }
  roc.auc = area;
  return roc;
}

namespace {

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_roc_csv(std::ostream& out, const RocCurve& roc) {
  out << "threshold,fpr,tpr\n";
  for (const RocPoint& p : roc.points) {
    out << format_double(p.threshold) << ',' << format_double(p.false_positive_rate) << ','
        << format_double(p.true_positive_rate) << '\n';
  }
  out << "auc," << format_double(roc.auc) << '\n';
}

GalleryBuild gallery_build(std::span<const GallerySample> samples, const Embedder& embedder) {
  GalleryBuild out;
  out.gallery.provenance = std::to_string(samples.size()) + " samples";
  for (const GallerySample& s : samples) {
    try {
      out.gallery.entries.push_back({s.label, embedder.embed(s.chip)});
    } catch (const Error& e) {
      out.failures.emplace_back(s.id, e.what());
    }
  }
  return out;
}

void write_gallery(std::ostream& out, const Gallery& gallery) {
  out << "# edgeguard gallery v1: label,v0..v" << kEmbeddingDim - 1 << '\n';
  if (!gallery.provenance.empty()) {
    std::string p = gallery.provenance;
    std::replace(p.begin(), p.end(), '\n', ' ');
    out << "# provenance: " << p << '\n';
  }
  char buf[32];
  for (const GalleryEntry& e : gallery.entries) {
    out << to_string(e.label);
    for (float v : e.embedding.values()) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
      out << ',' << buf;
    }
    out << '\n';
  }
}

void save_gallery(const std::filesystem::path& path, const Gallery& gallery) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_gallery(out, gallery);
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Gallery read_gallery(std::istream& in) {
  Gallery g;
  std::string line;
  std::size_t line_no = 0;
  constexpr std::string_view kProvenance = "# provenance: ";
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.starts_with(kProvenance)) g.provenance = line.substr(kProvenance.size());
      continue;
    }
    auto fail = [&](const std::string& why) {
      throw DataError("gallery line " + std::to_string(line_no) + ": " + why);
    };
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) fail("expected label,v0,...");
    const std::optional<AgeLabel> label = parse_age_label(std::string_view(line).substr(0, comma));
    if (!label) fail("unknown label '" + line.substr(0, comma) + "'");
    std::vector<float> values;
    values.reserve(kEmbeddingDim);
    const char* p = line.data() + comma + 1;
    const char* end = line.data() + line.size();
    while (p <= end) {
      float v = 0.0f;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) fail("bad number at column " + std::to_string(p - line.data() + 1));
      values.push_back(v);
      if (next == end) break;
      if (*next != ',') fail("expected ',' at column " + std::to_string(next - line.data() + 1));
      p = next + 1;
    }
    if (values.size() != kEmbeddingDim) {
      fail("expected " + std::to_string(kEmbeddingDim) + " values, got " + std::to_string(values.size()));
    }
    try {
      g.entries.push_back({*label, Embedding::from_unit(values, 1e-5)});
    } catch (const DegenerateInputError& e) {
      fail(e.what());
    }
  }
  return g;
}

Gallery load_gallery(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open gallery '" + path.string() + "'");
  try {
    return read_gallery(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace edgeguard
