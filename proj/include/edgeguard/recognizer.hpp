#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edgeguard/embedder.hpp"

namespace edgeguard {

enum class AgeLabel { Child, Adult };

std::string_view to_string(AgeLabel label) noexcept;
// Accepts "child" / "adult"; nullopt otherwise.
std::optional<AgeLabel> parse_age_label(std::string_view text) noexcept;

struct GalleryEntry {
  AgeLabel label;
  Embedding embedding;
};

// Labeled reference embeddings. Classification needs at least one entry of
// each label.
struct Gallery {
  std::vector<GalleryEntry> entries;
  std::string provenance;

  std::size_t count(AgeLabel label) const noexcept;
  bool usable() const noexcept { return count(AgeLabel::Child) > 0 && count(AgeLabel::Adult) > 0; }
};

// Nearest-reference margin classification. score = d_adult - d_child with
// Euclidean distances; the face is a child iff score > threshold, so a tie
// goes to adult.
struct ClassificationResult {
  AgeLabel label = AgeLabel::Adult;
  double d_child = 0.0;
  double d_adult = 0.0;
  double score = 0.0;
  double threshold = 0.0;

  bool is_tie() const noexcept { return score == threshold; }
};

// Throws ConfigError if the gallery lacks either label.
ClassificationResult classify(const Embedding& embedding, const Gallery& gallery, double threshold = 0.0);

// One operating point; the positive class is child, and a sample is predicted
// positive when its score is strictly above `threshold`.
struct RocPoint {
  double threshold = 0.0;
  double true_positive_rate = 0.0;
  double false_positive_rate = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // ascending FPR, from (0,0) to (1,1)
  double auc = 0.0;
};

// Sweeps +inf, every distinct score (descending) and -inf. AUC is the
// trapezoid area under the sorted points. Throws DataError on length
// mismatch or when only one class is present.
RocCurve compute_roc(std::span<const double> scores, std::span<const AgeLabel> truth);

// Writes "threshold,fpr,tpr" lines followed by "auc,<value>".
void write_roc_csv(std::ostream& out, const RocCurve& roc);

struct GallerySample {
  std::string id;
  AgeLabel label;
  FaceChip chip;
};

struct GalleryBuild {
  Gallery gallery;
  std::vector<std::pair<std::string, std::string>> failures;  // (sample id, reason)
};

// One entry per successfully embedded sample, in input order. Failures are
// reported, not thrown.
GalleryBuild gallery_build(std::span<const GallerySample> samples, const Embedder& embedder);

// Text gallery: '#' comment lines, then "label,v0,...,v127" per entry with
// 9 significant digits. The provenance note is stored as "# provenance: ...".
void write_gallery(std::ostream& out, const Gallery& gallery);
void save_gallery(const std::filesystem::path& path, const Gallery& gallery);
// Throws DataError with the offending line number on malformed input.
Gallery read_gallery(std::istream& in);
Gallery load_gallery(const std::filesystem::path& path);

}  // namespace edgeguard
