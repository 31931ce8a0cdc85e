#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgeguard/embedder.hpp"
#include "edgeguard/network.hpp"
#include "edgeguard/tensor.hpp"

// Losses, triplet mining, gradient checking and the toy trainers. Loss math
// runs in double; network parameters stay float.
namespace edgeguard {

struct ScalarLoss {
  double loss = 0.0;
  double grad = 0.0;  // dL/dp
};

inline constexpr double kProbClamp = 1e-7;

// Binary cross-entropy on a face probability clamped to [1e-7, 1 - 1e-7].
ScalarLoss loss_det(double p, int y_det);

struct VectorLoss {
  double loss = 0.0;
  std::vector<double> grad;  // dL/dpred
};

// Squared Euclidean distance ||pred - target||^2 over 4 box offsets.
VectorLoss loss_box(std::span<const double> pred, std::span<const double> target);
// Same over the 10 interleaved landmark coordinates.
VectorLoss loss_landmark(std::span<const double> pred, std::span<const double> target);

struct TaskMask {
  bool det = true;
  bool box = false;
  bool landmark = false;
};

struct LossWeights {
  double det = 1.0;
  double box = 0.5;
  double landmark = 0.5;
};

// One detector training sample. The patch is normalized [3,S,S] where S is
// the stage input size. Targets are present exactly when masked in.
struct DetSample {
  Tensor patch;
  int y_det = 0;
  std::optional<std::array<double, 4>> box_target;
  std::optional<std::array<double, 10>> landmark_target;
  TaskMask mask;

  bool consistent() const noexcept {
    return mask.box == box_target.has_value() && mask.landmark == landmark_target.has_value();
  }
};

struct DetOutputs {
  double p = 0.5;
  std::array<double, 4> box{};
  std::array<double, 10> landmarks{};
};

struct MultitaskLoss {
  double loss = 0.0;
  double det = 0.0;  // unweighted per-task terms (0 when masked out)
  double box = 0.0;
  double landmark = 0.0;
  DetOutputs grad;  // d(weighted loss)/d(output)
};

// Weighted sum of the masked-in terms.
MultitaskLoss loss_multitask(const DetOutputs& out, const DetSample& sample, const LossWeights& weights = {});

struct TripletLoss {
  double loss = 0.0;
  std::vector<double> grad_anchor;
  std::vector<double> grad_positive;
  std::vector<double> grad_negative;
};

// max(0, ||a-p||^2 - ||a-n||^2 + margin). Gradients are zero when the hinge
// is inactive.
TripletLoss loss_triplet(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                         double margin);
TripletLoss loss_triplet(const Embedding& a, const Embedding& p, const Embedding& n, double margin);

struct TripletIndex {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  friend bool operator==(const TripletIndex&, const TripletIndex&) = default;
};

// Every ordered same-class (anchor, positive) pair, each with one negative:
// the closest negative that is still farther from the anchor than the
// positive; if there is none, the closest negative overall. Distance ties go
// to the lower index. Pairs without any negative in the batch are skipped.
std::vector<TripletIndex> select_triplets(std::span<const Embedding> embeddings, std::span<const int> labels);

using ScalarFn = std::function<double(std::span<const double>)>;

inline constexpr double kGradCheckStep = 1e-3;

// Central differences of `f` at `x`.
std::vector<double> numeric_gradient(const ScalarFn& f, std::span<const double> x, double step = kGradCheckStep);

// max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|).
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

// Compares `analytic` with central differences of `f` at `x`.
double grad_check(const ScalarFn& f, std::span<const double> x, std::span<const double> analytic,
                  double step = kGradCheckStep);

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t draws = 0;
  bool passed() const noexcept { return max_error < tolerance; }
};

// Checks every loss and every layer backward pass over `draws` seeded random
// points each and reports the worst relative error per check.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, std::size_t draws = 20);

enum class ToyTask { Detector, Embedder };

struct TrainerConfig {
  double learning_rate = 0.02;
  std::size_t batch_size = 16;
  double margin = 0.2;
  std::size_t epochs = 5;
  std::uint64_t rng_seed = 42;
  LossWeights loss_weights;
  std::size_t train_scenes = 600;  // scenes per detector stage; chips in total for the embedder
  std::size_t heldout_scenes = 100;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean training loss over the epoch
  double accuracy = 0.0;  // held-out patch accuracy or triplet satisfaction rate
};

struct StageHistory {
  std::string name;  // "pnet", "rnet", "onet" or "embed"
  std::vector<EpochMetrics> epochs;
  std::vector<double> loss_ema;  // per step, smoothing factor 0.05
};

struct TrainResult {
  WeightStore weights;
  std::vector<StageHistory> stages;
};

// Detector: trains P-Net, R-Net and O-Net (toy widths) on crops of synthetic
// scenes with the multitask loss. Embedder: trains the toy embedder with the
// triplet loss on child/adult chips. Single-threaded and reproducible for a
// fixed seed. Throws TrainingDivergedError on a non-finite loss.
TrainResult train_toy(ToyTask task, const TrainerConfig& config);

// Share of held-out triplets (every ordered same-class pair against every
// other-class sample) with ||a-p||^2 < ||a-n||^2.
double triplet_satisfaction(std::span<const Embedding> embeddings, std::span<const int> labels);

// "epoch,loss,accuracy" header and one line per epoch.
void write_metrics_csv(std::ostream& out, const StageHistory& history);

}  // namespace edgeguard
