#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "edgeguard/errors.hpp"
#include "edgeguard/training.hpp"
#include "edgeguard/weights_io.hpp"
#include "oracles.hpp"

using namespace edgeguard;

namespace {

// Three points on a plane: d(a,p)^2 and d(a,n)^2 chosen by hand.
struct Trio {
  std::vector<double> a, p, n;
};

Trio trio(double dap2, double dan2) {
  Trio t{std::vector<double>(3, 0.0), std::vector<double>(3, 0.0), std::vector<double>(3, 0.0)};
  t.p[0] = std::sqrt(dap2);
  t.n[1] = std::sqrt(dan2);
  return t;
}

}  // namespace

TEST_CASE("detection loss values") {
  CHECK(loss_det(1.0, 1).loss == doctest::Approx(1e-7).epsilon(1e-3));
  CHECK(loss_det(0.5, 1).loss == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(loss_det(0.5, 0).loss == doctest::Approx(std::log(2.0)));
  CHECK(loss_det(0.0, 0).loss < 1e-6);
  CHECK(std::isfinite(loss_det(0.0, 1).loss));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double p = u(rng);
    CHECK(loss_det(p, 1).loss >= 0.0);
    CHECK(loss_det(p, 0).loss >= 0.0);
  }
}

TEST_CASE("regression loss values") {
  const std::vector<double> t{0.1, -0.2, 0.3, 0.0};
  CHECK(loss_box(t, t).loss == 0.0);
  const std::vector<double> p{0.2, -0.2, 0.3, 0.0};
  const VectorLoss l = loss_box(p, t);
  CHECK(l.loss == doctest::Approx(0.01));
  CHECK(l.grad[0] == doctest::Approx(0.2));
  CHECK(l.grad[1] == 0.0);

  std::vector<double> lp(10, 0.0), lt(10, 0.0);
  CHECK(loss_landmark(lp, lt).loss == 0.0);
  lp[7] = 1.0;
  CHECK(loss_landmark(lp, lt).loss == 1.0);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 50; ++i) {
    for (std::size_t k = 0; k < 10; ++k) lp[k] = u(rng), lt[k] = u(rng);
    double want = 0.0;
    for (std::size_t k = 0; k < 10; ++k) want += (lp[k] - lt[k]) * (lp[k] - lt[k]);
    CHECK(loss_landmark(lp, lt).loss == doctest::Approx(want).epsilon(1e-12));
  }
  CHECK_THROWS_AS(loss_box(std::vector<double>(3), std::vector<double>(3)), ConfigError);
}

TEST_CASE("multitask loss combines the masked terms") {
  DetOutputs out;
  out.p = 0.5;
  out.box = {0.1, 0, 0, 0};
  out.landmarks[0] = 1.0;

  DetSample det_only;
  det_only.y_det = 1;
  CHECK(det_only.consistent());
  CHECK(loss_multitask(out, det_only).loss == doctest::Approx(std::log(2.0)));

  DetSample all = det_only;
  all.mask = {true, true, true};
  all.box_target = std::array<double, 4>{};
  all.landmark_target = std::array<double, 10>{};
  CHECK(all.consistent());
  const MultitaskLoss m = loss_multitask(out, all);
  CHECK(m.loss == doctest::Approx(std::log(2.0) + 0.5 * 0.01 + 0.5 * 1.0));
  CHECK(m.box == doctest::Approx(0.01));
  CHECK(m.landmark == doctest::Approx(1.0));
  CHECK(m.grad.box[0] == doctest::Approx(0.5 * 0.2));

  CHECK(loss_multitask(out, all, LossWeights{0, 0, 0}).loss == 0.0);

  DetSample broken = det_only;
  broken.mask.box = true;
  CHECK_FALSE(broken.consistent());
  CHECK_THROWS_AS(loss_multitask(out, broken), ConfigError);
}

TEST_CASE("triplet loss values") {
  Trio easy = trio(0.1, 0.5);
  CHECK(loss_triplet(easy.a, easy.p, easy.n, 0.2).loss == 0.0);
  Trio hard = trio(0.5, 0.1);
  CHECK(loss_triplet(hard.a, hard.p, hard.n, 0.2).loss == doctest::Approx(0.6));
  const std::vector<double> same{1, 0, 0};
  CHECK(loss_triplet(same, same, same, 0.2).loss == doctest::Approx(0.2));

  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Embedding a = oracle::random_embedding(rng), p = oracle::random_embedding(rng),
                    n = oracle::random_embedding(rng);
    const TripletLoss l = loss_triplet(a, p, n, 0.2);
    CHECK(l.loss >= 0.0);
    if (oracle::sqdist(a, p) + 0.2 <= oracle::sqdist(a, n)) {
      CHECK(l.loss == 0.0);
      for (double g : l.grad_anchor) CHECK(g == 0.0);
      for (double g : l.grad_negative) CHECK(g == 0.0);
    }
  }
}

TEST_CASE("triplet selection examples") {
  std::mt19937_64 rng(4);
  const std::vector<Embedding> e{oracle::random_embedding(rng), oracle::random_embedding(rng),
                                 oracle::random_embedding(rng)};
  const std::vector<int> labels{0, 0, 1};
  const std::vector<TripletIndex> t = select_triplets(e, labels);
  REQUIRE(t.size() == 2);
  CHECK(t[0] == TripletIndex{0, 1, 2});
  CHECK(t[1] == TripletIndex{1, 0, 2});
  CHECK(select_triplets(e, std::vector<int>{1, 1, 1}).empty());
}

TEST_CASE("triplet selection agrees with exhaustive search") {
  std::mt19937_64 rng(5);
  std::vector<Embedding> e;
  std::vector<int> labels;
  for (int batch = 0; batch < 100; ++batch) {
    oracle::random_batch(rng, e, labels);
    const std::vector<TripletIndex> got = select_triplets(e, labels);
    CHECK(got == oracle::select_triplets(e, labels));
    std::size_t pairs = 0, classes[2] = {0, 0};
    for (int l : labels) ++classes[l];
    for (std::size_t c = 0; c < 2; ++c)
      if (classes[1 - c] > 0) pairs += classes[c] * (classes[c] - (classes[c] > 0 ? 1 : 0));
    CHECK(got.size() == pairs);
  }
}

TEST_CASE("gradient checks on the losses") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> t(4), x(4);
  for (int i = 0; i < 10; ++i) {
    for (std::size_t k = 0; k < 4; ++k) t[k] = u(rng), x[k] = u(rng);
    const ScalarFn f = [&](std::span<const double> v) { return loss_box(v, t).loss; };
    CHECK(grad_check(f, x, loss_box(x, t).grad) < 1e-6);
  }
  const std::vector<double> half{0.5};
  const ScalarFn det = [](std::span<const double> v) { return loss_det(v[0], 1).loss; };
  CHECK(grad_check(det, half, std::vector<double>{loss_det(0.5, 1).grad}) < 1e-4);

  CHECK(max_relative_error(std::vector<double>{0.0}, std::vector<double>{0.0}) == 0.0);
  CHECK(max_relative_error(std::vector<double>{1.0}, std::vector<double>{3.0}) == doctest::Approx(0.5));
}

TEST_CASE("gradient suite passes on a couple of seeds") {
  for (std::uint64_t seed : {1u, 2u}) {
    const std::vector<GradCheckResult> results = run_gradient_suite(seed, 5);
    CHECK(results.size() >= 15);
    for (const GradCheckResult& r : results) {
      INFO(r.name << " error " << r.max_error);
      CHECK(r.draws == 5);
      CHECK(r.passed());
    }
  }
}

TEST_CASE("trainer config validation") {
  TrainerConfig c;
  CHECK_NOTHROW(c.validate());
  c.margin = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("toy training is reproducible and its loss trends down") {
  TrainerConfig c;
  c.epochs = 2;
  c.train_scenes = 96;
  c.heldout_scenes = 20;
  const TrainResult a = train_toy(ToyTask::Embedder, c);
  const TrainResult b = train_toy(ToyTask::Embedder, c);
  CHECK(encode_weights(a.weights) == encode_weights(b.weights));
  REQUIRE(a.stages.size() == 1);
  const StageHistory& h = a.stages[0];
  CHECK(h.name == "embed");
  CHECK(h.epochs.size() == 2);
  CHECK(h.loss_ema.back() < h.loss_ema.front());

  c.rng_seed = 43;
  CHECK(encode_weights(train_toy(ToyTask::Embedder, c).weights) != encode_weights(a.weights));

  std::ostringstream csv;
  write_metrics_csv(csv, h);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "epoch,loss,accuracy");
  std::size_t n = 0;
  while (std::getline(lines, line)) ++n;
  CHECK(n == 2);
}

TEST_CASE("detector toy training runs all three stages") {
  TrainerConfig c;
  c.epochs = 1;
  c.train_scenes = 40;
  c.heldout_scenes = 10;
  const TrainResult r = train_toy(ToyTask::Detector, c);
  REQUIRE(r.stages.size() == 3);
  CHECK(r.stages[0].name == "pnet");
  CHECK(r.stages[1].name == "rnet");
  CHECK(r.stages[2].name == "onet");
  CHECK(r.weights.contains("pnet.conv1.weight"));
  CHECK(r.weights.contains("onet.landmarks.weight"));
  CHECK(encode_weights(train_toy(ToyTask::Detector, c).weights) == encode_weights(r.weights));
}

TEST_CASE("an exploding learning rate is reported as divergence") {
  TrainerConfig c;
  c.epochs = 3;
  c.train_scenes = 64;
  c.heldout_scenes = 10;
  c.learning_rate = 1e30;
  CHECK_THROWS_AS(train_toy(ToyTask::Detector, c), TrainingDivergedError);
}

TEST_CASE("triplet satisfaction counts") {
  const std::vector<float> x(kEmbeddingDim, 0.0f);
  std::vector<float> v0 = x, v1 = x, v2 = x;
  v0[0] = 1.0f;
  v1[0] = 0.8f, v1[1] = 0.6f;
  v2[1] = 1.0f;
  const std::vector<Embedding> e{Embedding::from_unit(v0), Embedding::from_unit(v1), Embedding::from_unit(v2)};
  // pairs (0,1) vs 2: d01 = 0.4 < d02 = 2 ok; (1,0) vs 2: d10 = 0.4 > d12 = 0.8? no, 0.4 < 0.8 ok
  CHECK(triplet_satisfaction(e, std::vector<int>{0, 0, 1}) == 1.0);
  // pairs (0,2) vs 1: 2 < 0.4 fails; (2,0) vs 1: 2 < 0.8 fails
  CHECK(triplet_satisfaction(e, std::vector<int>{0, 1, 0}) == 0.0);
}
