#include <doctest.h>

#include <cmath>

#include "curvlink/data.hpp"
#include "curvlink/errors.hpp"
#include "curvlink/privacy.hpp"
#include "curvlink/trainer.hpp"

using namespace curvlink;

namespace {

GenSpec blobs() {
  GenSpec g;
  g.n_classes = 2;
  g.dim = 3;
  g.head_per_class = 60;
  g.class_separation = 6.0;
  g.cluster_std = 0.5;
  g.seed = 4;
  return g;
}

ModelSpec small_model() {
  ModelSpec s;
  s.layer_dims = {3, 8, 2};
  return s;
}

TrainConfig quick() {
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 16;
  c.lr = 0.2;
  c.lr_drop_epochs = {};
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("separable blobs are learned") {
  const Dataset S = generate(blobs());
  const TrainResult r = train(small_model(), S, quick());
  REQUIRE(r.history.size() == 20);
  CHECK(r.history.back().train_accuracy >= 0.99);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
  CHECK(r.stop_reason == "epochs");
}

TEST_CASE("zero learning rate leaves the initial weights") {
  const Dataset S = generate(blobs());
  TrainConfig c = quick();
  c.lr = 0.0;
  const TrainResult r = train(small_model(), S, c);
  CHECK(flatten(r.model.layers) == flatten(mlp_init(small_model(), c.seed).layers));
}

TEST_CASE("training is deterministic") {
  const Dataset S = generate(blobs());
  const TrainResult a = train(small_model(), S, quick());
  const TrainResult b = train(small_model(), S, quick());
  CHECK(flatten(a.model.layers) == flatten(b.model.layers));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) CHECK(a.history[e].train_loss == b.history[e].train_loss);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.lr = 0.5;
  c.lr_drop_epochs = {3, 5};
  c.lr_drop_factor = 0.1;
  CHECK(c.lr_at(0) == 0.5);
  CHECK(c.lr_at(3) == doctest::Approx(0.05));
  CHECK(c.lr_at(5) == doctest::Approx(0.005));
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("huge noise spends almost no budget and learns nothing") {
  GenSpec g = blobs();
  g.n_classes = 3;
  g.head_per_class = 40;
  const Dataset S = generate(g);
  ModelSpec spec = small_model();
  spec.layer_dims = {3, 8, 3};
  double mean_acc = 0.0;
  const int seeds = 16;
  for (int s = 0; s < seeds; ++s) {
    TrainConfig c = quick();
    c.epochs = 5;
    c.seed = static_cast<std::uint64_t>(100 + s);
    DpConfig dp;
    dp.noise_multiplier = 1000.0;
    c.dp = dp;
    const TrainResult r = dp_train(spec, S, c);
    REQUIRE(r.budget);
    CHECK(r.budget->epsilon <= 0.01);
    for (const auto& h : r.history) CHECK(h.max_clipped_norm <= dp.clip_norm * (1 + 1e-12));
    const auto row = correctness_row(r.model, S);
    double acc = 0.0;
    for (auto v : row) acc += v;
    mean_acc += acc / static_cast<double>(S.size()) / seeds;
  }
  // Chance is 1/3; a noise-dominated model is a random classifier.
  CHECK(mean_acc <= 0.6);
}

TEST_CASE("full-batch private training reports the accountant's epsilon") {
  const Dataset S = generate(blobs());
  TrainConfig c = quick();
  c.epochs = 100;
  c.batch_size = static_cast<int>(S.size());
  DpConfig dp;
  dp.noise_multiplier = 4.0;
  c.dp = dp;
  const TrainResult r = dp_train(small_model(), S, c);
  REQUIRE(r.budget);
  CHECK(r.steps == 100);
  CHECK(r.budget->q == 1.0);
  const PrivacyBudget ref = account(1.0, 4.0, 100, 1e-5, default_orders());
  CHECK(r.budget->epsilon == doctest::Approx(ref.epsilon).epsilon(1e-12));
}

TEST_CASE("fixed noise with a target stops before exceeding the target") {
  const Dataset S = generate(blobs());
  TrainConfig c = quick();
  c.epochs = 200;
  DpConfig dp;
  dp.noise_multiplier = 1.0;
  dp.target_epsilon = 2.0;
  c.dp = dp;
  const TrainResult r = dp_train(small_model(), S, c);
  REQUIRE(r.budget);
  CHECK(r.stop_reason == "budget");
  CHECK(r.budget->epsilon <= 2.0);
  const double q = static_cast<double>(c.batch_size) / static_cast<double>(S.size());
  CHECK(account(q, 1.0, r.steps + 1, 1e-5, default_orders()).epsilon > 2.0);
}

TEST_CASE("a calibrated target spends at most the target") {
  const Dataset S = generate(blobs());
  TrainConfig c = quick();
  c.epochs = 4;
  DpConfig dp;
  dp.target_epsilon = 3.0;
  c.dp = dp;
  const TrainResult r = dp_train(small_model(), S, c);
  REQUIRE(r.budget);
  CHECK(r.budget->epsilon <= 3.0);
  CHECK(r.budget->epsilon >= 0.99 * 3.0);
}

TEST_CASE("dp config validation") {
  DpConfig dp;
  CHECK_THROWS_AS(dp.validate(), ConfigError);
  dp.noise_multiplier = 1.0;
  dp.clip_norm = 0.0;
  CHECK_THROWS_AS(dp.validate(), ConfigError);
  TrainConfig c = quick();
  c.dp = DpConfig{};
  c.dp->noise_multiplier = 1.0;
  CHECK_THROWS_AS(train(small_model(), generate(blobs()), c), ConfigError);
}

TEST_CASE("parallel ensemble equals the serial reference") {
  const Dataset S = generate(blobs());
  const MaskSet masks = subsample_masks(S.size(), 0.7, 6, 3);
  const EnsembleRecord a = train_ensemble_serial(small_model(), S, masks, quick());
  for (int workers : {1, 3, 8}) {
    const EnsembleRecord b = train_ensemble(small_model(), S, masks, quick(), workers);
    REQUIRE(b.K() == a.K());
    for (int k = 0; k < a.K(); ++k)
      CHECK(flatten(a.models[static_cast<std::size_t>(k)].layers) ==
            flatten(b.models[static_cast<std::size_t>(k)].layers));
    CHECK(a.correct == b.correct);
  }
}

TEST_CASE("distinct member seeds give distinct models") {
  const Dataset S = generate(blobs());
  const EnsembleRecord e = train_ensemble(small_model(), S, all_true_masks(S.size(), 3), quick(), 2);
  CHECK(flatten(e.models[0].layers) != flatten(e.models[1].layers));
  CHECK(flatten(e.models[1].layers) != flatten(e.models[2].layers));
  for (int k = 0; k < 3; ++k) CHECK(e.correct[static_cast<std::size_t>(k)] == correctness_row(e.models[static_cast<std::size_t>(k)], S));
}

TEST_CASE("duplicate pairs are classified alike across the ensemble") {
  GenSpec g = blobs();
  g.class_separation = 2.0;
  g.cluster_std = 1.0;
  g.duplicate_pairs = 4;
  const Dataset S = generate(g);
  TrainConfig c = quick();
  c.epochs = 6;
  const int K = 200;
  const EnsembleRecord e = train_ensemble(small_model(), S, subsample_masks(S.size(), 0.7, K, 5), c, 4);
  for (const auto& [i, j] : S.duplicate_pairs) {
    const std::size_t a = S.index_of(i), b = S.index_of(j);
    double ca = 0.0, cb = 0.0;
    for (int k = 0; k < K; ++k) {
      ca += e.correct[static_cast<std::size_t>(k)][a];
      cb += e.correct[static_cast<std::size_t>(k)][b];
    }
    CHECK(std::abs(ca - cb) / K <= 0.05);
  }
}
