#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "curvlink/errors.hpp"
#include "curvlink/theory.hpp"
#include "curvlink/trainer.hpp"

using namespace curvlink;

namespace {

TheoryConstants zero_constants(int m = 10) {
  TheoryConstants k;
  k.L.value = 1.0;
  k.m = m;
  return k;
}

GenSpec two_blobs(double sep, int per_class, std::uint64_t seed) {
  GenSpec g;
  g.n_classes = 2;
  g.dim = 3;
  g.head_per_class = per_class;
  g.class_separation = sep;
  g.cluster_std = 1.0;
  g.seed = seed;
  return g;
}

ModelSpec net() {
  ModelSpec s;
  s.layer_dims = {3, 8, 2};
  return s;
}

TrainConfig quick(int epochs = 15) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.lr = 0.2;
  c.lr_drop_epochs = {};
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("bound formulas") {
  TheoryConstants k = zero_constants();
  CHECK(thm1_rhs(0.37, k) == 0.37);
  CHECK(thm2_rhs(k, 0.0) == 0.0);
  double prev = -1.0;
  for (double e = 0.1; e < 20; e *= 2) {
    CHECK(thm2_rhs(k, e) > prev);
    prev = thm2_rhs(k, e);
  }
  k.rho.value = 5.0;
  CHECK(thm1_c1(k) == 0.0);
  k.e_alpha3.value = 0.3;
  k.beta.value = 0.01;
  k.gamma.value = 0.02;
  k.delta_bias.value = 0.03;
  k.L.value = 2.0;
  const double m = 10;
  CHECK(thm1_c1(k) == doctest::Approx(5.0 / 12.0 * 0.3 + m * 0.01 / 2 + (4 * m - 1) * 0.02 / 2 + 2 * (m - 1) * 0.03 / 2));
  CHECK(thm2_c2(k) == doctest::Approx((4 * m - 1) * 0.02 + 2 * (m - 1) * 0.03 + 5.0 / 6.0 * 0.3));
  CHECK(thm2_rhs(k, 1.0) == doctest::Approx(2.0 * 11.0 * (1 - std::exp(-1.0)) + thm2_c2(k)));
  CHECK(lossdiff_rhs(k) == doctest::Approx(m * 0.01 + (4 * m - 1) * 0.02 + 2 * (m - 1) * 0.03));
  CHECK(lossdiff_rhs(k) >= 0.0);
  k.unit_loss_bound = true;
  CHECK(thm1_rhs(0.5, k) == doctest::Approx(0.5 + 5.0 / 6.0 * 0.3 + m * 0.01 + (4 * m - 1) * 0.02 + 2 * (m - 1) * 0.03));
  k.gamma.value = -1.0;
  CHECK_THROWS_AS(thm2_c2(k), ConfigError);
}

TEST_CASE("report satisfaction uses three combined standard errors") {
  const BoundReport a = make_report("x", 1.3, 1.0, 0.1, 0.0, "n");
  CHECK(a.satisfied);
  CHECK(a.slack == doctest::Approx(-0.3));
  CHECK(make_report("x", 1.29, 1.0, 0.06, 0.08, "n").satisfied);
  CHECK_FALSE(make_report("x", 1.31, 1.0, 0.06, 0.08, "n").satisfied);
  CHECK_FALSE(make_report("x", 1.5, 1.0, 0.06, 0.08, "n").satisfied);
}

TEST_CASE("beta and gamma on degenerate ensembles") {
  const Dataset S = generate(two_blobs(4.0, 30, 1));
  const Dataset H = draw_from_mixture(two_blobs(4.0, 30, 1), 100, 9, 1000);
  const EnsembleRecord e = train_ensemble(net(), S, all_true_masks(S.size(), 3), quick(), 1);
  const Estimate b = estimate_beta(e.models, e.models, H, 5);
  CHECK(b.value == 0.0);
  const Estimate g = estimate_gamma(e.models, e.masks, S, S);
  CHECK(g.value == 0.0);
}

TEST_CASE("stratified probes cover every rank stratum") {
  ScoreTable t;
  for (int i = 0; i < 20; ++i) {
    ScoreRow r;
    r.sample_id = i;
    if (i != 7) r.mem = (i * 7 % 20) / 20.0;
    t.rows.push_back(r);
  }
  const auto probes = stratified_probes(t, 4, 3);
  REQUIRE(probes.size() == 4);
  std::vector<int> strata;
  for (auto i : probes) {
    REQUIRE(t.rows[i].mem);
    int rank = 0;
    for (const auto& r : t.rows)
      if (r.mem && *r.mem < *t.rows[i].mem) ++rank;
    int stratum = 0;
    while (rank >= 19 * (stratum + 1) / 4) ++stratum;
    strata.push_back(stratum);
  }
  std::sort(strata.begin(), strata.end());
  CHECK(strata == std::vector<int>{0, 1, 2, 3});
  CHECK(stratified_probes(t, 4, 3) == probes);
  CHECK_THROWS_AS(stratified_probes(t, 20, 3), ConfigError);
}

TEST_CASE("model bias: separable data and a constant predictor") {
  GenSpec g = two_blobs(12.0, 50, 5);
  g.cluster_std = 0.5;
  const Dataset S = generate(g);
  const Dataset H = draw_from_mixture(g, 400, 6, 1000);
  const EnsembleRecord e = train_ensemble(net(), S, all_true_masks(S.size(), 2), quick(), 1);
  CHECK(estimate_delta(e.models, H, 0.0).value <= 0.02);

  Model constant = mlp_init(net(), 1);
  for (auto& l : constant.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const Estimate d = estimate_delta({constant}, H, 0.0);
  const double p1 = [&] {
    double c = 0;
    for (const auto& z : H.examples) c += z.y == 1;
    return c / static_cast<double>(H.size());
  }();
  CHECK(d.value == doctest::Approx(p1));
  CHECK(std::abs(d.value - 0.5) <= 3.0 * std::sqrt(0.25 / static_cast<double>(H.size())));
  CHECK_THROWS_AS(estimate_delta({constant}, H, std::nullopt), ConfigError);
}

TEST_CASE("rho: running max and sharper networks") {
  const Dataset S = generate(two_blobs(2.0, 30, 7));
  Model m = mlp_init(net(), 8);
  const Estimate few = estimate_rho({m}, S, 5, 9);
  const Estimate many = estimate_rho({m}, S, 20, 9);
  CHECK(many.value >= few.value);
  for (auto& l : m.layers) l.weight *= 2.0;
  CHECK(estimate_rho({m}, S, 20, 9).value > many.value);
}

TEST_CASE("loss bound and nearest neighbour") {
  const Dataset S = generate(two_blobs(4.0, 10, 10));
  const EnsembleRecord e = train_ensemble(net(), S, all_true_masks(S.size(), 2), quick(3), 1);
  const Estimate L = estimate_loss_bound(e.models, e.masks, S);
  double mx = 0.0;
  for (const auto& h : e.models)
    for (const auto& z : S.examples) mx = std::max(mx, loss_eval(h, z));
  CHECK(L.value == mx);

  const std::size_t j = nearest_same_label(S, 0);
  CHECK(j != 0);
  CHECK(S.examples[j].y == S.examples[0].y);
  for (std::size_t t = 1; t < S.size(); ++t)
    if (S.examples[t].y == S.examples[0].y)
      CHECK((S.examples[t].x - S.examples[0].x).norm() >= (S.examples[j].x - S.examples[0].x).norm());
}

TEST_CASE("loss-difference check on identical ensembles") {
  const Dataset S = generate(two_blobs(4.0, 20, 11));
  const EnsembleRecord e = train_ensemble(net(), S, all_true_masks(S.size(), 2), quick(3), 1);
  std::vector<Model> models = {e.models[0], e.models[0], e.models[0], e.models[0]};
  MaskSet masks = all_true_masks(S.size(), 4);
  masks.masks[2][0] = 0;
  masks.masks[3][0] = 0;
  TheoryConstants k = zero_constants(static_cast<int>(S.size()));
  const std::vector<std::size_t> probes{0};
  const BoundReport r = appendix_lossdiff_check(models, masks, S, probes, k);
  const std::size_t j = nearest_same_label(S, 0);
  CHECK(r.lhs == doctest::Approx(std::abs(loss_eval(models[0], S.examples[0]) - loss_eval(models[0], S.examples[j]))));
  CHECK(r.rhs >= 0.0);

  const std::vector<std::size_t> never{1};
  CHECK_THROWS_AS(appendix_lossdiff_check(models, all_true_masks(S.size(), 4), S, never, k), InsufficientModelsError);
}
