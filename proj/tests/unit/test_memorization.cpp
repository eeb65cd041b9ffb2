#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "curvlink/errors.hpp"
#include "curvlink/fit.hpp"
#include "curvlink/memorization.hpp"
#include "curvlink/privacy.hpp"

using namespace curvlink;

namespace {

Dataset toy_dataset() {
  // Two classes on a line plus one sample of class 1 sitting among class 0.
  const double xs[] = {-2.0, -1.5, -1.0, 1.0, 1.5, -1.2};
  const int ys[] = {0, 0, 0, 1, 1, 1};
  Dataset S;
  S.n_classes = 2;
  for (int i = 0; i < 6; ++i) {
    Example z;
    z.x = Vector::Constant(1, xs[i]);
    z.y = ys[i];
    z.sample_id = 10 + i;
    S.examples.push_back(z);
  }
  return S;
}

// 1-nearest-neighbour learner on each training subset: a sample is always
// classified correctly when included, so atypical samples are memorized.
std::vector<std::vector<std::uint8_t>> nn_correctness(const Dataset& S, const MaskSet& masks) {
  std::vector<std::vector<std::uint8_t>> out;
  for (int k = 0; k < masks.K(); ++k) {
    std::vector<std::uint8_t> row(S.size());
    for (std::size_t i = 0; i < S.size(); ++i) {
      double best = 1e300;
      int pred = 0;
      for (std::size_t j = 0; j < S.size(); ++j) {
        if (!masks.included(k, j)) continue;
        const double d = std::abs(S.examples[j].x(0) - S.examples[i].x(0));
        if (d < best) {
          best = d;
          pred = S.examples[j].y;
        }
      }
      row[i] = pred == S.examples[i].y;
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace

TEST_CASE("always-correct samples have zero memorization, inclusion-only samples one") {
  const Dataset S = toy_dataset();
  MaskSet masks;
  masks.masks = {{1, 1, 0, 1, 0, 1}, {0, 1, 1, 0, 1, 1}, {1, 0, 1, 1, 1, 0}, {0, 0, 1, 1, 0, 0}};
  std::vector<std::vector<std::uint8_t>> correct(4, std::vector<std::uint8_t>(6, 1));
  for (int k = 0; k < 4; ++k) correct[static_cast<std::size_t>(k)][0] = masks.masks[static_cast<std::size_t>(k)][0];
  const ScoreTable t = estimate_mem(correct, masks, S);
  CHECK(*t.row(10).mem == 1.0);
  CHECK(*t.row(11).mem == 0.0);
  CHECK(t.row(11).mem_stderr == 0.0);
  CHECK(t.valid_count() == 6);

  masks.masks[0][3] = 1;
  masks.masks[1][3] = 1;
  const ScoreTable t2 = estimate_mem(correct, masks, S);
  CHECK_FALSE(t2.row(13).mem);
  CHECK(t2.row(13).flags == "all_in");
  CHECK_THROWS_AS(t2.row(99), NotFoundError);
}

TEST_CASE("estimator equals a brute-force recount and is stable across ensembles") {
  const Dataset S = toy_dataset();
  const int K = 500;
  const MaskSet m1 = subsample_masks(S.size(), 0.5, K, 1);
  const MaskSet m2 = subsample_masks(S.size(), 0.5, K, 2);
  const auto c1 = nn_correctness(S, m1);
  const auto c2 = nn_correctness(S, m2);
  const ScoreTable t1 = estimate_mem(c1, m1, S);
  const ScoreTable t2 = estimate_mem(c2, m2, S);
  for (std::size_t i = 0; i < S.size(); ++i) {
    double in_hits = 0, in_n = 0, out_hits = 0, out_n = 0;
    for (int k = 0; k < K; ++k) {
      const bool in = m1.masks[static_cast<std::size_t>(k)][i] != 0;
      (in ? in_hits : out_hits) += c1[static_cast<std::size_t>(k)][i];
      (in ? in_n : out_n) += 1;
    }
    REQUIRE(t1.rows[i].mem);
    CHECK(std::abs(*t1.rows[i].mem - (in_hits / in_n - out_hits / out_n)) <= 1e-12);
    CHECK(t1.rows[i].in_count == static_cast<int>(in_n));
    const double pooled = std::hypot(t1.rows[i].mem_stderr, t2.rows[i].mem_stderr);
    CHECK(std::abs(*t1.rows[i].mem - *t2.rows[i].mem) <= 3.0 * pooled + 1e-12);
  }
  // The planted atypical sample is the most memorized.
  CHECK(topk_memorized(t1, 1).at(0) == 15);
}

TEST_CASE("top-k ordering and ties") {
  ScoreTable t;
  const double mems[] = {0.2, 0.9, 0.5, 0.9, -0.1};
  for (int i = 0; i < 5; ++i) {
    ScoreRow r;
    r.sample_id = 100 - i;
    r.mem = mems[i];
    t.rows.push_back(r);
  }
  ScoreRow invalid;
  invalid.sample_id = 1;
  t.rows.push_back(invalid);
  const auto all = topk_memorized(t, 5);
  CHECK(all == std::vector<std::int64_t>{97, 99, 98, 100, 96});
  CHECK(topk_memorized(t, 2) == std::vector<std::int64_t>{97, 99});
  CHECK_THROWS_AS(topk_memorized(t, 6), ConfigError);
}

TEST_CASE("binning edges and recount") {
  ScoreTable t;
  const double mems[] = {0.0, 0.019, 0.02, -0.5, 1.0, 0.999, 0.37, 0.371};
  for (int i = 0; i < 8; ++i) {
    ScoreRow r;
    r.sample_id = i;
    r.mem = mems[i];
    r.curv_mean = 10.0 + i;
    t.rows.push_back(r);
  }
  const auto bins = bin_scores(t, 50);
  REQUIRE(bins.size() == 50);
  CHECK(bins[0].mem_lo == 0.0);
  CHECK(bins[0].mem_hi == 0.02);
  CHECK(bins[0].count == 2);
  CHECK(bins[1].count == 1);
  CHECK(bins[25].count == 1);
  CHECK(bins[49].count == 2);

  std::map<int, std::vector<std::pair<double, double>>> groups;
  for (const auto& r : t.rows) {
    const double a = std::abs(*r.mem);
    int b = 0;
    while (b < 49 && a >= (b + 1) / 50.0) ++b;
    groups[b].push_back({a, *r.curv_mean});
  }
  for (const auto& b : bins) {
    if (!groups.count(b.bin_index)) {
      CHECK(b.count == 0);
      CHECK_FALSE(b.mean_mem);
      continue;
    }
    const auto& g = groups[b.bin_index];
    double s = 0, mx = -1;
    for (auto [a, c] : g) {
      s += a;
      mx = std::max(mx, c);
    }
    CHECK(b.count == static_cast<int>(g.size()));
    CHECK(*b.mean_mem == doctest::Approx(s / g.size()).epsilon(1e-15));
    CHECK(*b.max_curv == mx);
  }

  ScoreTable zeros;
  for (int i = 0; i < 5; ++i) {
    ScoreRow r;
    r.sample_id = i;
    r.mem = 0.0;
    zeros.rows.push_back(r);
  }
  int nonempty = 0;
  for (const auto& b : bin_scores(zeros, 50)) nonempty += b.count > 0;
  CHECK(nonempty == 1);
  CHECK(bin_scores(zeros, 50)[0].count == 5);
}

TEST_CASE("privacy experiment: pairing, shared core and bookkeeping") {
  GenSpec g;
  g.n_classes = 2;
  g.dim = 2;
  g.head_per_class = 20;
  g.tail_subpops = {{0, 2, 5.0, 1}};
  g.class_separation = 4.0;
  g.seed = 2;
  const Dataset S = generate(g);
  ModelSpec spec;
  spec.layer_dims = {2, 4, 2};
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr = 0.1;
  c.lr_drop_epochs = {};
  DpConfig dp;
  dp.noise_multiplier = 1.0;
  c.dp = dp;
  const std::vector<std::int64_t> topk{40, 41, 3, 25};
  const std::vector<double> grid{0.5, 4.0};
  const MemPrivacyResult r = privacy_mem_experiment(spec, S, topk, grid, 4, c, 7, 2, true);
  REQUIRE(r.curve.size() == 2);
  REQUIRE(r.masks.K() == 4);
  std::set<std::size_t> top;
  for (auto id : topk) top.insert(S.index_of(id));
  for (std::size_t i = 0; i < S.size(); ++i) {
    if (top.count(i)) {
      CHECK(r.masks.included(0, i) != r.masks.included(2, i));
      CHECK(r.masks.included(1, i) != r.masks.included(3, i));
    } else {
      for (int k = 0; k < 4; ++k) CHECK(r.masks.included(k, i));
    }
  }
  for (std::size_t e = 0; e < grid.size(); ++e) {
    CHECK(r.curve[e].bound == doctest::Approx(mem_upper_bound(grid[e])));
    CHECK(r.curve[e].status == "ok");
    CHECK(r.curve[e].models == 4);
    CHECK(r.curve[e].sigma == 1.0);
    for (const auto& b : r.ensembles[e].budgets) CHECK(b->epsilon <= grid[e]);
  }
  CHECK_THROWS_AS(privacy_mem_experiment(spec, S, topk, grid, 3, c, 7, 1, true), ConfigError);
}
