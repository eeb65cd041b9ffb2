// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Usage: curvlink_acceptance [--out DIR] [--only N,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "curvlink/config.hpp"
#include "curvlink/curvature.hpp"
#include "curvlink/data.hpp"
#include "curvlink/digest.hpp"
#include "curvlink/nn.hpp"
#include "curvlink/pipeline.hpp"
#include "curvlink/privacy.hpp"
#include "curvlink/stats.hpp"

using namespace curvlink;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void require(bool ok, const std::string& what) {
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    pass = pass && ok;
  }
  void info(const std::string& what) { details.push_back("info " + what); }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

Vector random_vector(int d, CounterRng& rng, double scale = 1.0) {
  Vector v(d);
  for (int k = 0; k < d; ++k) v(k) = scale * rng.normal();
  return v;
}

ModelSpec mlp(std::vector<int> dims, LossKind loss = LossKind::kCrossEntropy, Activation act = Activation::kTanh) {
  ModelSpec s;
  s.layer_dims = std::move(dims);
  s.loss = loss;
  s.activation = act;
  return s;
}

double& param_ref(Model& m, std::size_t t) {
  for (auto& layer : m.layers) {
    const auto nw = static_cast<std::size_t>(layer.weight.size());
    if (t < nw) {
      const auto cols = static_cast<std::size_t>(layer.weight.cols());
      return layer.weight(static_cast<Eigen::Index>(t / cols), static_cast<Eigen::Index>(t % cols));
    }
    t -= nw;
    if (t < static_cast<std::size_t>(layer.bias.size())) return layer.bias(static_cast<Eigen::Index>(t));
    t -= static_cast<std::size_t>(layer.bias.size());
  }
  throw std::out_of_range("parameter index");
}

CurvParams curv(int n, std::uint64_t seed) {
  CurvParams p;
  p.n = n;
  p.h = 1e-3;
  p.seed = seed;
  p.mode = CurvMode::kNormalized;
  return p;
}

// Estimator against the exact-Hessian oracle.
Outcome c1() {
  Outcome o;
  CounterRng rng(101, Purpose::kProbe);
  double worst = 0.0, mean_rel = 0.0, worst_z = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Model m = mlp_init(mlp({8, 16, 3}), 500 + static_cast<std::uint64_t>(t));
    const Example z{random_vector(8, rng), t % 3, t, 0};
    const Matrix H = exact_input_hessian(m, z);
    const Matrix H2 = H * H;
    const double oracle = H2.trace();
    const double est = curvature_score(m, z, curv(1000, 1 + static_cast<std::uint64_t>(t)));
    const double rel = std::abs(est - oracle) / oracle;
    // Variance of v^T H^2 v for a Rademacher v.
    const double sd = std::sqrt(2.0 * (H2.squaredNorm() - H2.diagonal().squaredNorm()) / 1000.0);
    o.info("network " + std::to_string(t) + ": relative error " + fmt(rel) + ", probe-noise sd " +
           fmt(sd / oracle) + " of tr(H^2)");
    worst = std::max(worst, rel);
    worst_z = std::max(worst_z, std::abs(est - oracle) / sd);
    mean_rel += rel / 10.0;
  }
  o.require(worst <= 0.05, "n=1000 max relative error over 10 networks = " + fmt(worst) + " (<= 0.05)");
  o.info("mean relative error " + fmt(mean_rel) + ", largest deviation " + fmt(worst_z) + " probe-noise sd");

  // 200 samples: 20 mixture draws scored on each of the 10 networks.
  GenSpec g;
  g.n_classes = 3;
  g.dim = 8;
  g.class_separation = 8.0;
  g.seed = 102;
  const Dataset S = draw_from_mixture(g, 200, 103, 0);
  std::vector<double> est, oracle, est0, oracle0;
  for (std::size_t i = 0; i < S.size(); ++i) {
    const Model m = mlp_init(mlp({8, 16, 3}), 500 + i / 20);
    est.push_back(curvature_score(m, S.examples[i], curv(10, 7 + i)));
    oracle.push_back(eigen_curvature(m, S.examples[i]).trace_sq);
    const Model m0 = mlp_init(mlp({8, 16, 3}), 500);
    est0.push_back(curvature_score(m0, S.examples[i], curv(10, 7 + i)));
    oracle0.push_back(eigen_curvature(m0, S.examples[i]).trace_sq);
  }
  const double rho = correlation(est, oracle).spearman;
  o.require(rho >= 0.95, "n=10 Spearman over 200 samples = " + fmt(rho) + " (>= 0.95)");
  o.info("n=10 Spearman with all 200 samples on a single network = " + fmt(correlation(est0, oracle0).spearman));
  return o;
}

// Accountant.
Outcome c2() {
  Outcome o;
  std::vector<double> orders;
  for (int a = 2; a <= 256; ++a) orders.push_back(a);
  for (double a : default_orders())
    if (a == std::floor(a) && a > 256) orders.push_back(a);
  double worst = 0.0;
  for (double sigma : {0.5, 1.0, 2.0, 8.0, 100.0}) {
    for (const auto& p : rdp_subsampled_gaussian(1.0, sigma, 1, orders))
      worst = std::max(worst, std::abs(p.value - p.order / (2.0 * sigma * sigma)));
  }
  o.require(worst <= 1e-9, "q=1 RDP max abs error over integer orders = " + fmt(worst) + " (<= 1e-9)");

  const RunConfig desk = RunConfig::desk();
  const double q = static_cast<double>(desk.dp_train.batch_size) / desk.data.total();
  const std::int64_t steps =
      static_cast<std::int64_t>(desk.dp_train.epochs) * ((desk.data.total() + desk.dp_train.batch_size - 1) /
                                                         desk.dp_train.batch_size);
  for (double target : {1.0, 10.0, 50.0}) {
    const double sigma = calibrate_noise(target, 1e-5, q, steps);
    const double eps = account(q, sigma, steps, 1e-5, default_orders()).epsilon;
    const double rel = std::abs(eps - target) / target;
    o.require(rel <= 1e-3, "calibrate eps*=" + fmt(target) + ": sigma " + fmt(sigma) + ", relative error " + fmt(rel));
  }
  return o;
}

// Memorization estimator sanity on the default preset.
Outcome c3(const VerifyResult& r) {
  Outcome o;
  const Dataset& S = r.data.train;
  const ScoreTable& t = r.mem.table;
  std::set<std::int64_t> dup_ids;
  double worst_dup = 0.0;
  for (const auto& [a, b] : S.duplicate_pairs) {
    dup_ids.insert(a);
    dup_ids.insert(b);
    for (auto id : {a, b}) {
      const auto& row = t.row(id);
      if (!row.mem) {
        o.require(false, "duplicate " + std::to_string(id) + " has no mem value");
        continue;
      }
      worst_dup = std::max(worst_dup, std::abs(*row.mem));
    }
  }
  o.require(worst_dup <= 0.1, std::to_string(S.duplicate_pairs.size()) + " duplicate pairs: max |mem| = " +
                                  fmt(worst_dup) + " (<= 0.1)");
  double worst_mis = std::numeric_limits<double>::infinity();
  int n_mis = 0;
  for (auto id : S.mislabeled) {
    if (dup_ids.count(id)) continue;
    const auto& row = t.row(id);
    ++n_mis;
    worst_mis = std::min(worst_mis, row.mem ? *row.mem : -1.0);
  }
  o.require(n_mis > 0 && worst_mis >= 0.5,
            std::to_string(n_mis) + " unique mislabels: min mem = " + fmt(worst_mis) + " (>= 0.5)");

  const EnsembleRecord& e = r.ensemble;
  o.require(e.K() == 200, "K = " + std::to_string(e.K()));
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < S.size(); ++i) {
    int in = 0, out = 0, hit_in = 0, hit_out = 0;
    for (int k = 0; k < e.K(); ++k) {
      const int c = e.correct[static_cast<std::size_t>(k)][i];
      if (e.masks.included(k, i)) {
        ++in;
        hit_in += c;
      } else {
        ++out;
        hit_out += c;
      }
    }
    const auto& row = t.rows[i];
    if (in == 0 || out == 0) {
      mismatches += row.mem.has_value();
      continue;
    }
    const double mem = static_cast<double>(hit_in) / in - static_cast<double>(hit_out) / out;
    mismatches += !(row.mem && *row.mem == mem);
  }
  o.require(mismatches == 0, "brute-force recount mismatches = " + std::to_string(mismatches) + " of " +
                                 std::to_string(S.size()));
  return o;
}

// Memorization under privacy.
Outcome c4(const VerifyResult& r) {
  Outcome o;
  for (const auto& p : r.privacy.curve) {
    if (p.status != "ok") {
      o.require(false, "eps " + fmt(p.eps) + ": " + p.status);
      continue;
    }
    o.require(p.mean_mem <= p.bound + 3.0 * p.stderr_, "eps " + fmt(p.eps) + ": mean mem " + fmt(p.mean_mem) +
                                                           " <= " + fmt(p.bound) + " + 3*" + fmt(p.stderr_));
  }
  const double rho = r.sweep.mem_trend.spearman;
  o.require(r.sweep.mem_trend.defined && rho >= 0.9, "Spearman(eps, mean mem) = " + fmt(rho) + " (>= 0.9)");
  return o;
}

// Memorization against curvature over bins.
Outcome c5(const VerifyResult& r) {
  Outcome o;
  int nonempty = 0;
  for (const auto& b : r.bins) nonempty += b.count > 0;
  o.info(std::to_string(nonempty) + " nonempty bins");
  o.require(r.bin_correlation.pearson >= 0.7,
            "Pearson(mean mem, max curv) over bins = " + fmt(r.bin_correlation.pearson) + " (>= 0.7)");
  const double p1 = r.memcurv_fit.scaled.param("p1");
  o.require(p1 > 0.0, "scaled fit slope p1 = " + fmt(p1) + " (> 0)");
  const double s = r.memcurv_fit.scaled.residual_sse, u = r.memcurv_fit.unscaled.residual_sse;
  o.require(s <= u, "scaled SSE " + fmt(s) + " <= unscaled SSE " + fmt(u));
  o.info("unscaled fit slope p1 = " + fmt(r.memcurv_fit.unscaled.param("p1")));
  return o;
}

// Curvature under privacy.
Outcome c6(const VerifyResult& r) {
  Outcome o;
  const double rho = r.sweep.curv_trend.spearman;
  o.require(r.sweep.curv_trend.defined && rho >= 0.9, "Spearman(eps, mean curvature) = " + fmt(rho) + " (>= 0.9)");
  if (r.sweep.curv_fit) {
    o.require(r.sweep.curv_fit->converged && r.sweep.curv_fit->r_squared >= 0.8,
              "curvature-vs-eps fit r^2 = " + fmt(r.sweep.curv_fit->r_squared) + " (>= 0.8)");
  } else {
    o.require(false, "curvature-vs-eps fit missing");
  }
  if (r.sweep.curv_fit_free)
    o.info("free-scale fit r^2 = " + fmt(r.sweep.curv_fit_free->r_squared) +
           ", scale = " + fmt(r.sweep.curv_fit_free->param("scale")));
  for (const auto& p : r.sweep.points) {
    if (p.status != "ok") {
      o.require(false, "eps " + fmt(p.eps) + ": " + p.status);
      continue;
    }
    o.require(p.theorem2.satisfied, "eps " + fmt(p.eps) + ": mean curvature " + fmt(p.theorem2.lhs) +
                                        " <= bound " + fmt(p.theorem2.rhs));
  }
  return o;
}

// Error stability under privacy.
Outcome c7(const VerifyResult& r) {
  Outcome o;
  for (const auto& p : r.sweep.points) {
    if (p.status != "ok") {
      o.require(false, "eps " + fmt(p.eps) + ": " + p.status);
      continue;
    }
    o.require(p.lemma1.satisfied, "eps " + fmt(p.eps) + ": beta " + fmt(p.lemma1.lhs) + " <= " +
                                      fmt(p.lemma1.rhs) + " + 3*" + fmt(p.lemma1.lhs_stderr));
    o.require(p.lemma1.rhs < p.prior_stability,
              "eps " + fmt(p.eps) + ": L(1-e^-eps) " + fmt(p.lemma1.rhs) + " < L(e^eps-1) " + fmt(p.prior_stability));
  }
  return o;
}

std::map<std::string, std::string> file_digests(const fs::path& dir, const std::set<std::string>& skip) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (skip.count(e.path().filename().string())) continue;
    out[rel] = digest_file(e.path());
  }
  return out;
}

void compare_dirs(Outcome& o, const std::string& label, const fs::path& a, const fs::path& b,
                  const std::set<std::string>& skip) {
  const auto da = file_digests(a, skip);
  const auto db = file_digests(b, skip);
  std::size_t differ = 0;
  for (const auto& [k, v] : da) {
    auto it = db.find(k);
    if (it == db.end() || it->second != v) {
      ++differ;
      o.info(label + ": " + k + " differs");
    }
  }
  for (const auto& [k, v] : db)
    if (!da.count(k)) {
      ++differ;
      o.info(label + ": " + k + " only at 8 workers");
    }
  o.require(!da.empty() && differ == 0,
            label + ": " + std::to_string(da.size()) + " files, " + std::to_string(differ) + " differ");
}

// Determinism across worker counts.
Outcome c8(const fs::path& desk1, const fs::path& desk8, const fs::path& root) {
  Outcome o;
  compare_dirs(o, "desk verification", desk1, desk8, {});

  // Every CLI stage on the smoke preset, chained through its file inputs.
  const char* stages[] = {"gen-data", "train", "train-ensemble", "curvature", "memorization", "mem-privacy",
                          "dp-sweep", "fit", "verify"};
  for (int workers : {1, 8}) {
    const fs::path out = root / ("cli_w" + std::to_string(workers));
    fs::remove_all(out);
    const std::string w = std::to_string(workers);
    auto base = [&](const std::string& cmd, const std::string& id) {
      return std::vector<std::string>{cmd, "--preset", "smoke", "--out", out.string(), "--run-id", id, "--workers", w};
    };
    const fs::path data = out / "gen-data" / "data.csv";
    const fs::path ens = out / "train-ensemble" / "ensemble";
    const fs::path scores = out / "memorization" / "scores.csv";
    for (const char* s : stages) {
      std::vector<std::string> args = base(s, s);
      const std::string cmd = s;
      if (cmd == "fit") {
        args.push_back("--sweep");
        args.push_back((out / "dp-sweep" / "dp_sweep.csv").string());
      } else if (cmd != "gen-data" && cmd != "verify") {
        args.push_back("--data");
        args.push_back(data.string());
      }
      if (cmd == "curvature" || cmd == "memorization" || cmd == "mem-privacy" || cmd == "dp-sweep") {
        args.push_back("--ensemble");
        args.push_back(ens.string());
      }
      if (cmd == "mem-privacy" || cmd == "dp-sweep" || cmd == "fit") {
        args.push_back("--scores");
        args.push_back(scores.string());
      }
      const int code = cli_run(args);
      if (code != 0) o.require(false, "workers " + w + ": " + cmd + " exited " + std::to_string(code));
    }
  }
  for (const char* s : stages)
    compare_dirs(o, std::string("cli ") + s, root / "cli_w1" / s, root / "cli_w8" / s,
                 {"manifest.json", "config.json"});
  return o;
}

// Numerical hygiene.
Outcome c9() {
  Outcome o;
  CounterRng rng(901, Purpose::kProbe);
  double worst_fd = 0.0;
  for (auto act : {Activation::kTanh, Activation::kRelu}) {
    for (auto loss : {LossKind::kCrossEntropy, LossKind::kSquaredError, LossKind::kClampedCrossEntropy}) {
      for (int trial = 0; trial < 3; ++trial) {
        ModelSpec spec = mlp({5, 7, 4, 3}, loss, act);
        spec.clamp_bound = 50.0;
        Model m = mlp_init(spec, 910 + static_cast<std::uint64_t>(trial));
        const Example z{random_vector(5, rng), trial % 3, 0, 0};
        const double h = 1e-5;
        const Vector gx = grad_input(m, z);
        Vector fx(5);
        for (int k = 0; k < 5; ++k) {
          Vector xp = z.x, xm = z.x;
          xp(k) += h;
          xm(k) -= h;
          fx(k) = (loss_at(m, xp, z.y) - loss_at(m, xm, z.y)) / (2 * h);
        }
        worst_fd = std::max(worst_fd, (gx - fx).norm() / std::max(fx.norm(), 1e-12));
        const std::vector<Example> batch{z};
        const Vector gw = grad_weights_batch(m, batch);
        Vector fw(gw.size());
        for (Eigen::Index t = 0; t < gw.size(); ++t) {
          double& p = param_ref(m, static_cast<std::size_t>(t));
          const double saved = p;
          p = saved + h;
          const double lp = loss_eval(m, z);
          p = saved - h;
          const double lm = loss_eval(m, z);
          p = saved;
          fw(t) = (lp - lm) / (2 * h);
        }
        worst_fd = std::max(worst_fd, (gw - fw).norm() / std::max(fw.norm(), 1e-12));
      }
    }
  }
  o.require(worst_fd <= 1e-4, "finite-difference max relative error = " + fmt(worst_fd) + " (<= 1e-4)");

  double worst_batch = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Model m = mlp_init(mlp({6, 12, 3}), 920 + static_cast<std::uint64_t>(trial));
    std::vector<Example> batch;
    for (int i = 0; i < 32; ++i) batch.push_back({random_vector(6, rng), i % 3, i, 0});
    const auto per = grad_weights_per_sample(m, batch);
    Vector mean = Vector::Zero(per[0].size());
    for (const auto& g : per) mean += g;
    mean /= static_cast<double>(per.size());
    worst_batch = std::max(worst_batch, (mean - grad_weights_batch(m, batch)).cwiseAbs().maxCoeff());
  }
  o.require(worst_batch <= 1e-10, "per-sample vs batch gradient max difference = " + fmt(worst_batch) + " (<= 1e-10)");

  ModelSpec s = mlp({3, 4, 3}, LossKind::kClampedCrossEntropy);
  s.clamp_bound = 2.0;
  int bad = 0;
  for (int i = 0; i < 10000; ++i) {
    Model m = mlp_init(s, 930 + static_cast<std::uint64_t>(i));
    const double scale = std::exp(4.0 * rng.uniform());
    for (auto& l : m.layers) l.weight *= scale;
    const Vector x = random_vector(3, rng, 5.0);
    const int y = static_cast<int>(rng.below(3));
    const double clamped = loss_at(m, x, y);
    Model raw = m;
    raw.spec.loss = LossKind::kCrossEntropy;
    const double ce = loss_at(raw, x, y);
    const bool ok = std::isfinite(clamped) && clamped >= 0.0 && clamped <= 2.0 && std::isfinite(ce) && ce >= 0.0 &&
                    clamped == std::min(ce, 2.0);
    bad += !ok;
  }
  o.require(bad == 0, "clamp fuzz: " + std::to_string(bad) + " of 10000 draws out of bounds");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path root = fs::temp_directory_path() / "curvlink_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      root = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "usage: %s [--out DIR] [--only N,...]\n", argv[0]);
      return 1;
    }
  }
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };
  fs::create_directories(root);

  std::map<int, Outcome> results;
  std::map<int, double> seconds;
  auto run = [&](int id, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      Outcome o;
      o.require(false, std::string("threw: ") + e.what());
      results[id] = o;
    }
    seconds[id] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& d : results[id].details) std::printf("  C%d %s\n", id, d.c_str());
    std::fflush(stdout);
  };

  if (wanted(9)) run(9, c9);
  if (wanted(2)) run(2, c2);
  if (wanted(1)) run(1, c1);

  const bool need_desk = wanted(3) || wanted(4) || wanted(5) || wanted(6) || wanted(7) || wanted(8);
  if (need_desk) {
    const RunConfig cfg = RunConfig::desk();
    const fs::path desk1 = root / "desk_w1";
    fs::remove_all(desk1);
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<VerifyResult> r;
    std::string failure;
    try {
      r = run_verification(cfg, 1, desk1);
    } catch (const std::exception& e) {
      failure = e.what();
    }
    const double desk_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  desk verification at 1 worker: %.1f s\n", desk_seconds);
    const std::pair<int, Outcome (*)(const VerifyResult&)> stages[] = {{3, c3}, {4, c4}, {5, c5}, {6, c6}, {7, c7}};
    for (const auto& [id, f] : stages) {
      if (!wanted(id)) continue;
      if (r) {
        run(id, [&, f = f] { return f(*r); });
        seconds[id] += desk_seconds;
      } else {
        run(id, [&] {
          Outcome o;
          o.require(false, "desk verification failed: " + failure);
          return o;
        });
      }
    }
    if (wanted(8)) {
      run(8, [&] {
        const fs::path desk8 = root / "desk_w8";
        fs::remove_all(desk8);
        if (!r) {
          Outcome o;
          o.require(false, "desk verification failed: " + failure);
          return o;
        }
        run_verification(cfg, 8, desk8);
        return c8(desk1, desk8, root);
      });
    }
  }

  const char* names[] = {"",
                         "curvature estimator vs exact Hessian",
                         "privacy accountant",
                         "memorization estimator sanity",
                         "memorization under privacy",
                         "memorization vs curvature bins",
                         "curvature under privacy",
                         "error stability under privacy",
                         "determinism across worker counts",
                         "numerical hygiene"};
  int failed = 0;
  std::printf("\n");
  for (const auto& [id, o] : results) {
    std::printf("%s C%d %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, names[id], seconds[id]);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
