#include "curvlink/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "curvlink/digest.hpp"
#include "curvlink/ensemble_io.hpp"
#include "curvlink/errors.hpp"
#include "curvlink/privacy.hpp"

namespace curvlink {

Datasets make_datasets(const RunConfig& cfg) {
  const RunSeeds seeds = derive_seeds(cfg.seed);
  GenSpec g = cfg.data;
  g.seed = seeds.data;
  Datasets d;
  d.train = generate(g);
  d.holdout = draw_from_mixture(g, cfg.experiment.holdout_per_class * g.n_classes, seeds.holdout,
                                static_cast<std::int64_t>(d.train.size()));
  d.holdout.bayes_risk = d.train.bayes_risk;
  return d;
}

EnsembleRecord train_main_ensemble(const RunConfig& cfg, const Dataset& S, int workers) {
  const RunSeeds seeds = derive_seeds(cfg.seed);
  const MaskSet masks = subsample_masks(S.size(), cfg.experiment.mask_ratio, cfg.experiment.K, seeds.masks);
  TrainConfig t = cfg.train;
  t.seed = seeds.train;
  return train_ensemble(cfg.model, S, masks, t, workers);
}

CurvParams run_curv_params(const RunConfig& cfg) {
  CurvParams p = cfg.curvature;
  p.seed = derive_seeds(cfg.seed).curvature;
  return p;
}

MemorizationStage score_memorization(const RunConfig& cfg, const Dataset& S, const EnsembleRecord& ensemble,
                                     int workers) {
  MemorizationStage st;
  st.curvature = ensemble_curvature(ensemble.models, S, run_curv_params(cfg), workers);
  st.table = estimate_mem(ensemble, S);
  attach_curvature(st.table, st.curvature, ensemble.masks, cfg.experiment.curv_subset);
  return st;
}

std::vector<CurvatureRow> curvature_rows(const Matrix& scores, const MaskSet& masks, const Dataset& S,
                                         ModelSubset which) {
  std::vector<CurvatureRow> rows;
  rows.reserve(S.size());
  for (std::size_t i = 0; i < S.size(); ++i) {
    CurvatureRow r;
    r.sample_id = S.examples[i].sample_id;
    try {
      const MeanEstimate e = expected_curvature(scores, masks, i, which);
      r.model_count = e.count;
      r.mean = e.mean;
      r.stderr_ = e.stderr_.value_or(std::numeric_limits<double>::quiet_NaN());
    } catch (const InsufficientModelsError&) {
      r.mean = std::numeric_limits<double>::quiet_NaN();
      r.stderr_ = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(r);
  }
  return rows;
}

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  if (v.empty()) return out;
  out.mean = mean(v);
  out.se = v.size() >= 2 ? standard_error(v) : 0.0;
  return out;
}

}  // namespace

Estimate mean_max_training_loss(const std::vector<Model>& models, const MaskSet& masks, const Dataset& S) {
  if (static_cast<int>(models.size()) != masks.K()) throw ConfigError("model count does not match mask count");
  const Matrix X = stack_inputs(S.examples);
  std::vector<int> y;
  y.reserve(S.size());
  for (const auto& z : S.examples) y.push_back(z.y);
  std::vector<double> maxima;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const Vector l = losses_batch(models[k], X, y);
    double mx = 0.0;
    for (std::size_t i = 0; i < S.size(); ++i)
      if (masks.included(static_cast<int>(k), i)) mx = std::max(mx, l(static_cast<Eigen::Index>(i)));
    maxima.push_back(mx);
  }
  const MeanSe ms = mean_se(maxima);
  Estimate e;
  e.value = ms.mean;
  e.stderr_ = ms.se;
  e.method = "mean over models of the largest training loss";
  return e;
}

Theorem1Check check_theorem1(std::span<const BinRow> bins, const TheoryConstants& k) {
  Theorem1Check c;
  int ok = 0;
  for (const auto& b : bins) {
    if (b.count == 0 || !b.mean_mem || !b.max_curv) continue;
    Theorem1Bin t;
    t.bin_index = b.bin_index;
    t.mean_mem = *b.mean_mem;
    t.max_curv = *b.max_curv;
    t.rhs = thm1_rhs(t.max_curv, k);
    t.satisfied = t.mean_mem <= t.rhs;
    ok += t.satisfied;
    c.bins.push_back(t);
  }
  if (!c.bins.empty()) c.fraction_satisfied = static_cast<double>(ok) / static_cast<double>(c.bins.size());
  c.satisfied = !c.bins.empty() && c.fraction_satisfied >= 0.95;
  return c;
}

namespace {

Estimate alpha_moment(const RunConfig& cfg) {
  AlphaMode mode;
  mode.kind = AlphaMode::Kind::kGaussian;
  mode.sigma = cfg.experiment.upsilon / std::sqrt(static_cast<double>(cfg.data.dim));
  Estimate e;
  e.value = alpha_third_moment(cfg.data.dim, cfg.experiment.upsilon, mode);
  e.method = "closed form, Gaussian alpha with E[alpha^T alpha] = upsilon^2";
  return e;
}

TheoryConstants estimate_constants(const RunConfig& cfg, const std::vector<Model>& models, const MaskSet& masks,
                                   const Datasets& d, std::span<const std::size_t> probes, std::uint64_t seed) {
  TheoryConstants k;
  k.beta = estimate_beta(models, masks, probes, d.holdout, seed);
  k.gamma = estimate_gamma(models, masks, d.train, d.holdout);
  k.delta_bias = estimate_delta(models, d.holdout, d.train.bayes_risk);
  k.rho = estimate_rho(models, d.train, cfg.experiment.rho_pairs, seed);
  k.L = estimate_loss_bound(models, masks, d.train);
  k.e_alpha3 = alpha_moment(cfg);
  k.m = static_cast<int>(d.train.size());
  k.unit_loss_bound = cfg.experiment.unit_loss_bound;
  k.validate();
  return k;
}

std::string eps_label(double eps) { return "eps=" + format_double(eps); }

Json finite(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json correlation_json(const Correlation& c) {
  return {{"pearson", finite(c.pearson)}, {"spearman", finite(c.spearman)}, {"defined", c.defined}};
}

struct SweepVerdicts {
  bool theorem2 = false;
  bool theorem3 = false;
  bool lemma1 = false;
};

SweepVerdicts sweep_verdicts(const PrivateSweep& sweep) {
  bool t2 = true;
  bool t3 = true;
  bool l1 = true;
  bool any_ok = false;
  for (const auto& p : sweep.points) {
    if (p.status != "ok") continue;
    any_ok = true;
    t2 = t2 && p.theorem2.satisfied;
    t3 = t3 && p.theorem3.satisfied;
    l1 = l1 && p.lemma1.satisfied && p.lemma1.rhs < p.prior_stability;
  }
  return {any_ok && t2, any_ok && t3, any_ok && l1};
}

Json build_verification_json(const VerifyResult& r, const RunConfig& cfg) {
  Json j;
  j["config_digest"] = cfg.digest();
  j["library_version"] = kLibraryVersion;
  j["m"] = r.data.train.size();
  j["bayes_risk"] = r.data.train.bayes_risk ? Json(*r.data.train.bayes_risk) : Json(nullptr);
  j["constants"] = to_json(r.constants);
  j["probes"] = r.probes;
  j["topk"] = r.topk;

  Json t1bins = Json::array();
  for (const auto& b : r.theorem1.bins)
    t1bins.push_back({{"bin", b.bin_index},
                      {"mean_mem", b.mean_mem},
                      {"max_curv", b.max_curv},
                      {"rhs", b.rhs},
                      {"satisfied", b.satisfied}});
  j["theorem1"] = {{"curvature_subset", to_string(cfg.experiment.curv_subset)},
                   {"bins", t1bins},
                   {"fraction_satisfied", r.theorem1.fraction_satisfied},
                   {"satisfied", r.theorem1.satisfied},
                   {"bin_correlation", correlation_json(r.bin_correlation)},
                   {"fit_scaled", to_json(r.memcurv_fit.scaled)},
                   {"fit_unscaled", to_json(r.memcurv_fit.unscaled)},
                   {"confidence_note", kEmpiricalNote}};
  j["appendix_lossdiff"] = to_json(r.lossdiff);

  j["private_sweep"] = to_json(r.sweep, r.privacy);
  const SweepVerdicts sv = sweep_verdicts(r.sweep);
  j["verdicts"] = {{"theorem1", r.theorem1.satisfied},
                   {"theorem2", sv.theorem2},
                   {"theorem3", sv.theorem3},
                   {"lemma1", sv.lemma1},
                   {"appendix_lossdiff", r.lossdiff.satisfied}};
  Json reports = Json::array();
  reports.push_back(to_json(r.lossdiff));
  for (const auto& p : r.sweep.points) {
    if (p.status != "ok") continue;
    reports.push_back(to_json(p.theorem2));
    reports.push_back(to_json(p.theorem3));
    reports.push_back(to_json(p.lemma1));
  }
  j["reports"] = reports;
  j["notes"] = r.notes;
  return j;
}

}  // namespace

Json to_json(const Estimate& e) {
  return {{"value", finite(e.value)}, {"stderr", finite(e.stderr_)}, {"method", e.method}, {"detail", e.detail}};
}

Json to_json(const TheoryConstants& k) {
  return {{"beta", to_json(k.beta)},
          {"gamma", to_json(k.gamma)},
          {"delta_bias", to_json(k.delta_bias)},
          {"rho", to_json(k.rho)},
          {"L", to_json(k.L)},
          {"e_alpha3", to_json(k.e_alpha3)},
          {"m", k.m},
          {"unit_loss_bound", k.unit_loss_bound},
          {"thm1_c1", finite(thm1_c1(k))},
          {"thm2_c2", finite(thm2_c2(k))},
          {"lossdiff_rhs", finite(lossdiff_rhs(k))}};
}

Json to_json(const BoundReport& r) {
  return {{"bound_name", r.bound_name},
          {"lhs", finite(r.lhs)},
          {"rhs", finite(r.rhs)},
          {"lhs_stderr", finite(r.lhs_stderr)},
          {"rhs_stderr", finite(r.rhs_stderr)},
          {"satisfied", r.satisfied},
          {"slack", finite(r.slack)},
          {"confidence_note", r.confidence_note}};
}

Json to_json(const PrivateSweep& sweep, const MemPrivacyResult& privacy) {
  Json pts = Json::array();
  for (std::size_t e = 0; e < sweep.points.size(); ++e) {
    const DpPoint& p = sweep.points[e];
    Json pj = {{"eps", p.eps}, {"status", p.status}};
    if (p.status == "ok") {
      if (e < privacy.curve.size()) {
        pj["sigma"] = privacy.curve[e].sigma;
        pj["mean_mem"] = privacy.curve[e].mean_mem;
        pj["mem_stderr"] = privacy.curve[e].stderr_;
      }
      pj["mean_steps"] = p.mean_steps;
      pj["mean_epsilon_spent"] = p.mean_epsilon;
      pj["loss_bound"] = p.sweep.loss_bound;
      pj["mean_curv"] = p.sweep.mean_curv;
      pj["curv_stderr"] = p.sweep.curv_stderr;
      pj["constants"] = to_json(p.constants);
      pj["theorem2"] = to_json(p.theorem2);
      pj["theorem3"] = to_json(p.theorem3);
      pj["lemma1"] = to_json(p.lemma1);
      pj["prior_stability_bound"] = p.prior_stability;
      pj["lemma1_strictly_tighter"] = p.lemma1.rhs < p.prior_stability;
    }
    pts.push_back(pj);
  }
  const SweepVerdicts sv = sweep_verdicts(sweep);
  return {{"points", pts},
          {"mem_trend", correlation_json(sweep.mem_trend)},
          {"curv_trend", correlation_json(sweep.curv_trend)},
          {"loss_fit", sweep.loss_fit ? to_json(*sweep.loss_fit) : Json(nullptr)},
          {"curv_fit", sweep.curv_fit ? to_json(*sweep.curv_fit) : Json(nullptr)},
          {"curv_fit_free_scale", sweep.curv_fit_free ? to_json(*sweep.curv_fit_free) : Json(nullptr)},
          {"verdicts", {{"theorem2", sv.theorem2}, {"theorem3", sv.theorem3}, {"lemma1", sv.lemma1}}},
          {"notes", sweep.notes}};
}

MemPrivacyResult run_mem_privacy(const RunConfig& cfg, const Dataset& S, std::span<const std::int64_t> topk,
                                 int workers) {
  const RunSeeds seeds = derive_seeds(cfg.seed);
  const ExperimentConfig& ex = cfg.experiment;
  TrainConfig dc = cfg.dp_train;
  dc.seed = seeds.dp_train;
  return privacy_mem_experiment(cfg.model, S, topk, ex.eps_grid, ex.seeds_per_eps, dc, seeds.dp_masks, workers,
                                ex.paired);
}

PrivateSweep analyze_private_sweep(const RunConfig& cfg, const Datasets& data, std::span<const std::int64_t> topk,
                                   const MemPrivacyResult& privacy, int workers) {
  const RunSeeds seeds = derive_seeds(cfg.seed);
  const Dataset& S = data.train;
  PrivateSweep out;
  std::vector<std::size_t> topk_idx;
  for (auto id : topk) topk_idx.push_back(S.index_of(id));
  const CurvParams cp = run_curv_params(cfg);
  std::vector<double> ok_eps, ok_mem, ok_curv;
  std::vector<std::pair<double, double>> loss_pts, curv_pts;
  for (std::size_t e = 0; e < privacy.curve.size(); ++e) {
    const MemPrivacyPoint& pt = privacy.curve[e];
    DpPoint p;
    p.eps = pt.eps;
    p.status = pt.status;
    p.sweep.eps = pt.eps;
    if (pt.status != "ok") {
      out.points.push_back(std::move(p));
      continue;
    }
    const EnsembleRecord& ens = privacy.ensembles[e];
    try {
      const Matrix curv = ensemble_curvature(ens.models, S, cp, workers);
      std::vector<double> per_model;
      for (Eigen::Index k = 0; k < curv.rows(); ++k) per_model.push_back(curv.row(k).mean());
      const MeanSe cs = mean_se(per_model);
      p.sweep.mean_curv = cs.mean;
      p.sweep.curv_stderr = cs.se;
      p.sweep.loss_bound = mean_max_training_loss(ens.models, ens.masks, S).value;

      p.constants = estimate_constants(cfg, ens.models, ens.masks, data, topk_idx, seeds.analysis);
      p.beta = p.constants.beta;
      p.sweep.thm2_rhs = thm2_rhs(p.constants, p.eps);
      const std::string tag = eps_label(p.eps);
      p.theorem2 = make_report("theorem2 " + tag, cs.mean, p.sweep.thm2_rhs, cs.se, 0.0, kEmpiricalNote);
      p.theorem3 = make_report("theorem3 " + tag, pt.mean_mem, pt.bound, pt.stderr_, 0.0,
                               "mean memorization of the top-k samples against 1 - e^-eps");
      p.lemma1 = make_report("lemma1 " + tag, p.beta.value, stability_bound(p.constants.L.value, p.eps),
                             p.beta.stderr_, 0.0, kEmpiricalNote);
      p.prior_stability = prior_stability_bound(p.constants.L.value, p.eps);
      double steps = 0.0;
      double spent = 0.0;
      int n = 0;
      for (const auto& b : ens.budgets)
        if (b) {
          steps += static_cast<double>(b->steps);
          spent += b->epsilon;
          ++n;
        }
      if (n > 0) {
        p.mean_steps = steps / n;
        p.mean_epsilon = spent / n;
      }
      ok_eps.push_back(p.eps);
      ok_mem.push_back(pt.mean_mem);
      ok_curv.push_back(cs.mean);
      loss_pts.emplace_back(p.eps, p.sweep.loss_bound);
      curv_pts.emplace_back(p.eps, cs.mean);
    } catch (const std::exception& e) {
      p.status = e.what();
    }
    out.points.push_back(std::move(p));
  }

  if (ok_eps.size() >= 3) {
    out.mem_trend = correlation(ok_eps, ok_mem);
    out.curv_trend = correlation(ok_eps, ok_curv);
  } else {
    out.notes.push_back("fewer than 3 private grid points succeeded; no trend statistics");
  }
  try {
    out.loss_fit = fit_loss_vs_eps(loss_pts);
    out.curv_fit = fit_curv_vs_eps(curv_pts, static_cast<int>(S.size()), *out.loss_fit, false);
    out.curv_fit_free = fit_curv_vs_eps(curv_pts, static_cast<int>(S.size()), *out.loss_fit, true);
  } catch (const std::exception& e) {
    out.notes.push_back(std::string("privacy fits failed: ") + e.what());
  }
  return out;
}

void write_private_sweep(const PrivateSweep& sweep, const MemPrivacyResult& privacy, int m,
                         const std::filesystem::path& dir, const std::string& digest) {
  std::filesystem::create_directories(dir);
  std::vector<SweepRow> rows;
  const auto path = dir / "dp_sweep.csv";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "# config_digest: " << digest << '\n';
  out << "# m: " << m << '\n';
  out << "eps,status,sigma,mean_steps,mean_epsilon,loss_bound,mean_curv,curv_stderr,thm2_rhs\n";
  for (std::size_t e = 0; e < sweep.points.size(); ++e) {
    const DpPoint& p = sweep.points[e];
    std::string status = p.status;
    for (char& c : status)
      if (c == ',' || c == '\n') c = ';';
    const double sigma = e < privacy.curve.size() ? privacy.curve[e].sigma : 0.0;
    out << format_double(p.eps) << ',' << status << ',' << format_double(sigma) << ','
        << format_double(p.mean_steps) << ',' << format_double(p.mean_epsilon) << ','
        << format_double(p.sweep.loss_bound) << ',' << format_double(p.sweep.mean_curv) << ','
        << format_double(p.sweep.curv_stderr) << ',' << format_double(p.sweep.thm2_rhs) << '\n';
    if (p.status == "ok") rows.push_back(p.sweep);
  }
  if (!out) throw ConfigError("failed writing " + path.string());
  if (sweep.loss_fit) {
    write_fig6_losseps(rows, *sweep.loss_fit, dir / "fig6_losseps.dat", digest);
    write_fig7_curveps(rows, m, *sweep.loss_fit, sweep.curv_fit, sweep.curv_fit_free, dir / "fig7_curveps.dat",
                       digest);
  }
}

SweepCsv read_private_sweep(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw NotFoundError("cannot open " + csv.string());
  SweepCsv out;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# m: ", 0) == 0) out.m = std::stoi(line.substr(5));
      continue;
    }
    if (!header) {
      if (line.rfind("eps,status,", 0) != 0) throw ConfigError("unexpected header in " + csv.string());
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw ConfigError("bad row width in " + csv.string());
    try {
      out.rows.push_back({std::stod(cells[0]), cells[1], std::stod(cells[5]), std::stod(cells[6])});
    } catch (const std::logic_error&) {
      throw ConfigError("bad number in " + csv.string());
    }
  }
  if (!header) throw ConfigError("missing header in " + csv.string());
  if (out.m <= 0) throw ConfigError("missing sample count in " + csv.string());
  return out;
}

VerifyResult run_verification(const RunConfig& cfg, int workers, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const RunSeeds seeds = derive_seeds(cfg.seed);
  const ExperimentConfig& ex = cfg.experiment;
  VerifyResult r;
  r.data = make_datasets(cfg);
  const Dataset& S = r.data.train;

  r.ensemble = train_main_ensemble(cfg, S, workers);
  r.mem = score_memorization(cfg, S, r.ensemble, workers);
  r.bins = bin_scores(r.mem.table, ex.n_bins);
  {
    std::vector<double> curv;
    std::vector<double> mem;
    for (const auto& b : r.bins)
      if (b.count > 0 && b.mean_mem && b.max_curv) {
        curv.push_back(*b.max_curv);
        mem.push_back(*b.mean_mem);
      }
    if (mem.size() >= 3) r.bin_correlation = correlation(mem, curv);
    else r.notes.push_back("fewer than 3 nonempty bins; no bin correlation");
    try {
      r.memcurv_fit = fit_mem_vs_curv(r.bins);
    } catch (const std::exception& e) {
      r.notes.push_back(std::string("memorization-curvature fit failed: ") + e.what());
    }
  }

  r.probes = stratified_probes(r.mem.table, ex.probes, seeds.analysis);
  r.constants = estimate_constants(cfg, r.ensemble.models, r.ensemble.masks, r.data, r.probes, seeds.analysis);
  r.theorem1 = check_theorem1(r.bins, r.constants);
  r.lossdiff = appendix_lossdiff_check(r.ensemble.models, r.ensemble.masks, S, r.probes, r.constants);

  r.topk = topk_memorized(r.mem.table, ex.top_k);
  r.privacy = run_mem_privacy(cfg, S, r.topk, workers);
  r.sweep = analyze_private_sweep(cfg, r.data, r.topk, r.privacy, workers);
  r.notes.insert(r.notes.end(), r.sweep.notes.begin(), r.sweep.notes.end());

  r.verification = build_verification_json(r, cfg);
  if (out_dir) write_verification_outputs(r, cfg, *out_dir);
  return r;
}

void write_verification_outputs(const VerifyResult& r, const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string digest = cfg.digest();
  GenSpec g = cfg.data;
  g.seed = derive_seeds(cfg.seed).data;
  const Dataset& S = r.data.train;

  write_dataset(S, g, dir / "data.csv", digest);
  write_dataset(r.data.holdout, g, dir / "holdout.csv", digest);
  save_ensemble(r.ensemble, dir / "ensemble", digest);
  write_curvature_scores(curvature_rows(r.mem.curvature, r.ensemble.masks, S, cfg.experiment.curv_subset),
                         run_curv_params(cfg), dir / "curvature.csv", digest);
  write_score_table(r.mem.table, dir / "scores.csv", digest);
  write_mem_curve(r.privacy.curve, dir / "mem_privacy.csv", digest);
  for (std::size_t e = 0; e < r.privacy.ensembles.size(); ++e)
    if (r.privacy.ensembles[e].K() > 0)
      save_ensemble(r.privacy.ensembles[e], dir / "dp" / ("eps_" + std::to_string(e)), digest);

  write_private_sweep(r.sweep, r.privacy, static_cast<int>(S.size()), dir, digest);
  write_fig4_memcurv(r.bins, r.memcurv_fit, dir / "fig4_memcurv.dat", digest);
  write_fig8_memeps(r.privacy.curve, dir / "fig8_memeps.dat", digest);

  Json fits = {{"config_digest", digest},
               {"memcurv_scaled", to_json(r.memcurv_fit.scaled)},
               {"memcurv_unscaled", to_json(r.memcurv_fit.unscaled)},
               {"loss_vs_eps", r.sweep.loss_fit ? to_json(*r.sweep.loss_fit) : Json(nullptr)},
               {"curv_vs_eps", r.sweep.curv_fit ? to_json(*r.sweep.curv_fit) : Json(nullptr)},
               {"curv_vs_eps_free_scale", r.sweep.curv_fit_free ? to_json(*r.sweep.curv_fit_free) : Json(nullptr)}};
  write_json_file(fits, dir / "fits.json");
  write_json_file(r.verification, dir / "verification.json");
}

RunReport report_runs(const std::vector<std::filesystem::path>& run_dirs) {
  RunReport rep;
  rep.json = {{"runs", Json::array()}, {"warnings", Json::array()}, {"missing", Json::array()}};
  std::ostringstream text;
  std::set<std::string> versions;
  for (const auto& dir : run_dirs) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) {
      rep.missing.push_back(dir.string());
      rep.json["missing"].push_back(dir.string());
      continue;
    }
    Json run;
    try {
      const Json m = read_json_file(manifest_path);
      run = {{"dir", dir.string()},
             {"command", m.value("command", "")},
             {"run_id", m.value("run_id", "")},
             {"exit_code", m.value("exit_code", -1)},
             {"library_version", m.value("library_version", "")},
             {"config_digest", m.value("config_digest", "")}};
      versions.insert(m.value("library_version", ""));
    } catch (const std::exception& e) {
      rep.missing.push_back(dir.string() + " (unreadable manifest: " + e.what() + ")");
      rep.json["missing"].push_back(dir.string());
      continue;
    }
    text << "run " << run["run_id"].get<std::string>() << " (" << run["command"].get<std::string>()
         << ", exit " << run["exit_code"].get<int>() << ") in " << dir.string() << '\n';

    auto verification_path = dir / "verification.json";
    if (!std::filesystem::exists(verification_path)) verification_path = dir / "sweep.json";
    if (std::filesystem::exists(verification_path)) {
      Json v = read_json_file(verification_path);
      if (!v.contains("private_sweep") && v.contains("points")) v = {{"verdicts", v["verdicts"]}, {"private_sweep", v}};
      run["verdicts"] = v.value("verdicts", Json::object());
      Json fits = Json::object();
      if (v.contains("theorem1")) {
        fits["memcurv_scaled"] = v["theorem1"].value("fit_scaled", Json())["params"];
        fits["memcurv_unscaled"] = v["theorem1"].value("fit_unscaled", Json())["params"];
      }
      if (v.contains("private_sweep")) {
        const Json& ps = v["private_sweep"];
        for (const char* key : {"loss_fit", "curv_fit", "curv_fit_free_scale"})
          if (ps.contains(key) && !ps[key].is_null()) fits[key] = ps[key]["params"];
      }
      run["fit_params"] = fits;
      Json figures = Json::array();
      for (const char* f : {"fig4_memcurv.dat", "fig6_losseps.dat", "fig7_curveps.dat", "fig8_memeps.dat"})
        if (std::filesystem::exists(dir / f)) figures.push_back((dir / f).string());
      run["figures"] = figures;

      text << "  verdicts:\n";
      for (const char* key : {"theorem1", "theorem2", "theorem3", "lemma1", "appendix_lossdiff"}) {
        const bool present = run["verdicts"].contains(key);
        text << "    " << key << ": "
             << (present ? (run["verdicts"][key].get<bool>() ? "satisfied" : "violated") : "not run") << '\n';
      }
      for (auto it = fits.begin(); it != fits.end(); ++it) text << "  fit " << it.key() << ": " << it.value().dump() << '\n';
      for (const auto& f : figures) text << "  figure data: " << f.get<std::string>() << '\n';
    }
    rep.json["runs"].push_back(run);
  }
  if (versions.size() > 1) {
    std::string list;
    for (const auto& v : versions) list += (list.empty() ? "" : ", ") + v;
    const std::string w = "runs were produced by different library versions: " + list;
    rep.json["warnings"].push_back(w);
    text << "WARNING: " << w << '\n';
  }
  for (const auto& m : rep.missing) text << "missing manifest: " << m << '\n';
  rep.text = text.str();
  return rep;
}

}  // namespace curvlink
