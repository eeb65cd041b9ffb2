#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "curvlink/config.hpp"
#include "curvlink/data_io.hpp"
#include "curvlink/digest.hpp"
#include "curvlink/ensemble_io.hpp"
#include "curvlink/errors.hpp"
#include "curvlink/model_io.hpp"
#include "curvlink/pipeline.hpp"
#include "curvlink/plot_data.hpp"

namespace curvlink {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string preset = "desk";
  std::string out;
  std::string run_id;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string data;
  std::string ensemble;
  std::string scores;
  std::string sweep;
  bool private_training = false;
  std::vector<std::string> run_dirs;
  bool seed_set = false;
  bool workers_set = false;
};

struct Context {
  std::string command;
  RunConfig cfg;
  std::string digest;
  int workers = 1;
  fs::path dir;
  Options opt;
  Json inputs = Json::array();
  Json summary = Json::object();
};

int default_workers() {
  if (const char* env = std::getenv("CURVLINK_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("CURVLINK_WORKERS must be a positive integer");
    return static_cast<int>(v);
  }
  return static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void add_input(Context& ctx, const std::string& role, const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("input not found: " + path.string());
  std::string digest;
  if (fs::is_regular_file(path)) {
    digest = digest_file(path);
  } else if (fs::exists(path / "ensemble.json")) {
    digest = digest_file(path / "ensemble.json");
  }
  ctx.inputs.push_back({{"role", role}, {"path", path.string()}, {"digest", digest}});
}

Dataset training_data(Context& ctx) {
  if (ctx.opt.data.empty()) return make_datasets(ctx.cfg).train;
  add_input(ctx, "data", ctx.opt.data);
  Dataset S = read_dataset(ctx.opt.data);
  if (S.dim() != ctx.cfg.model.layer_dims.front())
    throw ConfigError("data dimension does not match the model input width");
  return S;
}

Datasets datasets(Context& ctx) {
  Datasets d = make_datasets(ctx.cfg);
  if (!ctx.opt.data.empty()) d.train = training_data(ctx);
  return d;
}

EnsembleRecord main_ensemble(Context& ctx, const Dataset& S, bool save_if_trained) {
  if (!ctx.opt.ensemble.empty()) {
    add_input(ctx, "ensemble", ctx.opt.ensemble);
    EnsembleRecord e = load_ensemble(ctx.opt.ensemble);
    if (e.m() != S.size()) throw ConfigError("ensemble sample count does not match the data");
    return e;
  }
  EnsembleRecord e = train_main_ensemble(ctx.cfg, S, ctx.workers);
  if (save_if_trained) save_ensemble(e, ctx.dir / "ensemble", ctx.digest);
  return e;
}

std::vector<std::int64_t> memorized_topk(Context& ctx, const Dataset& S) {
  ScoreTable table;
  if (!ctx.opt.scores.empty()) {
    add_input(ctx, "scores", ctx.opt.scores);
    table = read_score_table(ctx.opt.scores);
  } else {
    table = estimate_mem(main_ensemble(ctx, S, true), S);
  }
  auto topk = topk_memorized(table, ctx.cfg.experiment.top_k);
  for (auto id : topk) S.index_of(id);
  return topk;
}

void cmd_gen_data(Context& ctx) {
  const Datasets d = make_datasets(ctx.cfg);
  GenSpec g = ctx.cfg.data;
  g.seed = derive_seeds(ctx.cfg.seed).data;
  write_dataset(d.train, g, ctx.dir / "data.csv", ctx.digest);
  write_dataset(d.holdout, g, ctx.dir / "holdout.csv", ctx.digest);
  ctx.summary = {{"m", d.train.size()}, {"holdout", d.holdout.size()}, {"mislabeled", d.train.mislabeled.size()}};
}

void cmd_train(Context& ctx) {
  const Dataset S = training_data(ctx);
  const RunSeeds seeds = derive_seeds(ctx.cfg.seed);
  TrainConfig t = ctx.opt.private_training ? ctx.cfg.dp_train : ctx.cfg.train;
  t.seed = ctx.opt.private_training ? seeds.dp_train : seeds.train;
  const TrainResult r = train_any(ctx.cfg.model, S, t);
  save_model(r.model, ctx.dir / "model.crvl");

  std::ofstream out(ctx.dir / "history.csv", std::ios::binary);
  out << "# config_digest: " << ctx.digest << '\n';
  out << "epoch,lr,train_loss,train_accuracy,epsilon,max_clipped_norm\n";
  for (const auto& h : r.history)
    out << h.epoch << ',' << format_double(h.lr) << ',' << format_double(h.train_loss) << ','
        << format_double(h.train_accuracy) << ',' << format_double(h.epsilon) << ','
        << format_double(h.max_clipped_norm) << '\n';
  if (!out) throw ConfigError("failed writing history.csv");

  Json j = {{"config_digest", ctx.digest},
            {"private", ctx.opt.private_training},
            {"train_config", to_json(t)},
            {"steps", r.steps},
            {"stop_reason", r.stop_reason},
            {"budget", r.budget ? to_json(*r.budget) : Json(nullptr)}};
  write_json_file(j, ctx.dir / "train.json");
  ctx.summary = {{"steps", r.steps}, {"stop_reason", r.stop_reason}};
  if (!r.history.empty()) ctx.summary["final_train_accuracy"] = r.history.back().train_accuracy;
}

void cmd_train_ensemble(Context& ctx) {
  const Dataset S = training_data(ctx);
  const EnsembleRecord e = train_main_ensemble(ctx.cfg, S, ctx.workers);
  save_ensemble(e, ctx.dir / "ensemble", ctx.digest);
  ctx.summary = {{"K", e.K()}, {"m", e.m()}};
}

void cmd_curvature(Context& ctx) {
  const Dataset S = training_data(ctx);
  const EnsembleRecord e = main_ensemble(ctx, S, true);
  const CurvParams p = run_curv_params(ctx.cfg);
  const Matrix scores = ensemble_curvature(e.models, S, p, ctx.workers);
  write_curvature_scores(curvature_rows(scores, e.masks, S, ctx.cfg.experiment.curv_subset), p,
                         ctx.dir / "curvature.csv", ctx.digest);
  ctx.summary = {{"K", e.K()}, {"mean_curvature", scores.mean()}};
}

void write_memcurv(Context& ctx, const ScoreTable& table) {
  const auto bins = bin_scores(table, ctx.cfg.experiment.n_bins);
  const MemCurvFit fit = fit_mem_vs_curv(bins);
  write_fig4_memcurv(bins, fit, ctx.dir / "fig4_memcurv.dat", ctx.digest);
  ctx.summary["memcurv_scaled"] = to_json(fit.scaled);
  ctx.summary["memcurv_unscaled"] = to_json(fit.unscaled);
}

void cmd_memorization(Context& ctx) {
  const Dataset S = training_data(ctx);
  const EnsembleRecord e = main_ensemble(ctx, S, true);
  const MemorizationStage st = score_memorization(ctx.cfg, S, e, ctx.workers);
  write_score_table(st.table, ctx.dir / "scores.csv", ctx.digest);
  write_curvature_scores(curvature_rows(st.curvature, e.masks, S, ctx.cfg.experiment.curv_subset),
                         run_curv_params(ctx.cfg), ctx.dir / "curvature.csv", ctx.digest);
  ctx.summary = {{"valid_samples", st.table.valid_count()}};
  write_memcurv(ctx, st.table);
  ctx.summary["topk"] = topk_memorized(st.table, ctx.cfg.experiment.top_k);
  write_json_file(ctx.summary, ctx.dir / "fits.json");
}

void write_privacy_outputs(Context& ctx, const MemPrivacyResult& privacy) {
  write_mem_curve(privacy.curve, ctx.dir / "mem_privacy.csv", ctx.digest);
  write_fig8_memeps(privacy.curve, ctx.dir / "fig8_memeps.dat", ctx.digest);
  for (std::size_t e = 0; e < privacy.ensembles.size(); ++e)
    if (privacy.ensembles[e].K() > 0)
      save_ensemble(privacy.ensembles[e], ctx.dir / "dp" / ("eps_" + std::to_string(e)), ctx.digest);
}

void cmd_mem_privacy(Context& ctx) {
  const Dataset S = training_data(ctx);
  const auto topk = memorized_topk(ctx, S);
  const MemPrivacyResult privacy = run_mem_privacy(ctx.cfg, S, topk, ctx.workers);
  write_privacy_outputs(ctx, privacy);
  Json pts = Json::array();
  for (const auto& p : privacy.curve)
    pts.push_back({{"eps", p.eps}, {"mean_mem", p.mean_mem}, {"stderr", p.stderr_}, {"bound", p.bound},
                   {"status", p.status}});
  ctx.summary = {{"topk", topk}, {"points", pts}};
}

void cmd_dp_sweep(Context& ctx) {
  const Datasets d = datasets(ctx);
  const auto topk = memorized_topk(ctx, d.train);
  const MemPrivacyResult privacy = run_mem_privacy(ctx.cfg, d.train, topk, ctx.workers);
  write_privacy_outputs(ctx, privacy);
  const PrivateSweep sweep = analyze_private_sweep(ctx.cfg, d, topk, privacy, ctx.workers);
  write_private_sweep(sweep, privacy, static_cast<int>(d.train.size()), ctx.dir, ctx.digest);
  Json j = to_json(sweep, privacy);
  j["config_digest"] = ctx.digest;
  j["topk"] = topk;
  write_json_file(j, ctx.dir / "sweep.json");
  ctx.summary = j["verdicts"];
}

void cmd_fit(Context& ctx) {
  if (ctx.opt.scores.empty() && ctx.opt.sweep.empty()) throw ConfigError("fit needs --scores, --sweep or both");
  ctx.summary = {{"config_digest", ctx.digest}};
  if (!ctx.opt.scores.empty()) {
    add_input(ctx, "scores", ctx.opt.scores);
    write_memcurv(ctx, read_score_table(ctx.opt.scores));
  }
  if (!ctx.opt.sweep.empty()) {
    add_input(ctx, "sweep", ctx.opt.sweep);
    const SweepCsv sweep = read_private_sweep(ctx.opt.sweep);
    std::vector<std::pair<double, double>> loss_pts, curv_pts;
    for (const auto& r : sweep.rows)
      if (r.status == "ok") {
        loss_pts.emplace_back(r.eps, r.loss_bound);
        curv_pts.emplace_back(r.eps, r.mean_curv);
      }
    const FitResult loss = fit_loss_vs_eps(loss_pts);
    ctx.summary["loss_vs_eps"] = to_json(loss);
    ctx.summary["curv_vs_eps"] = to_json(fit_curv_vs_eps(curv_pts, sweep.m, loss, false));
    ctx.summary["curv_vs_eps_free_scale"] = to_json(fit_curv_vs_eps(curv_pts, sweep.m, loss, true));
  }
  write_json_file(ctx.summary, ctx.dir / "fits.json");
}

void cmd_verify(Context& ctx) {
  const VerifyResult r = run_verification(ctx.cfg, ctx.workers, ctx.dir);
  ctx.summary = r.verification["verdicts"];
  std::cout << "verdicts:";
  for (auto it = ctx.summary.begin(); it != ctx.summary.end(); ++it)
    std::cout << ' ' << it.key() << '=' << (it.value().get<bool>() ? "satisfied" : "violated");
  std::cout << '\n';
}

void cmd_report(Context& ctx) {
  std::vector<fs::path> dirs(ctx.opt.run_dirs.begin(), ctx.opt.run_dirs.end());
  for (const auto& d : dirs)
    if (fs::exists(d / "manifest.json")) add_input(ctx, "run", d / "manifest.json");
  const RunReport rep = report_runs(dirs);
  std::ofstream(ctx.dir / "report.txt", std::ios::binary) << rep.text;
  write_json_file(rep.json, ctx.dir / "report.json");
  std::cout << rep.text;
  ctx.summary = {{"runs", rep.json["runs"].size()}, {"missing", rep.missing}};
}

Json list_outputs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Json out = Json::array();
  for (const auto& f : files)
    out.push_back({{"path", fs::relative(f, dir).generic_string()}, {"digest", digest_file(f)}});
  return out;
}

RunConfig resolve_config(const Options& opt) {
  RunConfig cfg = RunConfig::preset(opt.preset);
  if (!opt.config.empty()) cfg = run_config_from_json(read_json_file(opt.config), cfg);
  if (opt.seed_set) cfg.seed = opt.seed;
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (!opt.run_id.empty()) cfg.run_id = opt.run_id;
  if (cfg.run_id.empty() || cfg.run_id.find('/') != std::string::npos || cfg.run_id == "." || cfg.run_id == "..")
    throw ConfigError("run_id must be a plain directory name");
  cfg.validate();
  return cfg;
}

int exit_code_for(const std::exception_ptr& e, std::string& type, std::string& message) {
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError& x) {
    type = "ConfigError";
    message = x.what();
    return 1;
  } catch (const NotFoundError& x) {
    type = "NotFoundError";
    message = x.what();
    return 1;
  } catch (const nlohmann::json::exception& x) {
    type = "ConfigError";
    message = x.what();
    return 1;
  } catch (const FitError& x) {
    type = "FitError";
    message = x.what();
    return 2;
  } catch (const NumericError& x) {
    type = "NumericError";
    message = x.what();
    return 2;
  } catch (const InsufficientModelsError& x) {
    type = "InsufficientModelsError";
    message = x.what();
    return 2;
  } catch (const std::exception& x) {
    type = "Error";
    message = x.what();
    return 2;
  }
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  using Handler = std::function<void(Context&)>;
  const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
      {"gen-data", "Generate the training and holdout sets", cmd_gen_data},
      {"train", "Train one model on the full training set", cmd_train},
      {"train-ensemble", "Train the subsampled non-private ensemble", cmd_train_ensemble},
      {"dp-sweep", "Private ensembles over the eps grid with curvature, bounds and fits", cmd_dp_sweep},
      {"curvature", "Per-sample curvature over an ensemble", cmd_curvature},
      {"memorization", "Memorization scores, curvature and the binned fit", cmd_memorization},
      {"mem-privacy", "Memorization of the top-k samples under private training", cmd_mem_privacy},
      {"verify", "Run every stage and check the bounds", cmd_verify},
      {"fit", "Fit the curve models to a score table or sweep", cmd_fit},
      {"report", "Consolidate run directories into one summary", cmd_report},
  };

  CLI::App app{"Curvature, memorization and privacy experiments"};
  app.require_subcommand(1);
  Options opt;
  std::map<std::string, Handler> handlers;
  for (const auto& [name, help, handler] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    handlers[name] = handler;
    sub->add_option("--config", opt.config, "JSON config overlaid on the preset")->check(CLI::ExistingFile);
    sub->add_option("--preset", opt.preset, "Base config")->check(CLI::IsMember({"desk", "paper-cifar", "smoke"}));
    sub->add_option("--out", opt.out, "Output directory (run directories go below it)");
    sub->add_option("--run-id", opt.run_id, "Run directory name");
    sub->add_option("--seed", opt.seed, "Root seed of every random stream");
    sub->add_option("--workers", opt.workers, "Worker threads (default: CURVLINK_WORKERS, then all cores)")
        ->check(CLI::PositiveNumber);
    if (name == "train" || name == "train-ensemble" || name == "curvature" || name == "memorization" ||
        name == "mem-privacy" || name == "dp-sweep")
      sub->add_option("--data", opt.data, "Dataset CSV instead of generating from the config");
    if (name == "curvature" || name == "memorization" || name == "mem-privacy" || name == "dp-sweep")
      sub->add_option("--ensemble", opt.ensemble, "Saved non-private ensemble directory");
    if (name == "mem-privacy" || name == "dp-sweep" || name == "fit")
      sub->add_option("--scores", opt.scores, "Score table CSV");
    if (name == "fit") sub->add_option("--sweep", opt.sweep, "dp_sweep.csv of a previous run");
    if (name == "train") sub->add_flag("--private", opt.private_training, "Use the dp_train section");
    if (name == "report") sub->add_option("run_dirs", opt.run_dirs, "Run directories");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  CLI::App* sub = app.get_subcommands().front();

  Context ctx;
  ctx.command = sub->get_name();
  opt.seed_set = sub->count("--seed") > 0;
  opt.workers_set = sub->count("--workers") > 0;
  try {
    ctx.cfg = resolve_config(opt);
    ctx.workers = opt.workers_set ? opt.workers : default_workers();
    ctx.dir = ctx.cfg.output_dir / ctx.cfg.run_id;
    if (fs::exists(ctx.dir) && !fs::is_empty(ctx.dir))
      throw ConfigError("run directory " + ctx.dir.string() + " already exists");
  } catch (...) {
    std::string type, message;
    const int code = exit_code_for(std::current_exception(), type, message);
    std::cerr << "error: " << message << '\n';
    return code;
  }
  ctx.digest = ctx.cfg.digest();
  ctx.opt = opt;

  const std::string started = utc_timestamp();
  const auto t0 = std::chrono::steady_clock::now();
  int code = 0;
  Json error = nullptr;
  try {
    fs::create_directories(ctx.dir);
    write_json_file(to_json(ctx.cfg), ctx.dir / "config.json");
    handlers.at(ctx.command)(ctx);
  } catch (...) {
    std::string type, message;
    code = exit_code_for(std::current_exception(), type, message);
    error = {{"type", type}, {"message", message}};
    std::cerr << "error: " << message << '\n';
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Json argv = Json::array();
  for (const auto& a : args) argv.push_back(a);
  Json manifest = {{"command", ctx.command},
                   {"run_id", ctx.cfg.run_id},
                   {"library_version", kLibraryVersion},
                   {"config_digest", ctx.digest},
                   {"seed", ctx.cfg.seed},
                   {"workers", ctx.workers},
                   {"argv", argv},
                   {"inputs", ctx.inputs},
                   {"outputs", Json::array()},
                   {"summary", ctx.summary},
                   {"started_at", started},
                   {"wall_time_seconds", wall},
                   {"exit_code", code},
                   {"error", error}};
  try {
    manifest["outputs"] = list_outputs(ctx.dir);
    write_json_file(manifest, ctx.dir / "manifest.json");
  } catch (const std::exception& e) {
    std::cerr << "error: cannot write manifest: " << e.what() << '\n';
    return code == 0 ? 2 : code;
  }
  std::cout << "run directory: " << ctx.dir.string() << '\n';
  return code;
}

}  // namespace curvlink
