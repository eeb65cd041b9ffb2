#include "curvlink/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>
#include <vector>

#include "curvlink/digest.hpp"
#include "curvlink/errors.hpp"
#include "curvlink/rng.hpp"

namespace curvlink {

void ExperimentConfig::validate() const {
  if (K < 2) throw ConfigError("experiment.K must be >= 2");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("experiment.mask_ratio must lie in (0, 1)");
  if (n_bins < 2) throw ConfigError("experiment.n_bins must be >= 2");
  if (top_k < 2) throw ConfigError("experiment.top_k must be >= 2");
  if (eps_grid.empty()) throw ConfigError("experiment.eps_grid is empty");
  for (double e : eps_grid)
    if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("experiment.eps_grid entries must be finite and > 0");
  if (seeds_per_eps < 2) throw ConfigError("experiment.seeds_per_eps must be >= 2");
  if (paired && seeds_per_eps % 2 != 0) throw ConfigError("experiment.seeds_per_eps must be even when paired");
  if (probes < 1) throw ConfigError("experiment.probes must be >= 1");
  if (rho_pairs < 1) throw ConfigError("experiment.rho_pairs must be >= 1");
  if (holdout_per_class < 1) throw ConfigError("experiment.holdout_per_class must be >= 1");
  if (!(upsilon > 0.0)) throw ConfigError("experiment.upsilon must be > 0");
}

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find('/') != std::string::npos)
    throw ConfigError("run_id must be a nonempty name without '/'");
  data.validate();
  model.validate();
  if (model.input_dim() != data.dim) throw ConfigError("model input dimension differs from data.dim");
  if (model.num_classes() != data.n_classes) throw ConfigError("model class count differs from data.n_classes");
  train.validate();
  if (train.dp) throw ConfigError("train must not carry a dp section; use dp_train");
  dp_train.validate();
  if (!dp_train.dp) throw ConfigError("dp_train needs a dp section");
  curvature.validate();
  experiment.validate();
}

std::string RunConfig::digest() const {
  Json j = to_json(*this);
  j.erase("run_id");
  j.erase("output_dir");
  return digest_hex(j.dump());
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.run_id = "desk";
  c.data.n_classes = 3;
  c.data.dim = 16;
  c.data.head_per_class = 628;
  const int sizes[] = {2, 3, 4, 5, 6, 8, 10, 12, 16, 20, 30, 40};
  for (int t = 0; t < 12; ++t) {
    TailSubpop tp;
    tp.cls = t % 3;
    tp.size = sizes[t];
    tp.offset_scale = 6.0;
    tp.anchor = (t + 1) % 3;
    c.data.tail_subpops.push_back(tp);
  }
  c.data.mislabel_fraction = 0.05;
  c.data.cluster_std = 1.0;
  c.data.class_separation = 8.0;
  c.data.duplicate_pairs = 8;

  c.model.layer_dims = {16, 128, 3};
  c.model.activation = Activation::kTanh;
  c.model.loss = LossKind::kCrossEntropy;

  c.train.epochs = 60;
  c.train.batch_size = 32;
  c.train.lr = 0.5;
  c.train.lr_drop_epochs = {36, 48};
  c.train.lr_drop_factor = 0.1;

  c.dp_train.epochs = 90;
  c.dp_train.batch_size = 64;
  c.dp_train.lr = 0.3;
  c.dp_train.lr_drop_epochs = {};
  DpConfig dp;
  dp.clip_norm = 1.0;
  dp.noise_multiplier = 2.0;
  dp.delta = 1e-5;
  c.dp_train.dp = dp;

  c.curvature.h = 1e-3;
  c.curvature.n = 10;
  c.curvature.mode = CurvMode::kNormalized;
  return c;
}

RunConfig RunConfig::paper_cifar() {
  RunConfig c = desk();
  c.run_id = "paper-cifar";
  c.train = TrainConfig::paper_cifar();
  return c;
}

RunConfig RunConfig::smoke() {
  RunConfig c = desk();
  c.run_id = "smoke";
  c.data.dim = 8;
  c.data.head_per_class = 40;
  c.data.tail_subpops.clear();
  const int sizes[] = {2, 3, 5, 8, 10, 12};
  for (int t = 0; t < 6; ++t) {
    TailSubpop tp;
    tp.cls = t % 3;
    tp.size = sizes[t];
    tp.offset_scale = 6.0;
    tp.anchor = (t + 1) % 3;
    c.data.tail_subpops.push_back(tp);
  }
  c.data.mislabel_fraction = 0.1;
  c.data.duplicate_pairs = 2;
  c.model.layer_dims = {8, 16, 3};
  c.train.epochs = 12;
  c.train.batch_size = 16;
  c.train.lr_drop_epochs = {8, 10};
  c.dp_train.epochs = 6;
  c.dp_train.batch_size = 16;
  c.curvature.n = 4;
  c.experiment.K = 16;
  c.experiment.n_bins = 10;
  c.experiment.top_k = 4;
  c.experiment.eps_grid = {1.0, 2.0, 4.0, 8.0};
  c.experiment.seeds_per_eps = 4;
  c.experiment.probes = 4;
  c.experiment.rho_pairs = 8;
  c.experiment.holdout_per_class = 20;
  return c;
}

RunConfig RunConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper-cifar") return paper_cifar();
  if (name == "smoke") return smoke();
  throw ConfigError("unknown preset '" + name + "'");
}

RunSeeds derive_seeds(std::uint64_t seed) {
  auto d = [seed](std::uint64_t k) { return mix64(seed ^ (0x9e3779b97f4a7c15ULL * k)); };
  return RunSeeds{seed, d(1), d(2), d(3), d(4), d(5), d(6), d(7)};
}

namespace {

template <class T>
struct IsVector : std::false_type {};
template <class U>
struct IsVector<std::vector<U>> : std::true_type {};

// nlohmann converts 2.5 to an int silently; integer fields must hold integers.
template <class T>
bool integral_ok(const Json& v) {
  if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    return v.is_number_integer() && (std::is_signed_v<T> || v.is_number_unsigned());
  } else if constexpr (IsVector<T>::value) {
    if (!v.is_array()) return true;
    for (const auto& e : v)
      if (!integral_ok<typename T::value_type>(e)) return false;
    return true;
  } else {
    return true;
  }
}

// Walks an object, recording which keys were consumed so the rest can be
// rejected as unknown.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!integral_ok<T>(*it)) throw ConfigError(where_ + "." + key + " must be an integer");
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + where_ + "." + it.key() + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

GenSpec genspec_overlay(const Json& j, GenSpec g, const std::string& where, bool allow_seed) {
  Reader r(j, where);
  r.get("n_classes", g.n_classes);
  r.get("dim", g.dim);
  r.get("head_per_class", g.head_per_class);
  r.get("mislabel_fraction", g.mislabel_fraction);
  r.get("cluster_std", g.cluster_std);
  r.get("class_separation", g.class_separation);
  r.get("duplicate_pairs", g.duplicate_pairs);
  if (allow_seed) r.get("seed", g.seed);
  if (const Json* tails = r.child("tail_subpops")) {
    if (!tails->is_array()) throw ConfigError(where + ".tail_subpops must be an array");
    g.tail_subpops.clear();
    for (const auto& t : *tails) {
      Reader tr(t, where + ".tail_subpops[]");
      TailSubpop tp;
      tr.get("cls", tp.cls);
      tr.get("size", tp.size);
      tr.get("offset", tp.offset_scale);
      tr.get("anchor", tp.anchor);
      tr.finish();
      g.tail_subpops.push_back(tp);
    }
  }
  r.finish();
  return g;
}

TrainConfig train_overlay(const Json& j, TrainConfig c, const std::string& where, bool allow_seed) {
  Reader r(j, where);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("lr_drop_epochs", c.lr_drop_epochs);
  r.get("lr_drop_factor", c.lr_drop_factor);
  if (allow_seed) r.get("seed", c.seed);
  if (const Json* dp = r.child("dp")) {
    if (dp->is_null()) {
      c.dp.reset();
    } else {
      DpConfig d = c.dp.value_or(DpConfig{});
      Reader dr(*dp, where + ".dp");
      dr.get("clip_norm", d.clip_norm);
      dr.get_optional("noise_multiplier", d.noise_multiplier);
      dr.get_optional("target_epsilon", d.target_epsilon);
      dr.get("delta", d.delta);
      dr.finish();
      c.dp = d;
    }
  }
  r.finish();
  return c;
}

CurvParams curv_overlay(const Json& j, CurvParams p, const std::string& where, bool allow_seed) {
  Reader r(j, where);
  r.get("h", p.h);
  r.get("n", p.n);
  if (allow_seed) r.get("seed", p.seed);
  std::string mode = to_string(p.mode);
  r.get("mode", mode);
  p.mode = curv_mode_from_string(mode);
  r.finish();
  return p;
}

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json to_json(const GenSpec& g) {
  Json tails = Json::array();
  for (const auto& t : g.tail_subpops)
    tails.push_back({{"cls", t.cls}, {"size", t.size}, {"offset", t.offset_scale}, {"anchor", t.anchor}});
  return {{"n_classes", g.n_classes},
          {"dim", g.dim},
          {"head_per_class", g.head_per_class},
          {"tail_subpops", tails},
          {"mislabel_fraction", g.mislabel_fraction},
          {"cluster_std", g.cluster_std},
          {"class_separation", g.class_separation},
          {"duplicate_pairs", g.duplicate_pairs},
          {"seed", g.seed}};
}

Json to_json(const ModelSpec& s) {
  return {{"layer_dims", s.layer_dims},
          {"activation", to_string(s.activation)},
          {"loss", to_string(s.loss)},
          {"clamp_bound", s.clamp_bound}};
}

Json to_json(const TrainConfig& c) {
  Json j = {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"lr_drop_epochs", c.lr_drop_epochs},
            {"lr_drop_factor", c.lr_drop_factor},
            {"seed", c.seed}};
  if (c.dp) {
    j["dp"] = {{"clip_norm", c.dp->clip_norm},
               {"noise_multiplier", opt(c.dp->noise_multiplier)},
               {"target_epsilon", opt(c.dp->target_epsilon)},
               {"delta", c.dp->delta}};
  } else {
    j["dp"] = nullptr;
  }
  return j;
}

Json to_json(const CurvParams& p) {
  return {{"h", p.h}, {"n", p.n}, {"mode", to_string(p.mode)}, {"seed", p.seed}};
}

Json to_json(const ExperimentConfig& e) {
  return {{"K", e.K},
          {"mask_ratio", e.mask_ratio},
          {"n_bins", e.n_bins},
          {"top_k", e.top_k},
          {"eps_grid", e.eps_grid},
          {"seeds_per_eps", e.seeds_per_eps},
          {"paired", e.paired},
          {"probes", e.probes},
          {"rho_pairs", e.rho_pairs},
          {"holdout_per_class", e.holdout_per_class},
          {"upsilon", e.upsilon},
          {"curv_subset", to_string(e.curv_subset)},
          {"unit_loss_bound", e.unit_loss_bound}};
}

Json to_json(const RunConfig& c) {
  Json data = to_json(c.data);
  data.erase("seed");
  Json train = to_json(c.train);
  train.erase("seed");
  train.erase("dp");
  Json dp_train = to_json(c.dp_train);
  dp_train.erase("seed");
  Json curv = to_json(c.curvature);
  curv.erase("seed");
  return {{"run_id", c.run_id},
          {"output_dir", c.output_dir.generic_string()},
          {"seed", c.seed},
          {"data", data},
          {"model", to_json(c.model)},
          {"train", train},
          {"dp_train", dp_train},
          {"curvature", curv},
          {"experiment", to_json(c.experiment)}};
}

Json to_json(const PrivacyBudget& b) {
  Json rdp = Json::array();
  for (const auto& p : b.rdp) rdp.push_back({{"order", p.order}, {"value", p.value}});
  return {{"epsilon", b.epsilon},
          {"delta", b.delta},
          {"steps", b.steps},
          {"q", b.q},
          {"sigma", b.sigma},
          {"best_order", b.best_order},
          {"accounting_mode", b.accounting_mode},
          {"rdp", rdp}};
}

GenSpec genspec_from_json(const Json& j, GenSpec base) { return genspec_overlay(j, std::move(base), "data", true); }

ModelSpec model_spec_from_json(const Json& j, ModelSpec s) {
  Reader r(j, "model");
  r.get("layer_dims", s.layer_dims);
  std::string act = to_string(s.activation);
  std::string loss = to_string(s.loss);
  r.get("activation", act);
  r.get("loss", loss);
  r.get("clamp_bound", s.clamp_bound);
  r.finish();
  s.activation = activation_from_string(act);
  s.loss = loss_from_string(loss);
  return s;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig base) {
  return train_overlay(j, std::move(base), "train", true);
}

CurvParams curv_params_from_json(const Json& j, CurvParams base) {
  return curv_overlay(j, base, "curvature", true);
}

ExperimentConfig experiment_from_json(const Json& j, ExperimentConfig e) {
  Reader r(j, "experiment");
  r.get("K", e.K);
  r.get("mask_ratio", e.mask_ratio);
  r.get("n_bins", e.n_bins);
  r.get("top_k", e.top_k);
  r.get("eps_grid", e.eps_grid);
  r.get("seeds_per_eps", e.seeds_per_eps);
  r.get("paired", e.paired);
  r.get("probes", e.probes);
  r.get("rho_pairs", e.rho_pairs);
  r.get("holdout_per_class", e.holdout_per_class);
  r.get("upsilon", e.upsilon);
  std::string subset = to_string(e.curv_subset);
  r.get("curv_subset", subset);
  e.curv_subset = model_subset_from_string(subset);
  r.get("unit_loss_bound", e.unit_loss_bound);
  r.finish();
  return e;
}

RunConfig run_config_from_json(const Json& j, RunConfig c) {
  Reader r(j, "config");
  r.get("run_id", c.run_id);
  std::string out = c.output_dir.generic_string();
  r.get("output_dir", out);
  c.output_dir = out;
  r.get("seed", c.seed);
  if (const Json* s = r.child("data")) c.data = genspec_overlay(*s, c.data, "data", false);
  if (const Json* s = r.child("model")) c.model = model_spec_from_json(*s, c.model);
  if (const Json* s = r.child("train")) c.train = train_overlay(*s, c.train, "train", false);
  if (const Json* s = r.child("dp_train")) c.dp_train = train_overlay(*s, c.dp_train, "dp_train", false);
  if (const Json* s = r.child("curvature")) c.curvature = curv_overlay(*s, c.curvature, "curvature", false);
  if (const Json* s = r.child("experiment")) c.experiment = experiment_from_json(*s, c.experiment);
  r.finish();
  return c;
}

PrivacyBudget privacy_budget_from_json(const Json& j) {
  PrivacyBudget b;
  Reader r(j, "budget");
  r.get("epsilon", b.epsilon);
  r.get("delta", b.delta);
  r.get("steps", b.steps);
  r.get("q", b.q);
  r.get("sigma", b.sigma);
  r.get("best_order", b.best_order);
  r.get("accounting_mode", b.accounting_mode);
  if (const Json* rdp = r.child("rdp")) {
    for (const auto& p : *rdp) {
      Reader pr(p, "budget.rdp[]");
      RdpPoint pt;
      pr.get("order", pt.order);
      pr.get("value", pt.value);
      pr.finish();
      b.rdp.push_back(pt);
    }
  }
  r.finish();
  return b;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace curvlink
