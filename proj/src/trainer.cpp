#include "curvlink/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>

#include <omp.h>

#include "curvlink/digest.hpp"
#include "curvlink/errors.hpp"
#include "curvlink/rng.hpp"

namespace curvlink {

void DpConfig::validate() const {
  if (!(clip_norm > 0.0)) throw ConfigError("dp clip_norm must be > 0");
  if (!noise_multiplier && !target_epsilon)
    throw ConfigError("dp config needs noise_multiplier, target_epsilon or both");
  if (noise_multiplier && !(*noise_multiplier > 0.0)) throw ConfigError("noise_multiplier must be > 0");
  if (target_epsilon && !(*target_epsilon > 0.0)) throw ConfigError("target_epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("dp delta must lie in (0, 1)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  for (std::size_t i = 1; i < lr_drop_epochs.size(); ++i)
    if (lr_drop_epochs[i] <= lr_drop_epochs[i - 1])
      throw ConfigError("lr_drop_epochs must be strictly increasing");
  if (!(lr_drop_factor > 0.0)) throw ConfigError("lr_drop_factor must be > 0");
  if (dp) dp->validate();
}

double TrainConfig::lr_at(int epoch) const {
  double r = lr;
  for (int e : lr_drop_epochs)
    if (epoch >= e) r *= lr_drop_factor;
  return r;
}

std::string TrainConfig::digest() const {
  std::ostringstream s;
  s << "train/v1;" << epochs << ';' << batch_size << ';' << format_double(lr) << ';';
  for (int e : lr_drop_epochs) s << e << ',';
  s << ';' << format_double(lr_drop_factor) << ';' << seed;
  if (dp) {
    s << ";dp;" << format_double(dp->clip_norm) << ';'
      << (dp->noise_multiplier ? format_double(*dp->noise_multiplier) : "-") << ';'
      << (dp->target_epsilon ? format_double(*dp->target_epsilon) : "-") << ';' << format_double(dp->delta);
  }
  return digest_hex(s.str());
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper_cifar() {
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 128;
  c.lr = 0.001;
  c.lr_drop_epochs = {12, 16};
  c.lr_drop_factor = 0.1;
  return c;
}

namespace {

int dp_batch(const TrainConfig& cfg, std::size_t m) {
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), m));
}

std::int64_t dp_steps_per_epoch(const TrainConfig& cfg, std::size_t m) {
  return static_cast<std::int64_t>(m) / dp_batch(cfg, m);
}

double dp_sampling_rate(const TrainConfig& cfg, std::size_t m) {
  return static_cast<double>(dp_batch(cfg, m)) / static_cast<double>(m);
}

void sgd_update(Model& model, const std::vector<Layer>& grad, double scale) {
  for (std::size_t l = 0; l < grad.size(); ++l) {
    model.layers[l].weight.noalias() -= scale * grad[l].weight;
    model.layers[l].bias.noalias() -= scale * grad[l].bias;
  }
}

std::string where(int epoch, int batch) {
  return " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")";
}

TrainResult run_training(const ModelSpec& spec, const Dataset& S, const TrainConfig& cfg, bool private_run) {
  spec.validate();
  cfg.validate();
  if (S.size() == 0) throw ConfigError("cannot train on an empty dataset");
  const std::size_t m = S.size();

  TrainResult res;
  res.model = mlp_init(spec, cfg.seed);
  res.model.provenance.train_config_digest = cfg.digest();
  Model& model = res.model;

  const Matrix X = stack_inputs(S.examples);
  std::vector<int> labels;
  labels.reserve(m);
  for (const auto& z : S.examples) labels.push_back(z.y);

  // DP bookkeeping.
  double sigma = 0.0;
  double clip = 0.0;
  double q = 1.0;
  std::vector<RdpPoint> per_step;
  const auto orders = default_orders();
  auto eps_after = [&](std::int64_t steps) {
    std::vector<RdpPoint> r = per_step;
    for (auto& p : r) p.value *= static_cast<double>(steps);
    return rdp_to_eps(r, cfg.dp->delta).epsilon;
  };
  const int batch = private_run ? dp_batch(cfg, m) : std::min<int>(cfg.batch_size, static_cast<int>(m));
  if (private_run) {
    sigma = resolve_noise_multiplier(cfg, m);
    clip = cfg.dp->clip_norm;
    q = dp_sampling_rate(cfg, m);
    per_step = rdp_subsampled_gaussian(q, sigma, 1, orders);
  }
  const std::size_t n_batches =
      private_run ? static_cast<std::size_t>(dp_steps_per_epoch(cfg, m)) : (m + batch - 1) / batch;

  std::vector<std::size_t> perm(m);
  std::vector<int> batch_labels;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    CounterRng shuffle(cfg.seed, Purpose::kShuffle, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = 0; i + 1 < m; ++i) std::swap(perm[i], perm[i + shuffle.below(m - i)]);

    const double lr = cfg.lr_at(epoch);
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      if (private_run && cfg.dp->target_epsilon && eps_after(res.steps + 1) > *cfg.dp->target_epsilon) {
        res.stop_reason = "budget";
        stop = true;
        break;
      }
      const std::size_t begin = b * batch;
      const std::size_t end = std::min(m, begin + batch);
      std::vector<Eigen::Index> idx(perm.begin() + begin, perm.begin() + end);
      batch_labels.clear();
      for (auto i : idx) batch_labels.push_back(labels[static_cast<std::size_t>(i)]);
      const Matrix Xb = X(Eigen::all, idx);
      const int B = static_cast<int>(idx.size());

      std::optional<BatchPass> pass;
      try {
        pass.emplace(model, Xb, batch_labels);
      } catch (const NumericError& e) {
        throw NumericError(std::string("training diverged: ") + e.what() + where(epoch, static_cast<int>(b)));
      }
      if (!pass->losses().allFinite())
        throw NumericError("training diverged: non-finite loss" + where(epoch, static_cast<int>(b)));
      loss_sum += pass->losses().sum();
      for (int i = 0; i < B; ++i) {
        Eigen::Index arg;
        pass->logits().col(i).maxCoeff(&arg);
        if (static_cast<int>(arg) == batch_labels[static_cast<std::size_t>(i)]) ++correct;
      }
      seen += static_cast<std::size_t>(B);

      if (!private_run) {
        sgd_update(model, pass->weighted_sum(Vector::Constant(B, 1.0 / B)), lr);
      } else {
        const Vector norms = pass->per_sample_sq_norms().cwiseSqrt();
        Vector coeff(B);
        for (int i = 0; i < B; ++i) {
          coeff(i) = norms(i) > clip ? clip / norms(i) : 1.0;
          const double clipped = coeff(i) * norms(i);
          if (!(clipped <= clip * (1.0 + 1e-12)))
            throw NumericError("clipped gradient norm exceeds clip bound" + where(epoch, static_cast<int>(b)));
          stats.max_clipped_norm = std::max(stats.max_clipped_norm, clipped);
        }
        std::vector<Layer> g = pass->weighted_sum(coeff);
        CounterRng noise(cfg.seed, Purpose::kDpNoise, static_cast<std::uint64_t>(res.steps));
        const double scale = sigma * clip;
        for (auto& L : g) {
          for (int r = 0; r < L.weight.rows(); ++r)
            for (int c = 0; c < L.weight.cols(); ++c) L.weight(r, c) += scale * noise.normal();
          for (int r = 0; r < L.bias.size(); ++r) L.bias(r) += scale * noise.normal();
        }
        sgd_update(model, g, lr / B);
      }
      ++res.steps;
      for (const auto& L : model.layers)
        if (!L.weight.allFinite() || !L.bias.allFinite())
          throw NumericError("training diverged: non-finite weights" + where(epoch, static_cast<int>(b)));
    }
    if (seen > 0) {
      stats.train_loss = loss_sum / static_cast<double>(seen);
      stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
      if (private_run) stats.epsilon = eps_after(res.steps);
      res.history.push_back(stats);
    }
  }
  if (private_run) {
    res.budget = account(q, sigma, res.steps, cfg.dp->delta, orders);
    if (cfg.dp->target_epsilon && res.budget->epsilon > *cfg.dp->target_epsilon)
      throw NumericError("privacy accounting exceeded the target epsilon");
  }
  return res;
}

}  // namespace

double resolve_noise_multiplier(const TrainConfig& cfg, std::size_t m) {
  if (!cfg.dp) throw ConfigError("no dp config");
  cfg.dp->validate();
  if (cfg.dp->noise_multiplier) return *cfg.dp->noise_multiplier;
  const std::int64_t steps = dp_steps_per_epoch(cfg, m) * cfg.epochs;
  return calibrate_noise(*cfg.dp->target_epsilon, cfg.dp->delta, dp_sampling_rate(cfg, m), steps);
}

TrainResult train(const ModelSpec& spec, const Dataset& S, const TrainConfig& cfg) {
  if (cfg.dp) throw ConfigError("train() called with a dp config; use dp_train()");
  return run_training(spec, S, cfg, false);
}

TrainResult dp_train(const ModelSpec& spec, const Dataset& S, const TrainConfig& cfg) {
  if (!cfg.dp) throw ConfigError("dp_train() needs a dp config");
  return run_training(spec, S, cfg, true);
}

TrainResult train_any(const ModelSpec& spec, const Dataset& S, const TrainConfig& cfg) {
  return cfg.dp ? dp_train(spec, S, cfg) : train(spec, S, cfg);
}

std::vector<std::uint8_t> correctness_row(const Model& model, const Dataset& S) {
  const auto pred = predict_batch(model, stack_inputs(S.examples));
  std::vector<std::uint8_t> row(S.size());
  for (std::size_t i = 0; i < S.size(); ++i) row[i] = pred[i] == S.examples[i].y ? 1 : 0;
  return row;
}

namespace {

struct MemberResult {
  TrainResult result;
  std::vector<std::uint8_t> correct;
};

MemberResult train_member(const ModelSpec& spec, const Dataset& S, const MaskSet& masks,
                          const TrainConfig& cfg, int k) {
  TrainConfig c = cfg;
  c.seed = member_seed(cfg.seed, k);
  const Dataset sub = S.subset(masks.masks[static_cast<std::size_t>(k)]);
  MemberResult r{train_any(spec, sub, c), {}};
  r.result.model.provenance.mask_id = k;
  r.correct = correctness_row(r.result.model, S);
  return r;
}

void check_ensemble_inputs(const Dataset& S, const MaskSet& masks) {
  if (masks.K() < 2) throw ConfigError("ensemble needs K >= 2 masks");
  if (masks.m() != S.size()) throw ConfigError("mask length does not match dataset size");
}

EnsembleRecord assemble(std::vector<MemberResult>& members, const MaskSet& masks, const TrainConfig& cfg) {
  EnsembleRecord rec;
  rec.masks = masks;
  rec.config_digest = cfg.digest();
  for (auto& mr : members) {
    rec.models.push_back(std::move(mr.result.model));
    rec.budgets.push_back(std::move(mr.result.budget));
    rec.correct.push_back(std::move(mr.correct));
  }
  return rec;
}

}  // namespace

EnsembleRecord train_ensemble(const ModelSpec& spec, const Dataset& S, const MaskSet& masks,
                              const TrainConfig& cfg, int workers) {
  check_ensemble_inputs(S, masks);
  if (workers < 1) throw ConfigError("workers must be >= 1");
  const int K = masks.K();
  std::vector<MemberResult> members(static_cast<std::size_t>(K));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(K));
#pragma omp parallel for num_threads(workers) schedule(dynamic, 1)
  for (int k = 0; k < K; ++k) {
    try {
      members[static_cast<std::size_t>(k)] = train_member(spec, S, masks, cfg, k);
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (int k = 0; k < K; ++k) {
    if (!errors[static_cast<std::size_t>(k)]) continue;
    try {
      std::rethrow_exception(errors[static_cast<std::size_t>(k)]);
    } catch (const NumericError& e) {
      throw NumericError("ensemble member " + std::to_string(k) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("ensemble member " + std::to_string(k) + ": " + e.what());
    }
  }
  return assemble(members, masks, cfg);
}

EnsembleRecord train_ensemble_serial(const ModelSpec& spec, const Dataset& S, const MaskSet& masks,
                                     const TrainConfig& cfg) {
  check_ensemble_inputs(S, masks);
  std::vector<MemberResult> members;
  for (int k = 0; k < masks.K(); ++k) {
    try {
      members.push_back(train_member(spec, S, masks, cfg, k));
    } catch (const NumericError& e) {
      throw NumericError("ensemble member " + std::to_string(k) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("ensemble member " + std::to_string(k) + ": " + e.what());
    }
  }
  return assemble(members, masks, cfg);
}

}  // namespace curvlink
