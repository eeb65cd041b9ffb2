#include "curvlink/memorization.hpp"

#include <algorithm>
#include <cmath>

#include "curvlink/errors.hpp"

namespace curvlink {

std::size_t ScoreTable::valid_count() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const ScoreRow& r) { return r.mem.has_value(); }));
}

const ScoreRow& ScoreTable::row(std::int64_t sample_id) const {
  for (const auto& r : rows)
    if (r.sample_id == sample_id) return r;
  throw NotFoundError("sample_id " + std::to_string(sample_id) + " not in score table");
}

ScoreTable estimate_mem(std::span<const std::vector<std::uint8_t>> correct, const MaskSet& masks, const Dataset& S) {
  const int K = static_cast<int>(correct.size());
  if (K != masks.K()) throw ConfigError("correctness rows do not match mask count");
  if (masks.m() != S.size()) throw ConfigError("mask length does not match dataset size");
  for (const auto& row : correct)
    if (row.size() != S.size()) throw ConfigError("correctness row length does not match dataset size");

  ScoreTable t;
  t.rows.reserve(S.size());
  for (std::size_t i = 0; i < S.size(); ++i) {
    ScoreRow r;
    r.sample_id = S.examples[i].sample_id;
    int hit_in = 0;
    int hit_out = 0;
    for (int k = 0; k < K; ++k) {
      if (masks.included(k, i)) {
        ++r.in_count;
        hit_in += correct[static_cast<std::size_t>(k)][i];
      } else {
        ++r.out_count;
        hit_out += correct[static_cast<std::size_t>(k)][i];
      }
    }
    if (r.in_count > 0) r.p_in = static_cast<double>(hit_in) / r.in_count;
    if (r.out_count > 0) r.p_out = static_cast<double>(hit_out) / r.out_count;
    if (r.in_count == 0) {
      r.flags = "all_out";
    } else if (r.out_count == 0) {
      r.flags = "all_in";
    } else {
      r.mem = r.p_in - r.p_out;
      r.mem_stderr = std::sqrt(r.p_in * (1.0 - r.p_in) / r.in_count + r.p_out * (1.0 - r.p_out) / r.out_count);
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

ScoreTable estimate_mem(const EnsembleRecord& ensemble, const Dataset& S) {
  return estimate_mem(ensemble.correct, ensemble.masks, S);
}

void attach_curvature(ScoreTable& table, const Matrix& scores, const MaskSet& masks, ModelSubset which) {
  if (static_cast<std::size_t>(scores.cols()) != table.rows.size())
    throw ConfigError("curvature matrix does not match score table");
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    try {
      const MeanEstimate e = expected_curvature(scores, masks, i, which);
      table.rows[i].curv_mean = e.mean;
      table.rows[i].curv_stderr = e.stderr_;
    } catch (const InsufficientModelsError&) {
      table.rows[i].curv_mean.reset();
      table.rows[i].curv_stderr.reset();
    }
  }
}

std::vector<std::int64_t> topk_memorized(const ScoreTable& table, int k) {
  std::vector<const ScoreRow*> valid;
  for (const auto& r : table.rows)
    if (r.mem) valid.push_back(&r);
  if (k < 0 || static_cast<std::size_t>(k) > valid.size())
    throw ConfigError("top-k size " + std::to_string(k) + " exceeds " + std::to_string(valid.size()) + " valid rows");
  std::sort(valid.begin(), valid.end(), [](const ScoreRow* a, const ScoreRow* b) {
    if (*a->mem != *b->mem) return *a->mem > *b->mem;
    return a->sample_id < b->sample_id;
  });
  std::vector<std::int64_t> out;
  for (int j = 0; j < k; ++j) out.push_back(valid[static_cast<std::size_t>(j)]->sample_id);
  return out;
}

MemPrivacyResult privacy_mem_experiment(const ModelSpec& spec, const Dataset& S, std::span<const std::int64_t> topk,
                                        std::span<const double> eps_grid, int seeds_per_eps,
                                        const TrainConfig& cfg, std::uint64_t mask_seed, int workers,
                                        bool paired) {
  if (!cfg.dp) throw ConfigError("privacy-memorization experiment needs a dp config");
  if (topk.size() < 2) throw ConfigError("top-k set needs at least two samples");
  if (topk.size() >= S.size()) throw ConfigError("top-k set must leave a nonempty always-included set");
  if (seeds_per_eps < 2) throw ConfigError("seeds_per_eps must be >= 2");
  if (paired && seeds_per_eps % 2 != 0) throw ConfigError("paired half-sampling needs an even seeds_per_eps");
  if (eps_grid.empty()) throw ConfigError("eps grid is empty");

  std::vector<std::uint8_t> in_b(S.size(), 0);
  for (auto id : topk) {
    const std::size_t i = S.index_of(id);
    if (in_b[i]) throw ConfigError("duplicate sample id in top-k set");
    in_b[i] = 1;
  }
  std::vector<std::size_t> core;
  for (std::size_t i = 0; i < S.size(); ++i)
    if (!in_b[i]) core.push_back(i);

  MemPrivacyResult res;
  MaskSet first;
  MaskSet second;
  if (paired) {
    first = subsample_masks(S.size(), 0.5, seeds_per_eps / 2, mask_seed, core);
    second = first;
    for (auto& mask : second.masks)
      for (std::size_t i = 0; i < S.size(); ++i)
        if (in_b[i]) mask[i] = static_cast<std::uint8_t>(1 - mask[i]);
    res.masks = first;
    res.masks.masks.insert(res.masks.masks.end(), second.masks.begin(), second.masks.end());
  } else {
    res.masks = subsample_masks(S.size(), 0.5, seeds_per_eps, mask_seed, core);
  }
  for (double eps : eps_grid) {
    MemPrivacyPoint pt;
    pt.eps = eps;
    pt.bound = mem_upper_bound(eps);
    TrainConfig c = cfg;
    c.dp->target_epsilon = eps;
    try {
      const std::size_t m_train = res.masks.masks.empty() ? 0 : static_cast<std::size_t>(
          std::count(res.masks.masks[0].begin(), res.masks.masks[0].end(), std::uint8_t{1}));
      pt.sigma = resolve_noise_multiplier(c, m_train);
      EnsembleRecord ens;
      if (paired) {
        ens = train_ensemble(spec, S, first, c, workers);
        EnsembleRecord twin = train_ensemble(spec, S, second, c, workers);
        ens.masks = res.masks;
        for (auto& h : twin.models) ens.models.push_back(std::move(h));
        for (auto& row : twin.correct) ens.correct.push_back(std::move(row));
        for (auto& b : twin.budgets) ens.budgets.push_back(b);
      } else {
        ens = train_ensemble(spec, S, res.masks, c, workers);
      }
      const ScoreTable table = estimate_mem(ens, S);
      double sum = 0.0;
      double var = 0.0;
      for (auto id : topk) {
        const ScoreRow& r = table.row(id);
        if (!r.mem) continue;
        pt.sample_mem.push_back(*r.mem);
        sum += *r.mem;
        var += r.mem_stderr * r.mem_stderr;
      }
      pt.models = ens.K();
      pt.valid_samples = static_cast<int>(pt.sample_mem.size());
      if (pt.valid_samples == 0) throw InsufficientModelsError("no top-k sample was both included and held out", 0, 0);
      pt.mean_mem = sum / pt.valid_samples;
      pt.stderr_ = std::sqrt(var) / pt.valid_samples;
      res.ensembles.push_back(std::move(ens));
    } catch (const std::exception& e) {
      pt.status = e.what();
      res.ensembles.emplace_back();
    }
    res.curve.push_back(std::move(pt));
  }
  return res;
}

}  // namespace curvlink
