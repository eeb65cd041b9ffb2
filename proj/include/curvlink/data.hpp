#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "curvlink/nn.hpp"
#include "curvlink/rng.hpp"

namespace curvlink {

struct TailSubpop {
  int cls = 0;
  int size = 1;
  // Distance of the sub-population centre from its class centre.
  double offset_scale = 1.0;
  // Class whose centre the sub-population is displaced from; -1 means cls.
  // An anchor other than cls plants an atypical cluster inside another
  // class's territory.
  int anchor = -1;
  bool operator==(const TailSubpop&) const = default;
};

// Long-tailed Gaussian-mixture generator. Head samples come from one cluster
// per class; each tail sub-population is a small displaced cluster.
struct GenSpec {
  int n_classes = 3;
  int dim = 16;
  int head_per_class = 100;
  std::vector<TailSubpop> tail_subpops;
  double mislabel_fraction = 0.0;
  double cluster_std = 1.0;
  // Norm of every class centre (centres sit on coordinate axes when dim >= n_classes).
  double class_separation = 4.0;
  // Exact copies of head samples appended after the tail.
  int duplicate_pairs = 0;
  std::uint64_t seed = 0;

  void validate() const;
  int tail_count() const;
  int total() const;
  std::string digest() const;
  bool operator==(const GenSpec&) const = default;
};

struct BayesRisk {
  double risk = 0.0;
  double stderr_ = 0.0;
};

struct Dataset {
  std::vector<Example> examples;
  int n_classes = 0;
  std::string genspec_digest;
  std::optional<double> bayes_risk;
  // Planted structure, by sample_id.
  std::vector<std::int64_t> mislabeled;
  std::vector<std::pair<std::int64_t, std::int64_t>> duplicate_pairs;

  std::size_t size() const { return examples.size(); }
  int dim() const { return examples.empty() ? 0 : static_cast<int>(examples.front().x.size()); }
  // Position of sample_id in examples; throws NotFoundError.
  std::size_t index_of(std::int64_t sample_id) const;
  const Example& by_id(std::int64_t sample_id) const { return examples[index_of(sample_id)]; }
  Dataset subset(std::span<const std::uint8_t> mask) const;
  Dataset subset_indices(std::span<const std::size_t> indices) const;
};

Dataset generate(const GenSpec& spec);

// Monte-Carlo risk of the Bayes-optimal classifier under the generating
// mixture (0-1 loss), Rao-Blackwellized over the label. n_mc >= 1e4.
BayesRisk bayes_risk(const GenSpec& spec, int n_mc, std::uint64_t seed);

// Class-conditional mixture geometry used by generate() and bayes_risk().
struct MixtureComponent {
  Vector mean;
  double weight = 0.0;
  int cls = 0;
  bool tail = false;
  // Index into GenSpec::tail_subpops; -1 for head components.
  int subpop = -1;
};
std::vector<MixtureComponent> mixture_components(const GenSpec& spec);
// P(y | component) including label noise on tail components.
double label_probability(const GenSpec& spec, const MixtureComponent& c, int y);

// n i.i.d. draws from the mixture described by spec (components weighted by
// size, labels drawn from label_probability), with sample ids starting at
// first_id. Used for holdout sets that share the training distribution.
Dataset draw_from_mixture(const GenSpec& spec, int n, std::uint64_t seed, std::int64_t first_id);

Dataset leave_one_out(const Dataset& S, std::int64_t sample_id);

// Number of examples present in one dataset but not the other, or present in
// both under the same sample_id with different content.
int dataset_distance(const Dataset& a, const Dataset& b);

struct AlphaMode {
  enum class Kind { kBallUniform, kGaussian };
  Kind kind = Kind::kGaussian;
  // Per-coordinate standard deviation in Gaussian mode; <= 0 selects
  // upsilon/sqrt(d) so that E[alpha^T alpha] = upsilon^2.
  double sigma = 0.0;
};

struct Adjacent {
  Dataset dataset;
  Vector alpha;
  std::int64_t new_sample_id = 0;
};

// Appends z_i + alpha with alpha zero-mean. Ball mode samples uniformly in the
// upsilon ball; Gaussian mode truncates each coordinate at 6 sigma.
Adjacent make_adjacent(const Dataset& S, std::int64_t sample_id, double upsilon, AlphaMode mode,
                       std::uint64_t seed);
Vector draw_alpha(int dim, double upsilon, AlphaMode mode, CounterRng& rng);

// E||alpha||^3 in closed form for each mode (untruncated Gaussian).
double alpha_third_moment(int dim, double upsilon, AlphaMode mode);

struct MaskSet {
  std::vector<std::vector<std::uint8_t>> masks;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> frozen_core;

  int K() const { return static_cast<int>(masks.size()); }
  std::size_t m() const { return masks.empty() ? 0 : masks.front().size(); }
  bool included(int k, std::size_t i) const { return masks[k][i] != 0; }
  int count_duplicate_masks() const;
};

// K masks over m indices. Indices in frozen_core are always included; of the
// remaining indices floor(ratio * remaining) are drawn uniformly without
// replacement, independently per mask.
MaskSet subsample_masks(std::size_t m, double ratio, int K, std::uint64_t seed,
                        std::span<const std::size_t> frozen_core = {});
MaskSet all_true_masks(std::size_t m, int K);

}  // namespace curvlink
