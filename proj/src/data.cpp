#include "curvlink/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <map>
#include <set>
#include <sstream>

#include "curvlink/digest.hpp"
#include "curvlink/errors.hpp"

namespace curvlink {

void GenSpec::validate() const {
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (head_per_class < 0) throw ConfigError("head_per_class must be >= 0");
  if (!(mislabel_fraction >= 0.0 && mislabel_fraction < 1.0))
    throw ConfigError("mislabel_fraction must lie in [0, 1)");
  if (!(cluster_std > 0.0)) throw ConfigError("cluster_std must be > 0");
  if (!(class_separation >= 0.0)) throw ConfigError("class_separation must be >= 0");
  for (const auto& t : tail_subpops) {
    if (t.cls < 0 || t.cls >= n_classes) throw ConfigError("tail sub-population class out of range");
    if (t.size < 1) throw ConfigError("tail sub-population size must be >= 1");
    if (!(t.offset_scale >= 0.0)) throw ConfigError("tail offset_scale must be >= 0");
    if (t.anchor < -1 || t.anchor >= n_classes) throw ConfigError("tail sub-population anchor out of range");
  }
  if (duplicate_pairs < 0) throw ConfigError("duplicate_pairs must be >= 0");
  if (duplicate_pairs > n_classes * head_per_class) throw ConfigError("not enough head samples to duplicate");
  if (total() < 2) throw ConfigError("generator spec yields fewer than 2 samples");
}

int GenSpec::tail_count() const {
  int n = 0;
  for (const auto& t : tail_subpops) n += t.size;
  return n;
}

int GenSpec::total() const { return n_classes * head_per_class + tail_count() + duplicate_pairs; }

std::string GenSpec::digest() const {
  std::ostringstream s;
  s << "genspec/v1;" << n_classes << ';' << dim << ';' << head_per_class << ';';
  for (const auto& t : tail_subpops) s << t.cls << ',' << t.size << ',' << format_double(t.offset_scale) << ',' << t.anchor << '|';
  s << ';' << format_double(mislabel_fraction) << ';' << format_double(cluster_std) << ';'
    << format_double(class_separation) << ';' << duplicate_pairs << ';' << seed;
  return digest_hex(s.str());
}

std::size_t Dataset::index_of(std::int64_t sample_id) const {
  // Generated datasets keep ids contiguous from 0; fall back to a scan otherwise.
  if (sample_id >= 0 && static_cast<std::size_t>(sample_id) < examples.size() &&
      examples[static_cast<std::size_t>(sample_id)].sample_id == sample_id)
    return static_cast<std::size_t>(sample_id);
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (examples[i].sample_id == sample_id) return i;
  throw NotFoundError("sample_id " + std::to_string(sample_id) + " not in dataset");
}

Dataset Dataset::subset(std::span<const std::uint8_t> mask) const {
  if (mask.size() != examples.size()) throw ConfigError("mask length does not match dataset");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(i);
  return subset_indices(idx);
}

Dataset Dataset::subset_indices(std::span<const std::size_t> indices) const {
  Dataset out;
  out.n_classes = n_classes;
  out.genspec_digest = genspec_digest;
  out.bayes_risk = bayes_risk;
  out.examples.reserve(indices.size());
  for (auto i : indices) out.examples.push_back(examples.at(i));
  return out;
}

namespace {

Vector class_centre(const GenSpec& spec, int c) {
  Vector mu = Vector::Zero(spec.dim);
  if (spec.dim >= spec.n_classes) {
    mu(c) = spec.class_separation;
  } else {
    const double angle = 2.0 * std::numbers::pi * c / spec.n_classes;
    mu(0) = spec.class_separation * std::cos(angle);
    if (spec.dim > 1) mu(1) = spec.class_separation * std::sin(angle);
  }
  return mu;
}

Vector random_unit(int dim, CounterRng& rng) {
  Vector u(dim);
  double n2 = 0.0;
  do {
    for (int k = 0; k < dim; ++k) u(k) = rng.normal();
    n2 = u.squaredNorm();
  } while (n2 < 1e-24);
  return u / std::sqrt(n2);
}

// Labels a mislabelled tail sample may receive: any class other than its own
// and, when possible, other than the class whose centre it is anchored to.
std::vector<int> wrong_labels(const GenSpec& spec, const TailSubpop& tp) {
  std::vector<int> out;
  for (int y = 0; y < spec.n_classes; ++y)
    if (y != tp.cls && y != tp.anchor) out.push_back(y);
  if (out.empty())
    for (int y = 0; y < spec.n_classes; ++y)
      if (y != tp.cls) out.push_back(y);
  return out;
}

// Stream b values separating the pieces of generate().
enum : std::uint64_t { kStreamTailDir = 1, kStreamPoints = 2, kStreamMislabel = 3, kStreamHoldout = 4 };

}  // namespace

std::vector<MixtureComponent> mixture_components(const GenSpec& spec) {
  std::vector<MixtureComponent> comps;
  const double total = spec.n_classes * spec.head_per_class + spec.tail_count();
  for (int c = 0; c < spec.n_classes; ++c)
    comps.push_back({class_centre(spec, c), spec.head_per_class / total, c, false, -1});
  for (std::size_t t = 0; t < spec.tail_subpops.size(); ++t) {
    const auto& tp = spec.tail_subpops[t];
    CounterRng rng(spec.seed, Purpose::kData, t, kStreamTailDir);
    Vector mu = class_centre(spec, tp.anchor >= 0 ? tp.anchor : tp.cls) + tp.offset_scale * random_unit(spec.dim, rng);
    comps.push_back({std::move(mu), tp.size / total, tp.cls, true, static_cast<int>(t)});
  }
  return comps;
}

double label_probability(const GenSpec& spec, const MixtureComponent& c, int y) {
  if (!c.tail) return y == c.cls ? 1.0 : 0.0;
  if (y == c.cls) return 1.0 - spec.mislabel_fraction;
  const auto wrong = wrong_labels(spec, spec.tail_subpops[static_cast<std::size_t>(c.subpop)]);
  if (std::find(wrong.begin(), wrong.end(), y) == wrong.end()) return 0.0;
  return spec.mislabel_fraction / static_cast<double>(wrong.size());
}

Dataset generate(const GenSpec& spec) {
  spec.validate();
  const auto comps = mixture_components(spec);
  Dataset ds;
  ds.n_classes = spec.n_classes;
  ds.genspec_digest = spec.digest();
  std::int64_t next_id = 0;
  auto draw_cluster = [&](const Vector& mu, int cls, int subpop, int count, std::uint64_t stream) {
    CounterRng rng(spec.seed, Purpose::kData, stream, kStreamPoints);
    for (int j = 0; j < count; ++j) {
      Example z;
      z.x.resize(spec.dim);
      for (int k = 0; k < spec.dim; ++k) z.x(k) = mu(k) + spec.cluster_std * rng.normal();
      z.y = cls;
      z.sample_id = next_id++;
      z.subpop_id = subpop;
      ds.examples.push_back(std::move(z));
    }
  };
  for (int c = 0; c < spec.n_classes; ++c)
    draw_cluster(comps[c].mean, c, c, spec.head_per_class, 1000 + c);
  const std::size_t tail_begin = ds.examples.size();
  for (std::size_t t = 0; t < spec.tail_subpops.size(); ++t) {
    const auto& comp = comps[spec.n_classes + t];
    draw_cluster(comp.mean, comp.cls, spec.n_classes + static_cast<int>(t), spec.tail_subpops[t].size,
                 100000 + t);
  }
  const std::size_t n_tail = ds.examples.size() - tail_begin;

  // Random order of tail positions: the first n_mis are mislabelled, the next
  // duplicate_pairs are copied.
  std::vector<std::size_t> order(n_tail);
  std::iota(order.begin(), order.end(), tail_begin);
  CounterRng pick(spec.seed, Purpose::kData, 0, kStreamMislabel);
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const std::size_t j = i + pick.below(order.size() - i);
    std::swap(order[i], order[j]);
  }
  const auto n_mis = static_cast<std::size_t>(std::lround(spec.mislabel_fraction * n_tail));
  std::vector<std::size_t> mis(order.begin(), order.begin() + n_mis);
  std::sort(mis.begin(), mis.end());
  for (auto i : mis) {
    auto& z = ds.examples[i];
    const auto wrong = wrong_labels(spec, spec.tail_subpops[static_cast<std::size_t>(z.subpop_id - spec.n_classes)]);
    z.y = wrong[pick.below(wrong.size())];
    ds.mislabeled.push_back(z.sample_id);
  }
  std::vector<std::size_t> head(tail_begin);
  std::iota(head.begin(), head.end(), std::size_t{0});
  for (int i = 0; i < spec.duplicate_pairs; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + pick.below(head.size() - static_cast<std::size_t>(i));
    std::swap(head[static_cast<std::size_t>(i)], head[j]);
  }
  std::vector<std::size_t> dup(head.begin(), head.begin() + spec.duplicate_pairs);
  std::sort(dup.begin(), dup.end());
  for (auto i : dup) {
    Example copy = ds.examples[i];
    copy.sample_id = next_id++;
    ds.duplicate_pairs.emplace_back(ds.examples[i].sample_id, copy.sample_id);
    ds.examples.push_back(std::move(copy));
  }
  ds.bayes_risk = bayes_risk(spec, 20000, spec.seed).risk;
  return ds;
}

Dataset draw_from_mixture(const GenSpec& spec, int n, std::uint64_t seed, std::int64_t first_id) {
  spec.validate();
  if (n < 1) throw ConfigError("draw_from_mixture needs n >= 1");
  const auto comps = mixture_components(spec);
  std::vector<double> cum(comps.size());
  double acc = 0.0;
  for (std::size_t c = 0; c < comps.size(); ++c) cum[c] = (acc += comps[c].weight);
  Dataset ds;
  ds.n_classes = spec.n_classes;
  ds.genspec_digest = spec.digest();
  CounterRng rng(seed, Purpose::kData, 0, kStreamHoldout);
  for (int s = 0; s < n; ++s) {
    const double u = rng.uniform() * acc;
    const auto c = std::min(static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin()),
                            comps.size() - 1);
    const auto& comp = comps[c];
    Example z;
    z.x.resize(spec.dim);
    for (int k = 0; k < spec.dim; ++k) z.x(k) = comp.mean(k) + spec.cluster_std * rng.normal();
    double v = rng.uniform();
    z.y = spec.n_classes - 1;
    for (int y = 0; y < spec.n_classes; ++y) {
      v -= label_probability(spec, comp, y);
      if (v < 0.0) {
        z.y = y;
        break;
      }
    }
    z.sample_id = first_id + s;
    z.subpop_id = comp.tail ? spec.n_classes + comp.subpop : comp.cls;
    ds.examples.push_back(std::move(z));
  }
  return ds;
}

BayesRisk bayes_risk(const GenSpec& spec, int n_mc, std::uint64_t seed) {
  spec.validate();
  if (n_mc < 10000) throw ConfigError("bayes_risk needs n_mc >= 1e4");
  const auto comps = mixture_components(spec);
  std::vector<double> cum(comps.size());
  double acc = 0.0;
  for (std::size_t c = 0; c < comps.size(); ++c) cum[c] = (acc += comps[c].weight);
  if (acc <= 0.0) throw ConfigError("mixture has zero mass");

  CounterRng rng(seed, Purpose::kBayesMc);
  const double inv2s2 = 1.0 / (2.0 * spec.cluster_std * spec.cluster_std);
  std::vector<double> logw(comps.size());
  Vector post(spec.n_classes);
  Vector x(spec.dim);
  double sum = 0.0;
  double sum2 = 0.0;
  for (int s = 0; s < n_mc; ++s) {
    const double u = rng.uniform() * acc;
    const auto c = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    const auto& comp = comps[std::min(c, comps.size() - 1)];
    for (int k = 0; k < spec.dim; ++k) x(k) = comp.mean(k) + spec.cluster_std * rng.normal();
    double mx = -INFINITY;
    for (std::size_t j = 0; j < comps.size(); ++j) {
      logw[j] = comps[j].weight > 0.0 ? std::log(comps[j].weight) - (x - comps[j].mean).squaredNorm() * inv2s2
                                      : -INFINITY;
      mx = std::max(mx, logw[j]);
    }
    post.setZero();
    for (std::size_t j = 0; j < comps.size(); ++j) {
      const double w = std::exp(logw[j] - mx);
      for (int y = 0; y < spec.n_classes; ++y) post(y) += w * label_probability(spec, comps[j], y);
    }
    const double r = 1.0 - post.maxCoeff() / post.sum();
    sum += r;
    sum2 += r * r;
  }
  const double mean = sum / n_mc;
  const double var = std::max(0.0, sum2 / n_mc - mean * mean);
  return {mean, std::sqrt(var / (n_mc - 1))};
}

Dataset leave_one_out(const Dataset& S, std::int64_t sample_id) {
  const std::size_t idx = S.index_of(sample_id);
  Dataset out = S;
  out.examples.erase(out.examples.begin() + static_cast<std::ptrdiff_t>(idx));
  return out;
}

int dataset_distance(const Dataset& a, const Dataset& b) {
  std::map<std::int64_t, const Example*> in_a;
  for (const auto& z : a.examples) in_a[z.sample_id] = &z;
  int diff = 0;
  std::set<std::int64_t> seen;
  for (const auto& zb : b.examples) {
    seen.insert(zb.sample_id);
    auto it = in_a.find(zb.sample_id);
    if (it == in_a.end()) {
      ++diff;
    } else {
      const Example& za = *it->second;
      if (za.y != zb.y || za.subpop_id != zb.subpop_id || za.x != zb.x) ++diff;
    }
  }
  for (const auto& [id, _] : in_a)
    if (!seen.count(id)) ++diff;
  return diff;
}

Vector draw_alpha(int dim, double upsilon, AlphaMode mode, CounterRng& rng) {
  Vector a(dim);
  if (mode.kind == AlphaMode::Kind::kBallUniform) {
    const Vector u = random_unit(dim, rng);
    const double r = upsilon * std::pow(rng.uniform(), 1.0 / dim);
    return r * u;
  }
  const double sigma = mode.sigma > 0.0 ? mode.sigma : upsilon / std::sqrt(static_cast<double>(dim));
  for (int k = 0; k < dim; ++k) {
    double v;
    do {
      v = rng.normal();
    } while (std::abs(v) > 6.0);
    a(k) = sigma * v;
  }
  return a;
}

Adjacent make_adjacent(const Dataset& S, std::int64_t sample_id, double upsilon, AlphaMode mode,
                       std::uint64_t seed) {
  if (!(upsilon > 0.0)) throw ConfigError("upsilon must be > 0");
  const Example& zi = S.by_id(sample_id);
  CounterRng rng(seed, Purpose::kAlpha, static_cast<std::uint64_t>(sample_id));
  Adjacent out{S, draw_alpha(static_cast<int>(zi.x.size()), upsilon, mode, rng), 0};
  std::int64_t max_id = -1;
  for (const auto& z : S.examples) max_id = std::max(max_id, z.sample_id);
  Example zj = zi;
  zj.x += out.alpha;
  zj.sample_id = max_id + 1;
  out.new_sample_id = zj.sample_id;
  out.dataset.examples.push_back(std::move(zj));
  return out;
}

double alpha_third_moment(int dim, double upsilon, AlphaMode mode) {
  if (mode.kind == AlphaMode::Kind::kBallUniform)
    return std::pow(upsilon, 3) * dim / (dim + 3.0);
  const double sigma = mode.sigma > 0.0 ? mode.sigma : upsilon / std::sqrt(static_cast<double>(dim));
  // Third moment of a chi variable with dim degrees of freedom.
  return std::pow(sigma, 3) * std::pow(2.0, 1.5) * std::exp(std::lgamma((dim + 3) / 2.0) - std::lgamma(dim / 2.0));
}

int MaskSet::count_duplicate_masks() const {
  std::set<std::vector<std::uint8_t>> seen(masks.begin(), masks.end());
  return K() - static_cast<int>(seen.size());
}

MaskSet subsample_masks(std::size_t m, double ratio, int K, std::uint64_t seed,
                        std::span<const std::size_t> frozen_core) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  if (K < 1) throw ConfigError("mask count K must be >= 1");
  std::vector<std::uint8_t> core(m, 0);
  for (auto i : frozen_core) {
    if (i >= m) throw ConfigError("frozen core index out of range");
    core[i] = 1;
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < m; ++i)
    if (!core[i]) rest.push_back(i);
  if (!rest.empty() && ratio * static_cast<double>(rest.size()) < 1.0)
    throw ConfigError("ratio * m < 1: masks would be empty");
  const auto pick = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(rest.size()) + 1e-9));

  MaskSet out;
  out.ratio = ratio;
  out.seed = seed;
  out.frozen_core.assign(frozen_core.begin(), frozen_core.end());
  std::sort(out.frozen_core.begin(), out.frozen_core.end());
  out.masks.reserve(static_cast<std::size_t>(K));
  std::vector<std::size_t> perm;
  for (int k = 0; k < K; ++k) {
    CounterRng rng(seed, Purpose::kMask, static_cast<std::uint64_t>(k));
    perm = rest;
    for (std::size_t i = 0; i < pick; ++i) {
      const std::size_t j = i + rng.below(perm.size() - i);
      std::swap(perm[i], perm[j]);
    }
    std::vector<std::uint8_t> mask = core;
    for (std::size_t i = 0; i < pick; ++i) mask[perm[i]] = 1;
    out.masks.push_back(std::move(mask));
  }
  return out;
}

MaskSet all_true_masks(std::size_t m, int K) {
  MaskSet out;
  out.ratio = 1.0;
  out.masks.assign(static_cast<std::size_t>(K), std::vector<std::uint8_t>(m, 1));
  return out;
}

}  // namespace curvlink
