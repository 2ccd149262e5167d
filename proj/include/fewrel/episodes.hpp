#pragma once

// N-way K-shot episode sampling with none-of-the-above (NOTA) queries, NOTA
// support sampling for the (N+1)-way prototype baseline, and balanced
// source/target batches for the domain discriminator.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewrel/corpus.hpp"
#include "fewrel/rng.hpp"

namespace fewrel {

/// Query label meaning "none of the episode's relations".
inline constexpr int kNotaLabel = -1;

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpisodeConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t queries_per_relation = 1;
  double nota_rate = 0.0;
  /// Exactly floor((1-alpha)*N*Q) in-set queries instead of per-query Bernoulli draws,
  /// so the NOTA share is never below alpha.
  bool exact_nota_count = false;

  void validate() const {
    if (n_way < 2) throw std::invalid_argument("episode config: N must be >= 2");
    if (k_shot < 1) throw std::invalid_argument("episode config: K must be >= 1");
    if (queries_per_relation < 1) throw std::invalid_argument("episode config: Q must be >= 1");
    if (!(nota_rate >= 0.0 && nota_rate <= 1.0))
      throw std::invalid_argument("episode config: NOTA rate must lie in [0, 1]");
  }
  std::size_t total_queries() const { return n_way * queries_per_relation; }
};

struct Episode {
  std::vector<RelationId> relations;                 // R, ids in the sampled dataset
  std::vector<std::vector<EncodedInstance>> support;  // N x K
  std::vector<EncodedInstance> queries;
  std::vector<int> labels;  // index into relations, or kNotaLabel
  std::vector<EncodedInstance> nota_support;  // filled only for the (N+1)-way baseline

  std::size_t n_way() const { return relations.size(); }
  std::size_t k_shot() const { return support.empty() ? 0 : support.front().size(); }
  std::size_t num_nota() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNotaLabel));
  }
};

/// Number of in-set queries under exact-count mode.
inline std::size_t exact_inset_count(std::size_t total, double alpha) {
  const double x = (1.0 - alpha) * static_cast<double>(total);
  return static_cast<std::size_t>(std::floor(x + 1e-9));
}

/// Draws one episode. Substream 0 of `rng` picks relations, support and
/// in-set queries; substream 1 decides which query slots are NOTA; substream 2
/// draws NOTA query instances. With alpha = 0 the substream 0 draws are
/// exactly those of a sampler without a NOTA path.
inline Episode sample_episode(const EncodedDataset& ds, const EpisodeConfig& cfg, const RngStream& rng) {
  cfg.validate();
  const std::size_t n = cfg.n_way, k = cfg.k_shot, q = cfg.queries_per_relation;
  if (ds.num_relations() < n)
    throw SamplingError("dataset has " + std::to_string(ds.num_relations()) + " relations, episode needs " +
                        std::to_string(n));
  if (cfg.nota_rate > 0.0 && ds.num_relations() <= n)
    throw SamplingError("no NOTA source relations: dataset has exactly N relations");

  RngStream main = rng.substream(0);
  RngStream slots = rng.substream(1);
  RngStream nota_draws = rng.substream(2);

  Episode ep;
  auto rel_idx = main.sample_without_replacement(ds.num_relations(), n);
  std::vector<std::vector<std::size_t>> picks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pool = ds.by_relation[rel_idx[i]];
    if (pool.size() < k + q)
      throw SamplingError("relation '" + ds.inventory.name(static_cast<RelationId>(rel_idx[i])) + "' has " +
                          std::to_string(pool.size()) + " instances, episode needs " + std::to_string(k + q));
    picks[i] = main.sample_without_replacement(pool.size(), k + q);
    ep.relations.push_back(static_cast<RelationId>(rel_idx[i]));
    std::vector<EncodedInstance> sup;
    for (std::size_t j = 0; j < k; ++j) sup.push_back(pool[picks[i][j]]);
    ep.support.push_back(std::move(sup));
  }

  const std::size_t total = n * q;
  std::vector<bool> is_nota(total, false);
  if (cfg.nota_rate > 0.0) {
    if (cfg.exact_nota_count) {
      const std::size_t nota = total - exact_inset_count(total, cfg.nota_rate);
      for (std::size_t s : slots.sample_without_replacement(total, nota)) is_nota[s] = true;
    } else {
      for (std::size_t s = 0; s < total; ++s) is_nota[s] = slots.bernoulli(cfg.nota_rate);
    }
  }

  std::vector<std::size_t> outside;
  if (cfg.nota_rate > 0.0) {
    std::set<std::size_t> inside(rel_idx.begin(), rel_idx.end());
    for (std::size_t r = 0; r < ds.num_relations(); ++r)
      if (!inside.count(r)) outside.push_back(r);
  }
  std::set<InstanceRef> used_nota;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      const std::size_t slot = i * q + j;
      if (!is_nota[slot]) {
        ep.queries.push_back(ds.by_relation[rel_idx[i]][picks[i][k + j]]);
        ep.labels.push_back(static_cast<int>(i));
        continue;
      }
      // Redraw on repeats so one NOTA instance is not queried twice.
      for (int attempt = 0;; ++attempt) {
        const std::size_t r = outside[nota_draws.uniform_index(outside.size())];
        const auto& pool = ds.by_relation[r];
        const auto& inst = pool[nota_draws.uniform_index(pool.size())];
        if (used_nota.insert(inst.ref).second || attempt >= 64) {
          ep.queries.push_back(inst);
          break;
        }
      }
      ep.labels.push_back(kNotaLabel);
    }
  return ep;
}

/// K instances from relations outside `excluded` (ids of `train`): each picks
/// a uniform outside relation, then a uniform instance of it.
inline std::vector<EncodedInstance> sample_nota_support(const EncodedDataset& train,
                                                        std::span<const RelationId> excluded, std::size_t k,
                                                        RngStream rng) {
  std::vector<std::size_t> outside;
  for (std::size_t r = 0; r < train.num_relations(); ++r)
    if (std::find(excluded.begin(), excluded.end(), static_cast<RelationId>(r)) == excluded.end())
      outside.push_back(r);
  if (outside.empty()) throw SamplingError("no outside relations available for NOTA support");
  std::vector<EncodedInstance> out;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& pool = train.by_relation[outside[rng.uniform_index(outside.size())]];
    out.push_back(pool[rng.uniform_index(pool.size())]);
  }
  return out;
}

struct DomainBatch {
  std::vector<EncodedInstance> source;  // domain label 0
  std::vector<EncodedInstance> target;  // domain label 1

  std::vector<int> labels() const {
    std::vector<int> l(source.size(), 0);
    l.insert(l.end(), target.size(), 1);
    return l;
  }
};

namespace episodes_detail {

inline std::vector<const EncodedInstance*> flatten(const EncodedDataset& ds) {
  std::vector<const EncodedInstance*> all;
  for (const auto& rel : ds.by_relation)
    for (const auto& inst : rel) all.push_back(&inst);
  return all;
}

}  // namespace episodes_detail

inline DomainBatch sample_domain_batch(const EncodedDataset& source, const EncodedDataset& target,
                                       std::size_t half_size, const RngStream& rng) {
  const auto src = episodes_detail::flatten(source);
  const auto tgt = episodes_detail::flatten(target);
  if (src.empty() || tgt.empty()) throw SamplingError("domain batch: empty corpus");
  if (half_size > src.size() || half_size > tgt.size())
    throw SamplingError("domain batch: half size " + std::to_string(half_size) + " exceeds corpus size");
  RngStream s0 = rng.substream(0), s1 = rng.substream(1);
  DomainBatch b;
  for (std::size_t i : s0.sample_without_replacement(src.size(), half_size)) b.source.push_back(*src[i]);
  for (std::size_t i : s1.sample_without_replacement(tgt.size(), half_size)) b.target.push_back(*tgt[i]);
  return b;
}

}  // namespace fewrel
