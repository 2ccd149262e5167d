#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "support/suite.hpp"

using namespace fewrel;
using fewrel::testing::episode_violation;

namespace {

EncodedDataset encoded(std::size_t relations, std::size_t instances, std::uint64_t seed = 1,
                       std::size_t offset = 0) {
  const Dataset ds = gen_synthetic(
      {.num_relations = relations, .instances_per_relation = instances, .relation_offset = offset}, seed);
  return encode_dataset(ds, build_vocab({&ds}), 16);
}

}  // namespace

TEST(SampleEpisode, PlainFiveWayOneShot) {
  const auto ds = encoded(10, 10);
  const EpisodeConfig cfg{};
  const Episode ep = sample_episode(ds, cfg, RngStream(1));
  EXPECT_EQ(ep.n_way(), 5u);
  EXPECT_EQ(ep.k_shot(), 1u);
  EXPECT_EQ(ep.queries.size(), 5u);
  EXPECT_EQ(ep.num_nota(), 0u);
  EXPECT_EQ(episode_violation(ep, cfg), "");
}

TEST(SampleEpisode, FuzzedStructure) {
  const auto ds = encoded(15, 12);
  RngStream meta(99);
  for (int t = 0; t < 2000; ++t) {
    EpisodeConfig cfg;
    cfg.n_way = 2 + meta.uniform_index(9);
    cfg.k_shot = 1 + meta.uniform_index(5);
    cfg.queries_per_relation = 1 + meta.uniform_index(3);
    cfg.nota_rate = meta.uniform_index(4) * 0.25;
    cfg.exact_nota_count = meta.bernoulli(0.5);
    if (cfg.n_way >= 15 && cfg.nota_rate > 0) cfg.nota_rate = 0;
    const Episode ep = sample_episode(ds, cfg, RngStream(7, t));
    ASSERT_EQ(episode_violation(ep, cfg), "") << "trial " << t;
  }
}

TEST(SampleEpisode, NotaFractionConcentrates) {
  const auto ds = encoded(20, 10);
  const EpisodeConfig cfg{.nota_rate = 0.5};
  std::size_t nota = 0, total = 0;
  for (int e = 0; e < 10000; ++e) {
    const Episode ep = sample_episode(ds, cfg, RngStream(3, e));
    nota += ep.num_nota();
    total += ep.queries.size();
  }
  EXPECT_NEAR(static_cast<double>(nota) / total, 0.5, 0.02);
}

TEST(SampleEpisode, ExactCountMode) {
  const auto ds = encoded(20, 10);
  const EpisodeConfig cfg{.queries_per_relation = 2, .nota_rate = 0.3, .exact_nota_count = true};
  for (int e = 0; e < 100; ++e) EXPECT_EQ(sample_episode(ds, cfg, RngStream(3, e)).num_nota(), 3u);
  EXPECT_EQ(exact_inset_count(10, 0.3), 7u);
  EXPECT_EQ(exact_inset_count(5, 0.5), 2u);
  EXPECT_EQ(exact_inset_count(5, 0.15), 4u);
  EXPECT_EQ(exact_inset_count(20, 0.15), 17u);
}

TEST(SampleEpisode, ZeroRateMatchesNotaFreePath) {
  // With alpha = 0 the sampled support and queries depend only on substream 0.
  const auto ds = encoded(12, 10);
  const Episode a = sample_episode(ds, {.nota_rate = 0.0}, RngStream(5, 1));
  const Episode b = sample_episode(ds, {.nota_rate = 0.5}, RngStream(5, 1));
  EXPECT_EQ(a.relations, b.relations);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.support[i][0].ref, b.support[i][0].ref);
}

TEST(SampleEpisode, ErrorsNamed) {
  const auto exact = encoded(5, 10);
  try {
    sample_episode(exact, {.nota_rate = 0.3}, RngStream(1));
    FAIL();
  } catch (const SamplingError& e) {
    EXPECT_NE(std::string(e.what()).find("no NOTA source relations"), std::string::npos);
  }
  EXPECT_THROW(sample_episode(encoded(4, 10), {}, RngStream(1)), SamplingError);
  EXPECT_THROW(sample_episode(encoded(8, 3), {.k_shot = 3}, RngStream(1)), SamplingError);
  EXPECT_THROW(sample_episode(exact, {.nota_rate = 1.5}, RngStream(1)), std::invalid_argument);
  EXPECT_THROW(sample_episode(exact, {.n_way = 1}, RngStream(1)), std::invalid_argument);
}

TEST(SampleEpisode, DeterministicPerStream) {
  const auto ds = encoded(12, 10);
  const EpisodeConfig cfg{.k_shot = 2, .nota_rate = 0.5};
  const Episode a = sample_episode(ds, cfg, RngStream(5, 3));
  const Episode b = sample_episode(ds, cfg, RngStream(5, 3));
  EXPECT_EQ(a.labels, b.labels);
  for (std::size_t j = 0; j < a.queries.size(); ++j) EXPECT_EQ(a.queries[j].ref, b.queries[j].ref);
}

TEST(NotaSupport, NeverFromExcluded) {
  const auto train = encoded(35, 10);
  const std::vector<RelationId> excluded = {0, 3, 7, 11, 20};
  for (int t = 0; t < 1000; ++t)
    for (const auto& inst : sample_nota_support(train, excluded, 5, RngStream(2, t)))
      ASSERT_EQ(std::count(excluded.begin(), excluded.end(), inst.relation), 0);
  const std::vector<RelationId> all = {0, 1};
  EXPECT_THROW(sample_nota_support(encoded(2, 5), all, 1, RngStream(1)), SamplingError);
}

TEST(NotaSupport, DistinctRelationsMatchOracle) {
  // 30 outside relations, K = 5: E[distinct] = 30(1 - (29/30)^5) ~ 4.677.
  const auto train = encoded(35, 10);
  const std::vector<RelationId> excluded = {0, 1, 2, 3, 4};
  const double analytic = 30.0 * (1.0 - std::pow(29.0 / 30.0, 5));
  std::mt19937_64 gen(123);
  std::uniform_int_distribution<int> pick(0, 29);
  const int trials = 20000;
  double sampler = 0.0, oracle = 0.0;
  for (int t = 0; t < trials; ++t) {
    std::set<RelationId> seen;
    for (const auto& inst : sample_nota_support(train, excluded, 5, RngStream(4, t))) seen.insert(inst.relation);
    sampler += static_cast<double>(seen.size());
    std::set<int> mc;
    for (int j = 0; j < 5; ++j) mc.insert(pick(gen));
    oracle += static_cast<double>(mc.size());
  }
  sampler /= trials;
  oracle /= trials;
  EXPECT_NEAR(oracle, analytic, 0.02);
  EXPECT_NEAR(sampler, oracle, 0.03);
  EXPECT_NEAR(sampler, 4.7, 0.05);
}

TEST(NotaSupport, OneShotUniformChiSquare) {
  // 30 cells, 29 dof; 0.999 quantile 58.30.
  const auto train = encoded(35, 10);
  const std::vector<RelationId> excluded = {0, 1, 2, 3, 4};
  std::vector<int> counts(35, 0);
  const int n = 10000;
  for (int t = 0; t < n; ++t) ++counts[sample_nota_support(train, excluded, 1, RngStream(6, t))[0].relation];
  double chi2 = 0.0;
  for (int r = 5; r < 35; ++r) chi2 += std::pow(counts[r] - n / 30.0, 2) / (n / 30.0);
  EXPECT_LT(chi2, 58.30);
}

TEST(DomainBatch, BalancedDistinctDeterministic) {
  const auto src = encoded(5, 20, 1);
  const auto tgt = encoded(5, 20, 2, 5);
  const DomainBatch b = sample_domain_batch(src, tgt, 16, RngStream(8, 1));
  const auto labels = b.labels();
  EXPECT_EQ(std::count(labels.begin(), labels.end(), 0), 16);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), 1), 16);
  std::set<InstanceRef> s, t;
  for (const auto& x : b.source) s.insert(x.ref);
  for (const auto& x : b.target) t.insert(x.ref);
  EXPECT_EQ(s.size(), 16u);
  EXPECT_EQ(t.size(), 16u);
  const DomainBatch c = sample_domain_batch(src, tgt, 16, RngStream(8, 1));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(b.source[i].ref, c.source[i].ref);
  EXPECT_THROW(sample_domain_batch(src, tgt, 101, RngStream(1)), SamplingError);
}
