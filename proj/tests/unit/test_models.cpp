#include <gtest/gtest.h>

#include <cmath>

#include "support/suite.hpp"

using namespace fewrel;
using namespace fewrel::testing;

namespace {

// N x K x 2 pair outputs from (B0, B1) pairs.
Tensor pair_tensor(const std::vector<std::vector<std::pair<double, double>>>& b) {
  std::vector<double> data;
  for (const auto& row : b)
    for (const auto& [b0, b1] : row) {
      data.push_back(b0);
      data.push_back(b1);
    }
  return Tensor({b.size(), b.front().size(), 2}, std::move(data));
}

RelationScores scores_of(std::vector<double> v, bool has_nota) {
  const std::size_t n = v.size();
  return {Tensor({n}, std::move(v)), has_nota, ScoreProvenance::pair_average};
}

}  // namespace

TEST(ProtoLogits, ZeroDistanceWins) {
  Tape tape;
  RngStream rng(1);
  const Tensor support = random_tensor({4, 1, 3}, rng);
  const Tensor q({3}, {support.data[6], support.data[7], support.data[8]});
  const auto s = proto_logits(tape, support, q);
  EXPECT_EQ(s.scores.data[2], 0.0);
  for (std::size_t i : {0, 1, 3}) EXPECT_LT(s.scores.data[i], 0.0);
  EXPECT_EQ(classify(s).label, 2);
}

TEST(ProtoLogits, HandArithmetic) {
  Tape tape;
  // Class A {(0,0),(2,0)} -> (1,0); class B {(0,4),(0,4)} -> (0,4); query (1,1).
  const Tensor support({2, 2, 2}, {0, 0, 2, 0, 0, 4, 0, 4});
  const auto s = proto_logits(tape, support, Tensor({2}, {1, 1}));
  EXPECT_EQ(s.scores.data, (std::vector<double>{-1.0, -10.0}));
  EXPECT_FALSE(s.has_nota);
}

TEST(ProtoLogits, TranslationInvariant) {
  RngStream rng(2);
  for (int t = 0; t < 50; ++t) {
    Tape tape;
    Tensor support = random_tensor({5, 3, 4}, rng);
    Tensor q = random_tensor({4}, rng);
    const Tensor shift = random_tensor({4}, rng, 10.0);
    const auto a = proto_logits(tape, support, q);
    for (std::size_t i = 0; i < support.size(); ++i) support.data[i] += shift.data[i % 4];
    for (std::size_t i = 0; i < 4; ++i) q.data[i] += shift.data[i];
    const auto b = proto_logits(tape, support, q);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(a.scores.data[i], b.scores.data[i], 1e-9);
  }
}

TEST(ProtoLogits, ShapeErrors) {
  Tape tape;
  EXPECT_THROW(proto_logits(tape, Tensor::zeros({2, 1, 3}), Tensor::zeros({4})), ShapeError);
  EXPECT_THROW(proto_logits(tape, Tensor::zeros({1, 1, 3}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW(proto_nota_logits(tape, Tensor::zeros({2, 1, 3}), Tensor::zeros({2, 4}), Tensor::zeros({3})),
               ShapeError);
}

TEST(ProtoNotaLogits, ExtendsProtoWithNotaPrototype) {
  RngStream rng(3);
  for (int t = 0; t < 20; ++t) {
    Tape tape;
    const Tensor support = random_tensor({5, 2, 3}, rng);
    const Tensor nota = random_tensor({4, 3}, rng);
    const Tensor q = random_tensor({3}, rng);
    const auto base = proto_logits(tape, support, q);
    const auto ext = proto_nota_logits(tape, support, nota, q);
    ASSERT_EQ(ext.scores.size(), 6u);
    EXPECT_TRUE(ext.has_nota);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(ext.scores.data[i], base.scores.data[i]);
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0.0;
      for (std::size_t j = 0; j < 4; ++j) m += nota.data[j * 3 + c];
      m /= 4.0;
      d += (q.data[c] - m) * (q.data[c] - m);
    }
    EXPECT_NEAR(ext.scores.data[5], -d, 1e-12);
  }
  Tape tape;
  const Tensor support({2, 1, 2}, {10, 10, -10, -10});
  const auto s = proto_nota_logits(tape, support, Tensor({1, 2}, {0, 0}), Tensor({2}, {0.1, 0.0}));
  EXPECT_EQ(classify(s).label, kNotaLabel);
}

TEST(PairScores, HandArithmetic) {
  Tape tape;
  const auto s = pair_scores(tape, pair_tensor({{{0.8, 0.2}, {0.6, 0.4}}, {{-1.0, 1.0}, {0.0, 0.0}}}));
  ASSERT_EQ(s.scores.size(), 3u);
  EXPECT_NEAR(s.scores.data[0], 0.3, 1e-15);
  EXPECT_NEAR(s.scores.data[1], 0.5, 1e-15);
  EXPECT_NEAR(s.scores.data[2], -0.5, 1e-15);
}

TEST(PairScores, OneShotCollapse) {
  Tape tape;
  const auto s = pair_scores(tape, pair_tensor({{{0.4, -1.0}}, {{-0.2, 2.0}}, {{0.1, 0.5}}}));
  EXPECT_EQ(s.scores.data, (std::vector<double>{-1.0, 2.0, 0.5, -0.2}));
}

TEST(PairScores, ShiftingDifferentRaisesNotaOnly) {
  RngStream rng(4);
  Tape tape;
  const Tensor b = random_tensor({4, 3, 2}, rng);
  Tensor shifted = b;
  const double c = 0.75;
  for (std::size_t i = 0; i < shifted.size(); i += 2) shifted.data[i] += c;
  const auto s0 = pair_scores(tape, b), s1 = pair_scores(tape, shifted);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s0.scores.data[i], s1.scores.data[i]);
  EXPECT_NEAR(s1.scores.data[4], s0.scores.data[4] + c, 1e-12);
}

TEST(PairScores, MatchesBruteForce) {
  RngStream rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.uniform_index(10), k = 1 + rng.uniform_index(5);
    std::vector<std::vector<std::pair<double, double>>> b(n);
    for (auto& row : b)
      for (std::size_t j = 0; j < k; ++j) row.emplace_back(rng.normal(), rng.normal());
    Tape tape;
    const auto s = pair_scores(tape, pair_tensor(b));
    const auto ref = brute_pair_scores(b);
    for (std::size_t i = 0; i <= n; ++i) ASSERT_NEAR(s.scores.data[i], ref[i], 1e-12);
  }
}

TEST(Classify, HandProbabilities) {
  const auto p = classify(scores_of({0.3, 0.5, -0.5}, true));
  const auto ref = softmax_ld({0.3L, 0.5L, -0.5L});
  const std::vector<double> frozen = {0.374429221646896867, 0.457328884055285401, 0.168241894297817732};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(p.probabilities[i], static_cast<double>(ref[i]), 1e-15);
    EXPECT_NEAR(p.probabilities[i], frozen[i], 1e-15);
  }
  EXPECT_EQ(p.label, 1);
}

TEST(Classify, UniformAndNormalized) {
  const auto u = classify(scores_of(std::vector<double>(6, 0.7), true));
  for (double v : u.probabilities) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
  RngStream rng(6);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(2 + rng.uniform_index(10));
    for (auto& x : v) x = 20.0 * rng.normal();
    const auto p = classify(scores_of(v, true));
    double s = 0.0;
    for (double x : p.probabilities) s += x;
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Classify, IgnoreModeNeverPredictsNota) {
  const auto strict = classify(scores_of({0.1, 0.2, 5.0}, true));
  const auto ignore = classify(scores_of({0.1, 0.2, 5.0}, true), true);
  EXPECT_EQ(strict.label, kNotaLabel);
  EXPECT_EQ(ignore.label, 1);
  EXPECT_EQ(ignore.probabilities.size(), 2u);
  EXPECT_THROW(classify(scores_of({0.1, std::nan("")}, false)), NonFiniteError);
}

TEST(Discriminator, ZeroParametersUniform) {
  ParamSet ps = init_discriminator(4, 3, RngStream(1));
  for (std::size_t i = 0; i < ps.size(); ++i) std::fill(ps.at(i).data.begin(), ps.at(i).data.end(), 0.0);
  Tape tape;
  RngStream rng(2);
  const Tensor out = discriminator_forward(tape, ps, random_tensor({4}, rng));
  ASSERT_EQ(out.shape, (Shape{2}));
  const auto p = ad::softmax(out.data);
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], 0.5);
  EXPECT_THROW(discriminator_forward(tape, ps, Tensor::zeros({5})), ShapeError);
}

TEST(AdversarialLoss, DirectArithmetic) {
  Tape tape;
  const double h = std::log(0.5);
  std::vector<Tensor> src(3, Tensor({2}, {h, h})), tgt(3, Tensor({2}, {h, h}));
  EXPECT_NEAR(adversarial_loss(tape, src, tgt).data[0], 6.0 * std::log(0.5), 1e-12);

  const std::vector<Tensor> s1 = {Tensor({2}, {std::log(0.8), std::log(0.2)})};
  const std::vector<Tensor> t1 = {Tensor({2}, {std::log(0.4), std::log(0.6)})};
  EXPECT_NEAR(adversarial_loss(tape, s1, t1).data[0], std::log(0.8) + std::log(0.6), 1e-15);

  const std::vector<Tensor> sp = {Tensor({2}, {std::log1p(-1e-12), std::log(1e-12)})};
  const std::vector<Tensor> tp = {Tensor({2}, {std::log(1e-12), std::log1p(-1e-12)})};
  const double near_perfect = adversarial_loss(tape, sp, tp).data[0];
  EXPECT_LT(near_perfect, 0.0);
  EXPECT_GT(near_perfect, -1e-11);
  EXPECT_THROW(adversarial_loss(tape, std::vector<Tensor>{}, t1), ModelError);
}

TEST(GradientReversal, ZeroLambdaBlocksEncoder) {
  // Disc gradients still flow; the encoder side sees nothing at lambda 0.
  Tape tape;
  RngStream rng(3);
  const ParamSet disc = init_discriminator(3, 4, RngStream(4)).bind(tape);
  const Tensor x = tape.watch(random_tensor({3}, rng));
  const Tensor lp = ad::log_softmax(tape, discriminator_forward(tape, disc, ad::grad_reverse(tape, x, 0.0)));
  const Tensor loss = adversarial_loss(tape, std::vector<Tensor>{lp}, std::vector<Tensor>{lp});
  tape.backward(loss);
  for (double g : tape.grad(x)) EXPECT_EQ(g, 0.0);
  double disc_norm = 0.0;
  for (double g : tape.grad(disc["disc.w2"])) disc_norm += std::abs(g);
  EXPECT_GT(disc_norm, 0.0);
}

TEST(EpisodeLoss, MeanOfPerQueryCrossEntropy) {
  RngStream rng(7);
  std::vector<RelationScores> scores;
  const std::vector<int> labels = {0, kNotaLabel, 3, 2, kNotaLabel};
  for (std::size_t i = 0; i < labels.size(); ++i) scores.push_back(scores_of(random_tensor({6}, rng).data, true));
  Tape tape;
  const double loss = episode_loss_from_scores(tape, scores, labels, NotaHandling::strict).data[0];
  double ref = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Tape t2;
    ref += ad::softmax_cross_entropy(t2, scores[i].scores, labels[i] == kNotaLabel ? 5 : labels[i]).data[0];
  }
  EXPECT_NEAR(loss, ref / labels.size(), 1e-12);
}

TEST(EpisodeLoss, UniformAndSaturated) {
  Tape tape;
  const std::vector<RelationScores> uniform(3, scores_of(std::vector<double>(6, 0.0), true));
  EXPECT_NEAR(episode_loss_from_scores(tape, uniform, {0, kNotaLabel, 4}, NotaHandling::strict).data[0],
              std::log(6.0), 1e-12);
  const std::vector<RelationScores> sharp = {scores_of({50.0, 0.0, 0.0}, true), scores_of({0.0, 0.0, 50.0}, true)};
  EXPECT_LT(episode_loss_from_scores(tape, sharp, {0, kNotaLabel}, NotaHandling::strict).data[0], 1e-20);
}

TEST(EpisodeLoss, StrictVersusIgnore) {
  Tape tape;
  const std::vector<RelationScores> blind = {scores_of({0.1, 0.2}, false), scores_of({0.3, 0.1}, false)};
  const std::vector<int> labels = {1, kNotaLabel};
  EXPECT_THROW(episode_loss_from_scores(tape, blind, labels, NotaHandling::strict), ModelError);
  EXPECT_THROW(count_correct(blind, labels, NotaHandling::strict), ModelError);
  Tape t2;
  const double ignored = episode_loss_from_scores(tape, blind, labels, NotaHandling::ignore).data[0];
  EXPECT_NEAR(ignored, ad::softmax_cross_entropy(t2, blind[0].scores, 1).data[0], 1e-15);
  EXPECT_EQ(count_correct(blind, labels, NotaHandling::ignore), 1u);
  EXPECT_THROW(episode_loss_from_scores(tape, {blind[1]}, {kNotaLabel}, NotaHandling::ignore), ModelError);
}

TEST(Variants, NamesRoundTrip) {
  for (auto v : {ModelVariant::proto, ModelVariant::proto_nota, ModelVariant::proto_adv, ModelVariant::pair,
                 ModelVariant::pair_star, ModelVariant::proto_star})
    EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("bert"), std::invalid_argument);
  EXPECT_TRUE(nota_capable(ModelVariant::pair));
  EXPECT_FALSE(nota_capable(ModelVariant::proto));
  EXPECT_TRUE(ignores_nota(ModelVariant::pair_star));
}

TEST(FewShotModel, InitDeterministicAndScoresEpisodes) {
  const Dataset ds = gen_synthetic({.num_relations = 8, .instances_per_relation = 6, .sentence_len = 6}, 1);
  const Vocabulary vocab = build_vocab({&ds});
  const EncodedDataset enc = encode_dataset(ds, vocab, tiny_encoder().max_len);
  const Episode ep = sample_episode(enc, {.k_shot = 2, .nota_rate = 0.5}, RngStream(2));
  for (auto v : {ModelVariant::proto, ModelVariant::pair, ModelVariant::proto_adv}) {
    ModelConfig cfg{v, tiny_encoder(), 4};
    const FewShotModel a = FewShotModel::init(cfg, vocab.size(), 3);
    const FewShotModel b = FewShotModel::init(cfg, vocab.size(), 3);
    for (std::size_t i = 0; i < a.params.size(); ++i) ASSERT_EQ(a.params.at(i).data, b.params.at(i).data);
    EXPECT_EQ(a.params.contains("disc.w1"), v == ModelVariant::proto_adv);
    Tape tape;
    const auto scores = score_episode(tape, cfg, a.params, ep);
    ASSERT_EQ(scores.size(), ep.queries.size());
    EXPECT_EQ(scores[0].has_nota, v == ModelVariant::pair);
    if (v == ModelVariant::pair) {
      const double loss = episode_loss(tape, a, a.params, ep).data[0];
      EXPECT_TRUE(std::isfinite(loss));
    } else if (ep.num_nota() > 0) {
      EXPECT_THROW(episode_loss(tape, a, a.params, ep), ModelError);
      EXPECT_NO_THROW(episode_loss(tape, a, a.params, ep, true));
    }
  }
}
