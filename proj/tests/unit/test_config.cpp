#include <gtest/gtest.h>

#include "fewrel/config.hpp"

using namespace fewrel;

namespace {

const char* kBase = R"([corpus]
train = data/train.json
test = /abs/test.json
max_len = 40

[encoder]
filters = 32

[model]
variant = pair

[train]
nota_rate = 0.5
episodes = 300

[eval]
nota_rates = 0, 0.15, 0.3, 0.5
repeats = 5
)";

}  // namespace

TEST(Config, DefaultsValid) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.encoder_optimizer().algorithm, OptimizerAlgorithm::adam);
  EXPECT_EQ(c.encoder_optimizer().learning_rate, 1e-3);
  EXPECT_EQ(c.eval.episodes, 1000u);
  EXPECT_EQ(c.eval.repeats, 3u);
  EXPECT_EQ(c.train.val_interval, 200u);
  EXPECT_EQ(c.eval_seed(), c.seed);
}

TEST(Config, ParsesSectionsAndResolvesPaths) {
  const RunConfig c = parse_config(kBase, "/cfgdir");
  EXPECT_EQ(c.corpus.train, "/cfgdir/data/train.json");
  EXPECT_EQ(c.corpus.test, "/abs/test.json");
  EXPECT_EQ(c.model.encoder.max_len, 40u);
  EXPECT_EQ(c.model.encoder.filters, 32u);
  EXPECT_EQ(c.model.variant, ModelVariant::pair);
  EXPECT_EQ(c.train.episode.nota_rate, 0.5);
  EXPECT_EQ(c.train.episodes, 300u);
  EXPECT_EQ(c.eval.nota_rates, (std::vector<double>{0.0, 0.15, 0.3, 0.5}));
  EXPECT_EQ(c.eval.repeats, 5u);
}

TEST(Config, OverridesApply) {
  RunConfig c = parse_config(kBase);
  apply_override(c, "train.optimizer=sgd-momentum");
  apply_override(c, "train.learning_rate=0.05");
  apply_override(c, "eval.seed=9");
  EXPECT_EQ(c.encoder_optimizer().algorithm, OptimizerAlgorithm::sgd_momentum);
  EXPECT_EQ(c.encoder_optimizer().learning_rate, 0.05);
  EXPECT_EQ(c.eval_seed(), 9u);
  EXPECT_THROW(apply_override(c, "train.episodes"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.nosuch=1"), ConfigError);
}

TEST(Config, ErrorsRejected) {
  EXPECT_THROW(parse_config("[model]\nnosuchkey = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nepisodes = -4\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nepisodes = many\n"), ConfigError);
  EXPECT_THROW(parse_config("[eval]\nnota_rates = 0,1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nnota_rate = 0.5\n"), ConfigError);  // proto cannot see NOTA
  EXPECT_THROW(parse_config("[encoder]\nwindow = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nvariant = pair\n[adversarial]\nenabled = true\n"), ConfigError);
  EXPECT_THROW(parse_config("[model\nvariant = pair\n"), ConfigError);
  EXPECT_THROW(parse_config("[eval]\nignore_nota = maybe\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/run.ini"), ConfigError);
}

TEST(Config, RateListParsing) {
  EXPECT_EQ(parse_rate_list("0,0.15, 0.3,0.5"), (std::vector<double>{0.0, 0.15, 0.3, 0.5}));
  EXPECT_THROW(parse_rate_list("0,1.5"), ConfigError);
  EXPECT_THROW(parse_rate_list(""), ConfigError);
  EXPECT_THROW(parse_rate_list("x"), ConfigError);
}

TEST(ConfigHash, StableOverSemanticallyIdenticalText) {
  const RunConfig a = parse_config(kBase);
  // Same settings: reordered sections, extra whitespace, equivalent number spellings, explicit defaults.
  const RunConfig b = parse_config(R"(
[eval]
repeats=5
nota_rates = 0.0,0.150,0.30,.5

[train]
episodes = 300
nota_rate = 5e-1
val_interval = 200

[model]
variant = pair
[encoder]
filters = 032
[corpus]
max_len = 40
test = /abs/test.json
train = data/train.json
)");
  EXPECT_EQ(config_hash(a), config_hash(b));
  RunConfig c = a;
  apply_override(c, "train.episodes=301");
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(EncoderHash, TracksShapesAndVocab) {
  const Vocabulary v1 = Vocabulary::from_tokens({"[PAD]", "[UNK]", "[SEP]", "[E1]", "[/E1]", "[E2]", "[/E2]", "a"});
  const Vocabulary v2 = Vocabulary::from_tokens({"[PAD]", "[UNK]", "[SEP]", "[E1]", "[/E1]", "[E2]", "[/E2]", "b"});
  ModelConfig m;
  const std::string h = encoder_hash(m, v1);
  EXPECT_EQ(h, encoder_hash(m, v1));
  EXPECT_NE(h, encoder_hash(m, v2));
  ModelConfig m2 = m;
  m2.encoder.filters = 32;
  EXPECT_NE(h, encoder_hash(m2, v1));
  ModelConfig m3 = m;
  m3.variant = ModelVariant::proto_star;  // same trunk, same parameters
  EXPECT_EQ(h, encoder_hash(m3, v1));
}
