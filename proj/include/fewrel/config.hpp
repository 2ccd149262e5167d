#pragma once

// Run configuration: an INI document with sections [corpus], [encoder],
// [model], [train], [eval], [adversarial] and [augmentation]. Every key has a
// default; unknown keys are rejected. See README.md for the key reference.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fewrel/autodiff.hpp"
#include "fewrel/encoders.hpp"
#include "fewrel/episodes.hpp"
#include "fewrel/models.hpp"

namespace fewrel {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusConfig {
  std::string train;
  std::string valid;
  std::string test;          // in-domain evaluation corpus
  std::string cross_domain;  // out-of-domain evaluation corpus
  std::size_t min_count = 1;
};

struct TrainConfig {
  EpisodeConfig episode{5, 1, 1, 0.0, false};
  std::size_t episodes = 2000;
  OptimizerConfig optimizer;
  bool optimizer_set = false;  // false: Adam at 1e-3
  std::size_t val_interval = 200;
  std::size_t val_episodes = 200;
  std::string checkpoint = "model.ckpt";
  bool freeze_word_embeddings = false;
};

struct EvalConfig {
  EpisodeConfig episode{5, 1, 5, 0.0, false};
  std::vector<double> nota_rates{0.0};
  std::size_t episodes = 1000;
  std::size_t repeats = 3;
  std::size_t workers = 1;
  bool ignore_nota = false;
  std::optional<std::uint64_t> seed;  // defaults to the master seed
};

struct AdversarialConfig {
  bool enabled = false;
  std::string target;  // unlabeled target-domain corpus; defaults to corpus.cross_domain
  std::size_t half_size = 8;
  double lambda_start = 0.1;
  double lambda_end = 1.0;
  double weight = 1.0;
  double learning_rate = 1e-3;
};

struct AugmentationConfig {
  std::vector<std::string> relations;  // explicit names, or
  std::size_t num_relations = 0;       // a seeded random choice of this many
  std::size_t instances_per_relation = 100;
  std::string source;  // defaults to corpus.cross_domain

  bool enabled() const { return !relations.empty() || num_relations > 0; }
};

struct RunConfig {
  ModelConfig model;
  CorpusConfig corpus;
  TrainConfig train;
  EvalConfig eval;
  AdversarialConfig adversarial;
  AugmentationConfig augmentation;
  std::uint64_t seed = 42;

  bool adversarial_active() const { return model.variant == ModelVariant::proto_adv || adversarial.enabled; }
  std::uint64_t eval_seed() const { return eval.seed.value_or(seed); }

  OptimizerConfig encoder_optimizer() const {
    if (train.optimizer_set) return train.optimizer;
    OptimizerConfig o;
    o.algorithm = OptimizerAlgorithm::adam;
    o.learning_rate = 1e-3;
    return o;
  }

  void validate() const {
    train.episode.validate();
    eval.episode.validate();
    for (double r : eval.nota_rates)
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("eval NOTA rates must lie in [0, 1]");
    if (train.episode.nota_rate > 0.0 && !nota_capable(model.variant))
      throw ConfigError("train NOTA rate > 0 needs a NOTA-capable variant (proto-nota or pair), got " +
                        to_string(model.variant));
    if (eval.repeats < 1) throw ConfigError("eval repeats must be >= 1");
    if (eval.episodes < 1) throw ConfigError("eval episodes must be >= 1");
    if (eval.workers < 1) throw ConfigError("eval workers must be >= 1");
    if (model.encoder.window % 2 == 0) throw ConfigError("encoder window must be odd");
    if (model.encoder.max_len < 1) throw ConfigError("encoder max_len must be >= 1");
    if (adversarial.half_size < 1) throw ConfigError("adversarial half_size must be >= 1");
    if (adversarial.lambda_start < 0.0 || adversarial.lambda_end < 0.0)
      throw ConfigError("adversarial lambda must be >= 0");
    if (adversarial_active() && is_pair_model(model.variant))
      throw ConfigError("adversarial training is defined for prototype models only");
    for (const auto& n : augmentation.relations)
      if (n.empty()) throw ConfigError("augmentation relation names must be non-empty");
  }
};

namespace config_detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const auto d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty() || base.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace config_detail

/// "0,0.15,0.3" -> {0, 0.15, 0.3}; every rate must lie in [0, 1].
inline std::vector<double> parse_rate_list(const std::string& text, const std::string& what = "rates") {
  std::vector<double> r;
  for (const auto& s : config_detail::split_list(text)) {
    const double v = config_detail::parse_double(what, s);
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(what + ": NOTA rate " + s + " outside [0, 1]");
    r.push_back(v);
  }
  if (r.empty()) throw ConfigError(what + ": empty rate list");
  return r;
}

/// Applies one "section.key" = value assignment.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value,
                             const std::filesystem::path& base = {}) {
  using namespace config_detail;
  auto D = [&] { return parse_double(key, value); };
  auto U = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
  auto B = [&] { return parse_bool(key, value); };
  auto P = [&] { return resolve_path(value, base); };
  auto rates = [&] {
    std::vector<double> r;
    for (const auto& s : split_list(value)) r.push_back(parse_double(key, s));
    return r;
  };
  // clang-format off
  if (key == "corpus.train") c.corpus.train = P();
  else if (key == "corpus.valid") c.corpus.valid = P();
  else if (key == "corpus.test") c.corpus.test = P();
  else if (key == "corpus.cross_domain") c.corpus.cross_domain = P();
  else if (key == "corpus.max_len") c.model.encoder.max_len = U();
  else if (key == "corpus.min_count") c.corpus.min_count = U();
  else if (key == "encoder.word_dim") c.model.encoder.word_dim = U();
  else if (key == "encoder.pos_dim") c.model.encoder.pos_dim = U();
  else if (key == "encoder.seg_dim") c.model.encoder.seg_dim = U();
  else if (key == "encoder.window") c.model.encoder.window = U();
  else if (key == "encoder.filters") c.model.encoder.filters = U();
  else if (key == "encoder.pair_max_len") c.model.encoder.pair_max_len = U();
  else if (key == "encoder.pair_hidden") c.model.encoder.pair_hidden = U();
  else if (key == "encoder.embed_init") c.model.encoder.embed_init = D();
  else if (key == "model.variant") c.model.variant = parse_variant(value);
  else if (key == "model.disc_hidden") c.model.disc_hidden = U();
  else if (key == "train.n_way") c.train.episode.n_way = U();
  else if (key == "train.k_shot") c.train.episode.k_shot = U();
  else if (key == "train.queries") c.train.episode.queries_per_relation = U();
  else if (key == "train.nota_rate") c.train.episode.nota_rate = D();
  else if (key == "train.exact_nota") c.train.episode.exact_nota_count = B();
  else if (key == "train.episodes") c.train.episodes = U();
  else if (key == "train.freeze_word_embeddings") c.train.freeze_word_embeddings = B();
  else if (key == "train.optimizer") { c.train.optimizer.algorithm = parse_optimizer(value); c.train.optimizer_set = true; }
  else if (key == "train.learning_rate") { c.train.optimizer.learning_rate = D(); c.train.optimizer_set = true; }
  else if (key == "train.momentum") c.train.optimizer.momentum = D();
  else if (key == "train.beta1") c.train.optimizer.beta1 = D();
  else if (key == "train.beta2") c.train.optimizer.beta2 = D();
  else if (key == "train.epsilon") c.train.optimizer.epsilon = D();
  else if (key == "train.weight_decay") c.train.optimizer.weight_decay = D();
  else if (key == "train.val_interval") c.train.val_interval = U();
  else if (key == "train.val_episodes") c.train.val_episodes = U();
  else if (key == "train.checkpoint") c.train.checkpoint = P();
  else if (key == "train.seed") c.seed = parse_uint(key, value);
  else if (key == "eval.n_way") c.eval.episode.n_way = U();
  else if (key == "eval.k_shot") c.eval.episode.k_shot = U();
  else if (key == "eval.queries") c.eval.episode.queries_per_relation = U();
  else if (key == "eval.exact_nota") c.eval.episode.exact_nota_count = B();
  else if (key == "eval.nota_rates") c.eval.nota_rates = rates();
  else if (key == "eval.episodes") c.eval.episodes = U();
  else if (key == "eval.repeats") c.eval.repeats = U();
  else if (key == "eval.workers") c.eval.workers = U();
  else if (key == "eval.ignore_nota") c.eval.ignore_nota = B();
  else if (key == "eval.seed") c.eval.seed = parse_uint(key, value);
  else if (key == "adversarial.enabled") c.adversarial.enabled = B();
  else if (key == "adversarial.target") c.adversarial.target = P();
  else if (key == "adversarial.half_size") c.adversarial.half_size = U();
  else if (key == "adversarial.lambda_start") c.adversarial.lambda_start = D();
  else if (key == "adversarial.lambda_end") c.adversarial.lambda_end = D();
  else if (key == "adversarial.weight") c.adversarial.weight = D();
  else if (key == "adversarial.learning_rate") c.adversarial.learning_rate = D();
  else if (key == "augmentation.relations") c.augmentation.relations = split_list(value);
  else if (key == "augmentation.num_relations") c.augmentation.num_relations = U();
  else if (key == "augmentation.instances_per_relation") c.augmentation.instances_per_relation = U();
  else if (key == "augmentation.source") c.augmentation.source = P();
  else throw ConfigError("unknown config key '" + key + "'");
  // clang-format on
}

inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base = {}) {
  boost::property_tree::ptree pt;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : pt) {
    if (body.empty()) throw ConfigError("config key '" + section + "' must live inside a [section]");
    for (const auto& [key, value] : body) set_config_value(c, section + "." + key, value.data(), base);
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path());
}

/// "section.key=value" override from the command line.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not section.key=value");
  set_config_value(c, assignment.substr(0, eq), assignment.substr(eq + 1));
}

/// Canonical key=value listing of every setting, in a fixed order.
inline std::string canonical_config(const RunConfig& c) {
  using config_detail::fmt_double;
  std::map<std::string, std::string> kv;
  const auto& e = c.model.encoder;
  kv["corpus.train"] = c.corpus.train;
  kv["corpus.valid"] = c.corpus.valid;
  kv["corpus.test"] = c.corpus.test;
  kv["corpus.cross_domain"] = c.corpus.cross_domain;
  kv["corpus.max_len"] = std::to_string(e.max_len);
  kv["corpus.min_count"] = std::to_string(c.corpus.min_count);
  kv["encoder.word_dim"] = std::to_string(e.word_dim);
  kv["encoder.pos_dim"] = std::to_string(e.pos_dim);
  kv["encoder.seg_dim"] = std::to_string(e.seg_dim);
  kv["encoder.window"] = std::to_string(e.window);
  kv["encoder.filters"] = std::to_string(e.filters);
  kv["encoder.pair_max_len"] = std::to_string(e.pair_length_limit());
  kv["encoder.pair_hidden"] = std::to_string(e.pair_hidden);
  kv["encoder.embed_init"] = fmt_double(e.embed_init);
  kv["model.variant"] = to_string(c.model.variant);
  kv["model.disc_hidden"] = std::to_string(c.model.disc_hidden);
  const auto& t = c.train;
  kv["train.n_way"] = std::to_string(t.episode.n_way);
  kv["train.k_shot"] = std::to_string(t.episode.k_shot);
  kv["train.queries"] = std::to_string(t.episode.queries_per_relation);
  kv["train.nota_rate"] = fmt_double(t.episode.nota_rate);
  kv["train.exact_nota"] = t.episode.exact_nota_count ? "true" : "false";
  kv["train.freeze_word_embeddings"] = t.freeze_word_embeddings ? "true" : "false";
  kv["train.episodes"] = std::to_string(t.episodes);
  const auto opt = c.encoder_optimizer();
  kv["train.optimizer"] = to_string(opt.algorithm);
  kv["train.learning_rate"] = fmt_double(opt.learning_rate);
  kv["train.momentum"] = fmt_double(opt.momentum);
  kv["train.beta1"] = fmt_double(opt.beta1);
  kv["train.beta2"] = fmt_double(opt.beta2);
  kv["train.epsilon"] = fmt_double(opt.epsilon);
  kv["train.weight_decay"] = fmt_double(opt.weight_decay);
  kv["train.val_interval"] = std::to_string(t.val_interval);
  kv["train.val_episodes"] = std::to_string(t.val_episodes);
  kv["train.seed"] = std::to_string(c.seed);
  const auto& v = c.eval;
  kv["eval.n_way"] = std::to_string(v.episode.n_way);
  kv["eval.k_shot"] = std::to_string(v.episode.k_shot);
  kv["eval.queries"] = std::to_string(v.episode.queries_per_relation);
  kv["eval.exact_nota"] = v.episode.exact_nota_count ? "true" : "false";
  std::string rates;
  for (double r : v.nota_rates) rates += (rates.empty() ? "" : ",") + fmt_double(r);
  kv["eval.nota_rates"] = rates;
  kv["eval.episodes"] = std::to_string(v.episodes);
  kv["eval.repeats"] = std::to_string(v.repeats);
  kv["eval.ignore_nota"] = v.ignore_nota ? "true" : "false";
  kv["eval.seed"] = std::to_string(c.eval_seed());
  const auto& a = c.adversarial;
  kv["adversarial.enabled"] = c.adversarial_active() ? "true" : "false";
  kv["adversarial.target"] = a.target;
  kv["adversarial.half_size"] = std::to_string(a.half_size);
  kv["adversarial.lambda_start"] = fmt_double(a.lambda_start);
  kv["adversarial.lambda_end"] = fmt_double(a.lambda_end);
  kv["adversarial.weight"] = fmt_double(a.weight);
  kv["adversarial.learning_rate"] = fmt_double(a.learning_rate);
  std::string rels;
  for (const auto& r : c.augmentation.relations) rels += (rels.empty() ? "" : ",") + r;
  kv["augmentation.relations"] = rels;
  kv["augmentation.num_relations"] = std::to_string(c.augmentation.num_relations);
  kv["augmentation.instances_per_relation"] = std::to_string(c.augmentation.instances_per_relation);
  kv["augmentation.source"] = c.augmentation.source;
  // eval.workers and train.checkpoint do not change results and stay out.
  std::string out;
  for (const auto& [k, val] : kv) out += k + "=" + val + "\n";
  return out;
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string config_hash(const RunConfig& c) { return fnv1a_hex(canonical_config(c)); }

/// Hash of everything that fixes parameter shapes and input ids.
inline std::string encoder_hash(const ModelConfig& m, const Vocabulary& vocab) {
  const auto& e = m.encoder;
  std::ostringstream os;
  os << (is_pair_model(m.variant) ? "pair" : "cnn") << '|' << e.word_dim << '|' << e.pos_dim << '|' << e.seg_dim << '|' << e.window << '|'
     << e.filters << '|' << e.max_len << '|' << e.pair_length_limit() << '|' << e.pair_hidden << '|' << m.disc_hidden;
  for (const auto& t : vocab.tokens()) os << '\x1f' << t;
  return fnv1a_hex(os.str());
}

}  // namespace fewrel
