#pragma once

// Training and evaluation drivers.
//
// Seed schedule: training episode i draws from RngStream(derive_seed(seed, 2), i);
// evaluation repeat r uses seed_r = derive_seed(eval_seed, 1000 + r) and
// episode e of that repeat draws from RngStream(seed_r, e). Every episode's
// randomness is therefore fixed by its index, independent of worker count or
// evaluation order.

#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewrel/autodiff.hpp"
#include "fewrel/config.hpp"
#include "fewrel/corpus.hpp"
#include "fewrel/encoders.hpp"
#include "fewrel/episodes.hpp"
#include "fewrel/models.hpp"
#include "fewrel/report.hpp"
#include "fewrel/rng.hpp"
#include "fewrel/version.hpp"

namespace fewrel {

class HarnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Corpora.

struct Corpora {
  Dataset train;
  std::optional<Dataset> valid;
  std::optional<Dataset> test;
  std::optional<Dataset> cross_domain;
  std::optional<Dataset> adversarial_target;

  std::vector<const Dataset*> all() const {
    std::vector<const Dataset*> v{&train};
    for (const auto* d : {&valid, &test, &cross_domain, &adversarial_target})
      if (*d) v.push_back(&**d);
    return v;
  }
};

/// Moves a subset of `source`'s relations (up to instances_per_relation
/// instances each) into `train` and deletes them from `source`.
/// Returns the moved relation names.
inline std::vector<std::string> apply_augmentation(Dataset& train, Dataset& source, const AugmentationConfig& cfg,
                                                   std::uint64_t seed) {
  if (!cfg.enabled()) return {};
  std::vector<std::size_t> chosen;
  if (!cfg.relations.empty()) {
    for (const auto& n : cfg.relations) chosen.push_back(static_cast<std::size_t>(source.inventory.id(n)));
  } else {
    if (cfg.num_relations >= source.num_relations())
      throw HarnessError("augmentation: cannot move " + std::to_string(cfg.num_relations) + " of " +
                         std::to_string(source.num_relations()) + " relations and keep an evaluation set");
    RngStream rng(derive_seed(seed, 0xA06), 0);
    chosen = rng.sample_without_replacement(source.num_relations(), cfg.num_relations);
    std::sort(chosen.begin(), chosen.end());
  }
  std::vector<std::string> moved;
  Dataset rest;
  for (std::size_t r = 0; r < source.num_relations(); ++r) {
    const std::string& name = source.inventory.name(static_cast<RelationId>(r));
    const bool move = std::find(chosen.begin(), chosen.end(), r) != chosen.end();
    if (!move) {
      const RelationId id = rest.inventory.add(name);
      rest.by_relation.push_back(source.by_relation[r]);
      for (auto& inst : rest.by_relation.back()) inst.relation = id;
      continue;
    }
    const RelationId id = train.inventory.add(name);
    std::vector<Instance> insts = source.by_relation[r];
    if (insts.size() > cfg.instances_per_relation) insts.resize(cfg.instances_per_relation);
    for (auto& inst : insts) inst.relation = id;
    train.by_relation.push_back(std::move(insts));
    moved.push_back(name);
  }
  source = std::move(rest);
  return moved;
}

inline Corpora load_corpora(const RunConfig& cfg) {
  if (cfg.corpus.train.empty()) throw ConfigError("corpus.train is required");
  Corpora c;
  c.train = load_dataset(cfg.corpus.train).dataset;
  if (!cfg.corpus.valid.empty()) c.valid = load_dataset(cfg.corpus.valid).dataset;
  if (!cfg.corpus.test.empty()) c.test = load_dataset(cfg.corpus.test).dataset;
  if (!cfg.corpus.cross_domain.empty()) c.cross_domain = load_dataset(cfg.corpus.cross_domain).dataset;
  const std::string target = cfg.adversarial.target.empty() ? cfg.corpus.cross_domain : cfg.adversarial.target;
  if (cfg.adversarial_active()) {
    if (target.empty()) throw ConfigError("adversarial training needs adversarial.target or corpus.cross_domain");
    c.adversarial_target = load_dataset(target).dataset;
  }
  if (cfg.augmentation.enabled()) {
    const std::string src = cfg.augmentation.source.empty() ? cfg.corpus.cross_domain : cfg.augmentation.source;
    if (src.empty()) throw ConfigError("augmentation needs augmentation.source or corpus.cross_domain");
    std::optional<Dataset>* slot = src == cfg.corpus.cross_domain ? &c.cross_domain
                                   : src == cfg.corpus.test       ? &c.test
                                                                  : nullptr;
    Dataset scratch;
    Dataset& source = slot ? **slot : (scratch = load_dataset(src).dataset);
    apply_augmentation(c.train, source, cfg.augmentation, cfg.seed);
    if (cfg.adversarial_active() && target == src) c.adversarial_target = source;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Trained models and checkpoints.

struct TrainedModel {
  FewShotModel model;
  Vocabulary vocab;
  std::string config_hash;
};

inline nlohmann::ordered_json encoder_json(const EncoderConfig& e) {
  nlohmann::ordered_json j;
  j["word_dim"] = e.word_dim;
  j["pos_dim"] = e.pos_dim;
  j["seg_dim"] = e.seg_dim;
  j["window"] = e.window;
  j["filters"] = e.filters;
  j["max_len"] = e.max_len;
  j["pair_max_len"] = e.pair_length_limit();
  j["pair_hidden"] = e.pair_hidden;
  j["embed_init"] = e.embed_init;
  return j;
}

inline Checkpoint to_checkpoint(const TrainedModel& tm) {
  nlohmann::ordered_json meta;
  meta["format"] = "fewrel2-checkpoint";
  meta["variant"] = to_string(tm.model.config.variant);
  meta["encoder"] = encoder_json(tm.model.config.encoder);
  meta["disc_hidden"] = tm.model.config.disc_hidden;
  meta["encoder_hash"] = encoder_hash(tm.model.config, tm.vocab);
  meta["config_hash"] = tm.config_hash;
  meta["vocab"] = tm.vocab.tokens();
  return {meta.dump(), tm.model.params.snapshot()};
}

inline TrainedModel from_checkpoint(const Checkpoint& ck) {
  TrainedModel tm;
  try {
    const auto meta = nlohmann::json::parse(ck.metadata);
    if (meta.at("format") != "fewrel2-checkpoint") throw HarnessError("checkpoint: unknown metadata format");
    tm.model.config.variant = parse_variant(meta.at("variant").get<std::string>());
    const auto& e = meta.at("encoder");
    auto& enc = tm.model.config.encoder;
    enc.word_dim = e.at("word_dim");
    enc.pos_dim = e.at("pos_dim");
    enc.seg_dim = e.at("seg_dim");
    enc.window = e.at("window");
    enc.filters = e.at("filters");
    enc.max_len = e.at("max_len");
    enc.pair_max_len = e.at("pair_max_len");
    enc.pair_hidden = e.at("pair_hidden");
    enc.embed_init = e.at("embed_init");
    tm.model.config.disc_hidden = meta.at("disc_hidden");
    tm.vocab = Vocabulary::from_tokens(meta.at("vocab").get<std::vector<std::string>>());
    tm.config_hash = meta.at("config_hash").get<std::string>();
    if (meta.at("encoder_hash").get<std::string>() != encoder_hash(tm.model.config, tm.vocab))
      throw HarnessError("checkpoint: encoder hash does not match its metadata");
  } catch (const nlohmann::json::exception& e) {
    throw HarnessError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  // Parameter shapes must be exactly what this configuration initializes.
  const FewShotModel fresh = FewShotModel::init(tm.model.config, tm.vocab.size(), 0);
  if (fresh.params.names() != ck.params.names())
    throw HarnessError("checkpoint: parameter names do not match the model variant");
  for (std::size_t i = 0; i < ck.params.size(); ++i)
    if (fresh.params.at(i).shape != ck.params.at(i).shape)
      throw HarnessError("checkpoint: shape mismatch for '" + ck.params.name(i) + "': " +
                         shape_str(ck.params.at(i).shape) + " vs expected " + shape_str(fresh.params.at(i).shape));
  tm.model.params = ck.params;
  return tm;
}

/// Refuses to evaluate a checkpoint under an encoder configuration it was not trained with.
inline void check_compatible(const TrainedModel& tm, const RunConfig& cfg) {
  ModelConfig mc = cfg.model;
  mc.variant = tm.model.config.variant;
  if (encoder_hash(mc, tm.vocab) != encoder_hash(tm.model.config, tm.vocab))
    throw HarnessError("checkpoint/config incompatibility: encoder configuration differs from the checkpoint's");
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalSpec {
  EpisodeConfig episode;
  std::size_t episodes = 1000;
  std::size_t repeats = 3;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
};

/// Predicts one label per query (relation index or kNotaLabel). `stream` is
/// the episode's own stream; substreams 0-2 are used by the sampler.
using EpisodePredictor = std::function<std::vector<int>(Episode& ep, const RngStream& stream)>;

struct EpisodeTally {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t nota = 0;
};

struct RepeatedTally {
  std::vector<double> accuracy;  // percent, per repeat
  EpisodeTally sum;
};

inline std::uint64_t repeat_seed(std::uint64_t seed, std::size_t r) { return derive_seed(seed, 1000 + r); }

inline RepeatedTally run_evaluation(const EncodedDataset& ds, const EvalSpec& spec, const EpisodePredictor& predict) {
  if (spec.workers < 1 || spec.repeats < 1 || spec.episodes < 1) throw HarnessError("evaluation: empty schedule");
  RepeatedTally out;
  for (std::size_t r = 0; r < spec.repeats; ++r) {
    const std::uint64_t seed = repeat_seed(spec.seed, r);
    std::vector<EpisodeTally> per(spec.episodes);
    std::vector<std::exception_ptr> errors(spec.workers);
    auto work = [&](std::size_t w) {
      try {
        for (std::size_t e = w; e < spec.episodes; e += spec.workers) {
          const RngStream stream(seed, e);
          Episode ep = sample_episode(ds, spec.episode, stream);
          const auto pred = predict(ep, stream);
          if (pred.size() != ep.labels.size()) throw HarnessError("predictor returned wrong label count");
          auto& t = per[e];
          t.total = ep.labels.size();
          t.nota = ep.num_nota();
          for (std::size_t i = 0; i < pred.size(); ++i) t.correct += pred[i] == ep.labels[i];
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    if (spec.workers == 1) {
      work(0);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t w = 0; w < spec.workers; ++w) threads.emplace_back(work, w);
      for (auto& t : threads) t.join();
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
    EpisodeTally rep;
    for (const auto& t : per) {
      rep.correct += t.correct;
      rep.total += t.total;
      rep.nota += t.nota;
    }
    out.sum.correct += rep.correct;
    out.sum.total += rep.total;
    out.sum.nota += rep.nota;
    out.accuracy.push_back(100.0 * static_cast<double>(rep.correct) / static_cast<double>(rep.total));
  }
  return out;
}

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

inline EvalCell make_cell(const std::string& model, const std::string& domain, const EvalSpec& spec,
                          const RepeatedTally& tally, const std::string& config_hash) {
  EvalCell c;
  c.model = model;
  c.n_way = spec.episode.n_way;
  c.k_shot = spec.episode.k_shot;
  c.domain = domain;
  c.nota_rate = spec.episode.nota_rate;
  std::tie(c.acc_mean, c.acc_std) = mean_std(tally.accuracy);
  c.episodes = spec.episodes;
  c.repeats = spec.repeats;
  c.seed = spec.seed;
  c.config_hash = config_hash;
  c.correct = tally.sum.correct;
  c.total = tally.sum.total;
  c.nota_queries = tally.sum.nota;
  return c;
}

/// Predictor backed by a model. `nota_source` supplies NOTA support for the
/// (N+1)-way prototype variant; relations sharing a name with the episode's
/// are excluded.
inline EpisodePredictor model_predictor(const FewShotModel& model, const EncodedDataset& eval_ds,
                                        const EncodedDataset* nota_source, bool force_ignore_nota) {
  const NotaHandling mode = model.nota_handling(force_ignore_nota);
  if (model.config.variant == ModelVariant::proto_nota && !nota_source)
    throw HarnessError("proto-nota evaluation needs a training corpus for NOTA support");
  return [&model, &eval_ds, nota_source, mode](Episode& ep, const RngStream& stream) {
    if (model.config.variant == ModelVariant::proto_nota) {
      std::vector<RelationId> excluded;
      for (RelationId r : ep.relations) {
        const auto& name = eval_ds.inventory.name(r);
        if (nota_source->inventory.contains(name)) excluded.push_back(nota_source->inventory.id(name));
      }
      ep.nota_support = sample_nota_support(*nota_source, excluded, ep.k_shot(), stream.substream(3));
    }
    Tape tape;
    const auto scores = score_episode(tape, model.config, model.params, ep);
    std::vector<int> labels;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (mode == NotaHandling::strict && ep.labels[i] == kNotaLabel && !scores[i].has_nota)
        throw ModelError("NOTA query given to NOTA-blind model '" + to_string(model.config.variant) +
                         "' in strict mode; evaluate it with ignore_nota (the * ablation)");
      labels.push_back(classify(scores[i], mode == NotaHandling::ignore).label);
    }
    return labels;
  };
}

/// Display name: the variant, with "*" when NOTA is ignored at evaluation.
inline std::string model_label(const FewShotModel& m, bool force_ignore) {
  std::string s = to_string(m.config.variant);
  if (force_ignore && !ignores_nota(m.config.variant)) s += "*";
  return s;
}

inline EvalCell evaluate(const TrainedModel& tm, const EncodedDataset& eval_ds, const EncodedDataset* nota_source,
                         const EvalSpec& spec, bool ignore_nota, const std::string& domain) {
  const auto tally = run_evaluation(eval_ds, spec, model_predictor(tm.model, eval_ds, nota_source, ignore_nota));
  return make_cell(model_label(tm.model, ignore_nota), domain, spec, tally, tm.config_hash);
}

inline EvalSpec eval_spec(const RunConfig& cfg, double nota_rate) {
  EvalSpec s;
  s.episode = cfg.eval.episode;
  s.episode.nota_rate = nota_rate;
  s.episodes = cfg.eval.episodes;
  s.repeats = cfg.eval.repeats;
  s.workers = cfg.eval.workers;
  s.seed = cfg.eval_seed();
  return s;
}

/// One cell per rate, all on the same seed schedule.
inline EvalReport nota_sweep(const TrainedModel& tm, const RunConfig& cfg, const Dataset& eval, const Dataset& train,
                             const std::vector<double>& rates, const std::string& domain) {
  const auto& enc = tm.model.config.encoder;
  const EncodedDataset eval_ds = encode_dataset(eval, tm.vocab, enc.max_len);
  const EncodedDataset train_ds = encode_dataset(train, tm.vocab, enc.max_len);
  EvalReport rep;
  for (double rate : rates) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("NOTA rates must lie in [0, 1]");
    rep.cells.push_back(evaluate(tm, eval_ds, &train_ds, eval_spec(cfg, rate), cfg.eval.ignore_nota, domain));
  }
  return rep;
}

/// Paired evaluation on a source-domain and a target-domain corpus with
/// identical episode configurations and seed schedules.
inline EvalReport da_eval(const TrainedModel& tm, const RunConfig& cfg, const Dataset& source, const Dataset& target,
                          const Dataset& train, const std::string& source_name = "source",
                          const std::string& target_name = "target") {
  EvalReport rep;
  for (double rate : cfg.eval.nota_rates) {
    auto a = nota_sweep(tm, cfg, source, train, {rate}, source_name);
    auto b = nota_sweep(tm, cfg, target, train, {rate}, target_name);
    rep.cells.push_back(a.cells.front());
    rep.cells.push_back(b.cells.front());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Training.

struct ValidationPoint {
  std::size_t step = 0;
  double accuracy = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::string code_version = kVersion;
  std::string start_time;
  std::string end_time;
  std::string checkpoint;
  std::vector<std::string> reports;

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["config_hash"] = config_hash;
    j["code_version"] = code_version;
    j["start_time"] = start_time;
    j["end_time"] = end_time;
    j["checkpoint"] = checkpoint;
    j["reports"] = reports;
    return j.dump(2) + "\n";
  }
  static RunManifest from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.config_hash = j.at("config_hash");
    m.code_version = j.at("code_version");
    m.start_time = j.at("start_time");
    m.end_time = j.at("end_time");
    m.checkpoint = j.at("checkpoint");
    m.reports = j.at("reports").get<std::vector<std::string>>();
    return m;
  }
};

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct TrainResult {
  TrainedModel trained;
  RunManifest manifest;
  std::vector<ValidationPoint> validation;
  std::vector<double> losses;  // per episode, total loss
};

inline double lambda_at(const AdversarialConfig& a, std::size_t step, std::size_t total) {
  if (total <= 1) return a.lambda_end;
  const double t = static_cast<double>(step) / static_cast<double>(total - 1);
  return a.lambda_start + (a.lambda_end - a.lambda_start) * t;
}

/// Adds the domain-adversarial term for one batch: discriminator ascent on
/// the objective and encoder descent through gradient reversal. Returns
/// weight * (-objective / batch size).
inline Tensor adversarial_term(Tape& tape, const ModelConfig& mc, const ParamSet& params, const DomainBatch& batch,
                               double lambda, double weight) {
  auto logprobs = [&](const std::vector<EncodedInstance>& insts) {
    std::vector<Tensor> out;
    for (const auto& inst : insts) {
      Tensor f = ad::grad_reverse(tape, encode_sentence(tape, params, mc.encoder, inst), lambda);
      out.push_back(ad::log_softmax(tape, discriminator_forward(tape, params, f)));
    }
    return out;
  };
  const auto src = logprobs(batch.source);
  const auto tgt = logprobs(batch.target);
  Tensor objective = adversarial_loss(tape, src, tgt);
  const double n = static_cast<double>(src.size() + tgt.size());
  return ad::scale(tape, objective, -weight / n);
}

inline bool is_disc_param(const std::string& name) { return name.rfind("disc.", 0) == 0; }
inline bool is_word_table(const std::string& name) { return name == "enc.word" || name == "pair.word"; }

/// Episodic training, single-threaded and fully determined by the config and seed.
inline TrainResult train(const RunConfig& cfg, const Corpora& data, std::ostream* log = nullptr) {
  cfg.validate();
  TrainResult res;
  res.manifest.start_time = utc_now();
  res.manifest.config_hash = config_hash(cfg);

  Vocabulary vocab = build_vocab(data.all(), cfg.corpus.min_count);
  const auto& enc = cfg.model.encoder;
  const EncodedDataset train_ds = encode_dataset(data.train, vocab, enc.max_len);
  std::optional<EncodedDataset> valid_ds, target_ds;
  if (data.valid) valid_ds = encode_dataset(*data.valid, vocab, enc.max_len);
  if (cfg.adversarial_active()) {
    if (!data.adversarial_target) throw HarnessError("adversarial training needs a target corpus");
    target_ds = encode_dataset(*data.adversarial_target, vocab, enc.max_len);
  }

  FewShotModel model = FewShotModel::init(cfg.model, vocab.size(), derive_seed(cfg.seed, 1));
  if (cfg.adversarial_active() && !model.params.contains("disc.w1")) {
    ParamSet disc = init_discriminator(enc.output_dim(), cfg.model.disc_hidden, RngStream(derive_seed(cfg.seed, 5)));
    for (std::size_t i = 0; i < disc.size(); ++i) model.params.add(disc.name(i), disc.at(i));
  }
  OptimizerState enc_opt{cfg.encoder_optimizer(), 0, {}, {}};
  OptimizerConfig disc_cfg;
  disc_cfg.algorithm = OptimizerAlgorithm::adam;
  disc_cfg.learning_rate = cfg.adversarial.learning_rate;
  OptimizerState disc_opt{disc_cfg, 0, {}, {}};

  std::optional<ParamSet> best;
  double best_acc = -1.0;
  const std::uint64_t train_seed = derive_seed(cfg.seed, 2);
  auto validate = [&](std::size_t step) {
    if (!valid_ds) return;
    EvalSpec spec;
    spec.episode = cfg.eval.episode;
    spec.episode.nota_rate = cfg.train.episode.nota_rate;
    spec.episodes = cfg.train.val_episodes;
    spec.repeats = 1;
    spec.seed = derive_seed(cfg.seed, 7);
    FewShotModel snapshot{model.config, model.params.snapshot()};
    const auto tally = run_evaluation(*valid_ds, spec, model_predictor(snapshot, *valid_ds, &train_ds, false));
    const double acc = tally.accuracy.front();
    res.validation.push_back({step, acc});
    if (log) *log << "step " << step << " validation accuracy " << std::fixed << std::setprecision(2) << acc << "\n";
    if (acc > best_acc) {
      best_acc = acc;
      best = model.params.snapshot();
    }
  };

  for (std::size_t step = 0; step < cfg.train.episodes; ++step) {
    const RngStream stream(train_seed, step);
    Episode ep = sample_episode(train_ds, cfg.train.episode, stream);
    if (model.config.variant == ModelVariant::proto_nota)
      ep.nota_support = sample_nota_support(train_ds, ep.relations, ep.k_shot(), stream.substream(3));

    Tape tape;
    ParamSet bound = model.params.bind(tape);
    Tensor loss = episode_loss(tape, model, bound, ep);
    if (cfg.adversarial_active()) {
      const DomainBatch batch =
          sample_domain_batch(train_ds, *target_ds, cfg.adversarial.half_size, RngStream(derive_seed(cfg.seed, 3), step));
      loss = ad::add(tape, loss,
                     adversarial_term(tape, model.config, bound, batch, lambda_at(cfg.adversarial, step, cfg.train.episodes),
                                      cfg.adversarial.weight));
    }
    if (!std::isfinite(loss.item()))
      throw NonFiniteError("training diverged at episode " + std::to_string(step) + ": loss " +
                           std::to_string(loss.item()));
    res.losses.push_back(loss.item());
    tape.backward(loss);
    ParamSet grads = bound.gradients(tape);
    ParamSet enc_grads, disc_grads;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (cfg.train.freeze_word_embeddings && is_word_table(grads.name(i))) continue;
      (is_disc_param(grads.name(i)) ? disc_grads : enc_grads).add(grads.name(i), grads.at(i));
    }
    optimizer_step(enc_opt, model.params, enc_grads);
    if (!disc_grads.empty()) optimizer_step(disc_opt, model.params, disc_grads);

    if (log && (step + 1) % 100 == 0) {
      double m = 0.0;
      for (std::size_t i = step + 1 - 100; i <= step; ++i) m += res.losses[i];
      *log << "step " << step + 1 << " mean loss " << std::fixed << std::setprecision(4) << m / 100.0 << "\n";
    }
    if (cfg.train.val_interval > 0 && (step + 1) % cfg.train.val_interval == 0) validate(step + 1);
  }
  if (valid_ds && (cfg.train.val_interval == 0 || cfg.train.episodes % cfg.train.val_interval != 0))
    validate(cfg.train.episodes);
  if (best) model.params = std::move(*best);

  res.trained = TrainedModel{std::move(model), std::move(vocab), res.manifest.config_hash};
  res.manifest.end_time = utc_now();
  return res;
}

// ---------------------------------------------------------------------------
// Domain probes.

/// Encoder features for `count` distinct instances drawn uniformly.
inline std::vector<Tensor> sample_features(const FewShotModel& m, const EncodedDataset& ds, std::size_t count,
                                           const RngStream& rng) {
  if (is_pair_model(m.config.variant)) throw HarnessError("domain probes need a sentence encoder");
  std::vector<const EncodedInstance*> pool;
  for (const auto& r : ds.by_relation)
    for (const auto& inst : r) pool.push_back(&inst);
  if (count > pool.size())
    throw HarnessError("domain probe wants " + std::to_string(count) + " instances, corpus has " +
                       std::to_string(pool.size()));
  RngStream draw = rng;
  std::vector<Tensor> out;
  Tape tape;
  for (std::size_t k : draw.sample_without_replacement(pool.size(), count))
    out.push_back(encode_sentence(tape, m.params, m.config.encoder, *pool[k]).detached());
  return out;
}

/// Accuracy of a discriminator on labelled features (0 source, 1 target).
inline double discriminator_accuracy(const ParamSet& disc, const std::vector<Tensor>& src,
                                     const std::vector<Tensor>& tgt) {
  Tape tape;
  std::size_t correct = 0;
  auto count = [&](const std::vector<Tensor>& feats, int label) {
    for (const auto& f : feats) {
      const Tensor o = discriminator_forward(tape, disc, f);
      correct += (o.data[1] > o.data[0] ? 1 : 0) == label;
    }
  };
  count(src, 0);
  count(tgt, 1);
  return 100.0 * static_cast<double>(correct) / static_cast<double>(src.size() + tgt.size());
}

/// The model's own discriminator scored on fresh draws from both corpora.
inline double model_discriminator_accuracy(const FewShotModel& m, const EncodedDataset& src,
                                           const EncodedDataset& tgt, std::size_t per_domain, std::uint64_t seed) {
  if (!m.params.contains("disc.w1")) throw HarnessError("model has no discriminator");
  return discriminator_accuracy(m.params, sample_features(m, src, per_domain, RngStream(seed, 0)),
                                sample_features(m, tgt, per_domain, RngStream(seed, 1)));
}

struct ProbeOptions {
  std::size_t per_domain = 200;  // training features per domain; as many again held out
  std::size_t steps = 300;
  std::size_t hidden = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

/// Trains a fresh discriminator on frozen encoder features and returns its
/// held-out accuracy in percent.
inline double probe_domain_accuracy(const FewShotModel& m, const EncodedDataset& src, const EncodedDataset& tgt,
                                    const ProbeOptions& o) {
  const RngStream rng(derive_seed(o.seed, 0x9B0E));
  auto s = sample_features(m, src, 2 * o.per_domain, rng.substream(0));
  auto t = sample_features(m, tgt, 2 * o.per_domain, rng.substream(1));
  const std::vector<Tensor> s_train(s.begin(), s.begin() + static_cast<long>(o.per_domain));
  const std::vector<Tensor> t_train(t.begin(), t.begin() + static_cast<long>(o.per_domain));
  const std::vector<Tensor> s_test(s.begin() + static_cast<long>(o.per_domain), s.end());
  const std::vector<Tensor> t_test(t.begin() + static_cast<long>(o.per_domain), t.end());

  ParamSet disc = init_discriminator(m.config.encoder.output_dim(), o.hidden, rng.substream(2));
  OptimizerConfig oc;
  oc.algorithm = OptimizerAlgorithm::adam;
  oc.learning_rate = o.learning_rate;
  OptimizerState st{oc, 0, {}, {}};
  for (std::size_t step = 0; step < o.steps; ++step) {
    Tape tape;
    ParamSet bound = disc.bind(tape);
    std::vector<Tensor> lp_s, lp_t;
    for (const auto& f : s_train) lp_s.push_back(ad::log_softmax(tape, discriminator_forward(tape, bound, f)));
    for (const auto& f : t_train) lp_t.push_back(ad::log_softmax(tape, discriminator_forward(tape, bound, f)));
    Tensor loss = ad::scale(tape, adversarial_loss(tape, lp_s, lp_t), -1.0 / static_cast<double>(2 * o.per_domain));
    tape.backward(loss);
    optimizer_step(st, disc, bound.gradients(tape));
  }
  return discriminator_accuracy(disc, s_test, t_test);
}

/// Loads the configured corpora, trains, and writes the checkpoint and its
/// manifest (<checkpoint>.manifest.json).
inline TrainResult train_to_checkpoint(const RunConfig& cfg, std::ostream* log = nullptr) {
  TrainResult res = train(cfg, load_corpora(cfg), log);
  save_checkpoint(to_checkpoint(res.trained), cfg.train.checkpoint);
  res.manifest.checkpoint = cfg.train.checkpoint;
  std::ofstream(cfg.train.checkpoint + ".manifest.json") << res.manifest.to_json();
  return res;
}

inline TrainedModel load_trained(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

/// Records a report path in the checkpoint's manifest, if one exists.
inline void register_report(const std::string& checkpoint, const std::string& report) {
  const std::string mpath = checkpoint + ".manifest.json";
  std::ifstream in(mpath);
  if (!in) return;
  std::stringstream ss;
  ss << in.rdbuf();
  RunManifest m = RunManifest::from_json(ss.str());
  if (std::find(m.reports.begin(), m.reports.end(), report) == m.reports.end()) m.reports.push_back(report);
  std::ofstream(mpath) << m.to_json();
}

}  // namespace fewrel
