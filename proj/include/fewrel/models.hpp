#pragma once

// Classification heads and losses: prototypical networks, the (N+1)-way
// NOTA prototype baseline, the pairwise model's averaged relation scores
// with a min-based NOTA score, and the two-layer domain discriminator with
// the adversarial min-max objective.
//
// Score vectors place NOTA last. Argmax ties go to the lowest index, so a
// real relation wins a tie against NOTA.

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewrel/autodiff.hpp"
#include "fewrel/encoders.hpp"
#include "fewrel/episodes.hpp"

namespace fewrel {

enum class ScoreProvenance { proto_distance, pair_average };

struct RelationScores {
  Tensor scores;  // [N] or [N+1] with NOTA last
  bool has_nota = false;
  ScoreProvenance provenance = ScoreProvenance::proto_distance;

  std::size_t n_way() const { return scores.size() - (has_nota ? 1 : 0); }
};

struct Prediction {
  std::vector<double> probabilities;
  int label = 0;  // relation index, or kNotaLabel
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace models_detail {

inline Tensor neg_sq_dist(Tape& tape, const Tensor& a, const Tensor& b) {
  Tensor d = ad::sub(tape, a, b);
  return ad::scale(tape, ad::sum(tape, ad::mul(tape, d, d)), -1.0);
}

}  // namespace models_detail

/// o_i = -||query - mean_j support[i][j]||^2 for support_emb of shape N x K x H.
inline RelationScores proto_logits(Tape& tape, const Tensor& support_emb, const Tensor& query_emb) {
  if (support_emb.rank() != 3 || query_emb.rank() != 1 || support_emb.dim(2) != query_emb.dim(0))
    throw ShapeError("proto_logits: expected N x K x H support and H query, got " + shape_str(support_emb.shape) +
                     " and " + shape_str(query_emb.shape));
  if (support_emb.dim(0) < 2) throw ShapeError("proto_logits: N must be >= 2");
  if (support_emb.dim(1) < 1) throw ShapeError("proto_logits: K must be >= 1");
  Tensor protos = ad::mean_axis(tape, support_emb, 1);
  std::vector<Tensor> logits;
  for (std::size_t i = 0; i < protos.dim(0); ++i)
    logits.push_back(models_detail::neg_sq_dist(tape, query_emb, ad::select(tape, protos, 0, i)));
  return {ad::concat(tape, logits), false, ScoreProvenance::proto_distance};
}

/// proto_logits plus a NOTA entry scored against the mean of nota_support_emb (K x H).
inline RelationScores proto_nota_logits(Tape& tape, const Tensor& support_emb, const Tensor& nota_support_emb,
                                        const Tensor& query_emb) {
  if (nota_support_emb.rank() != 2 || nota_support_emb.dim(1) != query_emb.size() || nota_support_emb.dim(0) == 0)
    throw ShapeError("proto_nota_logits: NOTA support must be K x H, got " + shape_str(nota_support_emb.shape));
  RelationScores base = proto_logits(tape, support_emb, query_emb);
  Tensor nota_proto = ad::mean_axis(tape, nota_support_emb, 0);
  Tensor nota = models_detail::neg_sq_dist(tape, query_emb, nota_proto);
  return {ad::concat(tape, {base.scores, nota}), true, ScoreProvenance::proto_distance};
}

/// o_{r_i} = mean_j [B]_1 and o_NOTA = min_i mean_j [B]_0 over pair outputs N x K x 2.
inline RelationScores pair_scores(Tape& tape, const Tensor& pair_outputs) {
  if (pair_outputs.rank() != 3 || pair_outputs.dim(2) != 2)
    throw ShapeError("pair_scores: expected N x K x 2, got " + shape_str(pair_outputs.shape));
  if (pair_outputs.dim(1) == 0) throw ShapeError("pair_scores: K must be >= 1");
  if (pair_outputs.dim(0) == 0) throw ShapeError("pair_scores: N must be >= 1");
  Tensor same = ad::mean_axis(tape, ad::select(tape, pair_outputs, 2, 1), 1);
  Tensor diff = ad::mean_axis(tape, ad::select(tape, pair_outputs, 2, 0), 1);
  Tensor nota = ad::min_axis(tape, diff, 0).values;
  return {ad::concat(tape, {same, nota}), true, ScoreProvenance::pair_average};
}

/// Stable softmax over the scores and the argmax label. With ignore_nota the
/// NOTA entry (if any) is dropped before normalizing, so NOTA is never predicted.
inline Prediction classify(const RelationScores& s, bool ignore_nota = false) {
  if (s.scores.size() == 0) throw ModelError("classify: empty scores");
  for (double v : s.scores.data)
    if (!std::isfinite(v)) throw NonFiniteError("classify: non-finite score");
  const std::size_t n = s.n_way();
  const std::size_t used = (s.has_nota && !ignore_nota) ? n + 1 : n;
  Prediction p;
  p.probabilities = ad::softmax(std::span<const double>(s.scores.data.data(), used));
  std::size_t best = 0;
  for (std::size_t i = 1; i < used; ++i)
    if (s.scores.data[i] > s.scores.data[best]) best = i;
  p.label = best == n ? kNotaLabel : static_cast<int>(best);
  return p;
}

// ---------------------------------------------------------------------------
// Domain discriminator: affine -> tanh -> affine -> 2 scores.

inline ParamSet init_discriminator(std::size_t input_dim, std::size_t hidden, RngStream rng) {
  ParamSet ps;
  const double s1 = std::sqrt(1.0 / static_cast<double>(input_dim));
  const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
  std::vector<double> w1(input_dim * hidden), w2(hidden * 2);
  for (double& v : w1) v = s1 * rng.normal();
  for (double& v : w2) v = s2 * rng.normal();
  ps.add("disc.w1", Tensor::matrix(input_dim, hidden, std::move(w1)));
  ps.add("disc.b1", Tensor::zeros({hidden}));
  ps.add("disc.w2", Tensor::matrix(hidden, 2, std::move(w2)));
  ps.add("disc.b2", Tensor::zeros({2}));
  return ps;
}

inline Tensor discriminator_forward(Tape& tape, const ParamSet& params, const Tensor& features) {
  const Tensor& w1 = params["disc.w1"];
  if (features.rank() != 1 || features.size() != w1.dim(0))
    throw ShapeError("discriminator_forward: feature shape " + shape_str(features.shape) + " does not match " +
                     shape_str(w1.shape));
  const std::size_t h = w1.dim(1);
  Tensor z = ad::matmul(tape, ad::reshape(tape, features, {1, features.size()}), w1);
  Tensor a = ad::tanh(tape, ad::add(tape, ad::reshape(tape, z, {h}), params["disc.b1"]));
  Tensor out = ad::matmul(tape, ad::reshape(tape, a, {1, h}), params["disc.w2"]);
  return ad::add(tape, ad::reshape(tape, out, {2}), params["disc.b2"]);
}

/// sum_{source} log D_0 + sum_{target} log D_1 over per-instance log-probabilities.
/// The discriminator ascends this value; the encoder descends it through a
/// gradient-reversal layer placed before the discriminator.
inline Tensor adversarial_loss(Tape& tape, std::span<const Tensor> source_logprobs,
                               std::span<const Tensor> target_logprobs) {
  if (source_logprobs.empty() || target_logprobs.empty()) throw ModelError("adversarial_loss: empty batch");
  std::vector<Tensor> terms;
  for (const auto& lp : source_logprobs) terms.push_back(ad::select(tape, lp, 0, 0));
  for (const auto& lp : target_logprobs) terms.push_back(ad::select(tape, lp, 0, 1));
  return ad::sum(tape, ad::concat(tape, terms));
}

// ---------------------------------------------------------------------------
// Episode-level models.

enum class ModelVariant { proto, proto_nota, proto_adv, pair, pair_star, proto_star };

inline std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::proto: return "proto";
    case ModelVariant::proto_nota: return "proto-nota";
    case ModelVariant::proto_adv: return "proto-adv";
    case ModelVariant::pair: return "pair";
    case ModelVariant::pair_star: return "pair-star";
    case ModelVariant::proto_star: return "proto-star";
  }
  return "?";
}

inline ModelVariant parse_variant(std::string_view s) {
  for (auto v : {ModelVariant::proto, ModelVariant::proto_nota, ModelVariant::proto_adv, ModelVariant::pair,
                 ModelVariant::pair_star, ModelVariant::proto_star})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown model variant '" + std::string(s) + "'");
}

inline bool is_pair_model(ModelVariant v) { return v == ModelVariant::pair || v == ModelVariant::pair_star; }
/// Produces a NOTA score.
inline bool nota_capable(ModelVariant v) { return v == ModelVariant::proto_nota || v == ModelVariant::pair; }
/// "*" ablation: NOTA is ignored and NOTA queries count as errors.
inline bool ignores_nota(ModelVariant v) { return v == ModelVariant::pair_star || v == ModelVariant::proto_star; }

enum class NotaHandling { strict, ignore };

struct ModelConfig {
  ModelVariant variant = ModelVariant::proto;
  EncoderConfig encoder;
  std::size_t disc_hidden = 64;
};

struct FewShotModel {
  ModelConfig config;
  ParamSet params;  // encoder (and discriminator for proto-adv)

  static FewShotModel init(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
    FewShotModel m{cfg, {}};
    RngStream rng(seed, 0xE1C0DE);
    m.params = is_pair_model(cfg.variant) ? init_pair_encoder(cfg.encoder, vocab_size, rng.substream(0))
                                          : init_cnn_encoder(cfg.encoder, vocab_size, rng.substream(0));
    if (cfg.variant == ModelVariant::proto_adv) {
      ParamSet disc = init_discriminator(cfg.encoder.output_dim(), cfg.disc_hidden, rng.substream(1));
      for (std::size_t i = 0; i < disc.size(); ++i) m.params.add(disc.name(i), disc.at(i));
    }
    return m;
  }

  NotaHandling nota_handling(bool force_ignore = false) const {
    return force_ignore || ignores_nota(config.variant) ? NotaHandling::ignore : NotaHandling::strict;
  }
};

/// Scores every query of an episode. `params` may be bound to `tape` or a
/// frozen snapshot.
inline std::vector<RelationScores> score_episode(Tape& tape, const ModelConfig& cfg, const ParamSet& params,
                                                 const Episode& ep) {
  const std::size_t n = ep.n_way(), k = ep.k_shot();
  std::vector<RelationScores> out;
  out.reserve(ep.queries.size());
  if (is_pair_model(cfg.variant)) {
    for (const auto& q : ep.queries) {
      std::vector<Tensor> rows;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<Tensor> shots;
        for (std::size_t j = 0; j < k; ++j) shots.push_back(encode_pair(tape, params, cfg.encoder, q, ep.support[i][j]));
        rows.push_back(ad::stack(tape, shots));
      }
      out.push_back(pair_scores(tape, ad::stack(tape, rows)));
    }
    return out;
  }
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Tensor> shots;
    for (std::size_t j = 0; j < k; ++j) shots.push_back(encode_sentence(tape, params, cfg.encoder, ep.support[i][j]));
    rows.push_back(ad::stack(tape, shots));
  }
  Tensor support = ad::stack(tape, rows);
  std::optional<Tensor> nota;
  if (cfg.variant == ModelVariant::proto_nota) {
    if (ep.nota_support.empty()) throw ModelError("proto-nota episode is missing NOTA support instances");
    std::vector<Tensor> ns;
    for (const auto& inst : ep.nota_support) ns.push_back(encode_sentence(tape, params, cfg.encoder, inst));
    nota = ad::stack(tape, ns);
  }
  for (const auto& q : ep.queries) {
    Tensor qe = encode_sentence(tape, params, cfg.encoder, q);
    out.push_back(nota ? proto_nota_logits(tape, support, *nota, qe) : proto_logits(tape, support, qe));
  }
  return out;
}

/// Mean softmax cross-entropy over queries; NOTA maps to the last score.
/// In ignore mode NOTA queries are left out of the loss (and the NOTA score,
/// if present, is dropped); in strict mode a NOTA query reaching a model
/// without a NOTA score is an error.
inline Tensor episode_loss_from_scores(Tape& tape, const std::vector<RelationScores>& scores,
                                       const std::vector<int>& labels, NotaHandling mode) {
  if (scores.size() != labels.size()) throw ModelError("episode_loss: scores/labels size mismatch");
  std::vector<Tensor> losses;
  for (std::size_t qi = 0; qi < scores.size(); ++qi) {
    const auto& s = scores[qi];
    const int label = labels[qi];
    const std::size_t n = s.n_way();
    if (mode == NotaHandling::ignore) {
      if (label == kNotaLabel) continue;
      Tensor logits = s.has_nota ? ad::reshape(tape, ad::slice_rows(tape, ad::reshape(tape, s.scores, {n + 1, 1}), 0, n), {n})
                                 : s.scores;
      losses.push_back(ad::softmax_cross_entropy(tape, logits, static_cast<std::size_t>(label)));
      continue;
    }
    if (label == kNotaLabel && !s.has_nota)
      throw ModelError("episode_loss: NOTA query given to a model without a NOTA score (strict mode)");
    const std::size_t target = label == kNotaLabel ? n : static_cast<std::size_t>(label);
    losses.push_back(ad::softmax_cross_entropy(tape, s.scores, target));
  }
  if (losses.empty()) throw ModelError("episode_loss: no scorable queries");
  return ad::scale(tape, ad::sum(tape, ad::concat(tape, losses)), 1.0 / static_cast<double>(losses.size()));
}

inline Tensor episode_loss(Tape& tape, const FewShotModel& model, const ParamSet& params, const Episode& ep,
                           bool force_ignore_nota = false) {
  return episode_loss_from_scores(tape, score_episode(tape, model.config, params, ep), ep.labels,
                                  model.nota_handling(force_ignore_nota));
}

/// Correct-query count for one episode. A prediction is correct when it equals
/// the gold label; in ignore mode NOTA is never predicted.
inline std::size_t count_correct(const std::vector<RelationScores>& scores, const std::vector<int>& labels,
                                 NotaHandling mode) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mode == NotaHandling::strict && labels[i] == kNotaLabel && !scores[i].has_nota)
      throw ModelError("NOTA query given to a model without a NOTA score (strict mode)");
    if (classify(scores[i], mode == NotaHandling::ignore).label == labels[i]) ++correct;
  }
  return correct;
}

}  // namespace fewrel
