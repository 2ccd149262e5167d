#pragma once

// Sentence encoders.
//
// CNN encoder: word + head-position + tail-position embeddings, same-padded
// convolution, relu, max over the valid tokens.
//
// Pair encoder: scores a (query, support) pair with a two-way output,
// index 1 = "same relation", index 0 = "not the same relation". The two
// instances are wrapped in entity markers and joined with [SEP]; a CNN trunk
// runs over the joined sequence with token, within-segment position and
// segment embeddings. The trunk output is max-pooled separately over the
// query rows and the support rows, and a two-layer head maps
// [q, s, q*s, (q-s)^2] to the two scores.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fewrel/autodiff.hpp"
#include "fewrel/corpus.hpp"
#include "fewrel/rng.hpp"

namespace fewrel {

struct EncoderConfig {
  std::size_t word_dim = 50;
  std::size_t pos_dim = 5;
  std::size_t seg_dim = 5;
  std::size_t window = 3;
  std::size_t filters = 64;
  std::size_t max_len = 128;
  std::size_t pair_max_len = 0;  // 0: room for two marked sentences of max_len plus [SEP]
  std::size_t pair_hidden = 64;
  double embed_init = 0.1;

  std::size_t pair_length_limit() const { return pair_max_len ? pair_max_len : 2 * (max_len + 4) + 1; }
  std::size_t output_dim() const { return filters; }
  bool operator==(const EncoderConfig&) const = default;
};

class EncoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace encoder_detail {

inline Tensor uniform_table(std::size_t rows, std::size_t cols, double bound, RngStream& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform_real(-bound, bound);
  return Tensor(Shape{rows, cols}, std::move(v));
}

inline Tensor kaiming(std::size_t rows, std::size_t cols, std::size_t fan_in, RngStream& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = sd * rng.normal();
  return Tensor(Shape{rows, cols}, std::move(v));
}

}  // namespace encoder_detail

inline ParamSet init_cnn_encoder(const EncoderConfig& cfg, std::size_t vocab_size, RngStream rng) {
  using namespace encoder_detail;
  const std::size_t p = position_vocab_size(cfg.max_len);
  const std::size_t in = cfg.word_dim + 2 * cfg.pos_dim;
  ParamSet ps;
  ps.add("enc.word", uniform_table(vocab_size, cfg.word_dim, cfg.embed_init, rng));
  ps.add("enc.head_pos", uniform_table(p, cfg.pos_dim, cfg.embed_init, rng));
  ps.add("enc.tail_pos", uniform_table(p, cfg.pos_dim, cfg.embed_init, rng));
  ps.add("enc.conv_w", kaiming(cfg.filters, cfg.window * in, cfg.window * in, rng));
  ps.add("enc.conv_b", Tensor::zeros({cfg.filters}));
  return ps;
}

inline Tensor encode_sentence(Tape& tape, const ParamSet& params, const EncoderConfig& cfg,
                              const EncodedInstance& inst) {
  if (inst.length == 0) throw EncoderError("encode_sentence: instance has no valid tokens");
  const std::size_t p = params["enc.head_pos"].dim(0);
  const std::span<const int> tok(inst.token_ids.data(), inst.length);
  const std::span<const int> hp(inst.head_pos.data(), inst.length);
  const std::span<const int> tp(inst.tail_pos.data(), inst.length);
  for (std::size_t i = 0; i < inst.length; ++i)
    if (hp[i] < 0 || tp[i] < 0 || static_cast<std::size_t>(hp[i]) >= p || static_cast<std::size_t>(tp[i]) >= p)
      throw EncoderError("encode_sentence: position id outside the position table of size " + std::to_string(p));
  Tensor x = ad::concat_cols(tape, {ad::embedding_lookup(tape, params["enc.word"], tok),
                                    ad::embedding_lookup(tape, params["enc.head_pos"], hp),
                                    ad::embedding_lookup(tape, params["enc.tail_pos"], tp)});
  Tensor h = ad::relu(tape, ad::conv1d(tape, x, params["enc.conv_w"], params["enc.conv_b"], cfg.window));
  return ad::max_over_time(tape, h);
}

inline ParamSet init_pair_encoder(const EncoderConfig& cfg, std::size_t vocab_size, RngStream rng) {
  using namespace encoder_detail;
  const std::size_t in = cfg.word_dim + cfg.pos_dim + cfg.seg_dim;
  const std::size_t feat = 4 * cfg.filters;
  ParamSet ps;
  ps.add("pair.word", uniform_table(vocab_size, cfg.word_dim, cfg.embed_init, rng));
  ps.add("pair.pos", uniform_table(cfg.pair_length_limit(), cfg.pos_dim, cfg.embed_init, rng));
  ps.add("pair.seg", uniform_table(2, cfg.seg_dim, cfg.embed_init, rng));
  ps.add("pair.conv_w", kaiming(cfg.filters, cfg.window * in, cfg.window * in, rng));
  ps.add("pair.conv_b", Tensor::zeros({cfg.filters}));
  ps.add("pair.head_w1", kaiming(feat, cfg.pair_hidden, feat, rng));
  ps.add("pair.head_b1", Tensor::zeros({cfg.pair_hidden}));
  ps.add("pair.head_w2", kaiming(cfg.pair_hidden, 2, cfg.pair_hidden, rng));
  ps.add("pair.head_b2", Tensor::zeros({2}));
  return ps;
}

/// Token ids of one instance with entity markers around both spans.
inline std::vector<int> marked_tokens(const EncodedInstance& inst) {
  std::vector<int> out;
  out.reserve(inst.length + 4);
  for (std::size_t i = 0; i < inst.length; ++i) {
    if (i == inst.head.first) out.push_back(Vocabulary::kHeadL);
    if (i == inst.tail.first) out.push_back(Vocabulary::kTailL);
    out.push_back(inst.token_ids[i]);
    if (i == inst.tail.last) out.push_back(Vocabulary::kTailR);
    if (i == inst.head.last) out.push_back(Vocabulary::kHeadR);
  }
  return out;
}

struct PairSequence {
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<int> segments;  // 0 = query (and [SEP]), 1 = support
  std::size_t query_len = 0;  // rows [0, query_len) are query tokens; row query_len is [SEP]
};

inline PairSequence build_pair_sequence(const EncodedInstance& query, const EncodedInstance& support,
                                        std::size_t limit) {
  PairSequence s;
  const auto q = marked_tokens(query);
  const auto sp = marked_tokens(support);
  if (q.size() + 1 + sp.size() > limit)
    throw EncoderError("encode_pair: query (relation " + std::to_string(query.ref.relation) + ", #" +
                       std::to_string(query.ref.index) + ") and support (relation " +
                       std::to_string(support.ref.relation) + ", #" + std::to_string(support.ref.index) +
                       ") need " + std::to_string(q.size() + 1 + sp.size()) + " tokens, limit is " +
                       std::to_string(limit));
  s.query_len = q.size();
  for (std::size_t i = 0; i < q.size(); ++i) {
    s.tokens.push_back(q[i]);
    s.positions.push_back(static_cast<int>(i));
    s.segments.push_back(0);
  }
  s.tokens.push_back(Vocabulary::kSep);
  s.positions.push_back(static_cast<int>(q.size()));
  s.segments.push_back(0);
  for (std::size_t i = 0; i < sp.size(); ++i) {
    s.tokens.push_back(sp[i]);
    s.positions.push_back(static_cast<int>(i));
    s.segments.push_back(1);
  }
  return s;
}

inline Tensor encode_pair(Tape& tape, const ParamSet& params, const EncoderConfig& cfg,
                          const EncodedInstance& query, const EncodedInstance& support) {
  if (query.length == 0 || support.length == 0) throw EncoderError("encode_pair: empty instance");
  const PairSequence seq = build_pair_sequence(query, support, params["pair.pos"].dim(0));
  Tensor x = ad::concat_cols(tape, {ad::embedding_lookup(tape, params["pair.word"], seq.tokens),
                                    ad::embedding_lookup(tape, params["pair.pos"], seq.positions),
                                    ad::embedding_lookup(tape, params["pair.seg"], seq.segments)});
  Tensor h = ad::relu(tape, ad::conv1d(tape, x, params["pair.conv_w"], params["pair.conv_b"], cfg.window));
  Tensor fq = ad::max_over_time(tape, ad::slice_rows(tape, h, 0, seq.query_len));
  Tensor fs = ad::max_over_time(tape, ad::slice_rows(tape, h, seq.query_len + 1, seq.tokens.size()));
  Tensor diff = ad::sub(tape, fq, fs);
  Tensor feat = ad::concat(tape, {fq, fs, ad::mul(tape, fq, fs), ad::mul(tape, diff, diff)});
  Tensor row = ad::reshape(tape, feat, {1, feat.size()});
  Tensor hidden = ad::add(tape, ad::reshape(tape, ad::matmul(tape, row, params["pair.head_w1"]), {cfg.pair_hidden}),
                          params["pair.head_b1"]);
  hidden = ad::tanh(tape, hidden);
  Tensor out = ad::matmul(tape, ad::reshape(tape, hidden, {1, cfg.pair_hidden}), params["pair.head_w2"]);
  out = ad::add(tape, ad::reshape(tape, out, {2}), params["pair.head_b2"]);
  // Antisymmetric output [-z, z]: "different" and "same" are one margin.
  Tensor z = ad::scale(tape, ad::sub(tape, ad::select(tape, out, 0, 1), ad::select(tape, out, 0, 0)), 0.5);
  return ad::concat(tape, {ad::scale(tape, z, -1.0), z});
}

// ---------------------------------------------------------------------------
// Checkpoint container.
//
// Little-endian layout:
//   char[8]  magic "FR2CKPT\0"
//   u32      version (1)
//   u32      metadata byte length, then metadata bytes (UTF-8 JSON)
//   u32      tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank],
//               f64 data[product(dims)] row-major

inline constexpr char kCheckpointMagic[8] = {'F', 'R', '2', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata;
  ParamSet params;
};

namespace checkpoint_detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw EncoderError("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace checkpoint_detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  using checkpoint_detail::put;
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.metadata.size()));
  out += ck.metadata;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.params.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& name = ck.params.name(i);
    const auto& t = ck.params.at(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    for (double v : t.data) put<double>(out, v);
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  checkpoint_detail::Reader r(bytes);
  if (r.str(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw EncoderError("checkpoint: bad magic");
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion)
    throw EncoderError("checkpoint: unsupported version " + std::to_string(v));
  Checkpoint ck;
  ck.metadata = r.str(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.get<std::uint32_t>());
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = r.get<double>();
    ck.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw EncoderError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EncoderError("cannot write checkpoint '" + path + "'");
  const auto bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw EncoderError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EncoderError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace fewrel
