#pragma once

// Relation-classification corpora: FewRel-format JSON loading and saving,
// vocabulary construction, instance encoding and synthetic corpus generation.
//
// Dataset file schema (UTF-8 JSON):
//
//   { "<relation name>": [
//       { "tokens": ["w0", "w1", ...],
//         "h": ["<surface>", "<kb id>", [[i, i+1, ...]]],
//         "t": ["<surface>", "<kb id>", [[j, ...]]] },
//       ... ],
//     ... }
//
// Entity index lists must be contiguous; the first occurrence list is used.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewrel/rng.hpp"

namespace fewrel {

using RelationId = int;
inline constexpr RelationId kNotaRelation = -1;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inclusive token index range [first, last].
struct Span {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t length() const { return last - first + 1; }
  bool contains(std::size_t i) const { return i >= first && i <= last; }
  bool operator==(const Span&) const = default;
};

struct Entity {
  std::string surface;
  std::string kb_id;
  Span span;
  bool operator==(const Entity&) const = default;
};

struct Instance {
  std::vector<std::string> tokens;
  Entity head;
  Entity tail;
  RelationId relation = 0;
  bool operator==(const Instance&) const = default;
};

/// Empty string when valid, otherwise the reason.
inline std::string validate_instance(const Instance& inst) {
  if (inst.tokens.empty()) return "no tokens";
  const std::size_t n = inst.tokens.size();
  for (const Span* s : {&inst.head.span, &inst.tail.span})
    if (s->first > s->last || s->last >= n) return "entity span out of range";
  if (inst.head.span == inst.tail.span) return "head and tail spans are identical";
  return {};
}

class RelationInventory {
 public:
  RelationInventory() = default;
  explicit RelationInventory(const std::vector<std::string>& names) {
    for (const auto& n : names) add(n);
  }

  RelationId add(const std::string& name) {
    if (ids_.count(name)) throw CorpusError("duplicate relation name '" + name + "'");
    ids_.emplace(name, static_cast<RelationId>(names_.size()));
    names_.push_back(name);
    return static_cast<RelationId>(names_.size() - 1);
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(RelationId id) const {
    if (id == kNotaRelation) return nota_name();
    return names_.at(static_cast<std::size_t>(id));
  }
  bool contains(const std::string& name) const { return ids_.count(name) != 0; }
  RelationId id(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw CorpusError("unknown relation '" + name + "'");
    return it->second;
  }

  static const std::string& nota_name() {
    static const std::string kName = "NOTA";
    return kName;
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, RelationId> ids_;
};

/// Instances grouped by relation id; `by_relation[r]` holds relation r.
struct Dataset {
  RelationInventory inventory;
  std::vector<std::vector<Instance>> by_relation;

  std::size_t num_relations() const { return by_relation.size(); }
  std::size_t num_instances() const {
    std::size_t n = 0;
    for (const auto& r : by_relation) n += r.size();
    return n;
  }
  bool operator==(const Dataset& o) const {
    return inventory.names() == o.inventory.names() && by_relation == o.by_relation;
  }
};

struct LoadResult {
  Dataset dataset;
  std::vector<std::string> warnings;
  std::map<std::string, std::size_t> counts;
};

namespace corpus_detail {

inline Entity parse_entity(const nlohmann::json& j) {
  if (!j.is_array() || j.size() < 3 || !j[2].is_array() || j[2].empty() || !j[2][0].is_array() ||
      j[2][0].empty())
    throw CorpusError("entity must be [surface, kb_id, [[indices]]]");
  Entity e;
  e.surface = j[0].is_string() ? j[0].get<std::string>() : j[0].dump();
  e.kb_id = j[1].is_string() ? j[1].get<std::string>() : j[1].dump();
  std::vector<long long> idx;
  for (const auto& v : j[2][0]) idx.push_back(v.get<long long>());
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 1; i < idx.size(); ++i)
    if (idx[i] != idx[i - 1] + 1) throw CorpusError("entity indices are not contiguous");
  if (idx.front() < 0) throw CorpusError("negative entity index");
  e.span = {static_cast<std::size_t>(idx.front()), static_cast<std::size_t>(idx.back())};
  return e;
}

inline nlohmann::json entity_json(const Entity& e) {
  std::vector<std::size_t> idx;
  for (std::size_t i = e.span.first; i <= e.span.last; ++i) idx.push_back(i);
  return nlohmann::json::array({e.surface, e.kb_id, nlohmann::json::array({idx})});
}

}  // namespace corpus_detail

/// Parses a dataset from JSON text. Invalid instances are dropped with a
/// warning; a relation left without instances is an error.
inline LoadResult parse_dataset(const std::string& text, const std::string& origin = "<memory>") {
  std::set<std::string> seen;
  std::string duplicate;
  nlohmann::ordered_json::parser_callback_t cb = [&](int depth, nlohmann::ordered_json::parse_event_t ev,
                                                     nlohmann::ordered_json& parsed) {
    if (depth == 1 && ev == nlohmann::ordered_json::parse_event_t::key) {
      const auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  nlohmann::ordered_json root;
  try {
    root = nlohmann::ordered_json::parse(text, cb);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorpusError(origin + ": malformed JSON: " + e.what());
  }
  if (!duplicate.empty()) throw CorpusError(origin + ": duplicate relation name '" + duplicate + "'");
  if (!root.is_object()) throw CorpusError(origin + ": top level must be an object of relations");
  if (root.empty()) throw CorpusError(origin + ": no relations");

  LoadResult out;
  for (const auto& [name, arr] : root.items()) {
    const RelationId rid = out.dataset.inventory.add(name);
    std::vector<Instance> insts;
    if (!arr.is_array()) throw CorpusError(origin + ": relation '" + name + "' is not an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const auto& j = arr[k];
      const std::string where = origin + ": " + name + "[" + std::to_string(k) + "]";
      Instance inst;
      try {
        if (!j.is_object() || !j.contains("tokens") || !j.contains("h") || !j.contains("t"))
          throw CorpusError("missing tokens/h/t");
        inst.tokens = j.at("tokens").get<std::vector<std::string>>();
        inst.head = corpus_detail::parse_entity(j.at("h"));
        inst.tail = corpus_detail::parse_entity(j.at("t"));
      } catch (const nlohmann::json::exception& e) {
        throw CorpusError(where + ": " + e.what());
      } catch (const CorpusError& e) {
        out.warnings.push_back(where + ": rejected (" + e.what() + ")");
        continue;
      }
      inst.relation = rid;
      if (auto why = validate_instance(inst); !why.empty()) {
        out.warnings.push_back(where + ": rejected (" + why + ")");
        continue;
      }
      insts.push_back(std::move(inst));
    }
    if (insts.empty()) throw CorpusError(origin + ": relation '" + name + "' has no valid instances");
    out.counts[name] = insts.size();
    out.dataset.by_relation.push_back(std::move(insts));
  }
  return out;
}

inline LoadResult load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open dataset '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str(), path);
}

inline std::string serialize_dataset(const Dataset& ds) {
  nlohmann::ordered_json root = nlohmann::ordered_json::object();
  for (std::size_t r = 0; r < ds.num_relations(); ++r) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& inst : ds.by_relation[r]) {
      nlohmann::ordered_json j;
      j["tokens"] = inst.tokens;
      j["h"] = corpus_detail::entity_json(inst.head);
      j["t"] = corpus_detail::entity_json(inst.tail);
      arr.push_back(std::move(j));
    }
    root[ds.inventory.name(static_cast<RelationId>(r))] = std::move(arr);
  }
  return root.dump();
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write dataset '" + path + "'");
  out << serialize_dataset(ds) << '\n';
}

/// Relation subsets of one benchmark; relation names must be pairwise
/// disjoint across the three parts.
struct CorpusSplit {
  Dataset train;
  Dataset valid;
  Dataset test;

  void check_disjoint() const {
    const std::pair<const Dataset*, const char*> parts[] = {{&train, "train"}, {&valid, "valid"}, {&test, "test"}};
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = a + 1; b < 3; ++b)
        for (const auto& n : parts[a].first->inventory.names())
          if (parts[b].first->inventory.contains(n))
            throw CorpusError(std::string("relation '") + n + "' appears in both " + parts[a].second +
                              " and " + parts[b].second);
  }
};

inline CorpusSplit make_split(Dataset train, Dataset valid, Dataset test) {
  CorpusSplit s{std::move(train), std::move(valid), std::move(test)};
  s.check_disjoint();
  return s;
}

// ---------------------------------------------------------------------------
// Vocabulary.

inline std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSep = 2;
  static constexpr int kHeadL = 3;
  static constexpr int kHeadR = 4;
  static constexpr int kTailL = 5;
  static constexpr int kTailR = 6;
  static constexpr int kNumReserved = 7;

  static const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> kTokens = {"[PAD]", "[UNK]", "[SEP]", "[E1]", "[/E1]", "[E2]", "[/E2]"};
    return kTokens;
  }

  Vocabulary() {
    for (const auto& t : reserved_tokens()) push(t, 0);
  }

  /// Rebuilds from an id-ordered token list (checkpoint form).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < kNumReserved ||
        !std::equal(reserved_tokens().begin(), reserved_tokens().end(), tokens.begin()))
      throw CorpusError("vocabulary token list does not start with the reserved tokens");
    Vocabulary v;
    for (std::size_t i = kNumReserved; i < tokens.size(); ++i) v.push(tokens[i], 0);
    return v;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(lowercase(token));
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t frequency(int id) const { return freq_.at(static_cast<std::size_t>(id)); }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  friend Vocabulary build_vocab(const std::vector<const Dataset*>&, std::size_t);

  void push(const std::string& tok, std::size_t freq) {
    ids_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(tok);
    freq_.push_back(freq);
  }

  std::vector<std::string> tokens_;
  std::vector<std::size_t> freq_;
  std::unordered_map<std::string, int> ids_;
};

/// Tokens (lowercased) with frequency >= min_count, ordered by frequency
/// descending then lexicographically, after the reserved ids.
inline Vocabulary build_vocab(const std::vector<const Dataset*>& datasets, std::size_t min_count = 1) {
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const Dataset* ds : datasets)
    for (const auto& rel : ds->by_relation)
      for (const auto& inst : rel)
        for (const auto& tok : inst.tokens) ++counts[lowercase(tok)];
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (const auto& [tok, c] : counts) {
    if (c < min_count) continue;
    if (std::find(Vocabulary::reserved_tokens().begin(), Vocabulary::reserved_tokens().end(), tok) !=
        Vocabulary::reserved_tokens().end())
      continue;
    entries.emplace_back(tok, c);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, c] : entries) v.push(tok, c);
  return v;
}

// ---------------------------------------------------------------------------
// Encoding.

/// Identifies an instance within a dataset: (relation id, index).
struct InstanceRef {
  RelationId relation = 0;
  std::size_t index = 0;
  auto operator<=>(const InstanceRef&) const = default;
};

struct EncodedInstance {
  std::vector<int> token_ids;  // max_len, PAD-filled
  std::vector<int> head_pos;   // shifted relative positions, PAD (0) past length
  std::vector<int> tail_pos;
  std::vector<std::uint8_t> mask;
  std::size_t length = 0;
  Span head;
  Span tail;
  RelationId relation = 0;
  InstanceRef ref;

  std::size_t max_len() const { return token_ids.size(); }
};

/// Signed distance from token i to the nearest token of span s (0 inside).
inline long relative_position(std::size_t i, const Span& s) {
  if (i < s.first) return static_cast<long>(i) - static_cast<long>(s.first);
  if (i > s.last) return static_cast<long>(i) - static_cast<long>(s.last);
  return 0;
}

/// Position ids live in [0, 2*max_len]; relative position 0 maps to max_len.
inline int position_id(long rel, std::size_t max_len) {
  const long m = static_cast<long>(max_len);
  return static_cast<int>(std::clamp(rel, -m, m) + m);
}

inline std::size_t position_vocab_size(std::size_t max_len) { return 2 * max_len + 1; }

inline EncodedInstance encode_instance(const Instance& inst, const Vocabulary& vocab, std::size_t max_len,
                                       InstanceRef ref = {}) {
  if (inst.head.span.last >= max_len || inst.tail.span.last >= max_len)
    throw CorpusError("instance " + inst.head.surface + "/" + inst.tail.surface + " (relation " +
                      std::to_string(ref.relation) + ", #" + std::to_string(ref.index) +
                      "): entity span ends beyond max_len " + std::to_string(max_len));
  EncodedInstance e;
  e.length = std::min(inst.tokens.size(), max_len);
  e.token_ids.assign(max_len, Vocabulary::kPad);
  e.head_pos.assign(max_len, 0);
  e.tail_pos.assign(max_len, 0);
  e.mask.assign(max_len, 0);
  for (std::size_t i = 0; i < e.length; ++i) {
    e.token_ids[i] = vocab.id(inst.tokens[i]);
    e.head_pos[i] = position_id(relative_position(i, inst.head.span), max_len);
    e.tail_pos[i] = position_id(relative_position(i, inst.tail.span), max_len);
    e.mask[i] = 1;
  }
  e.head = inst.head.span;
  e.tail = inst.tail.span;
  e.relation = inst.relation;
  e.ref = ref;
  return e;
}

/// A dataset encoded against one vocabulary; instances whose spans exceed
/// max_len are rejected and reported.
struct EncodedDataset {
  RelationInventory inventory;
  std::vector<std::vector<EncodedInstance>> by_relation;
  std::vector<std::string> rejected;

  std::size_t num_relations() const { return by_relation.size(); }
};

inline EncodedDataset encode_dataset(const Dataset& ds, const Vocabulary& vocab, std::size_t max_len) {
  EncodedDataset out;
  out.inventory = ds.inventory;
  out.by_relation.resize(ds.num_relations());
  for (std::size_t r = 0; r < ds.num_relations(); ++r) {
    for (std::size_t k = 0; k < ds.by_relation[r].size(); ++k) {
      const InstanceRef ref{static_cast<RelationId>(r), k};
      try {
        out.by_relation[r].push_back(encode_instance(ds.by_relation[r][k], vocab, max_len, ref));
      } catch (const CorpusError& e) {
        out.rejected.push_back(e.what());
      }
    }
    if (out.by_relation[r].empty())
      throw CorpusError("relation '" + ds.inventory.name(static_cast<RelationId>(r)) +
                        "' has no instances fitting max_len " + std::to_string(max_len));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora.

enum class SyntheticSignal { keyword, template_ };

struct SyntheticSpec {
  std::size_t num_relations = 20;
  std::size_t instances_per_relation = 50;
  std::size_t vocab_size = 400;  // keywords + filler tokens
  std::size_t sentence_len = 12;
  SyntheticSignal signal = SyntheticSignal::template_;
  /// Prefix on every generated token; distinct prefixes give disjoint vocabularies.
  std::string token_prefix;
  /// First relation number; distinct offsets give disjoint relation sets.
  std::size_t relation_offset = 0;
  /// Optional explicit relation names (size must equal num_relations).
  std::vector<std::string> relation_names;
};

/// Keyword k_r identifies relation r. In `keyword` mode it sits at a random
/// non-entity position; in `template_` mode it sits directly between the two
/// entity spans (head first or tail first, chosen per instance). All other
/// tokens, entities included, are filler drawn uniformly.
inline Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_relations < 2) throw std::invalid_argument("gen_synthetic: num_relations must be >= 2");
  if (spec.instances_per_relation < 2)
    throw std::invalid_argument("gen_synthetic: instances_per_relation must be >= 2");
  if (spec.vocab_size < spec.num_relations + 2)
    throw std::invalid_argument("gen_synthetic: vocab_size " + std::to_string(spec.vocab_size) +
                                " too small for " + std::to_string(spec.num_relations) +
                                " distinct keywords plus filler");
  if (spec.sentence_len < 3) throw std::invalid_argument("gen_synthetic: sentence_len must be >= 3");
  if (!spec.relation_names.empty() && spec.relation_names.size() != spec.num_relations)
    throw std::invalid_argument("gen_synthetic: relation_names size mismatch");

  const std::size_t filler = spec.vocab_size - spec.num_relations;
  auto filler_tok = [&](std::size_t i) { return spec.token_prefix + "w" + std::to_string(i); };
  auto keyword_tok = [&](std::size_t r) {
    return spec.token_prefix + "kw" + std::to_string(spec.relation_offset + r);
  };

  Dataset ds;
  for (std::size_t r = 0; r < spec.num_relations; ++r) {
    const std::string name = spec.relation_names.empty()
                                 ? spec.token_prefix + "rel_" + std::to_string(spec.relation_offset + r)
                                 : spec.relation_names[r];
    const RelationId rid = ds.inventory.add(name);
    std::vector<Instance> insts;
    RngStream rng(seed, r);
    for (std::size_t k = 0; k < spec.instances_per_relation; ++k) {
      Instance inst;
      inst.relation = rid;
      const std::size_t len = spec.sentence_len;
      inst.tokens.resize(len);
      for (auto& t : inst.tokens) t = filler_tok(rng.uniform_index(filler));
      std::size_t h = 0, t = 0, kw = 0;
      if (spec.signal == SyntheticSignal::template_) {
        const std::size_t left = rng.uniform_index(len - 2);  // left entity, keyword, right entity
        const bool head_first = rng.bernoulli(0.5);
        kw = left + 1;
        h = head_first ? left : left + 2;
        t = head_first ? left + 2 : left;
      } else {
        auto picks = rng.sample_without_replacement(len, 3);
        h = picks[0];
        t = picks[1];
        kw = picks[2];
      }
      inst.tokens[kw] = keyword_tok(r);
      inst.head = {inst.tokens[h], "Q" + std::to_string(h), {h, h}};
      inst.tail = {inst.tokens[t], "Q" + std::to_string(t), {t, t}};
      insts.push_back(std::move(inst));
    }
    ds.by_relation.push_back(std::move(insts));
  }
  return ds;
}

inline std::string synthetic_keyword(const SyntheticSpec& spec, std::size_t r) {
  return spec.token_prefix + "kw" + std::to_string(spec.relation_offset + r);
}

/// Parses "key=value,key=value". Keys: relations, instances, vocab, len,
/// signal (keyword|template), prefix, offset, names (separated by '|').
inline SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  auto number = [](const std::string& k, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long n = 0;
    try {
      n = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != v.size() || v.empty() || v[0] == '-')
      throw std::invalid_argument("synthetic spec: '" + k + "' needs a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(n);
  };
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("synthetic spec: expected key=value, got '" + item + "'");
    const std::string k = item.substr(0, eq), v = item.substr(eq + 1);
    if (k == "relations") spec.num_relations = number(k, v);
    else if (k == "instances") spec.instances_per_relation = number(k, v);
    else if (k == "vocab") spec.vocab_size = number(k, v);
    else if (k == "len") spec.sentence_len = number(k, v);
    else if (k == "offset") spec.relation_offset = number(k, v);
    else if (k == "prefix") spec.token_prefix = v;
    else if (k == "signal") {
      if (v == "keyword") spec.signal = SyntheticSignal::keyword;
      else if (v == "template") spec.signal = SyntheticSignal::template_;
      else throw std::invalid_argument("synthetic spec: signal must be keyword or template, got '" + v + "'");
    } else if (k == "names") {
      spec.relation_names.clear();
      std::stringstream ns(v);
      std::string n;
      while (std::getline(ns, n, '|')) spec.relation_names.push_back(n);
    } else {
      throw std::invalid_argument("synthetic spec: unknown key '" + k + "'");
    }
  }
  if (!spec.relation_names.empty() && text.find("relations=") == std::string::npos)
    spec.num_relations = spec.relation_names.size();
  return spec;
}

}  // namespace fewrel
