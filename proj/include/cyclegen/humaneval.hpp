#pragma once

// Counting/ranking human evaluation: blinded batches, error counts
// (FE, HE, IM), fluency rankings, normalization per input triple,
// inter-annotator agreement, and a small persistent annotation store.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cyclegen/corpus.hpp"
#include "cyclegen/error.hpp"
#include "cyclegen/rng.hpp"
#include "cyclegen/text.hpp"
#include "cyclegen/triple_codec.hpp"

namespace cyclegen::humaneval {

namespace fs = std::filesystem;
using codec::Triple;
using nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr std::uint64_t kBatchOrderStream = 31;

struct GenerationView {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;  // whitespace tokens; spans index these
};

/// What an annotator sees. System names live only in Blinding.
struct AnnotationBatch {
  std::string batch_id;
  std::string sample_id;
  std::vector<Triple> triples;
  std::vector<std::string> references;
  std::vector<GenerationView> generations;

  const GenerationView* find(const std::string& generation_id) const {
    for (const auto& g : generations) {
      if (g.id == generation_id) return &g;
    }
    return nullptr;
  }
};

struct Blinding {
  std::map<std::string, std::string> system_of;  // generation id -> system
};

struct BatchSet {
  std::vector<AnnotationBatch> batches;
  Blinding blinding;
};

struct TokenSpan {
  int begin = 0;  // half-open token range
  int end = 0;
  bool operator==(const TokenSpan&) const = default;
  auto operator<=>(const TokenSpan&) const = default;
};

struct ErrorAnnotation {
  std::string generation_id;
  std::vector<TokenSpan> fe_spans;
  std::vector<TokenSpan> he_spans;
  int fe_count = 0;
  int he_count = 0;
  std::vector<int> im_triples;
  int im_count = 0;
  std::string annotator_id;
};

struct FluencyRanking {
  std::string batch_id;
  std::string annotator_id;
  std::map<std::string, int> ranks;  // generation id -> rank, 1 = most fluent
};

struct NormalizedScores {
  std::string system;
  double fe = 0.0;  // per input triple, x100
  double he = 0.0;
  double im = 0.0;
  std::optional<double> fp;  // mean rank; empty without rankings
  std::size_t annotations = 0;
  std::size_t input_triples = 0;
  std::size_t rankings = 0;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline json triple_json(const Triple& t) { return json::array({t.subject, t.predicate, t.object}); }

inline Triple triple_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kSchema, "triple must be [s, p, o]");
  return {j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
}

inline json spans_json(const std::vector<TokenSpan>& spans) {
  json out = json::array();
  for (const auto& s : spans) out.push_back({s.begin, s.end});
  return out;
}

inline std::vector<TokenSpan> spans_from(const json& j) {
  std::vector<TokenSpan> out;
  if (j.is_null()) return out;
  if (!j.is_array()) throw Error(ErrorCode::kSchema, "spans must be an array");
  for (const auto& s : j) {
    if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() || !s[1].is_number_integer()) {
      throw Error(ErrorCode::kSchema, "span must be [begin, end]");
    }
    out.push_back({s[0].get<int>(), s[1].get<int>()});
  }
  return out;
}

inline int count_from(const json& j, const char* key) {
  if (!j.contains(key)) return 0;
  if (!j[key].is_number_integer()) throw Error(ErrorCode::kSchema, std::string(key) + " must be an integer");
  return j[key].get<int>();
}

}  // namespace detail

/// Annotator view: no system names.
inline json to_json(const AnnotationBatch& b) {
  json gens = json::array();
  for (const auto& g : b.generations) gens.push_back({{"id", g.id}, {"text", g.text}, {"tokens", g.tokens}});
  json triples = json::array();
  for (const auto& t : b.triples) triples.push_back(detail::triple_json(t));
  return {{"schema_version", kSchemaVersion},
          {"batch_id", b.batch_id},
          {"sample_id", b.sample_id},
          {"triples", triples},
          {"references", b.references},
          {"generations", gens}};
}

inline AnnotationBatch batch_from_json(const json& j) {
  AnnotationBatch b;
  b.batch_id = j.at("batch_id").get<std::string>();
  b.sample_id = j.value("sample_id", "");
  for (const auto& t : j.at("triples")) b.triples.push_back(detail::triple_from(t));
  b.references = j.value("references", std::vector<std::string>{});
  for (const auto& g : j.at("generations")) {
    GenerationView v{g.at("id").get<std::string>(), g.at("text").get<std::string>(), {}};
    v.tokens = text::split_whitespace(v.text);
    b.generations.push_back(std::move(v));
  }
  return b;
}

inline json to_json(const ErrorAnnotation& a) {
  return {{"generation_id", a.generation_id}, {"annotator", a.annotator_id},
          {"fe_count", a.fe_count},           {"he_count", a.he_count},
          {"im_count", a.im_count},           {"im_triples", a.im_triples},
          {"fe_spans", detail::spans_json(a.fe_spans)}, {"he_spans", detail::spans_json(a.he_spans)}};
}

inline ErrorAnnotation error_from_json(const json& j, const std::string& annotator = "") {
  if (!j.is_object()) throw Error(ErrorCode::kSchema, "annotation must be an object");
  ErrorAnnotation a;
  if (!j.contains("generation_id") || !j["generation_id"].is_string()) {
    throw Error(ErrorCode::kSchema, "generation_id missing");
  }
  a.generation_id = j["generation_id"].get<std::string>();
  a.annotator_id = j.value("annotator", annotator);
  a.fe_count = detail::count_from(j, "fe_count");
  a.he_count = detail::count_from(j, "he_count");
  if (j.contains("im_triples")) {
    if (!j["im_triples"].is_array()) throw Error(ErrorCode::kSchema, "im_triples must be an array");
    for (const auto& i : j["im_triples"]) {
      if (!i.is_number_integer()) throw Error(ErrorCode::kSchema, "im_triples entries must be integers");
      a.im_triples.push_back(i.get<int>());
    }
  }
  a.im_count = j.contains("im_count") ? detail::count_from(j, "im_count") : static_cast<int>(a.im_triples.size());
  a.fe_spans = detail::spans_from(j.value("fe_spans", json()));
  a.he_spans = detail::spans_from(j.value("he_spans", json()));
  return a;
}

inline json to_json(const FluencyRanking& r) {
  return {{"batch_id", r.batch_id}, {"annotator", r.annotator_id}, {"ranks", r.ranks}};
}

inline FluencyRanking fluency_from_json(const json& j) {
  FluencyRanking r;
  r.batch_id = j.value("batch_id", "");
  r.annotator_id = j.value("annotator", "");
  if (!j.contains("ranks") || !j["ranks"].is_object()) throw Error(ErrorCode::kSchema, "ranks must be an object");
  for (const auto& [k, v] : j["ranks"].items()) {
    if (!v.is_number_integer()) throw Error(ErrorCode::kSchema, "rank of " + k + " must be an integer");
    r.ranks[k] = v.get<int>();
  }
  return r;
}

inline json to_json(const NormalizedScores& s) {
  return {{"system", s.system},
          {"fe", s.fe},
          {"he", s.he},
          {"im", s.im},
          {"fp", s.fp ? json(*s.fp) : json()},
          {"annotations", s.annotations},
          {"input_triples", s.input_triples},
          {"rankings", s.rankings}};
}

inline json to_json(const Blinding& b) { return {{"schema_version", kSchemaVersion}, {"system_of", b.system_of}}; }

// ---------------------------------------------------------------------------
// Batches

inline std::string batch_id(std::size_t index) {
  std::string n = std::to_string(index);
  return "b" + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

/// One batch per sample, generations shuffled per batch. outputs maps
/// system -> sample id -> generation.
inline BatchSet build_batches(const std::vector<corpus::Sample>& samples,
                              const std::map<std::string, std::map<std::string, std::string>>& outputs,
                              std::uint64_t seed) {
  if (outputs.size() < 2 || outputs.size() > 3) {
    throw Error(ErrorCode::kInvalidConfig, "a batch holds 2 or 3 systems, got " + std::to_string(outputs.size()));
  }
  for (const auto& [system, gens] : outputs) {
    for (const auto& s : samples) {
      if (!gens.count(s.id)) throw Error(ErrorCode::kCoverageGap, system + " has no generation for " + s.id);
    }
  }
  std::vector<std::string> systems;
  for (const auto& [name, _] : outputs) systems.push_back(name);
  Rng rng(seed, kBatchOrderStream);
  BatchSet set;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    AnnotationBatch b;
    b.batch_id = batch_id(i);
    b.sample_id = samples[i].id;
    b.triples = samples[i].triples;
    b.references = samples[i].references;
    const auto order = rng.permutation(systems.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::string& sys = systems[order[k]];
      GenerationView g;
      g.id = b.batch_id + "-" + static_cast<char>('A' + k);
      g.text = outputs.at(sys).at(samples[i].id);
      g.tokens = text::split_whitespace(g.text);
      set.blinding.system_of[g.id] = sys;
      b.generations.push_back(std::move(g));
    }
    set.batches.push_back(std::move(b));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Validation

/// Competition ranking: each rank is 1 + the number of items strictly
/// ahead of it, so {1,1,3} is legal and {1,1,2} is not.
inline std::vector<std::string> validate_ranking(const std::map<std::string, int>& ranks, std::size_t batch_size) {
  std::vector<std::string> v;
  if (ranks.size() != batch_size) {
    v.push_back("expected " + std::to_string(batch_size) + " ranks, got " + std::to_string(ranks.size()));
  }
  for (const auto& [id, r] : ranks) {
    if (r < 1) {
      v.push_back(id + ": rank must be at least 1");
      continue;
    }
    int ahead = 0;
    for (const auto& [other, q] : ranks) {
      if (other != id && q >= 1 && q < r) ++ahead;
    }
    if (r != ahead + 1) {
      v.push_back(id + ": rank " + std::to_string(r) + " should be " + std::to_string(ahead + 1) + " (" +
                  std::to_string(ahead) + " ranked ahead)");
    }
  }
  return v;
}

/// Same rule, plus every generation of the batch ranked exactly once.
inline std::vector<std::string> validate_ranking(const FluencyRanking& r, const AnnotationBatch& batch) {
  std::vector<std::string> v;
  for (const auto& [id, _] : r.ranks) {
    if (!batch.find(id)) v.push_back(id + ": not a generation of " + batch.batch_id);
  }
  for (const auto& g : batch.generations) {
    if (!r.ranks.count(g.id)) v.push_back(g.id + ": missing rank");
  }
  auto rest = validate_ranking(r.ranks, batch.generations.size());
  v.insert(v.end(), rest.begin(), rest.end());
  return v;
}

inline std::vector<std::string> validate_errors(const ErrorAnnotation& a, const AnnotationBatch& batch) {
  std::vector<std::string> v;
  const GenerationView* g = batch.find(a.generation_id);
  if (!g) {
    v.push_back(a.generation_id + ": not a generation of " + batch.batch_id);
    return v;
  }
  if (a.fe_count < 0) v.push_back("fe_count must be nonnegative");
  if (a.he_count < 0) v.push_back("he_count must be nonnegative");
  const int n_tok = static_cast<int>(g->tokens.size());
  for (const auto* spans : {&a.fe_spans, &a.he_spans}) {
    const char* tag = spans == &a.fe_spans ? "FE" : "HE";
    std::set<TokenSpan> seen;
    for (const auto& s : *spans) {
      if (s.begin < 0 || s.end <= s.begin || s.end > n_tok) {
        v.push_back(std::string(tag) + " span [" + std::to_string(s.begin) + ", " + std::to_string(s.end) +
                    ") outside 0.." + std::to_string(n_tok));
      } else if (!seen.insert(s).second) {
        v.push_back(std::string(tag) + " span [" + std::to_string(s.begin) + ", " + std::to_string(s.end) +
                    ") given twice");
      }
    }
  }
  std::set<int> im;
  for (int i : a.im_triples) {
    if (i < 0 || i >= static_cast<int>(batch.triples.size())) {
      v.push_back("im triple " + std::to_string(i) + " out of range");
    } else if (!im.insert(i).second) {
      v.push_back("im triple " + std::to_string(i) + " given twice");
    }
  }
  if (a.im_count != static_cast<int>(a.im_triples.size())) {
    v.push_back("im_count " + std::to_string(a.im_count) + " != " + std::to_string(a.im_triples.size()) +
                " selected triples");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace detail {

struct Lookup {
  std::map<std::string, const AnnotationBatch*> batch;
  std::map<std::string, const AnnotationBatch*> batch_of_generation;
};

inline Lookup index(const std::vector<AnnotationBatch>& batches) {
  Lookup l;
  for (const auto& b : batches) {
    l.batch[b.batch_id] = &b;
    for (const auto& g : b.generations) l.batch_of_generation[g.id] = &b;
  }
  return l;
}

}  // namespace detail

/// Per-system rates: 100 * sum(count) / sum(input triples) over annotated
/// generations; FP is the mean rank over all rankings.
inline std::map<std::string, NormalizedScores> normalize_scores(const std::vector<AnnotationBatch>& batches,
                                                                const Blinding& blinding,
                                                                const std::vector<ErrorAnnotation>& errors,
                                                                const std::vector<FluencyRanking>& rankings = {}) {
  const auto idx = detail::index(batches);
  struct Acc {
    long long fe = 0, he = 0, im = 0, triples = 0, rank_sum = 0;
    std::size_t annotations = 0, ranks = 0;
  };
  std::map<std::string, Acc> acc;
  auto system_of = [&](const std::string& gen) -> const std::string& {
    auto it = blinding.system_of.find(gen);
    if (it == blinding.system_of.end() || !idx.batch_of_generation.count(gen)) {
      throw Error(ErrorCode::kUnknownBatch, "unknown generation " + gen);
    }
    return it->second;
  };
  for (const auto& a : errors) {
    auto& s = acc[system_of(a.generation_id)];
    s.fe += a.fe_count;
    s.he += a.he_count;
    s.im += a.im_count;
    s.triples += static_cast<long long>(idx.batch_of_generation.at(a.generation_id)->triples.size());
    ++s.annotations;
  }
  for (const auto& r : rankings) {
    if (!idx.batch.count(r.batch_id)) throw Error(ErrorCode::kUnknownBatch, "unknown batch " + r.batch_id);
    for (const auto& [gen, rank] : r.ranks) {
      auto& s = acc[system_of(gen)];
      s.rank_sum += rank;
      ++s.ranks;
    }
  }
  std::map<std::string, NormalizedScores> out;
  for (const auto& [sys, a] : acc) {
    NormalizedScores n;
    n.system = sys;
    if (a.triples > 0) {
      n.fe = 100.0 * static_cast<double>(a.fe) / static_cast<double>(a.triples);
      n.he = 100.0 * static_cast<double>(a.he) / static_cast<double>(a.triples);
      n.im = 100.0 * static_cast<double>(a.im) / static_cast<double>(a.triples);
    }
    if (a.ranks > 0) n.fp = static_cast<double>(a.rank_sum) / static_cast<double>(a.ranks);
    n.annotations = a.annotations;
    n.input_triples = static_cast<std::size_t>(a.triples);
    n.rankings = a.ranks;
    out[sys] = n;
  }
  return out;
}

struct Kappa {
  double value = 0.0;
  bool defined = true;  // false only when chance agreement is 1 but observed is not
  double observed = 0.0;
  double chance = 0.0;
  std::size_t n = 0;
};

inline json to_json(const Kappa& k) {
  return {{"kappa", k.defined ? json(k.value) : json()}, {"defined", k.defined},
          {"observed", k.observed}, {"chance", k.chance}, {"n", k.n}};
}

/// Cohen's kappa over categorical labels.
inline Kappa cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " labels");
  }
  if (a.empty()) throw Error(ErrorCode::kLengthMismatch, "no labels");
  const double n = static_cast<double>(a.size());
  std::map<int, double> ca, cb;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    same += a[i] == b[i];
  }
  Kappa k;
  k.n = a.size();
  k.observed = static_cast<double>(same) / n;
  for (const auto& [label, c] : ca) {
    auto it = cb.find(label);
    if (it != cb.end()) k.chance += (c / n) * (it->second / n);
  }
  if (k.chance >= 1.0) {
    k.defined = k.observed >= 1.0;
    k.value = k.defined ? 1.0 : 0.0;
    return k;
  }
  k.value = (k.observed - k.chance) / (1.0 - k.chance);
  return k;
}

struct Agreement {
  Kappa fe, he, im;
  std::size_t generations = 0;
};

inline json to_json(const Agreement& a) {
  return {{"fe", to_json(a.fe)}, {"he", to_json(a.he)}, {"im", to_json(a.im)}, {"generations", a.generations}};
}

/// Kappa per error type; counts are the categories (or presence when
/// binarize is set). Both annotators must cover the same generations.
inline Agreement agreement_report(const std::vector<ErrorAnnotation>& a, const std::vector<ErrorAnnotation>& b,
                                  bool binarize = false) {
  std::map<std::string, const ErrorAnnotation*> ma, mb;
  for (const auto& x : a) ma[x.generation_id] = &x;
  for (const auto& x : b) mb[x.generation_id] = &x;
  for (const auto& [id, _] : ma) {
    if (!mb.count(id)) throw Error(ErrorCode::kCoverageGap, id + " annotated by one annotator only");
  }
  for (const auto& [id, _] : mb) {
    if (!ma.count(id)) throw Error(ErrorCode::kCoverageGap, id + " annotated by one annotator only");
  }
  auto label = [&](int c) { return binarize ? static_cast<int>(c > 0) : c; };
  std::vector<int> fa, fb, ha, hb, ia, ib;
  for (const auto& [id, x] : ma) {
    const ErrorAnnotation* y = mb.at(id);
    fa.push_back(label(x->fe_count));
    fb.push_back(label(y->fe_count));
    ha.push_back(label(x->he_count));
    hb.push_back(label(y->he_count));
    ia.push_back(label(x->im_count));
    ib.push_back(label(y->im_count));
  }
  if (fa.empty()) throw Error(ErrorCode::kCoverageGap, "no annotated generations");
  return {cohen_kappa(fa, fb), cohen_kappa(ha, hb), cohen_kappa(ia, ib), fa.size()};
}

// ---------------------------------------------------------------------------
// Persistence

enum class Task { kErrors, kFluency };

inline std::string task_name(Task t) { return t == Task::kErrors ? "errors" : "fluency"; }

/// Batches plus every accepted submission. Files in dir:
///   batches.json      annotator view
///   blinding.json     generation -> system, never served to annotators
///   annotations.jsonl append-only log, flushed per write
///   snapshot.json     state as of a log sequence number
/// Writes per (task, batch, annotator) replace the previous one; a write
/// that names a version must match the current one.
class AnnotationStore {
 public:
  static AnnotationStore create(const fs::path& dir, const BatchSet& set) {
    fs::create_directories(dir);
    json batches = json::array();
    for (const auto& b : set.batches) batches.push_back(to_json(b));
    write_file(dir / "batches.json", json{{"schema_version", kSchemaVersion}, {"batches", batches}}.dump(1));
    write_file(dir / "blinding.json", to_json(set.blinding).dump(1));
    return AnnotationStore(dir);
  }

  explicit AnnotationStore(const fs::path& dir) : dir_(dir) {
    const json bj = read_file(dir / "batches.json");
    check_version(bj);
    for (const auto& b : bj.at("batches")) batches_.push_back(batch_from_json(b));
    const json blind = read_file(dir / "blinding.json");
    check_version(blind);
    blinding_.system_of = blind.at("system_of").get<std::map<std::string, std::string>>();
    for (std::size_t i = 0; i < batches_.size(); ++i) index_[batches_[i].batch_id] = i;
    replay();
    log_.open(dir_ / "annotations.jsonl", std::ios::app);
    if (!log_) throw Error(ErrorCode::kIo, "cannot open annotation log in " + dir_.string());
  }

  AnnotationStore(AnnotationStore&& o) noexcept
      : dir_(std::move(o.dir_)), batches_(std::move(o.batches_)), blinding_(std::move(o.blinding_)),
        index_(std::move(o.index_)), entries_(std::move(o.entries_)), seq_(o.seq_) {
    o.log_.close();
    log_.open(dir_ / "annotations.jsonl", std::ios::app);
  }

  const fs::path& dir() const { return dir_; }
  const std::vector<AnnotationBatch>& batches() const { return batches_; }
  const Blinding& blinding() const { return blinding_; }

  const AnnotationBatch& batch(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorCode::kUnknownBatch, "unknown batch " + id);
    return batches_[it->second];
  }

  /// First batch the annotator has not submitted for the task; without a
  /// task, the first batch with no submission of either kind.
  std::optional<AnnotationBatch> next_batch(const std::string& annotator, std::optional<Task> task = {}) const {
    std::shared_lock lock(mu_);
    for (const auto& b : batches_) {
      const bool err = entries_.count({Task::kErrors, b.batch_id, annotator}) > 0;
      const bool flu = entries_.count({Task::kFluency, b.batch_id, annotator}) > 0;
      const bool done = task ? (*task == Task::kErrors ? err : flu) : (err || flu);
      if (!done) return b;
    }
    return std::nullopt;
  }

  int version(Task task, const std::string& batch_id, const std::string& annotator) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find({task, batch_id, annotator});
    return it == entries_.end() ? 0 : it->second.version;
  }

  /// Stores an annotator's error annotations for one batch. Returns the
  /// new version. Throws SchemaError with the violations, VersionConflict.
  int submit_errors(const std::string& batch_id, const std::string& annotator, std::vector<ErrorAnnotation> anns,
                    std::optional<int> expected_version = {}) {
    const AnnotationBatch& b = batch(batch_id);
    if (annotator.empty()) throw Error(ErrorCode::kSchema, "annotator missing");
    if (anns.empty()) throw Error(ErrorCode::kSchema, "no annotations");
    std::set<std::string> gens;
    std::vector<std::string> v;
    for (auto& a : anns) {
      a.annotator_id = annotator;
      auto more = validate_errors(a, b);
      v.insert(v.end(), more.begin(), more.end());
      if (!gens.insert(a.generation_id).second) v.push_back(a.generation_id + ": annotated twice");
    }
    if (!v.empty()) throw violations(v);
    json payload = json::array();
    for (const auto& a : anns) payload.push_back(to_json(a));
    return write(Task::kErrors, batch_id, annotator, std::move(payload), expected_version);
  }

  int submit_fluency(FluencyRanking r, std::optional<int> expected_version = {}) {
    const AnnotationBatch& b = batch(r.batch_id);
    if (r.annotator_id.empty()) throw Error(ErrorCode::kSchema, "annotator missing");
    auto v = validate_ranking(r, b);
    if (!v.empty()) throw violations(v);
    return write(Task::kFluency, r.batch_id, r.annotator_id, to_json(r), expected_version);
  }

  std::vector<ErrorAnnotation> error_annotations() const {
    std::shared_lock lock(mu_);
    std::vector<ErrorAnnotation> out;
    for (const auto& [key, e] : entries_) {
      if (std::get<0>(key) != Task::kErrors) continue;
      for (const auto& a : e.payload) out.push_back(error_from_json(a));
    }
    return out;
  }

  std::vector<FluencyRanking> fluency_rankings() const {
    std::shared_lock lock(mu_);
    std::vector<FluencyRanking> out;
    for (const auto& [key, e] : entries_) {
      if (std::get<0>(key) == Task::kFluency) out.push_back(fluency_from_json(e.payload));
    }
    return out;
  }

  std::map<std::string, NormalizedScores> scores() const {
    return normalize_scores(batches_, blinding_, error_annotations(), fluency_rankings());
  }

  json scores_report() const {
    json systems = json::object();
    for (const auto& [name, s] : scores()) systems[name] = to_json(s);
    return {{"schema_version", kSchemaVersion}, {"systems", systems}};
  }

  /// Kappa for every annotator pair, over the generations both annotated.
  json agreement_json(bool binarize = false) const {
    std::map<std::string, std::vector<ErrorAnnotation>> by;
    for (auto& a : error_annotations()) by[a.annotator_id].push_back(std::move(a));
    json pairs = json::array();
    for (auto i = by.begin(); i != by.end(); ++i) {
      for (auto j = std::next(i); j != by.end(); ++j) {
        std::set<std::string> gi, common;
        for (const auto& a : i->second) gi.insert(a.generation_id);
        for (const auto& a : j->second) {
          if (gi.count(a.generation_id)) common.insert(a.generation_id);
        }
        if (common.empty()) continue;
        auto keep = [&](const std::vector<ErrorAnnotation>& v) {
          std::vector<ErrorAnnotation> out;
          for (const auto& a : v) {
            if (common.count(a.generation_id)) out.push_back(a);
          }
          return out;
        };
        json p = to_json(agreement_report(keep(i->second), keep(j->second), binarize));
        p["annotators"] = {i->first, j->first};
        pairs.push_back(p);
      }
    }
    return {{"schema_version", kSchemaVersion}, {"binarize", binarize}, {"pairs", pairs}};
  }

  /// Writes snapshot.json (atomic rename). The log stays append-only.
  void flush() {
    std::unique_lock lock(mu_);
    log_.flush();
    json entries = json::array();
    for (const auto& [key, e] : entries_) entries.push_back(entry_json(key, e));
    write_file(dir_ / "snapshot.json",
               json{{"schema_version", kSchemaVersion}, {"seq", seq_}, {"entries", entries}}.dump(1));
  }

  std::uint64_t sequence() const {
    std::shared_lock lock(mu_);
    return seq_;
  }

 private:
  using Key = std::tuple<Task, std::string, std::string>;  // task, batch, annotator
  struct Entry {
    int version = 0;
    json payload;
  };

  static Error violations(const std::vector<std::string>& v) {
    std::string msg;
    for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
    return Error(ErrorCode::kSchema, msg);
  }

  static void write_file(const fs::path& p, const std::string& content) {
    const fs::path tmp = p.string() + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
      out << content;
    }
    fs::rename(tmp, p);
  }

  static json read_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(ErrorCode::kIo, "cannot read " + p.string());
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchema, p.string() + ": " + e.what());
    }
  }

  static void check_version(const json& j) {
    if (j.value("schema_version", 0) != kSchemaVersion) {
      throw Error(ErrorCode::kSchema, "unsupported schema_version " + j.value("schema_version", json()).dump());
    }
  }

  static json entry_json(const Key& key, const Entry& e) {
    return {{"task", task_name(std::get<0>(key))}, {"batch_id", std::get<1>(key)},
            {"annotator", std::get<2>(key)},      {"version", e.version},
            {"payload", e.payload}};
  }

  void apply(const json& j) {
    const Task t = j.at("task").get<std::string>() == "errors" ? Task::kErrors : Task::kFluency;
    entries_[{t, j.at("batch_id").get<std::string>(), j.at("annotator").get<std::string>()}] =
        Entry{j.at("version").get<int>(), j.at("payload")};
  }

  void replay() {
    if (fs::exists(dir_ / "snapshot.json")) {
      const json snap = read_file(dir_ / "snapshot.json");
      check_version(snap);
      seq_ = snap.at("seq").get<std::uint64_t>();
      for (const auto& e : snap.at("entries")) apply(e);
    }
    std::ifstream in(dir_ / "annotations.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        break;  // torn final line from a crash
      }
      const auto seq = j.at("seq").get<std::uint64_t>();
      if (seq <= seq_) continue;
      apply(j);
      seq_ = seq;
    }
  }

  int write(Task task, const std::string& batch_id, const std::string& annotator, json payload,
            std::optional<int> expected) {
    std::unique_lock lock(mu_);
    const Key key{task, batch_id, annotator};
    auto it = entries_.find(key);
    const int current = it == entries_.end() ? 0 : it->second.version;
    if (expected && *expected != current) {
      throw Error(ErrorCode::kVersionConflict, task_name(task) + " for " + batch_id + " by " + annotator +
                                                   " is at version " + std::to_string(current) + ", not " +
                                                   std::to_string(*expected));
    }
    Entry e{current + 1, std::move(payload)};
    json line = entry_json(key, e);
    line["schema_version"] = kSchemaVersion;
    line["seq"] = seq_ + 1;
    log_ << line.dump() << '\n';
    log_.flush();
    if (!log_) throw Error(ErrorCode::kIo, "annotation log write failed");
    ++seq_;
    entries_[key] = std::move(e);
    return current + 1;
  }

  fs::path dir_;
  std::vector<AnnotationBatch> batches_;
  Blinding blinding_;
  std::map<std::string, std::size_t> index_;
  std::map<Key, Entry> entries_;
  std::uint64_t seq_ = 0;
  std::ofstream log_;
  mutable std::shared_mutex mu_;
};

}  // namespace cyclegen::humaneval
