#pragma once

// Dataset ingestion and the corpus constructions used by the training
// strategies: unpaired splits, low-resource subsets and overlap-controlled
// corpora.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "cyclegen/error.hpp"
#include "cyclegen/rng.hpp"
#include "cyclegen/text.hpp"
#include "cyclegen/triple_codec.hpp"

namespace cyclegen::corpus {

using codec::Triple;
using TripleSet = std::vector<Triple>;

struct Sample {
  std::string id;
  TripleSet triples;
  std::vector<std::string> references;
  std::optional<std::string> category;
};

enum class Split { kTrain, kDev, kTest };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev" || s == "validation" || s == "val") return Split::kDev;
  if (s == "test") return Split::kTest;
  return std::nullopt;
}

struct Dataset {
  std::string name;
  std::map<Split, std::vector<Sample>> splits;

  const std::vector<Sample>& split(Split s) const {
    static const std::vector<Sample> empty;
    auto it = splits.find(s);
    return it == splits.end() ? empty : it->second;
  }
  std::vector<Sample>& split(Split s) { return splits[s]; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [_, v] : splits) n += v.size();
    return n;
  }
};

/// The trainer-facing half of a CorpusPair: entries only, no sample ids.
struct UnpairedCorpora {
  std::vector<TripleSet> data;
  std::vector<std::string> text;
};

struct CorpusPair {
  UnpairedCorpora corpora;
  std::vector<std::string> data_provenance;  // data[i] came from sample data_provenance[i]
  std::vector<std::string> text_provenance;

  const std::vector<TripleSet>& data_corpus() const { return corpora.data; }
  const std::vector<std::string>& text_corpus() const { return corpora.text; }
};

// ---------------------------------------------------------------------------
// Loading

enum class Format { kWebNlgJsonl, kDartJsonl };

struct LoadIssue {
  std::size_t line = 0;
  std::string field;
  std::string message;
};

struct LoadReport {
  std::size_t lines_read = 0;
  std::vector<LoadIssue> issues;
};

struct LoadOptions {
  bool strict = true;               // throw on the first malformed line
  std::string default_split = "train";
};

namespace detail {

[[noreturn]] inline void schema_fail(std::size_t line, const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::kSchema, "line " + std::to_string(line) + ", field '" + field + "': " + msg);
}

inline Triple parse_triple(const nlohmann::json& j, std::size_t line) {
  Triple t;
  if (j.is_array() && j.size() == 3 && j[0].is_string() && j[1].is_string() && j[2].is_string()) {
    t = {j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
  } else if (j.is_object() && j.contains("subject") && j.contains("predicate") && j.contains("object")) {
    t = {j["subject"].get<std::string>(), j["predicate"].get<std::string>(), j["object"].get<std::string>()};
  } else {
    schema_fail(line, "triples", "each triple must be [s, p, o]");
  }
  t = codec::normalize(t);
  try {
    codec::validate(t);
  } catch (const Error& e) {
    schema_fail(line, "triples", e.what());
  }
  return t;
}

inline std::pair<std::string, Sample> parse_sample(const std::string& raw, std::size_t line, Format format,
                                                   const LoadOptions& opts) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error& e) {
    schema_fail(line, "<line>", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) schema_fail(line, "<line>", "expected a JSON object");
  Sample s;
  if (!j.contains("id")) schema_fail(line, "id", "missing");
  s.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
  if (!j.contains("triples") || !j["triples"].is_array()) schema_fail(line, "triples", "missing or not a list");
  for (const auto& tj : j["triples"]) s.triples.push_back(parse_triple(tj, line));
  if (s.triples.empty()) schema_fail(line, "triples", "at least one triple required");
  if (!j.contains("references") || !j["references"].is_array()) {
    schema_fail(line, "references", "missing or not a list");
  }
  for (const auto& r : j["references"]) {
    if (!r.is_string() || text::trim(r.get<std::string>()).empty()) {
      schema_fail(line, "references", "references must be non-empty strings");
    }
    s.references.push_back(text::trim(r.get<std::string>()));
  }
  if (s.references.empty()) schema_fail(line, "references", "at least one reference required");
  const char* cat_key = format == Format::kDartJsonl && j.contains("source") ? "source" : "category";
  if (j.contains(cat_key) && j[cat_key].is_string()) s.category = j[cat_key].get<std::string>();
  std::string split = opts.default_split;
  if (j.contains("split")) {
    if (!j["split"].is_string() || !parse_split(j["split"].get<std::string>())) {
      schema_fail(line, "split", "must be train, dev or test");
    }
    split = j["split"].get<std::string>();
  }
  return {split, std::move(s)};
}

}  // namespace detail

/// Reads one JSON object per line: {id, triples: [[s,p,o],...], references: [...],
/// category?, split?}. Every triple field is surface-normalized.
inline Dataset load_dataset(const std::filesystem::path& path, Format format, const LoadOptions& opts = {},
                            LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  Dataset ds;
  ds.name = path.stem().string();
  std::unordered_set<std::string> seen;
  LoadReport local;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    ++local.lines_read;
    try {
      auto [split, sample] = detail::parse_sample(line, lineno, format, opts);
      if (!seen.insert(sample.id).second) detail::schema_fail(lineno, "id", "duplicate id " + sample.id);
      ds.split(*parse_split(split)).push_back(std::move(sample));
    } catch (const Error& e) {
      if (opts.strict) throw;
      local.issues.push_back({lineno, "", e.what()});
    }
  }
  if (report) *report = std::move(local);
  return ds;
}

inline nlohmann::json to_json(const Sample& s, std::optional<Split> split = std::nullopt) {
  nlohmann::json j;
  j["id"] = s.id;
  j["triples"] = nlohmann::json::array();
  for (const auto& t : s.triples) j["triples"].push_back({t.subject, t.predicate, t.object});
  j["references"] = s.references;
  if (s.category) j["category"] = *s.category;
  if (split) j["split"] = std::string(split_name(*split));
  return j;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& [split, samples] : ds.splits) {
    for (const auto& s : samples) out << to_json(s, split).dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Cleaning

struct DropReport {
  std::map<Split, std::size_t> dropped;
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [_, c] : dropped) n += c;
    return n;
  }
};

struct CleanOptions {
  // A sample is dropped when any triple field matches one of these.
  std::vector<std::string> denylist = {R"(\[[^\]]*\])"};
};

inline Dataset clean_dart(const Dataset& ds, DropReport& report, const CleanOptions& opts = {}) {
  std::vector<std::regex> patterns;
  for (const auto& p : opts.denylist) patterns.emplace_back(p);
  auto tagged = [&](const std::string& f) {
    return std::any_of(patterns.begin(), patterns.end(), [&](const std::regex& r) { return std::regex_search(f, r); });
  };
  Dataset out;
  out.name = ds.name;
  report = {};
  for (const auto& [split, samples] : ds.splits) {
    auto& kept = out.split(split);
    report.dropped[split] = 0;
    for (const auto& s : samples) {
      const bool drop = std::any_of(s.triples.begin(), s.triples.end(), [&](const Triple& t) {
        return tagged(t.subject) || tagged(t.predicate) || tagged(t.object);
      });
      if (drop) {
        ++report.dropped[split];
      } else {
        kept.push_back(s);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus construction. Stream tags keep the shuffles of different operations
// independent for the same user seed.

inline constexpr std::uint64_t kDataShuffleStream = 1;
inline constexpr std::uint64_t kTextShuffleStream = 2;
inline constexpr std::uint64_t kLowResourceStream = 3;
inline constexpr std::uint64_t kOverlapHalfStream = 4;
inline constexpr std::uint64_t kOverlapPickStream = 5;

/// Every sample gives its triple set and its first reference; the two lists
/// are shuffled independently so the pairing cannot be read off the order.
inline CorpusPair split_unpaired(const std::vector<Sample>& samples, std::uint64_t seed) {
  if (samples.empty()) throw Error(ErrorCode::kEmptySplit, "split_unpaired needs at least one sample");
  Rng data_rng(seed, kDataShuffleStream);
  Rng text_rng(seed, kTextShuffleStream);
  const auto data_order = data_rng.permutation(samples.size());
  const auto text_order = text_rng.permutation(samples.size());
  CorpusPair pair;
  for (std::size_t i : data_order) {
    pair.corpora.data.push_back(samples[i].triples);
    pair.data_provenance.push_back(samples[i].id);
  }
  for (std::size_t i : text_order) {
    pair.corpora.text.push_back(samples[i].references.front());
    pair.text_provenance.push_back(samples[i].id);
  }
  return pair;
}

/// Uniform sample of n items without replacement (partial Fisher-Yates).
inline std::vector<Sample> sample_low_resource(const std::vector<Sample>& samples, std::size_t n, std::uint64_t seed) {
  if (n > samples.size()) {
    throw Error(ErrorCode::kNotEnoughSamples,
                "requested " + std::to_string(n) + " of " + std::to_string(samples.size()) + " samples");
  }
  Rng rng(seed, kLowResourceStream);
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = k + rng.below(idx.size() - k);
    std::swap(idx[k], idx[j]);
    out.push_back(samples[idx[k]]);
  }
  return out;
}

inline bool valid_overlap_level(int percent) {
  return percent == 0 || percent == 25 || percent == 50 || percent == 75 || percent == 100;
}

/// Half of the split (chosen at random) becomes the data corpus. The text
/// corpus has the same size: `level_percent` of it are references of the
/// selected half, the rest are references of the excluded half.
inline CorpusPair build_overlap_corpora(const std::vector<Sample>& samples, int level_percent, std::uint64_t seed) {
  if (!valid_overlap_level(level_percent)) {
    throw Error(ErrorCode::kInvalidConfig, "overlap level must be one of 0, 25, 50, 75, 100");
  }
  if (samples.empty()) throw Error(ErrorCode::kEmptySplit, "build_overlap_corpora needs samples");
  const std::size_t half = samples.size() / 2;
  if (half == 0) throw Error(ErrorCode::kInsufficientComplement, "split too small to halve");
  Rng half_rng(seed, kOverlapHalfStream);
  const auto order = half_rng.permutation(samples.size());
  std::vector<std::size_t> selected(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<std::size_t> excluded(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());

  const std::size_t related = half * static_cast<std::size_t>(level_percent) / 100;
  const std::size_t unrelated = half - related;
  if (unrelated > excluded.size()) {
    throw Error(ErrorCode::kInsufficientComplement, "not enough unrelated texts");
  }

  Rng pick_rng(seed, kOverlapPickStream);
  std::vector<std::size_t> rel_pool = selected;
  std::vector<std::size_t> unrel_pool = excluded;
  pick_rng.shuffle(rel_pool);
  pick_rng.shuffle(unrel_pool);

  std::vector<std::size_t> text_sources(rel_pool.begin(), rel_pool.begin() + static_cast<std::ptrdiff_t>(related));
  text_sources.insert(text_sources.end(), unrel_pool.begin(), unrel_pool.begin() + static_cast<std::ptrdiff_t>(unrelated));

  Rng data_rng(seed, kDataShuffleStream);
  Rng text_rng(seed, kTextShuffleStream);
  data_rng.shuffle(selected);
  text_rng.shuffle(text_sources);

  CorpusPair pair;
  for (std::size_t i : selected) {
    pair.corpora.data.push_back(samples[i].triples);
    pair.data_provenance.push_back(samples[i].id);
  }
  for (std::size_t i : text_sources) {
    pair.corpora.text.push_back(samples[i].references.front());
    pair.text_provenance.push_back(samples[i].id);
  }
  return pair;
}

/// Number of text entries whose source sample also contributed a data entry.
inline std::size_t provenance_overlap(const CorpusPair& pair) {
  const std::unordered_set<std::string> data_ids(pair.data_provenance.begin(), pair.data_provenance.end());
  return static_cast<std::size_t>(std::count_if(pair.text_provenance.begin(), pair.text_provenance.end(),
                                                [&](const std::string& id) { return data_ids.count(id) > 0; }));
}

// ---------------------------------------------------------------------------
// Corpus files: <prefix>.data.jsonl, <prefix>.text.jsonl, <prefix>.provenance.json

inline void write_corpus_pair(const CorpusPair& pair, const std::string& prefix, std::uint64_t seed) {
  std::ofstream data(prefix + ".data.jsonl"), txt(prefix + ".text.jsonl"), prov(prefix + ".provenance.json");
  if (!data || !txt || !prov) throw Error(ErrorCode::kIo, "cannot write corpus files at " + prefix);
  for (const auto& ts : pair.corpora.data) {
    nlohmann::json j;
    j["triples"] = nlohmann::json::array();
    for (const auto& t : ts) j["triples"].push_back({t.subject, t.predicate, t.object});
    data << j.dump() << '\n';
  }
  for (const auto& t : pair.corpora.text) txt << nlohmann::json{{"text", t}}.dump() << '\n';
  nlohmann::json p;
  p["version"] = 1;
  p["seed"] = seed;
  p["rng"] = std::string(kRngAlgorithm);
  p["data"] = pair.data_provenance;
  p["text"] = pair.text_provenance;
  prov << p.dump(2) << '\n';
}

/// Reads the two corpus files; provenance is deliberately not loaded.
inline UnpairedCorpora read_unpaired(const std::string& prefix) {
  UnpairedCorpora out;
  std::ifstream data(prefix + ".data.jsonl"), txt(prefix + ".text.jsonl");
  if (!data || !txt) throw Error(ErrorCode::kIo, "cannot read corpus files at " + prefix);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(data, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("triples")) detail::schema_fail(lineno, "triples", "bad data entry");
    TripleSet ts;
    for (const auto& tj : j["triples"]) ts.push_back(detail::parse_triple(tj, lineno));
    out.data.push_back(std::move(ts));
  }
  lineno = 0;
  while (std::getline(txt, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("text")) detail::schema_fail(lineno, "text", "bad text entry");
    out.text.push_back(j["text"].get<std::string>());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct DatasetStats {
  std::map<Split, std::size_t> split_sizes;
  std::size_t unique_predicates = 0;
  double median_triples = 0.0;
  std::size_t max_triples = 0;
  std::size_t vocab_size = 0;
  double median_ref_tokens = 0.0;
  std::size_t max_ref_tokens = 0;
};

namespace detail {

inline double median(std::vector<std::size_t> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? static_cast<double>(v[n / 2]) : (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2])) / 2.0;
}

}  // namespace detail

inline DatasetStats compute_stats(const Dataset& ds) {
  DatasetStats st;
  std::set<std::string> predicates;
  std::unordered_set<std::string> vocab;
  std::vector<std::size_t> triple_counts, ref_lengths;
  for (const auto& [split, samples] : ds.splits) {
    st.split_sizes[split] = samples.size();
    for (const auto& s : samples) {
      triple_counts.push_back(s.triples.size());
      for (const auto& t : s.triples) predicates.insert(t.predicate);
      for (const auto& r : s.references) {
        const auto toks = text::split_whitespace(r);
        ref_lengths.push_back(toks.size());
        vocab.insert(toks.begin(), toks.end());
      }
    }
  }
  st.unique_predicates = predicates.size();
  st.median_triples = detail::median(triple_counts);
  st.max_triples = triple_counts.empty() ? 0 : *std::max_element(triple_counts.begin(), triple_counts.end());
  st.vocab_size = vocab.size();
  st.median_ref_tokens = detail::median(ref_lengths);
  st.max_ref_tokens = ref_lengths.empty() ? 0 : *std::max_element(ref_lengths.begin(), ref_lengths.end());
  return st;
}

}  // namespace cyclegen::corpus
