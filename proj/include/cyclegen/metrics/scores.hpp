#pragma once

// Reference-based generation metrics. All of them work on lower-cased tokens
// from text::tokenize_lower, so "Paris." and "paris" agree.
//
//   rouge_n / rouge_l   F1, max over references
//   bleu                corpus BLEU-4, multi-reference clipping
//   meteor_lite         exact + Porter-stem unigram alignment, no synonyms
//   parent              table-entailed precision / mixed recall F1

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cyclegen/error.hpp"
#include "cyclegen/metrics/porter_stemmer.hpp"
#include "cyclegen/text.hpp"
#include "cyclegen/triple_codec.hpp"

namespace cyclegen::metrics {

using Tokens = std::vector<std::string>;
using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, std::size_t>;

inline Tokens tokens_of(std::string_view s) { return text::tokenize_lower(s); }

inline NgramCounts ngram_counts(const Tokens& toks, std::size_t n) {
  NgramCounts out;
  if (n == 0 || toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++out[Ngram(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

inline std::size_t clipped_overlap(const NgramCounts& hyp, const NgramCounts& ref) {
  std::size_t m = 0;
  for (const auto& [g, c] : hyp) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// ---------------------------------------------------------------- ROUGE

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool empty_generation = false;
};

namespace detail {

template <class PerRef>
RougeScore best_over_refs(const Tokens& gen, std::span<const std::string> refs, PerRef&& per_ref) {
  RougeScore best;
  if (gen.empty()) {
    best.empty_generation = true;
    return best;
  }
  bool first = true;
  for (const auto& r : refs) {
    RougeScore s = per_ref(tokens_of(r));
    if (first || s.f1 > best.f1) best = s;
    first = false;
  }
  return best;
}

}  // namespace detail

inline RougeScore rouge_n(std::string_view gen, std::span<const std::string> refs, std::size_t n) {
  if (n < 1) throw Error(ErrorCode::kInvalidConfig, "rouge_n: n-gram order must be >= 1");
  const Tokens g = tokens_of(gen);
  const NgramCounts gc = ngram_counts(g, n);
  std::size_t g_total = g.size() >= n ? g.size() - n + 1 : 0;
  return detail::best_over_refs(g, refs, [&](const Tokens& r) {
    RougeScore s;
    const std::size_t r_total = r.size() >= n ? r.size() - n + 1 : 0;
    const std::size_t m = clipped_overlap(gc, ngram_counts(r, n));
    s.precision = g_total ? static_cast<double>(m) / static_cast<double>(g_total) : 0.0;
    s.recall = r_total ? static_cast<double>(m) / static_cast<double>(r_total) : 0.0;
    s.f1 = f1(s.precision, s.recall);
    return s;
  });
}

inline RougeScore rouge_l(std::string_view gen, std::span<const std::string> refs) {
  const Tokens g = tokens_of(gen);
  return detail::best_over_refs(g, refs, [&](const Tokens& r) {
    RougeScore s;
    const double l = static_cast<double>(lcs_length(g, r));
    s.precision = l / static_cast<double>(g.size());
    s.recall = r.empty() ? 0.0 : l / static_cast<double>(r.size());
    s.f1 = f1(s.precision, s.recall);
    return s;
  });
}

// ---------------------------------------------------------------- BLEU

struct BleuSegment {
  std::string generation;
  std::vector<std::string> references;
};

struct BleuOptions {
  std::size_t max_order = 4;
  // Zero-match precisions become epsilon / total instead of 0.
  double epsilon = 1e-9;
};

struct BleuResult {
  double score = 0.0;  // [0, 100]
  std::vector<double> precisions;
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  double brevity_penalty = 1.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  // Orders with no hypothesis n-grams at all are left out of the mean.
  std::size_t effective_order = 0;
};

inline BleuResult bleu(std::span<const BleuSegment> corpus, const BleuOptions& opt = {}) {
  BleuResult res;
  const std::size_t N = opt.max_order;
  res.matches.assign(N, 0);
  res.totals.assign(N, 0);
  res.precisions.assign(N, 0.0);
  for (const auto& seg : corpus) {
    const Tokens g = tokens_of(seg.generation);
    std::vector<Tokens> refs;
    for (const auto& r : seg.references) refs.push_back(tokens_of(r));
    res.hyp_len += g.size();
    // closest reference length, ties go to the shorter one
    std::size_t best_len = 0;
    bool have = false;
    for (const auto& r : refs) {
      const auto d = [&](std::size_t l) { return l > g.size() ? l - g.size() : g.size() - l; };
      if (!have || d(r.size()) < d(best_len) || (d(r.size()) == d(best_len) && r.size() < best_len)) {
        best_len = r.size();
        have = true;
      }
    }
    res.ref_len += best_len;
    for (std::size_t n = 1; n <= N; ++n) {
      const NgramCounts gc = ngram_counts(g, n);
      NgramCounts max_ref;
      for (const auto& r : refs) {
        for (const auto& [k, c] : ngram_counts(r, n)) max_ref[k] = std::max(max_ref[k], c);
      }
      res.matches[n - 1] += clipped_overlap(gc, max_ref);
      res.totals[n - 1] += g.size() >= n ? g.size() - n + 1 : 0;
    }
  }
  if (res.hyp_len == 0) return res;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (res.totals[n] == 0) continue;
    ++res.effective_order;
    const double tot = static_cast<double>(res.totals[n]);
    res.precisions[n] = res.matches[n] ? static_cast<double>(res.matches[n]) / tot : opt.epsilon / tot;
    log_sum += std::log(res.precisions[n]);
  }
  const double c = static_cast<double>(res.hyp_len);
  const double r = static_cast<double>(res.ref_len);
  res.brevity_penalty = c < r ? std::exp(1.0 - r / c) : 1.0;
  res.score = 100.0 * res.brevity_penalty * std::exp(log_sum / static_cast<double>(res.effective_order));
  return res;
}

inline double sentence_bleu(std::string_view gen, std::span<const std::string> refs, const BleuOptions& opt = {}) {
  const BleuSegment seg{std::string(gen), std::vector<std::string>(refs.begin(), refs.end())};
  return bleu(std::span<const BleuSegment>(&seg, 1), opt).score;
}

// ---------------------------------------------------------------- METEOR-lite

struct MeteorParams {
  double alpha = 0.9;  // Fmean = P R / (alpha P + (1 - alpha) R)  ==  10PR/(R+9P)
  double beta = 3.0;
  double gamma = 0.5;  // penalty = gamma * (chunks / matches)^beta
  bool use_stems = true;
};

struct MeteorDetail {
  double score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
  std::size_t matches = 0;
  std::size_t chunks = 0;
  // alignment[i] = reference index aligned to hypothesis token i, or -1
  std::vector<long> alignment;
};

namespace detail {

// One alignment stage: left to right over the hypothesis, each unaligned token
// takes an unaligned reference token with the same key. If the reference slot
// right after the previous token's partner matches, it wins (keeps chunks
// contiguous); otherwise the leftmost candidate.
inline void align_stage(const Tokens& hk, const Tokens& rk, std::vector<long>& h2r, std::vector<bool>& r_used) {
  for (std::size_t i = 0; i < hk.size(); ++i) {
    if (h2r[i] >= 0) continue;
    long pick = -1;
    if (i > 0 && h2r[i - 1] >= 0) {
      const auto j = static_cast<std::size_t>(h2r[i - 1] + 1);
      if (j < rk.size() && !r_used[j] && rk[j] == hk[i]) pick = static_cast<long>(j);
    }
    if (pick < 0) {
      for (std::size_t j = 0; j < rk.size(); ++j) {
        if (!r_used[j] && rk[j] == hk[i]) {
          pick = static_cast<long>(j);
          break;
        }
      }
    }
    if (pick >= 0) {
      h2r[i] = pick;
      r_used[static_cast<std::size_t>(pick)] = true;
    }
  }
}

inline Tokens stems_of(const Tokens& t) {
  Tokens out;
  out.reserve(t.size());
  PorterStemmer st;
  for (const auto& w : t) out.push_back(st.stem(w));
  return out;
}

}  // namespace detail

inline MeteorDetail meteor_single(const Tokens& hyp, const Tokens& ref, const MeteorParams& p = {}) {
  MeteorDetail d;
  d.alignment.assign(hyp.size(), -1);
  if (hyp.empty() || ref.empty()) return d;
  std::vector<bool> used(ref.size(), false);
  detail::align_stage(hyp, ref, d.alignment, used);
  if (p.use_stems) detail::align_stage(detail::stems_of(hyp), detail::stems_of(ref), d.alignment, used);

  long prev = -2;
  for (long j : d.alignment) {
    if (j < 0) {
      prev = -2;
      continue;
    }
    ++d.matches;
    if (j != prev + 1) ++d.chunks;
    prev = j;
  }
  if (d.matches == 0) return d;
  const double m = static_cast<double>(d.matches);
  d.precision = m / static_cast<double>(hyp.size());
  d.recall = m / static_cast<double>(ref.size());
  d.fmean = d.precision * d.recall / (p.alpha * d.precision + (1.0 - p.alpha) * d.recall);
  d.penalty = p.gamma * std::pow(static_cast<double>(d.chunks) / m, p.beta);
  d.score = d.fmean * (1.0 - d.penalty);
  return d;
}

inline double meteor_lite(std::string_view gen, std::span<const std::string> refs, const MeteorParams& p = {}) {
  const Tokens g = tokens_of(gen);
  double best = 0.0;
  for (const auto& r : refs) best = std::max(best, meteor_single(g, tokens_of(r), p).score);
  return best;
}

// ---------------------------------------------------------------- PARENT

// Function words never count as table-entailed on their own.
inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> s = {
      "a",     "an",    "the",  "and",  "or",   "but",  "of",    "in",    "on",    "at",   "to",   "for",
      "from",  "by",    "with", "as",   "is",   "are",  "was",   "were",  "be",    "been", "being", "has",
      "have",  "had",   "it",   "its",  "this", "that", "these", "those", "which", "who",  "whom", "whose",
      "he",    "she",   "they", "his",  "her",  "their", "there", "also", "not",   "no",   "do",   "does",
      "did",   "so",    "than", "then", "into", "about", "over", "under", "after", "before", "while", "where",
      "when",  "what",  "i",    "we",   "you",  "him",  "them",  "our",   "your",  "can",  "will", "would",
      "should", "could", "may", "might", "must", ".",   ",",     ";",     ":",     "!",    "?",    "(",
      ")",     "\"",    "'s"};
  return s;
}

inline bool is_stopword(const std::string& t) { return stopwords().count(t) > 0; }

struct ParentOptions {
  double lambda = 0.5;  // weight of table recall in the geometric mix
  std::size_t max_order = 4;
};

struct ParentScore {
  double precision = 0.0;
  double recall = 0.0;
  double reference_recall = 0.0;
  double table_recall = 0.0;
  double f1 = 0.0;
  std::vector<double> precision_by_order;
};

inline std::set<std::string> table_token_set(std::span<const codec::Triple> table) {
  std::set<std::string> out;
  for (const auto& t : table) {
    for (const auto* f : {&t.subject, &t.predicate, &t.object}) {
      for (auto& w : tokens_of(*f)) out.insert(std::move(w));
    }
  }
  return out;
}

// Word-overlap entailment: at least one content token, and every content
// token is in the table.
inline bool table_entails(const Ngram& g, const std::set<std::string>& table_tokens) {
  bool any_content = false;
  for (const auto& w : g) {
    if (is_stopword(w)) continue;
    any_content = true;
    if (!table_tokens.count(w)) return false;
  }
  return any_content;
}

namespace detail {

inline double geo_mean_nonempty(const std::vector<double>& vals, const std::vector<bool>& present) {
  double log_sum = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (!present[i]) continue;
    if (vals[i] <= 0.0) return 0.0;
    log_sum += std::log(vals[i]);
    ++k;
  }
  return k ? std::exp(log_sum / static_cast<double>(k)) : 0.0;
}

}  // namespace detail

inline ParentScore parent(std::string_view gen, std::span<const std::string> refs, std::span<const codec::Triple> table,
                          const ParentOptions& opt = {}) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "PARENT needs a non-empty table");
  ParentScore s;
  const Tokens g = tokens_of(gen);
  std::vector<Tokens> rt;
  for (const auto& r : refs) rt.push_back(tokens_of(r));
  const auto tt = table_token_set(table);

  // entailed precision, references pooled
  s.precision_by_order.assign(opt.max_order, 0.0);
  std::vector<bool> present(opt.max_order, false);
  for (std::size_t n = 1; n <= opt.max_order; ++n) {
    if (g.size() < n) continue;
    std::set<Ngram> in_refs;
    for (const auto& r : rt) {
      for (auto& [k, c] : ngram_counts(r, n)) in_refs.insert(k);
    }
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i + n <= g.size(); ++i) {
      Ngram ng(g.begin() + static_cast<std::ptrdiff_t>(i), g.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++total;
      if (in_refs.count(ng) || table_entails(ng, tt)) ++correct;
    }
    present[n - 1] = true;
    s.precision_by_order[n - 1] = static_cast<double>(correct) / static_cast<double>(total);
  }
  s.precision = detail::geo_mean_nonempty(s.precision_by_order, present);

  // reference recall: n-gram recall, max over references
  for (const auto& r : rt) {
    std::vector<double> rec(opt.max_order, 0.0);
    std::vector<bool> pr(opt.max_order, false);
    for (std::size_t n = 1; n <= opt.max_order; ++n) {
      if (r.size() < n) continue;
      pr[n - 1] = true;
      rec[n - 1] = static_cast<double>(clipped_overlap(ngram_counts(r, n), ngram_counts(g, n))) /
                   static_cast<double>(r.size() - n + 1);
    }
    s.reference_recall = std::max(s.reference_recall, detail::geo_mean_nonempty(rec, pr));
  }

  // table recall: LCS coverage of each triple's tokens
  double acc = 0.0;
  for (const auto& t : table) {
    Tokens tk = tokens_of(t.subject);
    for (const auto* f : {&t.predicate, &t.object}) {
      for (auto& w : tokens_of(*f)) tk.push_back(std::move(w));
    }
    if (!tk.empty()) acc += static_cast<double>(lcs_length(tk, g)) / static_cast<double>(tk.size());
  }
  s.table_recall = acc / static_cast<double>(table.size());

  if (s.reference_recall > 0.0 && s.table_recall > 0.0) {
    s.recall = std::pow(s.reference_recall, 1.0 - opt.lambda) * std::pow(s.table_recall, opt.lambda);
  } else {
    s.recall = opt.lambda == 0.0 ? s.reference_recall : (opt.lambda == 1.0 ? s.table_recall : 0.0);
  }
  s.f1 = f1(s.precision, s.recall);
  return s;
}

// ---------------------------------------------------------------- BertScore hook

// Maps a token sequence to one embedding per token. Nothing is shipped; users
// plug in their own encoder.
using EmbeddingAdapter = std::function<std::vector<std::vector<double>>(const Tokens&)>;

inline double bertscore_f1(std::string_view gen, std::span<const std::string> refs, const EmbeddingAdapter& embed) {
  const auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
  };
  const auto ge = embed(tokens_of(gen));
  double best = 0.0;
  for (const auto& r : refs) {
    const auto re = embed(tokens_of(r));
    if (ge.empty() || re.empty()) continue;
    double p = 0, rc = 0;
    for (const auto& x : ge) {
      double m = -1;
      for (const auto& y : re) m = std::max(m, cosine(x, y));
      p += m;
    }
    for (const auto& y : re) {
      double m = -1;
      for (const auto& x : ge) m = std::max(m, cosine(x, y));
      rc += m;
    }
    best = std::max(best, f1(p / static_cast<double>(ge.size()), rc / static_cast<double>(re.size())));
  }
  return best;
}

}  // namespace cyclegen::metrics
