#pragma once

// Span-mask denoising: random spans of a text are replaced by sentinel
// tokens; the target lists each sentinel followed by the tokens it hides.
//
//   text   : a b c d e f g
//   input  : a <extra_id_0> d e <extra_id_1> g
//   target : <extra_id_0> b c <extra_id_1> f

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cyclegen/error.hpp"
#include "cyclegen/rng.hpp"
#include "cyclegen/seq2seq/model.hpp"
#include "cyclegen/seq2seq/vocab.hpp"
#include "cyclegen/text.hpp"

namespace cyclegen::seq2seq {

struct SpanMaskConfig {
  double mask_rate = 0.15;
  double mean_span = 3.0;
};

struct Corruption {
  std::vector<std::string> input;
  std::vector<std::string> target;
  std::size_t masked_tokens = 0;
};

namespace detail {

// Splits `total` into `parts` positive integers (total >= parts >= 1).
inline std::vector<std::size_t> positive_partition(std::size_t total, std::size_t parts, Rng& rng) {
  std::vector<std::size_t> cuts;
  std::vector<std::size_t> pool(total - 1);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i + 1;
  for (std::size_t k = 0; k + 1 < parts; ++k) {
    const std::size_t j = k + rng.below(pool.size() - k);
    std::swap(pool[k], pool[j]);
    cuts.push_back(pool[k]);
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> out;
  std::size_t prev = 0;
  for (std::size_t c : cuts) {
    out.push_back(c - prev);
    prev = c;
  }
  out.push_back(total - prev);
  return out;
}

}  // namespace detail

inline Corruption corrupt_spans(const std::vector<std::string>& tokens, const SpanMaskConfig& cfg, Rng& rng) {
  Corruption out;
  const std::size_t n = tokens.size();
  if (n == 0 || cfg.mask_rate <= 0.0) {
    out.input = tokens;
    return out;
  }
  std::size_t noise = static_cast<std::size_t>(std::lround(static_cast<double>(n) * cfg.mask_rate));
  noise = std::clamp<std::size_t>(noise, 1, n);
  std::size_t spans = static_cast<std::size_t>(std::lround(static_cast<double>(noise) / std::max(1.0, cfg.mean_span)));
  spans = std::clamp<std::size_t>(spans, 1, std::min<std::size_t>(noise, kNumSentinels));
  const auto span_len = detail::positive_partition(noise, spans, rng);

  // Gaps of unmasked tokens before each span and after the last (may be empty).
  const std::size_t kept = n - noise;
  std::vector<std::size_t> marks(spans);
  for (auto& m : marks) m = rng.below(kept + 1);
  std::sort(marks.begin(), marks.end());
  std::vector<std::size_t> gaps;
  std::size_t prev = 0;
  for (std::size_t m : marks) {
    gaps.push_back(m - prev);
    prev = m;
  }
  gaps.push_back(kept - prev);

  std::size_t pos = 0;
  for (std::size_t s = 0; s < spans; ++s) {
    for (std::size_t i = 0; i < gaps[s]; ++i) out.input.push_back(tokens[pos++]);
    const std::string sentinel = sentinel_token(static_cast<int>(s));
    out.input.push_back(sentinel);
    out.target.push_back(sentinel);
    for (std::size_t i = 0; i < span_len[s]; ++i) out.target.push_back(tokens[pos++]);
  }
  for (std::size_t i = 0; i < gaps[spans]; ++i) out.input.push_back(tokens[pos++]);
  out.masked_tokens = noise;
  return out;
}

/// Inverse of corrupt_spans given the target: splices each span back in.
inline std::vector<std::string> restore_spans(const std::vector<std::string>& input,
                                              const std::vector<std::string>& target) {
  std::vector<std::string> out;
  for (const auto& tok : input) {
    if (tok.rfind("<extra_id_", 0) != 0) {
      out.push_back(tok);
      continue;
    }
    auto it = std::find(target.begin(), target.end(), tok);
    if (it == target.end()) continue;
    for (++it; it != target.end() && it->rfind("<extra_id_", 0) != 0; ++it) out.push_back(*it);
  }
  return out;
}

inline constexpr std::uint64_t kSpanMaskStream = 11;

/// Builds (corrupted text -> sentinel target) pairs; deterministic in `seed`.
inline std::vector<TextPair> span_mask_pairs(const std::vector<std::string>& texts, const SpanMaskConfig& cfg,
                                             std::uint64_t seed) {
  Rng rng(seed, kSpanMaskStream);
  std::vector<TextPair> pairs;
  for (const auto& t : texts) {
    const Corruption c = corrupt_spans(text::tokenize(t), cfg, rng);
    if (c.masked_tokens == 0) continue;
    pairs.push_back({text::join(c.input), text::join(c.target)});
  }
  return pairs;
}

/// Denoising pre-training on in-domain text through the regular teacher
/// forcing path. A zero mask rate leaves nothing to learn: the model is left
/// untouched and the report carries a warning.
inline TrainReport span_mask_pretrain(Seq2SeqModel& model, const std::vector<std::string>& texts,
                                      const SpanMaskConfig& mask, const TrainConfig& cfg, std::uint64_t seed) {
  if (model.frozen()) throw Error(ErrorCode::kFrozenModel, "cannot pre-train a frozen model");
  const auto pairs = span_mask_pairs(texts, mask, seed);
  if (pairs.empty()) {
    TrainReport r;
    r.warnings.push_back("span-mask corruption produced no masked tokens; nothing to learn");
    return r;
  }
  return model.train_teacher_forcing(pairs, cfg);
}

}  // namespace cyclegen::seq2seq
