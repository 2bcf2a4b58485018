#pragma once

// Conversion between triple sets and the tagged linear strings the models
// read and write:
//
//   "[S] Mexico [P] currency [O] Mexican peso [S] Bionico [P] course [O] Dessert"
//
// Tag tokens are reserved; a field containing one is rejected instead of
// being escaped, so every valid triple list round-trips exactly.

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "cyclegen/error.hpp"
#include "cyclegen/text.hpp"

namespace cyclegen::codec {

inline constexpr std::string_view kSubjectTag = "[S]";
inline constexpr std::string_view kPredicateTag = "[P]";
inline constexpr std::string_view kObjectTag = "[O]";

enum class TaskPrefix { kNone, kDataToText, kTextToData };

struct PrefixEntry {
  TaskPrefix prefix;
  std::string_view text;
};

// One table for both models and the tests.
inline constexpr std::array<PrefixEntry, 3> kPrefixes{{
    {TaskPrefix::kNone, ""},
    {TaskPrefix::kDataToText, "Generate in English: "},
    {TaskPrefix::kTextToData, "Extract Triples: "},
}};

constexpr std::string_view prefix_text(TaskPrefix p) {
  for (const auto& e : kPrefixes) {
    if (e.prefix == p) return e.text;
  }
  return "";
}

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;

  friend bool operator==(const Triple&, const Triple&) = default;
};

struct LinearizedSequence {
  std::string text;
  TaskPrefix task_prefix = TaskPrefix::kNone;
};

enum class ParseMode { kStrict, kTolerant };

struct DroppedFragment {
  std::size_t offset = 0;  // byte offset into the parsed string
  std::string text;
  std::string reason;
};

struct DiagnosticReport {
  std::vector<DroppedFragment> dropped;

  std::size_t dropped_count() const { return dropped.size(); }
  bool clean() const { return dropped.empty(); }
};

struct ParseResult {
  std::vector<Triple> triples;
  DiagnosticReport report;
};

inline bool contains_tag(std::string_view field) {
  return field.find(kSubjectTag) != std::string_view::npos ||
         field.find(kPredicateTag) != std::string_view::npos ||
         field.find(kObjectTag) != std::string_view::npos;
}

/// Throws unless the triple satisfies the field invariants.
inline void validate(const Triple& t) {
  for (const std::string* f : {&t.subject, &t.predicate, &t.object}) {
    if (text::trim(*f).empty()) throw Error(ErrorCode::kSchema, "triple field is empty");
    if (contains_tag(*f)) throw Error(ErrorCode::kTagCollision, "field contains a tag token: " + *f);
  }
}

inline LinearizedSequence linearize(const std::vector<Triple>& triples, TaskPrefix prefix) {
  if (triples.empty()) throw Error(ErrorCode::kEmptyTripleSet, "cannot linearize an empty triple set");
  std::string out(prefix_text(prefix));
  bool first = true;
  for (const Triple& t : triples) {
    validate(t);
    if (!first) out += ' ';
    first = false;
    out += kSubjectTag;
    out += ' ';
    out += t.subject;
    out += ' ';
    out += kPredicateTag;
    out += ' ';
    out += t.predicate;
    out += ' ';
    out += kObjectTag;
    out += ' ';
    out += t.object;
  }
  return {std::move(out), prefix};
}

namespace detail {

enum class Tag { kS, kP, kO };

struct Segment {
  Tag tag;
  std::size_t tag_offset;
  std::string field;  // trimmed text up to the next tag
};

struct Scan {
  std::string leading;  // text before the first tag, trimmed
  std::vector<Segment> segments;
};

inline Scan scan(std::string_view s) {
  Scan out;
  std::size_t pos = 0;
  auto next_tag = [&](std::size_t from, Tag& tag) -> std::size_t {
    std::size_t best = std::string_view::npos;
    const std::pair<std::string_view, Tag> tags[] = {
        {kSubjectTag, Tag::kS}, {kPredicateTag, Tag::kP}, {kObjectTag, Tag::kO}};
    for (const auto& [tok, t] : tags) {
      const std::size_t at = s.find(tok, from);
      if (at < best) {
        best = at;
        tag = t;
      }
    }
    return best;
  };
  Tag tag{};
  std::size_t at = next_tag(0, tag);
  out.leading = text::trim(s.substr(0, std::min(at, s.size())));
  while (at != std::string_view::npos) {
    pos = at + 3;
    Tag following{};
    const std::size_t nxt = next_tag(pos, following);
    const std::size_t end = nxt == std::string_view::npos ? s.size() : nxt;
    out.segments.push_back({tag, at, text::trim(s.substr(pos, end - pos))});
    at = nxt;
    tag = following;
  }
  return out;
}

inline std::string_view tag_name(Tag t) {
  switch (t) {
    case Tag::kS: return kSubjectTag;
    case Tag::kP: return kPredicateTag;
    case Tag::kO: return kObjectTag;
  }
  return "";
}

}  // namespace detail

/// Parses a linearized string back into triples.
///
/// kStrict accepts exactly the strings `linearize` can produce (modulo
/// whitespace) and throws MalformedLinearization with a byte offset otherwise.
/// kTolerant never throws; it keeps every complete [S]..[P]..[O] block and
/// reports the fragments it had to drop.
inline ParseResult delinearize(std::string_view seq, ParseMode mode) {
  using detail::Tag;
  const detail::Scan scan = detail::scan(seq);
  ParseResult result;

  auto fail = [&](std::size_t offset, const std::string& reason) {
    throw Error(ErrorCode::kMalformedLinearization,
                reason + " at byte " + std::to_string(offset));
  };

  if (!scan.leading.empty()) {
    const std::size_t off = seq.find(scan.leading);
    if (mode == ParseMode::kStrict) fail(off, "text before first [S]");
    result.report.dropped.push_back({off, scan.leading, "text before first tag"});
  }
  if (scan.segments.empty()) {
    if (mode == ParseMode::kStrict) fail(0, "no triples");
    return result;
  }

  const auto& segs = scan.segments;
  std::size_t i = 0;
  while (i < segs.size()) {
    const bool complete = i + 2 < segs.size() && segs[i].tag == Tag::kS && segs[i + 1].tag == Tag::kP &&
                          segs[i + 2].tag == Tag::kO && !segs[i].field.empty() &&
                          !segs[i + 1].field.empty() && !segs[i + 2].field.empty();
    if (complete) {
      result.triples.push_back({segs[i].field, segs[i + 1].field, segs[i + 2].field});
      i += 3;
      continue;
    }
    if (mode == ParseMode::kStrict) {
      std::size_t bad = i;
      const Tag expected[] = {Tag::kS, Tag::kP, Tag::kO};
      for (std::size_t k = 0; k < 3; ++k) {
        if (i + k >= segs.size()) fail(seq.size(), "incomplete triple");
        if (segs[i + k].tag != expected[k]) {
          bad = i + k;
          fail(segs[bad].tag_offset, "expected " + std::string(detail::tag_name(expected[k])));
        }
        if (segs[i + k].field.empty()) fail(segs[i + k].tag_offset, "empty field");
      }
    }
    // Drop up to (not including) the next [S] and resynchronise there.
    std::size_t j = i + 1;
    while (j < segs.size() && segs[j].tag != Tag::kS) ++j;
    const std::size_t begin = segs[i].tag_offset;
    const std::size_t end = j < segs.size() ? segs[j].tag_offset : seq.size();
    result.report.dropped.push_back(
        {begin, text::trim(seq.substr(begin, end - begin)), "incomplete or malformed block"});
    i = j;
  }
  return result;
}

namespace detail {

inline std::string strip_accents(std::string_view raw) {
  bool ascii = true;
  for (unsigned char c : raw) {
    if (c >= 0x80) {
      ascii = false;
      break;
    }
  }
  if (ascii) return std::string(raw);
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfd = icu::Normalizer2::getNFDInstance(status);
  if (U_FAILURE(status)) return std::string(raw);
  const icu::UnicodeString decomposed =
      nfd->normalize(icu::UnicodeString::fromUTF8(icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size()))),
                     status);
  if (U_FAILURE(status)) return std::string(raw);
  icu::UnicodeString kept;
  for (int32_t i = 0; i < decomposed.length();) {
    const UChar32 c = decomposed.char32At(i);
    if (u_charType(c) != U_NON_SPACING_MARK) kept.append(c);
    i += U16_LENGTH(c);
  }
  std::string out;
  kept.toUTF8String(out);
  return out;
}

inline bool ascii_lower(char c) { return c >= 'a' && c <= 'z'; }
inline bool ascii_upper(char c) { return c >= 'A' && c <= 'Z'; }

}  // namespace detail

/// Surface normalization applied to every triple field at ingestion:
/// accents removed (NFD, then combining marks dropped), camelCase and
/// snake_case split into space-separated words, whitespace collapsed.
/// Numerals and inner punctuation pass through unchanged. Idempotent.
inline std::string normalize_surface(std::string_view raw) {
  const std::string s = detail::strip_accents(raw);
  std::string out;
  out.reserve(s.size() + 8);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '_') {
      out += ' ';
      continue;
    }
    if (detail::ascii_upper(c) && i > 0 && detail::ascii_lower(s[i - 1])) {
      out += ' ';
      const bool word_case = i + 1 < s.size() && detail::ascii_lower(s[i + 1]);
      out += word_case ? static_cast<char>(c - 'A' + 'a') : c;
      continue;
    }
    out += c;
  }
  return text::collapse_spaces(out);
}

inline Triple normalize(const Triple& t) {
  return {normalize_surface(t.subject), normalize_surface(t.predicate), normalize_surface(t.object)};
}

}  // namespace cyclegen::codec
