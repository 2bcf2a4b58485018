#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "cyclegen/error.hpp"
#include "cyclegen/text.hpp"
#include "cyclegen/triple_codec.hpp"

namespace cyclegen::seq2seq {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr int kNumSentinels = 32;
inline constexpr TokenId kFirstSentinelId = 4;

inline std::string sentinel_token(int i) { return "<extra_id_" + std::to_string(i) + ">"; }

/// Token <-> id map. Ids are dense from 0; the reserved block is
/// PAD, BOS, EOS, UNK, the sentinels, then the three triple tags.
class Vocab {
 public:
  Vocab() {
    for (const char* s : {"<pad>", "<s>", "</s>", "<unk>"}) add(s);
    for (int i = 0; i < kNumSentinels; ++i) add(sentinel_token(i));
    for (auto tag : {codec::kSubjectTag, codec::kPredicateTag, codec::kObjectTag}) add(std::string(tag));
  }

  /// Builds a vocabulary over the tokens of `texts`; regular tokens are
  /// added in sorted order so the result does not depend on input order.
  static Vocab build(const std::vector<std::string>& texts, std::size_t min_count = 1) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& t : texts) {
      for (auto& tok : text::tokenize(t)) ++counts[tok];
    }
    for (auto p : codec::kPrefixes) {
      for (auto& tok : text::tokenize(p.text)) counts[tok] += min_count;
    }
    std::set<std::string> keep;
    for (const auto& [tok, c] : counts) {
      if (c >= min_count) keep.insert(tok);
    }
    Vocab v;
    for (const auto& tok : keep) v.add(tok);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t reserved_count() const { return kReserved; }

  TokenId id(std::string_view tok) const {
    auto it = ids_.find(std::string(tok));
    return it == ids_.end() ? kUnkId : it->second;
  }
  bool contains(std::string_view tok) const { return ids_.count(std::string(tok)) > 0; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  TokenId sentinel(int i) const { return kFirstSentinelId + i; }
  bool is_sentinel(TokenId id) const { return id >= kFirstSentinelId && id < kFirstSentinelId + kNumSentinels; }

  TokenIds encode(std::string_view s) const {
    TokenIds out;
    for (const auto& tok : text::tokenize(s)) out.push_back(id(tok));
    return out;
  }

  /// Drops PAD/BOS/EOS; everything else is rendered space-separated.
  std::string decode(const TokenIds& ids) const {
    std::string out;
    for (TokenId i : ids) {
      if (i == kPadId || i == kBosId || i == kEosId) continue;
      if (!out.empty()) out += ' ';
      out += token(i);
    }
    return out;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json to_json() const { return tokens_; }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    if (!j.is_array() || j.size() < v.size()) throw Error(ErrorCode::kCheckpoint, "bad vocab");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (j[i].get<std::string>() != v.tokens_[i]) throw Error(ErrorCode::kCheckpoint, "reserved vocab mismatch");
    }
    for (std::size_t i = v.size(); i < j.size(); ++i) v.add(j[i].get<std::string>());
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  static constexpr std::size_t kReserved = 4 + kNumSentinels + 3;

  void add(const std::string& tok) {
    if (ids_.count(tok)) return;
    ids_.emplace(tok, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(tok);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace cyclegen::seq2seq
