#pragma once

// Synthetic data-to-text world for desk-scale experiments.
//
// A small knowledge base over typed entities (people, cities, countries,
// companies, industries) and ten predicates. Each sample is a connected set
// of 1-3 facts; its references verbalize every fact with one of a few
// templates per predicate, so references differ only in phrasing.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cyclegen/corpus.hpp"
#include "cyclegen/rng.hpp"
#include "cyclegen/text.hpp"

namespace cyclegen::toy {

enum class EntityType { kPerson, kCity, kCountry, kCompany, kIndustry };

struct PredicateSpec {
  const char* name;
  EntityType subject;
  EntityType object;
  std::array<const char*, 3> templates;  // "{s}" / "{o}" placeholders
};

// kMain is the experiment domain. kSports shares no predicate or template
// with it (only function words and name words) and serves as generic
// pre-training material.
enum class Domain { kMain, kSports };

inline const std::vector<PredicateSpec>& predicates(Domain domain = Domain::kMain) {
  using E = EntityType;
  static const std::vector<PredicateSpec> main = {
      {"birth place", E::kPerson, E::kCity,
       {"{s} was born in {o} .", "{s} is a native of {o} .", "{o} is the birthplace of {s} ."}},
      {"nationality", E::kPerson, E::kCountry,
       {"{s} is a citizen of {o} .", "{s} holds the nationality of {o} .", "{s} has citizenship in {o} ."}},
      {"employer", E::kPerson, E::kCompany,
       {"{s} works for {o} .", "{s} is employed by {o} .", "{o} employs {s} ."}},
      {"spouse", E::kPerson, E::kPerson,
       {"{s} is married to {o} .", "{s} and {o} are spouses .", "{o} is the spouse of {s} ."}},
      {"country", E::kCity, E::kCountry,
       {"{s} is located in {o} .", "{s} is a city in {o} .", "{s} lies in {o} ."}},
      {"capital", E::kCountry, E::kCity,
       {"the capital of {s} is {o} .", "{o} is the capital of {s} .", "{s} has {o} as its capital ."}},
      {"founder", E::kCompany, E::kPerson,
       {"{s} was founded by {o} .", "{o} founded {s} .", "{o} is the founder of {s} ."}},
      {"headquarters", E::kCompany, E::kCity,
       {"{s} is headquartered in {o} .", "{s} has its headquarters in {o} .", "the headquarters of {s} are in {o} ."}},
      {"leader", E::kCountry, E::kPerson,
       {"{s} is led by {o} .", "the leader of {s} is {o} .", "{o} leads {s} ."}},
      {"industry", E::kCompany, E::kIndustry,
       {"{s} operates in the {o} industry .", "{s} is a {o} company .", "{s} works in the {o} sector ."}},
  };
  // Slots reused: person = athlete, city = town, country = league,
  // company = club, industry = sport.
  static const std::vector<PredicateSpec> sports = {
      {"team", E::kPerson, E::kCompany,
       {"{s} plays for {o} .", "{s} joined {o} .", "{o} fields {s} ."}},
      {"hometown", E::kPerson, E::kCity,
       {"{s} grew up in {o} .", "{s} comes from {o} .", "{o} raised {s} ."}},
      {"teammate", E::kPerson, E::kPerson,
       {"{s} plays alongside {o} .", "{s} and {o} play together .", "{o} partners {s} ."}},
      {"coach", E::kCompany, E::kPerson,
       {"{s} is coached by {o} .", "{o} coaches {s} .", "{o} trains {s} ."}},
      {"captain", E::kCompany, E::kPerson,
       {"{s} is captained by {o} .", "{o} captains {s} .", "{o} wears the armband at {s} ."}},
      {"league", E::kCompany, E::kCountry,
       {"{s} competes in {o} .", "{s} belongs to {o} .", "{o} includes {s} ."}},
      {"ground", E::kCompany, E::kCity,
       {"{s} plays home games at {o} .", "{s} hosts matches at {o} .", "{o} stages games for {s} ."}},
      {"rival", E::kCompany, E::kCompany,
       {"{s} rivals {o} .", "{s} and {o} clash often .", "{o} faces {s} ."}},
      {"sport", E::kCountry, E::kIndustry,
       {"{s} organizes {o} matches .", "{s} runs {o} fixtures .", "{s} plays {o} ."}},
      {"venue", E::kCity, E::kCountry,
       {"{s} welcomes {o} .", "{o} visits {s} yearly .", "{o} meets at {s} ."}},
  };
  return domain == Domain::kMain ? main : sports;
}

struct GrammarConfig {
  std::size_t samples = 500;
  std::size_t people = 24;
  std::size_t cities = 14;
  std::size_t countries = 8;
  std::size_t companies = 10;
  std::size_t industries = 5;
  std::size_t min_triples = 1;
  std::size_t max_triples = 3;
  std::size_t references = 3;
  // Fractions of the samples; the rest is train.
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
  Domain domain = Domain::kMain;
};

struct Entity {
  std::string name;
  EntityType type;
};

struct World {
  std::vector<Entity> entities;
  std::vector<codec::Triple> facts;
};

namespace detail {

// Name words shared by both domains, the way a pre-trained vocabulary
// already knows the pieces new names are made of.
inline const std::vector<std::string>& name_words() {
  static const std::vector<std::string> words = [] {
    static const char* onset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static const char* vowel[] = {"a", "e", "i", "o", "u"};
    Rng rng(2024, 23);
    std::set<std::string> seen;
    std::vector<std::string> out;
    while (out.size() < 64) {
      std::string w;
      for (int i = 0; i < 2; ++i) w += std::string(onset[rng.below(14)]) + vowel[rng.below(5)];
      w[0] = static_cast<char>(w[0] - 'a' + 'A');
      if (seen.insert(w).second) out.push_back(w);
    }
    return out;
  }();
  return words;
}

// Two name words, e.g. "Tatu Gilo"; unique within a world.
inline std::string make_name(Rng& rng, std::set<std::string>& used) {
  const auto& w = name_words();
  while (true) {
    std::string name = w[rng.below(w.size())] + " " + w[rng.below(w.size())];
    if (used.insert(name).second) return name;
  }
}

inline std::string realize(const char* tmpl, const codec::Triple& t) {
  std::string out = tmpl;
  for (const auto& [key, val] : {std::pair<std::string, std::string>{"{s}", t.subject}, {"{o}", t.object}}) {
    for (auto p = out.find(key); p != std::string::npos; p = out.find(key)) out.replace(p, key.size(), val);
  }
  return out;
}

}  // namespace detail

/// Builds the knowledge base: every entity gets the facts its type allows.
inline World build_world(const GrammarConfig& cfg, std::uint64_t seed) {
  Rng rng(seed, 21);
  World w;
  std::set<std::string> used;
  std::map<EntityType, std::vector<std::size_t>> by_type;
  const std::pair<EntityType, std::size_t> counts[] = {{EntityType::kPerson, cfg.people},
                                                       {EntityType::kCity, cfg.cities},
                                                       {EntityType::kCountry, cfg.countries},
                                                       {EntityType::kCompany, cfg.companies}};
  for (const auto& [type, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      by_type[type].push_back(w.entities.size());
      w.entities.push_back({detail::make_name(rng, used), type});
    }
  }
  static const std::vector<std::string> industry_names = {"software", "mining", "banking", "shipping", "textile",
                                                          "energy",   "retail", "farming", "media",    "tourism"};
  static const std::vector<std::string> sport_names = {"football", "tennis", "rugby",  "hockey",  "cricket",
                                                       "handball", "rowing", "boxing", "cycling", "archery"};
  const auto& fifth = cfg.domain == Domain::kMain ? industry_names : sport_names;
  for (std::size_t i = 0; i < std::min(cfg.industries, fifth.size()); ++i) {
    by_type[EntityType::kIndustry].push_back(w.entities.size());
    w.entities.push_back({fifth[i], EntityType::kIndustry});
  }
  auto pick = [&](EntityType t) -> const std::string& {
    const auto& pool = by_type[t];
    return w.entities[pool[rng.below(pool.size())]].name;
  };
  for (const auto& p : predicates(cfg.domain)) {
    for (std::size_t idx : by_type[p.subject]) {
      const std::string& s = w.entities[idx].name;
      std::string o = pick(p.object);
      if (p.subject == p.object) {
        while (o == s) o = pick(p.object);
      }
      w.facts.push_back({s, p.name, o});
    }
  }
  return w;
}

inline const PredicateSpec& spec_of(const std::string& predicate) {
  for (auto d : {Domain::kMain, Domain::kSports}) {
    for (const auto& p : predicates(d)) {
      if (predicate == p.name) return p;
    }
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown toy predicate " + predicate);
}

/// One verbalization per reference, templates drawn independently per fact.
inline std::vector<std::string> verbalize(const std::vector<codec::Triple>& triples, std::size_t n_refs, Rng& rng) {
  std::vector<std::string> refs;
  for (std::size_t r = 0; r < n_refs; ++r) {
    std::vector<std::string> sentences;
    for (const auto& t : triples) {
      const auto& spec = spec_of(t.predicate);
      const std::size_t k = rng.below(spec.templates.size());
      sentences.push_back(detail::realize(spec.templates[k], t));
    }
    refs.push_back(text::join(sentences));
  }
  return refs;
}

/// Samples connected fact sets: a seed fact, then facts sharing an entity
/// with the set so far. Duplicated fact sets are allowed, as in real corpora.
inline corpus::Dataset generate(const GrammarConfig& cfg, std::uint64_t seed) {
  const World w = build_world(cfg, seed);
  Rng rng(seed, 22);
  std::vector<corpus::Sample> all;
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const std::size_t want = cfg.min_triples + rng.below(cfg.max_triples - cfg.min_triples + 1);
    std::vector<codec::Triple> ts = {w.facts[rng.below(w.facts.size())]};
    for (std::size_t tries = 0; ts.size() < want && tries < 50; ++tries) {
      std::vector<std::size_t> cand;
      for (std::size_t f = 0; f < w.facts.size(); ++f) {
        const auto& x = w.facts[f];
        if (std::find(ts.begin(), ts.end(), x) != ts.end()) continue;
        for (const auto& y : ts) {
          if (x.subject == y.subject || x.subject == y.object || x.object == y.subject) {
            cand.push_back(f);
            break;
          }
        }
      }
      if (cand.empty()) break;
      ts.push_back(w.facts[cand[rng.below(cand.size())]]);
    }
    corpus::Sample s;
    s.id = (cfg.domain == Domain::kMain ? "toy" : "sports") + std::to_string(i);
    s.triples = ts;
    s.references = verbalize(ts, cfg.references, rng);
    s.category = cfg.domain == Domain::kMain ? "toy" : "sports";
    all.push_back(std::move(s));
  }
  corpus::Dataset ds;
  ds.name = cfg.domain == Domain::kMain ? "toy" : "toy-sports";
  const auto n_dev = static_cast<std::size_t>(static_cast<double>(cfg.samples) * cfg.dev_fraction);
  const auto n_test = static_cast<std::size_t>(static_cast<double>(cfg.samples) * cfg.test_fraction);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto split = i < n_dev ? corpus::Split::kDev
                                 : (i < n_dev + n_test ? corpus::Split::kTest : corpus::Split::kTrain);
    ds.split(split).push_back(std::move(all[i]));
  }
  return ds;
}

}  // namespace cyclegen::toy
