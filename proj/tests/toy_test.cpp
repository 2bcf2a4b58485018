#include <filesystem>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "cyclegen/corpus.hpp"
#include "cyclegen/toy_experiment.hpp"
#include "cyclegen/toy_grammar.hpp"

namespace fs = std::filesystem;
namespace toy = cyclegen::toy;
using cyclegen::corpus::Split;

namespace {

TEST(ToyGrammar, SplitsAndShape) {
  const auto ds = toy::generate({}, 7);
  EXPECT_EQ(ds.split(Split::kTrain).size(), 400u);
  EXPECT_EQ(ds.split(Split::kDev).size(), 50u);
  EXPECT_EQ(ds.split(Split::kTest).size(), 50u);
  std::set<std::string> preds;
  for (const auto& p : toy::predicates()) preds.insert(p.name);
  EXPECT_EQ(preds.size(), 10u);
  for (const auto& [_, samples] : ds.splits) {
    for (const auto& s : samples) {
      ASSERT_GE(s.triples.size(), 1u);
      ASSERT_LE(s.triples.size(), 3u);
      ASSERT_EQ(s.references.size(), 3u);
      for (const auto& t : s.triples) {
        EXPECT_TRUE(preds.count(t.predicate)) << t.predicate;
        EXPECT_NE(t.subject, t.object);
        for (const auto& r : s.references) {
          EXPECT_NE(r.find(t.subject), std::string::npos) << r;
          EXPECT_NE(r.find(t.object), std::string::npos) << r;
        }
      }
    }
  }
}

TEST(ToyGrammar, FactSetsAreConnected) {
  const auto ds = toy::generate({}, 3);
  for (const auto& s : ds.split(Split::kTrain)) {
    std::set<std::string> seen = {s.triples[0].subject, s.triples[0].object};
    for (std::size_t i = 1; i < s.triples.size(); ++i) {
      EXPECT_TRUE(seen.count(s.triples[i].subject) || seen.count(s.triples[i].object)) << s.id;
      seen.insert(s.triples[i].subject);
      seen.insert(s.triples[i].object);
    }
  }
}

TEST(ToyGrammar, SeededAndDeterministic) {
  const auto a = toy::generate({}, 11), b = toy::generate({}, 11), c = toy::generate({}, 12);
  ASSERT_EQ(a.split(Split::kTrain).size(), b.split(Split::kTrain).size());
  bool differs = false;
  for (std::size_t i = 0; i < a.split(Split::kTrain).size(); ++i) {
    EXPECT_EQ(a.split(Split::kTrain)[i].triples, b.split(Split::kTrain)[i].triples);
    EXPECT_EQ(a.split(Split::kTrain)[i].references, b.split(Split::kTrain)[i].references);
    differs |= a.split(Split::kTrain)[i].references != c.split(Split::kTrain)[i].references;
  }
  EXPECT_TRUE(differs);
}

TEST(ToyGrammar, SportsDomainSharesNoPredicateOrTemplate) {
  std::set<std::string> main_words;
  for (const auto& p : toy::predicates(toy::Domain::kMain)) {
    for (const char* t : p.templates) main_words.insert(t);
  }
  for (const auto& p : toy::predicates(toy::Domain::kSports)) {
    for (const auto& q : toy::predicates(toy::Domain::kMain)) EXPECT_STRNE(p.name, q.name);
    for (const char* t : p.templates) EXPECT_FALSE(main_words.count(t)) << t;
  }
  toy::GrammarConfig g;
  g.domain = toy::Domain::kSports;
  g.samples = 50;
  const auto ds = toy::generate(g, 1);
  for (const auto& s : ds.split(Split::kTrain)) {
    EXPECT_EQ(s.category, "sports");
    for (const auto& t : s.triples) EXPECT_NO_THROW(toy::spec_of(t.predicate));
  }
}

TEST(ToyExperiment, RunSettings) {
  const auto c = toy::toy_cycle_config();
  EXPECT_EQ(c.seeds.size(), 3u);
  EXPECT_EQ(c.max_epochs, 30);
  EXPECT_EQ(c.patience, 5);
  EXPECT_DOUBLE_EQ(c.early_stop_delta, 0.0005);
  EXPECT_EQ(c.decode.beams, 1);
  EXPECT_NO_THROW(c.validate());
}

TEST(ToyExperiment, BackboneIsCachedAndReused) {
  toy::ToyExperimentConfig t;
  t.grammar.samples = 60;
  t.backbone_grammar.samples = 40;
  t.backbone_epochs = 1;
  t.model.d_model = 16;
  t.model.n_heads = 2;
  t.model.d_ff = 32;
  t.model.encoder_layers = t.model.decoder_layers = 1;
  const fs::path cache = fs::path(::testing::TempDir()) / "toy_cache";
  fs::remove_all(cache);
  int trained = 0;
  const auto a = toy::prepare_toy(t, cache, [&](const std::string&) { ++trained; });
  EXPECT_EQ(trained, 1);
  const auto b = toy::prepare_toy(t, cache, [&](const std::string&) { ++trained; });
  EXPECT_EQ(trained, 1) << "second call must load from the cache";
  EXPECT_EQ(a.backbone->checksum(), b.backbone->checksum());
  EXPECT_EQ(a.inputs.train.size(), 48u);
  // one vocabulary for both domains
  EXPECT_TRUE(a.vocab.contains("born"));
  EXPECT_TRUE(a.vocab.contains("coached"));
}

}  // namespace
