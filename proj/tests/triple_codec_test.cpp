#include <gtest/gtest.h>

#include <regex>
#include <string>
#include <vector>

#include "cyclegen/rng.hpp"
#include "cyclegen/triple_codec.hpp"
#include "support/appendix_fixtures.hpp"

using namespace cyclegen;
using namespace cyclegen::codec;
using cyclegen::testing::appendix_fixtures;

namespace {

std::size_t count_of(const std::string& s, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIo;
}


}  // namespace

TEST(Linearize, SingleTripleNoPrefix) {
  EXPECT_EQ(linearize({{"Mexico", "currency", "Mexican peso"}}, TaskPrefix::kNone).text,
            "[S] Mexico [P] currency [O] Mexican peso");
}

TEST(Linearize, ConcatenatesInOrder) {
  EXPECT_EQ(linearize({{"A", "b", "C"}, {"D", "e", "F"}}, TaskPrefix::kNone).text,
            "[S] A [P] b [O] C [S] D [P] e [O] F");
}

TEST(Linearize, TaskPrefixes) {
  EXPECT_EQ(prefix_text(TaskPrefix::kDataToText), "Generate in English: ");
  EXPECT_EQ(prefix_text(TaskPrefix::kTextToData), "Extract Triples: ");
  EXPECT_EQ(prefix_text(TaskPrefix::kNone), "");
  const auto seq = linearize({{"A", "b", "C"}}, TaskPrefix::kDataToText);
  EXPECT_EQ(seq.text, "Generate in English: [S] A [P] b [O] C");
  EXPECT_EQ(seq.task_prefix, TaskPrefix::kDataToText);
}

TEST(Linearize, Errors) {
  EXPECT_EQ(code_of([] { linearize({}, TaskPrefix::kNone); }), ErrorCode::kEmptyTripleSet);
  EXPECT_EQ(code_of([] { linearize({{"A [P] x", "b", "C"}}, TaskPrefix::kNone); }), ErrorCode::kTagCollision);
  EXPECT_EQ(code_of([] { linearize({{"A", "b", "[O]"}}, TaskPrefix::kNone); }), ErrorCode::kTagCollision);
  EXPECT_EQ(code_of([] { linearize({{"A", " ", "C"}}, TaskPrefix::kNone); }), ErrorCode::kSchema);
}

TEST(Delinearize, AppendixString) {
  const auto r = delinearize("[S] Mexico [P] currency [O] Mexican peso", ParseMode::kStrict);
  ASSERT_EQ(r.triples.size(), 1u);
  EXPECT_EQ(r.triples[0], (Triple{"Mexico", "currency", "Mexican peso"}));
  EXPECT_EQ(r.report.dropped_count(), 0u);
}

TEST(Delinearize, AppendixFixturesParseWithExpectedCounts) {
  for (const auto& f : appendix_fixtures()) {
    const auto r = delinearize(f.text, ParseMode::kStrict);
    EXPECT_EQ(r.triples.size(), f.triples) << f.text;
    EXPECT_EQ(linearize(r.triples, TaskPrefix::kNone).text, f.text);
    for (const auto& t : r.triples) EXPECT_EQ(normalize(t), t) << "already normalized: " << t.subject;
  }
}

TEST(Delinearize, TolerantDropsIncompleteTail) {
  const auto r = delinearize("[S] A [P] b [O] C [S] D [P] e", ParseMode::kTolerant);
  ASSERT_EQ(r.triples.size(), 1u);
  EXPECT_EQ(r.triples[0], (Triple{"A", "b", "C"}));
  EXPECT_EQ(r.report.dropped_count(), 1u);
  EXPECT_EQ(r.report.dropped[0].text, "[S] D [P] e");
}

TEST(Delinearize, TolerantResynchronisesAfterGarbage) {
  const auto r = delinearize("hello [S] A [O] x [S] B [P] q [O] R [P] [O] z [S] C [P] d [O] E", ParseMode::kTolerant);
  // leading "hello", "[S] A [O] x" and "[P] [O] z" are dropped
  ASSERT_EQ(r.triples.size(), 2u);
  EXPECT_EQ(r.triples[0], (Triple{"B", "q", "R"}));
  EXPECT_EQ(r.triples[1], (Triple{"C", "d", "E"}));
  EXPECT_EQ(r.report.dropped_count(), 3u);
}

TEST(Delinearize, TolerantNeverEmitsEmptyFields) {
  const auto r = delinearize("[S] [P] b [O] c [S] a [P] b [O]", ParseMode::kTolerant);
  EXPECT_TRUE(r.triples.empty());
  EXPECT_EQ(r.report.dropped_count(), 2u);
  EXPECT_NO_THROW(delinearize("", ParseMode::kTolerant));
  EXPECT_NO_THROW(delinearize("no tags at all", ParseMode::kTolerant));
}

TEST(Delinearize, StrictReportsByteOffset) {
  try {
    delinearize("[S] A [P] b [O] C [S] D [O] e", ParseMode::kStrict);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMalformedLinearization);
    EXPECT_NE(std::string(e.what()).find("byte 24"), std::string::npos) << e.what();
  }
  EXPECT_EQ(code_of([] { delinearize("x [S] A [P] b [O] C", ParseMode::kStrict); }),
            ErrorCode::kMalformedLinearization);
  EXPECT_EQ(code_of([] { delinearize("", ParseMode::kStrict); }), ErrorCode::kMalformedLinearization);
  EXPECT_EQ(code_of([] { delinearize("[S] A [P] b", ParseMode::kStrict); }), ErrorCode::kMalformedLinearization);
}

TEST(RoundTrip, TenThousandRandomTripleLists) {
  Rng rng(2024);
  const std::string alpha = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  auto field = [&] {
    std::string out;
    const std::size_t words = 1 + rng.below(3);
    for (std::size_t w = 0; w < words; ++w) {
      if (w) out += ' ';
      const std::size_t len = 1 + rng.below(8);
      for (std::size_t i = 0; i < len; ++i) out += alpha[rng.below(alpha.size())];
    }
    return out;
  };
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<Triple> ts(1 + rng.below(7));
    for (auto& t : ts) t = {field(), field(), field()};
    const auto lin = linearize(ts, TaskPrefix::kNone);
    EXPECT_EQ(count_of(lin.text, "[S]"), ts.size());
    EXPECT_EQ(count_of(lin.text, "[P]"), ts.size());
    EXPECT_EQ(count_of(lin.text, "[O]"), ts.size());
    const auto back = delinearize(lin.text, ParseMode::kStrict);
    ASSERT_EQ(back.triples, ts) << lin.text;
  }
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_surface("deathPlace"), "death place");
  EXPECT_EQ(normalize_surface("birth_place"), "birth place");
  EXPECT_EQ(normalize_surface("caf\xC3\xA9"), "cafe");
  EXPECT_EQ(normalize_surface("17068.8"), "17068.8");
  EXPECT_EQ(normalize_surface("populationDensity"), "population density");
  EXPECT_EQ(normalize_surface("  spaced   out "), "spaced out");
  EXPECT_EQ(normalize_surface("Ren\xC3\xA9" "e Zellweger"), "Renee Zellweger");
  EXPECT_EQ(normalize_surface("ALCO RS-3"), "ALCO RS-3");
}

TEST(Normalize, CamelSplitMatchesRegexOracle) {
  // oracle: lower-to-upper boundary gets a space
  const std::regex boundary("([a-z])([A-Z])");
  for (const char* w : {"deathPlace", "birthPlace", "numberOfMembers", "leaderName", "areaCode", "isPartOf"}) {
    const std::string split = std::regex_replace(w, boundary, "$1 $2");
    std::string lowered;
    for (char c : split) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    EXPECT_EQ(normalize_surface(w), lowered) << w;
  }
}

TEST(Normalize, IdempotentOnRandomInputs) {
  Rng rng(99);
  const std::vector<std::string> pieces = {"a",  "B",  "c",   "D", "_", " ", "  ", "e\xCC\x81", "\xC3\xA9",
                                           "Zz", "9",  ".",   "-", "O'", "xY", "\xC3\x9C", "ber"};
  for (int t = 0; t < 5000; ++t) {
    std::string s;
    const std::size_t n = rng.below(12);
    for (std::size_t i = 0; i < n; ++i) s += pieces[rng.below(pieces.size())];
    const std::string once = normalize_surface(s);
    EXPECT_EQ(normalize_surface(once), once) << s;
  }
}
