#pragma once

#include <map>
#include <vector>

namespace cyclegen::testing {

// Reference definition of competition ranking: the smallest rank is 1 and
// when k items share rank r the next distinct rank is r + k.
inline bool is_competition_ranking(const std::vector<int>& ranks) {
  std::map<int, int> count;
  for (int r : ranks) count[r]++;
  int expect = 1;
  for (const auto& [r, k] : count) {
    if (r != expect) return false;
    expect = r + k;
  }
  return true;
}

}  // namespace cyclegen::testing
