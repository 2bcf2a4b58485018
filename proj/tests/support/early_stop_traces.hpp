#pragma once

// Hand-built dev score traces with the stop and best epochs (1-based) that
// the patience-5 / delta-0.0005 rule must produce.

#include <vector>

namespace cyclegen::testing {

struct Trace {
  std::vector<double> scores;
  int max_epochs;
  int expected_stop;
  int expected_best;
};

inline std::vector<double> ramp(double start, double step, int n) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(start + step * i);
  return v;
}

inline std::vector<Trace> constructed_traces() {
  const double d = 0.0005;
  std::vector<Trace> t;
  t.push_back({std::vector<double>(20, 0.5), 50, 6, 1});                            // flat
  t.push_back({ramp(0.1, 0.01, 10), 50, 10, 10});                                   // steady rise, trace exhausted
  t.push_back({ramp(0.5, 0.0004, 20), 50, 6, 6});                                   // creeping below delta
  t.push_back({{0.1, 0.2, 0.3, 0.29, 0.28, 0.27, 0.26, 0.25, 0.24}, 50, 8, 3});     // peak then decline
  t.push_back({{0.3, 0.2, 0.2, 0.2, 0.2, 0.31, 0.2, 0.2, 0.2, 0.2, 0.2}, 50, 11, 6});  // rescued on the 5th
  t.push_back({{0.25, 0.25 + d, 0.25 + d, 0.25 + d, 0.25 + d, 0.25 + d, 0.25 + d}, 50, 6, 2});  // exactly delta
  t.push_back({{0.1, 0.2, 0.15, 0.25, 0.2, 0.3, 0.29, 0.35, 0.34, 0.33, 0.32, 0.31, 0.30}, 50, 13, 8});
  t.push_back({std::vector<double>(4, 0.4), 50, 4, 1});                             // too short to stop
  t.push_back({ramp(0.0, 0.01, 60), 50, 50, 50});                                   // max_epochs cap
  {
    std::vector<double> alt;
    for (int i = 0; i < 20; ++i) alt.push_back(i % 2 == 0 ? 0.1 * (i / 2 + 1) : 0.05);
    t.push_back({alt, 50, 20, 19});                                                 // alternating
  }
  t.push_back({{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3}, 50, 6, 1});                     // monotone decline
  t.push_back({{0.5, 0.4, 0.4, 0.4, 0.4, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6}, 50, 11, 6});
  t.push_back({std::vector<double>(7, 0.0), 50, 6, 1});                             // all zero
  t.push_back({{0.5, 0.5003, 0.5006, 0.5009, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6}, 50, 10, 5});
  {
    auto v = ramp(0.1, 0.02, 10);
    for (int i = 0; i < 10; ++i) v.push_back(v.back());
    t.push_back({v, 50, 15, 10});                                                   // rise then plateau
  }
  {
    std::vector<double> v = {0.1};
    for (int k = 0; k < 3; ++k) {
      for (int i = 0; i < 4; ++i) v.push_back(0.05);
      v.push_back(0.1 * (k + 2));
    }
    t.push_back({v, 50, 16, 16});                                                   // rescued every 4th
  }
  t.push_back({{0.3, 0.5, 0.4, 0.5, 0.4, 0.4, 0.4}, 50, 7, 2});                     // tie keeps earliest
  t.push_back({ramp(0.5, 0.0006, 12), 50, 12, 12});                                 // just above delta
  t.push_back({{0.7}, 50, 1, 1});                                                   // single evaluation
  t.push_back({std::vector<double>(10, 0.5), 3, 3, 1});                             // cap before patience
  return t;
}

}  // namespace cyclegen::testing
