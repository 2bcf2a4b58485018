#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "cyclegen/error.hpp"
#include "cyclegen/seq2seq/vocab.hpp"

namespace cyclegen::seq2seq {

inline constexpr double kRowSumTolerance = 1e-6;

// Training-time floor on target probabilities; evaluation never applies it.
inline constexpr double kTrainProbabilityFloor = 1e-12;

struct NllResult {
  double value = 0.0;
  bool zero_probability = false;  // some target had p = 0; value is +inf
};

struct NllOptions {
  bool throw_on_zero_probability = false;
  bool check_row_sums = true;
};

/// Averaged negative log-likelihood of `target` under per-position
/// distributions: -(1/|target|) * sum_i log p_i(target_i).
inline NllResult nll_loss(std::span<const std::vector<double>> rows, std::span<const TokenId> target,
                          const NllOptions& opts = {}) {
  if (rows.size() != target.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(rows.size()) + " rows vs " +
                                                std::to_string(target.size()) + " targets");
  }
  if (target.empty()) throw Error(ErrorCode::kLengthMismatch, "empty target");
  NllResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (opts.check_row_sums) {
      double s = 0.0;
      for (double p : row) s += p;
      if (std::abs(s - 1.0) > kRowSumTolerance) {
        throw Error(ErrorCode::kLengthMismatch, "row " + std::to_string(i) + " does not sum to 1");
      }
    }
    const auto t = static_cast<std::size_t>(target[i]);
    if (t >= row.size()) throw Error(ErrorCode::kLengthMismatch, "target id outside distribution");
    const double p = row[t];
    if (p <= 0.0) {
      if (opts.throw_on_zero_probability) {
        throw Error(ErrorCode::kZeroProbabilityTarget, "target at position " + std::to_string(i));
      }
      r.zero_probability = true;
      r.value = std::numeric_limits<double>::infinity();
      return r;
    }
    sum -= std::log(p);
  }
  r.value = sum / static_cast<double>(target.size());
  return r;
}

}  // namespace cyclegen::seq2seq
