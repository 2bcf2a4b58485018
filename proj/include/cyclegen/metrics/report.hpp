#pragma once

// Per-run metric computation and seed aggregation into a results table with
// one row per system: mean and (population) variance of every metric.

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cyclegen/corpus.hpp"
#include "cyclegen/error.hpp"
#include "cyclegen/metrics/scores.hpp"

namespace cyclegen::metrics {

// Column order of the results table.
inline const std::vector<std::string>& metric_order() {
  static const std::vector<std::string> order = {"ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR",
                                                 "BLEU",    "BertScore", "PARENT"};
  return order;
}

struct EvalInstance {
  std::string id;
  std::string generation;
  std::vector<std::string> references;
  std::vector<codec::Triple> table;
};

struct InstanceScores {
  std::string id;
  std::map<std::string, double> values;
  bool empty_generation = false;
};

struct SuiteOptions {
  bool rouge = true;
  bool bleu = true;
  bool meteor = true;
  bool parent = true;
  ParentOptions parent_options;
  BleuOptions bleu_options;
  MeteorParams meteor_params;
  // Without an adapter the BertScore column is left out.
  EmbeddingAdapter embedding;

  std::vector<std::string> columns() const {
    std::vector<std::string> out;
    for (const auto& m : metric_order()) {
      if ((m.rfind("ROUGE", 0) == 0 && rouge) || (m == "METEOR" && meteor) || (m == "BLEU" && bleu) ||
          (m == "PARENT" && parent) || (m == "BertScore" && embedding)) {
        out.push_back(m);
      }
    }
    return out;
  }
};

/// Parses "rouge,bleu,meteor,parent" into toggles.
inline SuiteOptions parse_metric_list(const std::string& list) {
  SuiteOptions o;
  o.rouge = o.bleu = o.meteor = o.parent = false;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = text::to_lower(text::trim(item));
    if (item == "rouge") o.rouge = true;
    else if (item == "bleu") o.bleu = true;
    else if (item == "meteor") o.meteor = true;
    else if (item == "parent") o.parent = true;
    else if (!item.empty()) throw Error(ErrorCode::kInvalidConfig, "unknown metric '" + item + "'");
  }
  return o;
}

struct RunScores {
  std::string label;
  std::map<std::string, double> values;  // corpus level, 0..100
  std::vector<InstanceScores> instances;
};

/// Scores one run. Corpus values are on a 0..100 scale: BLEU is corpus
/// BLEU, everything else is the mean of the per-instance scores.
inline RunScores evaluate_run(const std::vector<EvalInstance>& instances, const SuiteOptions& opt = {},
                              std::string label = {}) {
  if (instances.empty()) throw Error(ErrorCode::kEmptyCorpus, "nothing to evaluate");
  RunScores run;
  run.label = std::move(label);
  std::vector<BleuSegment> segs;
  for (const auto& in : instances) {
    if (in.references.empty()) throw Error(ErrorCode::kMissingData, "instance '" + in.id + "' has no reference");
    InstanceScores s;
    s.id = in.id;
    if (opt.rouge) {
      const auto r1 = rouge_n(in.generation, in.references, 1);
      s.empty_generation = r1.empty_generation;
      s.values["ROUGE-1"] = r1.f1;
      s.values["ROUGE-2"] = rouge_n(in.generation, in.references, 2).f1;
      s.values["ROUGE-L"] = rouge_l(in.generation, in.references).f1;
    }
    if (opt.meteor) s.values["METEOR"] = meteor_lite(in.generation, in.references, opt.meteor_params);
    if (opt.bleu) {
      segs.push_back({in.generation, in.references});
      s.values["BLEU"] = sentence_bleu(in.generation, in.references, opt.bleu_options) / 100.0;
    }
    if (opt.embedding) s.values["BertScore"] = bertscore_f1(in.generation, in.references, opt.embedding);
    if (opt.parent) s.values["PARENT"] = parent(in.generation, in.references, in.table, opt.parent_options).f1;
    run.instances.push_back(std::move(s));
  }
  for (const auto& col : opt.columns()) {
    if (col == "BLEU") {
      run.values[col] = bleu(segs, opt.bleu_options).score;
      continue;
    }
    double acc = 0.0;
    for (const auto& s : run.instances) acc += s.values.at(col);
    run.values[col] = 100.0 * acc / static_cast<double>(run.instances.size());
  }
  return run;
}

/// Corpus-level METEOR-lite on [0,1]: the mean over instances. Used for
/// model selection.
inline double corpus_meteor(const std::vector<std::string>& generations,
                            const std::vector<std::vector<std::string>>& references, const MeteorParams& p = {}) {
  if (generations.size() != references.size()) throw Error(ErrorCode::kLengthMismatch, "corpus_meteor: size mismatch");
  if (generations.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < generations.size(); ++i) acc += meteor_lite(generations[i], references[i], p);
  return acc / static_cast<double>(generations.size());
}

// Both shift by the first value, so identical inputs give exactly that value
// and exactly zero variance.
inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double d = 0.0;
  for (double x : v) d += x - v.front();
  return v.front() + d / static_cast<double>(v.size());
}

// Population variance (divide by n).
inline double variance_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double n = static_cast<double>(v.size());
  double s = 0.0, s2 = 0.0;
  for (double x : v) {
    s += x - v.front();
    s2 += (x - v.front()) * (x - v.front());
  }
  return std::max(0.0, s2 / n - (s / n) * (s / n));
}

struct MetricReport {
  std::string system;
  std::vector<std::string> columns;
  std::vector<RunScores> runs;
  std::map<std::string, double> mean;
  std::map<std::string, double> variance;
};

inline MetricReport aggregate(std::string system, std::vector<RunScores> runs, std::vector<std::string> columns) {
  MetricReport rep;
  rep.system = std::move(system);
  rep.columns = std::move(columns);
  for (const auto& c : rep.columns) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.values.at(c));
    rep.mean[c] = mean_of(v);
    rep.variance[c] = variance_of(v);
  }
  rep.runs = std::move(runs);
  return rep;
}

/// One generation file per seed: id -> text.
struct RunGenerations {
  std::string label;
  std::map<std::string, std::string> by_id;
};

/// Scores every run of one system against the same references and tables.
/// All runs must cover exactly the ids of `samples`.
inline MetricReport evaluate_suite(const std::string& system, const std::vector<RunGenerations>& runs,
                                   const std::vector<corpus::Sample>& samples, const SuiteOptions& opt = {}) {
  if (runs.empty()) throw Error(ErrorCode::kEmptyCorpus, "evaluate_suite: no runs");
  std::set<std::string> ids;
  for (const auto& s : samples) ids.insert(s.id);
  std::vector<RunScores> scored;
  for (const auto& run : runs) {
    std::set<std::string> have;
    for (const auto& [id, _] : run.by_id) have.insert(id);
    if (have != ids) {
      std::string detail;
      for (const auto& id : ids) {
        if (!have.count(id)) {
          detail = "missing '" + id + "'";
          break;
        }
      }
      if (detail.empty()) {
        for (const auto& id : have) {
          if (!ids.count(id)) {
            detail = "unknown '" + id + "'";
            break;
          }
        }
      }
      throw Error(ErrorCode::kIdMismatch, "run '" + run.label + "' does not cover the evaluation ids: " + detail);
    }
    std::vector<EvalInstance> inst;
    for (const auto& s : samples) inst.push_back({s.id, run.by_id.at(s.id), s.references, s.triples});
    scored.push_back(evaluate_run(inst, opt, run.label));
  }
  return aggregate(system, std::move(scored), opt.columns());
}

namespace detail {

inline std::string fmt2(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// system,runs,<metric>,<metric>_var,... one row per report.
inline std::string render_csv(const std::vector<MetricReport>& reports, int precision = 4) {
  std::string out;
  if (reports.empty()) return out;
  const auto& cols = reports.front().columns;
  out += "system,runs";
  for (const auto& c : cols) out += "," + c + "," + c + "_var";
  out += "\n";
  for (const auto& r : reports) {
    out += detail::csv_field(r.system) + "," + std::to_string(r.runs.size());
    for (const auto& c : cols) {
      out += "," + detail::fmt2(r.mean.count(c) ? r.mean.at(c) : 0.0, precision);
      out += "," + detail::fmt2(r.variance.count(c) ? r.variance.at(c) : 0.0, precision);
    }
    out += "\n";
  }
  return out;
}

/// Plain-text table, "mean(variance)" per cell.
inline std::string render_table(const std::vector<MetricReport>& reports) {
  if (reports.empty()) return {};
  const auto& cols = reports.front().columns;
  std::size_t w0 = 6;
  for (const auto& r : reports) w0 = std::max(w0, r.system.size());
  std::ostringstream os;
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  os << pad("System", w0);
  for (const auto& c : cols) os << " | " << pad(c, 13);
  os << "\n" << std::string(w0, '-');
  for (std::size_t i = 0; i < cols.size(); ++i) os << "-+-" << std::string(13, '-');
  os << "\n";
  for (const auto& r : reports) {
    os << pad(r.system, w0);
    for (const auto& c : cols) {
      os << " | " << pad(detail::fmt2(r.mean.at(c), 2) + "(" + detail::fmt2(r.variance.at(c), 2) + ")", 13);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace cyclegen::metrics
