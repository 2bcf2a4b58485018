#pragma once

// Training strategies: three supervised baselines and iterative
// back-translation ("cycle training") between a data-to-text model F and a
// text-to-data model R.
//
//   TDT: R frozen, d^ = R(t),  F learns  d^ -> t
//   DTD: F frozen, t^ = F(d),  R learns  t^ -> d
//
// One cycle epoch is a TDT pass over the whole text corpus followed by a DTD
// pass over the whole data corpus (order configurable). After every epoch F
// is scored on dev with METEOR-lite; the best-dev checkpoint of F is kept.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cyclegen/corpus.hpp"
#include "cyclegen/error.hpp"
#include "cyclegen/metrics/report.hpp"
#include "cyclegen/seq2seq/model.hpp"
#include "cyclegen/seq2seq/span_mask.hpp"
#include "cyclegen/triple_codec.hpp"

namespace cyclegen::cycle {

namespace fs = std::filesystem;
using corpus::Sample;
using corpus::UnpairedCorpora;
using seq2seq::DecodeConfig;
using seq2seq::Direction;
using seq2seq::Seq2SeqModel;
using seq2seq::TextPair;
using seq2seq::TrainConfig;

// ---------------------------------------------------------------- strategies

enum class Strategy { kFullySupervised, kLowResourceFt, kLowResourceFtPlusPretrain, kUnsupervisedCycle, kLowResourceCycle };

inline constexpr std::array<Strategy, 5> kAllStrategies = {
    Strategy::kFullySupervised, Strategy::kLowResourceFt, Strategy::kLowResourceFtPlusPretrain,
    Strategy::kUnsupervisedCycle, Strategy::kLowResourceCycle};

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kFullySupervised: return "fully-supervised";
    case Strategy::kLowResourceFt: return "low-resource-ft";
    case Strategy::kLowResourceFtPlusPretrain: return "low-resource-ft-pretrain";
    case Strategy::kUnsupervisedCycle: return "unsupervised-cycle";
    case Strategy::kLowResourceCycle: return "low-resource-cycle";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
  for (auto st : kAllStrategies) {
    if (s == strategy_name(st)) return st;
  }
  return std::nullopt;
}

inline bool is_cycle(Strategy s) { return s == Strategy::kUnsupervisedCycle || s == Strategy::kLowResourceCycle; }

inline bool uses_low_resource_subset(Strategy s) {
  return s == Strategy::kLowResourceFt || s == Strategy::kLowResourceFtPlusPretrain || s == Strategy::kLowResourceCycle;
}

// ---------------------------------------------------------------- early stopping

/// An evaluation "improves" when it beats the best score so far by more than
/// `delta`; patience counts consecutive evaluations that do not. The best
/// score itself follows every increase, so a run creeping upward in steps
/// below delta still stops. The selected checkpoint is the argmax, earliest
/// on ties.
class EarlyStopping {
 public:
  EarlyStopping(double delta, int patience) : delta_(delta), patience_(patience) {
    if (patience < 1 || !(delta >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "patience >= 1 and delta >= 0 required");
  }

  /// Records one evaluation; true when training should stop now.
  bool update(double score) {
    ++evals_;
    if (evals_ == 1) {
      best_ = score;
      best_eval_ = 1;
      return false;
    }
    const bool improved = score > best_ + delta_;
    if (score > best_) {
      best_ = score;
      best_eval_ = evals_;
    }
    bad_ = improved ? 0 : bad_ + 1;
    return bad_ >= patience_;
  }

  int evaluations() const { return evals_; }
  int best_evaluation() const { return best_eval_; }
  double best_score() const { return best_; }
  int bad_evaluations() const { return bad_; }
  bool should_stop() const { return bad_ >= patience_; }

  nlohmann::json to_json() const {
    return {{"delta", delta_}, {"patience", patience_}, {"evaluations", evals_}, {"bad", bad_},
            {"best", best_}, {"best_evaluation", best_eval_}};
  }
  static EarlyStopping from_json(const nlohmann::json& j) {
    EarlyStopping e(j.at("delta").get<double>(), j.at("patience").get<int>());
    e.evals_ = j.at("evaluations").get<int>();
    e.bad_ = j.at("bad").get<int>();
    e.best_ = j.at("best").get<double>();
    e.best_eval_ = j.at("best_evaluation").get<int>();
    return e;
  }

 private:
  double delta_;
  int patience_;
  int evals_ = 0;
  int bad_ = 0;
  double best_ = 0.0;
  int best_eval_ = 0;
};

/// Number of evaluations a run performs on `trace` (capped at max_epochs).
inline int stop_epoch(const std::vector<double>& trace, double delta, int patience, int max_epochs) {
  EarlyStopping es(delta, patience);
  const int n = std::min<int>(max_epochs, static_cast<int>(trace.size()));
  for (int i = 0; i < n; ++i) {
    if (es.update(trace[static_cast<std::size_t>(i)])) return i + 1;
  }
  return n;
}

// ---------------------------------------------------------------- config

struct CycleConfig {
  int max_epochs = 50;
  double early_stop_delta = 0.0005;  // METEOR on [0, 1]
  int patience = 5;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t low_resource_size = 100;
  bool tdt_first = true;
  // Drop TDT pairs whose d^ loses more than filter_max_drop of its blocks
  // under tolerant parsing. Off: intermediate outputs are used verbatim.
  bool filter_malformed = false;
  double filter_max_drop = 0.5;
  // Supervised pairs use every reference of a sample, not just the first.
  bool all_references = true;
  TrainConfig train;  // one pass per epoch; train.max_epochs is ignored
  int pre_cycle_epochs = 20;
  int pretrain_epochs = 5;
  seq2seq::SpanMaskConfig span_mask;
  DecodeConfig decode;        // test generation
  DecodeConfig cycle_decode;  // intermediate t^ / d^
  DecodeConfig dev_decode;
  std::size_t dev_limit = 0;  // 0: whole dev split
  int workers = 1;            // generation threads over a frozen model

  void validate() const {
    if (max_epochs < 1 || patience < 1 || !(early_stop_delta >= 0.0) || seeds.empty() || workers < 1 ||
        pre_cycle_epochs < 0 || pretrain_epochs < 0 || filter_max_drop < 0.0 || filter_max_drop > 1.0) {
      throw Error(ErrorCode::kInvalidConfig, "invalid cycle config");
    }
    train.validate();
    decode.validate();
    cycle_decode.validate();
    dev_decode.validate();
  }

  nlohmann::json to_json() const {
    return {{"max_epochs", max_epochs},
            {"early_stop_delta", early_stop_delta},
            {"patience", patience},
            {"seeds", seeds},
            {"low_resource_size", low_resource_size},
            {"tdt_first", tdt_first},
            {"filter_malformed", filter_malformed},
            {"filter_max_drop", filter_max_drop},
            {"all_references", all_references},
            {"train", train.to_json()},
            {"pre_cycle_epochs", pre_cycle_epochs},
            {"pretrain_epochs", pretrain_epochs},
            {"span_mask", {{"mask_rate", span_mask.mask_rate}, {"mean_span", span_mask.mean_span}}},
            {"decode", decode.to_json()},
            {"cycle_decode", cycle_decode.to_json()},
            {"dev_decode", dev_decode.to_json()},
            {"dev_limit", dev_limit},
            {"workers", workers}};
  }

  static CycleConfig from_json(const nlohmann::json& j) {
    CycleConfig c;
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_delta = j.value("early_stop_delta", c.early_stop_delta);
    c.patience = j.value("patience", c.patience);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    c.low_resource_size = j.value("low_resource_size", c.low_resource_size);
    c.tdt_first = j.value("tdt_first", c.tdt_first);
    c.filter_malformed = j.value("filter_malformed", c.filter_malformed);
    c.filter_max_drop = j.value("filter_max_drop", c.filter_max_drop);
    c.all_references = j.value("all_references", c.all_references);
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    c.pre_cycle_epochs = j.value("pre_cycle_epochs", c.pre_cycle_epochs);
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    if (j.contains("span_mask")) {
      c.span_mask.mask_rate = j["span_mask"].value("mask_rate", c.span_mask.mask_rate);
      c.span_mask.mean_span = j["span_mask"].value("mean_span", c.span_mask.mean_span);
    }
    if (j.contains("decode")) c.decode = DecodeConfig::from_json(j["decode"]);
    if (j.contains("cycle_decode")) c.cycle_decode = DecodeConfig::from_json(j["cycle_decode"]);
    if (j.contains("dev_decode")) c.dev_decode = DecodeConfig::from_json(j["dev_decode"]);
    c.dev_limit = j.value("dev_limit", c.dev_limit);
    c.workers = j.value("workers", c.workers);
    return c;
  }
};

// ---------------------------------------------------------------- pairs

inline std::string forward_input(const corpus::TripleSet& d) {
  return codec::linearize(d, codec::TaskPrefix::kDataToText).text;
}

inline std::string reverse_input(const std::string& t) {
  return std::string(codec::prefix_text(codec::TaskPrefix::kTextToData)) + t;
}

inline std::string data_target(const corpus::TripleSet& d) { return codec::linearize(d, codec::TaskPrefix::kNone).text; }

inline std::vector<TextPair> forward_pairs(const std::vector<Sample>& samples, bool all_references = true) {
  std::vector<TextPair> out;
  for (const auto& s : samples) {
    const std::string in = forward_input(s.triples);
    for (std::size_t r = 0; r < (all_references ? s.references.size() : std::min<std::size_t>(1, s.references.size())); ++r) {
      out.push_back({in, s.references[r]});
    }
  }
  return out;
}

inline std::vector<TextPair> reverse_pairs(const std::vector<Sample>& samples, bool all_references = true) {
  std::vector<TextPair> out;
  for (const auto& s : samples) {
    const std::string tgt = data_target(s.triples);
    for (std::size_t r = 0; r < (all_references ? s.references.size() : std::min<std::size_t>(1, s.references.size())); ++r) {
      out.push_back({reverse_input(s.references[r]), tgt});
    }
  }
  return out;
}

/// Generation over a frozen model, optionally split across threads; output
/// order always follows `inputs`.
inline std::vector<std::string> generate_all(const Seq2SeqModel& model, const std::vector<std::string>& inputs,
                                             const DecodeConfig& decode, int workers = 1) {
  std::vector<std::string> out(inputs.size());
  const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(workers), inputs.size()));
  if (w <= 1) {
    for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = model.generate(inputs[i], decode);
    return out;
  }
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = t; i < inputs.size(); i += w) out[i] = model.generate(inputs[i], decode);
    });
  }
  for (auto& th : threads) th.join();
  return out;
}

// ---------------------------------------------------------------- cycle epochs

/// Checksums around one phase: the frozen model must not move.
struct FreezeEvent {
  std::string phase;    // "TDT" or "DTD"
  std::string trained;  // "forward" / "reverse"
  std::uint64_t frozen_before = 0;
  std::uint64_t frozen_after = 0;
  std::uint64_t trained_before = 0;
  std::uint64_t trained_after = 0;
  bool frozen_flag = true;
  bool trained_flag = false;

  nlohmann::json to_json() const {
    return {{"phase", phase},
            {"trained", trained},
            {"frozen_before", frozen_before},
            {"frozen_after", frozen_after},
            {"trained_before", trained_before},
            {"trained_after", trained_after},
            {"frozen_flag", frozen_flag},
            {"trained_flag", trained_flag}};
  }
  static FreezeEvent from_json(const nlohmann::json& j) {
    FreezeEvent e;
    e.phase = j.at("phase").get<std::string>();
    e.trained = j.at("trained").get<std::string>();
    e.frozen_before = j.at("frozen_before").get<std::uint64_t>();
    e.frozen_after = j.at("frozen_after").get<std::uint64_t>();
    e.trained_before = j.at("trained_before").get<std::uint64_t>();
    e.trained_after = j.at("trained_after").get<std::uint64_t>();
    e.frozen_flag = j.value("frozen_flag", true);
    e.trained_flag = j.value("trained_flag", false);
    return e;
  }
};

struct PhaseResult {
  double loss = 0.0;
  std::size_t pairs_used = 0;
  std::size_t pairs_filtered = 0;
  std::vector<std::string> generations;  // t^ or d^, corpus order
  FreezeEvent event;
};

struct PhaseOptions {
  bool filter_malformed = false;
  double filter_max_drop = 0.5;
  int workers = 1;
};

namespace detail {

inline void check_roles(const Seq2SeqModel& frozen, const Seq2SeqModel& trained) {
  if (!frozen.frozen()) throw Error(ErrorCode::kNotFrozen, "the generating model must be frozen");
  if (trained.frozen()) throw Error(ErrorCode::kFrozenModel, "the model being trained is frozen");
}

inline void check_unchanged(const Seq2SeqModel& frozen) {
  if (frozen.checksum() != frozen.frozen_checksum()) {
    throw Error(ErrorCode::kFrozenModel, "frozen model parameters changed during a cycle");
  }
}

inline TrainConfig one_pass(TrainConfig cfg) {
  cfg.max_epochs = 1;
  return cfg;
}

inline double drop_fraction(const std::string& d) {
  const auto r = codec::delinearize(d, codec::ParseMode::kTolerant);
  const std::size_t total = r.triples.size() + r.report.dropped_count();
  if (r.triples.empty()) return 1.0;
  return static_cast<double>(r.report.dropped_count()) / static_cast<double>(total);
}

}  // namespace detail

/// DTD: the frozen forward model verbalizes every triple set; the reverse
/// model learns to recover the triples from that text.
inline PhaseResult run_dtd_epoch(const Seq2SeqModel& forward, Seq2SeqModel& reverse,
                                 const std::vector<corpus::TripleSet>& data, const DecodeConfig& decode,
                                 const TrainConfig& train, const PhaseOptions& opt = {}) {
  detail::check_roles(forward, reverse);
  if (data.empty()) throw Error(ErrorCode::kEmptyCorpus, "DTD needs a non-empty data corpus");
  PhaseResult res;
  res.event = {"DTD", "reverse", forward.checksum(), 0, reverse.checksum(), 0, forward.frozen(), !reverse.frozen()};
  std::vector<std::string> inputs;
  inputs.reserve(data.size());
  for (const auto& d : data) inputs.push_back(forward_input(d));
  res.generations = generate_all(forward, inputs, decode, opt.workers);
  std::vector<TextPair> pairs;
  for (std::size_t i = 0; i < data.size(); ++i) pairs.push_back({reverse_input(res.generations[i]), data_target(data[i])});
  res.pairs_used = pairs.size();
  const auto rep = reverse.train_teacher_forcing(pairs, detail::one_pass(train));
  res.loss = rep.epoch_losses.empty() ? 0.0 : rep.epoch_losses.back();
  res.event.frozen_after = forward.checksum();
  res.event.trained_after = reverse.checksum();
  detail::check_unchanged(forward);
  return res;
}

/// TDT: the frozen reverse model extracts triples from every text; the
/// forward model learns to regenerate the text from them. Extractions are
/// used verbatim unless filtering is switched on.
inline PhaseResult run_tdt_epoch(const Seq2SeqModel& reverse, Seq2SeqModel& forward, const std::vector<std::string>& texts,
                                 const DecodeConfig& decode, const TrainConfig& train, const PhaseOptions& opt = {}) {
  detail::check_roles(reverse, forward);
  if (texts.empty()) throw Error(ErrorCode::kEmptyCorpus, "TDT needs a non-empty text corpus");
  PhaseResult res;
  res.event = {"TDT", "forward", reverse.checksum(), 0, forward.checksum(), 0, reverse.frozen(), !forward.frozen()};
  std::vector<std::string> inputs;
  inputs.reserve(texts.size());
  for (const auto& t : texts) inputs.push_back(reverse_input(t));
  res.generations = generate_all(reverse, inputs, decode, opt.workers);
  std::vector<TextPair> pairs;
  const std::string prefix(codec::prefix_text(codec::TaskPrefix::kDataToText));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (opt.filter_malformed && detail::drop_fraction(res.generations[i]) > opt.filter_max_drop) {
      ++res.pairs_filtered;
      continue;
    }
    pairs.push_back({prefix + res.generations[i], texts[i]});
  }
  res.pairs_used = pairs.size();
  if (!pairs.empty()) {
    const auto rep = forward.train_teacher_forcing(pairs, detail::one_pass(train));
    res.loss = rep.epoch_losses.empty() ? 0.0 : rep.epoch_losses.back();
  }
  res.event.frozen_after = reverse.checksum();
  res.event.trained_after = forward.checksum();
  detail::check_unchanged(reverse);
  return res;
}

/// Supervised warm-up of both directions on the paired subset.
inline void pre_cycle_finetune(Seq2SeqModel& forward, Seq2SeqModel& reverse, const std::vector<Sample>& paired,
                               const TrainConfig& train, bool all_references = true) {
  if (paired.empty()) throw Error(ErrorCode::kEmptyBatch, "pre-cycle fine-tuning needs paired samples");
  forward.unfreeze();
  reverse.unfreeze();
  forward.train_teacher_forcing(forward_pairs(paired, all_references), train);
  reverse.train_teacher_forcing(reverse_pairs(paired, all_references), train);
}

// ---------------------------------------------------------------- records

struct EpochLog {
  int epoch = 0;
  double dev_meteor = 0.0;
  double forward_loss = 0.0;
  double reverse_loss = 0.0;
  std::vector<FreezeEvent> events;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : events) ev.push_back(e.to_json());
    return {{"epoch", epoch},         {"dev_meteor", dev_meteor}, {"forward_loss", forward_loss},
            {"reverse_loss", reverse_loss}, {"events", ev},       {"seconds", seconds}};
  }
  static EpochLog from_json(const nlohmann::json& j) {
    EpochLog e;
    e.epoch = j.at("epoch").get<int>();
    e.dev_meteor = j.at("dev_meteor").get<double>();
    e.forward_loss = j.value("forward_loss", 0.0);
    e.reverse_loss = j.value("reverse_loss", 0.0);
    e.seconds = j.value("seconds", 0.0);
    for (const auto& x : j.value("events", nlohmann::json::array())) e.events.push_back(FreezeEvent::from_json(x));
    return e;
  }
};

struct RunRecord {
  std::string strategy;
  std::uint64_t seed = 0;
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_dev_meteor = 0.0;
  std::string checkpoint;  // id of the selected checkpoint
  bool stopped_early = false;
  bool completed = false;
  std::map<std::string, double> test;              // metric -> value, 0..100
  std::map<std::string, std::string> generations;  // test id -> text

  nlohmann::json to_json() const {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs) ep.push_back(e.to_json());
    return {{"strategy", strategy},       {"seed", seed},         {"epochs", ep},
            {"best_epoch", best_epoch},   {"best_dev_meteor", best_dev_meteor},
            {"checkpoint", checkpoint},   {"stopped_early", stopped_early},
            {"completed", completed},     {"test", test},         {"generations", generations}};
  }
  static RunRecord from_json(const nlohmann::json& j) {
    RunRecord r;
    r.strategy = j.at("strategy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("epochs")) r.epochs.push_back(EpochLog::from_json(e));
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best_dev_meteor = j.at("best_dev_meteor").get<double>();
    r.checkpoint = j.value("checkpoint", "");
    r.stopped_early = j.value("stopped_early", false);
    r.completed = j.value("completed", false);
    r.test = j.value("test", std::map<std::string, double>{});
    r.generations = j.value("generations", std::map<std::string, std::string>{});
    return r;
  }
};

struct ExperimentRecord {
  std::string name;
  std::string strategy;
  std::vector<RunRecord> runs;
  metrics::MetricReport report;  // mean / variance over runs
};

inline ExperimentRecord summarize(std::string name, std::string strategy, std::vector<RunRecord> runs) {
  ExperimentRecord ex;
  ex.name = std::move(name);
  ex.strategy = std::move(strategy);
  std::vector<metrics::RunScores> scores;
  std::vector<std::string> cols;
  for (const auto& r : runs) {
    metrics::RunScores s;
    s.label = "seed" + std::to_string(r.seed);
    s.values = r.test;
    scores.push_back(std::move(s));
  }
  if (!runs.empty()) {
    for (const auto& c : metrics::metric_order()) {
      if (runs.front().test.count(c)) cols.push_back(c);
    }
  }
  ex.report = metrics::aggregate(ex.name, std::move(scores), cols);
  ex.runs = std::move(runs);
  return ex;
}

// ---------------------------------------------------------------- models

/// How the trainer obtains fresh and restored models; lets an external
/// backbone stand in for the bundled transformer.
struct ModelFactory {
  std::function<std::unique_ptr<Seq2SeqModel>(Direction, std::uint64_t seed)> create;
  std::function<std::unique_ptr<Seq2SeqModel>(const fs::path&)> load;
};

inline ModelFactory transformer_factory(seq2seq::Vocab vocab, seq2seq::ModelConfig cfg) {
  ModelFactory f;
  f.create = [vocab, cfg](Direction d, std::uint64_t seed) -> std::unique_ptr<Seq2SeqModel> {
    return std::make_unique<seq2seq::TransformerModel>(vocab, cfg, d, seed);
  };
  f.load = [](const fs::path& p) -> std::unique_ptr<Seq2SeqModel> {
    return std::make_unique<seq2seq::TransformerModel>(seq2seq::TransformerModel::load(p));
  };
  return f;
}

/// Every strategy starts from the same pre-trained backbone; each run gets
/// its own copy with fresh optimizer state.
inline ModelFactory pretrained_factory(std::shared_ptr<const seq2seq::TransformerModel> base) {
  ModelFactory f;
  f.create = [base](Direction d, std::uint64_t seed) -> std::unique_ptr<Seq2SeqModel> {
    return std::make_unique<seq2seq::TransformerModel>(base->derive(d, seed));
  };
  f.load = [](const fs::path& p) -> std::unique_ptr<Seq2SeqModel> {
    return std::make_unique<seq2seq::TransformerModel>(seq2seq::TransformerModel::load(p));
  };
  return f;
}

/// Multi-task pairs in both directions, for backbone pre-training on an
/// unrelated paired corpus.
inline std::vector<TextPair> bidirectional_pairs(const std::vector<Sample>& samples) {
  auto pairs = forward_pairs(samples, true);
  for (auto& p : reverse_pairs(samples, true)) pairs.push_back(std::move(p));
  return pairs;
}

/// Shared vocabulary: every token of the train references and triples.
inline seq2seq::Vocab build_vocab(const std::vector<Sample>& train, std::size_t min_count = 1,
                                  const std::vector<Sample>& extra = {}) {
  std::vector<std::string> texts;
  for (const auto& s : train) {
    texts.push_back(data_target(s.triples));
    for (const auto& r : s.references) texts.push_back(r);
  }
  for (const auto& s : extra) {
    texts.push_back(data_target(s.triples));
    for (const auto& r : s.references) texts.push_back(r);
  }
  return seq2seq::Vocab::build(texts, min_count);
}

// ---------------------------------------------------------------- run driver

struct RunContext {
  fs::path dir;                 // runs/<name>/seed<k>; empty: keep everything in memory
  int halt_after_epochs = -1;   // testing hook: stop (resumably) after this many epochs
  std::function<void(const std::string&)> log;

  void say(const std::string& s) const {
    if (log) log(s);
  }
};

struct RunInputs {
  std::vector<Sample> train;
  std::vector<Sample> dev;
  std::vector<Sample> test;
  // Cycle strategies: the unpaired corpora. Built from `train` with
  // split_unpaired when absent.
  std::optional<UnpairedCorpora> unpaired;
};

namespace detail {

inline std::uint64_t model_seed(std::uint64_t seed, Direction d) {
  return mix_seed(seed, d == Direction::kForward ? 101 : 102);
}

inline std::vector<Sample> dev_slice(const std::vector<Sample>& dev, std::size_t limit) {
  if (limit == 0 || limit >= dev.size()) return dev;
  return {dev.begin(), dev.begin() + static_cast<std::ptrdiff_t>(limit)};
}

inline void write_atomic(const fs::path& p, const std::string& content) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, p);
}

inline std::optional<nlohmann::json> read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Dev METEOR-lite of the forward model, on [0, 1].
inline double dev_meteor(const Seq2SeqModel& forward, const std::vector<Sample>& dev, const DecodeConfig& decode,
                         int workers = 1) {
  if (dev.empty()) throw Error(ErrorCode::kEmptySplit, "dev split is empty");
  std::vector<std::string> inputs;
  std::vector<std::vector<std::string>> refs;
  for (const auto& s : dev) {
    inputs.push_back(forward_input(s.triples));
    refs.push_back(s.references);
  }
  return metrics::corpus_meteor(generate_all(forward, inputs, decode, workers), refs);
}

/// Test metrics of a forward model plus its generations.
inline std::pair<std::map<std::string, double>, std::map<std::string, std::string>> evaluate_forward(
    const Seq2SeqModel& forward, const std::vector<Sample>& test, const DecodeConfig& decode, int workers = 1) {
  if (test.empty()) throw Error(ErrorCode::kEmptySplit, "test split is empty");
  std::vector<std::string> inputs;
  for (const auto& s : test) inputs.push_back(forward_input(s.triples));
  const auto gens = generate_all(forward, inputs, decode, workers);
  std::vector<metrics::EvalInstance> inst;
  std::map<std::string, std::string> by_id;
  for (std::size_t i = 0; i < test.size(); ++i) {
    inst.push_back({test[i].id, gens[i], test[i].references, test[i].triples});
    by_id[test[i].id] = gens[i];
  }
  return {metrics::evaluate_run(inst).values, by_id};
}

/// One seed of one strategy, end to end: data selection, optional warm-up,
/// the epoch loop with dev selection, and test scoring of the selected F.
/// With a run directory, every epoch is checkpointed and an interrupted run
/// resumes where it stopped.
class SeedRun {
 public:
  SeedRun(Strategy strategy, const RunInputs& in, const CycleConfig& cfg, std::uint64_t seed, ModelFactory factory,
          RunContext ctx = {})
      : strategy_(strategy), in_(in), cfg_(cfg), seed_(seed), factory_(std::move(factory)), ctx_(std::move(ctx)) {
    cfg_.validate();
    if (in_.dev.empty()) throw Error(ErrorCode::kMissingData, "a dev split is required for model selection");
  }

  RunRecord run() {
    if (!ctx_.dir.empty()) {
      if (auto done = detail::read_json(ctx_.dir / "record.json")) {
        RunRecord r = RunRecord::from_json(*done);
        if (r.completed) return r;
      }
      fs::create_directories(ctx_.dir / "checkpoints");
      detail::write_atomic(ctx_.dir / "config.json",
                           nlohmann::json{{"strategy", strategy_name(strategy_)}, {"seed", seed_}, {"cycle", cfg_.to_json()}}
                               .dump(2) + "\n");
    }
    record_.strategy = strategy_name(strategy_);
    record_.seed = seed_;
    if (!resume()) start();

    const std::vector<Sample> dev = detail::dev_slice(in_.dev, cfg_.dev_limit);
    bool stop = stopper_->should_stop();
    while (!stop && epoch_ < cfg_.max_epochs) {
      if (ctx_.halt_after_epochs >= 0 && static_cast<int>(record_.epochs.size()) >= ctx_.halt_after_epochs) {
        ctx_.say("halting after epoch " + std::to_string(epoch_));
        return record_;
      }
      const auto t0 = std::chrono::steady_clock::now();
      EpochLog log;
      log.epoch = ++epoch_;
      if (is_cycle(strategy_)) {
        cycle_epoch(log);
      } else {
        forward_->unfreeze();
        const auto rep = forward_->train_teacher_forcing(supervised_, detail::one_pass(cfg_.train));
        log.forward_loss = rep.epoch_losses.back();
      }
      log.dev_meteor = dev_meteor(*forward_, dev, cfg_.dev_decode, cfg_.workers);
      stop = stopper_->update(log.dev_meteor);
      if (stopper_->best_evaluation() == stopper_->evaluations()) best_ = forward_->clone();
      log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      record_.epochs.push_back(log);
      ctx_.say(record_.strategy + " seed " + std::to_string(seed_) + " epoch " + std::to_string(epoch_) +
               " dev METEOR " + std::to_string(log.dev_meteor));
      checkpoint();
    }
    record_.stopped_early = stop;
    record_.best_epoch = stopper_->best_evaluation();
    record_.best_dev_meteor = stopper_->best_score();
    record_.checkpoint = "epoch" + std::to_string(record_.best_epoch);
    auto [scores, gens] = evaluate_forward(*best_, in_.test, cfg_.decode, cfg_.workers);
    record_.test = std::move(scores);
    record_.generations = std::move(gens);
    record_.completed = true;
    if (!ctx_.dir.empty()) {
      detail::write_atomic(ctx_.dir / "record.json", record_.to_json().dump(1) + "\n");
      std::string lines;
      for (const auto& s : in_.test) {
        lines += nlohmann::json{{"id", s.id}, {"generation", record_.generations.at(s.id)}}.dump() + "\n";
      }
      detail::write_atomic(ctx_.dir / "test_generations.jsonl", lines);
    }
    return record_;
  }

  const Seq2SeqModel& best_forward() const { return *best_; }
  const Seq2SeqModel* reverse() const { return reverse_.get(); }

 private:
  // warm: run pre-training / pre-cycle fine-tuning. Resume only needs the
  // data selection, the models come from the checkpoint.
  void start(bool warm = true) {
    forward_ = factory_.create(Direction::kForward, detail::model_seed(seed_, Direction::kForward));
    stopper_.emplace(cfg_.early_stop_delta, cfg_.patience);
    std::vector<Sample> subset;
    if (uses_low_resource_subset(strategy_)) subset = corpus::sample_low_resource(in_.train, cfg_.low_resource_size, seed_);

    switch (strategy_) {
      case Strategy::kFullySupervised:
        if (in_.train.empty()) throw Error(ErrorCode::kMissingData, "fully supervised training needs a train split");
        supervised_ = forward_pairs(in_.train, cfg_.all_references);
        break;
      case Strategy::kLowResourceFt:
        supervised_ = forward_pairs(subset, cfg_.all_references);
        break;
      case Strategy::kLowResourceFtPlusPretrain: {
        std::vector<std::string> texts;
        for (const auto& s : in_.train) texts.push_back(s.references.front());
        if (texts.empty()) throw Error(ErrorCode::kMissingData, "pre-training needs in-domain text");
        TrainConfig pt = cfg_.train;
        pt.max_epochs = std::max(1, cfg_.pretrain_epochs);
        if (warm && cfg_.pretrain_epochs > 0) seq2seq::span_mask_pretrain(*forward_, texts, cfg_.span_mask, pt, seed_);
        supervised_ = forward_pairs(subset, cfg_.all_references);
        break;
      }
      case Strategy::kUnsupervisedCycle:
      case Strategy::kLowResourceCycle: {
        reverse_ = factory_.create(Direction::kReverse, detail::model_seed(seed_, Direction::kReverse));
        corpora_ = in_.unpaired ? *in_.unpaired : corpus::split_unpaired(in_.train, seed_).corpora;
        if (corpora_.data.empty() || corpora_.text.empty()) throw Error(ErrorCode::kEmptyCorpus, "empty unpaired corpora");
        if (strategy_ == Strategy::kLowResourceCycle) {
          if (subset.empty()) throw Error(ErrorCode::kMissingPairedSubset, "low-resource cycle needs a paired subset");
          TrainConfig ft = cfg_.train;
          ft.max_epochs = std::max(1, cfg_.pre_cycle_epochs);
          if (warm && cfg_.pre_cycle_epochs > 0) pre_cycle_finetune(*forward_, *reverse_, subset, ft, cfg_.all_references);
        }
        break;
      }
    }
    if (!is_cycle(strategy_) && supervised_.empty()) throw Error(ErrorCode::kMissingData, "no supervised pairs");
    best_ = forward_->clone();
  }

  void cycle_epoch(EpochLog& log) {
    PhaseOptions po{cfg_.filter_malformed, cfg_.filter_max_drop, cfg_.workers};
    auto tdt = [&] {
      reverse_->freeze();
      forward_->unfreeze();
      const auto r = run_tdt_epoch(*reverse_, *forward_, corpora_.text, cfg_.cycle_decode, cfg_.train, po);
      log.forward_loss = r.loss;
      log.events.push_back(r.event);
    };
    auto dtd = [&] {
      forward_->freeze();
      reverse_->unfreeze();
      const auto r = run_dtd_epoch(*forward_, *reverse_, corpora_.data, cfg_.cycle_decode, cfg_.train, po);
      log.reverse_loss = r.loss;
      log.events.push_back(r.event);
    };
    if (cfg_.tdt_first) {
      tdt();
      dtd();
    } else {
      dtd();
      tdt();
    }
  }

  void checkpoint() {
    if (ctx_.dir.empty()) return;
    const fs::path ck = ctx_.dir / "checkpoints";
    forward_->save(ck / "last_forward");
    if (reverse_) reverse_->save(ck / "last_reverse");
    if (stopper_->best_evaluation() == stopper_->evaluations()) best_->save(ck / "best_forward");
    std::string lines;
    for (const auto& e : record_.epochs) lines += e.to_json().dump() + "\n";
    detail::write_atomic(ctx_.dir / "epochs.jsonl", lines);
    nlohmann::json st = {{"epoch", epoch_}, {"stopper", stopper_->to_json()}, {"record", record_.to_json()}};
    detail::write_atomic(ctx_.dir / "state.json", st.dump() + "\n");
  }

  bool resume() {
    if (ctx_.dir.empty()) return false;
    const auto st = detail::read_json(ctx_.dir / "state.json");
    if (!st) return false;
    const fs::path ck = ctx_.dir / "checkpoints";
    start(false);
    forward_ = factory_.load(ck / "last_forward");
    if (reverse_) reverse_ = factory_.load(ck / "last_reverse");
    best_ = factory_.load(ck / "best_forward");
    epoch_ = st->at("epoch").get<int>();
    stopper_ = EarlyStopping::from_json(st->at("stopper"));
    record_ = RunRecord::from_json(st->at("record"));
    ctx_.say("resumed " + ctx_.dir.string() + " at epoch " + std::to_string(epoch_));
    return true;
  }

  Strategy strategy_;
  const RunInputs& in_;
  CycleConfig cfg_;
  std::uint64_t seed_;
  ModelFactory factory_;
  RunContext ctx_;

  std::unique_ptr<Seq2SeqModel> forward_;
  std::unique_ptr<Seq2SeqModel> reverse_;
  std::unique_ptr<Seq2SeqModel> best_;
  std::optional<EarlyStopping> stopper_;
  std::vector<TextPair> supervised_;
  UnpairedCorpora corpora_;
  RunRecord record_;
  int epoch_ = 0;
};

/// All seeds of one strategy under runs/<name>/seed<k>.
inline ExperimentRecord run_experiment(const std::string& name, Strategy strategy, const RunInputs& in,
                                       const CycleConfig& cfg, const ModelFactory& factory, const fs::path& root = {},
                                       std::function<void(const std::string&)> log = {}) {
  std::vector<RunRecord> runs;
  for (std::uint64_t seed : cfg.seeds) {
    RunContext ctx;
    if (!root.empty()) ctx.dir = root / name / ("seed" + std::to_string(seed));
    ctx.log = log;
    runs.push_back(SeedRun(strategy, in, cfg, seed, factory, ctx).run());
  }
  return summarize(name, strategy_name(strategy), std::move(runs));
}

inline ExperimentRecord cycle_train(const std::string& name, Strategy strategy, const RunInputs& in,
                                    const CycleConfig& cfg, const ModelFactory& factory, const fs::path& root = {},
                                    std::function<void(const std::string&)> log = {}) {
  if (!is_cycle(strategy)) throw Error(ErrorCode::kInvalidConfig, "cycle_train needs a cycle strategy");
  return run_experiment(name, strategy, in, cfg, factory, root, std::move(log));
}

inline ExperimentRecord run_baseline(const std::string& name, Strategy strategy, const RunInputs& in,
                                     const CycleConfig& cfg, const ModelFactory& factory, const fs::path& root = {},
                                     std::function<void(const std::string&)> log = {}) {
  if (is_cycle(strategy)) throw Error(ErrorCode::kInvalidConfig, "run_baseline needs a fine-tuning strategy");
  return run_experiment(name, strategy, in, cfg, factory, root, std::move(log));
}

/// Unsupervised cycle training at each overlap level, same seeds everywhere.
/// Row names are "<level>%".
inline std::vector<ExperimentRecord> run_overlap_experiment(const std::string& name, const RunInputs& in,
                                                            const std::vector<int>& levels, const CycleConfig& cfg,
                                                            const ModelFactory& factory, const fs::path& root = {},
                                                            std::function<void(const std::string&)> log = {}) {
  std::vector<ExperimentRecord> rows;
  for (int level : levels) {
    std::vector<RunRecord> runs;
    for (std::uint64_t seed : cfg.seeds) {
      RunInputs level_in{{}, in.dev, in.test, corpus::build_overlap_corpora(in.train, level, seed).corpora};
      RunContext ctx;
      const std::string row = name + "/overlap" + std::to_string(level);
      if (!root.empty()) ctx.dir = root / row / ("seed" + std::to_string(seed));
      ctx.log = log;
      runs.push_back(SeedRun(Strategy::kUnsupervisedCycle, level_in, cfg, seed, factory, ctx).run());
    }
    rows.push_back(summarize(std::to_string(level) + "%", strategy_name(Strategy::kUnsupervisedCycle), std::move(runs)));
  }
  return rows;
}

}  // namespace cyclegen::cycle
