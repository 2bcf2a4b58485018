#include <gtest/gtest.h>

#include <filesystem>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "cyclegen/cycle_trainer.hpp"
#include "cyclegen/toy_grammar.hpp"
#include "support/early_stop_traces.hpp"

namespace cg = cyclegen;
namespace cy = cyclegen::cycle;
namespace s2s = cyclegen::seq2seq;
namespace fs = std::filesystem;
using cyclegen::testing::constructed_traces;

namespace {

// Frozen stand-in that returns its input without the task prefix.
class CopyModel final : public s2s::Seq2SeqModel {
 public:
  explicit CopyModel(s2s::Direction d) : dir_(d) {}
  s2s::Direction direction() const override { return dir_; }
  s2s::TrainReport train_teacher_forcing(std::span<const s2s::TextPair>, const s2s::TrainConfig&) override {
    if (frozen_) throw cg::Error(cg::ErrorCode::kFrozenModel, "frozen");
    ++version_;
    return {{0.0}, 1, {}};
  }
  s2s::GenerationResult generate_detailed(const std::string& input, const s2s::DecodeConfig&) const override {
    s2s::GenerationResult r;
    r.text = input;
    for (auto p : cg::codec::kPrefixes) {
      if (!p.text.empty() && r.text.rfind(p.text, 0) == 0) r.text = r.text.substr(p.text.size());
    }
    return r;
  }
  double evaluate_loss(std::span<const s2s::TextPair>) const override { return 0.0; }
  void freeze() override {
    frozen_ = true;
    frozen_sum_ = checksum();
  }
  void unfreeze() override { frozen_ = false; }
  bool frozen() const override { return frozen_; }
  std::uint64_t checksum() const override { return 1000 + version_; }
  std::uint64_t frozen_checksum() const override { return frozen_sum_; }
  void save(const fs::path&) const override {}
  std::unique_ptr<s2s::Seq2SeqModel> clone() const override { return std::make_unique<CopyModel>(*this); }

 private:
  s2s::Direction dir_;
  bool frozen_ = false;
  std::uint64_t version_ = 0;
  std::uint64_t frozen_sum_ = 0;
};

struct Tiny {
  cg::corpus::Dataset ds;
  s2s::Vocab vocab;
  s2s::ModelConfig mc;

  Tiny() {
    cg::toy::GrammarConfig g;
    g.samples = 60;
    g.dev_fraction = 0.1;
    g.test_fraction = 0.1;
    ds = cg::toy::generate(g, 3);
    vocab = cy::build_vocab(ds.split(cg::corpus::Split::kTrain));
    mc.d_model = 16;
    mc.n_heads = 2;
    mc.d_ff = 32;
    mc.encoder_layers = 1;
    mc.decoder_layers = 1;
    mc.max_positions = 128;
  }

  const std::vector<cg::corpus::Sample>& train() const { return ds.split(cg::corpus::Split::kTrain); }

  cy::RunInputs inputs() const {
    return {train(), ds.split(cg::corpus::Split::kDev), ds.split(cg::corpus::Split::kTest), std::nullopt};
  }

  s2s::TransformerModel model(s2s::Direction d, std::uint64_t seed = 1) const { return {vocab, mc, d, seed}; }

  static cy::CycleConfig config() {
    cy::CycleConfig c;
    c.max_epochs = 3;
    c.seeds = {1};
    c.low_resource_size = 10;
    c.pre_cycle_epochs = 1;
    c.pretrain_epochs = 1;
    c.train.learning_rate = 1e-3;
    c.train.effective_batch_size = 8;
    s2s::DecodeConfig g;
    g.beams = 1;
    g.min_len = 1;
    g.max_len = 24;
    c.decode = c.cycle_decode = c.dev_decode = g;
    return c;
  }
};

const Tiny& tiny() {
  static const Tiny t;
  return t;
}

std::vector<cg::corpus::TripleSet> data_of(const std::vector<cg::corpus::Sample>& v) {
  std::vector<cg::corpus::TripleSet> out;
  for (const auto& s : v) out.push_back(s.triples);
  return out;
}

std::vector<std::string> text_of(const std::vector<cg::corpus::Sample>& v) {
  std::vector<std::string> out;
  for (const auto& s : v) out.push_back(s.references.front());
  return out;
}

// Record without wall-clock timings.
std::string stable(const cy::RunRecord& r) {
  auto j = r.to_json();
  for (auto& e : j["epochs"]) e.erase("seconds");
  return j.dump();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cyclegen_trainer_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

// ---------------------------------------------------------------- early stopping


TEST(EarlyStopping, TwentyConstructedTraces) {
  const auto traces = constructed_traces();
  ASSERT_EQ(traces.size(), 20u);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& tr = traces[i];
    EXPECT_EQ(cy::stop_epoch(tr.scores, 0.0005, 5, tr.max_epochs), tr.expected_stop) << "trace " << i;
    cy::EarlyStopping es(0.0005, 5);
    const int n = std::min<int>(tr.max_epochs, static_cast<int>(tr.scores.size()));
    for (int e = 0; e < n && !es.update(tr.scores[static_cast<std::size_t>(e)]); ++e) {
    }
    EXPECT_EQ(es.best_evaluation(), tr.expected_best) << "trace " << i;
    // The selected evaluation is never below anything observed so far.
    for (int e = 0; e < es.evaluations(); ++e) EXPECT_GE(es.best_score(), tr.scores[static_cast<std::size_t>(e)]);
  }
}

TEST(EarlyStopping, RejectsBadSettingsAndRoundTrips) {
  EXPECT_THROW(cy::EarlyStopping(0.0005, 0), cg::Error);
  EXPECT_THROW(cy::EarlyStopping(-1.0, 5), cg::Error);
  cy::EarlyStopping es(0.0005, 5);
  for (double s : {0.2, 0.3, 0.29, 0.28}) es.update(s);
  const auto back = cy::EarlyStopping::from_json(es.to_json());
  EXPECT_EQ(back.evaluations(), 4);
  EXPECT_EQ(back.bad_evaluations(), 2);
  EXPECT_EQ(back.best_evaluation(), 2);
  EXPECT_DOUBLE_EQ(back.best_score(), 0.3);
}

// ---------------------------------------------------------------- strategies / config

TEST(Strategy, NamesRoundTrip) {
  for (auto s : cy::kAllStrategies) EXPECT_EQ(cy::parse_strategy(cy::strategy_name(s)), s);
  EXPECT_FALSE(cy::parse_strategy("cycle"));
  EXPECT_TRUE(cy::is_cycle(cy::Strategy::kUnsupervisedCycle));
  EXPECT_FALSE(cy::is_cycle(cy::Strategy::kLowResourceFt));
}

TEST(CycleConfig, DefaultsAndJson) {
  cy::CycleConfig c;
  EXPECT_EQ(c.max_epochs, 50);
  EXPECT_DOUBLE_EQ(c.early_stop_delta, 0.0005);
  EXPECT_EQ(c.patience, 5);
  EXPECT_EQ(c.seeds.size(), 5u);
  EXPECT_EQ(c.low_resource_size, 100u);
  EXPECT_TRUE(c.tdt_first);
  EXPECT_FALSE(c.filter_malformed);
  c.patience = 7;
  c.seeds = {9, 10};
  c.decode.beams = 2;
  const auto back = cy::CycleConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.patience = 0;
  EXPECT_THROW(c.validate(), cg::Error);
}

TEST(Pairs, ForwardAndReverseUsePrefixes) {
  cg::corpus::Sample s;
  s.id = "x";
  s.triples = {{"Alan Bean", "occupation", "test pilot"}};
  s.references = {"Alan Bean was a test pilot .", "Alan Bean flew planes ."};
  const auto f = cy::forward_pairs({s});
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].input, "Generate in English: [S] Alan Bean [P] occupation [O] test pilot");
  EXPECT_EQ(f[1].target, "Alan Bean flew planes .");
  const auto r = cy::reverse_pairs({s}, false);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].input, "Extract Triples: Alan Bean was a test pilot .");
  EXPECT_EQ(r[0].target, "[S] Alan Bean [P] occupation [O] test pilot");
}

// ---------------------------------------------------------------- freeze contract

TEST(FreezeContract, RoleErrors) {
  const auto& t = tiny();
  auto f = t.model(s2s::Direction::kForward);
  auto r = t.model(s2s::Direction::kReverse);
  const auto data = data_of(t.train());
  const auto texts = text_of(t.train());
  const auto cfg = Tiny::config();
  // F not frozen
  EXPECT_THROW(
      {
        try {
          cy::run_dtd_epoch(f, r, data, cfg.cycle_decode, cfg.train);
        } catch (const cg::Error& e) {
          EXPECT_EQ(e.code(), cg::ErrorCode::kNotFrozen);
          throw;
        }
      },
      cg::Error);
  f.freeze();
  r.freeze();
  EXPECT_THROW(
      {
        try {
          cy::run_dtd_epoch(f, r, data, cfg.cycle_decode, cfg.train);
        } catch (const cg::Error& e) {
          EXPECT_EQ(e.code(), cg::ErrorCode::kFrozenModel);
          throw;
        }
      },
      cg::Error);
  r.unfreeze();
  EXPECT_THROW(
      {
        try {
          cy::run_dtd_epoch(f, r, {}, cfg.cycle_decode, cfg.train);
        } catch (const cg::Error& e) {
          EXPECT_EQ(e.code(), cg::ErrorCode::kEmptyCorpus);
          throw;
        }
      },
      cg::Error);
  // TDT mirrors it: R generates, F trains.
  EXPECT_THROW(cy::run_tdt_epoch(r, f, texts, cfg.cycle_decode, cfg.train), cg::Error);
  r.freeze();
  f.unfreeze();
  EXPECT_THROW(cy::run_tdt_epoch(r, f, {}, cfg.cycle_decode, cfg.train), cg::Error);
}

TEST(FreezeContract, ChecksumsOverTenCycleEpochs) {
  const auto& t = tiny();
  auto f = t.model(s2s::Direction::kForward, 11);
  auto r = t.model(s2s::Direction::kReverse, 12);
  const auto data = data_of(t.train());
  const auto texts = text_of(t.train());
  const auto cfg = Tiny::config();
  std::vector<cy::FreezeEvent> log;
  for (int epoch = 0; epoch < 10; ++epoch) {
    r.freeze();
    f.unfreeze();
    log.push_back(cy::run_tdt_epoch(r, f, texts, cfg.cycle_decode, cfg.train).event);
    f.freeze();
    r.unfreeze();
    log.push_back(cy::run_dtd_epoch(f, r, data, cfg.cycle_decode, cfg.train).event);
  }
  ASSERT_EQ(log.size(), 20u);
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& e = log[i];
    EXPECT_EQ(e.phase, i % 2 == 0 ? "TDT" : "DTD");
    EXPECT_EQ(e.frozen_before, e.frozen_after) << "event " << i;
    EXPECT_NE(e.trained_before, e.trained_after) << "event " << i;
    EXPECT_TRUE(e.frozen_flag);
    EXPECT_TRUE(e.trained_flag);
    // The frozen model of this phase is exactly what the previous phase left.
    if (i > 0) {
      EXPECT_EQ(e.frozen_before, log[i - 1].trained_after);
    }
  }
}

TEST(CycleEpochs, ReverseLearnsFromCopyForward) {
  const auto& t = tiny();
  CopyModel f(s2s::Direction::kForward);
  f.freeze();
  auto r = t.model(s2s::Direction::kReverse, 5);
  const auto data = data_of(t.train());
  // Held-out slice: what R would see from the copy model on dev data.
  std::vector<s2s::TextPair> held;
  for (const auto& s : t.ds.split(cg::corpus::Split::kDev)) {
    held.push_back({cy::reverse_input(cy::data_target(s.triples)), cy::data_target(s.triples)});
  }
  auto cfg = Tiny::config();
  double prev = r.evaluate_loss(held);
  for (int epoch = 0; epoch < 3; ++epoch) {
    const auto res = cy::run_dtd_epoch(f, r, data, cfg.cycle_decode, cfg.train);
    EXPECT_EQ(res.pairs_used, data.size());
    EXPECT_EQ(res.event.frozen_before, res.event.frozen_after);
    const double now = r.evaluate_loss(held);
    EXPECT_LT(now, prev) << "epoch " << epoch;
    prev = now;
  }
}

TEST(CycleEpochs, ForwardLearnsFromCopyReverse) {
  const auto& t = tiny();
  CopyModel r(s2s::Direction::kReverse);
  r.freeze();
  auto f = t.model(s2s::Direction::kForward, 6);
  const auto texts = text_of(t.train());
  std::vector<s2s::TextPair> held;
  for (const auto& s : t.ds.split(cg::corpus::Split::kDev)) {
    held.push_back({std::string(cg::codec::prefix_text(cg::codec::TaskPrefix::kDataToText)) + s.references.front(),
                    s.references.front()});
  }
  auto cfg = Tiny::config();
  double prev = f.evaluate_loss(held);
  for (int epoch = 0; epoch < 3; ++epoch) {
    cy::run_tdt_epoch(r, f, texts, cfg.cycle_decode, cfg.train);
    const double now = f.evaluate_loss(held);
    EXPECT_LT(now, prev) << "epoch " << epoch;
    prev = now;
  }
}

TEST(CycleEpochs, MalformedExtractionsPassThroughUnlessFiltered) {
  const auto& t = tiny();
  CopyModel r(s2s::Direction::kReverse);  // "extracts" plain text: no tags at all
  r.freeze();
  CopyModel f(s2s::Direction::kForward);
  const auto texts = text_of(t.train());
  const auto cfg = Tiny::config();
  const auto verbatim = cy::run_tdt_epoch(r, f, texts, cfg.cycle_decode, cfg.train);
  EXPECT_EQ(verbatim.pairs_used, texts.size());
  EXPECT_EQ(verbatim.pairs_filtered, 0u);
  cy::PhaseOptions po;
  po.filter_malformed = true;
  const auto filtered = cy::run_tdt_epoch(r, f, texts, cfg.cycle_decode, cfg.train, po);
  EXPECT_EQ(filtered.pairs_filtered, texts.size());
  EXPECT_EQ(filtered.pairs_used, 0u);
}

TEST(CycleEpochs, ParallelGenerationKeepsOrder) {
  const auto& t = tiny();
  auto f = t.model(s2s::Direction::kForward, 2);
  f.freeze();
  std::vector<std::string> inputs;
  for (const auto& s : t.train()) inputs.push_back(cy::forward_input(s.triples));
  const auto cfg = Tiny::config();
  EXPECT_EQ(cy::generate_all(f, inputs, cfg.cycle_decode, 1), cy::generate_all(f, inputs, cfg.cycle_decode, 3));
}

// ---------------------------------------------------------------- pre-cycle fine-tuning

TEST(PreCycle, ChangesBothModelsDeterministically) {
  const auto& t = tiny();
  const auto paired = cg::corpus::sample_low_resource(t.train(), 10, 4);
  auto cfg = Tiny::config();
  cfg.train.max_epochs = 1;
  auto run = [&] {
    auto f = t.model(s2s::Direction::kForward, 1);
    auto r = t.model(s2s::Direction::kReverse, 2);
    const auto f0 = f.checksum(), r0 = r.checksum();
    cy::pre_cycle_finetune(f, r, paired, cfg.train);
    EXPECT_NE(f.checksum(), f0);
    EXPECT_NE(r.checksum(), r0);
    return std::pair{f.checksum(), r.checksum()};
  };
  EXPECT_EQ(run(), run());
  auto f = t.model(s2s::Direction::kForward);
  auto r = t.model(s2s::Direction::kReverse);
  try {
    cy::pre_cycle_finetune(f, r, {}, cfg.train);
    FAIL() << "expected EmptyBatch";
  } catch (const cg::Error& e) {
    EXPECT_EQ(e.code(), cg::ErrorCode::kEmptyBatch);
  }
}

// ---------------------------------------------------------------- seed runs

TEST(SeedRun, CycleRecordIsConsistent) {
  const auto& t = tiny();
  const auto in = t.inputs();
  auto cfg = Tiny::config();
  const auto rec = cy::SeedRun(cy::Strategy::kLowResourceCycle, in, cfg, 1, cy::transformer_factory(t.vocab, t.mc)).run();
  ASSERT_EQ(rec.epochs.size(), 3u);
  double best = -1;
  int best_epoch = 0;
  for (const auto& e : rec.epochs) {
    ASSERT_EQ(e.events.size(), 2u);
    EXPECT_EQ(e.events[0].phase, "TDT");
    EXPECT_EQ(e.events[1].phase, "DTD");
    for (const auto& ev : e.events) EXPECT_EQ(ev.frozen_before, ev.frozen_after);
    if (e.dev_meteor > best) {
      best = e.dev_meteor;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(rec.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(rec.best_dev_meteor, best);
  EXPECT_TRUE(rec.completed);
  EXPECT_EQ(rec.generations.size(), in.test.size());
  for (const auto& c : {"ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR", "BLEU", "PARENT"}) EXPECT_TRUE(rec.test.count(c)) << c;
  const auto back = cy::RunRecord::from_json(rec.to_json());
  EXPECT_EQ(back.to_json(), rec.to_json());
}

TEST(SeedRun, DtdFirstOrderIsConfigurable) {
  const auto& t = tiny();
  const auto in = t.inputs();
  auto cfg = Tiny::config();
  cfg.max_epochs = 1;
  cfg.tdt_first = false;
  const auto rec =
      cy::SeedRun(cy::Strategy::kUnsupervisedCycle, in, cfg, 2, cy::transformer_factory(t.vocab, t.mc)).run();
  ASSERT_EQ(rec.epochs.front().events.size(), 2u);
  EXPECT_EQ(rec.epochs.front().events[0].phase, "DTD");
}

TEST(SeedRun, DeterministicPerSeed) {
  const auto& t = tiny();
  const auto in = t.inputs();
  auto cfg = Tiny::config();
  cfg.max_epochs = 2;
  const auto fac = cy::transformer_factory(t.vocab, t.mc);
  const auto a = cy::SeedRun(cy::Strategy::kLowResourceFt, in, cfg, 3, fac).run();
  const auto b = cy::SeedRun(cy::Strategy::kLowResourceFt, in, cfg, 3, fac).run();
  const auto c = cy::SeedRun(cy::Strategy::kLowResourceFt, in, cfg, 4, fac).run();
  EXPECT_EQ(stable(a), stable(b));
  EXPECT_NE(a.epochs.front().forward_loss, c.epochs.front().forward_loss);
}

TEST(SeedRun, ResumeMatchesUninterruptedRun) {
  const auto& t = tiny();
  const auto in = t.inputs();
  auto cfg = Tiny::config();
  cfg.max_epochs = 3;
  const auto fac = cy::transformer_factory(t.vocab, t.mc);
  const auto straight = cy::SeedRun(cy::Strategy::kLowResourceCycle, in, cfg, 5, fac).run();

  const fs::path dir = scratch("resume");
  cy::RunContext first{dir, 1, {}};
  const auto partial = cy::SeedRun(cy::Strategy::kLowResourceCycle, in, cfg, 5, fac, first).run();
  EXPECT_FALSE(partial.completed);
  EXPECT_EQ(partial.epochs.size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "state.json"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "last_forward" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "last_reverse" / "manifest.json"));

  cy::RunContext second{dir, -1, {}};
  const auto resumed = cy::SeedRun(cy::Strategy::kLowResourceCycle, in, cfg, 5, fac, second).run();
  EXPECT_EQ(stable(resumed), stable(straight));
  EXPECT_TRUE(fs::exists(dir / "record.json"));
  EXPECT_TRUE(fs::exists(dir / "test_generations.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "epochs.jsonl"));
  // A completed run is read back, not retrained.
  const auto again = cy::SeedRun(cy::Strategy::kLowResourceCycle, in, cfg, 5, fac, second).run();
  EXPECT_EQ(stable(again), stable(straight));
  fs::remove_all(dir);
}

TEST(SeedRun, MissingPairedSubsetAndData) {
  const auto& t = tiny();
  auto in = t.inputs();
  auto cfg = Tiny::config();
  cfg.low_resource_size = 0;
  const auto fac = cy::transformer_factory(t.vocab, t.mc);
  try {
    cy::SeedRun(cy::Strategy::kLowResourceCycle, in, cfg, 1, fac).run();
    FAIL() << "expected MissingPairedSubset";
  } catch (const cg::Error& e) {
    EXPECT_EQ(e.code(), cg::ErrorCode::kMissingPairedSubset);
  }
  cfg = Tiny::config();
  cy::RunInputs empty{{}, in.dev, in.test, std::nullopt};
  try {
    cy::SeedRun(cy::Strategy::kFullySupervised, empty, cfg, 1, fac).run();
    FAIL() << "expected MissingData";
  } catch (const cg::Error& e) {
    EXPECT_EQ(e.code(), cg::ErrorCode::kMissingData);
  }
  EXPECT_THROW(cy::cycle_train("x", cy::Strategy::kLowResourceFt, in, cfg, fac), cg::Error);
  EXPECT_THROW(cy::run_baseline("x", cy::Strategy::kUnsupervisedCycle, in, cfg, fac), cg::Error);
}

TEST(SeedRun, PretrainVariantDiffersOnlyByPretraining) {
  const auto& t = tiny();
  const auto in = t.inputs();
  auto cfg = Tiny::config();
  cfg.max_epochs = 2;
  const auto fac = cy::transformer_factory(t.vocab, t.mc);
  const auto ft = cy::SeedRun(cy::Strategy::kLowResourceFt, in, cfg, 6, fac).run();
  auto no_pre = cfg;
  no_pre.pretrain_epochs = 0;
  const auto same = cy::SeedRun(cy::Strategy::kLowResourceFtPlusPretrain, in, no_pre, 6, fac).run();
  const auto pre = cy::SeedRun(cy::Strategy::kLowResourceFtPlusPretrain, in, cfg, 6, fac).run();
  EXPECT_EQ(same.generations, ft.generations);
  EXPECT_EQ(same.test, ft.test);
  EXPECT_NE(pre.epochs.front().forward_loss, ft.epochs.front().forward_loss);
}

TEST(Experiment, FiveSeedsGiveFiveRowsAndExactAggregates) {
  const auto& t = tiny();
  const auto in = t.inputs();
  auto cfg = Tiny::config();
  cfg.max_epochs = 1;
  cfg.seeds = {1, 2, 3, 4, 5};
  const auto ex = cy::run_baseline("lr-ft", cy::Strategy::kLowResourceFt, in, cfg, cy::transformer_factory(t.vocab, t.mc));
  ASSERT_EQ(ex.runs.size(), 5u);
  ASSERT_EQ(ex.report.runs.size(), 5u);
  for (const auto& col : ex.report.columns) {
    double mean = 0;
    for (const auto& r : ex.runs) mean += r.test.at(col);
    mean /= 5;
    double var = 0;
    for (const auto& r : ex.runs) var += (r.test.at(col) - mean) * (r.test.at(col) - mean);
    var /= 5;
    EXPECT_NEAR(ex.report.mean.at(col), mean, 1e-9) << col;
    EXPECT_NEAR(ex.report.variance.at(col), var, 1e-9) << col;
  }
}

TEST(Experiment, OverlapHasOneRowPerLevelAndSharedSeeds) {
  const auto& t = tiny();
  const auto in = t.inputs();
  auto cfg = Tiny::config();
  cfg.max_epochs = 1;
  cfg.seeds = {7, 8};
  const fs::path root = scratch("overlap");
  const auto rows = cy::run_overlap_experiment("ov", in, {0, 100}, cfg, cy::transformer_factory(t.vocab, t.mc), root);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].report.system, "0%");
  EXPECT_EQ(rows[1].report.system, "100%");
  for (const auto& row : rows) {
    ASSERT_EQ(row.runs.size(), 2u);
    EXPECT_EQ(row.runs[0].seed, 7u);
    EXPECT_EQ(row.runs[1].seed, 8u);
  }
  EXPECT_TRUE(fs::exists(root / "ov" / "overlap100" / "seed8" / "record.json"));
  EXPECT_THROW(cy::run_overlap_experiment("ov", in, {30}, cfg, cy::transformer_factory(t.vocab, t.mc)), cg::Error);
  fs::remove_all(root);
}

TEST(Backbone, PretrainedFactoryGivesFreshTrainingState) {
  const auto& t = tiny();
  auto base = std::make_shared<s2s::TransformerModel>(t.model(s2s::Direction::kForward, 9));
  auto cfg = Tiny::config();
  cfg.train.max_epochs = 1;
  base->train_teacher_forcing(cy::bidirectional_pairs(t.train()), cfg.train);
  const auto fac = cy::pretrained_factory(base);
  auto a = fac.create(s2s::Direction::kReverse, 3);
  EXPECT_EQ(a->checksum(), base->checksum());
  EXPECT_EQ(a->direction(), s2s::Direction::kReverse);
  EXPECT_FALSE(a->frozen());
  // Same weights reloaded from disk train identically to the in-memory copy.
  const fs::path dir = scratch("backbone");
  base->save(dir);
  auto b = cy::pretrained_factory(std::make_shared<s2s::TransformerModel>(s2s::TransformerModel::load(dir)))
               .create(s2s::Direction::kReverse, 3);
  const auto pairs = cy::reverse_pairs(t.train());
  a->train_teacher_forcing(pairs, cfg.train);
  b->train_teacher_forcing(pairs, cfg.train);
  EXPECT_EQ(a->checksum(), b->checksum());
  fs::remove_all(dir);
}
