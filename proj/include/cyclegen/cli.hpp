#pragma once

// The cyclegen command line: one binary, one subcommand per pipeline step.
// Exit codes: 0 ok, 2 usage or validation error, 3 runtime failure.
// Settings come from --config (JSON) first, then explicit flags.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cyclegen/corpus.hpp"
#include "cyclegen/cycle_trainer.hpp"
#include "cyclegen/error.hpp"
#include "cyclegen/humaneval.hpp"
#include "cyclegen/metrics/report.hpp"
#include "cyclegen/toy_experiment.hpp"
#include "cyclegen/toy_grammar.hpp"
#ifndef CYCLEGEN_NO_ANNOTATION_SERVICE
// last: <resolv.h> (via httplib) defines _res, which breaks Eigen
#include "cyclegen/annotation_service.hpp"
#endif

namespace cyclegen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr const char* kRunRootEnv = "CYCLEGEN_RUN_ROOT";

/// Errors caused by the inputs rather than by the machine.
inline bool is_validation(ErrorCode c) {
  switch (c) {
    case ErrorCode::kIo:
    case ErrorCode::kCheckpoint:
    case ErrorCode::kFrozenModel:
    case ErrorCode::kNotFrozen:
    case ErrorCode::kVersionConflict:
      return false;
    default:
      return true;
  }
}

inline std::string strategy_list() {
  std::string s;
  for (auto st : cycle::kAllStrategies) s += (s.empty() ? "" : ", ") + cycle::strategy_name(st);
  return s;
}

/// Everything a training command needs; written verbatim to the run dir.
struct ExperimentConfig {
  std::string data;      // dataset jsonl with splits
  std::string unpaired;  // corpus prefix for cycle strategies (optional)
  std::string backbone;  // pre-trained checkpoint dir (optional)
  std::string strategy;
  std::string name;
  std::vector<int> levels = {0, 50, 100};
  seq2seq::ModelConfig model;
  cycle::CycleConfig cycle;

  json to_json() const {
    return {{"data", data},   {"unpaired", unpaired},         {"backbone", backbone},
            {"strategy", strategy}, {"name", name},           {"levels", levels},
            {"model", model.to_json()}, {"cycle", cycle.to_json()}};
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    c.data = j.value("data", c.data);
    c.unpaired = j.value("unpaired", c.unpaired);
    c.backbone = j.value("backbone", c.backbone);
    c.strategy = j.value("strategy", c.strategy);
    c.name = j.value("name", c.name);
    c.levels = j.value("levels", c.levels);
    if (j.contains("model")) c.model = seq2seq::ModelConfig::from_json(j["model"]);
    if (j.contains("cycle")) c.cycle = cycle::CycleConfig::from_json(j["cycle"]);
    return c;
  }
};

namespace detail {

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

extern "C" inline void on_signal(int) { stop_flag().store(true); }

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingData, "cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, path + ": " + e.what());
  }
}

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  out << s;
}

inline corpus::Dataset load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kMissingData, "no such file: " + path);
  return corpus::load_dataset(path, corpus::Format::kWebNlgJsonl);
}

inline std::string default_root() {
  const char* env = std::getenv(kRunRootEnv);
  return env && *env ? env : "runs";
}

// Flags shared by the training commands. Values land in `flags`; only the
// ones given on the command line override the config file.
struct TrainFlags {
  std::string config;
  std::string out;
  int halt_after = -1;
  ExperimentConfig flags;
  int seeds = 0;
  std::string levels;
  std::map<std::string, CLI::Option*> opt;

  void add(CLI::App* app, bool with_strategy) {
    auto& c = flags;
    app->add_option("--config", config, "JSON config file (flags override it)")->check(CLI::ExistingFile);
    opt["data"] = app->add_option("--data", c.data, "dataset jsonl (with train/dev/test splits)");
    if (with_strategy) {
      opt["strategy"] = app->add_option("--strategy", c.strategy, "training strategy: one of " + strategy_list());
    }
    opt["unpaired"] = app->add_option("--unpaired", c.unpaired, "prefix of unpaired corpora (<p>.data.jsonl, <p>.text.jsonl)");
    opt["backbone"] = app->add_option("--backbone", c.backbone, "pre-trained checkpoint dir to start from");
    opt["name"] = app->add_option("--name", c.name, "experiment name (run dir under the root)");
    app->add_option("--out", out, std::string("run root (default $") + kRunRootEnv + " or ./runs)");
    opt["seeds"] = app->add_option("--seeds", seeds, "number of seeds (1..N)")->check(CLI::PositiveNumber);
    opt["epochs"] = app->add_option("--epochs", c.cycle.max_epochs, "max epochs");
    opt["patience"] = app->add_option("--patience", c.cycle.patience, "early stopping patience");
    opt["delta"] = app->add_option("--delta", c.cycle.early_stop_delta, "early stopping delta (dev METEOR, 0..1)");
    opt["lr"] = app->add_option("--lr", c.cycle.train.learning_rate, "learning rate");
    opt["batch"] = app->add_option("--batch-size", c.cycle.train.effective_batch_size, "effective batch size");
    opt["lrsize"] = app->add_option("--low-resource-size", c.cycle.low_resource_size, "paired subset size");
    opt["pce"] = app->add_option("--pre-cycle-epochs", c.cycle.pre_cycle_epochs, "fine-tuning epochs before cycling");
    opt["pte"] = app->add_option("--pretrain-epochs", c.cycle.pretrain_epochs, "span-mask pre-training epochs");
    opt["dtd"] = app->add_flag("--dtd-first", "run DTD before TDT in every epoch");
    opt["filter"] = app->add_flag("--filter-malformed", c.cycle.filter_malformed, "drop badly formed TDT pairs");
    opt["devlimit"] = app->add_option("--dev-limit", c.cycle.dev_limit, "dev samples used for selection (0: all)");
    opt["workers"] = app->add_option("--workers", c.cycle.workers, "generation threads");
    opt["beams"] = app->add_option("--beams", c.cycle.decode.beams, "beam width for test generation");
    opt["maxlen"] = app->add_option("--max-len", c.cycle.decode.max_len, "max generated tokens");
    opt["d"] = app->add_option("--d-model", c.model.d_model, "model width");
    opt["heads"] = app->add_option("--heads", c.model.n_heads, "attention heads");
    opt["ff"] = app->add_option("--d-ff", c.model.d_ff, "feed-forward width");
    opt["layers"] = app->add_option("--layers", c.model.encoder_layers, "encoder and decoder layers");
    opt["levels"] = app->add_option("--levels", levels, "overlap levels, e.g. 0,50,100");
    app->add_option("--halt-after-epochs", halt_after)->group("");  // testing hook
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : ExperimentConfig::from_json(read_json_file(config));
    auto given = [&](const char* k) { return opt.count(k) && opt.at(k)->count() > 0; };
    const auto& f = flags;
    if (given("data")) c.data = f.data;
    if (given("strategy")) c.strategy = f.strategy;
    if (given("unpaired")) c.unpaired = f.unpaired;
    if (given("backbone")) c.backbone = f.backbone;
    if (given("name")) c.name = f.name;
    if (given("seeds")) {
      c.cycle.seeds.clear();
      for (int s = 1; s <= seeds; ++s) c.cycle.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (given("epochs")) c.cycle.max_epochs = f.cycle.max_epochs;
    if (given("patience")) c.cycle.patience = f.cycle.patience;
    if (given("delta")) c.cycle.early_stop_delta = f.cycle.early_stop_delta;
    if (given("lr")) c.cycle.train.learning_rate = f.cycle.train.learning_rate;
    if (given("batch")) c.cycle.train.effective_batch_size = f.cycle.train.effective_batch_size;
    if (given("lrsize")) c.cycle.low_resource_size = f.cycle.low_resource_size;
    if (given("pce")) c.cycle.pre_cycle_epochs = f.cycle.pre_cycle_epochs;
    if (given("pte")) c.cycle.pretrain_epochs = f.cycle.pretrain_epochs;
    if (given("dtd")) c.cycle.tdt_first = false;
    if (given("filter")) c.cycle.filter_malformed = f.cycle.filter_malformed;
    if (given("devlimit")) c.cycle.dev_limit = f.cycle.dev_limit;
    if (given("workers")) c.cycle.workers = f.cycle.workers;
    if (given("beams")) c.cycle.decode.beams = f.cycle.decode.beams;
    if (given("maxlen")) {
      c.cycle.decode.max_len = c.cycle.cycle_decode.max_len = c.cycle.dev_decode.max_len = f.cycle.decode.max_len;
    }
    if (given("d")) c.model.d_model = f.model.d_model;
    if (given("heads")) c.model.n_heads = f.model.n_heads;
    if (given("ff")) c.model.d_ff = f.model.d_ff;
    if (given("layers")) c.model.encoder_layers = c.model.decoder_layers = f.model.encoder_layers;
    if (given("levels")) {
      c.levels.clear();
      std::stringstream ss(levels);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          c.levels.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw Error(ErrorCode::kInvalidConfig, "bad overlap level '" + item + "'");
        }
      }
    }
    if (c.data.empty()) throw Error(ErrorCode::kInvalidConfig, "--data is required");
    c.model.validate();
    c.cycle.validate();
    return c;
  }
};

inline std::vector<corpus::Sample> as_samples(const corpus::UnpairedCorpora& u) {
  // token carriers for the vocabulary only
  std::vector<corpus::Sample> out;
  const std::size_t n = std::max(u.data.size(), u.text.size());
  if (u.data.empty() || u.text.empty()) return out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"", u.data[i % u.data.size()], {u.text[i % u.text.size()]}, std::nullopt});
  }
  return out;
}

struct Prepared {
  cycle::RunInputs inputs;
  cycle::ModelFactory factory;
};

inline Prepared prepare_run(const ExperimentConfig& c) {
  Prepared p;
  const auto ds = load_dataset(c.data);
  p.inputs.train = ds.split(corpus::Split::kTrain);
  p.inputs.dev = ds.split(corpus::Split::kDev);
  p.inputs.test = ds.split(corpus::Split::kTest);
  if (p.inputs.test.empty()) throw Error(ErrorCode::kEmptySplit, c.data + " has no test split");
  if (!c.unpaired.empty()) p.inputs.unpaired = corpus::read_unpaired(c.unpaired);
  if (!c.backbone.empty()) {
    if (!fs::exists(fs::path(c.backbone) / "manifest.json")) {
      throw Error(ErrorCode::kMissingData, "no checkpoint in " + c.backbone);
    }
    p.factory = cycle::pretrained_factory(
        std::make_shared<const seq2seq::TransformerModel>(seq2seq::TransformerModel::load(c.backbone)));
  } else {
    auto extra = p.inputs.unpaired ? as_samples(*p.inputs.unpaired) : std::vector<corpus::Sample>{};
    p.factory = cycle::transformer_factory(cycle::build_vocab(p.inputs.train, 1, extra), c.model);
  }
  return p;
}

inline std::string experiment_name(const ExperimentConfig& c) { return c.name.empty() ? c.strategy : c.name; }

inline void write_summary(const fs::path& dir, const std::vector<metrics::MetricReport>& reports, std::ostream& out) {
  write_text(dir / "summary.csv", metrics::render_csv(reports));
  const std::string table = metrics::render_table(reports);
  write_text(dir / "summary.txt", table);
  out << table;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline int cmd_train(const detail::TrainFlags& tf, bool want_cycle, std::ostream& out, std::ostream& err) {
  const auto c = tf.resolve();
  const auto st = cycle::parse_strategy(c.strategy);
  if (!st) throw Error(ErrorCode::kInvalidConfig, "unknown strategy '" + c.strategy + "' (one of " + strategy_list() + ")");
  if (cycle::is_cycle(*st) != want_cycle) {
    throw Error(ErrorCode::kInvalidConfig, c.strategy + (want_cycle ? " is not a cycle strategy; use train-baseline"
                                                                     : " is a cycle strategy; use cycle-train"));
  }
  const fs::path root = tf.out.empty() ? detail::default_root() : tf.out;
  const std::string name = detail::experiment_name(c);
  fs::create_directories(root / name);
  detail::write_text(root / name / "experiment.json", c.to_json().dump(2) + "\n");
  auto p = detail::prepare_run(c);
  auto log = [&err](const std::string& s) { err << s << "\n"; };
  std::vector<cycle::RunRecord> runs;
  for (std::uint64_t seed : c.cycle.seeds) {
    cycle::RunContext ctx{root / name / ("seed" + std::to_string(seed)), tf.halt_after, log};
    auto r = cycle::SeedRun(*st, p.inputs, c.cycle, seed, p.factory, ctx).run();
    if (!r.completed) {
      err << "halted; rerun the same command to resume\n";
      return kExitOk;
    }
    runs.push_back(std::move(r));
  }
  const auto ex = cycle::summarize(name, c.strategy, std::move(runs));
  detail::write_summary(root / name, {ex.report}, out);
  return kExitOk;
}

inline int cmd_overlap(const detail::TrainFlags& tf, std::ostream& out, std::ostream& err) {
  auto c = tf.resolve();
  c.strategy = cycle::strategy_name(cycle::Strategy::kUnsupervisedCycle);
  for (int l : c.levels) {
    if (!corpus::valid_overlap_level(l)) throw Error(ErrorCode::kInvalidConfig, "bad overlap level " + std::to_string(l));
  }
  const fs::path root = tf.out.empty() ? detail::default_root() : tf.out;
  const std::string name = c.name.empty() ? "overlap" : c.name;
  fs::create_directories(root / name);
  detail::write_text(root / name / "experiment.json", c.to_json().dump(2) + "\n");
  auto p = detail::prepare_run(c);
  auto rows = cycle::run_overlap_experiment(name, p.inputs, c.levels, c.cycle, p.factory, root,
                                            [&err](const std::string& s) { err << s << "\n"; });
  std::vector<metrics::MetricReport> reps;
  for (const auto& r : rows) reps.push_back(r.report);
  detail::write_summary(root / name, reps, out);
  return kExitOk;
}

struct PrepareArgs {
  std::string input, format = "webnlg", out;
  bool clean = false, unpaired = false;
  std::size_t low_resource = 0;
  std::vector<int> overlap;
  std::uint64_t seed = 1;
};

inline int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  if (a.format != "webnlg" && a.format != "dart") throw Error(ErrorCode::kInvalidConfig, "format must be webnlg or dart");
  if (!fs::exists(a.input)) throw Error(ErrorCode::kMissingData, "no such file: " + a.input);
  corpus::LoadReport loaded;
  auto ds = corpus::load_dataset(a.input, a.format == "dart" ? corpus::Format::kDartJsonl : corpus::Format::kWebNlgJsonl,
                                 {}, &loaded);
  json summary = {{"input", a.input}, {"seed", a.seed}, {"rng", std::string(kRngAlgorithm)},
                  {"skipped_lines", loaded.issues.size()}};
  if (a.clean) {
    corpus::DropReport rep;
    ds = corpus::clean_dart(ds, rep);
    summary["dropped"] = rep.total();
  }
  const fs::path dir = a.out;
  fs::create_directories(dir);
  corpus::save_dataset(ds, dir / "dataset.jsonl");
  const auto st = corpus::compute_stats(ds);
  json sizes = json::object();
  for (const auto& [split, n] : st.split_sizes) sizes[std::string(corpus::split_name(split))] = n;
  summary["stats"] = {{"splits", sizes},
                      {"unique_predicates", st.unique_predicates},
                      {"median_triples", st.median_triples},
                      {"max_triples", st.max_triples},
                      {"vocab_size", st.vocab_size},
                      {"median_ref_tokens", st.median_ref_tokens},
                      {"max_ref_tokens", st.max_ref_tokens}};
  const auto& train = ds.split(corpus::Split::kTrain);
  if (a.low_resource > 0) {
    corpus::Dataset lr;
    lr.name = ds.name + "-low-resource";
    lr.split(corpus::Split::kTrain) = corpus::sample_low_resource(train, a.low_resource, a.seed);
    corpus::save_dataset(lr, dir / "low_resource.jsonl");
    summary["low_resource"] = a.low_resource;
  }
  if (a.unpaired) {
    corpus::write_corpus_pair(corpus::split_unpaired(train, a.seed), (dir / "unpaired").string(), a.seed);
  }
  for (int level : a.overlap) {
    const auto pair = corpus::build_overlap_corpora(train, level, a.seed);
    corpus::write_corpus_pair(pair, (dir / ("overlap" + std::to_string(level))).string(), a.seed);
    summary["overlap" + std::to_string(level)] = {{"entries", pair.corpora.data.size()},
                                                  {"shared", corpus::provenance_overlap(pair)}};
  }
  detail::write_text(dir / "prepare.json", summary.dump(2) + "\n");
  out << summary.dump(2) << "\n";
  return kExitOk;
}

struct ToyArgs {
  std::string out, backbone_out, domain = "main", cache;
  std::size_t samples = 500, references = 3;
  std::uint64_t seed = 7;
  int backbone_epochs = 15;
};

inline int cmd_toy(const ToyArgs& a, std::ostream& out, std::ostream& err) {
  if (a.domain != "main" && a.domain != "sports") throw Error(ErrorCode::kInvalidConfig, "domain must be main or sports");
  toy::ToyExperimentConfig t;
  t.grammar.samples = a.samples;
  t.grammar.references = a.references;
  t.grammar.domain = a.domain == "main" ? toy::Domain::kMain : toy::Domain::kSports;
  t.data_seed = a.seed;
  t.backbone_epochs = a.backbone_epochs;
  if (!a.out.empty()) {
    const fs::path p = a.out;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    corpus::save_dataset(toy::generate(t.grammar, t.data_seed), p);
    out << "wrote " << a.out << "\n";
  }
  if (!a.backbone_out.empty()) {
    auto s = toy::prepare_toy(t, a.cache, [&err](const std::string& m) { err << m << "\n"; });
    s.backbone->save(a.backbone_out);
    out << "wrote backbone " << a.backbone_out << "\n";
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string data, split = "test", system = "system", metrics = "rouge,bleu,meteor,parent", out;
  std::vector<std::string> generations;
};

inline std::map<std::string, std::string> read_generations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingData, "cannot read " + path);
  std::map<std::string, std::string> g;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("generation")) {
      throw Error(ErrorCode::kSchema, path + ":" + std::to_string(n) + ": expected {id, generation}");
    }
    g[j["id"].get<std::string>()] = j["generation"].get<std::string>();
  }
  if (g.empty()) throw Error(ErrorCode::kEmptyCorpus, path + " has no generations");
  return g;
}

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto ds = detail::load_dataset(a.data);
  const auto split = corpus::parse_split(a.split);
  if (!split) throw Error(ErrorCode::kInvalidConfig, "unknown split " + a.split);
  std::vector<metrics::RunGenerations> runs;
  for (const auto& g : a.generations) runs.push_back({fs::path(g).stem().string(), read_generations(g)});
  const auto rep = metrics::evaluate_suite(a.system, runs, ds.split(*split), metrics::parse_metric_list(a.metrics));
  const std::string csv = metrics::render_csv({rep});
  if (!a.out.empty()) detail::write_text(a.out, csv);
  out << metrics::render_table({rep});
  return kExitOk;
}

namespace detail {

// Experiments under dir: every directory holding seed*/record.json,
// relative path as the name, sorted.
inline std::vector<std::pair<std::string, std::vector<cycle::RunRecord>>> find_experiments(const fs::path& dir) {
  std::map<std::string, std::map<std::uint64_t, cycle::RunRecord>> found;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kMissingData, "no such directory: " + dir.string());
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().filename() != "record.json") continue;
    const auto seed_dir = e.path().parent_path();
    if (seed_dir.filename().string().rfind("seed", 0) != 0) continue;
    auto rec = cycle::RunRecord::from_json(read_json_file(e.path().string()));
    if (!rec.completed) continue;
    std::string name = fs::relative(seed_dir.parent_path(), dir).generic_string();
    if (name == ".") name = dir.filename().string();
    found[name][rec.seed] = std::move(rec);
  }
  std::vector<std::pair<std::string, std::vector<cycle::RunRecord>>> out;
  for (auto& [name, by_seed] : found) {
    std::vector<cycle::RunRecord> runs;
    for (auto& [_, r] : by_seed) runs.push_back(std::move(r));
    out.emplace_back(name, std::move(runs));
  }
  return out;
}

}  // namespace detail

inline int cmd_report(const std::string& runs_dir, const std::string& out_path, std::ostream& out) {
  const auto exps = detail::find_experiments(runs_dir);
  if (exps.empty()) throw Error(ErrorCode::kMissingData, "no completed runs under " + runs_dir);
  std::vector<metrics::MetricReport> reps;
  for (const auto& [name, runs] : exps) reps.push_back(cycle::summarize(name, runs.front().strategy, runs).report);
  const std::string csv = metrics::render_csv(reps);
  detail::write_text(out_path.empty() ? fs::path(runs_dir) / "report.csv" : fs::path(out_path), csv);
  out << metrics::render_table(reps);
  return kExitOk;
}

#ifndef CYCLEGEN_NO_ANNOTATION_SERVICE
struct ServeArgs {
  std::string data, split = "test", store = "annotation", host = "127.0.0.1";
  std::vector<std::string> systems;  // name=run_dir
  int port = 8080;
  std::size_t samples = 0;
  std::uint64_t seed = 1;
};

inline std::map<std::string, std::string> run_generations(const fs::path& dir) {
  if (fs::exists(dir / "test_generations.jsonl")) return read_generations((dir / "test_generations.jsonl").string());
  // experiment dir: lowest seed
  std::map<std::uint64_t, fs::path> seeds;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto n = e.path().filename().string();
      if (n.rfind("seed", 0) == 0 && fs::exists(e.path() / "test_generations.jsonl")) {
        try {
          seeds[std::stoull(n.substr(4))] = e.path();
        } catch (const std::exception&) {
        }
      }
    }
  }
  if (seeds.empty()) throw Error(ErrorCode::kMissingData, "no test_generations.jsonl under " + dir.string());
  return read_generations((seeds.begin()->second / "test_generations.jsonl").string());
}

inline int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path store_dir = a.store;
  std::optional<humaneval::AnnotationStore> store;
  if (fs::exists(store_dir / "batches.json")) {
    store.emplace(store_dir);
    err << "reopened " << store_dir.string() << "\n";
  } else {
    if (a.systems.size() < 2 || a.systems.size() > 3) {
      throw Error(ErrorCode::kInvalidConfig, "give 2 or 3 --system name=run_dir");
    }
    const auto ds = detail::load_dataset(a.data);
    const auto split = corpus::parse_split(a.split);
    if (!split) throw Error(ErrorCode::kInvalidConfig, "unknown split " + a.split);
    auto samples = ds.split(*split);
    if (a.samples > 0 && a.samples < samples.size()) {
      Rng rng(a.seed, 32);
      const auto order = rng.permutation(samples.size());
      std::vector<corpus::Sample> pick;
      for (std::size_t i = 0; i < a.samples; ++i) pick.push_back(samples[order[i]]);
      samples = std::move(pick);
    }
    std::map<std::string, std::map<std::string, std::string>> outputs;
    for (const auto& s : a.systems) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::kInvalidConfig, "--system wants name=run_dir");
      outputs[s.substr(0, eq)] = run_generations(s.substr(eq + 1));
    }
    store.emplace(humaneval::AnnotationStore::create(store_dir, humaneval::build_batches(samples, outputs, a.seed)));
  }
  humaneval::AnnotationService service(*store);
  const int port = service.bind(a.host, a.port);
  if (port < 0) throw Error(ErrorCode::kIo, "cannot bind " + a.host + ":" + std::to_string(a.port));
  detail::stop_flag().store(false);
  auto prev_int = std::signal(SIGINT, detail::on_signal);
  auto prev_term = std::signal(SIGTERM, detail::on_signal);
  std::thread t([&] { service.serve(); });
  service.wait_until_ready();
  out << "listening on " << a.host << ":" << port << std::endl;
  while (!detail::stop_flag().load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  service.stop();
  t.join();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  out << "stopped; " << store->sequence() << " annotations in " << store_dir.string() << std::endl;
  return kExitOk;
}
#endif

// ---------------------------------------------------------------------------

/// Entry point; argv[0] is the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"cyclegen: cycle training for data-to-text generation"};
  app.footer("Strategies: " + strategy_list() + "\nRun root: --out, else $" + kRunRootEnv + ", else ./runs");
  app.require_subcommand(1);

  PrepareArgs pa;
  auto* prep = app.add_subcommand("prepare", "load, clean and split a corpus; build low-resource and overlap corpora");
  prep->add_option("--input", pa.input, "corpus jsonl")->required();
  prep->add_option("--format", pa.format, "webnlg or dart");
  prep->add_option("--out", pa.out, "output directory")->required();
  prep->add_flag("--clean", pa.clean, "drop samples with bracketed placeholder fields");
  prep->add_option("--low-resource", pa.low_resource, "write a paired train subset of this size");
  prep->add_option("--overlap", pa.overlap, "write unpaired corpora at these overlap levels (%)");
  prep->add_flag("--unpaired", pa.unpaired, "write the train split as two shuffled unpaired corpora");
  prep->add_option("--seed", pa.seed, "seed");

  ToyArgs ta;
  auto* toy_cmd = app.add_subcommand("toy", "generate the synthetic grammar dataset (and its pre-trained backbone)");
  toy_cmd->add_option("--out", ta.out, "dataset jsonl to write");
  toy_cmd->add_option("--samples", ta.samples, "number of samples");
  toy_cmd->add_option("--references", ta.references, "references per sample");
  toy_cmd->add_option("--seed", ta.seed, "seed");
  toy_cmd->add_option("--domain", ta.domain, "main or sports");
  toy_cmd->add_option("--backbone-out", ta.backbone_out, "pre-train the sports-domain backbone and save it here");
  toy_cmd->add_option("--backbone-epochs", ta.backbone_epochs, "backbone pre-training epochs");
  toy_cmd->add_option("--cache", ta.cache, "backbone cache dir");

  detail::TrainFlags base_flags, cyc_flags, ov_flags;
  auto* tb = app.add_subcommand("train-baseline", "fine-tune the data-to-text model (fully-supervised, low-resource-ft, low-resource-ft-pretrain)");
  base_flags.add(tb, true);
  auto* ct = app.add_subcommand("cycle-train", "cycle training (unsupervised-cycle, low-resource-cycle)");
  cyc_flags.add(ct, true);
  auto* ov = app.add_subcommand("overlap-exp", "unsupervised cycle training at several data/text overlap levels");
  ov_flags.add(ov, false);

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "score generation files against a dataset split");
  ev->add_option("--data", ea.data, "dataset jsonl")->required();
  ev->add_option("--generations", ea.generations, "generation jsonl files ({id, generation}), one per seed")->required();
  ev->add_option("--split", ea.split, "split to score against");
  ev->add_option("--system", ea.system, "row name");
  ev->add_option("--metrics", ea.metrics, "comma list of rouge,bleu,meteor,parent");
  ev->add_option("--out", ea.out, "CSV file to write");

  std::string report_dir, report_out;
  auto* rp = app.add_subcommand("report", "aggregate completed runs into one table");
  rp->add_option("--runs", report_dir, "run root or experiment dir")->required();
  rp->add_option("--out", report_out, "CSV file (default <runs>/report.csv)");

#ifndef CYCLEGEN_NO_ANNOTATION_SERVICE
  ServeArgs sa;
  auto* sv = app.add_subcommand("serve-annotation", "serve blinded human-evaluation batches over HTTP");
  sv->add_option("--data", sa.data, "dataset jsonl (inputs and references)");
  sv->add_option("--split", sa.split, "split the generations belong to");
  sv->add_option("--system", sa.systems, "name=run_dir, two or three times");
  sv->add_option("--samples", sa.samples, "random subset size (0: all)");
  sv->add_option("--seed", sa.seed, "seed for sampling and order");
  sv->add_option("--store", sa.store, "annotation store dir (reopened when it exists)");
  sv->add_option("--host", sa.host, "bind address");
  sv->add_option("--port", sa.port, "port (0: any free port)");
#endif

  std::vector<std::string> argv_store(args);
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prep) return cmd_prepare(pa, out);
    if (*toy_cmd) return cmd_toy(ta, out, err);
    if (*tb) return cmd_train(base_flags, false, out, err);
    if (*ct) return cmd_train(cyc_flags, true, out, err);
    if (*ov) return cmd_overlap(ov_flags, out, err);
    if (*ev) return cmd_evaluate(ea, out);
    if (*rp) return cmd_report(report_dir, report_out, out);
#ifndef CYCLEGEN_NO_ANNOTATION_SERVICE
    if (*sv) return cmd_serve(sa, out, err);
#endif
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_validation(e.code()) ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

inline int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace cyclegen::cli
