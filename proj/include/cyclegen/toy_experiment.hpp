#pragma once

// Desk-scale experiment setup on the toy grammar: the main dataset, a
// small backbone pre-trained on the unrelated sports domain, and the run
// settings shared by the acceptance checks and the CLI.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "cyclegen/corpus.hpp"
#include "cyclegen/cycle_trainer.hpp"
#include "cyclegen/seq2seq/model.hpp"
#include "cyclegen/toy_grammar.hpp"

namespace cyclegen::toy {

namespace fs = std::filesystem;

struct ToyExperimentConfig {
  GrammarConfig grammar;  // ~500 pairs, 10 predicates, ~60 entities
  std::uint64_t data_seed = 7;
  GrammarConfig backbone_grammar = [] {
    GrammarConfig g;
    g.domain = Domain::kSports;
    g.samples = 3000;
    g.people = 300;
    g.cities = 100;
    g.countries = 50;
    g.companies = 100;
    g.references = 1;
    g.dev_fraction = 0.0;
    g.test_fraction = 0.0;
    return g;
  }();
  std::uint64_t backbone_data_seed = 99;
  std::uint64_t backbone_seed = 12345;
  int backbone_epochs = 15;
  seq2seq::ModelConfig model = [] {
    seq2seq::ModelConfig m;
    m.d_model = 64;
    m.n_heads = 4;
    m.d_ff = 128;
    return m;
  }();
  double learning_rate = 1e-3;
  int batch_size = 16;

  nlohmann::json to_json() const {
    return {{"data_seed", data_seed},
            {"samples", grammar.samples},
            {"backbone_samples", backbone_grammar.samples},
            {"backbone_data_seed", backbone_data_seed},
            {"backbone_seed", backbone_seed},
            {"backbone_epochs", backbone_epochs},
            {"model", model.to_json()},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size}};
  }
};

/// Run settings: one pass per epoch at the toy learning rate, greedy
/// decoding everywhere, 3 seeds.
inline cycle::CycleConfig toy_cycle_config(const ToyExperimentConfig& t = {}) {
  cycle::CycleConfig c;
  c.seeds = {1, 2, 3};
  c.max_epochs = 30;
  c.pre_cycle_epochs = 25;
  c.train.learning_rate = t.learning_rate;
  c.train.effective_batch_size = t.batch_size;
  seq2seq::DecodeConfig greedy;
  greedy.beams = 1;
  greedy.min_len = 1;
  greedy.max_len = 64;
  c.decode = c.cycle_decode = c.dev_decode = greedy;
  return c;
}

struct ToySetup {
  corpus::Dataset dataset;
  cycle::RunInputs inputs;
  std::vector<corpus::Sample> backbone_corpus;
  seq2seq::Vocab vocab;
  std::shared_ptr<const seq2seq::TransformerModel> backbone;
  cycle::ModelFactory factory;
};

/// Generates both corpora and pre-trains the backbone on the sports domain
/// (multi-task, both directions). With a cache dir the backbone is stored
/// under a name derived from the settings and reused.
inline ToySetup prepare_toy(const ToyExperimentConfig& t = {}, const fs::path& cache = {},
                            const std::function<void(const std::string&)>& log = {}) {
  ToySetup s;
  s.dataset = generate(t.grammar, t.data_seed);
  s.inputs.train = s.dataset.split(corpus::Split::kTrain);
  s.inputs.dev = s.dataset.split(corpus::Split::kDev);
  s.inputs.test = s.dataset.split(corpus::Split::kTest);
  s.backbone_corpus = generate(t.backbone_grammar, t.backbone_data_seed).split(corpus::Split::kTrain);
  s.vocab = cycle::build_vocab(s.inputs.train, 1, s.backbone_corpus);

  fs::path path;
  if (!cache.empty()) {
    const auto key = seq2seq::fnv1a(t.to_json().dump().data(), t.to_json().dump().size());
    path = cache / ("toy_backbone_" + std::to_string(key));
  }
  std::shared_ptr<seq2seq::TransformerModel> base;
  if (!path.empty() && fs::exists(path / "manifest.json")) {
    base = std::make_shared<seq2seq::TransformerModel>(seq2seq::TransformerModel::load(path));
  } else {
    base = std::make_shared<seq2seq::TransformerModel>(s.vocab, t.model, seq2seq::Direction::kForward,
                                                       t.backbone_seed);
    seq2seq::TrainConfig pt;
    pt.learning_rate = t.learning_rate;
    pt.effective_batch_size = t.batch_size;
    pt.max_epochs = 1;
    const auto pairs = cycle::bidirectional_pairs(s.backbone_corpus);
    for (int e = 0; e < t.backbone_epochs; ++e) {
      const double loss = base->train_teacher_forcing(pairs, pt).epoch_losses.back();
      if (log) log("backbone epoch " + std::to_string(e + 1) + " loss " + std::to_string(loss));
    }
    if (!path.empty()) {
      fs::create_directories(cache);
      base->save(path);
    }
  }
  s.backbone = base;
  s.factory = cycle::pretrained_factory(base);
  return s;
}

}  // namespace cyclegen::toy
