#pragma once

// Model handles. `Seq2SeqModel` is the adapter contract every backbone
// satisfies (the bundled transformer, or an external pretrained model behind
// the same calls); `TransformerModel` is the desk-scale implementation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cyclegen/error.hpp"
#include "cyclegen/rng.hpp"
#include "cyclegen/seq2seq/transformer.hpp"
#include "cyclegen/seq2seq/vocab.hpp"

namespace cyclegen::seq2seq {

enum class Direction { kForward, kReverse };  // data->text, text->data

inline std::string_view direction_name(Direction d) { return d == Direction::kForward ? "forward" : "reverse"; }

struct DecodeConfig {
  int beams = 4;
  int min_len = 3;
  int max_len = 256;
  int max_input_len = 256;
  // Beam scores are sum(log p) / (generated tokens incl. EOS)^length_penalty.
  double length_penalty = 1.0;

  void validate() const {
    if (beams < 1 || min_len < 1 || min_len > max_len || max_input_len < 1) {
      throw Error(ErrorCode::kInvalidConfig, "invalid decode config");
    }
  }
  nlohmann::json to_json() const {
    return {{"beams", beams}, {"min_len", min_len}, {"max_len", max_len},
            {"max_input_len", max_input_len}, {"length_penalty", length_penalty}};
  }
  static DecodeConfig from_json(const nlohmann::json& j) {
    DecodeConfig c;
    c.beams = j.value("beams", c.beams);
    c.min_len = j.value("min_len", c.min_len);
    c.max_len = j.value("max_len", c.max_len);
    c.max_input_len = j.value("max_input_len", c.max_input_len);
    c.length_penalty = j.value("length_penalty", c.length_penalty);
    return c;
  }
};

struct TrainConfig {
  double learning_rate = 3e-4;
  int effective_batch_size = 32;
  int micro_batch_size = 0;  // 0: same as the effective batch
  int max_epochs = 50;       // passes performed by one train_teacher_forcing call
  double weight_decay = 0.01;
  // Linear learning-rate decay to zero over this many optimizer steps; 0 keeps it constant.
  long decay_total_steps = 0;
  double grad_clip = 1.0;
  int max_target_len = 256;
  int max_input_len = 256;

  void validate() const {
    if (!(learning_rate > 0) || effective_batch_size <= 0 || micro_batch_size < 0 || max_epochs <= 0 ||
        weight_decay < 0 || grad_clip < 0 || max_target_len < 1 || max_input_len < 1) {
      throw Error(ErrorCode::kInvalidConfig, "invalid train config");
    }
  }
  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},   {"effective_batch_size", effective_batch_size},
            {"micro_batch_size", micro_batch_size}, {"max_epochs", max_epochs},
            {"weight_decay", weight_decay},     {"decay_total_steps", decay_total_steps},
            {"grad_clip", grad_clip},           {"max_target_len", max_target_len},
            {"max_input_len", max_input_len}};
  }
  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.effective_batch_size = j.value("effective_batch_size", c.effective_batch_size);
    c.micro_batch_size = j.value("micro_batch_size", c.micro_batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.decay_total_steps = j.value("decay_total_steps", c.decay_total_steps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.max_target_len = j.value("max_target_len", c.max_target_len);
    c.max_input_len = j.value("max_input_len", c.max_input_len);
    return c;
  }
};

struct TextPair {
  std::string input;
  std::string target;
};

struct TrainReport {
  std::vector<double> epoch_losses;
  std::size_t optimizer_steps = 0;
  std::vector<std::string> warnings;
};

struct GenerationResult {
  std::string text;
  TokenIds ids;  // without EOS
  double score = 0.0;
  bool input_truncated = false;
};

/// The backbone contract. Anything that can be trained with teacher forcing,
/// decode, be frozen and be checkpointed can stand in for the bundled model.
class Seq2SeqModel {
 public:
  virtual ~Seq2SeqModel() = default;

  virtual Direction direction() const = 0;
  virtual TrainReport train_teacher_forcing(std::span<const TextPair> pairs, const TrainConfig& cfg) = 0;
  virtual GenerationResult generate_detailed(const std::string& input, const DecodeConfig& cfg) const = 0;
  virtual double evaluate_loss(std::span<const TextPair> pairs) const = 0;
  virtual void freeze() = 0;
  virtual void unfreeze() = 0;
  virtual bool frozen() const = 0;
  virtual std::uint64_t checksum() const = 0;
  /// Checksum captured by the most recent freeze().
  virtual std::uint64_t frozen_checksum() const = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;
  virtual std::unique_ptr<Seq2SeqModel> clone() const = 0;

  std::string generate(const std::string& input, const DecodeConfig& cfg) const {
    return generate_detailed(input, cfg).text;
  }
};

/// FNV-1a over the raw bytes of a buffer.
inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'G', 'C', 'K', 'P', 'T', '0', '1'};

class TransformerModel final : public Seq2SeqModel {
 public:
  using Net = Transformer<float>;

  TransformerModel(Vocab vocab, ModelConfig cfg, Direction dir, std::uint64_t seed)
      : vocab_(std::move(vocab)), net_(cfg, vocab_.size()), direction_(dir), seed_(seed) {
    net_.init(seed);
    m_.assign(net_.num_params(), 0.0f);
    v_.assign(net_.num_params(), 0.0f);
  }

  Direction direction() const override { return direction_; }
  const Vocab& vocab() const { return vocab_; }
  const Net& net() const { return net_; }
  Net& mutable_net() { return net_; }
  long optimizer_step() const { return step_; }

  TokenIds encode_source(const std::string& input, int max_input_len, bool* truncated = nullptr) const {
    TokenIds ids = vocab_.encode(input);
    const auto cap = static_cast<std::size_t>(
        std::max(1, std::min(max_input_len, net_.config().max_positions) - 1));
    if (truncated) *truncated = ids.size() > cap;
    if (ids.size() > cap) ids.resize(cap);
    ids.push_back(kEosId);
    return ids;
  }

  TokenIds encode_target(const std::string& target, int max_target_len) const {
    TokenIds ids = vocab_.encode(target);
    const auto cap = static_cast<std::size_t>(
        std::max(0, std::min(max_target_len, net_.config().max_positions - 1)));
    if (ids.size() > cap) ids.resize(cap);
    ids.push_back(kEosId);
    return ids;
  }

  TrainReport train_teacher_forcing(std::span<const TextPair> pairs, const TrainConfig& cfg) override {
    if (frozen_) throw Error(ErrorCode::kFrozenModel, "cannot train a frozen model");
    if (pairs.empty()) throw Error(ErrorCode::kEmptyBatch, "no training pairs");
    cfg.validate();
    std::vector<std::pair<TokenIds, TokenIds>> data;
    data.reserve(pairs.size());
    for (const auto& p : pairs) data.emplace_back(encode_source(p.input, cfg.max_input_len), encode_target(p.target, cfg.max_target_len));

    TrainReport report;
    ParamBuffer<float> grad(net_.num_params());
    const auto batch = static_cast<std::size_t>(cfg.effective_batch_size);
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      const std::uint64_t call = train_calls_++;
      Rng order_rng(seed_, mix_seed(call, 1));
      Rng dropout_rng(seed_, mix_seed(call, 2));
      const auto order = order_rng.permutation(data.size());
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        std::fill(grad.begin(), grad.end(), 0.0f);
        const float w = 1.0f / static_cast<float>(end - start);
        for (std::size_t k = start; k < end; ++k) {
          const auto& [src, tgt] = data[order[k]];
          epoch_loss += net_.forward_backward(src, tgt, &grad, w, &dropout_rng);
        }
        adam_step(grad, cfg);
        ++report.optimizer_steps;
      }
      report.epoch_losses.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    return report;
  }

  double evaluate_loss(std::span<const TextPair> pairs) const override {
    if (pairs.empty()) return 0.0;
    double total = 0.0;
    for (const auto& p : pairs) {
      total += net_.loss(encode_source(p.input, 256), encode_target(p.target, 256));
    }
    return total / static_cast<double>(pairs.size());
  }

  GenerationResult generate_detailed(const std::string& input, const DecodeConfig& cfg) const override {
    cfg.validate();
    GenerationResult res;
    const TokenIds src = encode_source(input, cfg.max_input_len, &res.input_truncated);
    const auto mem = net_.encode(src);
    const int max_len = std::min(cfg.max_len, net_.config().max_positions - 1);
    const int min_len = std::min(cfg.min_len, max_len);
    Hypothesis best = greedy(mem, min_len, max_len, cfg.length_penalty);
    if (cfg.beams > 1) {
      Hypothesis beam = beam_search(mem, cfg.beams, min_len, max_len, cfg.length_penalty);
      // Greedy is always a candidate, so a wider beam never scores below beams=1.
      if (beam.score > best.score) best = std::move(beam);
    }
    res.ids = std::move(best.tokens);
    res.score = best.score;
    res.text = vocab_.decode(res.ids);
    return res;
  }

  void freeze() override {
    frozen_ = true;
    frozen_checksum_ = checksum();
  }
  void unfreeze() override { frozen_ = false; }
  bool frozen() const override { return frozen_; }
  std::uint64_t frozen_checksum() const override { return frozen_checksum_; }

  std::uint64_t checksum() const override {
    const auto& p = net_.params();
    return fnv1a(p.data(), p.size() * sizeof(float));
  }

  std::unique_ptr<Seq2SeqModel> clone() const override { return std::make_unique<TransformerModel>(*this); }

  /// Same weights, fresh training state: new direction and seed, zeroed
  /// optimizer moments, unfrozen. How a pre-trained backbone is handed to a
  /// fine-tuning run.
  TransformerModel derive(Direction dir, std::uint64_t seed) const {
    TransformerModel m(*this);
    m.direction_ = dir;
    m.seed_ = seed;
    std::fill(m.m_.begin(), m.m_.end(), 0.0f);
    std::fill(m.v_.begin(), m.v_.end(), 0.0f);
    m.step_ = 0;
    m.train_calls_ = 0;
    m.frozen_ = false;
    m.frozen_checksum_ = 0;
    return m;
  }

  /// Writes manifest.json (vocab, config, direction, checksum) and params.bin
  /// (magic, counts, parameters, optimizer moments).
  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    nlohmann::json man;
    man["format_version"] = kCheckpointVersion;
    man["backbone"] = "transformer";
    man["direction"] = std::string(direction_name(direction_));
    man["model_config"] = net_.config().to_json();
    man["vocab"] = vocab_.to_json();
    man["checksum"] = checksum();
    man["num_params"] = net_.num_params();
    man["seed"] = seed_;
    man["train_calls"] = train_calls_;
    man["optimizer_step"] = step_;
    man["frozen"] = frozen_;
    man["frozen_checksum"] = frozen_checksum_;
    const auto tmp_man = dir / "manifest.json.tmp";
    const auto tmp_bin = dir / "params.bin.tmp";
    {
      std::ofstream out(tmp_bin, std::ios::binary);
      if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp_bin.string());
      out.write(kCheckpointMagic, sizeof kCheckpointMagic);
      const std::uint64_t n = net_.num_params();
      out.write(reinterpret_cast<const char*>(&n), sizeof n);
      out.write(reinterpret_cast<const char*>(net_.params().data()), static_cast<std::streamsize>(n * sizeof(float)));
      out.write(reinterpret_cast<const char*>(m_.data()), static_cast<std::streamsize>(n * sizeof(float)));
      out.write(reinterpret_cast<const char*>(v_.data()), static_cast<std::streamsize>(n * sizeof(float)));
    }
    {
      std::ofstream out(tmp_man);
      if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp_man.string());
      out << man.dump(1) << '\n';
    }
    std::filesystem::rename(tmp_bin, dir / "params.bin");
    std::filesystem::rename(tmp_man, dir / "manifest.json");
  }

  static TransformerModel load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw Error(ErrorCode::kIo, "missing manifest in " + dir.string());
    nlohmann::json man;
    try {
      man = nlohmann::json::parse(mf);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kCheckpoint, std::string("bad manifest: ") + e.what());
    }
    if (man.value("format_version", 0) != kCheckpointVersion) {
      throw Error(ErrorCode::kCheckpoint, "unsupported checkpoint version");
    }
    const Direction dir_ = man.at("direction").get<std::string>() == "forward" ? Direction::kForward : Direction::kReverse;
    TransformerModel m(Vocab::from_json(man.at("vocab")), ModelConfig::from_json(man.at("model_config")), dir_,
                       man.at("seed").get<std::uint64_t>());
    std::ifstream bin(dir / "params.bin", std::ios::binary);
    char magic[8];
    bin.read(magic, sizeof magic);
    if (!bin || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
      throw Error(ErrorCode::kCheckpoint, "bad params.bin header");
    }
    std::uint64_t n = 0;
    bin.read(reinterpret_cast<char*>(&n), sizeof n);
    if (n != m.net_.num_params()) throw Error(ErrorCode::kCheckpoint, "parameter count mismatch");
    bin.read(reinterpret_cast<char*>(m.net_.params().data()), static_cast<std::streamsize>(n * sizeof(float)));
    bin.read(reinterpret_cast<char*>(m.m_.data()), static_cast<std::streamsize>(n * sizeof(float)));
    bin.read(reinterpret_cast<char*>(m.v_.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!bin) throw Error(ErrorCode::kCheckpoint, "truncated params.bin");
    if (m.checksum() != man.at("checksum").get<std::uint64_t>()) {
      throw Error(ErrorCode::kCheckpoint, "checksum mismatch");
    }
    m.train_calls_ = man.value("train_calls", std::uint64_t{0});
    m.step_ = man.value("optimizer_step", 0L);
    m.frozen_ = man.value("frozen", false);
    m.frozen_checksum_ = man.value("frozen_checksum", std::uint64_t{0});
    return m;
  }

 private:
  struct Hypothesis {
    TokenIds tokens;
    double logp = 0.0;
    double score = -std::numeric_limits<double>::infinity();
  };

  static double normalized(double logp, std::size_t generated, double penalty) {
    return logp / std::pow(static_cast<double>(generated), penalty);
  }

  // PAD and BOS are never emitted; EOS is masked until min_len tokens exist
  // and forced once max_len tokens exist.
  static bool allowed(TokenId tok, int length, int min_len, int max_len) {
    if (tok == kPadId || tok == kBosId) return false;
    if (length >= max_len) return tok == kEosId;
    if (tok == kEosId) return length >= min_len;
    return true;
  }

  Hypothesis greedy(const Net::EncoderMemory& mem, int min_len, int max_len, double penalty) const {
    auto st = net_.start_state();
    Hypothesis h;
    TokenId prev = kBosId;
    while (true) {
      const auto logp = net_.step(mem, st, prev);
      const int len = static_cast<int>(h.tokens.size());
      TokenId best = -1;
      for (Eigen::Index v = 0; v < logp.size(); ++v) {
        const auto tok = static_cast<TokenId>(v);
        if (!allowed(tok, len, min_len, max_len)) continue;
        if (best < 0 || logp(v) > logp(best)) best = tok;
      }
      h.logp += logp(best);
      if (best == kEosId) break;
      h.tokens.push_back(best);
      prev = best;
    }
    h.score = normalized(h.logp, h.tokens.size() + 1, penalty);
    return h;
  }

  Hypothesis beam_search(const Net::EncoderMemory& mem, int beams, int min_len, int max_len, double penalty) const {
    struct Live {
      TokenIds tokens;
      double logp = 0.0;
      Net::DecodeState state;
    };
    struct Candidate {
      std::size_t parent;
      TokenId token;
      double logp;
    };
    std::vector<Live> live;
    live.push_back({{}, 0.0, net_.start_state()});
    std::vector<Hypothesis> finished;
    const auto k = static_cast<std::size_t>(beams);

    while (!live.empty() && finished.size() < k) {
      std::vector<Candidate> cands;
      for (std::size_t b = 0; b < live.size(); ++b) {
        auto& L = live[b];
        const TokenId prev = L.tokens.empty() ? kBosId : L.tokens.back();
        const auto logp = net_.step(mem, L.state, prev);
        const int len = static_cast<int>(L.tokens.size());
        std::vector<std::pair<float, TokenId>> top;
        for (Eigen::Index v = 0; v < logp.size(); ++v) {
          if (allowed(static_cast<TokenId>(v), len, min_len, max_len)) top.emplace_back(logp(v), static_cast<TokenId>(v));
        }
        const std::size_t keep = std::min(top.size(), 2 * k);
        std::partial_sort(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(keep), top.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
        for (std::size_t i = 0; i < keep; ++i) cands.push_back({b, top[i].second, L.logp + top[i].first});
      }
      std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.logp != b.logp) return a.logp > b.logp;
        if (a.parent != b.parent) return a.parent < b.parent;
        return a.token < b.token;
      });
      std::vector<Live> next;
      for (std::size_t rank = 0; rank < cands.size() && next.size() < k; ++rank) {
        const auto& c = cands[rank];
        const auto& parent = live[c.parent];
        if (c.token == kEosId) {
          if (rank < k) {
            Hypothesis h{parent.tokens, c.logp, normalized(c.logp, parent.tokens.size() + 1, penalty)};
            finished.push_back(std::move(h));
          }
          continue;
        }
        Live child{parent.tokens, c.logp, parent.state};
        child.tokens.push_back(c.token);
        next.push_back(std::move(child));
      }
      live = std::move(next);
    }
    Hypothesis best;
    for (auto& h : finished) {
      if (h.score > best.score || (h.score == best.score && h.tokens < best.tokens)) best = h;
    }
    return best;
  }

  void adam_step(ParamBuffer<float>& grad, const TrainConfig& cfg) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (cfg.grad_clip > 0) {
      double sq = 0.0;
      for (float g : grad) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) {
        const auto s = static_cast<float>(cfg.grad_clip / norm);
        for (float& g : grad) g *= s;
      }
    }
    ++step_;
    double lr = cfg.learning_rate;
    if (cfg.decay_total_steps > 0) {
      lr *= std::max(0.0, 1.0 - static_cast<double>(step_ - 1) / static_cast<double>(cfg.decay_total_steps));
    }
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    auto& p = net_.params();
    for (const auto& t : net_.layout().tensors()) {
      const bool decay = t.rows > 1 && cfg.weight_decay > 0;
      for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
        m_[i] = static_cast<float>(b1 * m_[i] + (1 - b1) * grad[i]);
        v_[i] = static_cast<float>(b2 * v_[i] + (1 - b2) * static_cast<double>(grad[i]) * grad[i]);
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        double upd = mhat / (std::sqrt(vhat) + eps);
        if (decay) upd += cfg.weight_decay * p[i];
        p[i] = static_cast<float>(p[i] - lr * upd);
      }
    }
  }

  Vocab vocab_;
  Net net_;
  Direction direction_;
  std::uint64_t seed_;
  std::vector<float> m_, v_;
  long step_ = 0;
  std::uint64_t train_calls_ = 0;
  bool frozen_ = false;
  std::uint64_t frozen_checksum_ = 0;
};

}  // namespace cyclegen::seq2seq
