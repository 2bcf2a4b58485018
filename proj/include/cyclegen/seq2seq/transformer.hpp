#pragma once

// A small pre-LayerNorm encoder-decoder transformer with a hand-written
// backward pass. Templated on the scalar so training runs in float while the
// gradient check runs the very same code in double.
//
// All parameters live in one flat buffer described by a ParamLayout, which
// keeps checksums, optimizer state and checkpoint I/O trivial.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "cyclegen/error.hpp"
#include "cyclegen/rng.hpp"
#include "cyclegen/seq2seq/vocab.hpp"

namespace cyclegen::seq2seq {

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int max_positions = 512;
  double dropout = 0.1;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0 || d_ff <= 0 || encoder_layers <= 0 ||
        decoder_layers <= 0 || max_positions <= 0 || dropout < 0.0 || dropout >= 1.0) {
      throw Error(ErrorCode::kInvalidConfig, "invalid model config");
    }
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model},        {"n_heads", n_heads},
            {"d_ff", d_ff},              {"encoder_layers", encoder_layers},
            {"decoder_layers", decoder_layers}, {"max_positions", max_positions},
            {"dropout", dropout}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.dropout = j.value("dropout", c.dropout);
    return c;
  }
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Parameter and gradient storage. Every tensor starts on a 64-byte boundary
// of an aligned buffer, so Eigen takes the same vectorized path (and rounds
// the same way) whatever address the allocator hands out.
template <typename T>
using ParamBuffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline constexpr std::size_t kTensorAlignBytes = 64;

struct TensorSpec {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

class ParamLayout {
 public:
  explicit ParamLayout(std::size_t align_elems = 1) : align_(std::max<std::size_t>(1, align_elems)) {}

  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    total_ = (total_ + align_ - 1) / align_ * align_;
    tensors_.push_back({std::move(name), total_, rows, cols});
    total_ += rows * cols;
    return tensors_.size() - 1;
  }
  const TensorSpec& operator[](std::size_t i) const { return tensors_[i]; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total() const { return total_; }

 private:
  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
  std::size_t align_ = 1;
};

namespace detail {

struct LnIdx {
  std::size_t g, b;
};
struct AttnIdx {
  std::size_t wq, wk, wv, wo;
};
struct FfnIdx {
  std::size_t w1, b1, w2, b2;
};
struct EncLayerIdx {
  LnIdx ln1;
  AttnIdx attn;
  LnIdx ln2;
  FfnIdx ffn;
};
struct DecLayerIdx {
  LnIdx ln1;
  AttnIdx self;
  LnIdx ln2;
  AttnIdx cross;
  LnIdx ln3;
  FfnIdx ffn;
};

template <typename T>
struct LnCache {
  Mat<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
struct AttnCache {
  Mat<T> q_in, kv_in, Q, K, V, O;
  std::vector<Mat<T>> A;
};

template <typename T>
struct FfnCache {
  Mat<T> x, pre, act;
};

template <typename T>
struct EncLayerCache {
  LnCache<T> ln1, ln2;
  AttnCache<T> attn;
  FfnCache<T> ffn;
  Mat<T> drop1, drop2;
};

template <typename T>
struct DecLayerCache {
  LnCache<T> ln1, ln2, ln3;
  AttnCache<T> self, cross;
  FfnCache<T> ffn;
  Mat<T> drop1, drop2, drop3;
};

}  // namespace detail

template <typename T>
class Transformer {
 public:
  using MatT = Mat<T>;
  using ConstMap = Eigen::Map<const MatT>;
  using MutMap = Eigen::Map<MatT>;

  /// Cross-attention keys/values of one encoded source, per decoder layer.
  struct EncoderMemory {
    std::vector<MatT> K, V;
  };

  /// Self-attention key/value cache for incremental decoding.
  struct DecodeState {
    std::vector<MatT> K, V;
    int length = 0;
  };

  Transformer(ModelConfig cfg, std::size_t vocab_size)
      : cfg_(cfg), vocab_size_(vocab_size), layout_(std::max<std::size_t>(1, kTensorAlignBytes / sizeof(T))) {
    cfg_.validate();
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto f = static_cast<std::size_t>(cfg_.d_ff);
    emb_ = layout_.add("embedding", vocab_size_, d);
    auto ln = [&](const std::string& n) {
      return detail::LnIdx{layout_.add(n + ".gain", 1, d), layout_.add(n + ".bias", 1, d)};
    };
    auto attn = [&](const std::string& n) {
      return detail::AttnIdx{layout_.add(n + ".wq", d, d), layout_.add(n + ".wk", d, d),
                             layout_.add(n + ".wv", d, d), layout_.add(n + ".wo", d, d)};
    };
    auto ffn = [&](const std::string& n) {
      return detail::FfnIdx{layout_.add(n + ".w1", d, f), layout_.add(n + ".b1", 1, f),
                            layout_.add(n + ".w2", f, d), layout_.add(n + ".b2", 1, d)};
    };
    for (int l = 0; l < cfg_.encoder_layers; ++l) {
      const std::string p = "encoder." + std::to_string(l);
      enc_.push_back({ln(p + ".ln1"), attn(p + ".attn"), ln(p + ".ln2"), ffn(p + ".ffn")});
    }
    enc_final_ = ln("encoder.final_ln");
    for (int l = 0; l < cfg_.decoder_layers; ++l) {
      const std::string p = "decoder." + std::to_string(l);
      dec_.push_back({ln(p + ".ln1"), attn(p + ".self"), ln(p + ".ln2"), attn(p + ".cross"), ln(p + ".ln3"),
                      ffn(p + ".ffn")});
    }
    dec_final_ = ln("decoder.final_ln");
    out_bias_ = layout_.add("output.bias", 1, vocab_size_);
    params_.assign(layout_.total(), T(0));

    pe_.resize(cfg_.max_positions, cfg_.d_model);
    for (int pos = 0; pos < cfg_.max_positions; ++pos) {
      for (int i = 0; i < cfg_.d_model; i += 2) {
        const double angle = pos / std::pow(10000.0, static_cast<double>(i) / cfg_.d_model);
        pe_(pos, i) = static_cast<T>(std::sin(angle));
        if (i + 1 < cfg_.d_model) pe_(pos, i + 1) = static_cast<T>(std::cos(angle));
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t num_params() const { return params_.size(); }
  ParamBuffer<T>& params() { return params_; }
  const ParamBuffer<T>& params() const { return params_; }

  /// Embedding ~ N(0, 1/d), weights ~ N(0, 2/(fan_in + fan_out)), LayerNorm gain 1.
  void init(std::uint64_t seed) {
    Rng rng(seed, 0xC0FFEE);
    for (const auto& t : layout_.tensors()) {
      T* p = params_.data() + t.offset;
      const bool is_gain = t.name.size() > 5 && t.name.compare(t.name.size() - 5, 5, ".gain") == 0;
      const bool is_bias = t.rows == 1 && !is_gain;
      double std = 0.0;
      if (&t == &layout_[emb_]) {
        std = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
      } else if (!is_gain && !is_bias) {
        std = std::sqrt(2.0 / static_cast<double>(t.rows + t.cols));
      }
      for (std::size_t i = 0; i < t.size(); ++i) {
        p[i] = is_gain ? T(1) : (is_bias ? T(0) : static_cast<T>(rng.normal() * std));
      }
    }
  }

  /// Mean NLL of `target` (which must end with EOS) given `source`. When
  /// `grad` is non-null, accumulates weight * d(loss)/d(params) into it.
  /// Dropout is active only when `dropout_rng` is non-null.
  T forward_backward(const TokenIds& source, const TokenIds& target, ParamBuffer<T>* grad, T weight,
                     Rng* dropout_rng) const {
    check_lengths(source, target);
    const std::size_t S = source.size();
    const std::size_t Tt = target.size();
    const T sqrt_d = static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_model)));
    const T p_drop = dropout_rng ? static_cast<T>(cfg_.dropout) : T(0);

    // ---- encoder
    MatT x(S, cfg_.d_model);
    for (std::size_t i = 0; i < S; ++i) x.row(i) = P(emb_).row(source[i]) * sqrt_d + pe_.row(i);
    MatT drop_src = dropout_mask(S, p_drop, dropout_rng);
    if (drop_src.size()) x.array() *= drop_src.array();
    std::vector<detail::EncLayerCache<T>> enc_cache(enc_.size());
    for (std::size_t l = 0; l < enc_.size(); ++l) {
      auto& c = enc_cache[l];
      const auto& idx = enc_[l];
      MatT a = ln_forward(x, idx.ln1, &c.ln1);
      MatT h = attn_forward(a, a, idx.attn, false, &c.attn);
      c.drop1 = dropout_mask(S, p_drop, dropout_rng);
      if (c.drop1.size()) h.array() *= c.drop1.array();
      x += h;
      MatT b = ln_forward(x, idx.ln2, &c.ln2);
      MatT f = ffn_forward(b, idx.ffn, &c.ffn);
      c.drop2 = dropout_mask(S, p_drop, dropout_rng);
      if (c.drop2.size()) f.array() *= c.drop2.array();
      x += f;
    }
    detail::LnCache<T> enc_final_cache;
    const MatT memory = ln_forward(x, enc_final_, &enc_final_cache);

    // ---- decoder (gold-prefix inputs: BOS followed by target[:-1])
    TokenIds dec_in(Tt);
    dec_in[0] = kBosId;
    for (std::size_t i = 1; i < Tt; ++i) dec_in[i] = target[i - 1];
    MatT y(Tt, cfg_.d_model);
    for (std::size_t i = 0; i < Tt; ++i) y.row(i) = P(emb_).row(dec_in[i]) * sqrt_d + pe_.row(i);
    MatT drop_tgt = dropout_mask(Tt, p_drop, dropout_rng);
    if (drop_tgt.size()) y.array() *= drop_tgt.array();
    std::vector<detail::DecLayerCache<T>> dec_cache(dec_.size());
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      auto& c = dec_cache[l];
      const auto& idx = dec_[l];
      MatT a = ln_forward(y, idx.ln1, &c.ln1);
      MatT s = attn_forward(a, a, idx.self, true, &c.self);
      c.drop1 = dropout_mask(Tt, p_drop, dropout_rng);
      if (c.drop1.size()) s.array() *= c.drop1.array();
      y += s;
      MatT b = ln_forward(y, idx.ln2, &c.ln2);
      MatT cr = attn_forward(b, memory, idx.cross, false, &c.cross);
      c.drop2 = dropout_mask(Tt, p_drop, dropout_rng);
      if (c.drop2.size()) cr.array() *= c.drop2.array();
      y += cr;
      MatT e = ln_forward(y, idx.ln3, &c.ln3);
      MatT f = ffn_forward(e, idx.ffn, &c.ffn);
      c.drop3 = dropout_mask(Tt, p_drop, dropout_rng);
      if (c.drop3.size()) f.array() *= c.drop3.array();
      y += f;
    }
    detail::LnCache<T> dec_final_cache;
    const MatT hidden = ln_forward(y, dec_final_, &dec_final_cache);
    MatT logits = hidden * P(emb_).transpose();
    logits.rowwise() += P(out_bias_).row(0);

    // log-softmax + loss
    T loss = 0;
    MatT probs(Tt, vocab_size_);
    for (std::size_t i = 0; i < Tt; ++i) {
      const T m = logits.row(i).maxCoeff();
      probs.row(i) = (logits.row(i).array() - m).exp();
      const T z = probs.row(i).sum();
      probs.row(i) /= z;
      T logp = logits(i, target[i]) - m - std::log(z);
      logp = std::max(logp, static_cast<T>(std::log(kTrainFloor)));
      loss -= logp;
    }
    loss /= static_cast<T>(Tt);
    if (!grad) return loss;

    // ---- backward
    ParamBuffer<T>& g = *grad;
    MatT dlogits = probs;
    for (std::size_t i = 0; i < Tt; ++i) dlogits(i, target[i]) -= T(1);
    dlogits *= weight / static_cast<T>(Tt);
    G(g, out_bias_).row(0) += dlogits.colwise().sum();
    G(g, emb_).noalias() += dlogits.transpose() * hidden;
    MatT dy = ln_backward(dlogits * P(emb_), dec_final_, dec_final_cache, g);
    MatT dmemory = MatT::Zero(S, cfg_.d_model);
    for (std::size_t li = dec_.size(); li-- > 0;) {
      auto& c = dec_cache[li];
      const auto& idx = dec_[li];
      {
        MatT df = dy;
        if (c.drop3.size()) df.array() *= c.drop3.array();
        dy += ln_backward(ffn_backward(df, idx.ffn, c.ffn, g), idx.ln3, c.ln3, g);
      }
      {
        MatT dc = dy;
        if (c.drop2.size()) dc.array() *= c.drop2.array();
        MatT dq, dkv;
        attn_backward(dc, idx.cross, c.cross, g, dq, dkv);
        dmemory += dkv;
        dy += ln_backward(dq, idx.ln2, c.ln2, g);
      }
      {
        MatT ds = dy;
        if (c.drop1.size()) ds.array() *= c.drop1.array();
        MatT dq, dkv;
        attn_backward(ds, idx.self, c.self, g, dq, dkv);
        dy += ln_backward(dq + dkv, idx.ln1, c.ln1, g);
      }
    }
    if (drop_tgt.size()) dy.array() *= drop_tgt.array();
    {
      auto ge = G(g, emb_);
      for (std::size_t i = 0; i < Tt; ++i) ge.row(dec_in[i]) += dy.row(i) * sqrt_d;
    }

    MatT dx = ln_backward(dmemory, enc_final_, enc_final_cache, g);
    for (std::size_t li = enc_.size(); li-- > 0;) {
      auto& c = enc_cache[li];
      const auto& idx = enc_[li];
      {
        MatT df = dx;
        if (c.drop2.size()) df.array() *= c.drop2.array();
        dx += ln_backward(ffn_backward(df, idx.ffn, c.ffn, g), idx.ln2, c.ln2, g);
      }
      {
        MatT da = dx;
        if (c.drop1.size()) da.array() *= c.drop1.array();
        MatT dq, dkv;
        attn_backward(da, idx.attn, c.attn, g, dq, dkv);
        dx += ln_backward(dq + dkv, idx.ln1, c.ln1, g);
      }
    }
    if (drop_src.size()) dx.array() *= drop_src.array();
    {
      auto ge = G(g, emb_);
      for (std::size_t i = 0; i < S; ++i) ge.row(source[i]) += dx.row(i) * sqrt_d;
    }
    return loss;
  }

  T loss(const TokenIds& source, const TokenIds& target) const {
    return forward_backward(source, target, nullptr, T(1), nullptr);
  }

  /// Teacher-forced next-token distributions (one row per target position).
  MatT distributions(const TokenIds& source, const TokenIds& target) const {
    const EncoderMemory mem = encode(source);
    DecodeState st = start_state();
    MatT out(target.size(), vocab_size_);
    TokenId prev = kBosId;
    for (std::size_t i = 0; i < target.size(); ++i) {
      out.row(i) = step(mem, st, prev).array().exp().matrix();
      prev = target[i];
    }
    return out;
  }

  EncoderMemory encode(const TokenIds& source) const {
    if (source.empty() || source.size() > static_cast<std::size_t>(cfg_.max_positions)) {
      throw Error(ErrorCode::kLengthMismatch, "source length out of range");
    }
    const std::size_t S = source.size();
    const T sqrt_d = static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_model)));
    MatT x(S, cfg_.d_model);
    for (std::size_t i = 0; i < S; ++i) x.row(i) = P(emb_).row(source[i]) * sqrt_d + pe_.row(i);
    for (const auto& idx : enc_) {
      MatT a = ln_forward(x, idx.ln1, nullptr);
      x += attn_forward(a, a, idx.attn, false, nullptr);
      MatT b = ln_forward(x, idx.ln2, nullptr);
      x += ffn_forward(b, idx.ffn, nullptr);
    }
    const MatT memory = ln_forward(x, enc_final_, nullptr);
    EncoderMemory mem;
    for (const auto& idx : dec_) {
      mem.K.push_back(memory * P(idx.cross.wk));
      mem.V.push_back(memory * P(idx.cross.wv));
    }
    return mem;
  }

  DecodeState start_state() const {
    DecodeState st;
    st.K.assign(dec_.size(), MatT(0, cfg_.d_model));
    st.V.assign(dec_.size(), MatT(0, cfg_.d_model));
    return st;
  }

  /// Feeds one decoder input token; returns log-probabilities of the next one.
  RowVec<T> step(const EncoderMemory& mem, DecodeState& st, TokenId token) const {
    const int pos = st.length;
    if (pos >= cfg_.max_positions) throw Error(ErrorCode::kLengthMismatch, "decoder position overflow");
    const T sqrt_d = static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_model)));
    MatT x = P(emb_).row(token) * sqrt_d + pe_.row(pos);
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      const auto& idx = dec_[l];
      MatT a = ln_forward(x, idx.ln1, nullptr);
      const MatT q = a * P(idx.self.wq);
      auto& K = st.K[l];
      auto& V = st.V[l];
      K.conservativeResize(pos + 1, Eigen::NoChange);
      V.conservativeResize(pos + 1, Eigen::NoChange);
      K.row(pos) = a * P(idx.self.wk);
      V.row(pos) = a * P(idx.self.wv);
      x += single_query_attention(q, K, V) * P(idx.self.wo);
      MatT b = ln_forward(x, idx.ln2, nullptr);
      const MatT qc = b * P(idx.cross.wq);
      x += single_query_attention(qc, mem.K[l], mem.V[l]) * P(idx.cross.wo);
      MatT e = ln_forward(x, idx.ln3, nullptr);
      x += ffn_forward(e, idx.ffn, nullptr);
    }
    st.length = pos + 1;
    const MatT h = ln_forward(x, dec_final_, nullptr);
    RowVec<T> logits = h * P(emb_).transpose();
    logits += P(out_bias_).row(0);
    const T m = logits.maxCoeff();
    const T lse = m + std::log((logits.array() - m).exp().sum());
    logits.array() -= lse;
    return logits;
  }

 private:
  static constexpr double kTrainFloor = 1e-12;

  ConstMap P(std::size_t i) const {
    const auto& t = layout_[i];
    return ConstMap(params_.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  }
  MutMap G(ParamBuffer<T>& g, std::size_t i) const {
    const auto& t = layout_[i];
    return MutMap(g.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  }

  void check_lengths(const TokenIds& source, const TokenIds& target) const {
    if (source.empty() || target.empty()) throw Error(ErrorCode::kLengthMismatch, "empty sequence");
    const auto maxp = static_cast<std::size_t>(cfg_.max_positions);
    if (source.size() > maxp || target.size() > maxp) {
      throw Error(ErrorCode::kLengthMismatch, "sequence longer than max_positions");
    }
  }

  MatT dropout_mask(std::size_t rows, T p, Rng* rng) const {
    if (!rng || p <= T(0)) return MatT();
    MatT m(rows, cfg_.d_model);
    const T keep = T(1) / (T(1) - p);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->uniform() < static_cast<double>(p) ? T(0) : keep;
    return m;
  }

  MatT ln_forward(const MatT& x, const detail::LnIdx& idx, detail::LnCache<T>* cache) const {
    constexpr T eps = static_cast<T>(1e-5);
    MatT xhat(x.rows(), x.cols());
    std::vector<T> rstd(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const T mu = x.row(i).mean();
      const auto centered = (x.row(i).array() - mu);
      const T var = centered.square().mean();
      rstd[i] = T(1) / std::sqrt(var + eps);
      xhat.row(i) = centered * rstd[i];
    }
    MatT y = (xhat.array().rowwise() * P(idx.g).row(0).array()).matrix();
    y.rowwise() += P(idx.b).row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->rstd = std::move(rstd);
    }
    return y;
  }

  MatT ln_backward(const MatT& dy, const detail::LnIdx& idx, const detail::LnCache<T>& c, ParamBuffer<T>& g) const {
    G(g, idx.g).row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    G(g, idx.b).row(0) += dy.colwise().sum();
    const MatT dxhat = (dy.array().rowwise() * P(idx.g).row(0).array()).matrix();
    MatT dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const T mean_d = dxhat.row(i).mean();
      const T mean_dx = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
      dx.row(i) = (dxhat.row(i).array() - mean_d - c.xhat.row(i).array() * mean_dx) * c.rstd[i];
    }
    return dx;
  }

  MatT attn_forward(const MatT& q_in, const MatT& kv_in, const detail::AttnIdx& idx, bool causal,
                    detail::AttnCache<T>* cache) const {
    const int dk = cfg_.d_model / cfg_.n_heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    MatT Q = q_in * P(idx.wq);
    MatT K = kv_in * P(idx.wk);
    MatT V = kv_in * P(idx.wv);
    MatT O(q_in.rows(), cfg_.d_model);
    std::vector<MatT> As;
    for (int h = 0; h < cfg_.n_heads; ++h) {
      MatT S = (Q.middleCols(h * dk, dk) * K.middleCols(h * dk, dk).transpose()) * scale;
      softmax_rows(S, causal);
      O.middleCols(h * dk, dk).noalias() = S * V.middleCols(h * dk, dk);
      if (cache) As.push_back(std::move(S));
    }
    MatT out = O * P(idx.wo);
    if (cache) {
      cache->q_in = q_in;
      cache->kv_in = kv_in;
      cache->Q = std::move(Q);
      cache->K = std::move(K);
      cache->V = std::move(V);
      cache->O = std::move(O);
      cache->A = std::move(As);
    }
    return out;
  }

  void attn_backward(const MatT& dout, const detail::AttnIdx& idx, const detail::AttnCache<T>& c,
                     ParamBuffer<T>& g, MatT& dq_in, MatT& dkv_in) const {
    const int dk = cfg_.d_model / cfg_.n_heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    G(g, idx.wo).noalias() += c.O.transpose() * dout;
    const MatT dO = dout * P(idx.wo).transpose();
    MatT dQ(c.Q.rows(), c.Q.cols()), dK(c.K.rows(), c.K.cols()), dV(c.V.rows(), c.V.cols());
    for (int h = 0; h < cfg_.n_heads; ++h) {
      const MatT& A = c.A[h];
      const auto dOh = dO.middleCols(h * dk, dk);
      const MatT dA = dOh * c.V.middleCols(h * dk, dk).transpose();
      dV.middleCols(h * dk, dk).noalias() = A.transpose() * dOh;
      const auto rowdot = (dA.array() * A.array()).rowwise().sum();
      MatT dS = (A.array() * (dA.array().colwise() - rowdot)).matrix() * scale;
      dQ.middleCols(h * dk, dk).noalias() = dS * c.K.middleCols(h * dk, dk);
      dK.middleCols(h * dk, dk).noalias() = dS.transpose() * c.Q.middleCols(h * dk, dk);
    }
    G(g, idx.wq).noalias() += c.q_in.transpose() * dQ;
    G(g, idx.wk).noalias() += c.kv_in.transpose() * dK;
    G(g, idx.wv).noalias() += c.kv_in.transpose() * dV;
    dq_in = dQ * P(idx.wq).transpose();
    dkv_in = dK * P(idx.wk).transpose() + dV * P(idx.wv).transpose();
  }

  MatT single_query_attention(const MatT& q, const MatT& K, const MatT& V) const {
    const int dk = cfg_.d_model / cfg_.n_heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    MatT O(1, cfg_.d_model);
    for (int h = 0; h < cfg_.n_heads; ++h) {
      MatT s = (q.middleCols(h * dk, dk) * K.middleCols(h * dk, dk).transpose()) * scale;
      softmax_rows(s, false);
      O.middleCols(h * dk, dk).noalias() = s * V.middleCols(h * dk, dk);
    }
    return O;
  }

  static void softmax_rows(MatT& S, bool causal) {
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
      const Eigen::Index valid = causal ? i + 1 : S.cols();
      auto row = S.row(i).head(valid);
      const T m = row.maxCoeff();
      row = (row.array() - m).exp().matrix();
      row /= row.sum();
      if (valid < S.cols()) S.row(i).tail(S.cols() - valid).setZero();
    }
  }

  MatT ffn_forward(const MatT& x, const detail::FfnIdx& idx, detail::FfnCache<T>* cache) const {
    MatT pre = x * P(idx.w1);
    pre.rowwise() += P(idx.b1).row(0);
    MatT act = pre.cwiseMax(T(0));
    MatT out = act * P(idx.w2);
    out.rowwise() += P(idx.b2).row(0);
    if (cache) {
      cache->x = x;
      cache->pre = std::move(pre);
      cache->act = std::move(act);
    }
    return out;
  }

  MatT ffn_backward(const MatT& dout, const detail::FfnIdx& idx, const detail::FfnCache<T>& c,
                    ParamBuffer<T>& g) const {
    G(g, idx.w2).noalias() += c.act.transpose() * dout;
    G(g, idx.b2).row(0) += dout.colwise().sum();
    MatT dpre = dout * P(idx.w2).transpose();
    dpre.array() *= (c.pre.array() > T(0)).template cast<T>();
    G(g, idx.w1).noalias() += c.x.transpose() * dpre;
    G(g, idx.b1).row(0) += dpre.colwise().sum();
    return dpre * P(idx.w1).transpose();
  }

  ModelConfig cfg_;
  std::size_t vocab_size_;
  ParamLayout layout_;
  ParamBuffer<T> params_;
  MatT pe_;
  std::size_t emb_ = 0, out_bias_ = 0;
  std::vector<detail::EncLayerIdx> enc_;
  std::vector<detail::DecLayerIdx> dec_;
  detail::LnIdx enc_final_{}, dec_final_{};
};

}  // namespace cyclegen::seq2seq
