#pragma once

// Attention decoder with optional dialog context, the context generator used
// by the pooled-distribution variant, and the cross-sentence context store.

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/autodiff.hpp"
#include "dcasr/ctc.hpp"
#include "dcasr/layers.hpp"

namespace dcasr {

enum class DecoderMode { kBaseline, kDialogA, kDialogB };

inline std::string to_string(DecoderMode m) {
  switch (m) {
    case DecoderMode::kBaseline: return "baseline";
    case DecoderMode::kDialogA: return "dialog-a";
    case DecoderMode::kDialogB: return "dialog-b";
  }
  return "?";
}

inline DecoderMode parse_mode(const std::string& s) {
  if (s == "baseline") return DecoderMode::kBaseline;
  if (s == "dialog-a") return DecoderMode::kDialogA;
  if (s == "dialog-b") return DecoderMode::kDialogB;
  throw std::invalid_argument("unknown mode '" + s + "' (expected baseline|dialog-a|dialog-b)");
}

enum class ContextKind { kZero, kFinalState, kPooled };

inline const char* to_string(ContextKind k) {
  switch (k) {
    case ContextKind::kZero: return "zero";
    case ContextKind::kFinalState: return "final-state";
    case ContextKind::kPooled: return "pooled";
  }
  return "?";
}

inline constexpr std::size_t kNoSource = std::numeric_limits<std::size_t>::max();

// Summary of the previous sentence of a dialog. Provenance records which
// utterance produced it.
struct ContextVector {
  Tensor value;
  ContextKind kind = ContextKind::kZero;
  std::string dialog_id;
  std::size_t source_position = kNoSource;

  static ContextVector zero(std::size_t dim) {
    ContextVector c;
    c.value = Tensor(Shape{dim});
    return c;
  }
};

// dialog id -> context produced by that dialog's most recent utterance.
class DialogContextStore {
 public:
  // Context for the utterance at `position` (0-based, onset order) of a
  // dialog. Throws if the stored vector does not come from position - 1.
  ContextVector lookup(const std::string& dialog_id, std::size_t position,
                       std::size_t zero_dim) const {
    if (position == 0) return ContextVector::zero(zero_dim);
    auto it = entries_.find(dialog_id);
    if (it == entries_.end() || it->second.source_position + 1 != position) {
      throw std::logic_error(
          "context store causality violation: dialog " + dialog_id + " position " +
          std::to_string(position) + " expects context from position " +
          std::to_string(position - 1) + ", store has " +
          (it == entries_.end() ? std::string("nothing")
                                : std::to_string(it->second.source_position)));
    }
    return it->second;
  }

  void update(const std::string& dialog_id, std::size_t position, ContextVector c) {
    auto it = entries_.find(dialog_id);
    if (it != entries_.end() && it->second.source_position >= position) {
      throw std::logic_error("context store: non-monotone update for dialog " + dialog_id);
    }
    c.dialog_id = dialog_id;
    c.source_position = position;
    entries_[dialog_id] = std::move(c);
  }

  bool contains(const std::string& dialog_id) const { return entries_.count(dialog_id) > 0; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::map<std::string, ContextVector> entries_;
};

struct DecoderConfig {
  std::size_t vocab = 0;
  std::size_t embed = 32;
  std::size_t hidden = 300;
  AttentionConfig attention;
  DecoderMode mode = DecoderMode::kBaseline;
  std::size_t context_dim = 300;  // pooled size for dialog-b
  // Replaces f(s, c) by the identity; dialog modes then reduce to baseline.
  bool bypass_combiner = false;
};

// f(s, c) = tanh(W s + V c + b).
class ContextCombiner {
 public:
  ContextCombiner() = default;
  ContextCombiner(ParamSet& params, std::size_t state_dim, std::size_t context_dim,
                  const Initializer& init) {
    Tensor w = init({state_dim, state_dim});
    // Identity plus noise keeps a bootstrapped decoder close to its
    // baseline trajectory.
    for (std::size_t i = 0; i < state_dim; ++i) w(i, i) += 1.0;
    w_ = params.add("ctx.combine.W", std::move(w));
    v_ = params.add("ctx.combine.V", init({state_dim, context_dim}));
    b_ = params.add("ctx.combine.b", init({state_dim}));
  }

  Var operator()(const Var& s, const Var& c) const {
    return ad::tanh(ad::add(ad::linear(s, w_, b_), ad::linear(c, v_)));
  }

  const Var& W() const { return w_; }
  const Var& V() const { return v_; }
  const Var& b() const { return b_; }

 private:
  Var w_, v_, b_;
};

struct DecoderState {
  LstmState lstm;
  Var attention;  // previous attention weights [T']
  std::size_t step = 0;
};

// Encoder output plus precomputed attention keys.
struct EncodedUtterance {
  Var h;
  Var keys;
  std::size_t frames = 0;
};

struct DecoderStep {
  Var log_probs;  // [V]
  DecoderState state;
};

class AttentionDecoder {
 public:
  AttentionDecoder() = default;
  AttentionDecoder(ParamSet& params, const DecoderConfig& cfg, std::size_t enc_dim,
                   const Initializer& init)
      : cfg_(cfg),
        embed_(params, "dec.embed", cfg.vocab, cfg.embed, init),
        attention_(params, "dec.att", enc_dim, cfg.hidden, cfg.attention, init),
        cell_(params, "dec.lstm", cfg.embed + enc_dim, cfg.hidden, init),
        out_(params, "dec.out", cfg.hidden, cfg.vocab, init) {
    if (cfg.mode != DecoderMode::kBaseline) {
      combiner_ = ContextCombiner(params, cfg.hidden, context_dim(), init);
    }
  }

  const DecoderConfig& config() const { return cfg_; }
  DecoderConfig& mutable_config() { return cfg_; }
  const ContextCombiner& combiner() const { return combiner_; }

  std::size_t context_dim() const {
    switch (cfg_.mode) {
      case DecoderMode::kBaseline: return cfg_.hidden;
      case DecoderMode::kDialogA: return cfg_.hidden;
      case DecoderMode::kDialogB: return cfg_.context_dim;
    }
    return 0;
  }

  EncodedUtterance prepare(const Var& h) const {
    return {h, attention_.keys(h), h.shape()[0]};
  }

  DecoderState initial_state(const EncodedUtterance& enc) const {
    return {cell_.zero_state(), LocationAttention::initial_weights(enc.frames), 0};
  }

  // One output step: consumes y_prev (<eos> doubles as start-of-speech) and
  // returns log p(y_u | ...) with the advanced state.
  DecoderStep step(const DecoderState& state, const EncodedUtterance& enc, std::size_t y_prev,
                   const ContextVector& ctx) const {
    check_context(ctx);
    if (y_prev >= cfg_.vocab) throw std::invalid_argument("decoder: label out of range");
    Var s_hat = state.lstm.h;
    if (!cfg_.bypass_combiner) {
      const bool apply = (cfg_.mode == DecoderMode::kDialogA && state.step == 0) ||
                         cfg_.mode == DecoderMode::kDialogB;
      if (apply) s_hat = combiner_(s_hat, ad::constant(ctx.value));
    }
    AttentionResult att = attention_.attend(state.attention, enc.keys, enc.h, s_hat);
    Var x = ad::concat({embed_.lookup(y_prev), att.glimpse});
    LstmState next = cell_.step(x, {s_hat, state.lstm.c});
    Var logp = ad::log_softmax(out_(next.h));
    return {logp, {next, att.weights, state.step + 1}};
  }

  struct TeacherForced {
    std::vector<Var> log_probs;  // U + 1 steps, the last one predicting <eos>
    DecoderState final_state;
  };

  TeacherForced teacher_force(const EncodedUtterance& enc, const LabelSequence& y,
                              std::size_t eos, const ContextVector& ctx) const {
    TeacherForced out;
    DecoderState st = initial_state(enc);
    std::size_t prev = eos;
    for (std::size_t u = 0; u <= y.size(); ++u) {
      DecoderStep r = step(st, enc, prev, ctx);
      out.log_probs.push_back(r.log_probs);
      st = r.state;
      if (u < y.size()) prev = y[u];
    }
    out.final_state = st;
    return out;
  }

  void check_context(const ContextVector& ctx) const {
    const bool ok =
        ctx.kind == ContextKind::kZero ||
        (cfg_.mode == DecoderMode::kDialogA && ctx.kind == ContextKind::kFinalState) ||
        (cfg_.mode == DecoderMode::kDialogB && ctx.kind == ContextKind::kPooled);
    if (!ok) {
      throw std::invalid_argument(std::string("decoder: ") + to_string(ctx.kind) +
                                  " context given to " + to_string(cfg_.mode) + " decoder");
    }
    if (ctx.value.shape() != Shape{context_dim()}) {
      throw std::invalid_argument("decoder: context " + shape_string(ctx.value.shape()) +
                                  " but expected [" + std::to_string(context_dim()) + "]");
    }
  }

 private:
  DecoderConfig cfg_;
  Embedding embed_;
  LocationAttention attention_;
  LstmCell cell_;
  Linear out_;
  ContextCombiner combiner_;
};

// Sum over U+1 teacher-forced steps of -log p(y*_u), the last target being
// <eos>.
inline Var attention_loss(const std::vector<Var>& log_probs, const LabelSequence& y,
                          std::size_t eos) {
  if (log_probs.size() != y.size() + 1) {
    throw std::invalid_argument("attention_loss: " + std::to_string(log_probs.size()) +
                                " steps for " + std::to_string(y.size()) + " labels (+<eos>)");
  }
  std::vector<Var> picks;
  for (std::size_t u = 0; u < log_probs.size(); ++u) {
    picks.push_back(ad::pick(log_probs[u], u < y.size() ? y[u] : eos));
  }
  return ad::scale(ad::add_n(picks), -1.0);
}

// Method-a context: the decoder's final hidden state, detached.
inline ContextVector generate_context_a(const DecoderState& final_state) {
  ContextVector c;
  c.value = final_state.lstm.h.value();
  c.kind = ContextKind::kFinalState;
  return c;
}

struct GeneratedContext {
  Var context;  // pooled representation [C]
  Var logits;   // [n_dialogs]
  Var weights;  // pooling weights [U]
};

// Pools embeddings of per-step output distributions with an attention
// layer; the pooled vector feeds a dialog classifier.
class ContextGenerator {
 public:
  ContextGenerator() = default;
  ContextGenerator(ParamSet& params, std::size_t vocab, std::size_t dim, std::size_t n_dialogs,
                   const Initializer& init)
      : embed_(params, "ctx.gen.embed", vocab, dim, init, false),
        att_(params, "ctx.gen.att", dim, dim, init),
        score_(params.add("ctx.gen.score", init({dim}))),
        classify_(params, "ctx.gen.cls", dim, n_dialogs, init) {}

  GeneratedContext operator()(const Var& y_dists) const {
    const Tensor& y = y_dists.value();
    if (y.rank() != 2 || y.dim(0) == 0) {
      throw std::invalid_argument("context generator: need at least one distribution row, got " +
                                  shape_string(y.shape()));
    }
    for (std::size_t r = 0; r < y.dim(0); ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < y.dim(1); ++k) s += y(r, k);
      if (std::abs(s - 1.0) > 1e-6) {
        throw std::invalid_argument("context generator: row " + std::to_string(r) +
                                    " sums to " + std::to_string(s));
      }
    }
    Var e = embed_(y_dists);
    Var w = ad::softmax(ad::matmul(ad::tanh(att_(e)), score_));
    Var c = ad::matmul(w, e);
    return {c, classify_(c), w};
  }

  const Linear& embedding() const { return embed_; }
  const Linear& attention() const { return att_; }
  const Var& score() const { return score_; }

 private:
  Linear embed_;
  Linear att_;
  Var score_;
  Linear classify_;
};

inline Var dialog_loss(const Var& logits, std::size_t dialog_index) {
  return ad::scale(ad::pick(ad::log_softmax(logits), dialog_index), -1.0);
}

}  // namespace dcasr
