#pragma once

// Character-level LSTM language model used only at decode time. It shares
// the main vocabulary without the blank: LM output k is vocabulary id k+1.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/autodiff.hpp"
#include "dcasr/ctc.hpp"
#include "dcasr/layers.hpp"
#include "dcasr/optim.hpp"

namespace dcasr {

struct CharLmConfig {
  std::size_t vocab = 0;  // main vocabulary size, blank included
  std::size_t eos = 1;
  std::size_t embed = 64;
  std::size_t hidden = 650;
  std::size_t layers = 2;
  double init_range = 0.1;
  std::uint64_t seed = 1;
};

class CharLm {
 public:
  struct State {
    std::vector<LstmState> layers;
  };

  explicit CharLm(const CharLmConfig& cfg) : cfg_(cfg) {
    if (cfg.vocab < 2) throw std::invalid_argument("char lm: vocabulary too small");
    std::mt19937_64 rng(cfg.seed);
    Initializer init{rng, cfg.init_range};
    embed_ = Embedding(params_, "lm.embed", size(), cfg.embed, init);
    std::size_t in = cfg.embed;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      cells_.emplace_back(params_, "lm.l" + std::to_string(l), in, cfg.hidden, init);
      in = cfg.hidden;
    }
    out_ = Linear(params_, "lm.out", in, size(), init);
  }

  CharLm(const CharLm&) = delete;
  CharLm& operator=(const CharLm&) = delete;
  CharLm(CharLm&&) = default;
  CharLm& operator=(CharLm&&) = default;

  const CharLmConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  // LM vocabulary size (main vocabulary minus blank).
  std::size_t size() const { return cfg_.vocab - 1; }
  static std::size_t to_lm(std::size_t id) { return id - 1; }

  State initial_state() const {
    State s;
    for (const auto& c : cells_) s.layers.push_back(c.zero_state());
    return s;
  }

  // log p(. | history, label) over the LM vocabulary, and the advanced state.
  std::pair<Var, State> step(const State& state, std::size_t label) const {
    if (label == ctc::kBlank) throw std::invalid_argument("char lm: blank is not an LM token");
    if (label >= cfg_.vocab) throw std::invalid_argument("char lm: label out of range");
    State next;
    Var x = embed_.lookup(to_lm(label));
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      LstmState s = cells_[l].step(x, state.layers[l]);
      next.layers.push_back(s);
      x = s.h;
    }
    return {ad::log_softmax(out_(x)), next};
  }

  // Next-character negative log-likelihood of y followed by <eos>, with
  // <eos> also serving as the initial history.
  Var sequence_loss(const LabelSequence& y) const {
    State st = initial_state();
    std::size_t prev = cfg_.eos;
    std::vector<Var> picks;
    for (std::size_t u = 0; u <= y.size(); ++u) {
      auto [logp, next] = step(st, prev);
      const std::size_t target = u < y.size() ? y[u] : cfg_.eos;
      picks.push_back(ad::pick(logp, to_lm(target)));
      st = std::move(next);
      prev = target;
    }
    return ad::scale(ad::add_n(picks), -1.0);
  }

 private:
  CharLmConfig cfg_;
  ParamSet params_;
  Embedding embed_;
  std::vector<LstmCell> cells_;
  Linear out_;
};

inline std::pair<Var, CharLm::State> lm_step(const CharLm& lm, const CharLm::State& state,
                                             std::size_t label) {
  return lm.step(state, label);
}

// exp(total NLL / predicted tokens), <eos> counted as a token.
inline double perplexity(const CharLm& lm, const std::vector<LabelSequence>& corpus) {
  ad::NoGradGuard guard;
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& y : corpus) {
    nll += lm.sequence_loss(y).item();
    n += y.size() + 1;
  }
  return std::exp(nll / static_cast<double>(n));
}

struct LmTrainConfig {
  std::size_t epochs = 10;
  AdaDeltaConfig optimizer;
  // Called after each epoch with (epoch, training perplexity).
  std::function<void(std::size_t, double)> on_epoch;
};

// Trains on the transcripts one sentence per update, in corpus order.
inline void lm_fit(CharLm& lm, const std::vector<LabelSequence>& corpus, const LmTrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("lm_train: empty corpus");
  AdaDelta opt(lm.params(), cfg.optimizer);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (const auto& y : corpus) {
      lm.params().zero_grad();
      Var loss = lm.sequence_loss(y);
      ad::backward(loss);
      opt.step();
    }
    if (cfg.on_epoch) cfg.on_epoch(e + 1, perplexity(lm, corpus));
  }
  lm.params().zero_grad();
}

inline CharLm lm_train(const std::vector<LabelSequence>& corpus, const CharLmConfig& model_cfg,
                       const LmTrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("lm_train: empty corpus");
  CharLm lm(model_cfg);
  lm_fit(lm, corpus, cfg);
  return lm;
}

}  // namespace dcasr
