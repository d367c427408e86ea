#pragma once

// Label-synchronous joint beam search over attention, CTC-prefix and
// character-LM scores, and sequential dialog decoding that chains the
// context of each best hypothesis into the next sentence.

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/batcher.hpp"
#include "dcasr/char_lm.hpp"
#include "dcasr/ctc.hpp"
#include "dcasr/model.hpp"

namespace dcasr {

struct DecodeConfig {
  std::size_t beam = 20;
  double ctc_weight = 0.3;      // alpha
  double lm_weight = 0.3;       // beta
  double length_penalty = 0.1;  // gamma, additive reward per label
  std::size_t max_len = 0;      // 0: number of encoder frames

  void validate() const {
    if (beam < 1) throw std::invalid_argument("decode: beam must be >= 1");
    if (ctc_weight < 0.0 || ctc_weight > 1.0) throw std::invalid_argument("decode: ctc weight must lie in [0, 1]");
    if (lm_weight < 0.0) throw std::invalid_argument("decode: lm weight must be >= 0");
  }
};

struct Hypothesis {
  LabelSequence prefix;
  bool ended = false;
  double att = 0.0;  // log p_att(prefix [, <eos>])
  double ctc = 0.0;  // log CTC prefix probability, or exact probability once ended
  double lm = 0.0;   // log p_lm(prefix [, <eos>])
  double score = 0.0;
  DecoderState decoder;
  CharLm::State lm_state;
  ctc::PrefixScorer::State ctc_state;
  std::vector<Tensor> label_log_probs;  // decoder distribution at each emitted label
};

inline double combined_score(const Hypothesis& h, const DecodeConfig& cfg) {
  return cfg.ctc_weight * h.ctc + (1.0 - cfg.ctc_weight) * h.att + cfg.lm_weight * h.lm +
         cfg.length_penalty * static_cast<double>(h.prefix.size());
}

// Higher score first; ties by lexicographic prefix, shorter/ended first.
inline bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.prefix != b.prefix) return a.prefix < b.prefix;
  return a.ended && !b.ended;
}

// Completed hypotheses, best first. Hypotheses that reach the maximum
// length can only be extended by <eos>, so the list is never empty.
struct BeamResult {
  std::vector<Hypothesis> ranked;
};

// Every live hypothesis spawns one ended candidate, which goes straight to
// the completed pool, and one extension per emitting label; the best
// `beam` extensions stay live. Search stops once no live hypothesis can
// overtake the best completed one: attention, LM and CTC log scores never
// grow under extension, so the only possible gain is the length reward.
inline BeamResult beam_search(const Model& model, const CharLm* lm, const Tensor& features,
                              const ContextVector& ctx, const DecodeConfig& cfg) {
  cfg.validate();
  ad::NoGradGuard no_grad;
  const std::size_t eos = model.config().eos;
  const std::size_t V = model.config().decoder.vocab;
  if (lm && lm->config().vocab != V) throw std::invalid_argument("decode: LM vocabulary differs from model");
  const EncodedUtterance enc = model.encode(features);
  const ctc::PrefixScorer scorer(model.ctc_log_probs(enc).value());
  const std::size_t max_len = cfg.max_len ? cfg.max_len : enc.frames;

  Hypothesis root;
  root.decoder = model.decoder().initial_state(enc);
  if (lm) root.lm_state = lm->initial_state();
  root.ctc_state = scorer.initial();
  root.score = combined_score(root, cfg);

  std::vector<Hypothesis> live{root};
  std::vector<Hypothesis> completed;
  for (std::size_t len = 0; !live.empty(); ++len) {
    std::vector<Hypothesis> candidates;
    for (const Hypothesis& hyp : live) {
      const std::size_t prev = hyp.prefix.empty() ? eos : hyp.prefix.back();
      DecoderStep step = model.decoder().step(hyp.decoder, enc, prev, ctx);
      const Tensor& att = step.log_probs.value();
      Tensor lm_lp;
      CharLm::State lm_next;
      if (lm) {
        auto [lp, st] = lm->step(hyp.lm_state, prev);
        lm_lp = lp.value();
        lm_next = std::move(st);
      }

      Hypothesis end = hyp;
      end.ended = true;
      end.att += att[eos];
      end.ctc = scorer.final_log_prob(hyp.ctc_state);
      if (lm) end.lm += lm_lp[CharLm::to_lm(eos)];
      end.decoder = step.state;
      end.score = combined_score(end, cfg);
      completed.push_back(std::move(end));

      if (len >= max_len) continue;
      for (std::size_t c = 0; c < V; ++c) {
        if (c == ctc::kBlank || c == eos) continue;
        auto ext = scorer.extend(hyp.ctc_state, c);
        Hypothesis h;
        h.prefix = hyp.prefix;
        h.prefix.push_back(c);
        h.att = hyp.att + att[c];
        h.ctc = ext.log_prob;
        h.lm = lm ? hyp.lm + lm_lp[CharLm::to_lm(c)] : 0.0;
        h.decoder = step.state;
        h.lm_state = lm_next;
        h.ctc_state = std::move(ext.state);
        h.label_log_probs = hyp.label_log_probs;
        h.label_log_probs.push_back(att);
        h.score = combined_score(h, cfg);
        candidates.push_back(std::move(h));
      }
    }
    const std::size_t keep = std::min(cfg.beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(keep),
                      candidates.end(), hypothesis_before);
    candidates.resize(keep);
    live = std::move(candidates);
    if (live.empty()) break;

    double best_done = -std::numeric_limits<double>::infinity();
    for (const auto& h : completed) best_done = std::max(best_done, h.score);
    const double reward_left = std::max(0.0, cfg.length_penalty) * static_cast<double>(max_len - (len + 1));
    bool open = false;
    for (const auto& h : live) open = open || h.score + reward_left >= best_done;
    if (!open) live.clear();
  }

  BeamResult result;
  std::sort(completed.begin(), completed.end(), hypothesis_before);
  result.ranked = std::move(completed);
  return result;
}

struct UtteranceDecode {
  std::string utt_id;
  LabelSequence labels;
  double score = 0.0;
};

// Decodes one dialog's utterances in onset order. The first utterance sees
// the zero context, each later one the context of its predecessor's best
// hypothesis.
inline std::vector<UtteranceDecode> decode_dialog(const Model& model, const CharLm* lm,
                                                  const std::vector<const Utterance*>& dialog,
                                                  const DecodeConfig& cfg) {
  for (std::size_t k = 1; k < dialog.size(); ++k) {
    if (dialog[k]->onset < dialog[k - 1]->onset) {
      throw std::invalid_argument("decode_dialog: utterance " + dialog[k]->utt_id +
                                  " precedes " + dialog[k - 1]->utt_id + " in onset time");
    }
  }
  ad::NoGradGuard no_grad;
  std::vector<UtteranceDecode> out;
  ContextVector ctx = ContextVector::zero(model.context_dim());
  for (const Utterance* u : dialog) {
    BeamResult r = beam_search(model, lm, u->features, ctx, cfg);
    const Hypothesis& best = r.ranked.front();
    out.push_back({u->utt_id, best.prefix, best.score});
    ctx = model.next_context(best.decoder, best.label_log_probs);
  }
  return out;
}

}  // namespace dcasr
