#pragma once

// Joint CTC/attention model: shared encoder, CTC head, attention decoder
// and (for dialog-b) the context generator.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dcasr/autodiff.hpp"
#include "dcasr/batcher.hpp"
#include "dcasr/ctc.hpp"
#include "dcasr/decoder.hpp"
#include "dcasr/layers.hpp"

namespace dcasr {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::size_t eos = 1;
  std::size_t n_dialogs = 1;
  double dialog_loss_weight = 1.0;
  double init_range = 0.1;
  std::uint64_t seed = 1;
};

struct LossTerms {
  Var total;
  double ctc = 0.0;
  double attention = 0.0;
  double dialog = 0.0;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    std::mt19937_64 rng(cfg.seed);
    Initializer init{rng, cfg.init_range};
    encoder_ = Encoder(params_, cfg.encoder, init);
    ctc_head_ = Linear(params_, "ctc", encoder_.output_dim(), cfg.decoder.vocab, init);
    decoder_ = AttentionDecoder(params_, cfg.decoder, encoder_.output_dim(), init);
    if (cfg.decoder.mode == DecoderMode::kDialogB) {
      generator_ = ContextGenerator(params_, cfg.decoder.vocab, cfg.decoder.context_dim,
                                    cfg.n_dialogs, init);
    }
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }
  const AttentionDecoder& decoder() const { return decoder_; }
  AttentionDecoder& mutable_decoder() { return decoder_; }
  const ContextGenerator& generator() const { return generator_; }
  DecoderMode mode() const { return cfg_.decoder.mode; }
  std::size_t context_dim() const { return decoder_.context_dim(); }

  EncodedUtterance encode(const Tensor& features) const {
    return decoder_.prepare(encoder_.encode(features).h);
  }

  Var ctc_log_probs(const EncodedUtterance& enc) const {
    return ad::log_softmax(ctc_head_(enc.h));
  }

  // Context for the next sentence from a decoded (or teacher-forced)
  // trajectory: final state for dialog-a, pooled distributions for dialog-b.
  ContextVector next_context(const DecoderState& final_state,
                             const std::vector<Tensor>& label_log_probs) const {
    switch (mode()) {
      case DecoderMode::kBaseline: return ContextVector::zero(context_dim());
      case DecoderMode::kDialogA: return generate_context_a(final_state);
      case DecoderMode::kDialogB: {
        if (label_log_probs.empty()) return ContextVector::zero(context_dim());
        std::vector<Var> rows;
        for (const auto& lp : label_log_probs) rows.push_back(ad::exp(ad::constant(lp)));
        ContextVector c;
        c.value = generator_(ad::stack_rows(rows)).context.value();
        c.kind = ContextKind::kPooled;
        return c;
      }
    }
    return ContextVector::zero(context_dim());
  }

  // lambda * L_ctc + (1 - lambda) * L_att (+ w * L_dialog for dialog-b).
  // Stores this utterance's context for the dialog's next sentence. A null
  // utterance is a dummy slot: exact zero, store untouched.
  LossTerms utterance_loss(const Utterance* utt, std::size_t position, std::size_t dialog_index,
                           DialogContextStore& store, double lambda) const {
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must lie in [0, 1]");
    LossTerms out;
    if (utt == nullptr) {
      out.total = ad::constant(Tensor::scalar(0.0));
      return out;
    }
    const EncodedUtterance enc = encode(utt->features);
    Var l_ctc = ctc::loss(ctc_log_probs(enc), utt->labels);

    const ContextVector ctx = mode() == DecoderMode::kBaseline
                                  ? ContextVector::zero(context_dim())
                                  : store.lookup(utt->dialog_id, position, context_dim());
    auto tf = decoder_.teacher_force(enc, utt->labels, cfg_.eos, ctx);
    Var l_att = attention_loss(tf.log_probs, utt->labels, cfg_.eos);

    out.ctc = l_ctc.item();
    out.attention = l_att.item();
    out.total = ad::add(ad::scale(l_ctc, lambda), ad::scale(l_att, 1.0 - lambda));

    ContextVector next;
    if (mode() == DecoderMode::kDialogA) {
      next = generate_context_a(tf.final_state);
    } else if (mode() == DecoderMode::kDialogB) {
      if (utt->labels.empty()) {
        next = ContextVector::zero(context_dim());
      } else {
        std::vector<Var> rows;
        for (std::size_t u = 0; u < utt->labels.size(); ++u) rows.push_back(ad::exp(tf.log_probs[u]));
        GeneratedContext gen = generator_(ad::stack_rows(rows));
        if (dialog_index >= cfg_.n_dialogs) {
          throw std::out_of_range("dialog index " + std::to_string(dialog_index) +
                                  " outside classifier of size " + std::to_string(cfg_.n_dialogs));
        }
        Var l_dialog = dialog_loss(gen.logits, dialog_index);
        out.dialog = l_dialog.item();
        out.total = ad::add(out.total, ad::scale(l_dialog, cfg_.dialog_loss_weight));
        next.value = gen.context.value();
        next.kind = ContextKind::kPooled;
      }
    }
    if (mode() != DecoderMode::kBaseline) store.update(utt->dialog_id, position, std::move(next));
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamSet params_;
  Encoder encoder_;
  Linear ctc_head_;
  AttentionDecoder decoder_;
  ContextGenerator generator_;
};

}  // namespace dcasr
