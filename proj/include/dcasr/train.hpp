#pragma once

// Training loop over the dialog-serialized plan, and corpus-level helpers
// for decoding and scoring.

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/batcher.hpp"
#include "dcasr/checkpoint.hpp"
#include "dcasr/config.hpp"
#include "dcasr/decode.hpp"
#include "dcasr/model.hpp"
#include "dcasr/optim.hpp"
#include "dcasr/score.hpp"
#include "dcasr/vocab.hpp"

namespace dcasr {

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t utterances = 0;
  double loss = 0.0;  // means over real utterances
  double ctc = 0.0;
  double attention = 0.0;
  double dialog = 0.0;
};

struct TrainOptions {
  double lambda = 0.5;
  std::size_t epochs = 15;
  std::size_t batch_size = 30;
  AdaDeltaConfig optimizer;
  std::string checkpoint_dir;  // empty: keep checkpoints in memory only
  std::string config_echo;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochStats> history;
  Checkpoint last;
};

// Index of every dialog in lexicographic id order; the dialog classifier
// of dialog-b uses these as class labels.
inline std::map<std::string, std::size_t> dialog_indices(const std::vector<Utterance>& utts) {
  std::map<std::string, std::size_t> idx;
  for (const auto& [id, members] : group_dialogs(utts)) idx.emplace(id, idx.size());
  return idx;
}

// One pass over the plan. The context store starts empty and is fed in
// plan order, so every non-initial utterance sees the context its dialog
// predecessor left in the previous minibatch.
inline EpochStats train_epoch(Model& model, AdaDelta& opt, const std::vector<Utterance>& utts,
                              const SerializedBatchPlan& plan,
                              const std::map<std::string, std::size_t>& dialog_index, double lambda) {
  EpochStats stats;
  DialogContextStore store;
  for (std::size_t b = 0; b < plan.size(); ++b) {
    const auto& mb = plan.schedule[b];
    std::vector<Var> losses;
    for (const Slot& slot : mb) {
      if (!slot.real()) {
        losses.push_back(model.utterance_loss(nullptr, slot.position, 0, store, lambda).total);
        continue;
      }
      const Utterance& u = utts[*slot.utterance];
      LossTerms terms = model.utterance_loss(&u, slot.position, dialog_index.at(u.dialog_id), store, lambda);
      stats.loss += terms.total.item();
      stats.ctc += terms.ctc;
      stats.attention += terms.attention;
      stats.dialog += terms.dialog;
      ++stats.utterances;
      losses.push_back(terms.total);
    }
    Var total = mask_losses(losses, plan.mask(b));
    model.params().zero_grad();
    ad::backward(total);
    opt.step();
  }
  model.params().zero_grad();
  if (stats.utterances) {
    const double n = static_cast<double>(stats.utterances);
    stats.loss /= n;
    stats.ctc /= n;
    stats.attention /= n;
    stats.dialog /= n;
  }
  return stats;
}

inline TrainResult train(Model& model, const std::vector<Utterance>& utts, const TrainOptions& opts) {
  if (utts.empty()) throw std::invalid_argument("train: empty training set");
  const SerializedBatchPlan plan = build_plan(utts, opts.batch_size);
  const auto index = dialog_indices(utts);
  if (model.mode() == DecoderMode::kDialogB && index.size() > model.config().n_dialogs) {
    throw std::invalid_argument("train: " + std::to_string(index.size()) + " dialogs but the classifier has " +
                                std::to_string(model.config().n_dialogs) + " classes");
  }
  if (!opts.checkpoint_dir.empty()) std::filesystem::create_directories(opts.checkpoint_dir);
  AdaDelta opt(model.params(), opts.optimizer);
  TrainResult result;
  for (std::size_t e = 1; e <= opts.epochs; ++e) {
    EpochStats s = train_epoch(model, opt, utts, plan, index, opts.lambda);
    s.epoch = e;
    result.history.push_back(s);
    result.last = capture_checkpoint(model.params(), &opt, opts.config_echo, e);
    if (!opts.checkpoint_dir.empty()) {
      const std::filesystem::path dir(opts.checkpoint_dir);
      save_checkpoint(result.last, (dir / ("epoch" + std::to_string(e) + ".dckp")).string());
      save_checkpoint(result.last, (dir / "last.dckp").string());
    }
    if (opts.on_epoch) opts.on_epoch(s);
  }
  return result;
}

// Mean loss over the corpus with the current parameters, no update. The
// context store is fed in plan order as during training.
inline EpochStats evaluate_loss(const Model& model, const std::vector<Utterance>& utts, double lambda) {
  ad::NoGradGuard no_grad;
  const auto index = dialog_indices(utts);
  EpochStats stats;
  DialogContextStore store;
  for (const auto& [id, members] : group_dialogs(utts)) {
    for (std::size_t k = 0; k < members.size(); ++k) {
      const Utterance& u = utts[members[k]];
      LossTerms t = model.utterance_loss(&u, k, index.at(id), store, lambda);
      stats.loss += t.total.item();
      stats.ctc += t.ctc;
      stats.attention += t.attention;
      stats.dialog += t.dialog;
      ++stats.utterances;
    }
  }
  if (stats.utterances) {
    const double n = static_cast<double>(stats.utterances);
    stats.loss /= n;
    stats.ctc /= n;
    stats.attention /= n;
    stats.dialog /= n;
  }
  return stats;
}

// Decodes every dialog in id order; utterances within a dialog in onset order.
inline std::vector<UtteranceDecode> decode_corpus(const Model& model, const CharLm* lm,
                                                  const std::vector<Utterance>& utts,
                                                  const DecodeConfig& cfg) {
  std::vector<UtteranceDecode> out;
  for (const auto& [id, members] : group_dialogs(utts)) {
    std::vector<const Utterance*> dialog;
    for (std::size_t i : members) dialog.push_back(&utts[i]);
    auto res = decode_dialog(model, lm, dialog, cfg);
    out.insert(out.end(), res.begin(), res.end());
  }
  return out;
}

inline EditCounts corpus_cer(const std::vector<UtteranceDecode>& hyps, const std::vector<Utterance>& utts,
                             const Vocab& vocab) {
  std::map<std::string, std::string> hyp, ref;
  for (const auto& h : hyps) hyp[h.utt_id] = vocab.decode(h.labels);
  for (const auto& u : utts) ref[u.utt_id] = u.text;
  return score_cer(hyp, ref);
}

}  // namespace dcasr
