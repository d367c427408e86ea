#pragma once

// Dialog-serialized minibatching. Dialogs are taken in groups of B; slot j
// of every minibatch in a group belongs to one dialog and walks through its
// utterances in onset order, padded with dummies once the dialog runs out.
// The next group starts only after the longest dialog of the current group
// is exhausted. Plans are deterministic and never shuffled.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/autodiff.hpp"
#include "dcasr/ctc.hpp"

namespace dcasr {

struct Utterance {
  std::string dialog_id;
  std::string utt_id;
  double onset = 0.0;
  Tensor features;  // [T, D]
  LabelSequence labels;
  std::string text;
};

struct Slot {
  std::optional<std::size_t> utterance;  // index into the input list; empty = dummy
  std::size_t position = 0;              // index of the utterance within its dialog
  std::string dialog_id;                 // empty for slots of an absent dialog

  bool real() const { return utterance.has_value(); }
};

struct SerializedBatchPlan {
  std::size_t batch_size = 0;
  std::vector<std::vector<Slot>> schedule;

  std::vector<bool> mask(std::size_t minibatch) const {
    std::vector<bool> m;
    for (const auto& s : schedule.at(minibatch)) m.push_back(s.real());
    return m;
  }
  std::size_t size() const { return schedule.size(); }
};

// Utterances of each dialog in onset order (ties by utt_id), dialogs in
// lexicographic id order.
inline std::map<std::string, std::vector<std::size_t>> group_dialogs(
    const std::vector<Utterance>& utts) {
  std::map<std::string, std::vector<std::size_t>> by_dialog;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    if (!ids.insert(utts[i].utt_id).second) {
      throw std::invalid_argument("duplicate utt_id " + utts[i].utt_id);
    }
    if (utts[i].dialog_id.empty()) {
      throw std::invalid_argument("utterance " + utts[i].utt_id + " has no dialog_id");
    }
    by_dialog[utts[i].dialog_id].push_back(i);
  }
  for (auto& [id, idx] : by_dialog) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (utts[a].onset != utts[b].onset) return utts[a].onset < utts[b].onset;
      return utts[a].utt_id < utts[b].utt_id;
    });
  }
  return by_dialog;
}

inline SerializedBatchPlan build_plan(const std::vector<Utterance>& utts, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("build_plan: batch size must be >= 1");
  SerializedBatchPlan plan;
  plan.batch_size = batch_size;
  const auto by_dialog = group_dialogs(utts);
  std::vector<const std::pair<const std::string, std::vector<std::size_t>>*> dialogs;
  for (const auto& d : by_dialog) dialogs.push_back(&d);
  for (std::size_t g = 0; g < dialogs.size(); g += batch_size) {
    const std::size_t end = std::min(dialogs.size(), g + batch_size);
    std::size_t longest = 0;
    for (std::size_t d = g; d < end; ++d) longest = std::max(longest, dialogs[d]->second.size());
    for (std::size_t t = 0; t < longest; ++t) {
      std::vector<Slot> mb(batch_size);
      for (std::size_t j = 0; j < batch_size; ++j) {
        const std::size_t d = g + j;
        if (d >= end) continue;
        mb[j].dialog_id = dialogs[d]->first;
        if (t < dialogs[d]->second.size()) {
          mb[j].utterance = dialogs[d]->second[t];
          mb[j].position = t;
        }
      }
      plan.schedule.push_back(std::move(mb));
    }
  }
  return plan;
}

// One line per minibatch: slot utt_ids separated by spaces, dummies as "∅".
inline std::string dump_plan(const SerializedBatchPlan& plan, const std::vector<Utterance>& utts) {
  std::ostringstream os;
  for (const auto& mb : plan.schedule) {
    for (std::size_t j = 0; j < mb.size(); ++j) {
      if (j) os << ' ';
      os << (mb[j].real() ? utts[*mb[j].utterance].utt_id : std::string("∅"));
    }
    os << '\n';
  }
  return os.str();
}

// Dummy slot payload: one zero frame, no labels.
inline Utterance dummy_utterance(std::size_t feat_dim) {
  Utterance u;
  u.features = Tensor(Shape{1, feat_dim});
  return u;
}

// Sum of the losses whose mask is set. Masked losses are not connected to
// the result, so they receive no gradient at all.
inline ad::Var mask_losses(const std::vector<ad::Var>& losses, const std::vector<bool>& mask) {
  if (losses.size() != mask.size()) {
    throw std::invalid_argument("mask_losses: " + std::to_string(losses.size()) +
                                " losses vs " + std::to_string(mask.size()) + " mask entries");
  }
  std::vector<ad::Var> kept{ad::constant(Tensor::scalar(0.0))};
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (mask[i]) kept.push_back(losses[i]);
  }
  return ad::add_n(kept);
}

}  // namespace dcasr
