#pragma once

// Synthetic ambiguous-dialog corpus.
//
// Every dialog draws one topic. Its first utterance is "<filler> <topic
// word>"; each later utterance is "<filler> <ambiguous word>", where the
// ambiguous word is spelled with the topic's variant character. All
// variant characters share one acoustic cluster, so only the dialog history
// tells them apart. Fillers are drawn independently of the topic.
//
// Dialogs come in pairs with different topics whose later utterances share
// one acoustic realization. A learner that memorizes individual training
// samples therefore still cannot resolve the variant without context.
// With `paired` off every utterance is rendered on its own, which lets a
// model memorize a small corpus outright.
//
// Acoustics: each character class has a one-hot mean scaled by `scale`,
// frames add N(0, sigma^2) noise per dimension, and a pause class covers
// word gaps and the leading/trailing silence. Values are rounded to float32
// so the in-memory corpus matches what the feature files hold.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/batcher.hpp"
#include "dcasr/io.hpp"
#include "dcasr/vocab.hpp"

namespace dcasr {

struct SyntheticConfig {
  std::size_t topics = 2;       // N_t
  std::size_t dialogs = 20;     // N_d
  std::size_t utterances = 3;   // K, utterances per dialog
  std::uint64_t seed = 1;
  std::size_t min_frames = 4;   // frames per character, inclusive range
  std::size_t max_frames = 6;
  std::size_t edge_frames = 2;  // pause frames before and after the utterance
  double scale = 3.0;
  double sigma = 0.5;
  std::string id_prefix = "d";
  bool paired = true;
};

struct SyntheticCorpus {
  std::vector<Utterance> utterances;
  std::vector<std::size_t> dialog_topic;  // per dialog, in generation order
  Vocab vocab;
  std::size_t feat_dim = 0;
};

namespace synth {

inline const std::vector<std::string>& topic_words() {
  static const std::vector<std::string> w{"cat", "dog", "hen", "owl", "bee", "pup"};
  return w;
}
inline const std::vector<char>& variant_chars() {
  static const std::vector<char> v{'q', 'x', 'z', 'j', 'v', 'f'};
  return v;
}
inline const std::vector<std::string>& fillers() {
  static const std::vector<std::string> f{"hi", "so", "ok", "yes", "well", "now"};
  return f;
}
inline const std::string& ambiguous_stem() {
  static const std::string s = "ma";
  return s;
}

inline std::string ambiguous_word(std::size_t topic) { return ambiguous_stem() + variant_chars().at(topic); }

// Every transcript the generator can emit, for vocabulary construction.
inline std::vector<std::string> inventory(std::size_t topics) {
  std::vector<std::string> words(fillers());
  for (std::size_t t = 0; t < topics; ++t) {
    words.push_back(topic_words()[t]);
    words.push_back(ambiguous_word(t));
  }
  return words;
}

// Acoustic class of each character: variants share class 0, the pause is
// class 1, every other character gets its own class.
inline std::map<char, std::size_t> acoustic_classes(std::size_t topics) {
  std::map<char, std::size_t> cls;
  for (std::size_t t = 0; t < topics; ++t) cls[variant_chars()[t]] = 0;
  cls[' '] = 1;
  std::size_t next = 2;
  for (const auto& w : inventory(topics))
    for (char c : w)
      if (!cls.count(c)) cls[c] = next++;
  // Renumber the plain characters in sorted order so the layout does not
  // depend on the word list order.
  std::size_t k = 2;
  for (auto& [c, id] : cls)
    if (id >= 2) id = k++;
  return cls;
}

}  // namespace synth

inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.topics < 2) throw std::invalid_argument("synthetic: need at least 2 topics");
  if (cfg.topics > synth::topic_words().size()) {
    throw std::invalid_argument("synthetic: at most " + std::to_string(synth::topic_words().size()) + " topics");
  }
  if (cfg.utterances < 2) throw std::invalid_argument("synthetic: need at least 2 utterances per dialog");
  if (cfg.min_frames == 0 || cfg.min_frames > cfg.max_frames) {
    throw std::invalid_argument("synthetic: bad frame range");
  }
  SyntheticCorpus out;
  out.vocab = Vocab::from_texts(synth::inventory(cfg.topics));
  const auto classes = synth::acoustic_classes(cfg.topics);
  std::size_t n_classes = 0;
  for (const auto& [c, id] : classes) n_classes = std::max(n_classes, id + 1);
  out.feat_dim = n_classes;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_topic(0, cfg.topics - 1);
  std::uniform_int_distribution<std::size_t> pick_filler(0, synth::fillers().size() - 1);
  std::uniform_int_distribution<std::size_t> pick_frames(cfg.min_frames, cfg.max_frames);
  std::normal_distribution<double> noise(0.0, cfg.sigma);

  auto render = [&](const std::string& text) {
    std::vector<std::size_t> frames(cfg.edge_frames, classes.at(' '));
    for (char c : text) {
      const std::size_t n = pick_frames(rng);
      frames.insert(frames.end(), n, classes.at(c));
    }
    frames.insert(frames.end(), cfg.edge_frames, classes.at(' '));
    Tensor f(Shape{frames.size(), n_classes});
    for (std::size_t t = 0; t < frames.size(); ++t) {
      for (std::size_t d = 0; d < n_classes; ++d) {
        const double mean = d == frames[t] ? cfg.scale : 0.0;
        f(t, d) = static_cast<double>(static_cast<float>(mean + noise(rng)));
      }
    }
    return f;
  };

  const std::size_t width = std::to_string(cfg.dialogs).size();
  auto dialog_id = [&](std::size_t d) {
    const std::string n = std::to_string(d);
    return cfg.id_prefix + std::string(width - n.size(), '0') + n;
  };
  for (std::size_t d = 0; d < cfg.dialogs; d += 2) {
    const std::size_t members = std::min<std::size_t>(2, cfg.dialogs - d);
    std::size_t topics[2];
    topics[0] = pick_topic(rng);
    topics[1] = (topics[0] + 1 + std::uniform_int_distribution<std::size_t>(0, cfg.topics - 2)(rng)) % cfg.topics;
    std::vector<std::vector<Utterance>> dialogs(members);
    for (std::size_t m = 0; m < members; ++m) {
      out.dialog_topic.push_back(topics[m]);
      Utterance u;
      u.dialog_id = dialog_id(d + m);
      u.utt_id = u.dialog_id + "_u0";
      u.text = synth::fillers()[pick_filler(rng)] + " " + synth::topic_words()[topics[m]];
      u.features = render(u.text);
      dialogs[m].push_back(std::move(u));
    }
    for (std::size_t k = 1; k < cfg.utterances; ++k) {
      const std::string& filler = synth::fillers()[pick_filler(rng)];
      // Spelled with the first member's variant; every variant renders alike.
      const Tensor shared = render(filler + " " + synth::ambiguous_word(topics[0]));
      for (std::size_t m = 0; m < members; ++m) {
        Utterance u;
        u.dialog_id = dialog_id(d + m);
        u.utt_id = u.dialog_id + "_u" + std::to_string(k);
        u.text = filler + " " + synth::ambiguous_word(topics[m]);
        u.features = cfg.paired || m == 0 ? shared : render(u.text);
        dialogs[m].push_back(std::move(u));
      }
    }
    for (auto& dialog : dialogs) {
      double onset = 0.0;
      for (auto& u : dialog) {
        u.onset = onset;
        u.labels = out.vocab.encode(u.text, false);
        onset += 0.01 * static_cast<double>(u.features.rows()) + 0.5;
        out.utterances.push_back(std::move(u));
      }
    }
  }
  return out;
}

// Writes manifest.jsonl, feats/<utt_id>.fea, vocab.txt and ref.txt into dir.
inline void write_synthetic(const SyntheticCorpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "feats");
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::binary);
  std::ofstream ref(fs::path(dir) / "ref.txt", std::ios::binary);
  if (!manifest || !ref) throw std::runtime_error("synthetic: cannot write into " + dir);
  for (const auto& u : corpus.utterances) {
    const std::string rel = "feats/" + u.utt_id + ".fea";
    write_features((fs::path(dir) / rel).string(), u.features);
    manifest << manifest_record(u, rel) << '\n';
    ref << u.utt_id << '\t' << u.text << '\n';
  }
  corpus.vocab.save((fs::path(dir) / "vocab.txt").string());
}

}  // namespace dcasr
