#pragma once

// Run configuration: a flat "key = value" text file. '#' starts a comment.
// Every key has a default; unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/decode.hpp"
#include "dcasr/model.hpp"
#include "dcasr/optim.hpp"

namespace dcasr {

struct RunConfig {
  // model
  std::string mode = "baseline";
  std::size_t feat_dim = 83;
  std::size_t enc_layers = 4;
  std::size_t enc_hidden = 320;
  std::size_t subsample = 4;
  std::size_t dec_embed = 64;
  std::size_t dec_hidden = 300;
  std::size_t att_dim = 320;
  std::size_t att_filters = 10;
  std::size_t att_width = 100;
  std::size_t context_dim = 300;
  bool bypass_combiner = false;
  std::size_t n_dialogs = 0;  // 0: number of dialogs in the training manifest
  double init_range = 0.1;
  // objective
  double lambda = 0.5;
  double dialog_loss_weight = 1.0;
  // optimizer
  double rho = 0.95;
  double eps = 1e-8;
  double clip = 5.0;
  // schedule
  std::size_t batch_size = 30;
  std::size_t epochs = 15;
  std::uint64_t seed = 1;
  // paths
  std::string manifest;
  std::string vocab;
  std::string out_dir = ".";
  std::string bootstrap;
  std::string lm_checkpoint;
  bool allow_unk = true;
  // decoding
  std::size_t beam = 20;
  double ctc_weight = 0.3;
  double lm_weight = 0.3;
  double length_penalty = 0.1;
  std::size_t max_len = 0;
  // character LM
  std::size_t lm_embed = 64;
  std::size_t lm_hidden = 650;
  std::size_t lm_layers = 2;
  std::size_t lm_epochs = 10;

  struct Key {
    std::string name;
    std::string doc;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
  };

  static const std::vector<Key>& keys();

  static RunConfig parse(const std::string& text) {
    RunConfig cfg;
    std::map<std::string, const Key*> index;
    for (const auto& k : keys()) index[k.name] = &k;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      auto it = index.find(key);
      if (it == index.end()) {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
      try {
        it->second->set(cfg, value);
      } catch (const std::exception& e) {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad value for " + key +
                                    ": " + e.what());
      }
    }
    cfg.validate();
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  // Every key in declaration order; parse(to_text()) reproduces the config.
  std::string to_text() const {
    std::string out;
    for (const auto& k : keys()) out += k.name + " = " + k.get(*this) + "\n";
    return out;
  }

  void validate() const {
    parse_mode(mode);
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("config: lambda must lie in [0, 1]");
    if (batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
    if (subsample == 0) throw std::invalid_argument("config: subsample must be >= 1");
    if (!(clip > 0.0)) throw std::invalid_argument("config: clip must be > 0");
    decode_config().validate();
  }

  ModelConfig model_config(std::size_t vocab_size, std::size_t eos, std::size_t dialogs) const {
    ModelConfig m;
    m.encoder = {feat_dim, enc_layers, enc_hidden, subsample};
    m.decoder.vocab = vocab_size;
    m.decoder.embed = dec_embed;
    m.decoder.hidden = dec_hidden;
    m.decoder.attention = {att_dim, att_filters, att_width};
    m.decoder.mode = parse_mode(mode);
    m.decoder.context_dim = context_dim;
    m.decoder.bypass_combiner = bypass_combiner;
    m.eos = eos;
    m.n_dialogs = dialogs;
    m.dialog_loss_weight = dialog_loss_weight;
    m.init_range = init_range;
    m.seed = seed;
    return m;
  }

  AdaDeltaConfig optimizer() const { return {rho, eps, clip}; }
  DecodeConfig decode_config() const { return {beam, ctc_weight, lm_weight, length_penalty, max_len}; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
};

namespace config_detail {

inline std::size_t to_size(const std::string& v) {
  std::size_t pos = 0;
  const unsigned long long x = std::stoull(v, &pos);
  if (pos != v.size() || v.front() == '-') throw std::invalid_argument("not a non-negative integer");
  return static_cast<std::size_t>(x);
}

inline double to_double(const std::string& v) {
  std::size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not a number");
  return x;
}

inline bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("not a boolean");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T>
RunConfig::Key size_key(std::string name, std::string doc, T RunConfig::*m) {
  return {std::move(name), std::move(doc),
          [m](RunConfig& c, const std::string& v) { c.*m = static_cast<T>(to_size(v)); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

inline RunConfig::Key real_key(std::string name, std::string doc, double RunConfig::*m) {
  return {std::move(name), std::move(doc), [m](RunConfig& c, const std::string& v) { c.*m = to_double(v); },
          [m](const RunConfig& c) { return fmt(c.*m); }};
}

inline RunConfig::Key bool_key(std::string name, std::string doc, bool RunConfig::*m) {
  return {std::move(name), std::move(doc), [m](RunConfig& c, const std::string& v) { c.*m = to_bool(v); },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

inline RunConfig::Key text_key(std::string name, std::string doc, std::string RunConfig::*m) {
  return {std::move(name), std::move(doc), [m](RunConfig& c, const std::string& v) { c.*m = v; },
          [m](const RunConfig& c) { return c.*m; }};
}

}  // namespace config_detail

inline const std::vector<RunConfig::Key>& RunConfig::keys() {
  using namespace config_detail;
  static const std::vector<Key> table{
      text_key("mode", "decoder variant: baseline | dialog-a | dialog-b (default baseline)", &RunConfig::mode),
      size_key("feat_dim", "acoustic feature dimension (default 83)", &RunConfig::feat_dim),
      size_key("enc_layers", "bidirectional LSTM encoder layers (default 4)", &RunConfig::enc_layers),
      size_key("enc_hidden", "encoder cells per direction (default 320)", &RunConfig::enc_hidden),
      size_key("subsample", "total encoder time subsampling factor (default 4)", &RunConfig::subsample),
      size_key("dec_embed", "decoder label embedding size (default 64)", &RunConfig::dec_embed),
      size_key("dec_hidden", "decoder LSTM cells (default 300)", &RunConfig::dec_hidden),
      size_key("att_dim", "attention scoring dimension (default 320)", &RunConfig::att_dim),
      size_key("att_filters", "location filters (default 10)", &RunConfig::att_filters),
      size_key("att_width", "location filter width (default 100)", &RunConfig::att_width),
      size_key("context_dim", "pooled context size for dialog-b (default 300)", &RunConfig::context_dim),
      bool_key("bypass_combiner", "skip the context combiner (default false)", &RunConfig::bypass_combiner),
      size_key("n_dialogs", "dialog classes for dialog-b; 0 = count in manifest (default 0)", &RunConfig::n_dialogs),
      real_key("init_range", "uniform initialization range (default 0.1)", &RunConfig::init_range),
      real_key("lambda", "CTC weight in the training objective (default 0.5)", &RunConfig::lambda),
      real_key("dialog_loss_weight", "weight of the dialog classification loss (default 1)", &RunConfig::dialog_loss_weight),
      real_key("rho", "AdaDelta decay (default 0.95)", &RunConfig::rho),
      real_key("eps", "AdaDelta epsilon (default 1e-8)", &RunConfig::eps),
      real_key("clip", "global gradient-norm clip (default 5)", &RunConfig::clip),
      size_key("batch_size", "dialogs per minibatch (default 30)", &RunConfig::batch_size),
      size_key("epochs", "training epochs (default 15)", &RunConfig::epochs),
      size_key("seed", "seed for every random choice (default 1)", &RunConfig::seed),
      text_key("manifest", "training manifest path (default empty)", &RunConfig::manifest),
      text_key("vocab", "vocabulary path (default empty)", &RunConfig::vocab),
      text_key("out_dir", "checkpoint directory (default .)", &RunConfig::out_dir),
      text_key("bootstrap", "baseline checkpoint to start from (default empty)", &RunConfig::bootstrap),
      text_key("lm_checkpoint", "character LM checkpoint used for decoding (default empty)", &RunConfig::lm_checkpoint),
      bool_key("allow_unk", "map unknown characters to <unk> (default true)", &RunConfig::allow_unk),
      size_key("beam", "beam width (default 20)", &RunConfig::beam),
      real_key("ctc_weight", "CTC weight alpha in decoding (default 0.3)", &RunConfig::ctc_weight),
      real_key("lm_weight", "LM weight beta in decoding (default 0.3)", &RunConfig::lm_weight),
      real_key("length_penalty", "per-label reward gamma (default 0.1)", &RunConfig::length_penalty),
      size_key("max_len", "maximum output labels; 0 = encoder frames (default 0)", &RunConfig::max_len),
      size_key("lm_embed", "LM embedding size (default 64)", &RunConfig::lm_embed),
      size_key("lm_hidden", "LM cells per layer (default 650)", &RunConfig::lm_hidden),
      size_key("lm_layers", "LM layers (default 2)", &RunConfig::lm_layers),
      size_key("lm_epochs", "LM training epochs (default 10)", &RunConfig::lm_epochs),
  };
  return table;
}

}  // namespace dcasr
