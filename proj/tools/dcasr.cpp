#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "dcasr/char_lm.hpp"
#include "dcasr/checkpoint.hpp"
#include "dcasr/config.hpp"
#include "dcasr/decode.hpp"
#include "dcasr/io.hpp"
#include "dcasr/model.hpp"
#include "dcasr/score.hpp"
#include "dcasr/synth.hpp"
#include "dcasr/train.hpp"
#include "dcasr/vocab.hpp"

namespace fs = std::filesystem;
using namespace dcasr;

namespace {

Vocab require_vocab(const RunConfig& cfg) {
  if (cfg.vocab.empty()) throw std::invalid_argument("config: vocab path is required");
  return Vocab::load(cfg.vocab);
}

std::vector<Utterance> require_manifest(const RunConfig& cfg, const Vocab& vocab, const std::string& path) {
  const std::string p = path.empty() ? cfg.manifest : path;
  if (p.empty()) throw std::invalid_argument("config: manifest path is required");
  return load_manifest(p, vocab, {cfg.allow_unk});
}

int cmd_train(const std::string& config_path) {
  RunConfig cfg = RunConfig::load(config_path);
  const Vocab vocab = require_vocab(cfg);
  const auto utts = require_manifest(cfg, vocab, "");
  if (cfg.n_dialogs == 0) cfg.n_dialogs = dialog_indices(utts).size();
  Model model(cfg.model_config(vocab.size(), vocab.eos(), cfg.n_dialogs));
  std::cout << "train: " << utts.size() << " utterances, " << cfg.n_dialogs << " dialogs, "
            << model.params().scalar_count() << " parameters, mode " << cfg.mode << "\n";
  if (!cfg.bootstrap.empty()) {
    const PartialLoadReport rep = load_partial(model.params(), load_checkpoint(cfg.bootstrap));
    std::cout << "bootstrap: loaded " << rep.loaded.size() << " tensors from " << cfg.bootstrap << "\n";
    for (const auto& n : rep.initialized) std::cout << "bootstrap: initialized " << n << "\n";
  }
  TrainOptions opts;
  opts.lambda = cfg.lambda;
  opts.epochs = cfg.epochs;
  opts.batch_size = cfg.batch_size;
  opts.optimizer = cfg.optimizer();
  opts.checkpoint_dir = cfg.out_dir;
  opts.config_echo = cfg.to_text();
  const auto start = std::chrono::steady_clock::now();
  opts.on_epoch = [&](const EpochStats& s) {
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("epoch %zu loss %.6f ctc %.6f att %.6f dialog %.6f (%.1fs)\n", s.epoch, s.loss, s.ctc,
                s.attention, s.dialog, sec);
    std::fflush(stdout);
  };
  const TrainResult res = train(model, utts, opts);
  std::printf("checkpoint %s hash %016llx\n", (fs::path(cfg.out_dir) / "last.dckp").string().c_str(),
              static_cast<unsigned long long>(checkpoint_hash(serialize_checkpoint(res.last))));
  return 0;
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt, const Vocab& vocab) {
  const RunConfig arch = RunConfig::parse(ckpt.config);
  auto model = std::make_unique<Model>(arch.model_config(vocab.size(), vocab.eos(), arch.n_dialogs));
  restore_checkpoint(model->params(), nullptr, ckpt);
  return model;
}

std::unique_ptr<CharLm> lm_from_checkpoint(const Checkpoint& ckpt, const Vocab& vocab) {
  const RunConfig arch = RunConfig::parse(ckpt.config);
  CharLmConfig lc{vocab.size(), vocab.eos(), arch.lm_embed, arch.lm_hidden, arch.lm_layers, arch.init_range,
                  arch.seed};
  auto lm = std::make_unique<CharLm>(lc);
  restore_checkpoint(lm->params(), nullptr, ckpt);
  return lm;
}

int cmd_decode(const std::string& config_path, const std::string& ckpt_path, const std::string& manifest,
               const std::string& out_path) {
  const RunConfig cfg = RunConfig::load(config_path);
  const Vocab vocab = require_vocab(cfg);
  const auto utts = require_manifest(cfg, vocab, manifest);
  const auto model = model_from_checkpoint(load_checkpoint(ckpt_path), vocab);
  std::unique_ptr<CharLm> lm;
  if (!cfg.lm_checkpoint.empty() && cfg.lm_weight > 0.0) lm = lm_from_checkpoint(load_checkpoint(cfg.lm_checkpoint), vocab);
  const auto hyps = decode_corpus(*model, lm.get(), utts, cfg.decode_config());
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot write " + out_path);
  }
  std::ostream& os = out_path.empty() ? std::cout : file;
  for (const auto& h : hyps) {
    char score[32];
    std::snprintf(score, sizeof score, "%.6f", h.score);
    os << h.utt_id << '\t' << vocab.decode(h.labels) << '\t' << score << '\n';
  }
  return 0;
}

int cmd_lm_train(const std::string& config_path) {
  const RunConfig cfg = RunConfig::load(config_path);
  const Vocab vocab = require_vocab(cfg);
  if (cfg.manifest.empty()) throw std::invalid_argument("config: manifest path is required");
  std::vector<LabelSequence> corpus;
  for (const auto& t : manifest_texts(cfg.manifest)) corpus.push_back(vocab.encode(t, cfg.allow_unk));
  CharLmConfig lc{vocab.size(), vocab.eos(), cfg.lm_embed, cfg.lm_hidden, cfg.lm_layers, cfg.init_range, cfg.seed};
  LmTrainConfig tc;
  tc.epochs = cfg.lm_epochs;
  tc.optimizer = cfg.optimizer();
  tc.on_epoch = [](std::size_t e, double ppl) {
    std::printf("lm epoch %zu perplexity %.4f\n", e, ppl);
    std::fflush(stdout);
  };
  CharLm lm = lm_train(corpus, lc, tc);
  fs::create_directories(cfg.out_dir);
  const std::string path = (fs::path(cfg.out_dir) / "lm.dckp").string();
  save_checkpoint(capture_checkpoint(lm.params(), nullptr, cfg.to_text(), cfg.lm_epochs), path);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_score(const std::string& ref, const std::string& hyp) {
  const EditCounts c = score_cer(read_transcripts(hyp), read_transcripts(ref));
  std::printf("CER %.4f%% (%zu / %zu)  Sub %zu  Del %zu  Ins %zu\n", 100.0 * c.cer(), c.errors(), c.ref_len,
              c.sub, c.del, c.ins);
  return 0;
}

int cmd_dump_plan(const std::string& config_path, const std::string& manifest) {
  const RunConfig cfg = RunConfig::load(config_path);
  const Vocab vocab = require_vocab(cfg);
  const auto utts = require_manifest(cfg, vocab, manifest);
  std::cout << dump_plan(build_plan(utts, cfg.batch_size), utts);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialog-context joint CTC/attention speech recognizer"};
  app.require_subcommand(1);

  std::string config, checkpoint, manifest, out, ref, hyp;

  auto* train_cmd = app.add_subcommand("train", "train a model from a run configuration");
  train_cmd->add_option("--config", config, "run configuration file")->required();

  auto* decode_cmd = app.add_subcommand("decode", "decode a manifest, one 'utt_id<TAB>text<TAB>score' line each");
  decode_cmd->add_option("--config", config, "run configuration (decoding keys, vocab, lm)")->required();
  decode_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  decode_cmd->add_option("--manifest", manifest, "manifest to decode")->required();
  decode_cmd->add_option("--out", out, "write hypotheses here instead of stdout");

  auto* lm_cmd = app.add_subcommand("lm-train", "train the character LM on the manifest transcripts");
  lm_cmd->add_option("--config", config, "run configuration file")->required();

  SyntheticConfig syn;
  auto* synth_cmd = app.add_subcommand("gen-synth", "write a synthetic ambiguous-dialog corpus");
  synth_cmd->add_option("--out", out, "output directory")->required();
  synth_cmd->add_option("--topics", syn.topics, "number of topics")->capture_default_str();
  synth_cmd->add_option("--dialogs", syn.dialogs, "number of dialogs")->capture_default_str();
  synth_cmd->add_option("--utterances", syn.utterances, "utterances per dialog")->capture_default_str();
  synth_cmd->add_option("--seed", syn.seed, "random seed")->capture_default_str();
  synth_cmd->add_option("--prefix", syn.id_prefix, "dialog id prefix")->capture_default_str();
  bool independent = false;
  synth_cmd->add_flag("--independent", independent, "render every utterance separately instead of in dialog pairs");

  auto* score_cmd = app.add_subcommand("score", "character error rate of hypotheses against references");
  score_cmd->add_option("--ref", ref, "reference transcripts")->required();
  score_cmd->add_option("--hyp", hyp, "hypothesis transcripts")->required();

  auto* plan_cmd = app.add_subcommand("dump-plan", "print the dialog-serialized minibatch plan");
  plan_cmd->add_option("--config", config, "run configuration (vocab, manifest, batch_size)")->required();
  plan_cmd->add_option("--manifest", manifest, "override the configured manifest");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(config);
    if (*decode_cmd) return cmd_decode(config, checkpoint, manifest, out);
    if (*lm_cmd) return cmd_lm_train(config);
    if (*synth_cmd) {
      syn.paired = !independent;
      const SyntheticCorpus c = generate_synthetic(syn);
      write_synthetic(c, out);
      std::cout << "wrote " << c.utterances.size() << " utterances (feature dim " << c.feat_dim << ") to " << out
                << "\n";
      return 0;
    }
    if (*score_cmd) return cmd_score(ref, hyp);
    if (*plan_cmd) return cmd_dump_plan(config, manifest);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
