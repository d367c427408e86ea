#include <gtest/gtest.h>

#include <algorithm>

#include "dcasr/decode.hpp"
#include "support/beam_oracle.hpp"
#include "support/grad_cases.hpp"

using beamoracle::exhaustive;
using beamoracle::make_instance;
using dcasr::beam_search;
using dcasr::DecodeConfig;
using dcasr::DecoderMode;
using dcasr::Hypothesis;

namespace {

DecodeConfig config(double alpha, double beta, double gamma, std::size_t beam, std::size_t max_len) {
  DecodeConfig c;
  c.ctc_weight = alpha;
  c.lm_weight = beta;
  c.length_penalty = gamma;
  c.beam = beam;
  c.max_len = max_len;
  return c;
}

// Greedy search under the combined score: follows the single best
// extension at every step and returns the best ending seen along the way.
std::pair<dcasr::LabelSequence, double> greedy(const beamoracle::Instance& in, const DecodeConfig& cfg) {
  dcasr::ad::NoGradGuard guard;
  const auto& m = *in.model;
  const auto enc = m.encode(in.features);
  const dcasr::ctc::PrefixScorer scorer(m.ctc_log_probs(enc).value());
  auto dec = m.decoder().initial_state(enc);
  auto lm_state = in.lm->initial_state();
  auto ctc_state = scorer.initial();
  dcasr::LabelSequence y;
  double att = 0.0, lm = 0.0;
  auto score = [&](double s_att, double s_ctc, double s_lm, std::size_t len) {
    return cfg.ctc_weight * s_ctc + (1 - cfg.ctc_weight) * s_att + cfg.lm_weight * s_lm +
           cfg.length_penalty * static_cast<double>(len);
  };
  std::pair<dcasr::LabelSequence, double> best{{}, -1e300};
  while (true) {
    const std::size_t prev = y.empty() ? 1 : y.back();
    auto step = m.decoder().step(dec, enc, prev, in.ctx);
    auto [lp, lm_next] = in.lm->step(lm_state, prev);
    const auto& a = step.log_probs.value();
    const auto& l = lp.value();
    const double end = score(att + a[1], scorer.final_log_prob(ctc_state), lm + l[0], y.size());
    if (end > best.second) best = {y, end};
    if (y.size() == cfg.max_len) return best;
    std::size_t pick = 0;
    double top = -1e300;
    for (std::size_t c = 2; c < 5; ++c) {
      const double s = score(att + a[c], scorer.extend(ctc_state, c).log_prob, lm + l[c - 1], y.size() + 1);
      if (s > top) top = s, pick = c;
    }
    ctc_state = scorer.extend(ctc_state, pick).state;
    att += a[pick];
    lm += l[pick - 1];
    y.push_back(pick);
    dec = step.state;
    lm_state = lm_next;
  }
}

}  // namespace

TEST(CombinedScore, FormulaEndpointsAndArithmetic) {
  Hypothesis h;
  h.ctc = -1;
  h.att = -2;
  h.lm = -3;
  h.prefix = {2, 3};
  EXPECT_EQ(dcasr::combined_score(h, config(0, 0, 0, 1, 0)), -2.0);
  EXPECT_EQ(dcasr::combined_score(h, config(1, 0, 0, 1, 0)), -1.0);
  EXPECT_NEAR(dcasr::combined_score(h, config(0.3, 0.3, 0.1, 1, 0)), -2.4, 1e-15);
}

TEST(DecodeConfig, RejectsBadSettings) {
  EXPECT_THROW(config(0.3, 0.3, 0.1, 0, 0).validate(), std::invalid_argument);
  EXPECT_THROW(config(1.5, 0.3, 0.1, 1, 0).validate(), std::invalid_argument);
  EXPECT_THROW(config(0.3, -1, 0.1, 1, 0).validate(), std::invalid_argument);
  auto in = make_instance(1, DecoderMode::kBaseline);
  EXPECT_THROW(beam_search(*in.model, in.lm.get(), in.features, in.ctx, config(0.3, 0.3, 0.1, 0, 3)),
               std::invalid_argument);
}

TEST(Oracle, SequenceEnumerationCounts) {
  EXPECT_EQ(beamoracle::all_sequences(5, 1, 3).size(), 1u + 3 + 9 + 27);
  EXPECT_EQ(beamoracle::all_sequences(5, 1, 0).size(), 1u);
}

TEST(BeamSearch, MatchesExhaustiveSearchInEveryMode) {
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 24; ++seed) {
    const auto mode = static_cast<DecoderMode>(seed % 3);
    const auto in = make_instance(seed, mode);
    const auto cfg = config(0.3, 0.3, 0.6 * static_cast<double>(seed % 4), 27, 3);
    const auto oracle = exhaustive(*in.model, in.lm.get(), in.features, in.ctx, cfg, 3);
    const auto got = beam_search(*in.model, in.lm.get(), in.features, in.ctx, cfg);
    ASSERT_FALSE(got.ranked.empty());
    EXPECT_EQ(got.ranked.front().prefix, oracle.front().labels) << "seed " << seed;
    EXPECT_NEAR(got.ranked.front().score, oracle.front().score, 1e-9);
    for (const auto& h : got.ranked) {
      const auto it = std::find_if(oracle.begin(), oracle.end(), [&](const auto& o) { return o.labels == h.prefix; });
      ASSERT_NE(it, oracle.end());
      EXPECT_NEAR(h.score, it->score, 1e-9);
      EXPECT_NEAR(h.att, it->att, 1e-9);
      EXPECT_NEAR(h.ctc, it->ctc, 1e-9);
      EXPECT_NEAR(h.lm, it->lm, 1e-9);
    }
    ++checked;
  }
  EXPECT_EQ(checked, 24);
}

TEST(BeamSearch, EndpointWeightsRankBySingleScorer) {
  for (std::uint64_t seed = 30; seed < 36; ++seed) {
    const auto in = make_instance(seed, DecoderMode::kBaseline);
    for (double alpha : {0.0, 1.0}) {
      const auto cfg = config(alpha, 0, 0, 40, 3);
      auto oracle = exhaustive(*in.model, nullptr, in.features, in.ctx, cfg, 3);
      const auto by = [&](const beamoracle::Scored& s) { return alpha == 0 ? s.att : s.ctc; };
      const auto best = std::max_element(oracle.begin(), oracle.end(),
                                         [&](const auto& a, const auto& b) { return by(a) < by(b); });
      const auto got = beam_search(*in.model, in.lm.get(), in.features, in.ctx, cfg);
      EXPECT_EQ(got.ranked.front().prefix, best->labels) << "alpha " << alpha;
      EXPECT_EQ(got.ranked.front().score, alpha == 0 ? got.ranked.front().att : got.ranked.front().ctc);
    }
  }
}

TEST(BeamSearch, BeamOneIsGreedy) {
  for (std::uint64_t seed = 40; seed < 52; ++seed) {
    const auto in = make_instance(seed, static_cast<DecoderMode>(seed % 3));
    const auto cfg = config(0.3, 0.3, 0.5, 1, 4);
    const auto got = beam_search(*in.model, in.lm.get(), in.features, in.ctx, cfg);
    const auto want = greedy(in, cfg);
    EXPECT_EQ(got.ranked.front().prefix, want.first) << "seed " << seed;
    EXPECT_NEAR(got.ranked.front().score, want.second, 1e-12);
  }
}

TEST(BeamSearch, WiderBeamsNeverLowerTheTopScore) {
  for (std::uint64_t seed = 60; seed < 70; ++seed) {
    const auto in = make_instance(seed, DecoderMode::kBaseline);
    double prev = -1e300;
    for (std::size_t beam = 1; beam <= 40; ++beam) {
      const auto got = beam_search(*in.model, in.lm.get(), in.features, in.ctx, config(0.3, 0.3, 0.1, beam, 3));
      EXPECT_GE(got.ranked.front().score, prev) << "seed " << seed << " beam " << beam;
      prev = got.ranked.front().score;
    }
  }
}

TEST(BeamSearch, LargerLengthRewardNeverShortensTheTopHypothesis) {
  for (std::uint64_t seed = 70; seed < 76; ++seed) {
    const auto in = make_instance(seed, DecoderMode::kBaseline);
    std::size_t prev = 0;
    for (double gamma : {0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0}) {
      const auto got = beam_search(*in.model, in.lm.get(), in.features, in.ctx, config(0.3, 0.3, gamma, 40, 3));
      EXPECT_GE(got.ranked.front().prefix.size(), prev) << "seed " << seed << " gamma " << gamma;
      prev = got.ranked.front().prefix.size();
    }
    EXPECT_EQ(prev, 3u);
  }
}

TEST(BeamSearch, HypothesesEndAtTheLengthLimit) {
  const auto in = make_instance(80, DecoderMode::kBaseline);
  const auto got = beam_search(*in.model, in.lm.get(), in.features, in.ctx, config(0.3, 0.3, 1000, 5, 2));
  ASSERT_FALSE(got.ranked.empty());
  EXPECT_EQ(got.ranked.front().prefix.size(), 2u);
  for (const auto& h : got.ranked) {
    EXPECT_TRUE(h.ended);
    EXPECT_LE(h.prefix.size(), 2u);
    EXPECT_LE(h.att, 0.0);
    EXPECT_LE(h.ctc, 0.0);
    EXPECT_LE(h.lm, 0.0);
  }
}

TEST(BeamSearch, IsDeterministic) {
  const auto in = make_instance(81, DecoderMode::kDialogB);
  const auto cfg = config(0.3, 0.3, 0.1, 6, 4);
  const auto a = beam_search(*in.model, in.lm.get(), in.features, in.ctx, cfg);
  const auto b = beam_search(*in.model, in.lm.get(), in.features, in.ctx, cfg);
  ASSERT_EQ(a.ranked.size(), b.ranked.size());
  for (std::size_t i = 0; i < a.ranked.size(); ++i) {
    EXPECT_EQ(a.ranked[i].prefix, b.ranked[i].prefix);
    EXPECT_EQ(a.ranked[i].score, b.ranked[i].score);
  }
}

namespace {

std::vector<dcasr::Utterance> dialog_of(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::vector<dcasr::Utterance> out;
  for (std::size_t k = 0; k < n; ++k) {
    dcasr::Utterance u;
    u.dialog_id = "d";
    u.utt_id = "u" + std::to_string(k);
    u.onset = static_cast<double>(k);
    u.features = gradcases::rand({12, 3}, rng, -2, 2);
    out.push_back(u);
  }
  return out;
}

std::vector<const dcasr::Utterance*> pointers(const std::vector<dcasr::Utterance>& v) {
  std::vector<const dcasr::Utterance*> out;
  for (const auto& u : v) out.push_back(&u);
  return out;
}

dcasr::ModelConfig wide(DecoderMode mode) {
  auto c = gradcases::tiny_config(mode, 17);
  c.init_range = 1.0;
  return c;
}

}  // namespace

TEST(DecodeDialog, BaselineMatchesIndependentDecoding) {
  const auto utts = dialog_of(1, 4);
  dcasr::Model m(wide(DecoderMode::kBaseline));
  const auto cfg = config(0.3, 0, 0.1, 4, 4);
  const auto joint = dcasr::decode_dialog(m, nullptr, pointers(utts), cfg);
  for (std::size_t k = 0; k < utts.size(); ++k) {
    const auto alone = dcasr::decode_dialog(m, nullptr, {&utts[k]}, cfg);
    EXPECT_EQ(joint[k].labels, alone[0].labels);
    EXPECT_EQ(joint[k].score, alone[0].score);
    EXPECT_EQ(joint[k].utt_id, utts[k].utt_id);
  }
}

// The combiner acts on the zero initial state only, so V = 0 and b = 0
// make it output exactly that zero state.
TEST(DecodeDialog, DialogAWithZeroVAndBiasMatchesBaseline) {
  const auto utts = dialog_of(2, 4);
  const auto cfg = config(0.3, 0, 0.1, 4, 4);
  dcasr::Model base(wide(DecoderMode::kBaseline));
  const auto ref = dcasr::decode_dialog(base, nullptr, pointers(utts), cfg);
  dcasr::Model m(wide(DecoderMode::kDialogA));
  m.params().get("ctx.combine.V").mutable_value().fill(0.0);
  m.params().get("ctx.combine.b").mutable_value().fill(0.0);
  const auto got = dcasr::decode_dialog(m, nullptr, pointers(utts), cfg);
  for (std::size_t k = 0; k < utts.size(); ++k) {
    EXPECT_EQ(got[k].labels, ref[k].labels);
    EXPECT_EQ(got[k].score, ref[k].score);
  }
}

TEST(DecodeDialog, DialogAWithZeroVIsContextIndependent) {
  const auto utts = dialog_of(3, 3);
  const auto cfg = config(0.3, 0, 0.1, 4, 4);
  dcasr::Model m(wide(DecoderMode::kDialogA));
  m.params().get("ctx.combine.V").mutable_value().fill(0.0);
  const auto joint = dcasr::decode_dialog(m, nullptr, pointers(utts), cfg);
  for (std::size_t k = 0; k < utts.size(); ++k) {
    EXPECT_EQ(joint[k].labels, dcasr::decode_dialog(m, nullptr, {&utts[k]}, cfg)[0].labels);
  }
}

TEST(DecodeDialog, ContextChainsFromTheBestHypothesis) {
  const auto utts = dialog_of(4, 2);
  const auto cfg = config(0.3, 0, 0.1, 4, 4);
  for (auto mode : {DecoderMode::kDialogA, DecoderMode::kDialogB}) {
    dcasr::Model m(wide(mode));
    const auto joint = dcasr::decode_dialog(m, nullptr, pointers(utts), cfg);
    const auto first = beam_search(m, nullptr, utts[0].features, dcasr::ContextVector::zero(m.context_dim()), cfg);
    const auto& best = first.ranked.front();
    const auto ctx = m.next_context(best.decoder, best.label_log_probs);
    const auto second = beam_search(m, nullptr, utts[1].features, ctx, cfg);
    EXPECT_EQ(joint[1].labels, second.ranked.front().prefix);
    EXPECT_EQ(joint[1].score, second.ranked.front().score);
  }
}

TEST(DecodeDialog, OutOfOrderOnsetsAreAnError) {
  auto utts = dialog_of(5, 2);
  utts[1].onset = -1;
  dcasr::Model m(wide(DecoderMode::kBaseline));
  EXPECT_THROW(dcasr::decode_dialog(m, nullptr, pointers(utts), config(0.3, 0, 0.1, 2, 3)), std::invalid_argument);
}
