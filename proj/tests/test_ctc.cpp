#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dcasr/autodiff.hpp"
#include "dcasr/ctc.hpp"
#include "support/oracles.hpp"

using dcasr::LabelSequence;
using dcasr::Shape;
using dcasr::Tensor;
namespace ad = dcasr::ad;
namespace ctc = dcasr::ctc;

namespace {

Tensor uniform_log_probs(std::size_t T, std::size_t V) {
  return Tensor(Shape{T, V}, -std::log(static_cast<double>(V)));
}

LabelSequence random_labels(std::mt19937_64& rng, std::size_t U, std::size_t V) {
  std::uniform_int_distribution<std::size_t> d(1, V - 1);
  LabelSequence y(U);
  for (auto& k : y) k = d(rng);
  return y;
}

}  // namespace

TEST(Ctc, SingleFrameSingleLabel) {
  // T=1, y=[a]: the only path is "a", so the loss is -log p(a).
  Tensor lp = Tensor::matrix(1, 2, {std::log(0.3), std::log(0.7)});
  EXPECT_NEAR(ctc::loss_value(lp, {1}), -std::log(0.7), 1e-12);
}

TEST(Ctc, TwoFramesUniformEmptyTarget) {
  // Only the all-blank path collapses to the empty sequence.
  EXPECT_NEAR(ctc::loss_value(uniform_log_probs(2, 3), {}), 2.0 * std::log(3.0), 1e-12);
}

TEST(Ctc, RepeatedLabelNeedsSeparatingBlank) {
  // y=[a,a] in T=3 over {blank,a}: only "a _ a" is valid.
  EXPECT_NEAR(ctc::loss_value(uniform_log_probs(3, 2), {1, 1}), 3.0 * std::log(2.0), 1e-12);
  EXPECT_THROW(ctc::loss_value(uniform_log_probs(2, 2), {1, 1}), std::domain_error);
}

TEST(Ctc, ThreeFramesTwoLabelsCountsAlignments) {
  // y=[a,b], T=3, V=3 uniform: valid paths are aab, abb, _ab, a_b, ab_.
  EXPECT_NEAR(ctc::loss_value(uniform_log_probs(3, 3), {1, 2}), -std::log(5.0 / 27.0), 1e-12);
}

TEST(Ctc, RejectsBadInput) {
  EXPECT_THROW(ctc::loss_value(uniform_log_probs(3, 3), {0}), std::invalid_argument);
  EXPECT_THROW(ctc::loss_value(uniform_log_probs(3, 3), {3}), std::invalid_argument);
  EXPECT_THROW(ctc::loss_value(Tensor(Shape{0, 3}), {}), std::domain_error);
  EXPECT_THROW(ctc::loss_value(Tensor(Shape{3}), {}), std::invalid_argument);
}

TEST(Ctc, MatchesPathEnumerationOnRandomInstances) {
  std::mt19937_64 rng(1234);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const std::size_t T = 1 + rng() % 6, V = 2 + rng() % 3, U = rng() % 4;
    const LabelSequence y = random_labels(rng, U, V);
    if (ctc::min_frames(y) > T) continue;
    const Tensor lp = oracle::random_log_probs(T, V, rng);
    const double got = ctc::loss_value(lp, y);
    EXPECT_NEAR(got, oracle::ctc_nll(lp, y), 1e-10);
    EXPECT_NEAR(got, ctc::brute_force(lp, y), 1e-10);
    ++checked;
  }
  EXPECT_GE(checked, 200);
}

TEST(Ctc, GradientIsMinusOccupancyAndSumsToMinusOnePerFrame) {
  std::mt19937_64 rng(7);
  const Tensor lp = oracle::random_log_probs(5, 4, rng);
  ad::Var x = ad::parameter(lp);
  ad::backward(ctc::loss(x, {2, 3}));
  const Tensor g = x.grad();
  for (std::size_t t = 0; t < 5; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      s += g(t, k);
      EXPECT_LE(g(t, k), 0.0);
    }
    EXPECT_NEAR(s, -1.0, 1e-12);
  }
  EXPECT_DOUBLE_EQ(g(0, 1), 0.0);  // label 1 never occurs in the target
}

TEST(Ctc, GradientThroughLogSoftmaxMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10; ++i) {
    const std::size_t T = 2 + rng() % 5, V = 2 + rng() % 3;
    const LabelSequence y = random_labels(rng, std::min<std::size_t>(T / 2, 3), V);
    Tensor logits(Shape{T, V});
    for (auto& v : logits.values()) v = std::uniform_real_distribution<double>(-2, 2)(rng);
    auto f = [&](const std::vector<ad::Var>& x) { return ctc::loss(ad::log_softmax(x[0]), y); };
    EXPECT_LT(ad::grad_check(f, {logits}, 1e-6), 1e-4);
  }
}

TEST(Ctc, LongUtteranceStaysFinite) {
  std::mt19937_64 rng(9);
  const Tensor lp = oracle::random_log_probs(2000, 30, rng, 8.0);
  LabelSequence y = random_labels(rng, 300, 30);
  const double v = ctc::loss_value(lp, y);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
}

TEST(Ctc, CollapseMergesRepeatsThenDropsBlanks) {
  EXPECT_EQ(ctc::collapse({1, 1, 0, 1, 2, 2, 0}), (LabelSequence{1, 1, 2}));
  EXPECT_EQ(ctc::collapse({0, 0}), LabelSequence{});
  EXPECT_EQ(ctc::collapse({}), LabelSequence{});
}

TEST(Ctc, BruteForceRefusesLargeInstances) {
  EXPECT_THROW(ctc::brute_force(uniform_log_probs(20, 4), {1}), std::invalid_argument);
}

TEST(CtcPrefix, MatchesPathEnumeration) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 60; ++i) {
    const std::size_t T = 1 + rng() % 5, V = 2 + rng() % 3;
    const Tensor lp = oracle::random_log_probs(T, V, rng);
    ctc::PrefixScorer scorer(lp);
    auto state = scorer.initial();
    LabelSequence prefix;
    EXPECT_NEAR(std::exp(scorer.final_log_prob(state)), std::exp(-oracle::ctc_nll(lp, {})), 1e-12);
    for (std::size_t u = 0; u < 3; ++u) {
      const std::size_t k = 1 + rng() % (V - 1);
      auto ext = scorer.extend(state, k);
      prefix.push_back(k);
      EXPECT_NEAR(std::exp(ext.log_prob), oracle::ctc_prefix_prob(lp, prefix), 1e-12);
      double full = 0.0;
      oracle::each_path(lp, [&](const oracle::Labels& p, double pr) {
        if (oracle::squash(p) == prefix) full += pr;
      });
      EXPECT_NEAR(std::exp(scorer.final_log_prob(ext.state)), full, 1e-12);
      state = ext.state;
    }
  }
}

TEST(CtcPrefix, ExtensionsOfAPrefixPartitionItsMass) {
  // p(prefix...) = p(prefix exactly) + sum_k p(prefix + k ...).
  std::mt19937_64 rng(22);
  const Tensor lp = oracle::random_log_probs(6, 4, rng);
  ctc::PrefixScorer scorer(lp);
  auto g = scorer.extend(scorer.initial(), 2).state;
  double total = std::exp(scorer.final_log_prob(g));
  for (std::size_t k = 1; k < 4; ++k) total += std::exp(scorer.extend(g, k).log_prob);
  EXPECT_NEAR(total, std::exp(g.prefix_log_prob), 1e-12);
}

TEST(CtcPrefix, RejectsBlankAndOutOfRange) {
  ctc::PrefixScorer scorer(uniform_log_probs(3, 3));
  EXPECT_THROW(scorer.extend(scorer.initial(), 0), std::invalid_argument);
  EXPECT_THROW(scorer.extend(scorer.initial(), 3), std::invalid_argument);
}

TEST(Ctc, TwoFramesHalfHalfSingleLabel) {
  // Of the four alignments over {_, a}, "a_", "_a" and "aa" collapse to "a".
  const Tensor lp = uniform_log_probs(2, 2);
  EXPECT_NEAR(ctc::loss_value(lp, {1}), -std::log(0.75), 1e-12);
  EXPECT_NEAR(ctc::brute_force(lp, {1}), -std::log(0.75), 1e-12);
}

TEST(Ctc, CertainBlankGivesZeroLossForEmptyTarget) {
  Tensor lp(Shape{4, 3}, ctc::kLogZero);
  for (std::size_t t = 0; t < 4; ++t) lp(t, 0) = 0.0;
  EXPECT_DOUBLE_EQ(ctc::loss_value(lp, {}), 0.0);
}

TEST(Ctc, InfeasibleTargetIsAnErrorForBothComputations) {
  const Tensor lp = uniform_log_probs(1, 3);
  EXPECT_THROW(ctc::loss_value(lp, {1, 2}), std::domain_error);
  EXPECT_THROW(ctc::brute_force(lp, {1, 2}), std::domain_error);
}

TEST(Ctc, InvariantUnderLabelPermutation) {
  std::mt19937_64 rng(31);
  const Tensor lp = oracle::random_log_probs(6, 4, rng);
  const std::vector<std::size_t> perm{0, 3, 1, 2};  // blank stays at 0
  Tensor permuted(lp.shape());
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t k = 0; k < 4; ++k) permuted(t, perm[k]) = lp(t, k);
  const LabelSequence y{1, 3, 3};
  LabelSequence py;
  for (std::size_t k : y) py.push_back(perm[k]);
  EXPECT_NEAR(ctc::loss_value(lp, y), ctc::loss_value(permuted, py), 1e-12);
}

TEST(CtcPrefix, EmptyPrefixMassIsOne) {
  std::mt19937_64 rng(32);
  const Tensor lp = oracle::random_log_probs(3, 4, rng);
  ctc::PrefixScorer scorer(lp);
  const auto root = scorer.initial();
  double total = std::exp(scorer.final_log_prob(root));
  for (std::size_t k = 1; k < 4; ++k) total += std::exp(scorer.extend(root, k).log_prob);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(CtcPrefix, ImpossibleLabelHitsTheFloor) {
  std::mt19937_64 rng(33);
  Tensor lp = oracle::random_log_probs(4, 3, rng);
  for (std::size_t t = 0; t < 4; ++t) lp(t, 2) = ctc::kLogZero;
  ctc::PrefixScorer scorer(lp);
  EXPECT_LE(scorer.extend(scorer.initial(), 2).log_prob, ctc::kLogZero);
}

TEST(CtcPrefix, ScoresDoNotIncreaseAlongExtensions) {
  std::mt19937_64 rng(34);
  for (int i = 0; i < 20; ++i) {
    const Tensor lp = oracle::random_log_probs(8, 4, rng);
    ctc::PrefixScorer scorer(lp);
    auto g = scorer.initial();
    double prev = g.prefix_log_prob;
    for (int u = 0; u < 5; ++u) {
      auto ext = scorer.extend(g, 1 + rng() % 3);
      EXPECT_LE(ext.log_prob, prev + 1e-12);
      prev = ext.log_prob;
      g = ext.state;
    }
  }
}
