#include <gtest/gtest.h>

#include <random>

#include "dcasr/batcher.hpp"
#include "support/batch_cases.hpp"
#include "support/grad_cases.hpp"

using batchcases::named;
using dcasr::build_plan;
using dcasr::dump_plan;
using dcasr::Utterance;
namespace ad = dcasr::ad;

TEST(Plan, FigureThreeLayout) {
  const std::vector<Utterance> utts{named("C", "c1", 0.0), named("A", "a2", 2.0), named("B", "b1", 0.5),
                                    named("A", "a1", 1.0), named("A", "a3", 3.0)};
  const auto plan = build_plan(utts, 3);
  EXPECT_EQ(dump_plan(plan, utts), "a1 b1 c1\na2 ∅ ∅\na3 ∅ ∅\n");
  EXPECT_EQ(plan.mask(1), (std::vector<bool>{true, false, false}));
  EXPECT_EQ(plan.schedule[2][0].position, 2u);
}

TEST(Plan, OrdersByOnsetThenUttId) {
  const std::vector<Utterance> utts{named("d", "x", 5.0), named("d", "y", 1.0), named("d", "z", 3.0),
                                    named("d", "b", 3.0)};
  EXPECT_EQ(dump_plan(build_plan(utts, 1), utts), "y\nb\nz\nx\n");
}

TEST(Plan, GroupsDrainBeforeTheNextStarts) {
  const std::vector<Utterance> utts{named("a", "a1", 0), named("a", "a2", 1), named("b", "b1", 0),
                                    named("c", "c1", 0), named("c", "c2", 1), named("c", "c3", 2)};
  EXPECT_EQ(dump_plan(build_plan(utts, 2), utts), "a1 b1\na2 ∅\nc1 ∅\nc2 ∅\nc3 ∅\n");
  EXPECT_EQ(dump_plan(build_plan(utts, 1), utts), "a1\na2\nb1\nc1\nc2\nc3\n");
}

TEST(Plan, EmptyInputAndErrors) {
  EXPECT_EQ(build_plan({}, 4).size(), 0u);
  EXPECT_THROW(build_plan({named("a", "x", 0)}, 0), std::invalid_argument);
  EXPECT_THROW(build_plan({named("a", "x", 0), named("b", "x", 1)}, 2), std::invalid_argument);
  EXPECT_THROW(build_plan({named("", "x", 0)}, 2), std::invalid_argument);
}

TEST(Plan, InvariantsHoldOnRandomSets) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 150; ++trial) {
    const auto utts = batchcases::random_set(rng);
    for (std::size_t b : {1, 2, 3, 7}) {
      const auto plan = build_plan(utts, b);
      EXPECT_EQ(batchcases::check_plan(plan, utts), "") << "trial " << trial << " B=" << b;
      EXPECT_EQ(dump_plan(build_plan(utts, b), utts), dump_plan(plan, utts));
    }
  }
}

TEST(Plan, CheckerCatchesBrokenPlans) {
  const std::vector<Utterance> utts{named("a", "a1", 0), named("a", "a2", 1), named("b", "b1", 0)};
  auto plan = build_plan(utts, 2);
  ASSERT_EQ(batchcases::check_plan(plan, utts), "");
  auto swapped = plan;
  std::swap(swapped.schedule[0], swapped.schedule[1]);
  EXPECT_NE(batchcases::check_plan(swapped, utts), "");
  auto dropped = plan;
  dropped.schedule[0][1].utterance.reset();
  EXPECT_NE(batchcases::check_plan(dropped, utts), "");
}

TEST(MaskLosses, SumsOnlyUnmaskedSlots) {
  std::vector<ad::Var> l{ad::parameter(dcasr::Tensor::scalar(2)), ad::parameter(dcasr::Tensor::scalar(3)),
                         ad::parameter(dcasr::Tensor::scalar(4))};
  ad::Var s = dcasr::mask_losses(l, {true, false, true});
  EXPECT_EQ(s.item(), 6.0);
  ad::backward(s);
  EXPECT_EQ(l[0].grad().item(), 1.0);
  EXPECT_EQ(l[1].grad().item(), 0.0);
  EXPECT_EQ(dcasr::mask_losses(l, {true, true, true}).item(), 9.0);
  for (auto& v : l) v.zero_grad();
  ad::Var none = dcasr::mask_losses(l, {false, false, false});
  EXPECT_EQ(none.item(), 0.0);
  ad::backward(none);
  for (auto& v : l) EXPECT_FALSE(v.has_grad());
  EXPECT_THROW(dcasr::mask_losses(l, {true}), std::invalid_argument);
}

TEST(MaskLosses, DummySlotsLeaveGradientsBitIdentical) {
  std::mt19937_64 rng(3);
  std::vector<Utterance> dialog;
  for (int k = 0; k < 3; ++k) {
    Utterance u = named("A", "a" + std::to_string(k), k);
    u.features = gradcases::rand({5 + static_cast<std::size_t>(k), 3}, rng);
    u.labels = {2, static_cast<std::size_t>(3 + k % 2)};
    dialog.push_back(u);
  }
  for (auto mode : {dcasr::DecoderMode::kBaseline, dcasr::DecoderMode::kDialogA, dcasr::DecoderMode::kDialogB}) {
    dcasr::Model m(gradcases::tiny_config(mode));
    const auto single = batchcases::plan_gradients(m, dialog, 1, 0.5);
    const auto padded = batchcases::plan_gradients(m, dialog, 4, 0.5);
    ASSERT_EQ(single.size(), padded.size());
    for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(single[i], padded[i]) << dcasr::to_string(mode);
  }
}

TEST(Dummy, PayloadIsOneZeroFrame) {
  const Utterance d = dcasr::dummy_utterance(4);
  EXPECT_EQ(d.features, dcasr::Tensor(dcasr::Shape{1, 4}));
  EXPECT_TRUE(d.labels.empty());
}
