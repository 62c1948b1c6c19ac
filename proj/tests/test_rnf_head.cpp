#include <gtest/gtest.h>

#include <cmath>

#include "lldn/grad_check.hpp"
#include "lldn/head.hpp"
#include "lldn/rnf.hpp"

using namespace lldn;

namespace {

RnfConfig tiny_rnf(RnfVariant v) {
  RnfConfig cfg;
  cfg.variant = v;
  cfg.widths = {2, 3, 3, 4, 4};
  cfg.lateral = 2;
  cfg.c_out = 3;
  return cfg;
}

}  // namespace

TEST(Rnf, BlockSpatialSizesHalvePerBlock) {
  Rng rng(1);
  RnfBackbone<double> rnf;
  rnf.init(tiny_rnf(RnfVariant::S), 3, rng);
  TapeD tape;
  TensorD x = TensorD::normal(Shape{32, 32, 3}, rng, 0.0, 1.0);
  RnfActivations<double> acts;
  TensorD y = rnf.forward(tape, x, &acts);
  EXPECT_EQ(y.shape(), (Shape{32, 32, 3}));
  ASSERT_EQ(acts.blocks.size(), 5u);
  const int expect[5] = {16, 8, 4, 2, 1};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(acts.blocks[static_cast<std::size_t>(i)].dim(0), expect[i]);
    EXPECT_EQ(acts.blocks[static_cast<std::size_t>(i)].dim(1), expect[i]);
  }
}

TEST(Rnf, DilatedVariantKeepsSpatialLaw) {
  Rng rng(2);
  RnfBackbone<double> rnf;
  rnf.init(tiny_rnf(RnfVariant::D), 3, rng);
  TapeD tape;
  TensorD x = TensorD::normal(Shape{32, 32, 3}, rng, 0.0, 1.0);
  RnfActivations<double> acts;
  TensorD y = rnf.forward(tape, x, &acts);
  EXPECT_EQ(y.shape(), (Shape{32, 32, 3}));
  const int expect[5] = {16, 8, 4, 2, 1};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(acts.blocks[static_cast<std::size_t>(i)].dim(0), expect[i]);
}

TEST(Rnf, ZeroInputZeroBiasGivesZeroOutput) {
  Rng rng(3);
  RnfBackbone<double> rnf;
  rnf.init(tiny_rnf(RnfVariant::S), 2, rng);
  TapeD tape;
  TensorD x(Shape{32, 32, 2});
  TensorD y = rnf.forward(tape, x, nullptr);
  for (std::int64_t i = 0; i < y.size(); ++i) EXPECT_EQ(y.at(i), 0.0);
}

TEST(Rnf, VariantsShareTopologyAndParamCount) {
  Rng rng(4);
  RnfBackbone<double> s, d;
  s.init(tiny_rnf(RnfVariant::S), 3, rng);
  d.init(tiny_rnf(RnfVariant::D), 3, rng);
  EXPECT_EQ(s.param_count(), d.param_count());
  EXPECT_GT(s.param_count(), 0);
  // conv counts per block: 3, 5, 5, 5, 5
  EXPECT_EQ(s.blocks[0].units.size(), 1u);
  for (int i = 1; i < 5; ++i) EXPECT_EQ(s.blocks[static_cast<std::size_t>(i)].units.size(), 2u);
}

TEST(Rnf, RejectsIndivisibleInput) {
  Rng rng(5);
  RnfBackbone<double> rnf;
  rnf.init(tiny_rnf(RnfVariant::S), 3, rng);
  TapeD tape;
  TensorD x(Shape{24, 32, 3});
  EXPECT_THROW(rnf.forward(tape, x, nullptr), OpError);
}

TEST(Rnf, EndToEndGradCheckNarrowWidths) {
  Rng rng(6);
  for (auto variant : {RnfVariant::S, RnfVariant::D}) {
    RnfConfig cfg;
    cfg.variant = variant;
    cfg.widths = {1, 1, 1, 1, 1};
    cfg.lateral = 1;
    cfg.c_out = 1;
    RnfBackbone<double> rnf;
    rnf.init(cfg, 1, rng);
    NamedParams<double> params;
    rnf.collect("rnf", params);
    // seed biases off zero: all-zero conv windows otherwise put pre-activations
    // exactly on the relu kink, where central differences are ill-defined
    for (auto& [name, t] : params)
      if (name.ends_with(".b"))
        for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.normal(0.0, 0.05);
    TensorD x = TensorD::normal(Shape{32, 32, 1}, rng, 0.0, 1.0);
    TensorD probe = TensorD::normal(Shape{32, 32, 1}, rng, 0.0, 1.0);
    std::vector<TensorD> inputs{x};
    for (auto& [n, t] : params) inputs.push_back(t);
    double err = lldn::grad_check(
        [&](TapeD& t, const std::vector<TensorD>& in) {
          TensorD out = rnf.forward(t, in[0], nullptr);
          return t.sum_all(t.mul(out, probe));
        },
        inputs);
    EXPECT_LT(err, 1e-4) << (variant == RnfVariant::S ? "RNF-S" : "RNF-D");
  }
}

TEST(Head, ShapeContract) {
  Rng rng(7);
  DetectionHead<double> head;
  head.init({.c_out = 16, .n_cls = 7}, rng);
  TapeD tape;
  TensorD feats = TensorD::normal(Shape{32, 32, 16}, rng, 0.0, 1.0);
  auto out = head.forward(tape, feats);
  EXPECT_EQ(out.confidence.shape(), (Shape{32, 32, 1}));
  EXPECT_EQ(out.cls_probs.shape(), (Shape{32, 32, 7}));
  EXPECT_EQ(out.cls_logits.shape(), (Shape{32, 32, 7}));
  TensorD bad = TensorD::normal(Shape{32, 32, 8}, rng, 0.0, 1.0);
  EXPECT_THROW(head.forward(tape, bad), OpError);
}

TEST(Head, ZeroWeightsGiveHalfConfidenceAndUniformClasses) {
  Rng rng(8);
  DetectionHead<double> head;
  head.init({.c_out = 4, .n_cls = 7}, rng);
  for (auto* layer : {&head.conf1, &head.conf2, &head.cls1, &head.cls2}) {
    layer->w = TensorD(layer->w.shape());
    layer->b = TensorD(layer->b.shape());
  }
  TapeD tape;
  TensorD feats = TensorD::normal(Shape{4, 4, 4}, rng, 0.0, 1.0);
  auto out = head.forward(tape, feats);
  for (std::int64_t i = 0; i < out.confidence.size(); ++i) EXPECT_DOUBLE_EQ(out.confidence.at(i), 0.5);
  for (std::int64_t i = 0; i < out.cls_probs.size(); ++i) EXPECT_NEAR(out.cls_probs.at(i), 1.0 / 7.0, 1e-12);
}

TEST(Head, ClassRowsSumToOne) {
  Rng rng(9);
  DetectionHead<double> head;
  head.init({.c_out = 8, .n_cls = 5}, rng);
  TapeD tape;
  TensorD feats = TensorD::normal(Shape{6, 6, 8}, rng, 0.0, 2.0);
  auto out = head.forward(tape, feats);
  for (int g = 0; g < 36; ++g) {
    double sum = 0;
    for (int k = 0; k < 5; ++k) sum += out.cls_probs.at(g * 5 + k);
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Head, PermutationEquivariantOverGridPositions) {
  Rng rng(10);
  DetectionHead<double> head;
  head.init({.c_out = 4, .n_cls = 3}, rng);
  TapeD tape;
  TensorD feats = TensorD::normal(Shape{2, 3, 4}, rng, 0.0, 1.0);
  auto out = head.forward(tape, feats);
  // swap two grid cells in the input; outputs swap identically
  TensorD swapped = feats.clone();
  for (int c = 0; c < 4; ++c) std::swap(swapped.at(0 * 4 + c), swapped.at(5 * 4 + c));
  TapeD tape2;
  auto out2 = head.forward(tape2, swapped);
  EXPECT_NEAR(out2.confidence.at(0), out.confidence.at(5), 1e-12);
  EXPECT_NEAR(out2.confidence.at(5), out.confidence.at(0), 1e-12);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(out2.cls_probs.at(0 * 3 + k), out.cls_probs.at(5 * 3 + k), 1e-12);
    EXPECT_NEAR(out2.cls_probs.at(5 * 3 + k), out.cls_probs.at(0 * 3 + k), 1e-12);
  }
}

TEST(Losses, DicePerfectOverlapIsZero) {
  TapeD tape;
  TensorD label(Shape{3, 3});
  for (int i : {0, 2, 4, 6, 8}) label.at(i) = 1.0;  // k = 5 positives
  TensorD loss = tape.soft_dice(label.clone(), label);
  EXPECT_LT(std::abs(loss.at(0)), 1e-12);
}

TEST(Losses, DiceZeroPredictionAgainstPositivesIsOne) {
  TapeD tape;
  TensorD pred(Shape{5, 1});
  TensorD label(Shape{5, 1});
  for (int i = 0; i < 5; ++i) label.at(i) = 1.0;
  TensorD loss = tape.soft_dice(pred, label);
  EXPECT_NEAR(loss.at(0), 1.0, 1e-12);
}

TEST(Losses, DiceHalfGuessCase) {
  // pred 0.5 everywhere on 2x2, one positive label:
  // 1 - 2*0.5 / (1 + 4*0.25 + eps) = 0.5
  TapeD tape;
  TensorD pred = TensorD::full(Shape{2, 2}, 0.5);
  TensorD label(Shape{2, 2});
  label.at(0) = 1.0;
  TensorD loss = tape.soft_dice(pred, label);
  EXPECT_NEAR(loss.at(0), 0.5, 1e-12);
}

TEST(Losses, DiceMatchesBruteForceOnRandomCases) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    TensorD pred = TensorD::uniform(Shape{8, 8}, rng, 0.0, 1.0);
    TensorD label(Shape{8, 8});
    for (std::int64_t i = 0; i < 64; ++i) label.at(i) = rng.uniform() < 0.2 ? 1.0 : 0.0;
    TapeD tape;
    double got = tape.soft_dice(pred, label).at(0);
    double s = 0, d = 1e-12;
    for (int i = 0; i < 64; ++i) {
      s += pred.at(i) * label.at(i);
      d += pred.at(i) * pred.at(i) + label.at(i) * label.at(i);
    }
    EXPECT_DOUBLE_EQ(got, 1.0 - 2.0 * s / d);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(Losses, CrossEntropyUniformLogitsIsLogNcls) {
  TapeD tape;
  TensorD logits(Shape{3, 3, 7});
  std::vector<std::uint8_t> labels(9, 2);
  EXPECT_NEAR(tape.cross_entropy(logits, labels).at(0), std::log(7.0), 1e-9);
  TensorD logits2(Shape{2, 2, 2});
  std::vector<std::uint8_t> labels2(4, 1);
  TapeD tape2;
  EXPECT_NEAR(tape2.cross_entropy(logits2, labels2).at(0), std::log(2.0), 1e-9);
}

TEST(Losses, CrossEntropyDecreasesWithMargin) {
  std::vector<std::uint8_t> labels(4, 3);
  double prev = 1e9;
  for (double margin : {2.0, 5.0, 10.0}) {
    TapeD tape;
    TensorD logits(Shape{2, 2, 7});
    for (int g = 0; g < 4; ++g) logits.at(g * 7 + 3) = margin;
    double loss = tape.cross_entropy(logits, labels).at(0);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-3);  // loss -> 0 as margin grows
}

TEST(Losses, CrossEntropyRejectsOutOfRangeLabel) {
  TapeD tape;
  TensorD logits(Shape{1, 1, 3});
  std::vector<std::uint8_t> labels{3};
  EXPECT_THROW(tape.cross_entropy(logits, labels), OpError);
}

TEST(Losses, TotalIsSumAndNonFiniteRejected) {
  TapeD tape;
  TensorD a = TensorD::scalar(0.3);
  TensorD b = TensorD::scalar(0.7);
  EXPECT_DOUBLE_EQ(tape.add(a, b).at(0), 1.0);
  TensorD z1 = TensorD::scalar(0.0);
  TensorD z2 = TensorD::scalar(0.0);
  EXPECT_DOUBLE_EQ(tape.add(z1, z2).at(0), 0.0);
#ifdef LLDN_CHECK_FINITE
  TensorD inf = TensorD::scalar(std::numeric_limits<double>::infinity());
  TensorD fin = TensorD::scalar(1.0);
  EXPECT_THROW(tape.add(inf, fin), NumericError);
#endif
}

TEST(Losses, TotalGradientIsSumOfPerTermGradients) {
  Rng rng(12);
  DetectionHead<double> head;
  head.init({.c_out = 4, .n_cls = 3}, rng);
  TensorD feats = TensorD::normal(Shape{4, 4, 4}, rng, 0.0, 1.0);
  std::vector<std::uint8_t> labels(16);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_index(3));

  auto grads_for = [&](int which) {  // 0: dice, 1: ce, 2: total
    TensorD f = feats.clone();
    TapeD tape;
    auto out = head.forward(tape, f);
    auto loss = segmentation_loss(tape, out, labels, 4, 4);
    tape.backward(which == 0 ? loss.dice : which == 1 ? loss.cross_entropy : loss.total);
    return f.grad();
  };
  auto gd = grads_for(0), gc = grads_for(1), gt = grads_for(2);
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_NEAR(gt[i], gd[i] + gc[i], 1e-10);
}

TEST(Losses, GradCheckBothLosses) {
  Rng rng(13);
  TensorD label(Shape{4, 4});
  for (std::int64_t i = 0; i < 16; ++i) label.at(i) = rng.uniform() < 0.3 ? 1.0 : 0.0;
  double err = lldn::grad_check(
      [&](TapeD& t, const std::vector<TensorD>& in) {
        return t.soft_dice(t.sigmoid(in[0]), label);
      },
      {TensorD::normal(Shape{4, 4}, rng, 0.0, 1.0)});
  EXPECT_LT(err, 1e-4);

  std::vector<std::uint8_t> labels(16);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_index(5));
  err = lldn::grad_check(
      [&](TapeD& t, const std::vector<TensorD>& in) { return t.cross_entropy(in[0], labels); },
      {TensorD::normal(Shape{4, 4, 5}, rng, 0.0, 1.0)});
  EXPECT_LT(err, 1e-4);
}

TEST(Head, EndToEndGradCheckThroughHeadAndLosses) {
  Rng rng(14);
  DetectionHead<double> head;
  head.init({.c_out = 3, .n_cls = 4}, rng);
  NamedParams<double> params;
  head.collect("head", params);
  TensorD feats = TensorD::normal(Shape{4, 4, 3}, rng, 0.0, 1.0);
  std::vector<std::uint8_t> labels(16);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_index(4));
  std::vector<TensorD> inputs{feats};
  for (auto& [n, t] : params) inputs.push_back(t);
  double err = lldn::grad_check(
      [&](TapeD& t, const std::vector<TensorD>& in) {
        auto out = head.forward(t, in[0]);
        return segmentation_loss(t, out, labels, 4, 4).total;
      },
      inputs);
  EXPECT_LT(err, 1e-4);
}
