#include <gtest/gtest.h>

#include <random>

#include "fusion_oracle.hpp"
#include "support.hpp"
#include "toy_oracle.hpp"
#include "vectn/fusion_classifier.hpp"

namespace vectn {
namespace {

using test::random_matrix;
using test::random_vector;

std::size_t count_of(const std::string& s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

TEST(BuildPhrase, SerializesSegments) {
  const auto p = build_phrase("Crazy hair day! Lydia is a contender. :)", "Lydia",
                              "Lydia exhibits a positive expression");
  EXPECT_EQ(p.serialize(),
            "[CLS] Crazy hair day! Lydia is a contender. :) [SEP] Lydia [SEP] Lydia exhibits a "
            "positive expression [SEP]");
}

TEST(BuildPhrase, EmptyAuxiliaryKeepsMarkers) {
  EXPECT_EQ(build_phrase("caption", "target", "").serialize(), "[CLS] caption [SEP] target [SEP] [SEP]");
}

TEST(BuildPhrase, LongCaptionTruncatedFirst) {
  std::string caption;
  for (int i = 0; i < 200; ++i) caption += "w" + std::to_string(i) + " ";
  const auto p = build_phrase(caption, "Lydia Smith", "Lydia exhibits a positive expression", 128);
  EXPECT_EQ(p.token_count(), 128u);
  EXPECT_EQ(p.target, (std::vector<std::string>{"Lydia", "Smith"}));
  EXPECT_EQ(p.auxiliary.size(), 5u);
  EXPECT_EQ(p.caption.size(), 128u - 4 - 2 - 5);
  EXPECT_EQ(p.caption.front(), "w0");
  EXPECT_EQ(count_of(p.serialize(), "[SEP]"), 3u);
}

TEST(BuildPhrase, AuxiliaryTruncatedAfterCaption) {
  const auto p = build_phrase("a b c", "T", "x1 x2 x3 x4 x5 x6", 8);
  EXPECT_TRUE(p.caption.empty());
  EXPECT_EQ(p.auxiliary, (std::vector<std::string>{"x1", "x2", "x3"}));
  EXPECT_EQ(p.token_count(), 8u);
}

TEST(BuildPhrase, Errors) {
  EXPECT_THROW(build_phrase("caption", "", "aux"), Error);
  EXPECT_THROW(build_phrase("caption", "a b c", "", 6), Error);
  EXPECT_NO_THROW(build_phrase("caption", "a b", "", 6));
}

TEST(BuildPhrase, MarkersInsideContentNeutralized) {
  const auto p = build_phrase("look [SEP] here [CLS]", "T", "x[SEP]y");
  const auto s = p.serialize();
  EXPECT_EQ(count_of(s, "[CLS]"), 1u);
  EXPECT_EQ(count_of(s, "[SEP]"), 3u);
  EXPECT_EQ(s, "[CLS] look (SEP) here (CLS) [SEP] T [SEP] x(SEP)y [SEP]");
}

std::string random_text(std::mt19937_64& gen, std::size_t max_tokens) {
  static const std::vector<std::string> vocab{"a", "Lydia", "[SEP]", "[CLS]", "x[SEP]", "ok!",
                                              "é", "  ", "\t", "day", ":)", "#tag"};
  std::string s;
  const auto n = gen() % (max_tokens + 1);
  for (std::size_t i = 0; i < n; ++i) s += vocab[gen() % vocab.size()] + (gen() % 3 ? " " : "  ");
  return s;
}

TEST(BuildPhrase, FuzzedInvariants) {
  std::mt19937_64 gen(31);
  int built = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto caption = random_text(gen, 150);
    auto target = random_text(gen, 4);
    if (phrase_tokens(target).empty()) target = "Lydia";
    const auto aux = random_text(gen, 60);
    const std::size_t max_len = 5 + gen() % 140;
    const auto target_tokens = phrase_tokens(target);
    if (target_tokens.size() + 4 > max_len) {
      EXPECT_THROW(build_phrase(caption, target, aux, max_len), Error);
      continue;
    }
    const auto p = build_phrase(caption, target, aux, max_len);
    ++built;
    const auto s = p.serialize();
    EXPECT_EQ(s.rfind("[CLS]", 0), 0u);
    EXPECT_EQ(count_of(s, "[CLS]"), 1u);
    EXPECT_EQ(count_of(s, "[SEP]"), 3u);
    EXPECT_EQ(p.target, target_tokens);
    EXPECT_LE(p.token_count(), max_len);
    // truncation only removes tails
    const auto full_caption = phrase_tokens(caption);
    const auto full_aux = phrase_tokens(aux);
    ASSERT_LE(p.caption.size(), full_caption.size());
    EXPECT_TRUE(std::equal(p.caption.begin(), p.caption.end(), full_caption.begin()));
    ASSERT_LE(p.auxiliary.size(), full_aux.size());
    EXPECT_TRUE(std::equal(p.auxiliary.begin(), p.auxiliary.end(), full_aux.begin()));
    if (p.auxiliary.size() < full_aux.size()) EXPECT_TRUE(p.caption.empty());
  }
  EXPECT_GT(built, 900);
}

TEST(PoolPhrase, ToyEncoderFollowsHashRule) {
  ToyTextEncoder enc({kToyTextSeed, kDefaultTextDim});
  const auto p = build_phrase("Crazy hair day!", "Lydia", "Lydia exhibits a positive expression");
  const Vector v = pool_phrase(p, enc);
  ASSERT_EQ(v.size(), 768);
  const auto oracle = test::oracle_embed(p.serialize(), kToyTextSeed, kDefaultTextDim);
  for (Eigen::Index k = 0; k < v.size(); ++k) EXPECT_EQ(v(k), oracle[static_cast<std::size_t>(k)]);
  EXPECT_EQ(pool_phrase(p, enc), v);
}

TEST(PoolPhrase, DimensionMismatchDetected) {
  class Liar final : public TextEncoder {
   public:
    std::size_t dim() const override { return 4; }
    Vector pool(const FusionPhrase&) const override { return Vector::Zero(3); }
  };
  EXPECT_THROW(pool_phrase(build_phrase("c", "t", ""), Liar{}), Error);
}

TEST(GateFuse, ZeroParams) {
  const auto params = GateParams::zeros(5);
  std::mt19937_64 gen(1);
  const auto out = gate_fuse(random_vector(gen, 5), random_vector(gen, 5), params);
  EXPECT_TRUE(out.jt.isZero(0.0));
  EXPECT_TRUE(out.fused.isZero(0.0));
}

GateParams random_params(std::mt19937_64& gen, Eigen::Index d, GateMode mode = GateMode::shared,
                         double scale = 0.5) {
  GateParams p = GateParams::zeros(static_cast<std::size_t>(d), mode);
  if (mode != GateMode::concat) {
    p.V_DT = random_matrix(gen, d, d, scale);
    p.V_IC = random_matrix(gen, d, d, scale);
    p.b_j = random_vector(gen, d, scale);
  }
  p.V = random_matrix(gen, p.V.rows(), 3);
  p.b = random_vector(gen, 3);
  return p;
}

TEST(GateFuse, EqualInputsDoubleTheGatedVector) {
  std::mt19937_64 gen(2);
  const auto p = random_params(gen, 6);
  const Vector u = random_vector(gen, 6);
  const auto out = gate_fuse(u, u, p);
  EXPECT_LE((out.fused - 2.0 * out.jt.cwiseProduct(u)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GateFuse, MatchesStraightLineOracle) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_params(gen, 8);
    const Vector a = random_vector(gen, 8), b = random_vector(gen, 8);
    std::vector<double> jt;
    const auto expected = test::oracle_gate(p, a, b, GateMode::shared, &jt);
    const auto out = gate_fuse(a, b, p);
    for (Eigen::Index k = 0; k < 8; ++k) {
      EXPECT_NEAR(out.fused(k), expected[static_cast<std::size_t>(k)], 1e-12);
      EXPECT_NEAR(out.fused(k), out.jt(k) * (a(k) + b(k)), 1e-12);
      EXPECT_GT(out.jt(k), -1.0);
      EXPECT_LT(out.jt(k), 1.0);
    }
  }
}

TEST(GateFuse, ComplementMode) {
  std::mt19937_64 gen(4);
  const auto p = random_params(gen, 5);
  const Vector a = random_vector(gen, 5), b = random_vector(gen, 5);
  const auto expected = test::oracle_gate(p, a, b, GateMode::complement);
  const auto out = gate_fuse(a, b, p, GateMode::complement);
  for (Eigen::Index k = 0; k < 5; ++k) EXPECT_NEAR(out.fused(k), expected[static_cast<std::size_t>(k)], 1e-12);
}

TEST(GateFuse, DimensionMismatch) {
  const auto p = GateParams::zeros(4);
  EXPECT_THROW(gate_fuse(Vector::Zero(3), Vector::Zero(4), p), Error);
  EXPECT_THROW(gate_fuse(Vector::Zero(4), Vector::Zero(4), GateParams::zeros(4, GateMode::concat),
                         GateMode::concat),
               Error);
}

TEST(Classify, ClosedForms) {
  const auto uniform = classify(Vector::Ones(4), Matrix::Zero(4, 3), Vector::Zero(3));
  for (double p : uniform.probabilities) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(uniform.predicted, Label::negative);

  Vector b(3);
  b << 0, 0, 1000;
  const auto sat = classify(Vector::Ones(4), Matrix::Zero(4, 3), b);
  EXPECT_NEAR(sat.probabilities[2], 1.0, 1e-12);
  EXPECT_NEAR(sat.probabilities[0], 0.0, 1e-12);
  EXPECT_EQ(sat.predicted, Label::positive);

  EXPECT_THROW(classify(Vector::Ones(4), Matrix::Zero(3, 3), Vector::Zero(3)), Error);
  Vector inf_b = Vector::Zero(3);
  inf_b(0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(classify(Vector::Ones(4), Matrix::Zero(4, 3), inf_b), Error);
}

TEST(Classify, ProbabilitiesSumToOne) {
  std::mt19937_64 gen(5);
  for (int i = 0; i < 1000; ++i) {
    const auto pred = classify(random_vector(gen, 6, 3.0), random_matrix(gen, 6, 3, 3.0),
                               random_vector(gen, 3, 3.0));
    double sum = 0.0;
    for (double p : pred.probabilities) {
      EXPECT_GE(p, 0.0);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Classify, SoftmaxShiftInvariance) {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const Vector z = random_vector(gen, 3, 4.0);
    const auto a = softmax(z);
    const auto b = softmax((z.array() + shift(gen)).matrix());
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(a[static_cast<std::size_t>(k)], b[static_cast<std::size_t>(k)], 1e-12);
  }
}

TEST(Classify, DropoutOnlyWhenTraining) {
  std::mt19937_64 gen(7);
  const Vector x = random_vector(gen, 10);
  const Matrix V = random_matrix(gen, 10, 3);
  const Vector b = random_vector(gen, 3);
  const auto inference = classify(x, V, b, 0.4, false);
  EXPECT_EQ(inference.probabilities, classify(x, V, b).probabilities);
  Rng rng(1);
  EXPECT_THROW(classify(x, V, b, 0.4, true), Error);
  const auto trained = classify(x, V, b, 0.4, true, &rng);
  EXPECT_NE(trained.probabilities, inference.probabilities);
}

TEST(DropoutMask, InvertedScaling) {
  Rng rng(3);
  const Vector m = draw_dropout_mask(20000, 0.4, rng);
  int kept = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    EXPECT_TRUE(m(i) == 0.0 || m(i) == 1.0 / 0.6);
    kept += m(i) != 0.0;
  }
  EXPECT_NEAR(kept / 20000.0, 0.6, 0.02);
}

TEST(BatchLoss, ClosedForms) {
  const std::array<double, 3> u{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::vector<std::array<double, 3>> probs{u, u, u, u};
  std::vector<int> labels{0, 1, 2, 1};
  EXPECT_NEAR(batch_loss(probs, labels), std::log(3.0), 1e-9);

  std::vector<std::array<double, 3>> perfect{{1, 0, 0}, {0, 0, 1}};
  std::vector<int> perfect_labels{0, 2};
  EXPECT_EQ(batch_loss(perfect, perfect_labels), 0.0);

  std::vector<std::array<double, 3>> one{{0.7, 0.2, 0.1}};
  std::vector<int> zero{0};
  EXPECT_NEAR(batch_loss(one, zero), 0.35667494393873245, 1e-9);
  EXPECT_NEAR(batch_loss(one, zero), -std::log(0.7), 1e-12);
}

TEST(BatchLoss, FloorAndErrors) {
  std::vector<std::array<double, 3>> zero_true{{0.0, 1.0, 0.0}};
  std::vector<int> label{0};
  EXPECT_NEAR(batch_loss(zero_true, label), -std::log(1e-12), 1e-9);
  std::vector<std::array<double, 3>> bad{{0.5, 0.2, 0.1}};
  EXPECT_THROW(batch_loss(bad, label), Error);
  std::vector<std::array<double, 3>> negative{{1.5, -0.5, 0.0}};
  EXPECT_THROW(batch_loss(negative, label), Error);
  std::vector<int> two{0, 1};
  EXPECT_THROW(batch_loss(zero_true, two), Error);
  std::vector<std::array<double, 3>> none;
  std::vector<int> no_labels;
  EXPECT_THROW(batch_loss(none, no_labels), Error);
}

TEST(BatchLoss, NonNegativeWithEqualityOnlyWhenPerfect) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::array<double, 3>> probs;
    std::vector<int> labels;
    bool perfect = true;
    for (int n = 0; n < 3; ++n) {
      std::array<double, 3> p{u(gen), u(gen), u(gen)};
      const int y = static_cast<int>(gen() % 3);
      if (gen() % 4 == 0) p = {0, 0, 0}, p[static_cast<std::size_t>(y)] = 1.0;
      const double s = p[0] + p[1] + p[2];
      for (auto& x : p) x /= s;
      perfect = perfect && p[static_cast<std::size_t>(y)] == 1.0;
      probs.push_back(p);
      labels.push_back(y);
    }
    const double loss = batch_loss(probs, labels);
    EXPECT_GE(loss, 0.0);
    EXPECT_EQ(loss == 0.0, perfect);
  }
}

std::vector<EncodedExample> random_batch(std::mt19937_64& gen, Eigen::Index d, int n) {
  std::vector<EncodedExample> batch;
  for (int i = 0; i < n; ++i) {
    batch.push_back({random_vector(gen, d), random_vector(gen, d), static_cast<int>(gen() % 3)});
  }
  return batch;
}

TEST(Gradients, FiniteDifferencesAllModes) {
  std::mt19937_64 gen(9);
  for (GateMode mode : {GateMode::shared, GateMode::complement, GateMode::concat}) {
    for (int i = 0; i < 30; ++i) {
      const auto params = random_params(gen, 8, mode);
      const auto batch = random_batch(gen, 8, 4);
      const auto lg = loss_and_gradients(batch, params, mode);
      EXPECT_NEAR(lg.loss, test::oracle_loss(params, batch, mode), 1e-12);
      EXPECT_LE(test::gradient_check(params, batch, mode, lg.grads), 1e-4)
          << gate_mode_name(mode) << " instance " << i;
    }
  }
}

TEST(Gradients, FiniteDifferencesWithDropoutMasks) {
  std::mt19937_64 gen(10);
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    const auto params = random_params(gen, 8);
    const auto batch = random_batch(gen, 8, 4);
    std::vector<Vector> masks;
    for (int n = 0; n < 4; ++n) masks.push_back(draw_dropout_mask(8, 0.4, rng));
    const auto lg = loss_and_gradients(batch, params, GateMode::shared, masks);
    EXPECT_NEAR(lg.loss, test::oracle_loss(params, batch, GateMode::shared, masks), 1e-12);
    EXPECT_LE(test::gradient_check(params, batch, GateMode::shared, lg.grads, 1e-5, masks), 1e-4);
  }
}

TEST(Gradients, DuplicatedBatchGivesSameGradients) {
  std::mt19937_64 gen(11);
  const auto params = random_params(gen, 6);
  const auto batch = random_batch(gen, 6, 5);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const auto a = loss_and_gradients(batch, params, GateMode::shared);
  const auto b = loss_and_gradients(doubled, params, GateMode::shared);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  EXPECT_LE((a.grads.V - b.grads.V).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((a.grads.V_DT - b.grads.V_DT).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((a.grads.b_j - b.grads.b_j).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Gradients, SaturatedCorrectBatchIsStationary) {
  std::mt19937_64 gen(12);
  auto params = GateParams::zeros(4);
  params.b_j.setConstant(1.0);
  params.b << -60, -60, 60;
  auto batch = random_batch(gen, 4, 3);
  for (auto& ex : batch) ex.label = 2;
  const auto lg = loss_and_gradients(batch, params, GateMode::shared);
  EXPECT_LT(lg.loss, 1e-40);
  EXPECT_LT(lg.grads.V.cwiseAbs().maxCoeff(), 1e-40);
  EXPECT_LT(lg.grads.b.cwiseAbs().maxCoeff(), 1e-40);
}

TEST(Gradients, Errors) {
  std::mt19937_64 gen(13);
  const auto params = random_params(gen, 4);
  EXPECT_THROW(loss_and_gradients({}, params, GateMode::shared), Error);
  auto batch = random_batch(gen, 4, 2);
  std::vector<Vector> one_mask{Vector::Ones(4)};
  EXPECT_THROW(loss_and_gradients(batch, params, GateMode::shared, one_mask), Error);
  batch[0].o_dt(0) = std::nan("");
  EXPECT_THROW(loss_and_gradients(batch, params, GateMode::shared), Error);
}

TEST(Forward, ComposesSubOperations) {
  auto sidecar = std::make_shared<SidecarIndex>();
  const std::size_t d = 16;
  ToyTextEncoder dt({kToyTextSeed, d}), ic({kToyTextSeed + 1, d});
  std::mt19937_64 gen(14);
  const auto params = random_params(gen, static_cast<Eigen::Index>(d), GateMode::shared, 0.2);
  const Example ex{"e", "i", "Crazy hair day! Lydia is a contender. :)", "Lydia", Label::positive};
  const RefinedDescription refined{"Lydia exhibits a positive expression", 0, Label::positive};
  const SceneCaption scene{"a girl with curly hair"};
  const auto pred = forward(ex, refined, scene, dt, ic, params, {});

  const auto o_dt = test::oracle_embed(build_phrase(ex.caption, ex.target, refined.text).serialize(),
                                       kToyTextSeed, d);
  const auto o_ic = test::oracle_embed(build_phrase(ex.caption, ex.target, scene.text).serialize(),
                                       kToyTextSeed + 1, d);
  const auto fused = test::oracle_gate(params, Eigen::Map<const Vector>(o_dt.data(), d),
                                       Eigen::Map<const Vector>(o_ic.data(), d), GateMode::shared);
  const auto expected = test::oracle_probabilities(params, fused);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(pred.probabilities[k], expected[k], 1e-12);
}

TEST(Forward, EmptyAuxiliaryAndZeroParamsIsUniform) {
  ToyTextEncoder dt({kToyTextSeed, 8}), ic({kToyTextSeed + 1, 8});
  const Example ex{"e", "i", "hello Lydia", "Lydia", Label::positive};
  const auto pred = forward(ex, {}, {}, dt, ic, GateParams::zeros(8), {});
  for (double p : pred.probabilities) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(Forward, ModalityPhrases) {
  const Example ex{"e", "i", "hello Lydia", "Lydia", Label::positive};
  const RefinedDescription refined{"Lydia exhibits a positive expression", 0, Label::positive};
  const SceneCaption scene{"a park"};
  FusionConfig cfg;
  cfg.modality = Modality::caption_only;
  auto p = build_phrases(ex, refined, scene, cfg);
  EXPECT_EQ(p.with_description.serialize(), "[CLS] hello Lydia [SEP] Lydia [SEP] [SEP]");
  EXPECT_EQ(p.with_scene, p.with_description);

  cfg.modality = Modality::visual_only;
  p = build_phrases(ex, refined, scene, cfg);
  EXPECT_EQ(p.with_description.serialize(),
            "[CLS] [SEP] Lydia [SEP] Lydia exhibits a positive expression [SEP]");
  EXPECT_EQ(p.with_scene.serialize(), "[CLS] [SEP] Lydia [SEP] a park [SEP]");

  cfg.modality = Modality::multimodal;
  cfg.use_scene_caption = false;
  p = build_phrases(ex, refined, scene, cfg);
  EXPECT_EQ(p.with_scene.serialize(), "[CLS] hello Lydia [SEP] Lydia [SEP] [SEP]");
}

TEST(GateParams, InitialAndFinite) {
  Rng rng(0);
  const auto p = GateParams::initial(16, GateMode::shared, rng);
  EXPECT_TRUE(p.all_finite());
  EXPECT_TRUE(p.V.isZero(0.0));
  EXPECT_TRUE(p.b.isZero(0.0));
  EXPECT_TRUE((p.b_j.array() == 1.0).all());
  const double limit = 0.1 * std::sqrt(6.0 / 32.0);
  EXPECT_LE(p.V_DT.cwiseAbs().maxCoeff(), limit);
  EXPECT_GT(p.V_DT.cwiseAbs().maxCoeff(), 0.0);
  const auto c = GateParams::initial(16, GateMode::concat, rng);
  EXPECT_EQ(c.V.rows(), 32);
  EXPECT_EQ(c.V_DT.size(), 0);
  EXPECT_EQ(c.dim(), 16u);
}

}  // namespace
}  // namespace vectn
