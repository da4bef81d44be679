#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <regex>

#include "support.hpp"
#include "toy_oracle.hpp"
#include "vectn/target_alignment.hpp"

namespace vectn {
namespace {

using test::random_matrix;
using test::random_vector;

FaceDescription desc(std::string text, int index, Label sentiment) {
  return {std::move(text), index, sentiment};
}

// Encoders returning scripted vectors and counting calls.
class ScriptedEncoders final : public AlignmentEncoders {
 public:
  std::map<std::string, Vector> text;
  Vector image;
  mutable int calls = 0;

  std::size_t dim() const override { return static_cast<std::size_t>(image.size()); }
  Vector encode_text(std::string_view s) const override {
    ++calls;
    return text.at(std::string(s));
  }
  Vector encode_image(const Image&) const override {
    ++calls;
    return image;
  }
};

TEST(EncodeDescription, ConcatenatesWithSpace) {
  const ToyEncoderRule rule{kToyAlignSeed, 16};
  auto sidecar = std::make_shared<SidecarIndex>();
  ToyAlignmentEncoders enc(sidecar, rule);
  const auto d = desc("A man with 43 years of age exhibits a negative expression", 0, Label::negative);
  const Vector v = encode_description_with_target(d, "Justin", enc);
  const auto oracle = test::oracle_embed(d.text + " Justin", kToyAlignSeed, 16);
  ASSERT_EQ(v.size(), 16);
  for (int k = 0; k < 16; ++k) EXPECT_EQ(v(k), oracle[static_cast<std::size_t>(k)]);
  EXPECT_EQ(encode_description_with_target(d, "Justin", enc), v);
  EXPECT_NE(encode_description_with_target(d, "Lydia", enc), v);
  EXPECT_THROW(encode_description_with_target(d, "", enc), Error);
}

TEST(ProjectNormalize, ThreeFourFive) {
  Vector v(2);
  v << 3, 4;
  const Vector u = project_normalize(v, Matrix::Identity(2, 2));
  EXPECT_DOUBLE_EQ(u(0), 0.6);
  EXPECT_DOUBLE_EQ(u(1), 0.8);
  EXPECT_EQ(project_normalize(2.0 * v, Matrix::Identity(2, 2)), u);
}

TEST(ProjectNormalize, UnitNormAndScaleInvariance) {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> lambda(0.01, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const auto de = 1 + static_cast<Eigen::Index>(gen() % 12);
    const auto da = 1 + static_cast<Eigen::Index>(gen() % 12);
    const Vector v = random_vector(gen, de);
    const Matrix W = random_matrix(gen, de, da);
    const Vector u = project_normalize(v, W);
    EXPECT_NEAR(u.norm(), 1.0, 1e-6);
    // power-of-two scales are exact in floating point
    EXPECT_EQ(project_normalize(8.0 * v, W), u);
    const Vector s = project_normalize(lambda(gen) * v, W);
    EXPECT_LE((s - u).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(ProjectNormalize, Errors) {
  EXPECT_THROW(project_normalize(Vector::Zero(3), Matrix::Identity(3, 3)), Error);
  EXPECT_THROW(project_normalize(Vector::Ones(2), Matrix::Identity(3, 3)), Error);
}

TEST(ScoreDescriptions, ClosedForms) {
  Vector e1 = Vector::Unit(2, 0), e2 = Vector::Unit(2, 1);
  std::vector<Vector> same{e1}, ortho{e2};
  EXPECT_DOUBLE_EQ(score_descriptions(e1, same, 0.0)[0], 1.0);
  EXPECT_DOUBLE_EQ(score_descriptions(e1, ortho, 3.7)[0], 0.0);
  Vector half(2);
  half << 0.5, std::sqrt(0.75);
  std::vector<Vector> h{half};
  EXPECT_NEAR(score_descriptions(e1, h, std::numbers::ln2)[0], 1.0, 1e-15);
  std::vector<Vector> wrong{Vector::Ones(3)};
  EXPECT_THROW(score_descriptions(e1, wrong, 0.0), Error);
}

TEST(ScoreDescriptions, TZeroMatchesCosineOracle) {
  std::mt19937_64 gen(22);
  for (int i = 0; i < 1000; ++i) {
    const auto d = 1 + static_cast<Eigen::Index>(gen() % 16);
    const Vector img = random_vector(gen, d).normalized();
    std::vector<Vector> units;
    for (int k = 0; k < 3; ++k) units.push_back(random_vector(gen, d).normalized());
    const auto scores = score_descriptions(img, units, 0.0);
    for (std::size_t k = 0; k < units.size(); ++k) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) dot += img(j) * units[k](j);
      EXPECT_NEAR(scores[k], dot, 1e-12);
      EXPECT_LE(std::abs(scores[k]), 1.0 + 1e-12);
    }
  }
}

TEST(ScoreDescriptions, LargerTKeepsArgmax) {
  std::mt19937_64 gen(23);
  for (int i = 0; i < 200; ++i) {
    const Vector img = random_vector(gen, 6).normalized();
    std::vector<Vector> units;
    for (int k = 0; k < 4; ++k) units.push_back(random_vector(gen, 6).normalized());
    const auto base = select_description(score_descriptions(img, units, 0.0));
    for (double t : {0.5, 1.0, 4.6, 10.0}) {
      EXPECT_EQ(select_description(score_descriptions(img, units, t)), base);
    }
  }
}

TEST(SelectDescription, ArgmaxWithLowestIndexTies) {
  EXPECT_EQ(select_description(std::vector<double>{0.2, 0.9, 0.5}), 1u);
  EXPECT_EQ(select_description(std::vector<double>{0.7, 0.7}), 0u);
  EXPECT_EQ(select_description(std::vector<double>{-3.0}), 0u);
  EXPECT_EQ(select_description(std::vector<double>{0.1, 0.4, 0.4, 0.4}), 1u);
  EXPECT_THROW(select_description(std::vector<double>{}), Error);
}

TEST(RefineDescription, Template) {
  const auto r = refine_description(
      desc("A Black man with 43 years of age exhibits a negative expression", 3, Label::negative),
      "Justin");
  EXPECT_EQ(r.text, "Justin exhibits a negative expression");
  EXPECT_EQ(r.source_face_index, 3);
  EXPECT_EQ(r.sentiment, Label::negative);
  EXPECT_EQ(refine_description(desc("A woman exhibits a neutral expression", 0, Label::neutral),
                               "America").text,
            "America exhibits a neutral expression");
  EXPECT_EQ(refine_description(desc("A person exhibits a positive expression", 0, Label::positive),
                               "Lydia").text,
            "Lydia exhibits a positive expression");
  EXPECT_THROW(refine_description(desc("x", 0, Label::neutral), ""), Error);
}

TEST(AlignExample, ZeroCandidates) {
  ScriptedEncoders enc;
  const auto r = align_example({"e", "i", "hi Lydia", "Lydia", Label::positive},
                               test::blank_image(2, 2, "i"), {}, enc, ProjectionParams::identity(2, 2));
  EXPECT_TRUE(r.text.empty());
  EXPECT_FALSE(r.source_face_index.has_value());
  EXPECT_FALSE(r.sentiment.has_value());
  EXPECT_EQ(enc.calls, 0);
}

TEST(AlignExample, SingleCandidateNeverEncodes) {
  ScriptedEncoders enc;
  std::vector<FaceDescription> one{desc("A woman exhibits a positive expression", 4, Label::positive)};
  const auto r = align_with_scores("Lydia", test::blank_image(2, 2, "i"), one, enc,
                                   ProjectionParams::identity(2, 2));
  EXPECT_EQ(r.refined.text, "Lydia exhibits a positive expression");
  EXPECT_EQ(r.refined.source_face_index, 4);
  EXPECT_TRUE(r.scores.empty());
  EXPECT_EQ(enc.calls, 0);
}

TEST(AlignExample, ThreeCandidatesHandComputedScores) {
  // Image along e1; candidate k is [c_k, sqrt(1 - c_k^2), 0] scaled, so its
  // cosine with the image is c_k. With t = 0 the scores are the cosines.
  const double cosines[] = {0.12, 0.88, 0.31};
  const double scales[] = {2.0, 0.25, 7.0};
  ScriptedEncoders enc;
  enc.image = Vector::Unit(3, 0) * 5.0;
  std::vector<FaceDescription> ds;
  const char* sentiments[] = {"negative", "positive", "neutral"};
  for (int k = 0; k < 3; ++k) {
    ds.push_back(desc(std::string("A person exhibits a ") + sentiments[k] + " expression", k,
                      *parse_label_name(sentiments[k])));
    Vector v(3);
    v << cosines[k], std::sqrt(1.0 - cosines[k] * cosines[k]), 0.0;
    enc.text[ds.back().text + " Lydia"] = scales[k] * v;
  }
  const auto r = align_with_scores("Lydia", test::blank_image(2, 2, "i"), ds, enc,
                                   ProjectionParams::identity(3, 3, 0.0));
  ASSERT_EQ(r.scores.size(), 3u);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(r.scores[static_cast<std::size_t>(k)], cosines[k], 1e-12);
  EXPECT_EQ(r.refined.source_face_index, 1);
  EXPECT_EQ(r.refined.text, "Lydia exhibits a positive expression");
  EXPECT_EQ(enc.calls, 4);

  // positive rescaling of raw encoder outputs leaves the choice unchanged
  for (auto& [k, v] : enc.text) v *= 3.0;
  enc.image *= 0.5;
  EXPECT_EQ(align_with_scores("Lydia", test::blank_image(2, 2, "i"), ds, enc,
                              ProjectionParams::identity(3, 3, 0.0))
                .refined.source_face_index,
            1);
}

TEST(AlignExample, ToyEncodersMatchHandComputation) {
  const std::size_t dim = 32;
  auto sidecar = std::make_shared<SidecarIndex>();
  const std::string visual = "A woman with 30 years of age exhibits a positive expression Lydia";
  (*sidecar)["img"].visual_text = visual;
  ToyAlignmentEncoders enc(sidecar, {kToyAlignSeed, dim});
  std::vector<FaceDescription> ds{
      desc("A man with 52 years of age exhibits a negative expression", 0, Label::negative),
      desc("A woman with 30 years of age exhibits a positive expression", 1, Label::positive),
      desc("A White man exhibits a neutral expression", 2, Label::neutral)};
  const double t = 4.6;
  const auto r = align_with_scores("Lydia", test::blank_image(4, 4, "img"), ds, enc,
                                   ProjectionParams::identity(dim, dim, t));
  const auto image = test::oracle_embed(visual, kToyAlignSeed, dim);
  std::vector<double> expected;
  for (const auto& d : ds) {
    expected.push_back(test::oracle_cosine(image, test::oracle_embed(d.text + " Lydia", kToyAlignSeed, dim)) *
                       std::exp(t));
  }
  ASSERT_EQ(r.scores.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.scores[k], expected[k], 1e-9);
  EXPECT_NEAR(r.scores[1], std::exp(t), 1e-9);
  EXPECT_EQ(r.refined.source_face_index, 1);
}

TEST(AlignExample, RefinedTextPattern) {
  std::mt19937_64 gen(24);
  const std::vector<std::string> targets{"Lydia", "America", "Justin Bieber", "Obama"};
  for (int i = 0; i < 300; ++i) {
    const auto target = targets[gen() % targets.size()];
    const auto n = 1 + gen() % 4;
    ScriptedEncoders enc;
    enc.image = random_vector(gen, 4);
    std::vector<FaceDescription> ds;
    for (std::size_t k = 0; k < n; ++k) {
      const Label l = decode_label(static_cast<int>(gen() % 3));
      ds.push_back(desc("A person " + std::to_string(k) + " exhibits a " +
                            std::string(label_name(l)) + " expression",
                        static_cast<int>(k), l));
      enc.text[ds.back().text + " " + target] = random_vector(gen, 4);
    }
    const auto r = align_with_scores(target, Image(1, 1), ds, enc, ProjectionParams::identity(4, 4));
    const std::regex shape("^" + target + " exhibits an? (positive|negative|neutral) expression$");
    EXPECT_TRUE(std::regex_match(r.refined.text, shape)) << r.refined.text;
    ASSERT_TRUE(r.refined.source_face_index.has_value());
    EXPECT_EQ(r.refined.sentiment, ds[static_cast<std::size_t>(*r.refined.source_face_index)].sentiment);
  }
}

TEST(SceneCaption, FromSidecar) {
  auto sidecar = std::make_shared<SidecarIndex>();
  (*sidecar)["court"].scene_caption = "two players on a court";
  ToyCaptioner cap(sidecar);
  const auto img = test::blank_image(4, 4, "court");
  EXPECT_EQ(scene_caption(img, cap).text, "two players on a court");
  EXPECT_EQ(scene_caption(img, cap), scene_caption(img, cap));
  EXPECT_EQ(scene_caption(test::blank_image(4, 4, "other"), cap).text, "");
  EXPECT_THROW(scene_caption(Image{}, cap), Error);
}

TEST(ProjectionParams, IdentityPaddedAndValidated) {
  const auto p = ProjectionParams::identity(4, 2);
  EXPECT_EQ(p.text_projection.rows(), 4);
  EXPECT_EQ(p.text_projection.cols(), 2);
  EXPECT_EQ(p.text_projection(1, 1), 1.0);
  EXPECT_EQ(p.text_projection(3, 1), 0.0);
  EXPECT_DOUBLE_EQ(p.t, 4.6);
  EXPECT_NO_THROW(p.validate());
  auto bad = p;
  bad.image_projection(0, 0) = std::nan("");
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_THROW(ProjectionParams::identity(0, 3), Error);
}

}  // namespace
}  // namespace vectn
