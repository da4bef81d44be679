#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vectn/contracts.hpp"
#include "vectn/dataset.hpp"
#include "vectn/error.hpp"
#include "vectn/face_description.hpp"
#include "vectn/label.hpp"

namespace vectn {

inline constexpr std::size_t kDefaultEmbedDim = 512;
inline constexpr std::size_t kDefaultAlignDim = 512;
// e^4.6 is roughly 100, the usual contrastive logit scale.
inline constexpr double kDefaultLogitScale = 4.6;

// Projection of both encoder outputs into the shared alignment space, plus
// the log of the similarity scale.
struct ProjectionParams {
  Matrix text_projection;   // d_e x d_a
  Matrix image_projection;  // d_e x d_a
  double t = kDefaultLogitScale;

  // Identity on the leading min(d_e, d_a) coordinates, zero elsewhere.
  static ProjectionParams identity(std::size_t embed_dim = kDefaultEmbedDim,
                                   std::size_t align_dim = kDefaultAlignDim,
                                   double t = kDefaultLogitScale) {
    if (embed_dim == 0 || align_dim == 0) {
      throw Error("ProjectionParams: dimensions must be >= 1");
    }
    const auto de = static_cast<Eigen::Index>(embed_dim);
    const auto da = static_cast<Eigen::Index>(align_dim);
    ProjectionParams p{Matrix::Identity(de, da), Matrix::Identity(de, da), t};
    return p;
  }

  void validate() const {
    if (text_projection.cols() < 1 || image_projection.cols() < 1) {
      throw Error("ProjectionParams: alignment dimension must be >= 1");
    }
    if (text_projection.rows() != image_projection.rows() ||
        text_projection.cols() != image_projection.cols()) {
      throw Error("ProjectionParams: text and image projections differ in shape");
    }
    if (!text_projection.allFinite() || !image_projection.allFinite() || !std::isfinite(t)) {
      throw Error("ProjectionParams: non-finite entry");
    }
  }
};

struct RefinedDescription {
  std::string text;
  std::optional<int> source_face_index;
  std::optional<Label> sentiment;

  bool empty() const noexcept { return !source_face_index.has_value(); }

  friend bool operator==(const RefinedDescription&, const RefinedDescription&) = default;
};

struct SceneCaption {
  std::string text;

  friend bool operator==(const SceneCaption&, const SceneCaption&) = default;
};

inline Vector encode_description_with_target(const FaceDescription& description,
                                             const std::string& target,
                                             const AlignmentEncoders& encoders) {
  if (description.text.empty()) throw Error("encode_description_with_target: empty description");
  if (target.empty()) throw Error("encode_description_with_target: empty target");
  return encoders.encode_text(description.text + ' ' + target);
}

// (v W) / ||v W||_2 for row vector v.
inline Vector project_normalize(const Vector& v, const Matrix& projection) {
  if (v.size() != projection.rows()) {
    throw Error("project_normalize: vector dim " + std::to_string(v.size()) +
                " does not match projection rows " + std::to_string(projection.rows()));
  }
  Vector projected = projection.transpose() * v;
  const double norm = projected.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error("project_normalize: degenerate (zero or non-finite) projected embedding");
  }
  return projected / norm;
}

// Cosine (inner product of unit vectors) times e^t, one score per description.
inline std::vector<double> score_descriptions(const Vector& image_unit,
                                              std::span<const Vector> desc_units, double t) {
  const double scale = std::exp(t);
  std::vector<double> scores;
  scores.reserve(desc_units.size());
  for (const Vector& d : desc_units) {
    if (d.size() != image_unit.size()) {
      throw Error("score_descriptions: dimension mismatch (" + std::to_string(d.size()) +
                  " vs " + std::to_string(image_unit.size()) + ")");
    }
    scores.push_back(image_unit.dot(d) * scale);
  }
  return scores;
}

// Argmax; the lowest index wins ties.
inline std::size_t select_description(std::span<const double> scores) {
  if (scores.empty()) throw Error("select_description: no candidate scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

inline RefinedDescription refine_description(const FaceDescription& description,
                                             const std::string& target) {
  if (target.empty()) throw Error("refine_description: empty target");
  const std::string_view sentiment = label_name(description.sentiment);
  std::string text = target + " exhibits ";
  text += indefinite_article(sentiment);
  text += ' ';
  text += sentiment;
  text += " expression";
  return {std::move(text), description.face_index, description.sentiment};
}

inline SceneCaption scene_caption(const Image& image, const Captioner& captioner) {
  if (image.empty()) throw Error("scene_caption: empty image '" + image.ref() + "'");
  try {
    return SceneCaption{captioner.caption(image)};
  } catch (const std::exception& e) {
    throw Error("captioner failed on image '" + image.ref() + "': " + e.what());
  }
}

struct AlignmentResult {
  RefinedDescription refined;
  std::vector<double> scores;  // empty unless two or more candidates were scored
};

// Picks the face description that best matches the image for this target
// and rewrites it around the target. Single candidates skip scoring.
inline AlignmentResult align_with_scores(const std::string& target, const Image& image,
                                         std::span<const FaceDescription> descriptions,
                                         const AlignmentEncoders& encoders,
                                         const ProjectionParams& proj) {
  if (descriptions.empty()) return {};
  if (descriptions.size() == 1) return {refine_description(descriptions.front(), target), {}};

  proj.validate();
  std::vector<Vector> desc_units;
  desc_units.reserve(descriptions.size());
  for (const auto& d : descriptions) {
    desc_units.push_back(project_normalize(
        encode_description_with_target(d, target, encoders), proj.text_projection));
  }
  const Vector image_unit = project_normalize(encoders.encode_image(image), proj.image_projection);
  auto scores = score_descriptions(image_unit, desc_units, proj.t);
  const auto best = select_description(scores);
  return {refine_description(descriptions[best], target), std::move(scores)};
}

inline RefinedDescription align_example(const Example& example, const Image& image,
                                        std::span<const FaceDescription> descriptions,
                                        const AlignmentEncoders& encoders,
                                        const ProjectionParams& proj) {
  return align_with_scores(example.target, image, descriptions, encoders, proj).refined;
}

}  // namespace vectn
