#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "vectn/contracts.hpp"
#include "vectn/error.hpp"
#include "vectn/image.hpp"
#include "vectn/label.hpp"

namespace vectn {

// Confidence threshold below which an attribute is discarded.
inline constexpr double kDefaultAlpha = 0.5;

struct FaceDescription {
  std::string text;
  int face_index = 0;
  Label sentiment = Label::neutral;

  friend bool operator==(const FaceDescription&, const FaceDescription&) = default;
};

// Runs the detector, clips boxes to the image, and returns faces in raster
// order of their box origin (x, then y; width and height break exact ties).
inline std::vector<FaceRegion> detect_faces(const Image& image,
                                            const FaceDetector& detector) {
  if (image.empty()) {
    throw Error("detect_faces: empty image '" + image.ref() + "'");
  }
  std::vector<BBox> boxes;
  try {
    boxes = detector.detect(image);
  } catch (const std::exception& e) {
    throw Error("face detector failed on image '" + image.ref() + "': " + e.what());
  }

  std::vector<BBox> clipped;
  clipped.reserve(boxes.size());
  for (const BBox& b : boxes) {
    const int x0 = std::clamp(b.x, 0, image.width());
    const int y0 = std::clamp(b.y, 0, image.height());
    const int x1 = std::clamp(b.x + b.width, 0, image.width());
    const int y1 = std::clamp(b.y + b.height, 0, image.height());
    if (x1 - x0 >= 1 && y1 - y0 >= 1) clipped.push_back({x0, y0, x1 - x0, y1 - y0});
  }
  std::sort(clipped.begin(), clipped.end(), [](const BBox& a, const BBox& b) {
    return std::tie(a.x, a.y, a.width, a.height) <
           std::tie(b.x, b.y, b.width, b.height);
  });

  std::vector<FaceRegion> faces;
  faces.reserve(clipped.size());
  for (const BBox& b : clipped) faces.push_back({b, image.crop(b)});
  return faces;
}

inline FaceAttributes analyze_attributes(const Image& source, const FaceRegion& face,
                                         const FaceAnalyzer& analyzer) {
  const int min_size = analyzer.min_crop_size();
  if (face.crop.width() < min_size || face.crop.height() < min_size) {
    throw Error("analyze_attributes: face crop " + std::to_string(face.crop.width()) +
                "x" + std::to_string(face.crop.height()) + " below analyzer minimum " +
                std::to_string(min_size));
  }
  FaceAttributes attrs = analyzer.analyze(source, face);

  auto check = [&attrs](bool present, std::string_view name) {
    if (!present) return;
    auto it = attrs.confidence.find(name);
    if (it == attrs.confidence.end()) {
      throw Error("analyzer returned attribute '" + std::string(name) +
                  "' without a confidence score");
    }
    if (!(it->second >= 0.0 && it->second <= 1.0)) {
      throw Error("analyzer confidence for '" + std::string(name) + "' outside [0,1]");
    }
  };
  check(attrs.age.has_value(), attr::age);
  check(attrs.gender.has_value(), attr::gender);
  check(attrs.race.has_value(), attr::race);
  check(attrs.sentiment.has_value(), attr::sentiment);
  return attrs;
}

// Drops every attribute whose confidence is strictly below alpha.
inline FaceAttributes filter_attributes(const FaceAttributes& attrs, double alpha) {
  FaceAttributes out = attrs;
  auto keep = [&](std::string_view name) {
    auto it = attrs.confidence.find(name);
    return it != attrs.confidence.end() && !(it->second < alpha);
  };
  auto drop = [&](std::string_view name) {
    if (auto it = out.confidence.find(name); it != out.confidence.end()) {
      out.confidence.erase(it);
    }
  };
  if (out.age && !keep(attr::age)) { out.age.reset(); drop(attr::age); }
  if (out.gender && !keep(attr::gender)) { out.gender.reset(); drop(attr::gender); }
  if (out.race && !keep(attr::race)) { out.race.reset(); drop(attr::race); }
  if (out.sentiment && !keep(attr::sentiment)) { out.sentiment.reset(); drop(attr::sentiment); }
  return out;
}

namespace detail {

inline bool starts_with_vowel(std::string_view word) {
  if (word.empty()) return false;
  switch (std::tolower(static_cast<unsigned char>(word.front()))) {
    case 'a': case 'e': case 'i': case 'o': case 'u': return true;
    default: return false;
  }
}

}  // namespace detail

// "a" or "an" by the first letter of the following word.
inline std::string_view indefinite_article(std::string_view next_word) {
  return detail::starts_with_vowel(next_word) ? "an" : "a";
}

// Template: "A [Race] [Gender] with [Age] years of age exhibits a(n)
// [Sentiment] expression". Sentiment is mandatory; the other slots degrade
// (no race word, "person", no age clause).
inline std::optional<FaceDescription> render_description(const FaceAttributes& attrs,
                                                         int face_index) {
  if (!attrs.sentiment) return std::nullopt;

  std::string subject;
  if (attrs.race) {
    subject = std::string(race_name(*attrs.race)) + ' ';
  }
  subject += attrs.gender ? std::string(gender_name(*attrs.gender)) : "person";

  std::string lead(indefinite_article(subject));
  lead.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(lead.front())));

  std::string text = lead + ' ' + subject;
  if (attrs.age) text += " with " + std::to_string(*attrs.age) + " years of age";
  const std::string_view sentiment = label_name(*attrs.sentiment);
  text += " exhibits ";
  text += indefinite_article(sentiment);
  text += ' ';
  text += sentiment;
  text += " expression";
  return FaceDescription{std::move(text), face_index, *attrs.sentiment};
}

// Recovers the sentiment word of a rendered or refined description
// ("... exhibits a negative expression").
inline std::optional<Label> description_sentiment(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(std::move(w));
  if (words.size() < 2 || words.back() != "expression") return std::nullopt;
  return parse_label_name(words[words.size() - 2]);
}

// One analyzed face as produced by the faces stage.
struct AnalyzedFace {
  FaceRegion region;
  FaceAttributes attributes;  // already alpha-filtered
  std::optional<FaceDescription> description;
};

inline std::vector<AnalyzedFace> describe_faces(const Image& image,
                                                const FaceDetector& detector,
                                                const FaceAnalyzer& analyzer,
                                                double alpha) {
  std::vector<AnalyzedFace> out;
  auto regions = detect_faces(image, detector);
  out.reserve(regions.size());
  for (std::size_t i = 0; i < regions.size(); ++i) {
    auto attrs = filter_attributes(analyze_attributes(image, regions[i], analyzer), alpha);
    auto desc = render_description(attrs, static_cast<int>(i));
    out.push_back({std::move(regions[i]), std::move(attrs), std::move(desc)});
  }
  return out;
}

// Sentiment-bearing descriptions in face order.
inline std::vector<FaceDescription> descriptions_of(const std::vector<AnalyzedFace>& faces) {
  std::vector<FaceDescription> out;
  for (const auto& f : faces) {
    if (f.description) out.push_back(*f.description);
  }
  return out;
}

}  // namespace vectn
