#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vectn/error.hpp"
#include "vectn/image.hpp"
#include "vectn/label.hpp"

namespace vectn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A detected face: box in source-image pixels plus the cropped raster.
struct FaceRegion {
  BBox bbox;
  Image crop;
};

enum class Gender { man, woman };

enum class Race { indian, black, asian, white, latino, middle_eastern };

constexpr std::string_view gender_name(Gender g) {
  return g == Gender::man ? "man" : "woman";
}

constexpr std::string_view race_name(Race r) {
  switch (r) {
    case Race::indian: return "Indian";
    case Race::black: return "Black";
    case Race::asian: return "Asian";
    case Race::white: return "White";
    case Race::latino: return "Latino";
    case Race::middle_eastern: return "Middle Eastern";
  }
  return "";
}

inline std::optional<Gender> parse_gender(std::string_view s) {
  if (s == "man" || s == "Man") return Gender::man;
  if (s == "woman" || s == "Woman") return Gender::woman;
  return std::nullopt;
}

inline std::optional<Race> parse_race(std::string_view s) {
  for (Race r : {Race::indian, Race::black, Race::asian, Race::white,
                 Race::latino, Race::middle_eastern}) {
    if (race_name(r) == s) return r;
  }
  // lower-case spellings emitted by common attribute analyzers
  if (s == "indian") return Race::indian;
  if (s == "black") return Race::black;
  if (s == "asian") return Race::asian;
  if (s == "white") return Race::white;
  if (s == "latino" || s == "latino hispanic") return Race::latino;
  if (s == "middle eastern") return Race::middle_eastern;
  return std::nullopt;
}

// Collapses a 7-way facial emotion taxonomy onto sentiment polarity.
inline std::optional<Label> emotion_to_sentiment(std::string_view emotion) {
  if (emotion == "happy" || emotion == "surprise") return Label::positive;
  if (emotion == "angry" || emotion == "disgust" || emotion == "fear" ||
      emotion == "sad") {
    return Label::negative;
  }
  if (emotion == "neutral") return Label::neutral;
  return parse_label_name(emotion);
}

// Attribute names used as confidence keys.
namespace attr {
inline constexpr std::string_view age = "age";
inline constexpr std::string_view gender = "gender";
inline constexpr std::string_view race = "race";
inline constexpr std::string_view sentiment = "sentiment";
}  // namespace attr

struct FaceAttributes {
  std::optional<int> age;
  std::optional<Gender> gender;
  std::optional<Race> race;
  std::optional<Label> sentiment;
  std::map<std::string, double, std::less<>> confidence;

  friend bool operator==(const FaceAttributes&, const FaceAttributes&) = default;
};

inline constexpr std::string_view kClsMarker = "[CLS]";
inline constexpr std::string_view kSepMarker = "[SEP]";

// Token segments of `[CLS] caption [SEP] target [SEP] auxiliary [SEP]`.
// Markers are abstract; encoder backends map them to native special tokens.
struct FusionPhrase {
  std::vector<std::string> caption;
  std::vector<std::string> target;
  std::vector<std::string> auxiliary;

  std::size_t token_count() const noexcept {
    return caption.size() + target.size() + auxiliary.size() + 4;
  }

  std::string serialize() const {
    std::string out(kClsMarker);
    auto append = [&out](const std::vector<std::string>& seg) {
      for (const auto& tok : seg) {
        out += ' ';
        out += tok;
      }
      out += ' ';
      out += kSepMarker;
    };
    append(caption);
    append(target);
    append(auxiliary);
    return out;
  }

  friend bool operator==(const FusionPhrase&, const FusionPhrase&) = default;
};

// ---------------------------------------------------------------------------
// Backend contracts. Implementations must be deterministic and safe for
// concurrent calls through a const reference.

class FaceDetector {
 public:
  virtual ~FaceDetector() = default;
  // Raw detections; ordering and clipping are applied by detect_faces().
  virtual std::vector<BBox> detect(const Image& image) const = 0;
};

class FaceAnalyzer {
 public:
  virtual ~FaceAnalyzer() = default;
  virtual int min_crop_size() const { return 1; }
  virtual FaceAttributes analyze(const Image& source, const FaceRegion& face) const = 0;
};

// The contrastive text/image encoder pair used for target alignment.
class AlignmentEncoders {
 public:
  virtual ~AlignmentEncoders() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector encode_text(std::string_view text) const = 0;
  virtual Vector encode_image(const Image& image) const = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption(const Image& image) const = 0;
};

// Pools a serialized fusion phrase into a fixed-size sentence vector.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector pool(const FusionPhrase& phrase) const = 0;
};

}  // namespace vectn
