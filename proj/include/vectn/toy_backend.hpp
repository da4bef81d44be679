#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vectn/contracts.hpp"
#include "vectn/error.hpp"
#include "vectn/face_description.hpp"
#include "vectn/fusion_classifier.hpp"
#include "vectn/rng.hpp"
#include "vectn/target_alignment.hpp"

namespace vectn {

// Toy hash embedding rule.
//
//   tokens   : maximal runs of bytes other than ' ', \t, \n, \v, \f, \r
//   state(w) : fnv1a64(bytes of w) XOR seed
//   vec(w)_k : sqrt(3) * (2 * u_k - 1), where u_k = (splitmix64(state) >> 11)
//              * 2^-53 is drawn k = 0, 1, ..., dim-1 in order from the
//              evolving state (zero mean, unit variance per component)
//   embed(s) : sum of vec(w) over the tokens of s, accumulated in token
//              order; the all-zero vector when s has no tokens
//
// Sum pooling keeps each token's contribution at unit scale regardless of
// phrase length.
struct ToyEncoderRule {
  std::uint64_t seed = 0;
  std::size_t dim = 0;
};

inline Vector toy_token_vector(std::string_view token, const ToyEncoderRule& rule) {
  std::uint64_t state = fnv1a64(token) ^ rule.seed;
  Vector v(static_cast<Eigen::Index>(rule.dim));
  const double scale = std::sqrt(3.0);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    v(k) = scale * (2.0 * unit_double(splitmix64(state)) - 1.0);
  }
  return v;
}

inline Vector toy_embed(std::string_view text, const ToyEncoderRule& rule) {
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(rule.dim));
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r';
  };
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) {
      sum += toy_token_vector(text.substr(i, j - i), rule);
    }
    i = j;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Sidecar annotations: one JSON object per line,
//   {"id": <image_ref>, "faces": [{"bbox": [x,y,w,h], "attributes": {...},
//    "confidence": {...}}], "scene_caption": str, "visual_text": str}
// The faces array uses the faces.jsonl schema.

struct SidecarFace {
  BBox bbox;
  FaceAttributes attributes;
};

struct SidecarEntry {
  std::vector<SidecarFace> faces;
  std::string scene_caption;
  std::string visual_text;
};

using SidecarIndex = std::map<std::string, SidecarEntry, std::less<>>;

inline BBox bbox_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw Error("bbox must be [x, y, w, h]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

inline nlohmann::json bbox_to_json(const BBox& b) {
  return nlohmann::json::array({b.x, b.y, b.width, b.height});
}

// Attributes plus confidences. Age and gender are regression-style heads and
// default to confidence 1.0; race and sentiment must carry a score.
inline FaceAttributes attributes_from_json(const nlohmann::json& face) {
  FaceAttributes a;
  const nlohmann::json attrs = face.value("attributes", nlohmann::json::object());
  const nlohmann::json conf = face.value("confidence", nlohmann::json::object());
  if (attrs.contains("age") && !attrs["age"].is_null()) {
    a.age = attrs["age"].get<int>();
    a.confidence[std::string(attr::age)] = conf.value("age", 1.0);
  }
  if (attrs.contains("gender") && !attrs["gender"].is_null()) {
    const auto s = attrs["gender"].get<std::string>();
    a.gender = parse_gender(s);
    if (!a.gender) throw Error("unknown gender '" + s + "'");
    a.confidence[std::string(attr::gender)] = conf.value("gender", 1.0);
  }
  if (attrs.contains("race") && !attrs["race"].is_null()) {
    const auto s = attrs["race"].get<std::string>();
    a.race = parse_race(s);
    if (!a.race) throw Error("unknown race '" + s + "'");
    if (!conf.contains("race")) throw Error("race attribute without confidence");
    a.confidence[std::string(attr::race)] = conf["race"].get<double>();
  }
  for (const char* key : {"sentiment", "emotion"}) {
    if (!attrs.contains(key) || attrs[key].is_null()) continue;
    const auto s = attrs[key].get<std::string>();
    a.sentiment = emotion_to_sentiment(s);
    if (!a.sentiment) throw Error("unknown " + std::string(key) + " '" + s + "'");
    if (!conf.contains(key)) throw Error(std::string(key) + " attribute without confidence");
    a.confidence[std::string(attr::sentiment)] = conf[key].get<double>();
    break;
  }
  return a;
}

inline nlohmann::json attributes_to_json(const FaceAttributes& a) {
  nlohmann::json attrs = nlohmann::json::object();
  nlohmann::json conf = nlohmann::json::object();
  if (a.age) attrs["age"] = *a.age;
  if (a.gender) attrs["gender"] = std::string(gender_name(*a.gender));
  if (a.race) attrs["race"] = std::string(race_name(*a.race));
  if (a.sentiment) attrs["sentiment"] = std::string(label_name(*a.sentiment));
  for (const auto& [k, v] : a.confidence) conf[k] = v;
  return {{"attributes", attrs}, {"confidence", conf}};
}

inline SidecarIndex load_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open sidecar annotations '" + path.string() + "'");
  SidecarIndex index;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SidecarEntry entry;
      for (const auto& f : j.value("faces", nlohmann::json::array())) {
        entry.faces.push_back({bbox_from_json(f.at("bbox")), attributes_from_json(f)});
      }
      entry.scene_caption = j.value("scene_caption", std::string{});
      entry.visual_text = j.value("visual_text", std::string{});
      index[j.at("id").get<std::string>()] = std::move(entry);
    } catch (const std::exception& e) {
      throw Error(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return index;
}

// ---------------------------------------------------------------------------
// Toy backends

class ToyFaceDetector final : public FaceDetector {
 public:
  explicit ToyFaceDetector(std::shared_ptr<const SidecarIndex> sidecar)
      : sidecar_(std::move(sidecar)) {}

  std::vector<BBox> detect(const Image& image) const override {
    std::vector<BBox> out;
    if (auto it = sidecar_->find(image.ref()); it != sidecar_->end()) {
      for (const auto& f : it->second.faces) out.push_back(f.bbox);
    }
    return out;
  }

 private:
  std::shared_ptr<const SidecarIndex> sidecar_;
};

class ToyFaceAnalyzer final : public FaceAnalyzer {
 public:
  explicit ToyFaceAnalyzer(std::shared_ptr<const SidecarIndex> sidecar, int min_crop = 1)
      : sidecar_(std::move(sidecar)), min_crop_(min_crop) {}

  int min_crop_size() const override { return min_crop_; }

  FaceAttributes analyze(const Image& source, const FaceRegion& face) const override {
    auto it = sidecar_->find(source.ref());
    if (it != sidecar_->end()) {
      for (const auto& f : it->second.faces) {
        if (clip(f.bbox, source) == face.bbox) return f.attributes;
      }
    }
    throw Error("toy analyzer: no sidecar face at the given box in '" + source.ref() + "'");
  }

 private:
  static BBox clip(const BBox& b, const Image& image) {
    const int x0 = std::clamp(b.x, 0, image.width());
    const int y0 = std::clamp(b.y, 0, image.height());
    const int x1 = std::clamp(b.x + b.width, 0, image.width());
    const int y1 = std::clamp(b.y + b.height, 0, image.height());
    return {x0, y0, x1 - x0, y1 - y0};
  }

  std::shared_ptr<const SidecarIndex> sidecar_;
  int min_crop_;
};

// Text side embeds the string; image side embeds the sidecar visual_text.
class ToyAlignmentEncoders final : public AlignmentEncoders {
 public:
  ToyAlignmentEncoders(std::shared_ptr<const SidecarIndex> sidecar, ToyEncoderRule rule)
      : sidecar_(std::move(sidecar)), rule_(rule) {}

  std::size_t dim() const override { return rule_.dim; }
  Vector encode_text(std::string_view text) const override { return toy_embed(text, rule_); }
  Vector encode_image(const Image& image) const override {
    auto it = sidecar_->find(image.ref());
    return toy_embed(it == sidecar_->end() ? std::string_view{} : it->second.visual_text, rule_);
  }

 private:
  std::shared_ptr<const SidecarIndex> sidecar_;
  ToyEncoderRule rule_;
};

class ToyCaptioner final : public Captioner {
 public:
  explicit ToyCaptioner(std::shared_ptr<const SidecarIndex> sidecar)
      : sidecar_(std::move(sidecar)) {}

  std::string caption(const Image& image) const override {
    auto it = sidecar_->find(image.ref());
    return it == sidecar_->end() ? std::string{} : it->second.scene_caption;
  }

 private:
  std::shared_ptr<const SidecarIndex> sidecar_;
};

class ToyTextEncoder final : public TextEncoder {
 public:
  explicit ToyTextEncoder(ToyEncoderRule rule) : rule_(rule) {}
  std::size_t dim() const override { return rule_.dim; }
  Vector pool(const FusionPhrase& phrase) const override {
    return toy_embed(phrase.serialize(), rule_);
  }
  const ToyEncoderRule& rule() const noexcept { return rule_; }

 private:
  ToyEncoderRule rule_;
};

// ---------------------------------------------------------------------------
// Registry

inline constexpr std::uint64_t kToyAlignSeed = 0x5EED0A11;
inline constexpr std::uint64_t kToyTextSeed = 0x5EED7E47;

struct BackendOptions {
  std::filesystem::path annotations;  // toy sidecar file
  std::filesystem::path model_dir = "models";
  std::size_t text_dim = kDefaultTextDim;
  std::size_t embed_dim = kDefaultEmbedDim;
  bool shared_encoder = false;
};

struct BackendBundle {
  std::string name;
  std::unique_ptr<FaceDetector> detector;
  std::unique_ptr<FaceAnalyzer> analyzer;
  std::unique_ptr<AlignmentEncoders> encoders;
  std::unique_ptr<Captioner> captioner;
  std::unique_ptr<TextEncoder> description_encoder;  // pools the C/T/D_T phrase
  std::unique_ptr<TextEncoder> scene_encoder;        // pools the C/T/I_C phrase
  std::string identity;  // recorded in checkpoints
};

using BackendFactory = std::function<BackendBundle(const BackendOptions&)>;

inline BackendBundle make_toy_bundle(const BackendOptions& opts,
                                     std::shared_ptr<const SidecarIndex> sidecar) {
  BackendBundle b;
  b.name = "toy";
  b.detector = std::make_unique<ToyFaceDetector>(sidecar);
  b.analyzer = std::make_unique<ToyFaceAnalyzer>(sidecar);
  b.encoders = std::make_unique<ToyAlignmentEncoders>(sidecar, ToyEncoderRule{kToyAlignSeed, opts.embed_dim});
  b.captioner = std::make_unique<ToyCaptioner>(sidecar);
  const ToyEncoderRule dt_rule{kToyTextSeed, opts.text_dim};
  const ToyEncoderRule ic_rule{opts.shared_encoder ? kToyTextSeed : kToyTextSeed + 1, opts.text_dim};
  b.description_encoder = std::make_unique<ToyTextEncoder>(dt_rule);
  b.scene_encoder = std::make_unique<ToyTextEncoder>(ic_rule);
  b.identity = "toy/fnv1a-splitmix64-sum;text_seed=" + std::to_string(dt_rule.seed) + "," +
               std::to_string(ic_rule.seed) + ";align_seed=" + std::to_string(kToyAlignSeed);
  return b;
}

inline constexpr std::array<std::string_view, 6> kPretrainedAssets = {
    "face_detector.onnx", "face_attributes.onnx", "contrastive_text.onnx",
    "contrastive_image.onnx", "scene_captioner.onnx", "text_encoder.onnx"};

// Pretrained perception and language models are external assets. The
// factory fails loudly when they are absent and never falls back to toy.
inline BackendBundle make_pretrained_bundle(const BackendOptions& opts) {
  std::string missing;
  for (auto asset : kPretrainedAssets) {
    if (!std::filesystem::exists(opts.model_dir / asset)) {
      missing += (missing.empty() ? "" : ", ") + std::string(asset);
    }
  }
  if (!missing.empty()) {
    throw Error("pretrained backend: model assets missing under '" + opts.model_dir.string() +
                "': " + missing);
  }
  throw Error("pretrained backend: assets found under '" + opts.model_dir.string() +
              "' but this build has no model inference runtime linked");
}

class BackendRegistry {
 public:
  void add(std::string name, BackendFactory factory) {
    factories_[std::move(name)] = std::move(factory);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : factories_) out.push_back(k);
    return out;
  }

  BackendBundle resolve(std::string_view name, const BackendOptions& opts) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) {
      std::string known;
      for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
      throw Error("unknown backend '" + std::string(name) + "' (registered: " + known + ")");
    }
    return it->second(opts);
  }

 private:
  std::map<std::string, BackendFactory, std::less<>> factories_;
};

inline BackendRegistry default_registry() {
  BackendRegistry r;
  r.add("toy", [](const BackendOptions& opts) {
    auto sidecar = std::make_shared<SidecarIndex>();
    if (!opts.annotations.empty()) *sidecar = load_sidecar(opts.annotations);
    return make_toy_bundle(opts, std::move(sidecar));
  });
  r.add("pretrained", make_pretrained_bundle);
  return r;
}

inline BackendBundle resolve_backend(std::string_view name, const BackendOptions& opts,
                                     const BackendRegistry& registry = default_registry()) {
  return registry.resolve(name, opts);
}

}  // namespace vectn
