#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vectn/dataset.hpp"
#include "vectn/face_description.hpp"
#include "vectn/image.hpp"
#include "vectn/rng.hpp"
#include "vectn/toy_backend.hpp"

namespace vectn {

// Synthetic separable corpus for the toy backends. Captions are
// sentiment-free; the label is planted in the facial sentiment of the
// target's face. Multi-face images carry distractor faces with other
// sentiments and a visual_text equal to the target face's description
// joined with the target, so alignment recovers the right face. Scene
// captions name the mood with one cue word per label: always for the share
// of images without a face, half of the time otherwise.
struct ToyFixtureOptions {
  std::size_t train = 300;
  std::size_t valid = 90;
  std::size_t test = 90;
  std::uint64_t seed = 2024;
  int image_size = 24;
  double multi_face_share = 0.35;
  double no_face_share = 0.10;
  double alpha = kDefaultAlpha;
};

struct ToyFixture {
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;
  std::map<std::string, nlohmann::json, std::less<>> annotations;  // by image ref
  std::map<std::string, Image, std::less<>> images;

  ImageLoader loader() const {
    return [this](const Example& ex) {
      auto it = images.find(ex.image_ref);
      if (it == images.end()) throw Error("no fixture image '" + ex.image_ref + "'");
      return it->second;
    };
  }

  SidecarIndex sidecar() const {
    SidecarIndex index;
    for (const auto& [ref, j] : annotations) {
      SidecarEntry e;
      for (const auto& f : j.value("faces", nlohmann::json::array())) {
        e.faces.push_back({bbox_from_json(f.at("bbox")), attributes_from_json(f)});
      }
      e.scene_caption = j.value("scene_caption", std::string{});
      e.visual_text = j.value("visual_text", std::string{});
      index[ref] = std::move(e);
    }
    return index;
  }
};

namespace detail::fixture {

inline constexpr std::array<std::string_view, 24> kNames = {
    "Justin", "Lydia", "America", "Harriette", "Jordan", "Marcus", "Elena", "Priya",
    "Tomas", "Aisha", "Kenji", "Sofia", "Omar", "Grace", "Mateo", "Chloe",
    "Dmitri", "Amara", "Liam", "Noor", "Felix", "Ines", "Ravi", "Zoe"};

inline constexpr std::array<std::string_view, 30> kFiller = {
    "RT", "@", "today", "at", "the", "game", "tonight", "with", "#", "live",
    "news", "update", "meets", "after", "show", "in", "town", "says", "interview", "city",
    "photo", "via", "new", "event", "morning", "downtown", "stage", "team", "press", "week"};

inline constexpr std::array<std::string_view, 12> kScene = {
    "a", "group", "of", "people", "standing", "near", "wall", "street", "room", "stage",
    "outdoors", "building"};

// scene-caption cue per label (negative, neutral, positive)
inline constexpr std::array<std::string_view, 3> kSceneCues = {"mourning", "ordinary", "joyful"};

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& words, Rng& rng) {
  return words[rng.below(N)];
}

inline std::string words(std::size_t n, Rng& rng, bool scene) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.empty()) out += ' ';
    out += scene ? pick(kScene, rng) : pick(kFiller, rng);
  }
  return out;
}

inline nlohmann::json face_json(const BBox& box, const FaceAttributes& a) {
  nlohmann::json f = attributes_to_json(a);
  f["bbox"] = bbox_to_json(box);
  return f;
}

inline FaceAttributes random_face(Label sentiment, Rng& rng) {
  FaceAttributes a;
  a.age = 18 + static_cast<int>(rng.below(53));
  a.gender = rng.bernoulli(0.5) ? Gender::man : Gender::woman;
  a.race = static_cast<Race>(rng.below(6));
  a.sentiment = sentiment;
  a.confidence = {{"age", 1.0},
                  {"gender", 1.0},
                  {"race", 0.3 + 0.7 * rng.uniform()},
                  {"sentiment", 0.6 + 0.4 * rng.uniform()}};
  return a;
}

}  // namespace detail::fixture

inline ToyFixture make_toy_fixture(const ToyFixtureOptions& opts = {}) {
  using namespace detail::fixture;
  Rng rng(opts.seed);
  ToyFixture fx;
  const int size = opts.image_size;
  const int face = size / 3;

  auto make = [&](const std::string& split, std::size_t index) {
    const std::string id = split + "-" + std::to_string(index);
    const std::string ref = id + ".ppm";
    const Label label = decode_label(static_cast<int>(rng.below(3)));
    const std::string target(pick(kNames, rng));

    // caption: neutral filler with the target inserted
    const std::size_t before = 1 + rng.below(3);
    const std::size_t after = 1 + rng.below(3);
    const std::string caption = words(before, rng, false) + " " + target + " " +
                                words(after, rng, false);

    Image image(size, size, ref);
    image.fill(200, 200, 200);
    nlohmann::json ann = {{"id", ref}, {"faces", nlohmann::json::array()}};

    const double kind = rng.uniform();
    if (kind < opts.no_face_share) {
      ann["scene_caption"] = words(2, rng, true) + " " +
                             std::string(kSceneCues[static_cast<std::size_t>(encode_label(label))]) +
                             " " + words(2, rng, true);
    } else {
      const std::size_t n_faces =
          kind < opts.no_face_share + opts.multi_face_share ? 2 + rng.below(2) : 1;
      const std::size_t target_slot = rng.below(n_faces);
      // faces sit in distinct columns so raster order equals slot order
      std::vector<FaceAttributes> faces;
      for (std::size_t s = 0; s < n_faces; ++s) {
        Label sentiment = label;
        if (s != target_slot) {
          sentiment = decode_label((encode_label(label) + 1 + static_cast<int>(rng.below(2))) % 3);
        }
        faces.push_back(random_face(sentiment, rng));
        const BBox box{static_cast<int>(s) * face, static_cast<int>(rng.below(size - face + 1)),
                       face, face};
        for (int y = box.y; y < box.y + box.height; ++y) {
          for (int x = box.x; x < box.x + box.width; ++x) {
            image.at(x, y, 0) = static_cast<std::uint8_t>(60 + 60 * s);
            image.at(x, y, 1) = 120;
            image.at(x, y, 2) = static_cast<std::uint8_t>(40 * encode_label(sentiment));
          }
        }
        ann["faces"].push_back(face_json(box, faces.back()));
      }
      // scene captions of face images mention the mood half of the time
      std::string scene = words(3, rng, true);
      if (rng.bernoulli(0.5)) {
        scene += " " + std::string(kSceneCues[static_cast<std::size_t>(encode_label(label))]);
      }
      ann["scene_caption"] = scene;
      const auto rendered =
          render_description(filter_attributes(faces[target_slot], opts.alpha), 0);
      ann["visual_text"] = rendered->text + " " + target;
    }
    fx.annotations[ref] = ann;
    fx.images[ref] = std::move(image);
    return Example{id, ref, caption, target, label};
  };

  for (std::size_t i = 0; i < opts.train; ++i) fx.train.push_back(make("train", i));
  for (std::size_t i = 0; i < opts.valid; ++i) fx.valid.push_back(make("valid", i));
  for (std::size_t i = 0; i < opts.test; ++i) fx.test.push_back(make("test", i));
  return fx;
}

// Writes train/valid/test .jsonl, annotations.jsonl and images/*.ppm.
// Example image refs are relative to `dir / "images"`.
inline void write_toy_fixture(const ToyFixture& fx, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  auto write_split = [&](const char* name, const std::vector<Example>& xs) {
    std::ofstream out(dir / (std::string(name) + ".jsonl"));
    if (!out) throw Error("cannot write fixture split '" + std::string(name) + "'");
    write_examples_jsonl(out, xs);
  };
  write_split("train", fx.train);
  write_split("valid", fx.valid);
  write_split("test", fx.test);
  std::ofstream ann(dir / "annotations.jsonl");
  for (const auto& [ref, j] : fx.annotations) ann << j.dump() << '\n';
  for (const auto& [ref, img] : fx.images) write_ppm(dir / "images" / ref, img);
}

}  // namespace vectn
