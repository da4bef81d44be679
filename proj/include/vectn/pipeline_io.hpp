#pragma once

// JSONL records exchanged between CLI stages.
//
//   faces.jsonl        {"id", "faces": [{"bbox", "attributes", "confidence",
//                       "description": str|null}]}
//   captions.jsonl     {"id", "scene_caption"}
//   descriptions.jsonl {"id", "candidates": [str], "scores": [float]|null,
//                       "refined": str, "face_index": int|null}
//   prepared.jsonl     example fields plus "candidates", "candidate_faces",
//                      "scores", "refined", "face_index", "scene_caption"
//   predictions.jsonl  {"id", "probabilities": [3], "label"}
//
// Ids are example ids. Face attributes are written after alpha filtering;
// "description" is their rendering.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vectn/dataset.hpp"
#include "vectn/error.hpp"
#include "vectn/face_description.hpp"
#include "vectn/metrics.hpp"
#include "vectn/target_alignment.hpp"
#include "vectn/toy_backend.hpp"
#include "vectn/training.hpp"

namespace vectn {

using nlohmann::json;

// Calls fn(object, "<path> line N") for every non-blank line.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, const std::string&)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw Error(where + ": expected a JSON object");
    try {
      fn(obj, where);
    } catch (const json::exception& e) {
      throw Error(where + ": " + e.what());
    }
  }
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const json& value) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << value.dump(2) << '\n';
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline std::vector<Example> read_examples(const std::filesystem::path& path) {
  return load_split(path, SplitFormat::jsonl, LabelScheme::index);
}

// ---------------------------------------------------------------------------
// faces.jsonl

struct FaceRecord {
  BBox bbox;
  FaceAttributes attributes;
  std::optional<std::string> description;
};

inline json faces_record(const std::string& id, const std::vector<AnalyzedFace>& faces) {
  json arr = json::array();
  for (const auto& f : faces) {
    json face = attributes_to_json(f.attributes);
    face["bbox"] = bbox_to_json(f.region.bbox);
    face["description"] = f.description ? json(f.description->text) : json(nullptr);
    arr.push_back(std::move(face));
  }
  return {{"id", id}, {"faces", std::move(arr)}};
}

inline std::map<std::string, std::vector<FaceRecord>> read_faces(const std::filesystem::path& path) {
  std::map<std::string, std::vector<FaceRecord>> out;
  for_each_jsonl(path, [&](const json& j, const std::string& where) {
    std::vector<FaceRecord> faces;
    for (const auto& f : j.at("faces")) {
      FaceRecord r;
      try {
        r.bbox = bbox_from_json(f.at("bbox"));
        r.attributes = attributes_from_json(f);
      } catch (const Error& e) {
        throw Error(where + ": " + e.what());
      }
      if (f.contains("description") && f["description"].is_string()) {
        r.description = f["description"].get<std::string>();
      }
      faces.push_back(std::move(r));
    }
    out[j.at("id").get<std::string>()] = std::move(faces);
  });
  return out;
}

// Re-renders candidates from stored attributes. A stricter alpha than the
// faces stage used can still be applied here.
inline std::vector<FaceDescription> candidates_from_faces(const std::vector<FaceRecord>& faces,
                                                          double alpha) {
  std::vector<FaceDescription> out;
  for (std::size_t i = 0; i < faces.size(); ++i) {
    if (auto d = render_description(filter_attributes(faces[i].attributes, alpha),
                                    static_cast<int>(i))) {
      out.push_back(std::move(*d));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// captions.jsonl

inline json caption_record(const std::string& id, const SceneCaption& c) {
  return {{"id", id}, {"scene_caption", c.text}};
}

inline std::map<std::string, std::string> read_captions(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  for_each_jsonl(path, [&](const json& j, const std::string&) {
    out[j.at("id").get<std::string>()] = j.at("scene_caption").get<std::string>();
  });
  return out;
}

// ---------------------------------------------------------------------------
// descriptions.jsonl and prepared.jsonl

namespace detail {

inline json optional_index(const std::optional<int>& i) {
  return i ? json(*i) : json(nullptr);
}

inline json alignment_fields(const PreparedExample& p) {
  json candidates = json::array();
  json faces = json::array();
  for (const auto& c : p.candidates) {
    candidates.push_back(c.text);
    faces.push_back(c.face_index);
  }
  return {{"candidates", std::move(candidates)},
          {"candidate_faces", std::move(faces)},
          {"scores", p.scores.empty() ? json(nullptr) : json(p.scores)},
          {"refined", p.aligned.text},
          {"face_index", optional_index(p.aligned.source_face_index)}};
}

}  // namespace detail

inline json description_record(const PreparedExample& p) {
  json j = detail::alignment_fields(p);
  j.erase("candidate_faces");
  j["id"] = p.example.id;
  return j;
}

inline json prepared_record(const PreparedExample& p) {
  json j = to_json(p.example);
  j.update(detail::alignment_fields(p));
  j["scene_caption"] = p.scene.text;
  return j;
}

inline PreparedExample prepared_from_json(const json& j, const std::string& where) {
  PreparedExample p;
  std::istringstream line(json{{"id", j.at("id")},
                               {"image", j.value("image", std::string{})},
                               {"caption", j.at("caption")},
                               {"target", j.at("target")},
                               {"label", j.at("label")}}
                              .dump());
  auto examples = load_jsonl_examples(line, where);
  p.example = std::move(examples.at(0));

  const auto& texts = j.at("candidates");
  const auto& faces = j.at("candidate_faces");
  if (texts.size() != faces.size()) throw Error(where + ": candidates/candidate_faces differ in length");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    FaceDescription d;
    d.text = texts[i].get<std::string>();
    d.face_index = faces[i].get<int>();
    const auto sentiment = description_sentiment(d.text);
    if (!sentiment) throw Error(where + ": candidate without a sentiment word");
    d.sentiment = *sentiment;
    p.candidates.push_back(std::move(d));
  }
  if (j.contains("scores") && j["scores"].is_array()) p.scores = j["scores"].get<std::vector<double>>();
  p.aligned.text = j.value("refined", std::string{});
  if (j.contains("face_index") && j["face_index"].is_number_integer()) {
    p.aligned.source_face_index = j["face_index"].get<int>();
    p.aligned.sentiment = description_sentiment(p.aligned.text);
  }
  if (p.aligned.source_face_index.has_value() == p.aligned.text.empty()) {
    throw Error(where + ": refined text and face_index must be both set or both empty");
  }
  p.scene.text = j.value("scene_caption", std::string{});
  return p;
}

inline std::vector<PreparedExample> read_prepared(const std::filesystem::path& path) {
  std::vector<PreparedExample> out;
  for_each_jsonl(path, [&](const json& j, const std::string& where) {
    out.push_back(prepared_from_json(j, where));
  });
  if (out.empty()) throw Error("'" + path.string() + "' holds no examples");
  return out;
}

// ---------------------------------------------------------------------------
// predictions.jsonl and metrics.json

inline json prediction_record(const std::string& id, const Prediction& p) {
  return {{"id", id},
          {"probabilities", p.probabilities},
          {"label", std::string(label_name(p.predicted))}};
}

inline json epochs_json(const std::vector<EpochRecord>& epochs) {
  json arr = json::array();
  for (const auto& e : epochs) {
    arr.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"train_accuracy", e.train_accuracy},
                   {"valid_accuracy", e.valid_accuracy},
                   {"valid_macro_f1", e.valid_macro_f1}});
  }
  return arr;
}

inline json metrics_json(const std::string& variant, std::uint64_t seed, const Metrics& m,
                         const std::vector<EpochRecord>& epochs) {
  json confusion = json::array();
  for (const auto& row : m.confusion) confusion.push_back(row);
  return {{"variant", variant},
          {"seed", seed},
          {"accuracy", m.accuracy},
          {"macro_f1", m.macro_f1},
          {"per_class_f1", m.per_class_f1},
          {"confusion", std::move(confusion)},
          {"epochs", epochs_json(epochs)}};
}

}  // namespace vectn
