#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vectn/contracts.hpp"
#include "vectn/error.hpp"
#include "vectn/face_description.hpp"
#include "vectn/label.hpp"
#include "vectn/log.hpp"

namespace vectn {

// One visual-caption-target sample. `caption` is always the plain text with
// the target substituted in.
struct Example {
  std::string id;
  std::string image_ref;
  std::string caption;
  std::string target;
  Label label = Label::neutral;

  friend bool operator==(const Example&, const Example&) = default;
};

enum class SplitFormat { jsonl, fourline };

// How label tokens are written in fourline files: class index 0/1/2 or
// signed polarity -1/0/1. Word labels are accepted under both.
enum class LabelScheme { index, signed_polarity };

struct SplitStats {
  std::size_t positive_count = 0;
  std::size_t negative_count = 0;
  std::size_t neutral_count = 0;
  double avg_targets_per_caption = 0.0;

  std::size_t total() const noexcept {
    return positive_count + negative_count + neutral_count;
  }

  friend bool operator==(const SplitStats&, const SplitStats&) = default;
};

inline constexpr std::string_view kTargetPlaceholder = "$T$";

namespace detail {

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

inline Label parse_label_token(const std::string& token, LabelScheme scheme) {
  if (auto named = parse_label_name(token)) return *named;
  int value = 0;
  try {
    std::size_t used = 0;
    value = std::stoi(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
  } catch (const std::exception&) {
    throw Error("unknown label token '" + token + "'");
  }
  if (scheme == LabelScheme::signed_polarity) value += 1;
  if (value < 0 || value > 2) throw Error("unknown label token '" + token + "'");
  return decode_label(value);
}

inline void validate(const Example& ex, const std::string& where) {
  if (ex.caption.empty()) throw Error(where + ": empty caption");
  if (ex.target.empty()) throw Error(where + ": empty target");
  if (ex.caption.find(ex.target) == std::string::npos) {
    throw Error(where + ": target '" + ex.target + "' does not occur in caption");
  }
}

inline std::string required_string(const nlohmann::json& obj, const char* key,
                                   const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw Error(where + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace detail

inline std::vector<Example> load_jsonl_examples(std::istream& in,
                                                const std::string& source = "<stream>") {
  std::vector<Example> out;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    line = detail::strip_cr(std::move(line));
    if (detail::is_blank(line)) continue;
    const std::string where = source + " record at line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw Error(where + ": expected a JSON object");
    Example ex;
    ex.id = detail::required_string(obj, "id", where);
    ex.image_ref = obj.contains("image") && obj["image"].is_string()
                       ? obj["image"].get<std::string>()
                       : std::string{};
    ex.caption = detail::required_string(obj, "caption", where);
    ex.target = detail::required_string(obj, "target", where);
    const auto label = detail::required_string(obj, "label", where);
    try {
      ex.label = label_from_name(label);
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
    detail::validate(ex, where);
    out.push_back(std::move(ex));
  }
  return out;
}

// Four physical lines per record: sentence containing $T$, target, label,
// image filename. Ids are "<id_prefix>-<record index>".
inline std::vector<Example> load_fourline_examples(std::istream& in,
                                                   const std::string& id_prefix,
                                                   LabelScheme scheme = LabelScheme::index,
                                                   const std::string& source = "<stream>") {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    lines.push_back(detail::strip_cr(std::move(line)));
  }
  while (!lines.empty() && detail::is_blank(lines.back())) lines.pop_back();
  if (lines.size() % 4 != 0) {
    throw Error(source + ": record at line " + std::to_string(lines.size() / 4 * 4 + 1) +
                " is truncated (fourline format needs 4 lines per record)");
  }
  std::vector<Example> out;
  out.reserve(lines.size() / 4);
  for (std::size_t r = 0; r < lines.size() / 4; ++r) {
    const std::string where = source + " record " + std::to_string(r) + " (line " +
                              std::to_string(4 * r + 1) + ")";
    const std::string& sentence = lines[4 * r];
    Example ex;
    ex.id = id_prefix + "-" + std::to_string(r);
    ex.target = lines[4 * r + 1];
    try {
      ex.label = detail::parse_label_token(lines[4 * r + 2], scheme);
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
    ex.image_ref = lines[4 * r + 3];
    const auto pos = sentence.find(kTargetPlaceholder);
    if (pos == std::string::npos) throw Error(where + ": sentence lacks the $T$ placeholder");
    ex.caption = sentence;
    ex.caption.replace(pos, kTargetPlaceholder.size(), ex.target);
    detail::validate(ex, where);
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<Example> load_split(const std::filesystem::path& path, SplitFormat format,
                                       LabelScheme scheme = LabelScheme::index) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open split '" + path.string() + "'");
  if (format == SplitFormat::jsonl) return load_jsonl_examples(in, path.string());
  return load_fourline_examples(in, path.stem().string(), scheme, path.string());
}

inline nlohmann::json to_json(const Example& ex) {
  return nlohmann::json{{"id", ex.id},
                        {"image", ex.image_ref},
                        {"caption", ex.caption},
                        {"target", ex.target},
                        {"label", std::string(label_name(ex.label))}};
}

inline void write_examples_jsonl(std::ostream& out, const std::vector<Example>& examples) {
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
}

// Label counts plus examples per post, where a post is the distinct
// (image_ref, caption) pair shared by all of its targets.
inline SplitStats split_stats(const std::vector<Example>& examples) {
  SplitStats s;
  std::set<std::pair<std::string_view, std::string_view>> posts;
  for (const auto& ex : examples) {
    switch (ex.label) {
      case Label::positive: ++s.positive_count; break;
      case Label::negative: ++s.negative_count; break;
      case Label::neutral: ++s.neutral_count; break;
    }
    posts.emplace(ex.image_ref, ex.caption);
  }
  if (!posts.empty()) {
    s.avg_targets_per_caption =
        static_cast<double>(examples.size()) / static_cast<double>(posts.size());
  }
  return s;
}

using ImageLoader = std::function<Image(const Example&)>;

// Loads `<root>/<image_ref>` as PPM and tags it with the image_ref.
inline ImageLoader ppm_loader(std::filesystem::path root) {
  return [root = std::move(root)](const Example& ex) {
    return read_ppm(root / ex.image_ref, ex.image_ref);
  };
}

// Keeps the examples whose image yields at least one face. Images that
// cannot be loaded are skipped with a warning.
inline std::vector<Example> build_face_subset(const std::vector<Example>& examples,
                                              const FaceDetector& detector,
                                              const ImageLoader& load_image) {
  std::vector<Example> out;
  for (const auto& ex : examples) {
    Image image;
    try {
      image = load_image(ex);
    } catch (const std::exception& e) {
      warn("skipping example '" + ex.id + "': " + e.what());
      continue;
    }
    if (image.empty()) {
      warn("skipping example '" + ex.id + "': empty image");
      continue;
    }
    if (!detect_faces(image, detector).empty()) out.push_back(ex);
  }
  return out;
}

}  // namespace vectn
