#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "vectn/error.hpp"

namespace vectn {

// Sentiment polarity. The integer order is part of the checkpoint format.
enum class Label : int { negative = 0, neutral = 1, positive = 2 };

inline constexpr std::size_t kNumLabels = 3;
inline constexpr std::array<Label, kNumLabels> kAllLabels = {
    Label::negative, Label::neutral, Label::positive};

constexpr int encode_label(Label label) {
  switch (label) {
    case Label::negative:
    case Label::neutral:
    case Label::positive:
      return static_cast<int>(label);
  }
  throw Error("encode_label: value outside the label enumeration");
}

inline Label decode_label(int index) {
  if (index < 0 || index >= static_cast<int>(kNumLabels)) {
    throw Error("decode_label: index " + std::to_string(index) +
                " not in {0,1,2}");
  }
  return static_cast<Label>(index);
}

constexpr std::string_view label_name(Label label) {
  switch (label) {
    case Label::negative: return "negative";
    case Label::neutral: return "neutral";
    case Label::positive: return "positive";
  }
  throw Error("label_name: value outside the label enumeration");
}

inline std::optional<Label> parse_label_name(std::string_view name) {
  for (Label l : kAllLabels) {
    if (label_name(l) == name) return l;
  }
  return std::nullopt;
}

inline Label label_from_name(std::string_view name) {
  if (auto l = parse_label_name(name)) return *l;
  throw Error("unknown label token '" + std::string(name) + "'");
}

}  // namespace vectn
