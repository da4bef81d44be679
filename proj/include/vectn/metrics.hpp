#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "vectn/error.hpp"
#include "vectn/label.hpp"

namespace vectn {

// confusion[true][predicted]
using Confusion = std::array<std::array<std::size_t, kNumLabels>, kNumLabels>;

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kNumLabels> per_class_f1{};
  Confusion confusion{};
};

inline std::size_t confusion_total(const Confusion& c) {
  std::size_t n = 0;
  for (const auto& row : c) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

inline Confusion confusion_matrix(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw Error("confusion_matrix: label and prediction counts differ");
  }
  Confusion c{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(encode_label(decode_label(truth[i])));
    const auto p = static_cast<std::size_t>(encode_label(decode_label(predicted[i])));
    ++c[t][p];
  }
  return c;
}

// F1 per class; a class with zero precision+recall denominator scores 0.
inline std::array<double, kNumLabels> per_class_f1(const Confusion& c) {
  std::array<double, kNumLabels> f1{};
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    std::size_t predicted_k = 0;
    std::size_t actual_k = 0;
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      predicted_k += c[j][k];
      actual_k += c[k][j];
    }
    const double tp = static_cast<double>(c[k][k]);
    // 2PR/(P+R) == 2tp/(predicted + actual)
    const std::size_t denom = predicted_k + actual_k;
    f1[k] = denom == 0 ? 0.0 : 2.0 * tp / static_cast<double>(denom);
  }
  return f1;
}

inline double macro_f1(const Confusion& c) {
  if (confusion_total(c) == 0) throw Error("macro_f1: empty confusion matrix");
  const auto f1 = per_class_f1(c);
  double sum = 0.0;
  for (double v : f1) sum += v;
  return sum / static_cast<double>(kNumLabels);
}

inline double accuracy(const Confusion& c) {
  const std::size_t n = confusion_total(c);
  if (n == 0) throw Error("accuracy: empty confusion matrix");
  std::size_t trace = 0;
  for (std::size_t k = 0; k < kNumLabels; ++k) trace += c[k][k];
  return static_cast<double>(trace) / static_cast<double>(n);
}

inline Metrics metrics_from_confusion(const Confusion& c) {
  Metrics m;
  m.confusion = c;
  m.accuracy = accuracy(c);
  m.per_class_f1 = per_class_f1(c);
  m.macro_f1 = macro_f1(c);
  return m;
}

inline Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.empty()) throw Error("compute_metrics: empty evaluation set");
  return metrics_from_confusion(confusion_matrix(truth, predicted));
}

}  // namespace vectn
