#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vectn/contracts.hpp"
#include "vectn/dataset.hpp"
#include "vectn/error.hpp"
#include "vectn/label.hpp"
#include "vectn/rng.hpp"
#include "vectn/target_alignment.hpp"

namespace vectn {

inline constexpr std::size_t kDefaultTextDim = 768;
inline constexpr std::size_t kDefaultMaxLen = 128;
inline constexpr double kDefaultDropout = 0.4;
inline constexpr double kLogFloor = 1e-12;
inline constexpr double kGateInitGain = 0.1;
inline constexpr double kGateInitBias = 1.0;

// How the two pooled phrase vectors are combined before the classifier.
enum class GateMode {
  shared,      // O = jt*o_dt + jt*o_ic (the published fusion)
  complement,  // O = jt*o_dt + (1-jt)*o_ic, experimental alternative
  concat,      // no gate: [o_dt; o_ic] into a 2d-wide linear layer
};

enum class Modality { multimodal, caption_only, visual_only };

constexpr std::string_view gate_mode_name(GateMode m) {
  switch (m) {
    case GateMode::shared: return "shared";
    case GateMode::complement: return "complement";
    case GateMode::concat: return "concat";
  }
  return "";
}

constexpr std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::multimodal: return "multimodal";
    case Modality::caption_only: return "caption_only";
    case Modality::visual_only: return "visual_only";
  }
  return "";
}

inline Modality parse_modality(std::string_view s) {
  for (Modality m : {Modality::multimodal, Modality::caption_only, Modality::visual_only}) {
    if (modality_name(m) == s) return m;
  }
  throw Error("unknown modality '" + std::string(s) + "'");
}

inline GateMode parse_gate_mode(std::string_view s) {
  for (GateMode m : {GateMode::shared, GateMode::complement, GateMode::concat}) {
    if (gate_mode_name(m) == s) return m;
  }
  throw Error("unknown gate mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Phrase construction

namespace detail {

inline std::string neutralize_markers(std::string token) {
  for (auto [marker, replacement] : {std::pair{kClsMarker, std::string_view{"(CLS)"}},
                                     std::pair{kSepMarker, std::string_view{"(SEP)"}}}) {
    for (auto pos = token.find(marker); pos != std::string::npos; pos = token.find(marker, pos)) {
      token.replace(pos, marker.size(), replacement);
    }
  }
  return token;
}

}  // namespace detail

// Whitespace tokenization. Marker text inside content is rewritten so a
// serialized phrase always carries exactly one [CLS] and three [SEP].
inline std::vector<std::string> phrase_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string tok; in >> tok;) out.push_back(detail::neutralize_markers(std::move(tok)));
  return out;
}

// `[CLS] caption [SEP] target [SEP] auxiliary [SEP]`, at most max_len tokens
// including the four markers. Over-long input loses caption tail tokens
// first, then auxiliary tail tokens; the target is never cut.
inline FusionPhrase build_phrase(std::string_view caption, std::string_view target,
                                 std::string_view auxiliary,
                                 std::size_t max_len = kDefaultMaxLen) {
  FusionPhrase p{phrase_tokens(caption), phrase_tokens(target), phrase_tokens(auxiliary)};
  if (p.target.empty()) throw Error("build_phrase: empty target");
  if (p.target.size() + 4 > max_len) {
    throw Error("build_phrase: target of " + std::to_string(p.target.size()) +
                " tokens cannot fit max_len " + std::to_string(max_len));
  }
  const std::size_t budget = max_len - 4 - p.target.size();
  if (p.caption.size() + p.auxiliary.size() > budget) {
    const std::size_t caption_room =
        p.auxiliary.size() >= budget ? 0 : budget - p.auxiliary.size();
    if (p.caption.size() > caption_room) p.caption.resize(caption_room);
    if (p.auxiliary.size() > budget - p.caption.size()) {
      p.auxiliary.resize(budget - p.caption.size());
    }
  }
  return p;
}

inline Vector pool_phrase(const FusionPhrase& phrase, const TextEncoder& encoder) {
  Vector v = encoder.pool(phrase);
  if (static_cast<std::size_t>(v.size()) != encoder.dim()) {
    throw Error("text encoder returned dim " + std::to_string(v.size()) + ", declared " +
                std::to_string(encoder.dim()));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Parameters

struct GateParams {
  Matrix V_DT;  // d x d   (empty under GateMode::concat)
  Matrix V_IC;  // d x d   (empty under GateMode::concat)
  Vector b_j;   // d       (empty under GateMode::concat)
  Matrix V;     // d x 3, or 2d x 3 under GateMode::concat
  Vector b;     // 3

  static GateParams zeros(std::size_t dim, GateMode mode = GateMode::shared) {
    const auto d = static_cast<Eigen::Index>(dim);
    if (mode == GateMode::concat) {
      return {Matrix(0, 0), Matrix(0, 0), Vector(0), Matrix::Zero(2 * d, 3), Vector::Zero(3)};
    }
    return {Matrix::Zero(d, d), Matrix::Zero(d, d), Vector::Zero(d), Matrix::Zero(d, 3),
            Vector::Zero(3)};
  }

  // Training start point: gate weights Glorot-uniform with gain 0.1, gate
  // bias 1 (gate open, tanh(1) ~ 0.76), classifier weights and bias zero.
  // Under concat mode only the (zero) classifier exists.
  static GateParams initial(std::size_t dim, GateMode mode, Rng& rng) {
    GateParams p = zeros(dim, mode);
    if (mode == GateMode::concat) return p;
    auto fill = [&rng](Matrix& m, double gain) {
      const double limit = gain * std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-limit, limit);
      }
    };
    fill(p.V_DT, kGateInitGain);
    fill(p.V_IC, kGateInitGain);
    p.b_j.setConstant(kGateInitBias);
    return p;
  }

  std::size_t dim() const noexcept {
    return static_cast<std::size_t>(V_DT.size() == 0 ? V.rows() / 2 : V_DT.rows());
  }

  bool all_finite() const {
    return V_DT.allFinite() && V_IC.allFinite() && b_j.allFinite() && V.allFinite() &&
           b.allFinite();
  }

  // Visits every tensor in checkpoint order.
  template <typename F>
  void for_each(F&& f) {
    f("V_DT", V_DT);
    f("V_IC", V_IC);
    f("b_j", b_j);
    f("V", V);
    f("b", b);
  }
  template <typename F>
  void for_each(F&& f) const {
    f("V_DT", V_DT);
    f("V_IC", V_IC);
    f("b_j", b_j);
    f("V", V);
    f("b", b);
  }

  friend bool operator==(const GateParams& a, const GateParams& b) {
    auto same = [](const auto& x, const auto& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return same(a.V_DT, b.V_DT) && same(a.V_IC, b.V_IC) && same(a.b_j, b.b_j) &&
           same(a.V, b.V) && same(a.b, b.b);
  }
};

// Gradient of the loss, same layout as the parameters.
using GateGradients = GateParams;

// ---------------------------------------------------------------------------
// Gate, classifier, loss

struct GateOutput {
  Vector jt;
  Vector fused;
};

inline GateOutput gate_fuse(const Vector& o_dt, const Vector& o_ic, const GateParams& params,
                            GateMode mode = GateMode::shared) {
  if (mode == GateMode::concat) throw Error("gate_fuse: no gate under concat mode");
  const auto d = params.V_DT.rows();
  if (o_dt.size() != d || o_ic.size() != d || params.V_IC.rows() != d ||
      params.V_DT.cols() != d || params.V_IC.cols() != d || params.b_j.size() != d) {
    throw Error("gate_fuse: dimension mismatch");
  }
  GateOutput out;
  out.jt = (params.V_DT * o_dt + params.V_IC * o_ic + params.b_j).array().tanh().matrix();
  if (mode == GateMode::shared) {
    out.fused = out.jt.cwiseProduct(o_dt) + out.jt.cwiseProduct(o_ic);
  } else {
    out.fused = out.jt.cwiseProduct(o_dt) +
                (Vector::Ones(d) - out.jt).cwiseProduct(o_ic);
  }
  return out;
}

inline Vector concat_features(const Vector& o_dt, const Vector& o_ic) {
  Vector x(o_dt.size() + o_ic.size());
  x << o_dt, o_ic;
  return x;
}

struct Prediction {
  std::array<double, kNumLabels> probabilities{};
  Label predicted = Label::neutral;
};

inline std::array<double, kNumLabels> softmax(const Vector& logits) {
  if (logits.size() != static_cast<Eigen::Index>(kNumLabels)) {
    throw Error("softmax: expected 3 logits");
  }
  if (!logits.allFinite()) throw Error("classifier produced non-finite logits");
  const double m = logits.maxCoeff();
  std::array<double, kNumLabels> p{};
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    p[k] = std::exp(logits(static_cast<Eigen::Index>(k)) - m);
    sum += p[k];
  }
  for (auto& x : p) x /= sum;
  return p;
}

inline Label argmax_label(const std::array<double, kNumLabels>& p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumLabels; ++k) {
    if (p[k] > p[best]) best = k;
  }
  return decode_label(static_cast<int>(best));
}

// Inverted-dropout multipliers: 0 with probability `rate`, else 1/(1-rate).
inline Vector draw_dropout_mask(Eigen::Index size, double rate, Rng& rng) {
  Vector mask(size);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < size; ++i) mask(i) = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return mask;
}

// Softmax(V^T O + b). Dropout hits O only when training.
inline Prediction classify(const Vector& fused, const Matrix& V, const Vector& b,
                           double dropout_rate = 0.0, bool training = false,
                           Rng* rng = nullptr) {
  if (V.rows() != fused.size() || V.cols() != static_cast<Eigen::Index>(kNumLabels) ||
      b.size() != static_cast<Eigen::Index>(kNumLabels)) {
    throw Error("classify: dimension mismatch");
  }
  Vector logits;
  if (training && dropout_rate > 0.0) {
    if (rng == nullptr) throw Error("classify: training-mode dropout needs an Rng");
    logits = V.transpose() * fused.cwiseProduct(draw_dropout_mask(fused.size(), dropout_rate, *rng)) + b;
  } else {
    logits = V.transpose() * fused + b;
  }
  Prediction pred;
  pred.probabilities = softmax(logits);
  pred.predicted = argmax_label(pred.probabilities);
  return pred;
}

// Mean negative log-probability of the true labels, with log(max(p, 1e-12)).
inline double batch_loss(std::span<const std::array<double, kNumLabels>> probabilities,
                         std::span<const int> labels) {
  if (probabilities.empty() || probabilities.size() != labels.size()) {
    throw Error("batch_loss: need equal, non-zero numbers of predictions and labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    double sum = 0.0;
    for (double p : probabilities[i]) {
      if (!std::isfinite(p) || p < 0.0) throw Error("batch_loss: invalid probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw Error("batch_loss: probabilities do not sum to 1");
    const auto y = static_cast<std::size_t>(encode_label(decode_label(labels[i])));
    total -= std::log(std::max(probabilities[i][y], kLogFloor));
  }
  return total / static_cast<double>(probabilities.size());
}

// ---------------------------------------------------------------------------
// Forward pass over prepared text

struct FusionConfig {
  std::size_t max_len = kDefaultMaxLen;
  GateMode gate = GateMode::shared;
  Modality modality = Modality::multimodal;
  bool use_scene_caption = true;
};

struct PhrasePair {
  FusionPhrase with_description;  // C, T, D_T
  FusionPhrase with_scene;        // C, T, I_C
};

inline PhrasePair build_phrases(const Example& example, const RefinedDescription& refined,
                                const SceneCaption& scene, const FusionConfig& cfg) {
  const std::string_view scene_text = cfg.use_scene_caption ? std::string_view(scene.text) : "";
  switch (cfg.modality) {
    case Modality::caption_only: {
      auto p = build_phrase(example.caption, example.target, "", cfg.max_len);
      return {p, p};
    }
    case Modality::visual_only:
      return {build_phrase("", example.target, refined.text, cfg.max_len),
              build_phrase("", example.target, scene_text, cfg.max_len)};
    case Modality::multimodal:
      break;
  }
  return {build_phrase(example.caption, example.target, refined.text, cfg.max_len),
          build_phrase(example.caption, example.target, scene_text, cfg.max_len)};
}

// Pooled sentence vectors of one example, fixed once the encoders are frozen.
struct EncodedExample {
  Vector o_dt;
  Vector o_ic;
  int label = 0;
};

inline EncodedExample encode_example(const Example& example, const RefinedDescription& refined,
                                     const SceneCaption& scene, const TextEncoder& dt_encoder,
                                     const TextEncoder& ic_encoder, const FusionConfig& cfg) {
  const PhrasePair phrases = build_phrases(example, refined, scene, cfg);
  EncodedExample enc;
  enc.o_dt = pool_phrase(phrases.with_description, dt_encoder);
  // caption-only has a single phrase, pooled once
  enc.o_ic = cfg.modality == Modality::caption_only
                 ? enc.o_dt
                 : pool_phrase(phrases.with_scene, ic_encoder);
  enc.label = encode_label(example.label);
  return enc;
}

// Classifier input for one example: gated fusion or plain concatenation.
inline Vector fused_features(const EncodedExample& enc, const GateParams& params, GateMode mode) {
  if (mode == GateMode::concat) return concat_features(enc.o_dt, enc.o_ic);
  return gate_fuse(enc.o_dt, enc.o_ic, params, mode).fused;
}

inline Prediction predict_encoded(const EncodedExample& enc, const GateParams& params,
                                  GateMode mode) {
  return classify(fused_features(enc, params, mode), params.V, params.b);
}

inline Prediction forward(const Example& example, const RefinedDescription& refined,
                          const SceneCaption& scene, const TextEncoder& dt_encoder,
                          const TextEncoder& ic_encoder, const GateParams& params,
                          const FusionConfig& cfg) {
  return predict_encoded(encode_example(example, refined, scene, dt_encoder, ic_encoder, cfg),
                         params, cfg.gate);
}

// ---------------------------------------------------------------------------
// Batched forward pass and analytic gradients over encoded examples.
// Examples are laid out as matrix columns.

namespace detail {

struct BatchForward {
  Matrix o_dt;    // d x B
  Matrix o_ic;    // d x B
  Matrix jt;      // d x B (empty under concat)
  Matrix x;       // classifier input after dropout, d_in x B
  Matrix logits;  // 3 x B
};

inline BatchForward batch_forward(std::span<const EncodedExample> batch, const GateParams& params,
                                  GateMode mode, std::span<const Vector> dropout_masks) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto d = batch.front().o_dt.size();
  BatchForward f;
  f.o_dt.resize(d, n);
  f.o_ic.resize(d, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = batch[static_cast<std::size_t>(i)];
    if (ex.o_dt.size() != d || ex.o_ic.size() != d) {
      throw Error("batch: inconsistent pooled vector dimensions");
    }
    f.o_dt.col(i) = ex.o_dt;
    f.o_ic.col(i) = ex.o_ic;
  }
  if (mode == GateMode::concat) {
    f.x.resize(2 * d, n);
    f.x << f.o_dt, f.o_ic;
  } else {
    if (params.V_DT.rows() != d || params.V_DT.cols() != d || params.V_IC.rows() != d ||
        params.V_IC.cols() != d || params.b_j.size() != d) {
      throw Error("batch: gate parameters do not match pooled dimension");
    }
    Matrix a = params.V_DT * f.o_dt;
    a.noalias() += params.V_IC * f.o_ic;
    a.colwise() += params.b_j;
    f.jt = a.array().tanh().matrix();
    if (mode == GateMode::shared) {
      f.x = f.jt.cwiseProduct(f.o_dt + f.o_ic);
    } else {
      f.x = f.jt.cwiseProduct(f.o_dt) + (1.0 - f.jt.array()).matrix().cwiseProduct(f.o_ic);
    }
  }
  for (std::size_t i = 0; i < dropout_masks.size(); ++i) {
    f.x.col(static_cast<Eigen::Index>(i)).array() *= dropout_masks[i].array();
  }
  if (params.V.rows() != f.x.rows() || params.V.cols() != 3 || params.b.size() != 3) {
    throw Error("batch: classifier parameters do not match its input");
  }
  f.logits = params.V.transpose() * f.x;
  f.logits.colwise() += params.b;
  if (!f.logits.allFinite()) throw Error("classifier produced non-finite logits");
  return f;
}

}  // namespace detail

// Inference-mode predictions for a set of encoded examples.
inline std::vector<Prediction> predict_batch(std::span<const EncodedExample> batch,
                                             const GateParams& params, GateMode mode) {
  std::vector<Prediction> out;
  if (batch.empty()) return out;
  const auto f = detail::batch_forward(batch, params, mode, {});
  out.reserve(batch.size());
  for (Eigen::Index i = 0; i < f.logits.cols(); ++i) {
    Prediction p;
    p.probabilities = softmax(f.logits.col(i));
    p.predicted = argmax_label(p.probabilities);
    out.push_back(p);
  }
  return out;
}

struct LossAndGradients {
  double loss = 0.0;
  GateGradients grads;
};

// Cross-entropy of the batch and its gradient w.r.t. every GateParams
// tensor. `dropout_masks`, when given, holds one multiplier vector per
// example applied to the classifier input. Terms clipped by the log floor
// are constant and contribute no gradient.
inline LossAndGradients loss_and_gradients(std::span<const EncodedExample> batch,
                                           const GateParams& params, GateMode mode,
                                           std::span<const Vector> dropout_masks = {}) {
  if (batch.empty()) throw Error("loss_and_gradients: empty batch");
  if (!dropout_masks.empty() && dropout_masks.size() != batch.size()) {
    throw Error("loss_and_gradients: one dropout mask per example required");
  }
  const auto f = detail::batch_forward(batch, params, mode, dropout_masks);
  const auto n = f.logits.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double log_floor = std::log(kLogFloor);

  LossAndGradients out;
  Matrix dz = Matrix::Zero(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto z = f.logits.col(i);
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    const auto y = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(i)].label);
    if (y < 0 || y >= 3) throw Error("loss_and_gradients: label index out of range");
    const double log_p = z(y) - lse;
    if (log_p <= log_floor) {
      out.loss -= log_floor * inv_n;
      continue;
    }
    out.loss -= log_p * inv_n;
    dz.col(i) = (z.array() - lse).exp().matrix() * inv_n;
    dz(y, i) -= inv_n;
  }

  out.grads = GateParams::zeros(params.dim(), mode);
  out.grads.V.noalias() = f.x * dz.transpose();
  out.grads.b = dz.rowwise().sum();
  if (mode != GateMode::concat) {
    Matrix dx = params.V * dz;
    for (std::size_t i = 0; i < dropout_masks.size(); ++i) {
      dx.col(static_cast<Eigen::Index>(i)).array() *= dropout_masks[i].array();
    }
    const Matrix gate_input =
        mode == GateMode::shared ? Matrix(f.o_dt + f.o_ic) : Matrix(f.o_dt - f.o_ic);
    const Matrix da = dx.cwiseProduct(gate_input).cwiseProduct(
        (1.0 - f.jt.array().square()).matrix());
    out.grads.V_DT.noalias() = da * f.o_dt.transpose();
    out.grads.V_IC.noalias() = da * f.o_ic.transpose();
    out.grads.b_j = da.rowwise().sum();
  }
  if (!std::isfinite(out.loss) || !out.grads.all_finite()) {
    throw Error("loss_and_gradients: non-finite loss or gradient");
  }
  return out;
}

inline double batch_loss_encoded(std::span<const EncodedExample> batch, const GateParams& params,
                                 GateMode mode) {
  std::vector<std::array<double, kNumLabels>> probs;
  std::vector<int> labels;
  for (const auto& ex : batch) {
    probs.push_back(predict_encoded(ex, params, mode).probabilities);
    labels.push_back(ex.label);
  }
  return batch_loss(probs, labels);
}

}  // namespace vectn
