#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vectn/dataset.hpp"
#include "vectn/error.hpp"
#include "vectn/face_description.hpp"
#include "vectn/fusion_classifier.hpp"
#include "vectn/log.hpp"
#include "vectn/metrics.hpp"
#include "vectn/optimizer.hpp"
#include "vectn/rng.hpp"
#include "vectn/target_alignment.hpp"
#include "vectn/toy_backend.hpp"

namespace vectn {

struct AblationFlags {
  bool no_gating = false;
  bool no_alignment = false;
  bool no_scene_caption = false;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct TrainConfig {
  double learning_rate = 2e-5;
  std::size_t batch_size = 32;
  double dropout = kDefaultDropout;
  std::size_t epochs = 15;
  double alpha = kDefaultAlpha;
  double t = kDefaultLogitScale;
  std::size_t max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;
  AblationFlags ablation;
  Modality modality = Modality::multimodal;
  std::string backend = "toy";

  std::size_t text_dim = kDefaultTextDim;
  std::size_t embed_dim = kDefaultEmbedDim;
  std::size_t align_dim = kDefaultAlignDim;
  double weight_decay = 0.01;
  bool gate_complement = false;
  bool shared_encoder = false;

  void validate() const {
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("TrainConfig: dropout must be in [0, 1)");
    if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw Error("TrainConfig: learning_rate must be finite and >= 0");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("TrainConfig: alpha must be in [0, 1]");
    if (!std::isfinite(t)) throw Error("TrainConfig: t must be finite");
    if (max_len < 5) throw Error("TrainConfig: max_len must leave room for markers and a target");
    if (text_dim < 1 || embed_dim < 1 || align_dim < 1) {
      throw Error("TrainConfig: dimensions must be >= 1");
    }
    if (ablation.no_gating && gate_complement) {
      throw Error("TrainConfig: gate_complement has no effect without a gate");
    }
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// The computation graph a config selects.
struct ModelSpec {
  GateMode gate = GateMode::shared;
  bool use_alignment = true;
  bool use_scene_caption = true;
  Modality modality = Modality::multimodal;
  std::size_t max_len = kDefaultMaxLen;

  FusionConfig fusion() const { return {max_len, gate, modality, use_scene_caption}; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline ModelSpec model_spec(const TrainConfig& cfg) {
  ModelSpec s;
  s.gate = cfg.ablation.no_gating ? GateMode::concat
           : cfg.gate_complement  ? GateMode::complement
                                  : GateMode::shared;
  s.use_alignment = !cfg.ablation.no_alignment;
  s.use_scene_caption = !cfg.ablation.no_scene_caption;
  s.modality = cfg.modality;
  s.max_len = cfg.max_len;
  return s;
}

inline BackendOptions backend_options(const TrainConfig& cfg,
                                      std::filesystem::path annotations = {}) {
  BackendOptions o;
  o.annotations = std::move(annotations);
  o.text_dim = cfg.text_dim;
  o.embed_dim = cfg.embed_dim;
  o.shared_encoder = cfg.shared_encoder;
  return o;
}

// ---------------------------------------------------------------------------
// Preparation: faces -> descriptions -> alignment -> scene caption

struct PreparedExample {
  Example example;
  std::vector<FaceDescription> candidates;  // sentiment-bearing, face order
  RefinedDescription aligned;
  std::vector<double> scores;  // alignment scores; empty for 0 or 1 candidates
  SceneCaption scene;
};

// Refined description of the first candidate face, used when alignment is
// ablated.
inline RefinedDescription first_face_refined(const PreparedExample& p) {
  if (p.candidates.empty()) return {};
  return refine_description(p.candidates.front(), p.example.target);
}

inline RefinedDescription refined_for(const PreparedExample& p, const ModelSpec& spec) {
  return spec.use_alignment ? p.aligned : first_face_refined(p);
}

inline PreparedExample prepare_example(const Example& example, const Image& image,
                                       const BackendBundle& backends, double alpha,
                                       const ProjectionParams& proj) {
  PreparedExample p;
  p.example = example;
  const auto faces = describe_faces(image, *backends.detector, *backends.analyzer, alpha);
  p.candidates = descriptions_of(faces);
  auto aligned = align_with_scores(example.target, image, p.candidates, *backends.encoders, proj);
  p.aligned = std::move(aligned.refined);
  p.scores = std::move(aligned.scores);
  p.scene = scene_caption(image, *backends.captioner);
  return p;
}

// Examples whose image cannot be loaded keep their text and get no visual
// evidence (no faces, empty scene caption).
inline std::vector<PreparedExample> prepare_split(const std::vector<Example>& examples,
                                                  const BackendBundle& backends,
                                                  const ImageLoader& load_image, double alpha,
                                                  const ProjectionParams& proj) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    Image image;
    try {
      image = load_image(ex);
    } catch (const std::exception& e) {
      warn("example '" + ex.id + "': image unavailable, using text only (" + e.what() + ")");
    }
    if (image.empty()) {
      out.push_back(PreparedExample{ex, {}, {}, {}, {}});
      continue;
    }
    out.push_back(prepare_example(ex, image, backends, alpha, proj));
  }
  return out;
}

inline std::vector<EncodedExample> encode_split(const std::vector<PreparedExample>& split,
                                                const BackendBundle& backends,
                                                const ModelSpec& spec) {
  std::vector<EncodedExample> out;
  out.reserve(split.size());
  for (const auto& p : split) {
    out.push_back(encode_example(p.example, refined_for(p, spec), p.scene,
                                 *backends.description_encoder, *backends.scene_encoder,
                                 spec.fusion()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Train / evaluate

struct Checkpoint {
  TrainConfig config;
  ModelSpec spec;
  GateParams gate;
  ProjectionParams projection;
  std::string backend_identity;
  std::size_t best_epoch = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double valid_accuracy = 0.0;
  double valid_macro_f1 = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> epochs;
  Metrics best_valid;
};

struct EvalResult {
  Metrics metrics;
  std::vector<Prediction> predictions;
};

inline EvalResult evaluate_encoded(std::span<const EncodedExample> split,
                                   const GateParams& params, GateMode mode) {
  if (split.empty()) throw Error("evaluate: empty split");
  EvalResult r;
  r.predictions = predict_batch(split, params, mode);
  std::vector<int> truth, predicted;
  for (std::size_t i = 0; i < split.size(); ++i) {
    truth.push_back(split[i].label);
    predicted.push_back(encode_label(r.predictions[i].predicted));
  }
  r.metrics = compute_metrics(truth, predicted);
  return r;
}

inline void check_backend_compatible(const Checkpoint& ckpt, const BackendBundle& backends) {
  if (ckpt.backend_identity != backends.identity) {
    throw Error("checkpoint was trained with backend '" + ckpt.backend_identity +
                "' but '" + backends.identity + "' was supplied");
  }
}

inline EvalResult evaluate(const Checkpoint& ckpt, const std::vector<PreparedExample>& split,
                           const BackendBundle& backends) {
  check_backend_compatible(ckpt, backends);
  const auto encoded = encode_split(split, backends, ckpt.spec);
  return evaluate_encoded(encoded, ckpt.gate, ckpt.spec.gate);
}

// Mini-batch AdamW on the cross-entropy loss. One Rng seeded from
// config.seed drives initialization, shuffling and dropout in that order.
// The checkpoint with the best validation macro-F1 is kept (first wins ties).
inline TrainResult train_encoded(const TrainConfig& config,
                                 const std::vector<EncodedExample>& train_set,
                                 const std::vector<EncodedExample>& valid_set,
                                 std::string backend_identity = {}) {
  config.validate();
  if (train_set.empty()) throw Error("train: empty training split");
  if (valid_set.empty()) throw Error("train: empty validation split");
  const ModelSpec spec = model_spec(config);

  Rng rng(config.seed);
  GateParams params = GateParams::initial(config.text_dim, spec.gate, rng);
  AdamW optimizer(params, {.weight_decay = config.weight_decay});

  TrainResult result;
  result.checkpoint = {config, spec, params,
                       ProjectionParams::identity(config.embed_dim, config.align_dim, config.t),
                       std::move(backend_identity), 0};
  double best_f1 = -1.0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EncodedExample> batch;
  std::vector<Vector> masks;
  const auto classifier_width =
      static_cast<Eigen::Index>(spec.gate == GateMode::concat ? 2 * config.text_dim
                                                              : config.text_dim);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      masks.clear();
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(train_set[order[i]]);
        if (config.dropout > 0.0) {
          masks.push_back(draw_dropout_mask(classifier_width, config.dropout, rng));
        }
      }
      if (batch.empty()) throw Error("train: empty batch");
      LossAndGradients lg;
      try {
        lg = loss_and_gradients(batch, params, spec.gate, masks);
      } catch (const Error& e) {
        throw Error("train: aborting at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(n_batches) + ": " + e.what());
      }
      optimizer.step(params, lg.grads, config.learning_rate);
      if (!params.all_finite()) {
        throw Error("train: parameters became non-finite at epoch " + std::to_string(epoch));
      }
      loss_sum += lg.loss;
      ++n_batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_batches);
    rec.train_accuracy = evaluate_encoded(train_set, params, spec.gate).metrics.accuracy;
    const Metrics valid = evaluate_encoded(valid_set, params, spec.gate).metrics;
    rec.valid_accuracy = valid.accuracy;
    rec.valid_macro_f1 = valid.macro_f1;
    result.epochs.push_back(rec);

    if (valid.macro_f1 > best_f1) {
      best_f1 = valid.macro_f1;
      result.checkpoint.gate = params;
      result.checkpoint.best_epoch = epoch;
      result.best_valid = valid;
    }
  }
  return result;
}

inline TrainResult train(const TrainConfig& config, const std::vector<PreparedExample>& train_split,
                         const std::vector<PreparedExample>& valid_split,
                         const BackendBundle& backends) {
  const ModelSpec spec = model_spec(config);
  return train_encoded(config, encode_split(train_split, backends, spec),
                       encode_split(valid_split, backends, spec), backends.identity);
}

// ---------------------------------------------------------------------------
// Multi-seed averaging and ablations

struct RunReport {
  std::uint64_t seed = 0;
  std::optional<Metrics> metrics;  // empty when the run failed
  std::vector<EpochRecord> epochs;
  std::string error;
};

struct MultiSeedReport {
  std::vector<RunReport> runs;
  std::optional<Metrics> mean;  // over successful runs; confusion is summed
  std::size_t failures = 0;
};

inline Metrics mean_metrics(std::span<const Metrics> runs) {
  if (runs.empty()) throw Error("mean_metrics: no runs");
  Metrics m;
  for (const auto& r : runs) {
    m.accuracy += r.accuracy;
    m.macro_f1 += r.macro_f1;
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      m.per_class_f1[k] += r.per_class_f1[k];
      for (std::size_t j = 0; j < kNumLabels; ++j) m.confusion[k][j] += r.confusion[k][j];
    }
  }
  const auto n = static_cast<double>(runs.size());
  m.accuracy /= n;
  m.macro_f1 /= n;
  for (auto& f : m.per_class_f1) f /= n;
  return m;
}

// Runs train+evaluate with seeds seed, seed+1, ..., evaluating on `eval_split`.
inline MultiSeedReport run_multi_seed(const TrainConfig& config, std::size_t n_runs,
                                      const std::vector<PreparedExample>& train_split,
                                      const std::vector<PreparedExample>& valid_split,
                                      const std::vector<PreparedExample>& eval_split,
                                      const BackendBundle& backends) {
  if (n_runs < 1) throw Error("run_multi_seed: n_runs must be >= 1");
  MultiSeedReport report;
  std::vector<Metrics> ok;
  for (std::size_t i = 0; i < n_runs; ++i) {
    TrainConfig cfg = config;
    cfg.seed = config.seed + i;
    RunReport run;
    run.seed = cfg.seed;
    try {
      auto trained = train(cfg, train_split, valid_split, backends);
      run.epochs = std::move(trained.epochs);
      run.metrics = evaluate(trained.checkpoint, eval_split, backends).metrics;
      ok.push_back(*run.metrics);
    } catch (const std::exception& e) {
      run.error = e.what();
      ++report.failures;
    }
    report.runs.push_back(std::move(run));
  }
  if (!ok.empty()) report.mean = mean_metrics(ok);
  return report;
}

struct AblationVariant {
  std::string name;
  AblationFlags flags;
};

inline std::vector<AblationVariant> ablation_variants() {
  return {{"full", {}},
          {"no_gating", {.no_gating = true}},
          {"no_alignment", {.no_alignment = true}},
          {"no_scene_caption", {.no_scene_caption = true}}};
}

struct AblationRow {
  std::string variant;
  TrainConfig config;
  ModelSpec spec;
  Metrics metrics;
  std::vector<EpochRecord> epochs;
};

inline std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                             const std::vector<PreparedExample>& train_split,
                                             const std::vector<PreparedExample>& valid_split,
                                             const std::vector<PreparedExample>& eval_split,
                                             const BackendBundle& backends) {
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants()) {
    TrainConfig cfg = base;
    cfg.ablation = v.flags;
    if (v.flags.no_gating) cfg.gate_complement = false;
    auto trained = train(cfg, train_split, valid_split, backends);
    rows.push_back({v.name, cfg, trained.checkpoint.spec,
                    evaluate(trained.checkpoint, eval_split, backends).metrics,
                    std::move(trained.epochs)});
  }
  return rows;
}

}  // namespace vectn
