#pragma once

// The `vectn` command line. run_command is the whole program minus main(),
// so tests drive it directly.
//
// Option precedence: command line, then the --config file, then the
// VECTN_BACKEND environment variable (backend only), then built-in defaults.
// Config files hold `key = value` lines; `#` starts a comment; keys are long
// option names with '-' or '_' separators (learning_rate, d_align, ...).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vectn/checkpoint.hpp"
#include "vectn/dataset.hpp"
#include "vectn/error.hpp"
#include "vectn/log.hpp"
#include "vectn/pipeline_io.hpp"
#include "vectn/toy_backend.hpp"
#include "vectn/training.hpp"

namespace vectn::cli {

namespace fs = std::filesystem;

inline constexpr const char* kBackendEnv = "VECTN_BACKEND";
inline constexpr const char* kCheckpointFile = "checkpoint.vectn";
inline constexpr const char* kMetricsFile = "metrics.json";

struct Options {
  std::string config;
  std::string backend = "toy";
  std::string annotations;
  std::string image_root;
  std::string model_dir = "models";
  std::string modality = "multimodal";
  TrainConfig train;

  std::string in, out, faces, captions, prepared;
  std::string train_path, valid_path, test_path, out_dir, checkpoint, stats;
  std::string format = "jsonl";
  std::string label_scheme = "index";
  bool face_subset = false;
  std::size_t runs = 5;
  bool backend_explicit = false;  // set on the command line, in config or env
};

// Parses a key=value config file into normalized (dash-separated) keys.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path.string() + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + " line " + std::to_string(line_no) +
                       ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    for (auto& c : key) {
      if (c == '_') c = '-';
    }
    if (key.empty()) throw UsageError(path.string() + " line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline std::string variant_name(const AblationFlags& f) {
  std::string name;
  auto add = [&name](bool on, const char* part) {
    if (on) name += (name.empty() ? "" : "+") + std::string(part);
  };
  add(f.no_gating, "no_gating");
  add(f.no_alignment, "no_alignment");
  add(f.no_scene_caption, "no_scene_caption");
  return name.empty() ? "full" : name;
}

namespace detail {

inline void add_backend_options(CLI::App* sub, Options& o) {
  sub->add_option("--backend", o.backend, "Backend bundle: toy | pretrained (env " +
                                              std::string(kBackendEnv) + ")");
  sub->add_option("--annotations", o.annotations,
                  "Toy sidecar annotations (default: annotations.jsonl beside the input)");
  sub->add_option("--image-root", o.image_root,
                  "Directory holding example images (default: images/ beside the input)");
  sub->add_option("--model-dir", o.model_dir, "Pretrained model assets directory");
  sub->add_option("--text-dim", o.train.text_dim, "Pooled text encoder width d");
  sub->add_option("--embed-dim", o.train.embed_dim, "Contrastive embedding width d_e");
  sub->add_flag("--shared-encoder", o.train.shared_encoder,
                "Use one text encoder for both phrases");
}

inline void add_model_options(CLI::App* sub, Options& o) {
  auto& c = o.train;
  sub->add_option("--learning-rate", c.learning_rate, "AdamW learning rate");
  sub->add_option("--batch-size", c.batch_size, "Mini-batch size");
  sub->add_option("--dropout", c.dropout, "Dropout on the classifier input");
  sub->add_option("--epochs", c.epochs, "Training epochs");
  sub->add_option("--max-len", c.max_len, "Phrase token budget");
  sub->add_option("--seed", c.seed, "Seed for init, shuffling and dropout");
  sub->add_option("--weight-decay", c.weight_decay, "AdamW decoupled weight decay");
  sub->add_option("--modality", o.modality, "multimodal | caption_only | visual_only");
  sub->add_flag("--no-gating", c.ablation.no_gating, "Concatenate instead of gating");
  sub->add_flag("--no-alignment", c.ablation.no_alignment,
                "Use the first face's description instead of the aligned one");
  sub->add_flag("--no-scene-caption", c.ablation.no_scene_caption, "Drop the scene caption");
  sub->add_flag("--gate-complement", c.gate_complement,
                "Fuse as jt*o_dt + (1-jt)*o_ic instead of jt*(o_dt+o_ic)");
  sub->add_option("--train", o.train_path, "Training split (prepared.jsonl)");
  sub->add_option("--valid", o.valid_path, "Validation split (prepared.jsonl)");
}

inline void add_alignment_options(CLI::App* sub, Options& o) {
  sub->add_option("--alpha", o.train.alpha, "Attribute confidence threshold");
  sub->add_option("--t", o.train.t, "Alignment logit scale (scores use e^t)");
  sub->add_option("--d-align,--align-dim", o.train.align_dim, "Alignment space width d_a");
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

inline fs::path default_beside(const std::string& input, const char* name) {
  return fs::path(input).parent_path() / name;
}

struct Context {
  Options& o;
  std::ostream& out;
  std::ostream& err;

  fs::path annotations_for(const std::string& input) const {
    if (!o.annotations.empty()) return o.annotations;
    const auto guess = default_beside(input, "annotations.jsonl");
    return fs::exists(guess) ? guess : fs::path{};
  }

  fs::path image_root_for(const std::string& input) const {
    return o.image_root.empty() ? default_beside(input, "images") : fs::path(o.image_root);
  }

  TrainConfig config() const {
    TrainConfig c = o.train;
    c.backend = o.backend;
    try {
      c.modality = parse_modality(o.modality);
      c.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  BackendBundle backends(const TrainConfig& c, const fs::path& annotations) const {
    BackendOptions opts = backend_options(c, annotations);
    opts.model_dir = o.model_dir;
    return resolve_backend(c.backend, opts);
  }
};

// Loads each example's image, memoized per image_ref. Failures yield an
// empty image and one warning per example.
class ImageCache {
 public:
  explicit ImageCache(fs::path root) : load_(ppm_loader(std::move(root))) {}

  const Image& get(const Example& ex) {
    auto it = cache_.find(ex.image_ref);
    if (it == cache_.end()) {
      Image img;
      std::string error;
      try {
        img = load_(ex);
      } catch (const std::exception& e) {
        error = e.what();
      }
      it = cache_.emplace(ex.image_ref, Entry{std::move(img), std::move(error)}).first;
    }
    if (!it->second.error.empty()) {
      warn("example '" + ex.id + "': image unavailable (" + it->second.error + ")");
    }
    return it->second.image;
  }

 private:
  struct Entry {
    Image image;
    std::string error;
  };
  ImageLoader load_;
  std::map<std::string, Entry> cache_;
};

inline void print_metrics(std::ostream& out, const std::string& label, const Metrics& m) {
  out << label << " accuracy=" << std::fixed << std::setprecision(4) << m.accuracy
      << " macro_f1=" << m.macro_f1 << std::defaultfloat << '\n';
}

// ---------------------------------------------------------------------------
// Stages

inline void cmd_ingest(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.in, "--in");
  require(o.out, "--out");
  SplitFormat format;
  if (o.format == "jsonl") format = SplitFormat::jsonl;
  else if (o.format == "fourline") format = SplitFormat::fourline;
  else throw UsageError("--format must be jsonl or fourline");
  LabelScheme scheme;
  if (o.label_scheme == "index") scheme = LabelScheme::index;
  else if (o.label_scheme == "signed") scheme = LabelScheme::signed_polarity;
  else throw UsageError("--label-scheme must be index or signed");

  auto examples = load_split(o.in, format, scheme);
  if (o.face_subset) {
    const TrainConfig c = ctx.config();
    const auto b = ctx.backends(c, ctx.annotations_for(o.in));
    examples = build_face_subset(examples, *b.detector, ppm_loader(ctx.image_root_for(o.in)));
  }
  std::vector<json> records;
  for (const auto& ex : examples) records.push_back(to_json(ex));
  write_jsonl(o.out, records);

  const SplitStats s = split_stats(examples);
  const json stats{{"examples", s.total()},
                   {"positive", s.positive_count},
                   {"negative", s.negative_count},
                   {"neutral", s.neutral_count},
                   {"avg_targets_per_caption", s.avg_targets_per_caption}};
  if (!o.stats.empty()) write_json(o.stats, stats);
  ctx.out << stats.dump() << '\n';
}

inline void cmd_faces(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.in, "--in");
  require(o.out, "--out");
  const TrainConfig c = ctx.config();
  const auto b = ctx.backends(c, ctx.annotations_for(o.in));
  ImageCache images(ctx.image_root_for(o.in));
  std::vector<json> records;
  std::size_t n_faces = 0;
  for (const auto& ex : read_examples(o.in)) {
    const Image& image = images.get(ex);
    std::vector<AnalyzedFace> faces;
    if (!image.empty()) faces = describe_faces(image, *b.detector, *b.analyzer, c.alpha);
    n_faces += faces.size();
    records.push_back(faces_record(ex.id, faces));
  }
  write_jsonl(o.out, records);
  ctx.out << "faces: " << records.size() << " examples, " << n_faces << " faces\n";
}

inline void cmd_caption(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.in, "--in");
  require(o.out, "--out");
  const TrainConfig c = ctx.config();
  const auto b = ctx.backends(c, ctx.annotations_for(o.in));
  ImageCache images(ctx.image_root_for(o.in));
  std::vector<json> records;
  for (const auto& ex : read_examples(o.in)) {
    const Image& image = images.get(ex);
    SceneCaption caption;
    if (!image.empty()) caption = scene_caption(image, *b.captioner);
    records.push_back(caption_record(ex.id, caption));
  }
  write_jsonl(o.out, records);
  ctx.out << "caption: " << records.size() << " examples\n";
}

inline void cmd_align(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.in, "--in");
  require(o.faces, "--faces");
  require(o.out, "--out");
  const TrainConfig c = ctx.config();
  const auto b = ctx.backends(c, ctx.annotations_for(o.in));
  const auto proj = ProjectionParams::identity(c.embed_dim, c.align_dim, c.t);
  const auto faces = read_faces(o.faces);
  const auto captions =
      o.captions.empty() ? std::map<std::string, std::string>{} : read_captions(o.captions);
  ImageCache images(ctx.image_root_for(o.in));

  std::vector<json> descriptions, prepared;
  for (const auto& ex : read_examples(o.in)) {
    PreparedExample p;
    p.example = ex;
    if (auto it = faces.find(ex.id); it != faces.end()) {
      p.candidates = candidates_from_faces(it->second, c.alpha);
    } else {
      warn("example '" + ex.id + "': no faces record");
    }
    if (p.candidates.size() > 1) {
      auto aligned = align_with_scores(ex.target, images.get(ex), p.candidates, *b.encoders, proj);
      p.aligned = std::move(aligned.refined);
      p.scores = std::move(aligned.scores);
    } else if (p.candidates.size() == 1) {
      p.aligned = refine_description(p.candidates.front(), ex.target);
    }
    if (auto it = captions.find(ex.id); it != captions.end()) p.scene.text = it->second;
    descriptions.push_back(description_record(p));
    prepared.push_back(prepared_record(p));
  }
  write_jsonl(o.out, descriptions);
  if (!o.prepared.empty()) write_jsonl(o.prepared, prepared);
  ctx.out << "align: " << descriptions.size() << " examples\n";
}

inline void cmd_train(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.train_path, "--train");
  require(o.valid_path, "--valid");
  require(o.out_dir, "--out-dir");
  const TrainConfig c = ctx.config();
  const auto train_split = read_prepared(o.train_path);
  const auto valid_split = read_prepared(o.valid_path);
  const auto b = ctx.backends(c, ctx.annotations_for(o.train_path));

  const TrainResult r = train(c, train_split, valid_split, b);
  for (const auto& e : r.epochs) {
    ctx.out << "epoch " << e.epoch << " loss=" << std::setprecision(6) << e.train_loss
            << " train_acc=" << e.train_accuracy << " valid_acc=" << e.valid_accuracy
            << " valid_macro_f1=" << e.valid_macro_f1 << std::defaultfloat << '\n';
  }
  fs::create_directories(o.out_dir);
  save_checkpoint(fs::path(o.out_dir) / kCheckpointFile, r.checkpoint);
  Metrics reported = r.best_valid;
  if (!o.test_path.empty()) reported = evaluate(r.checkpoint, read_prepared(o.test_path), b).metrics;
  write_json(fs::path(o.out_dir) / kMetricsFile,
             metrics_json(variant_name(c.ablation), c.seed, reported, r.epochs));
  ctx.out << "best epoch " << r.checkpoint.best_epoch << '\n';
  print_metrics(ctx.out, o.test_path.empty() ? "valid" : "test", reported);
}

// The checkpoint's own backend is used unless one was given explicitly.
inline Checkpoint load_for_inference(const Context& ctx, BackendBundle& bundle,
                                     const std::string& input) {
  require(ctx.o.checkpoint, "--checkpoint");
  Checkpoint ckpt = load_checkpoint(ctx.o.checkpoint);
  TrainConfig c = ckpt.config;
  if (ctx.o.backend_explicit) c.backend = ctx.o.backend;
  bundle = ctx.backends(c, ctx.annotations_for(input));
  check_backend_compatible(ckpt, bundle);
  return ckpt;
}

inline void cmd_eval(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.in, "--in");
  require(o.out, "--out");
  BackendBundle b;
  const Checkpoint ckpt = load_for_inference(ctx, b, o.in);
  const auto r = evaluate(ckpt, read_prepared(o.in), b);
  write_json(o.out, metrics_json(variant_name(ckpt.config.ablation), ckpt.config.seed, r.metrics, {}));
  print_metrics(ctx.out, "eval", r.metrics);
}

inline void cmd_predict(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.in, "--in");
  require(o.out, "--out");
  BackendBundle b;
  const Checkpoint ckpt = load_for_inference(ctx, b, o.in);
  const auto split = read_prepared(o.in);
  const auto encoded = encode_split(split, b, ckpt.spec);
  const auto preds = predict_batch(encoded, ckpt.gate, ckpt.spec.gate);
  std::vector<json> records;
  for (std::size_t i = 0; i < split.size(); ++i) {
    records.push_back(prediction_record(split[i].example.id, preds[i]));
  }
  write_jsonl(o.out, records);
  ctx.out << "predict: " << records.size() << " examples\n";
}

inline void cmd_ablate(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.train_path, "--train");
  require(o.valid_path, "--valid");
  require(o.test_path, "--test");
  require(o.out_dir, "--out-dir");
  TrainConfig c = ctx.config();
  c.ablation = {};
  const auto b = ctx.backends(c, ctx.annotations_for(o.train_path));
  const auto rows = run_ablation(c, read_prepared(o.train_path), read_prepared(o.valid_path),
                                 read_prepared(o.test_path), b);
  json report = json::array();
  for (const auto& row : rows) {
    report.push_back(metrics_json(row.variant, row.config.seed, row.metrics, row.epochs));
    print_metrics(ctx.out, row.variant, row.metrics);
  }
  fs::create_directories(o.out_dir);
  write_json(fs::path(o.out_dir) / "ablation.json", report);
}

inline int cmd_multiseed(const Context& ctx) {
  const auto& o = ctx.o;
  require(o.train_path, "--train");
  require(o.valid_path, "--valid");
  require(o.test_path, "--test");
  require(o.out_dir, "--out-dir");
  if (o.runs < 1) throw UsageError("--runs must be >= 1");
  const TrainConfig c = ctx.config();
  const auto b = ctx.backends(c, ctx.annotations_for(o.train_path));
  const auto report = run_multi_seed(c, o.runs, read_prepared(o.train_path),
                                     read_prepared(o.valid_path), read_prepared(o.test_path), b);
  const std::string variant = variant_name(c.ablation);
  json runs = json::array();
  for (const auto& run : report.runs) {
    if (run.metrics) {
      runs.push_back(metrics_json(variant, run.seed, *run.metrics, run.epochs));
      print_metrics(ctx.out, "seed " + std::to_string(run.seed), *run.metrics);
    } else {
      runs.push_back({{"variant", variant}, {"seed", run.seed}, {"error", run.error}});
      ctx.err << "seed " << run.seed << " failed: " << run.error << '\n';
    }
  }
  json mean = nullptr;
  if (report.mean) {
    mean = metrics_json(variant, c.seed, *report.mean, {});
    mean.erase("epochs");
    print_metrics(ctx.out, "mean", *report.mean);
  }
  fs::create_directories(o.out_dir);
  write_json(fs::path(o.out_dir) / "multiseed.json",
             {{"runs", runs}, {"mean", mean}, {"failures", report.failures}});
  return report.mean ? 0 : 1;
}

inline void apply_config(CLI::App& app, CLI::App& sub, const fs::path& path) {
  std::set<std::string> known;
  for (const auto* s : app.get_subcommands({})) {
    for (const auto* opt : s->get_options()) {
      for (const auto& name : opt->get_lnames()) known.insert(name);
    }
  }
  for (const auto& [key, value] : read_config_file(path)) {
    if (key == "config") throw UsageError("config files cannot include other config files");
    if (!known.contains(key)) throw UsageError("unknown config key '" + key + "' in " + path.string());
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr || opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

}  // namespace detail

inline int run_command(const std::vector<std::string>& args, std::ostream& out,
                       std::ostream& err) {
  Options o;
  CLI::App app{"vectn: target-dependent multimodal sentiment pipeline", "vectn"};
  app.require_subcommand(1);
  app.fallthrough(false);

  auto* ingest = app.add_subcommand("ingest", "Load a split, validate it and write examples.jsonl");
  auto* faces = app.add_subcommand("faces", "Detect and describe faces into faces.jsonl");
  auto* caption = app.add_subcommand("caption", "Write scene captions into captions.jsonl");
  auto* align = app.add_subcommand("align", "Align face descriptions with targets");
  auto* train_cmd = app.add_subcommand("train", "Train a classifier; writes checkpoint and metrics.json");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a prepared split");
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the four ablation variants");
  auto* multiseed = app.add_subcommand("multiseed", "Train with seeds seed..seed+runs-1 and average");
  auto* predict = app.add_subcommand("predict", "Write per-example predictions");

  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", o.config, "key=value config file (# comments)");
    detail::add_backend_options(sub, o);
  }

  ingest->add_option("--in", o.in, "Input split file");
  ingest->add_option("--out", o.out, "Output examples.jsonl");
  ingest->add_option("--format", o.format, "jsonl | fourline");
  ingest->add_option("--label-scheme", o.label_scheme,
                     "fourline label tokens: index (0,1,2) | signed (-1,0,1)");
  ingest->add_flag("--face-subset", o.face_subset, "Keep only examples with a detected face");
  ingest->add_option("--stats", o.stats, "Also write split statistics to this JSON file");

  for (auto* sub : {faces, caption, align}) {
    sub->add_option("--in", o.in, "Input examples.jsonl");
    sub->add_option("--out", o.out, "Output JSONL file");
  }
  faces->add_option("--alpha", o.train.alpha, "Attribute confidence threshold");
  detail::add_alignment_options(align, o);
  align->add_option("--faces", o.faces, "faces.jsonl from the faces stage");
  align->add_option("--captions", o.captions, "captions.jsonl from the caption stage");
  align->add_option("--prepared", o.prepared, "Also write prepared.jsonl for training");

  for (auto* sub : {train_cmd, ablate, multiseed}) {
    detail::add_model_options(sub, o);
    detail::add_alignment_options(sub, o);
    sub->add_option("--test", o.test_path, "Held-out split (prepared.jsonl)");
    sub->add_option("--out-dir", o.out_dir, "Output directory");
  }
  multiseed->add_option("--runs", o.runs, "Number of seeds");
  for (auto* sub : {eval_cmd, predict}) {
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file from train");
    sub->add_option("--in", o.in, "prepared.jsonl");
    sub->add_option("--out", o.out, eval_cmd == sub ? "Output metrics.json" : "Output predictions.jsonl");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CLI::App* target = &app;
    for (auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  ScopedWarningSink sink([&err](std::string_view msg) { err << "warning: " << msg << '\n'; });
  try {
    if (!o.config.empty()) detail::apply_config(app, *sub, o.config);
    o.backend_explicit = sub->count("--backend") > 0;
    if (!o.backend_explicit) {
      if (const char* env = std::getenv(kBackendEnv); env != nullptr && *env != '\0') {
        o.backend = env;
        o.backend_explicit = true;
      }
    }
    const detail::Context ctx{o, out, err};
    const std::string name = sub->get_name();
    if (name == "ingest") detail::cmd_ingest(ctx);
    else if (name == "faces") detail::cmd_faces(ctx);
    else if (name == "caption") detail::cmd_caption(ctx);
    else if (name == "align") detail::cmd_align(ctx);
    else if (name == "train") detail::cmd_train(ctx);
    else if (name == "eval") detail::cmd_eval(ctx);
    else if (name == "predict") detail::cmd_predict(ctx);
    else if (name == "ablate") detail::cmd_ablate(ctx);
    else if (name == "multiseed") return detail::cmd_multiseed(ctx);
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return 2;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace vectn::cli
