#pragma once

// Checkpoint container, version 1.
//
//   offset  size  field
//   0       8     magic "VECTNCK1"
//   8       4     format version, uint32 little-endian (= 1)
//   12      8     header length H in bytes, uint64 little-endian
//   20      H     header, compact UTF-8 JSON:
//                   {"format": 1, "backend": str, "best_epoch": int,
//                    "config": {...TrainConfig keys...},
//                    "spec": {"gate", "use_alignment", "use_scene_caption",
//                             "modality", "max_len"},
//                    "t": float,
//                    "tensors": [{"name", "rows", "cols"}, ...]}
//   20+H    ...   tensor payload: IEEE-754 binary64 little-endian, each
//                 tensor row-major, tensors in header order:
//                 V_DT, V_IC, b_j, V, b, text_projection, image_projection
//
// Vectors are stored as (n x 1). Trailing bytes after the payload are an
// error.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vectn/error.hpp"
#include "vectn/training.hpp"

namespace vectn {

inline constexpr std::array<char, 8> kCheckpointMagic = {'V', 'E', 'C', 'T', 'N', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"dropout", c.dropout},
          {"epochs", c.epochs},
          {"alpha", c.alpha},
          {"t", c.t},
          {"max_len", c.max_len},
          {"seed", c.seed},
          {"no_gating", c.ablation.no_gating},
          {"no_alignment", c.ablation.no_alignment},
          {"no_scene_caption", c.ablation.no_scene_caption},
          {"modality", std::string(modality_name(c.modality))},
          {"backend", c.backend},
          {"text_dim", c.text_dim},
          {"embed_dim", c.embed_dim},
          {"align_dim", c.align_dim},
          {"weight_decay", c.weight_decay},
          {"gate_complement", c.gate_complement},
          {"shared_encoder", c.shared_encoder}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.t = j.at("t").get<double>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.ablation.no_gating = j.at("no_gating").get<bool>();
  c.ablation.no_alignment = j.at("no_alignment").get<bool>();
  c.ablation.no_scene_caption = j.at("no_scene_caption").get<bool>();
  c.modality = parse_modality(j.at("modality").get<std::string>());
  c.backend = j.at("backend").get<std::string>();
  c.text_dim = j.at("text_dim").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.align_dim = j.at("align_dim").get<std::size_t>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.gate_complement = j.at("gate_complement").get<bool>();
  c.shared_encoder = j.at("shared_encoder").get<bool>();
  return c;
}

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  return {{"gate", std::string(gate_mode_name(s.gate))},
          {"use_alignment", s.use_alignment},
          {"use_scene_caption", s.use_scene_caption},
          {"modality", std::string(modality_name(s.modality))},
          {"max_len", s.max_len}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.gate = parse_gate_mode(j.at("gate").get<std::string>());
  s.use_alignment = j.at("use_alignment").get<bool>();
  s.use_scene_caption = j.at("use_scene_caption").get<bool>();
  s.modality = parse_modality(j.at("modality").get<std::string>());
  s.max_len = j.at("max_len").get<std::size_t>();
  return s;
}

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  static_assert(std::is_unsigned_v<T>);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) {
      throw Error(std::string("checkpoint truncated while reading ") + what);
    }
    value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return value;
}

struct TensorRef {
  const char* name;
  Matrix* m = nullptr;
  Vector* v = nullptr;
  Eigen::Index rows() const { return m ? m->rows() : v->size(); }
  Eigen::Index cols() const { return m ? m->cols() : 1; }
  double& at(Eigen::Index r, Eigen::Index c) const { return m ? (*m)(r, c) : (*v)(r); }
};

inline std::vector<TensorRef> checkpoint_tensors(GateParams& g, ProjectionParams& p) {
  return {{"V_DT", &g.V_DT},
          {"V_IC", &g.V_IC},
          {"b_j", nullptr, &g.b_j},
          {"V", &g.V},
          {"b", nullptr, &g.b},
          {"text_projection", &p.text_projection},
          {"image_projection", &p.image_projection}};
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  Checkpoint copy = ckpt;
  auto tensors = detail::checkpoint_tensors(copy.gate, copy.projection);

  nlohmann::json header{{"format", kCheckpointVersion},
                        {"backend", ckpt.backend_identity},
                        {"best_epoch", ckpt.best_epoch},
                        {"config", config_to_json(ckpt.config)},
                        {"spec", spec_to_json(ckpt.spec)},
                        {"t", ckpt.projection.t}};
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& t : tensors) {
    shapes.push_back({{"name", t.name}, {"rows", t.rows()}, {"cols", t.cols()}});
  }
  header["tensors"] = shapes;
  const std::string text = header.dump();

  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.at(r, c)));
      }
    }
  }
  if (!out) throw Error("checkpoint write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kCheckpointMagic) {
    throw Error("not a vectn checkpoint (bad magic)");
  }
  const auto version = detail::get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = detail::get_le<std::uint64_t>(in, "header length");
  if (header_len > (std::uint64_t{1} << 24)) throw Error("checkpoint header too large");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::uint64_t>(in.gcount()) != header_len) {
    throw Error("checkpoint truncated while reading header");
  }

  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ckpt.backend_identity = header.at("backend").get<std::string>();
    ckpt.best_epoch = header.at("best_epoch").get<std::size_t>();
    ckpt.config = config_from_json(header.at("config"));
    ckpt.spec = spec_from_json(header.at("spec"));
    ckpt.projection.t = header.at("t").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint header malformed: ") + e.what());
  }

  auto tensors = detail::checkpoint_tensors(ckpt.gate, ckpt.projection);
  const auto& shapes = header.at("tensors");
  if (!shapes.is_array() || shapes.size() != tensors.size()) {
    throw Error("checkpoint header lists an unexpected tensor set");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = tensors[i];
    if (shapes[i].at("name").get<std::string>() != t.name) {
      throw Error("checkpoint tensor " + std::to_string(i) + " should be '" + t.name + "'");
    }
    const auto rows = shapes[i].at("rows").get<Eigen::Index>();
    const auto cols = shapes[i].at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0 || rows > (1 << 16) || cols > (1 << 16)) {
      throw Error(std::string("checkpoint tensor '") + t.name + "' has invalid shape");
    }
    if (t.m) {
      t.m->resize(rows, cols);
    } else {
      if (cols != 1) throw Error(std::string("checkpoint tensor '") + t.name + "' must be a column");
      t.v->resize(rows);
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        t.at(r, c) = std::bit_cast<double>(detail::get_le<std::uint64_t>(in, t.name));
      }
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("checkpoint has trailing bytes");

  const auto width = ckpt.spec.gate == GateMode::concat ? 2 * ckpt.config.text_dim
                                                        : ckpt.config.text_dim;
  if (ckpt.gate.V.rows() != static_cast<Eigen::Index>(width) || ckpt.gate.V.cols() != 3 ||
      ckpt.gate.b.size() != 3) {
    throw Error("checkpoint classifier shape disagrees with its config");
  }
  ckpt.projection.validate();
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(out, ckpt);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  try {
    return read_checkpoint(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace vectn
