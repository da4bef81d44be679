#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "vectn/toy_backend.hpp"
#include "vectn/toy_fixture.hpp"
#include "vectn/training.hpp"

namespace vectn::test {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("vectn-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Image blank_image(int w, int h, std::string ref) {
  Image img(w, h);
  img.set_ref(std::move(ref));
  return img;
}

inline FaceAttributes attributes(std::optional<int> age, std::optional<Gender> gender,
                                 std::optional<Race> race, std::optional<Label> sentiment,
                                 double race_conf = 1.0, double sentiment_conf = 1.0) {
  FaceAttributes a;
  a.age = age;
  a.gender = gender;
  a.race = race;
  a.sentiment = sentiment;
  if (age) a.confidence["age"] = 1.0;
  if (gender) a.confidence["gender"] = 1.0;
  if (race) a.confidence["race"] = race_conf;
  if (sentiment) a.confidence["sentiment"] = sentiment_conf;
  return a;
}

// The separable toy corpus prepared once per test binary with toy backends
// at default dimensions.
struct PreparedFixture {
  ToyFixture fixture;
  std::shared_ptr<const SidecarIndex> sidecar;
  std::vector<PreparedExample> train, valid, test;
};

inline BackendBundle toy_backends(const std::shared_ptr<const SidecarIndex>& sidecar,
                                  const TrainConfig& cfg = {}) {
  return make_toy_bundle(backend_options(cfg), sidecar);
}

inline const PreparedFixture& prepared_fixture() {
  static const PreparedFixture pf = [] {
    PreparedFixture p;
    p.fixture = make_toy_fixture();
    p.sidecar = std::make_shared<const SidecarIndex>(p.fixture.sidecar());
    const auto b = toy_backends(p.sidecar);
    const auto proj = ProjectionParams::identity();
    const auto loader = p.fixture.loader();
    p.train = prepare_split(p.fixture.train, b, loader, kDefaultAlpha, proj);
    p.valid = prepare_split(p.fixture.valid, b, loader, kDefaultAlpha, proj);
    p.test = prepare_split(p.fixture.test, b, loader, kDefaultAlpha, proj);
    return p;
  }();
  return pf;
}

inline Vector random_vector(std::mt19937_64& gen, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(gen);
  return v;
}

inline Matrix random_matrix(std::mt19937_64& gen, Eigen::Index r, Eigen::Index c,
                            double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = dist(gen);
  }
  return m;
}

}  // namespace vectn::test
