// Writes the synthetic toy corpus (splits, sidecar annotations, PPM images).
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vectn/toy_fixture.hpp"

int main(int argc, char** argv) {
  vectn::ToyFixtureOptions opts;
  std::string dir;
  CLI::App app{"Write the synthetic toy fixture used by the vectn test suites",
               "vectn-make-fixture"};
  app.add_option("dir", dir, "Output directory")->required();
  app.add_option("--seed", opts.seed, "Generator seed");
  app.add_option("--train", opts.train, "Training examples");
  app.add_option("--valid", opts.valid, "Validation examples");
  app.add_option("--test", opts.test, "Held-out examples");
  app.add_option("--multi-face-share", opts.multi_face_share, "Share of multi-face images")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--no-face-share", opts.no_face_share, "Share of images without faces")
      ->check(CLI::Range(0.0, 1.0));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    vectn::write_toy_fixture(vectn::make_toy_fixture(opts), dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
