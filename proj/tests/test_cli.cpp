#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "kongnet/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(KONGNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kongnet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synth writes a dataset") {
    const fs::path dir = scratch("synth");
    REQUIRE(run("synth --n 3 --out " + dir.string() + " --seed 5") == 0);
    const auto manifest = read_json(dir / "dataset.json");
    CHECK(manifest.at("patches").size() == 3);
    CHECK(manifest.at("classes").size() == 3);
    CHECK(fs::exists(dir / "images" / "patch00000.npy"));
    CHECK(fs::exists(dir / "annotations" / "patch00002.mask.npy"));
    const auto points = kongnet::io::read_points_csv(dir / "points.csv");
    CHECK_FALSE(points.empty());
  }

  TEST_CASE("eval scores ground truth against itself") {
    const fs::path dir = scratch("eval");
    REQUIRE(run("synth --n 2 --out " + dir.string() + " --seed 1") == 0);
    // Predictions: the ground truth with a confidence column.
    auto points = kongnet::io::read_points_csv(dir / "points.csv");
    for (auto& p : points) p.confidence = 0.9;
    kongnet::io::write_points_csv(dir / "pred.csv", points);
    const std::string common = " --pred " + (dir / "pred.csv").string() + " --gt " + (dir / "points.csv").string();

    REQUIRE(run("eval --protocol global_f1 --radius 6 --out " + (dir / "f1.json").string() + common) == 0);
    CHECK(read_json(dir / "f1.json").at("mean_f1").get<double>() == 1.0);

    REQUIRE(run("eval --protocol pannuke --radius 6 --out " + (dir / "pn.json").string() + common) == 0);
    CHECK(read_json(dir / "pn.json").at("detection").at("f1").get<double>() == 1.0);

    REQUIRE(run("eval --protocol froc --margin-um 3 --mpp 0.5 --area-mm2 0.002 --out " + (dir / "froc.json").string() +
                " --curve " + (dir / "curve.csv").string() + common) == 0);
    for (const auto& [name, entry] : read_json(dir / "froc.json").at("classes").items())
      CHECK(entry.at("froc").get<double>() == 1.0);
    CHECK(fs::exists(dir / "curve.csv"));

    CHECK(run("eval --protocol froc --out " + (dir / "x.json").string() + common) != 0);
    CHECK(run("eval --protocol nope" + common) != 0);
  }
}
