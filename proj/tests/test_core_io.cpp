#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "kongnet/core_types.hpp"
#include "kongnet/io.hpp"
#include "kongnet/preprocess.hpp"

using namespace kongnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kongnet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool has_kind(const std::vector<Violation>& v, ViolationKind k) {
  for (const auto& x : v)
    if (x.kind == k) return true;
  return false;
}

}  // namespace

TEST_SUITE("core_io") {
  TEST_CASE("annotation validation") {
    const ImagePatch patch(256, 256, 0.5);
    SUBCASE("centroid out of bounds") {
      AnnotationSet a;
      a.centroids.push_back({300, 10, 0});
      const auto v = validate_annotation(a, patch, 1);
      REQUIRE(v.size() == 1);
      CHECK(to_string(v[0].kind) == "out of bounds");
    }
    SUBCASE("empty annotation is fine") { CHECK(validate_annotation(AnnotationSet{}, patch, 3).empty()); }
    SUBCASE("non-contiguous instance labels") {
      AnnotationSet a;
      LabelMap m(256, 256);
      m(1, 1) = 1;
      m(5, 5) = 2;
      m(9, 9) = 4;
      a.instance_mask = m;
      a.instance_classes = {0, 0, 0, 0};
      CHECK(has_kind(validate_annotation(a, patch, 1), ViolationKind::non_contiguous_labels));
      CHECK(to_string(ViolationKind::non_contiguous_labels) == "non-contiguous labels");
    }
    SUBCASE("unknown class") {
      AnnotationSet a;
      a.centroids.push_back({3, 3, 2});
      CHECK(has_kind(validate_annotation(a, patch, 2), ViolationKind::unknown_class));
    }
    SUBCASE("mask shape mismatch") {
      AnnotationSet a;
      a.instance_mask = LabelMap(64, 64);
      CHECK(has_kind(validate_annotation(a, patch, 1), ViolationKind::mask_shape_mismatch));
    }
  }

  TEST_CASE("patch and class spec contracts") {
    CHECK_THROWS(ImagePatch(16, 64, 0.5));
    CHECK_THROWS(ImagePatch(64, 64, 0.0));
    CHECK_THROWS(ImagePatch(64, 64, std::vector<double>(10), 0.5));
    auto spec = ClassSpec::uniform({"a", "b"}, 5, 6.0);
    CHECK_NOTHROW(spec.validate());
    CHECK(spec.index_of("b") == 1);
    CHECK(spec.index_of("zz") == -1);
    spec.dilation_diameters[0] = 4;
    CHECK_THROWS(spec.validate());
    CHECK_THROWS(ClassSpec::uniform({"a", "a"}, 5, 6.0).validate());
  }

  TEST_CASE("points csv round trip is exact") {
    std::vector<io::PointRecord> rows{{"img1", 1.5, 2.25, "lymph", 0.1},
                                      {"img1", 1e-17, 63.0, "mono", 1.0 / 3.0},
                                      {"img2", 7.0, 8.0, "lymph", 0.9999999999999999}};
    std::stringstream ss;
    io::write_points_csv(ss, rows);
    CHECK(ss.str().rfind("id,x,y,class_name,confidence\n", 0) == 0);
    CHECK(io::read_points_csv(ss) == rows);
  }

  TEST_CASE("points csv without confidence") {
    std::vector<io::PointRecord> rows{{"a", 1, 2, "x", std::nullopt}};
    std::stringstream ss;
    io::write_points_csv(ss, rows);
    CHECK(ss.str() == "id,x,y,class_name\na,1,2,x\n");
    CHECK(io::read_points_csv(ss) == rows);
  }

  TEST_CASE("points csv rejects malformed input") {
    std::stringstream bad_header("x,y\n1,2\n");
    CHECK_THROWS_AS(io::read_points_csv(bad_header), io::IoError);
    std::stringstream bad_conf("id,x,y,class_name,confidence\na,1,2,c,1.5\n");
    CHECK_THROWS_AS(io::read_points_csv(bad_conf), io::IoError);
    std::stringstream bad_number("id,x,y,class_name\na,one,2,c\n");
    CHECK_THROWS_AS(io::read_points_csv(bad_number), io::IoError);
  }

  TEST_CASE("detections group by image id") {
    const auto classes = ClassSpec::uniform({"a", "b"}, 5, 6.0);
    std::vector<Detection> d{{1, 2, 1, 0.5}, {3, 4, 0, 0.25}};
    auto records = io::to_records(d, classes, "im");
    records.push_back({"other", 9, 9, "a", 0.75});
    const auto grouped = io::group_detections(records, classes);
    REQUIRE(grouped.size() == 2);
    CHECK(grouped.at("im") == d);
    CHECK(grouped.at("other").front().class_index == 0);
  }

  TEST_CASE("npy round trips for masks, labels and images") {
    const fs::path dir = scratch("npy");
    Mask m(3, 5);
    m(4, 2) = 1;
    io::save_mask(dir / "m.npy", m);
    CHECK(io::load_mask(dir / "m.npy") == m);

    LabelMap l(4, 2);
    l(1, 3) = -7;
    l(0, 0) = 123456;
    io::save_labels(dir / "l.npy", l);
    CHECK(io::load_labels(dir / "l.npy") == l);

    ImagePatch im(32, 40, 0.5, "im");
    im.at(39, 31, 2) = 0.125;
    io::save_image(dir / "im.npy", im);
    CHECK(io::load_image(dir / "im.npy", 0.5, "im") == im);
  }

  TEST_CASE("annotation container round trip") {
    const fs::path dir = scratch("ann");
    const auto classes = ClassSpec::uniform({"a", "b"}, 5, 6.0);
    AnnotationSet a;
    LabelMap m(32, 32);
    m(3, 3) = 1;
    m(10, 12) = 2;
    a.instance_mask = m;
    a.instance_classes = {1, 0};
    a.centroids = {{3, 3, 1}, {10, 12, 0}};
    io::save_annotation(dir / "p0", "p0", a, classes);
    CHECK(io::load_annotation(dir / "p0", classes) == a);
  }

  TEST_CASE("target manifest round trip") {
    const fs::path dir = scratch("manifest");
    const auto classes = ClassSpec::uniform({"a"}, 5, 6.0);
    AnnotationSet a;
    LabelMap m(32, 32);
    m(5, 5) = 1;
    a.instance_mask = m;
    a.instance_classes = {0};
    const auto targets = preprocess::build_target_set(a, classes, 32, 32, preprocess::TargetMode::multitask);
    const auto rows = io::save_target_set(dir, "p", targets, classes);
    CHECK(rows.size() == 3);
    io::write_manifest(dir / "manifest.csv", rows);
    CHECK(io::read_manifest(dir / "manifest.csv") == rows);
    CHECK(io::load_mask(dir / rows[0].path) == targets.classes[0].centroid);
  }
}
