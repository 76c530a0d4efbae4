#ifndef KONGNET_IO_HPP
#define KONGNET_IO_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kongnet/core_types.hpp"

namespace kongnet::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One CSV row: `id,x,y,class_name[,confidence]`. `id` names the image the point belongs to.
struct PointRecord {
  std::string id;
  double x = 0.0;
  double y = 0.0;
  std::string class_name;
  std::optional<double> confidence;

  friend bool operator==(const PointRecord&, const PointRecord&) = default;
};

std::vector<PointRecord> read_points_csv(std::istream& in);
std::vector<PointRecord> read_points_csv(const std::filesystem::path& path);
/// Writes the confidence column iff every record carries one.
void write_points_csv(std::ostream& out, std::span<const PointRecord> records);
void write_points_csv(const std::filesystem::path& path, std::span<const PointRecord> records);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_number(double v);

std::vector<PointRecord> to_records(std::span<const Detection> detections, const ClassSpec& classes,
                                    const std::string& image_id);
/// Groups records by image id; class names must exist in `classes`.
std::map<std::string, std::vector<Detection>> group_detections(std::span<const PointRecord> records,
                                                               const ClassSpec& classes);

// NumPy .npy (format 1.0, C order, little endian).
struct NpyArray {
  std::string descr;  // "|u1", "<i4", "<f8"
  std::vector<std::size_t> shape;
  std::vector<char> bytes;
};

NpyArray read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const NpyArray& array);

void save_mask(const std::filesystem::path& path, const Mask& mask);
Mask load_mask(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_labels(const std::filesystem::path& path);
void save_prob_map(const std::filesystem::path& path, const ProbMap& map);
/// Saved as float64 (H, W, 3).
void save_image(const std::filesystem::path& path, const ImagePatch& patch);
/// Accepts uint8 or float64 (H, W, 3).
ImagePatch load_image(const std::filesystem::path& path, double mpp, std::string id);

/// Annotation container: `<stem>.csv` plus, with instance masks, `<stem>.mask.npy` and `<stem>.classes.npy`.
void save_annotation(const std::filesystem::path& stem, const std::string& patch_id,
                     const AnnotationSet& annotation, const ClassSpec& classes);
AnnotationSet load_annotation(const std::filesystem::path& stem, const ClassSpec& classes);

struct ManifestRow {
  std::string patch_id;
  std::string class_name;
  std::string task;  // centroid | nucleus | contour
  std::string path;

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

/// Writes one .npy per class per task into `dir` and returns the manifest rows (paths relative to `dir`).
std::vector<ManifestRow> save_target_set(const std::filesystem::path& dir, const std::string& patch_id,
                                         const TargetMaskSet& targets, const ClassSpec& classes);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

}  // namespace kongnet::io

#endif  // KONGNET_IO_HPP
