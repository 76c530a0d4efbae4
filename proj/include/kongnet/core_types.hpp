#ifndef KONGNET_CORE_TYPES_HPP
#define KONGNET_CORE_TYPES_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kongnet {

/// Dense row-major 2D array. Coordinates are (x = column, y = row).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {
    if (height < 0 || width < 0) throw std::invalid_argument("Grid: negative dimension");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using Mask = Grid<std::uint8_t>;
using LabelMap = Grid<std::int32_t>;
using ProbMap = Grid<double>;

/// H x W x 3 image, channels interleaved, with its scan resolution.
class ImagePatch {
 public:
  static constexpr int kMinSide = 32;

  ImagePatch() = default;
  ImagePatch(int height, int width, std::vector<double> pixels, double mpp, std::string id = {});
  /// Zero-filled patch.
  ImagePatch(int height, int width, double mpp, std::string id = {});

  int height() const { return height_; }
  int width() const { return width_; }
  double mpp() const { return mpp_; }
  const std::string& id() const { return id_; }

  double& at(int x, int y, int channel) { return pixels_[offset(x, y, channel)]; }
  double at(int x, int y, int channel) const { return pixels_[offset(x, y, channel)]; }

  const std::vector<double>& pixels() const { return pixels_; }
  std::vector<double>& pixels() { return pixels_; }

  friend bool operator==(const ImagePatch&, const ImagePatch&) = default;

 private:
  std::size_t offset(int x, int y, int channel) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3 +
           static_cast<std::size_t>(channel);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
  double mpp_ = 0.0;
  std::string id_;
};

/// Ordered foreground classes. Index k here is decoder k in the model.
struct ClassSpec {
  std::vector<std::string> names;
  std::vector<int> dilation_diameters;  // pixels, odd
  std::vector<double> match_radii;      // pixels

  std::size_t size() const { return names.size(); }
  int index_of(const std::string& name) const;  // -1 when absent
  void validate() const;

  /// All classes share one diameter and radius.
  static ClassSpec uniform(std::vector<std::string> names, int diameter, double radius);

  friend bool operator==(const ClassSpec&, const ClassSpec&) = default;
};

struct Centroid {
  double x = 0.0;
  double y = 0.0;
  int class_index = 0;

  friend bool operator==(const Centroid&, const Centroid&) = default;
};

struct AnnotationSet {
  std::vector<Centroid> centroids;
  std::optional<LabelMap> instance_mask;
  /// instance_classes[label - 1] is the class of instance `label`.
  std::vector<int> instance_classes;

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

/// Training targets for one class. Detection-only targets leave nucleus/contour empty.
struct ClassTargets {
  Mask centroid;
  std::optional<Mask> nucleus;
  std::optional<Mask> contour;
};

struct TargetMaskSet {
  int height = 0;
  int width = 0;
  std::vector<ClassTargets> classes;

  bool has_segmentation() const;
};

struct Detection {
  double x = 0.0;
  double y = 0.0;
  int class_index = 0;
  double confidence = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct ClassMaps {
  ProbMap centroid;
  std::optional<ProbMap> seg;
  std::optional<ProbMap> contour;
};

struct PredictionMaps {
  int height = 0;
  int width = 0;
  std::vector<ClassMaps> classes;

  void validate() const;
};

enum class ViolationKind {
  out_of_bounds,
  unknown_class,
  non_contiguous_labels,
  mask_shape_mismatch,
  missing_instance_class,
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

std::string to_string(ViolationKind kind);

/// Structured list of problems; empty means the annotation is usable for `patch`.
std::vector<Violation> validate_annotation(const AnnotationSet& annotation, const ImagePatch& patch,
                                           std::size_t n_classes);

}  // namespace kongnet

#endif  // KONGNET_CORE_TYPES_HPP
