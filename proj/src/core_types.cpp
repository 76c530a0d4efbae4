#include "kongnet/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace kongnet {

ImagePatch::ImagePatch(int height, int width, std::vector<double> pixels, double mpp, std::string id)
    : height_(height), width_(width), pixels_(std::move(pixels)), mpp_(mpp), id_(std::move(id)) {
  if (height < kMinSide || width < kMinSide) {
    throw std::invalid_argument("ImagePatch: sides must be >= 32, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (!(mpp > 0.0) || !std::isfinite(mpp)) throw std::invalid_argument("ImagePatch: mpp must be positive");
  if (pixels_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3) {
    throw std::invalid_argument("ImagePatch: pixel buffer must hold exactly H*W*3 values");
  }
}

ImagePatch::ImagePatch(int height, int width, double mpp, std::string id)
    : ImagePatch(height, width,
                 std::vector<double>(static_cast<std::size_t>(std::max(height, 0)) *
                                         static_cast<std::size_t>(std::max(width, 0)) * 3,
                                     0.0),
                 mpp, std::move(id)) {}

int ClassSpec::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

void ClassSpec::validate() const {
  if (names.empty()) throw std::invalid_argument("ClassSpec: at least one class required");
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) throw std::invalid_argument("ClassSpec: class names must be unique");
  if (dilation_diameters.size() != names.size() || match_radii.size() != names.size()) {
    throw std::invalid_argument("ClassSpec: per-class diameter and radius lists must match class count");
  }
  for (int d : dilation_diameters) {
    if (d <= 0 || d % 2 == 0) throw std::invalid_argument("ClassSpec: diameters must be odd positive integers");
  }
  for (double r : match_radii) {
    if (!(r > 0.0)) throw std::invalid_argument("ClassSpec: matching radii must be positive");
  }
}

ClassSpec ClassSpec::uniform(std::vector<std::string> names, int diameter, double radius) {
  ClassSpec spec;
  const std::size_t n = names.size();
  spec.names = std::move(names);
  spec.dilation_diameters.assign(n, diameter);
  spec.match_radii.assign(n, radius);
  spec.validate();
  return spec;
}

bool TargetMaskSet::has_segmentation() const {
  return !classes.empty() && std::all_of(classes.begin(), classes.end(), [](const ClassTargets& t) {
    return t.nucleus.has_value() && t.contour.has_value();
  });
}

void PredictionMaps::validate() const {
  auto check = [&](const ProbMap& m) {
    if (m.height() != height || m.width() != width) throw std::invalid_argument("PredictionMaps: shape mismatch");
    for (double v : m.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("PredictionMaps: value outside [0,1]");
    }
  };
  for (const auto& c : classes) {
    check(c.centroid);
    if (c.seg) check(*c.seg);
    if (c.contour) check(*c.contour);
  }
}

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::out_of_bounds: return "out of bounds";
    case ViolationKind::unknown_class: return "unknown class";
    case ViolationKind::non_contiguous_labels: return "non-contiguous labels";
    case ViolationKind::mask_shape_mismatch: return "mask shape mismatch";
    case ViolationKind::missing_instance_class: return "missing instance class";
  }
  return "unknown";
}

std::vector<Violation> validate_annotation(const AnnotationSet& annotation, const ImagePatch& patch,
                                           std::size_t n_classes) {
  std::vector<Violation> out;
  const auto n = static_cast<int>(n_classes);

  for (std::size_t i = 0; i < annotation.centroids.size(); ++i) {
    const auto& c = annotation.centroids[i];
    if (!(c.x >= 0.0 && c.x < patch.width() && c.y >= 0.0 && c.y < patch.height())) {
      std::ostringstream msg;
      msg << "centroid " << i << " at (" << c.x << ", " << c.y << ") outside " << patch.width() << "x"
          << patch.height();
      out.push_back({ViolationKind::out_of_bounds, msg.str()});
    }
    if (c.class_index < 0 || c.class_index >= n) {
      out.push_back({ViolationKind::unknown_class,
                     "centroid " + std::to_string(i) + " has class index " + std::to_string(c.class_index)});
    }
  }

  if (annotation.instance_mask) {
    const auto& mask = *annotation.instance_mask;
    if (mask.height() != patch.height() || mask.width() != patch.width()) {
      out.push_back({ViolationKind::mask_shape_mismatch, "instance mask does not match patch dimensions"});
      return out;
    }
    std::set<std::int32_t> labels;
    for (auto v : mask.values()) {
      if (v != 0) labels.insert(v);
    }
    if (!labels.empty()) {
      const bool contiguous = *labels.begin() == 1 && *labels.rbegin() == static_cast<std::int32_t>(labels.size());
      if (!contiguous) {
        std::ostringstream msg;
        msg << "instance labels {";
        bool first = true;
        for (auto l : labels) {
          msg << (first ? "" : ",") << l;
          first = false;
        }
        msg << "} are not 1..N";
        out.push_back({ViolationKind::non_contiguous_labels, msg.str()});
      }
      const auto max_label = static_cast<std::size_t>(*labels.rbegin());
      if (max_label > 0 && annotation.instance_classes.size() < max_label) {
        out.push_back({ViolationKind::missing_instance_class,
                       "instance mask has " + std::to_string(max_label) + " labels but only " +
                           std::to_string(annotation.instance_classes.size()) + " instance classes"});
      }
    }
    for (std::size_t i = 0; i < annotation.instance_classes.size(); ++i) {
      const int k = annotation.instance_classes[i];
      if (k < 0 || k >= n) {
        out.push_back({ViolationKind::unknown_class,
                       "instance " + std::to_string(i + 1) + " has class index " + std::to_string(k)});
      }
    }
  }
  return out;
}

}  // namespace kongnet
