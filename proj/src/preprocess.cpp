#include "kongnet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace kongnet::preprocess {

DilationKernel::DilationKernel(int diameter) : diameter_(diameter) {
  if (diameter <= 0 || diameter % 2 == 0) throw std::invalid_argument("DilationKernel: diameter must be odd and positive");
  const int r = diameter / 2;
  // (dx^2 + dy^2) <= (d/2)^2  <=>  4 (dx^2 + dy^2) <= d^2, kept in integers.
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (4 * (dx * dx + dy * dy) <= diameter * diameter) offsets_.emplace_back(dx, dy);
    }
  }
}

int default_dilation_diameter(double mpp) {
  if (mpp >= 0.4 && mpp <= 0.6) return 5;
  if (mpp >= 0.2 && mpp <= 0.3) return 11;
  throw std::out_of_range("no default dilation diameter for mpp " + std::to_string(mpp));
}

std::vector<InstanceCentroid> centroid_from_instance(const LabelMap& instances) {
  struct Acc {
    double sx = 0.0, sy = 0.0;
    long long n = 0;
  };
  std::map<int, Acc> acc;
  for (int y = 0; y < instances.height(); ++y) {
    for (int x = 0; x < instances.width(); ++x) {
      const int label = instances(x, y);
      if (label <= 0) continue;
      auto& a = acc[label];
      a.sx += x;
      a.sy += y;
      ++a.n;
    }
  }
  std::vector<InstanceCentroid> out;
  out.reserve(acc.size());
  for (const auto& [label, a] : acc) {
    const double n = static_cast<double>(a.n);
    out.push_back({static_cast<int>(std::lround(a.sx / n)), static_cast<int>(std::lround(a.sy / n)), label});
  }
  return out;
}

Mask contour_from_instance(const LabelMap& instances) {
  const int h = instances.height();
  const int w = instances.width();
  Mask out(h, w, 0);
  auto at = [&](int x, int y) -> long long {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return instances(x, y);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const long long gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                           (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
      const long long gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                           (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
      const double edge = static_cast<double>(gx) * static_cast<double>(gx) +
                          static_cast<double>(gy) * static_cast<double>(gy);
      out(x, y) = edge > 0.0 ? 1 : 0;
    }
  }
  return out;
}

Mask dilate_centroids(std::span<const Centroid> points, const DilationKernel& kernel, int height, int width) {
  Mask out(height, width, 0);
  for (const auto& p : points) {
    const int cx = static_cast<int>(std::lround(p.x));
    const int cy = static_cast<int>(std::lround(p.y));
    for (const auto& [dx, dy] : kernel.offsets()) {
      const int x = cx + dx;
      const int y = cy + dy;
      if (out.contains(x, y)) out(x, y) = 1;
    }
  }
  return out;
}

TargetMaskSet build_target_set(const AnnotationSet& annotation, const ClassSpec& classes, int height, int width,
                               TargetMode mode) {
  if (mode == TargetMode::multitask && !annotation.instance_mask) {
    throw TargetError(
        "segmentation/contour targets requested but the annotation has no instance mask; "
        "generate instance masks externally first");
  }
  const auto n_classes = classes.size();
  const LabelMap* mask = annotation.instance_mask ? &*annotation.instance_mask : nullptr;
  if (mask && (mask->height() != height || mask->width() != width)) {
    throw TargetError("instance mask shape differs from target shape");
  }

  auto instance_class = [&](int label) -> int {
    const auto idx = static_cast<std::size_t>(label - 1);
    if (label <= 0 || idx >= annotation.instance_classes.size()) {
      throw TargetError("instance " + std::to_string(label) + " has no class");
    }
    return annotation.instance_classes[idx];
  };

  std::vector<Centroid> points = annotation.centroids;
  if (points.empty() && mask) {
    for (const auto& c : centroid_from_instance(*mask)) {
      points.push_back({static_cast<double>(c.x), static_cast<double>(c.y), instance_class(c.label)});
    }
  }

  TargetMaskSet out;
  out.height = height;
  out.width = width;
  out.classes.resize(n_classes);

  const Mask contour_all = mode == TargetMode::multitask ? contour_from_instance(*mask) : Mask{};

  for (std::size_t k = 0; k < n_classes; ++k) {
    std::vector<Centroid> class_points;
    for (const auto& p : points) {
      if (p.class_index == static_cast<int>(k)) class_points.push_back(p);
    }
    auto& t = out.classes[k];
    t.centroid = dilate_centroids(class_points, DilationKernel(classes.dilation_diameters[k]), height, width);
    if (mode == TargetMode::multitask) {
      Mask nucleus(height, width, 0);
      Mask contour(height, width, 0);
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          const int label = (*mask)(x, y);
          if (label > 0 && instance_class(label) == static_cast<int>(k)) {
            nucleus(x, y) = 1;
            contour(x, y) = contour_all(x, y);
          }
        }
      }
      t.nucleus = std::move(nucleus);
      t.contour = std::move(contour);
    }
  }
  return out;
}

void append_overall_target(TargetMaskSet& targets) {
  if (targets.classes.empty()) throw std::invalid_argument("append_overall_target: no classes");
  ClassTargets overall;
  const bool seg = targets.has_segmentation();
  overall.centroid = Mask(targets.height, targets.width, 0);
  if (seg) {
    overall.nucleus = Mask(targets.height, targets.width, 0);
    overall.contour = Mask(targets.height, targets.width, 0);
  }
  for (const auto& t : targets.classes) {
    for (std::size_t i = 0; i < t.centroid.size(); ++i) {
      overall.centroid.values()[i] |= t.centroid.values()[i];
      if (seg) {
        overall.nucleus->values()[i] |= t.nucleus->values()[i];
        overall.contour->values()[i] |= t.contour->values()[i];
      }
    }
  }
  targets.classes.push_back(std::move(overall));
}

}  // namespace kongnet::preprocess
