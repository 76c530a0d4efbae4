#include "kongnet/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kongnet::postprocess {

void PostprocessConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(centroid_weight)) throw std::invalid_argument("PostprocessConfig: centroid_weight must be in [0,1]");
  if (!unit(threshold)) throw std::invalid_argument("PostprocessConfig: threshold must be in [0,1]");
  if (!unit(overlap_threshold)) throw std::invalid_argument("PostprocessConfig: overlap_threshold must be in [0,1]");
  if (min_distance <= 0) throw std::invalid_argument("PostprocessConfig: min_distance must be positive");
  if (box_size <= 0) throw std::invalid_argument("PostprocessConfig: box_size must be positive");
}

PostprocessConfig PostprocessConfig::monkey() { return {0.6, 0.5, 11, 11, 0.5}; }
PostprocessConfig PostprocessConfig::puma() { return {0.6, 0.5, 11, 11, 0.5}; }
PostprocessConfig PostprocessConfig::pannuke() { return {1.0, 0.5, 9, 9, 0.5}; }
PostprocessConfig PostprocessConfig::conic() { return {1.0, 0.5, 3, 3, 0.5}; }
PostprocessConfig PostprocessConfig::midog() { return {1.0, 0.99, 21, 21, 0.5}; }

PostprocessConfig PostprocessConfig::preset(const std::string& name) {
  if (name == "monkey") return monkey();
  if (name == "puma") return puma();
  if (name == "pannuke") return pannuke();
  if (name == "conic") return conic();
  if (name == "midog") return midog();
  throw std::invalid_argument("unknown postprocess preset '" + name + "'");
}

bool ranks_before(const ScoredPoint& a, const ScoredPoint& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

ProbMap combine_maps(const ProbMap& centroid, const std::optional<ProbMap>& seg, double centroid_weight) {
  if (centroid_weight < 0.0 || centroid_weight > 1.0) {
    throw std::invalid_argument("combine_maps: weight must be in [0,1]");
  }
  if (!seg || centroid_weight == 1.0) return centroid;
  if (!seg->same_shape(centroid)) throw std::invalid_argument("combine_maps: shape mismatch");
  ProbMap out(centroid.height(), centroid.width());
  const double w2 = 1.0 - centroid_weight;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values()[i] = centroid_weight * centroid.values()[i] + w2 * seg->values()[i];
  }
  return out;
}

std::vector<ScoredPoint> peak_local_max(const ProbMap& map, double threshold, int min_distance) {
  const int h = map.height();
  const int w = map.width();
  std::vector<ScoredPoint> candidates;
  std::vector<std::uint8_t> seen(map.size(), 0);
  std::vector<std::pair<int, int>> plateau;
  std::vector<std::pair<int, int>> stack;

  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const double v = map(x0, y0);
      const std::size_t i0 = static_cast<std::size_t>(y0) * w + x0;
      if (seen[i0] || !(v > 0.0) || v < threshold) continue;

      // Flood the 8-connected plateau of value v; it is a maximum iff no neighbour is larger.
      plateau.clear();
      stack.assign(1, {x0, y0});
      seen[i0] = 1;
      bool is_max = true;
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        plateau.emplace_back(x, y);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx;
            const int ny = y + dy;
            if ((dx == 0 && dy == 0) || !map.contains(nx, ny)) continue;
            const double nv = map(nx, ny);
            if (nv > v) {
              is_max = false;
            } else if (nv == v) {
              const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
              if (!seen[ni]) {
                seen[ni] = 1;
                stack.emplace_back(nx, ny);
              }
            }
          }
        }
      }
      if (!is_max) continue;

      double mx = 0.0;
      double my = 0.0;
      for (const auto& [x, y] : plateau) {
        mx += x;
        my += y;
      }
      mx /= static_cast<double>(plateau.size());
      my /= static_cast<double>(plateau.size());
      std::pair<int, int> best = plateau.front();
      double best_d = INFINITY;
      for (const auto& [x, y] : plateau) {
        const double d = (x - mx) * (x - mx) + (y - my) * (y - my);
        if (d < best_d || (d == best_d && std::pair(y, x) < std::pair(best.second, best.first))) {
          best_d = d;
          best = {x, y};
        }
      }
      candidates.push_back({static_cast<double>(best.first), static_cast<double>(best.second), v});
    }
  }

  std::sort(candidates.begin(), candidates.end(), ranks_before);
  const double limit = static_cast<double>(min_distance) * min_distance;
  std::vector<ScoredPoint> kept;
  for (const auto& c : candidates) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](const ScoredPoint& k) {
      const double dx = c.x - k.x;
      const double dy = c.y - k.y;
      return dx * dx + dy * dy <= limit;
    });
    if (clear) kept.push_back(c);
  }
  return kept;
}

double box_iou(const ScoredPoint& a, const ScoredPoint& b, int box_size) {
  const double side = box_size;
  const double ox = std::max(0.0, side - std::abs(a.x - b.x));
  const double oy = std::max(0.0, side - std::abs(a.y - b.y));
  const double inter = ox * oy;
  return inter / (2.0 * side * side - inter);
}

std::vector<ScoredPoint> nms(std::span<const ScoredPoint> points, int box_size, double overlap_threshold) {
  std::vector<ScoredPoint> order(points.begin(), points.end());
  std::stable_sort(order.begin(), order.end(), ranks_before);
  std::vector<ScoredPoint> kept;
  for (const auto& p : order) {
    const bool clear = std::none_of(kept.begin(), kept.end(),
                                    [&](const ScoredPoint& k) { return box_iou(p, k, box_size) > overlap_threshold; });
    if (clear) kept.push_back(p);
  }
  return kept;
}

std::vector<Detection> extract_class(const ClassMaps& maps, int class_index, const PostprocessConfig& config) {
  config.validate();
  const ProbMap combined = combine_maps(maps.centroid, maps.seg, config.centroid_weight);
  const auto peaks = peak_local_max(combined, config.threshold, config.min_distance);
  std::vector<Detection> out;
  for (const auto& p : nms(peaks, config.box_size, config.overlap_threshold)) {
    out.push_back({p.x, p.y, class_index, combined(static_cast<int>(p.x), static_cast<int>(p.y))});
  }
  return out;
}

std::vector<Detection> extract_detections(const PredictionMaps& maps, std::span<const PostprocessConfig> per_class) {
  maps.validate();
  if (per_class.size() != maps.classes.size()) {
    throw std::invalid_argument("extract_detections: need one PostprocessConfig per class");
  }
  std::vector<Detection> out;
  for (std::size_t k = 0; k < maps.classes.size(); ++k) {
    auto d = extract_class(maps.classes[k], static_cast<int>(k), per_class[k]);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::vector<Detection> extract_detections(const PredictionMaps& maps, const PostprocessConfig& config) {
  const std::vector<PostprocessConfig> per_class(maps.classes.size(), config);
  return extract_detections(maps, per_class);
}

std::vector<Detection> nms_detections(std::span<const Detection> detections,
                                      std::span<const PostprocessConfig> per_class) {
  std::vector<Detection> out;
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    std::vector<ScoredPoint> points;
    for (const auto& d : detections) {
      if (d.class_index == static_cast<int>(k)) points.push_back({d.x, d.y, d.confidence});
    }
    for (const auto& p : nms(points, per_class[k].box_size, per_class[k].overlap_threshold)) {
      out.push_back({p.x, p.y, static_cast<int>(k), p.score});
    }
  }
  return out;
}

}  // namespace kongnet::postprocess
