#ifndef KONGNET_AUGMENT_HPP
#define KONGNET_AUGMENT_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kongnet/core_types.hpp"

namespace kongnet::augment {

/// Element of the dihedral group: horizontal flip, then vertical flip, then `rotations` quarter turns
/// counter-clockwise (np.rot90 direction).
struct D4 {
  int rotations = 0;
  bool hflip = false;
  bool vflip = false;

  friend bool operator==(const D4&, const D4&) = default;
};

template <typename T>
Grid<T> hflip(const Grid<T>& g) {
  Grid<T> out(g.height(), g.width());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) out(x, y) = g(g.width() - 1 - x, y);
  return out;
}

template <typename T>
Grid<T> vflip(const Grid<T>& g) {
  Grid<T> out(g.height(), g.width());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) out(x, y) = g(x, g.height() - 1 - y);
  return out;
}

/// One counter-clockwise quarter turn; the output is W x H.
template <typename T>
Grid<T> rot90(const Grid<T>& g) {
  Grid<T> out(g.width(), g.height());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out(x, y) = g(g.width() - 1 - y, x);
  return out;
}

template <typename T>
Grid<T> apply(const Grid<T>& g, const D4& t) {
  Grid<T> out = g;
  if (t.hflip) out = hflip(out);
  if (t.vflip) out = vflip(out);
  for (int i = 0; i < ((t.rotations % 4) + 4) % 4; ++i) out = rot90(out);
  return out;
}

template <typename T>
Grid<T> apply_inverse(const Grid<T>& g, const D4& t) {
  Grid<T> out = g;
  for (int i = 0; i < (4 - ((t.rotations % 4) + 4) % 4) % 4; ++i) out = rot90(out);
  if (t.vflip) out = vflip(out);
  if (t.hflip) out = hflip(out);
  return out;
}

ImagePatch apply(const ImagePatch& patch, const D4& t);
/// Maps a pixel coordinate of the source into the transformed frame.
std::pair<int, int> apply_point(int x, int y, int height, int width, const D4& t);

/// Names: hflip, vflip, rot90, rgb_shift, hsv_shift, blur, sharpen, compression, brightness_contrast,
/// shift_scale_rotate. Geometric ones move targets with the image; the rest touch pixels only.
/// Photometric magnitudes are relative to the patch's maximum pixel value.
const std::vector<std::string>& known_augmentations();

struct TrainingSample {
  ImagePatch image;
  TargetMaskSet targets;
};

class Augmenter {
 public:
  /// Unknown names throw std::invalid_argument. Each enabled transform fires with `probability`.
  explicit Augmenter(std::vector<std::string> enabled, double probability = 0.5);

  const std::vector<std::string>& enabled() const { return enabled_; }
  void apply(TrainingSample& sample, std::mt19937_64& rng) const;

 private:
  std::vector<std::string> enabled_;
  double probability_;
};

}  // namespace kongnet::augment

#endif  // KONGNET_AUGMENT_HPP
