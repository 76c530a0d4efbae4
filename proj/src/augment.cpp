#include "kongnet/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace kongnet::augment {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

ProbMap channel(const ImagePatch& p, int c) {
  ProbMap m(p.height(), p.width());
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x) m(x, y) = p.at(x, y, c);
  return m;
}

ImagePatch merge(const std::array<ProbMap, 3>& ch, const ImagePatch& like) {
  ImagePatch out(ch[0].height(), ch[0].width(), like.mpp(), like.id());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(x, y, c) = ch[static_cast<std::size_t>(c)](x, y);
  return out;
}

template <typename F>
void for_each_mask(TargetMaskSet& t, F&& f) {
  for (auto& cls : t.classes) {
    cls.centroid = f(cls.centroid);
    if (cls.nucleus) cls.nucleus = f(*cls.nucleus);
    if (cls.contour) cls.contour = f(*cls.contour);
  }
  if (!t.classes.empty()) {
    t.height = t.classes.front().centroid.height();
    t.width = t.classes.front().centroid.width();
  }
}

double max_value(const ImagePatch& p) {
  double m = 0.0;
  for (double v : p.pixels()) m = std::max(m, v);
  return m;
}

ImagePatch box_blur(const ImagePatch& p) {
  ImagePatch out = p;
  for (int y = 0; y < p.height(); ++y) {
    for (int x = 0; x < p.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            s += p.at(std::clamp(x + dx, 0, p.width() - 1), std::clamp(y + dy, 0, p.height() - 1), c);
        out.at(x, y, c) = s / 9.0;
      }
    }
  }
  return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d + 6.0, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

// Inverse-mapped nearest-neighbour affine warp about the patch centre.
struct Affine {
  double dx, dy, scale, angle;

  std::pair<int, int> source(int x, int y, int h, int w) const {
    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;
    const double u = x - cx - dx;
    const double v = y - cy - dy;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {static_cast<int>(std::lround((c * u + s * v) / scale + cx)),
            static_cast<int>(std::lround((-s * u + c * v) / scale + cy))};
  }
};

}  // namespace

ImagePatch apply(const ImagePatch& patch, const D4& t) {
  return merge({apply(channel(patch, 0), t), apply(channel(patch, 1), t), apply(channel(patch, 2), t)}, patch);
}

std::pair<int, int> apply_point(int x, int y, int height, int width, const D4& t) {
  if (t.hflip) x = width - 1 - x;
  if (t.vflip) y = height - 1 - y;
  for (int i = 0; i < ((t.rotations % 4) + 4) % 4; ++i) {
    // rot90: out(x', y') = in(W-1-y', x')  =>  x' = y, y' = W-1-x
    const int nx = y;
    const int ny = width - 1 - x;
    x = nx;
    y = ny;
    std::swap(height, width);
  }
  return {x, y};
}

const std::vector<std::string>& known_augmentations() {
  static const std::vector<std::string> names{"hflip", "vflip", "rot90", "rgb_shift", "hsv_shift", "blur",
                                              "sharpen", "compression", "brightness_contrast",
                                              "shift_scale_rotate"};
  return names;
}

Augmenter::Augmenter(std::vector<std::string> enabled, double probability)
    : enabled_(std::move(enabled)), probability_(probability) {
  const auto& known = known_augmentations();
  for (const auto& name : enabled_) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw std::invalid_argument("unknown augmentation '" + name + "'");
    }
  }
  if (probability < 0.0 || probability > 1.0) throw std::invalid_argument("augmentation probability must be in [0,1]");
}

void Augmenter::apply(TrainingSample& s, std::mt19937_64& rng) const {
  for (const auto& name : enabled_) {
    if (unit(rng) >= probability_) continue;
    ImagePatch& im = s.image;
    const double top = max_value(im);

    if (name == "hflip" || name == "vflip" || name == "rot90") {
      D4 t;
      t.hflip = name == "hflip";
      t.vflip = name == "vflip";
      t.rotations = name == "rot90" ? 1 + static_cast<int>(rng() % 3) : 0;
      im = augment::apply(im, t);
      for_each_mask(s.targets, [&](const Mask& m) { return augment::apply(m, t); });
    } else if (name == "rgb_shift") {
      for (int c = 0; c < 3; ++c) {
        const double shift = uniform(rng, -0.05, 0.05) * top;
        for (int y = 0; y < im.height(); ++y)
          for (int x = 0; x < im.width(); ++x) im.at(x, y, c) = std::clamp(im.at(x, y, c) + shift, 0.0, top);
      }
    } else if (name == "hsv_shift") {
      if (top <= 0.0) continue;
      const double dh = uniform(rng, -0.02, 0.02);
      const double ks = uniform(rng, 0.9, 1.1);
      const double kv = uniform(rng, 0.9, 1.1);
      for (int y = 0; y < im.height(); ++y) {
        for (int x = 0; x < im.width(); ++x) {
          double h, sat, v, r, g, b;
          rgb_to_hsv(im.at(x, y, 0) / top, im.at(x, y, 1) / top, im.at(x, y, 2) / top, h, sat, v);
          hsv_to_rgb(h + dh, std::clamp(sat * ks, 0.0, 1.0), std::clamp(v * kv, 0.0, 1.0), r, g, b);
          im.at(x, y, 0) = r * top;
          im.at(x, y, 1) = g * top;
          im.at(x, y, 2) = b * top;
        }
      }
    } else if (name == "blur") {
      im = box_blur(im);
    } else if (name == "sharpen") {
      const ImagePatch soft = box_blur(im);
      const double amount = uniform(rng, 0.2, 0.6);
      for (std::size_t i = 0; i < im.pixels().size(); ++i) {
        const double v = im.pixels()[i];
        im.pixels()[i] = std::clamp(v + amount * (v - soft.pixels()[i]), 0.0, top);
      }
    } else if (name == "compression") {
      // Quantisation stands in for lossy-codec artefacts.
      if (top <= 0.0) continue;
      const double levels = std::floor(uniform(rng, 16.0, 64.0));
      for (double& v : im.pixels()) v = std::round(v / top * levels) / levels * top;
    } else if (name == "brightness_contrast") {
      const double brightness = uniform(rng, -0.1, 0.1) * top;
      const double contrast = uniform(rng, 0.85, 1.15);
      double mean = 0.0;
      for (double v : im.pixels()) mean += v;
      mean /= static_cast<double>(im.pixels().size());
      for (double& v : im.pixels()) v = std::clamp((v - mean) * contrast + mean + brightness, 0.0, top);
    } else if (name == "shift_scale_rotate") {
      const Affine a{uniform(rng, -0.0625, 0.0625) * im.width(), uniform(rng, -0.0625, 0.0625) * im.height(),
                     uniform(rng, 0.9, 1.1), uniform(rng, -std::numbers::pi / 12, std::numbers::pi / 12)};
      const int h = im.height();
      const int w = im.width();
      ImagePatch out(h, w, im.mpp(), im.id());
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          auto [sx, sy] = a.source(x, y, h, w);
          sx = std::clamp(sx, 0, w - 1);
          sy = std::clamp(sy, 0, h - 1);
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = im.at(sx, sy, c);
        }
      }
      im = std::move(out);
      for_each_mask(s.targets, [&](const Mask& m) {
        Mask o(h, w);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const auto [sx, sy] = a.source(x, y, h, w);
            if (m.contains(sx, sy)) o(x, y) = m(sx, sy);
          }
        }
        return o;
      });
    }
  }
}

}  // namespace kongnet::augment
