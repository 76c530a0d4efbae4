#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "kongnet/loss.hpp"
#include "kongnet/testkit.hpp"

using namespace kongnet;
using namespace kongnet::loss;

namespace {

using Vec = std::vector<double>;

Vec random_probs(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec v(n);
  for (double& x : v) x = u(rng);
  return v;
}

Vec random_binary(std::mt19937_64& rng, std::size_t n) {
  Vec v(n);
  for (double& x : v) x = static_cast<double>(rng() & 1u);
  return v;
}

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)}); }

// Central differences of f at p against the analytic gradient from `fill`.
void check_grad(const Vec& p0, const std::function<double(const Vec&)>& f,
                const std::function<void(const Vec&, std::span<double>)>& fill) {
  Vec analytic(p0.size(), 0.0);
  fill(p0, analytic);
  const double h = 1e-6;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    Vec p = p0;
    p[i] += h;
    const double up = f(p);
    p[i] -= 2 * h;
    const double down = f(p);
    const double numeric = (up - down) / (2 * h);
    CHECK(std::abs(numeric - analytic[i]) <= 1e-3 * std::max(1e-4, std::abs(numeric) + std::abs(analytic[i])));
  }
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("bce fixtures") {
    const Vec g{1, 0, 1, 0};
    CHECK(bce(g, g) <= 1e-6);
    CHECK(bce(Vec(4, 0.5), g) == doctest::Approx(std::log(2.0)));
    CHECK(bce(Vec{0.9}, Vec{1.0}) == doctest::Approx(-std::log(0.9)));
    CHECK_THROWS(bce(Vec{0.5, 0.5}, Vec{1.0}));
  }

  TEST_CASE("dice fixtures") {
    CHECK(dice_loss(Vec(4, 1.0), Vec(4, 1.0), 1.0) == 0.0);
    CHECK(dice_loss(Vec(4, 0.0), Vec(4, 0.0), 1.0) == 0.0);
    CHECK(dice_loss(Vec{1, 1, 0, 0}, Vec{0, 0, 1, 1}, 1.0) == doctest::Approx(0.8));
  }

  TEST_CASE("jaccard fixtures") {
    const Vec g{1, 0, 1, 0};
    CHECK(jaccard_loss(g, g, 1.0) == 0.0);
    CHECK(jaccard_loss(Vec{1, 1, 0, 0}, Vec{0, 0, 1, 1}, 1.0) == doctest::Approx(0.8));
    CHECK(jaccard_loss(Vec{0.5, 0, 0.5, 0}, g, 1e-300) == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("focal fixtures") {
    CHECK(focal_loss(Vec{0.5}, Vec{1.0}, 0.25, 2.0) == doctest::Approx(0.25 * 0.25 * std::log(2.0)));
    CHECK(focal_loss(Vec{1.0}, Vec{1.0}, 0.25, 2.0) <= 1e-9);
  }

  TEST_CASE("focal with gamma 0 is alpha-weighted bce") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      const Vec p = random_probs(rng, 64);
      const Vec g = random_binary(rng, 64);
      Vec pos, neg;
      for (std::size_t i = 0; i < p.size(); ++i) (g[i] > 0.5 ? pos : neg).push_back(p[i]);
      double expected = 0.0;
      if (!pos.empty()) expected += 0.25 * bce(pos, Vec(pos.size(), 1.0)) * static_cast<double>(pos.size());
      if (!neg.empty()) expected += 0.75 * bce(neg, Vec(neg.size(), 0.0)) * static_cast<double>(neg.size());
      expected /= static_cast<double>(p.size());
      CHECK(close_rel(focal_loss(p, g, 0.25, 0.0), expected, 1e-9));
    }
  }

  TEST_CASE("components match the summation oracle") {
    std::mt19937_64 rng(1);
    LossConfig cfg;
    for (int trial = 0; trial < 1000; ++trial) {
      const Vec p = random_probs(rng, 64);
      const Vec g = random_binary(rng, 64);
      const auto o = testkit::oracle_scalar_losses(p, g);
      CHECK(close_rel(bce(p, g), o.bce, 1e-9));
      CHECK(close_rel(dice_loss(p, g, 1.0), o.dice, 1e-9));
      CHECK(close_rel(jaccard_loss(p, g, 1.0), o.jaccard, 1e-9));
      CHECK(close_rel(focal_loss(p, g, 0.25, 2.0), o.focal, 1e-9));
      CHECK(close_rel(centroid_loss(p, g, cfg), o.centroid, 1e-9));
    }
  }

  TEST_CASE("losses are finite and nonnegative at the extremes") {
    const Vec zeros(16, 0.0), ones(16, 1.0);
    LossConfig cfg;
    for (const Vec* p : {&zeros, &ones})
      for (const Vec* g : {&zeros, &ones}) {
        for (double v : {bce(*p, *g), dice_loss(*p, *g, 1.0), jaccard_loss(*p, *g, 1.0), focal_loss(*p, *g, 0.25, 2.0),
                         centroid_loss(*p, *g, cfg)}) {
          CHECK(std::isfinite(v));
          CHECK(v >= 0.0);
        }
      }
  }

  TEST_CASE("centroid loss decreases along the path from 0.5 g to g") {
    std::mt19937_64 rng(4);
    const Vec g = random_binary(rng, 64);
    LossConfig cfg;
    double prev = INFINITY;
    for (int s = 0; s <= 20; ++s) {
      const double t = 0.5 + 0.5 * s / 20.0;
      Vec p(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) p[i] = t * g[i];
      const double v = centroid_loss(p, g, cfg);
      CHECK(v < prev);
      prev = v;
    }
  }

  TEST_CASE("per-map gradients match finite differences") {
    std::mt19937_64 rng(6);
    LossConfig cfg;
    for (int trial = 0; trial < 5; ++trial) {
      Vec p = random_probs(rng, 64);
      for (double& x : p) x = 0.02 + 0.96 * x;
      const Vec g = random_binary(rng, 64);
      check_grad(p, [&](const Vec& q) { return bce(q, g); }, [&](const Vec& q, std::span<double> d) { bce(q, g, 1e-7, d); });
      check_grad(p, [&](const Vec& q) { return dice_loss(q, g, 1.0); },
                 [&](const Vec& q, std::span<double> d) { dice_loss(q, g, 1.0, d); });
      check_grad(p, [&](const Vec& q) { return jaccard_loss(q, g, 1.0); },
                 [&](const Vec& q, std::span<double> d) { jaccard_loss(q, g, 1.0, d); });
      check_grad(p, [&](const Vec& q) { return focal_loss(q, g, 0.25, 2.0); },
                 [&](const Vec& q, std::span<double> d) { focal_loss(q, g, 0.25, 2.0, 1e-7, d); });
      check_grad(p, [&](const Vec& q) { return centroid_loss(q, g, cfg); },
                 [&](const Vec& q, std::span<double> d) { centroid_loss(q, g, cfg, d); });
      const Vec other = random_probs(rng, 64);
      check_grad(
          p,
          [&](const Vec& q) {
            const std::vector<std::span<const double>> maps{q, other};
            return interclass_exclusion(maps);
          },
          [&](const Vec& q, std::span<double> d) {
            const std::vector<std::span<const double>> maps{q, other};
            Vec unused(other.size(), 0.0);
            const std::vector<std::span<double>> grads{d, unused};
            interclass_exclusion(maps, grads);
          });
    }
  }

  TEST_CASE("class loss composition") {
    std::mt19937_64 rng(8);
    LossConfig cfg;
    const Vec g = random_binary(rng, 64);
    const Vec perfect = g;
    const ClassTargetValues t{g, g, g};
    CHECK(class_loss({perfect, perfect, perfect}, t, TaskMode::multitask, cfg).total <= 1e-5);

    // The same error placed on seg or on contour.
    Vec wrong = g;
    for (std::size_t i = 0; i < 8; ++i) wrong[i] = 1.0 - g[i];
    const auto on_seg = class_loss({perfect, wrong, perfect}, t, TaskMode::multitask, cfg);
    const auto on_contour = class_loss({perfect, perfect, wrong}, t, TaskMode::multitask, cfg);
    const double base = class_loss({perfect, perfect, perfect}, t, TaskMode::multitask, cfg).total;
    CHECK(on_contour.total - base == doctest::Approx(0.5 * (on_seg.total - base)).epsilon(1e-9));

    const Vec p = random_probs(rng, 64);
    const auto det = class_loss({p, {}, {}}, {g, {}, {}}, TaskMode::detection_only, cfg);
    CHECK(det.total == centroid_loss(p, g, cfg));
    CHECK(class_loss({p, wrong, wrong}, t, TaskMode::detection_only, cfg).total == det.total);
    CHECK_THROWS(class_loss({p, {}, {}}, t, TaskMode::multitask, cfg));
  }

  TEST_CASE("interclass exclusion") {
    const Vec zero(16, 0.0), one(16, 1.0), half(16, 0.5);
    std::vector<std::span<const double>> maps{zero, one};
    CHECK(interclass_exclusion(maps) == 0.0);
    maps = {one, one};
    CHECK(interclass_exclusion(maps) == 1.0);
    maps = {half, half};
    CHECK(interclass_exclusion(maps) == 0.25);
    maps = {half};
    CHECK(interclass_exclusion(maps) == 0.0);

    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const Vec a = random_probs(rng, 16), b = random_probs(rng, 16), c = random_probs(rng, 16);
      const std::vector<std::span<const double>> abc{a, b, c}, cab{c, a, b};
      CHECK(interclass_exclusion(abc) == doctest::Approx(interclass_exclusion(cab)));
      CHECK(interclass_exclusion(abc) == doctest::Approx(testkit::oracle_interclass({a, b, c})));
      Vec a2 = a;
      a2[rng() % 16] = 1.0;
      const std::vector<std::span<const double>> raised{a2, b, c};
      CHECK(interclass_exclusion(raised) >= interclass_exclusion(abc));
    }
  }

  TEST_CASE("total loss strategies") {
    const Vec losses{0.7, 1.3, 0.2};
    const auto fixed = total_loss(losses, 0.1, Weighting::fixed_equal);
    CHECK(fixed.value == doctest::Approx(2.3));
    const Vec one{0.7};
    CHECK(total_loss(one, 0.0, Weighting::fixed_equal).value == 0.7);

    const Vec zeros(3, 0.0);
    CHECK(total_loss(losses, 0.1, Weighting::uncertainty, zeros).value == doctest::Approx(fixed.value));

    const Vec s{0.3, -0.4, 1.1};
    const auto u = total_loss(losses, 0.1, Weighting::uncertainty, s);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(u.log_var_grad[k] == doctest::Approx(-std::exp(-s[k]) * losses[k] + 1.0));
      Vec up = s, down = s;
      up[k] += 1e-6;
      down[k] -= 1e-6;
      const double fd = (total_loss(losses, 0.1, Weighting::uncertainty, up).value -
                         total_loss(losses, 0.1, Weighting::uncertainty, down).value) /
                        2e-6;
      CHECK(std::abs(fd - u.log_var_grad[k]) <= 1e-3 * std::abs(fd));
      CHECK(u.class_scale[k] == doctest::Approx(std::exp(-s[k])));
    }
    const Vec bad{0.1, NAN};
    CHECK_THROWS_AS(total_loss(bad, 0.0, Weighting::fixed_equal), LossError);
  }

  TEST_CASE("permuting classes permutes class losses") {
    std::mt19937_64 rng(14);
    LossConfig cfg;
    PredictionMaps pred{8, 8, {}};
    TargetMaskSet tgt{8, 8, {}};
    for (int k = 0; k < 3; ++k) {
      ClassMaps m;
      m.centroid = ProbMap(8, 8);
      m.seg = ProbMap(8, 8);
      m.contour = ProbMap(8, 8);
      for (auto* map : {&m.centroid, &*m.seg, &*m.contour})
        for (double& v : map->values()) v = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
      pred.classes.push_back(m);
      ClassTargets t;
      t.centroid = Mask(8, 8);
      t.nucleus = Mask(8, 8);
      t.contour = Mask(8, 8);
      for (auto* mask : {&t.centroid, &*t.nucleus, &*t.contour})
        for (auto& v : mask->values()) v = static_cast<std::uint8_t>(rng() & 1u);
      tgt.classes.push_back(t);
    }
    const auto a = compute_loss(pred, tgt, cfg, 3);
    std::swap(pred.classes[0], pred.classes[2]);
    std::swap(tgt.classes[0], tgt.classes[2]);
    const auto b = compute_loss(pred, tgt, cfg, 3);
    CHECK(a.classes[0].total == b.classes[2].total);
    CHECK(a.classes[1].total == b.classes[1].total);
    CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
  }

  TEST_CASE("config validation") {
    LossConfig c;
    CHECK_NOTHROW(c.validate());
    c.epsilon = 0.0;
    CHECK_THROWS(c.validate());
    c = LossConfig{};
    c.alpha = 1.0;
    CHECK_THROWS(c.validate());
    CHECK(weighting_from_string(to_string(Weighting::uncertainty)) == Weighting::uncertainty);
  }
}
