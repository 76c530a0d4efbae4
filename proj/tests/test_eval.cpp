#include <cmath>
#include <random>

#include "doctest.h"
#include "kongnet/eval.hpp"
#include "kongnet/testkit.hpp"

using namespace kongnet;
using namespace kongnet::eval;

namespace {

MatchResult counts(std::size_t tp, std::size_t fp, std::size_t fn) { return MatchResult{tp, fp, fn, {}}; }

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("matching fixtures") {
    const std::vector<Centroid> g{{10, 10, 0}};
    const std::vector<Detection> exact{{10, 10, 0, 0.9}};
    auto r = match_points(exact, g, 6);
    CHECK(r.tp == 1);
    CHECK(r.fp == 0);
    CHECK(r.fn == 0);

    const std::vector<Detection> far{{16.001, 10, 0, 0.9}};
    r = match_points(far, g, 6);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    const std::vector<Detection> edge{{16, 10, 0, 0.9}};
    CHECK(match_points(edge, g, 6).tp == 1);

    const std::vector<Detection> two{{11, 10, 0, 0.3}, {12, 10, 0, 0.8}};
    r = match_points(two, g, 6);
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].pred == 1);
    CHECK(r.tp == testkit::oracle_match(two, g, 6));
    CHECK_THROWS(match_points(two, g, 0));
  }

  TEST_CASE("greedy matching against the exhaustive oracle") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> pos(0.0, 30.0), conf(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<Detection> p;
      std::vector<Centroid> g;
      const int np = static_cast<int>(rng() % 7), ng = static_cast<int>(rng() % 7);
      for (int i = 0; i < np; ++i) p.push_back({pos(rng), pos(rng), 0, conf(rng)});
      for (int i = 0; i < ng; ++i) g.push_back({pos(rng), pos(rng), 0});
      const auto r = match_points(p, g, 6);
      const std::size_t best = testkit::oracle_match(p, g, 6);
      CHECK(r.tp <= best);
      CHECK(2 * r.tp >= best);
      CHECK(r.tp + r.fp == p.size());
      CHECK(r.tp + r.fn == g.size());
      // Relabelling gt order keeps the counts.
      std::vector<Centroid> rev(g.rbegin(), g.rend());
      CHECK(match_points(p, rev, 6).tp == r.tp);
      // Uniform scaling of coordinates and radius.
      auto p2 = p;
      auto g2 = g;
      for (auto& d : p2) d.x *= 4, d.y *= 4;
      for (auto& c : g2) c.x *= 4, c.y *= 4;
      CHECK(match_points(p2, g2, 24).tp == r.tp);
    }
    // Well-separated ground truth: greedy is optimal.
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Centroid> g;
      for (int i = 0; i < 6; ++i) g.push_back({20.0 * i, 0, 0});
      std::vector<Detection> p;
      for (int i = 0; i < 6; ++i) {
        const auto& c = g[rng() % 6];
        p.push_back({c.x + pos(rng) / 6 - 2.5, c.y + pos(rng) / 6 - 2.5, 0, conf(rng)});
      }
      CHECK(match_points(p, g, 6).tp == testkit::oracle_match(p, g, 6));
    }
  }

  TEST_CASE("f1 from counts") {
    CHECK(f1_from_counts(1, 0, 0).f1 == 1.0);
    CHECK(f1_from_counts(0, 2, 1).f1 == 0.0);
    CHECK(f1_from_counts(1, 1, 0).f1 == doctest::Approx(2.0 / 3.0));
    CHECK(f1_from_counts(0, 0, 0).f1 == 0.0);
  }

  TEST_CASE("pooled and per-image f1") {
    const std::vector<MatchResult> one{counts(3, 1, 2)};
    CHECK(f1_global(one).f1 == f1_from_counts(3, 1, 2).f1);
    CHECK(f1_per_image_avg(one) == f1_from_counts(3, 1, 2).f1);

    const std::vector<MatchResult> pool{counts(1, 0, 0), counts(0, 1, 1)};
    CHECK(f1_global(pool).f1 == doctest::Approx(0.5));
    CHECK(f1_per_image_avg(pool) == doctest::Approx(0.5));
    CHECK(f1_global(std::vector<MatchResult>{}).f1 == 0.0);

    const std::vector<MatchResult> differ{counts(1, 1, 0), counts(0, 0, 1)};
    CHECK(f1_global(differ).f1 == doctest::Approx(0.5));
    CHECK(f1_per_image_avg(differ) == doctest::Approx(1.0 / 3.0));

    const std::vector<MatchResult> with_empty{counts(1, 0, 0), counts(0, 0, 0)};
    CHECK(f1_per_image_avg(with_empty) == 1.0);
  }

  TEST_CASE("pannuke scores against a hand-built table") {
    // Pairs (gt, pred): (0,0), (1,1), (0,1); one unmatched prediction and one unmatched gt.
    const std::vector<Centroid> g{{0, 0, 0}, {20, 0, 1}, {40, 0, 0}, {80, 0, 1}};
    const std::vector<Detection> p{{0, 0, 0, 0.9}, {20, 0, 1, 0.8}, {40, 0, 1, 0.7}, {60, 0, 0, 0.6}};
    const auto m = match_points(p, g, 6);
    CHECK(m.tp == 3);
    CHECK(m.fp == 1);
    CHECK(m.fn == 1);
    const auto conf = classification_confusion(m, p, g, 2);
    REQUIRE(conf.size() == 2);
    CHECK(conf[0].tp == 1);
    CHECK(conf[0].tn == 1);
    CHECK(conf[0].fp == 0);
    CHECK(conf[0].fn == 1);
    CHECK(conf[1].tp == 1);
    CHECK(conf[1].tn == 1);
    CHECK(conf[1].fp == 1);
    CHECK(conf[1].fn == 0);
    const auto s = pannuke_f1(m, conf);
    CHECK(s.detection.f1 == doctest::Approx(0.75));
    CHECK(s.classes[0].f1 == doctest::Approx(0.5));
    CHECK(s.classes[0].precision == doctest::Approx(2.0 / 3.0));
    CHECK(s.classes[0].recall == doctest::Approx(0.4));
    CHECK(s.classes[1].precision == doctest::Approx(0.4));
    CHECK(s.classes[1].recall == doctest::Approx(2.0 / 3.0));

    const std::vector<Detection> perfect{{0, 0, 0, 1.0}};
    const std::vector<Centroid> single{{0, 0, 0}};
    const auto pm = match_points(perfect, single, 6);
    const auto ps = pannuke_f1(pm, classification_confusion(pm, perfect, single, 1));
    CHECK(ps.detection.f1 == 1.0);
    CHECK(ps.classes[0].f1 == 1.0);

    const std::vector<Detection> extra{{0, 0, 0, 1.0}, {50, 50, 0, 0.5}};
    CHECK(pannuke_f1(match_points(extra, single, 6), {}).detection.f1 == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("interpolation conventions") {
    const std::vector<double> xs{0, 1, 1, 3}, ys{0, 0, 1, 2};
    CHECK(interpolate(xs, ys, -1) == 0.0);
    CHECK(interpolate(xs, ys, 0.5) == 0.0);
    CHECK(interpolate(xs, ys, 1) == 1.0);
    CHECK(interpolate(xs, ys, 2) == 1.5);
    CHECK(interpolate(xs, ys, 9) == 2.0);
  }

  TEST_CASE("froc fixtures") {
    const std::vector<Centroid> g{{10, 10, 0}};
    const std::vector<Detection> tp{{10, 10, 0, 1.0}};
    CHECK(froc(tp, g, 3, 0.5, 1.0).score == 1.0);
    CHECK(froc(std::vector<Detection>{}, g, 3, 0.5, 1.0).score == 0.0);

    const std::vector<Detection> pair{{40, 40, 0, 0.9}, {10, 10, 0, 0.8}};
    const std::vector<double> rates{0.5, 1.0, 2.0};
    const auto r = froc(pair, g, 3, 0.5, 1.0, rates);
    CHECK(r.sensitivities[0] == 0.0);
    CHECK(r.sensitivities[1] == 1.0);
    CHECK(r.sensitivities[2] == 1.0);
    CHECK(r.sensitivities[0] == testkit::oracle_froc_sensitivity(pair, g, 6, 1.0, 0.5));
    CHECK(r.sensitivities[1] == testkit::oracle_froc_sensitivity(pair, g, 6, 1.0, 1.0));
    CHECK(r.curve.points.front().sensitivity == 0.0);
    CHECK_THROWS(froc(pair, g, 3, 0.5, 0.0));
  }

  TEST_CASE("froc at step anchors agrees with the exhaustive sweep") {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> pos(0.0, 40.0), conf(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      // Ground truth more than two radii apart, so each prediction can reach at most one and greedy is optimal.
      std::vector<Centroid> g{{8, 8, 0}, {23, 8, 0}, {8, 23, 0}, {23, 23, 0}};
      std::vector<Detection> p;
      const int n = 1 + static_cast<int>(rng() % 8);
      for (int i = 0; i < n; ++i) p.push_back({pos(rng), pos(rng), 0, conf(rng)});
      // Integer FP counts per unit area are where the step oracle and the interpolated curve meet.
      const auto r = froc(p, g, 3, 0.5, 1.0, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8});
      for (std::size_t k = 0; k < r.fp_rates.size(); ++k) {
        const double step = testkit::oracle_froc_sensitivity(p, g, 6, 1.0, r.fp_rates[k]);
        CHECK(r.sensitivities[k] == doctest::Approx(step));
      }
    }
  }

  TEST_CASE("removing a false positive never lowers the froc score") {
    std::mt19937_64 rng(34);
    std::uniform_real_distribution<double> pos(0.0, 100.0), conf(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Centroid> g;
      for (int i = 0; i < 6; ++i) g.push_back({pos(rng), pos(rng), 0});
      std::vector<Detection> p;
      for (int i = 0; i < 12; ++i) p.push_back({pos(rng), pos(rng), 0, conf(rng)});
      const std::vector<double> rates{1, 2, 4, 8};
      const auto base = froc(p, g, 3, 0.5, 1.0, rates);
      const auto m = match_points(p, g, 6);
      std::vector<bool> matched(p.size(), false);
      for (const auto& pr : m.pairs) matched[pr.pred] = true;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (matched[i]) continue;
        auto fewer = p;
        fewer.erase(fewer.begin() + static_cast<std::ptrdiff_t>(i));
        CHECK(froc(fewer, g, 3, 0.5, 1.0, rates).score >= base.score - 1e-12);
      }
    }
  }

  TEST_CASE("pooled froc counts every image") {
    const std::vector<Centroid> g1{{5, 5, 0}}, g2{{5, 5, 0}};
    const std::vector<Detection> p1{{5, 5, 0, 0.9}}, p2{};
    const std::vector<FrocImage> images{{p1, g1}, {p2, g2}};
    const auto r = froc(images, 3, 0.5, 2.0, std::vector<double>{1.0});
    CHECK(r.curve.n_gt == 2);
    CHECK(r.score == 0.5);
  }
}
