#include "doctest.h"

#include <random>
#include <sstream>

#include "../support/test_functions.hpp"
#include "tiltune/smgo.hpp"

using namespace tiltune;
using namespace tiltune::smgo;

namespace {

PointSet points(std::initializer_list<std::vector<double>> pts) {
  PointSet ps;
  for (const auto& p : pts) ps.push(p);
  return ps;
}

opt::Box unit_box(std::size_t d) { return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), std::vector<bool>(d, false)}; }

opt::Evaluation quad(std::span<const double> x) {
  double f = 0.0;
  for (double v : x) f += (v - 0.3) * (v - 0.3);
  return {f, 1.0, false};
}

}  // namespace

TEST_CASE("lipschitz estimate: slope, inflation and spread") {
  const auto x = points({{0.0, 0.0}, {1.0, 0.0}});
  const std::vector<double> y{1.0, 3.0};
  const std::vector<char> use{1, 1};
  const auto est = estimate_lipschitz(x, y, use, 1.1);
  CHECK(est.slope == doctest::Approx(2.0));
  CHECK(est.gamma == doctest::Approx(2.2));
  CHECK(est.epsilon == 0.0);

  const auto rep = points({{0.5}, {0.5}, {1.0}});
  const std::vector<double> same{2.0, 2.0, 2.5};
  CHECK(estimate_lipschitz(rep, same, std::vector<char>{1, 1, 1}, 1.0).epsilon == 0.0);
  const std::vector<double> spread{2.0, 2.4, 2.5};
  CHECK(estimate_lipschitz(rep, spread, std::vector<char>{1, 1, 1}, 1.0).epsilon == doctest::Approx(0.2));

  const auto one = points({{0.2}, {0.2}});
  CHECK_THROWS_AS(estimate_lipschitz(one, std::vector<double>{1.0, 1.0}, std::vector<char>{1, 1}, 1.1), SingularityError);
  // unused samples do not count
  CHECK_THROWS_AS(estimate_lipschitz(x, y, std::vector<char>{1, 0}, 1.1), SingularityError);
}

TEST_CASE("lipschitz estimate never decreases when samples are added") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointSet x;
  std::vector<double> y;
  std::vector<char> use;
  double prev = 0.0;
  for (int i = 0; i < 40; ++i) {
    x.push(std::vector<double>{u(rng), u(rng), u(rng)});
    y.push_back(std::sin(5.0 * u(rng)));
    use.push_back(1);
    if (i == 0) continue;
    const double g = estimate_lipschitz(x, y, use, 1.1).gamma;
    CHECK(g >= prev);
    prev = g;
  }
}

TEST_CASE("cone bounds: hand example and apex") {
  const auto x = points({{0.0}, {1.0}});
  const std::vector<double> y{1.0, 3.0};
  const std::vector<char> use{1, 1};
  const auto mid = cone_bounds(std::vector<double>{0.5}, x, y, use, 4.0, 0.0);
  CHECK(mid.upper == doctest::Approx(3.0));
  CHECK(mid.lower == doctest::Approx(1.0));
  CHECK(mid.mean() == doctest::Approx(2.0));
  CHECK(mid.uncertainty() == doctest::Approx(2.0));
  const auto apex = cone_bounds(std::vector<double>{1.0}, x, y, use, 4.0, 0.0);
  CHECK(apex.lower == 3.0);
  CHECK(apex.upper == 3.0);
  const auto noisy = cone_bounds(std::vector<double>{1.0}, x, y, use, 4.0, 0.25);
  CHECK(noisy.uncertainty() == doctest::Approx(0.5));
}

TEST_CASE("cone bounds: lower <= upper and lambda shrinks as data grows") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto f = [](double a, double b) { return std::sin(3.0 * a) + std::cos(2.0 * b); };
  const double lip = std::hypot(3.0, 2.0);
  PointSet x;
  std::vector<double> y;
  std::vector<char> use;
  std::vector<std::vector<double>> probes;
  for (int i = 0; i < 200; ++i) probes.push_back({u(rng), u(rng)});
  std::vector<double> prev(probes.size(), INFINITY);
  for (int n = 0; n < 25; ++n) {
    const double a = u(rng), b = u(rng);
    x.push(std::vector<double>{a, b});
    y.push_back(f(a, b));
    use.push_back(1);
    for (std::size_t p = 0; p < probes.size(); ++p) {
      const auto cb = cone_bounds(probes[p], x, y, use, lip, 0.0);
      CHECK(cb.lower <= cb.upper);
      const double truth = f(probes[p][0], probes[p][1]);
      CHECK(truth >= cb.lower - 1e-12);
      CHECK(truth <= cb.upper + 1e-12);
      CHECK(cb.uncertainty() <= prev[p] + 1e-12);
      prev[p] = cb.uncertainty();
    }
  }
}

TEST_CASE("exploitation test margins") {
  CHECK_FALSE(exploitation_test(1.0, 1.0, 0.005, 10.0));
  CHECK(exploitation_test(1.0 - 2.0 * 0.005 * 10.0, 1.0, 0.005, 10.0));
  CHECK(exploitation_test(1.0, 1.0, 0.0, 10.0));
  CHECK_FALSE(exploitation_test(1.0 + 1e-12, 1.0, 0.0, 10.0));
}

TEST_CASE("selection: pure exploitation picks the smallest mean") {
  SmgoConfig cfg;
  cfg.beta = 0.0;
  cfg.alpha = 0.0;
  cfg.mesh_points = 200;
  Smgo s(unit_box(2), cfg);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 8; ++i) {
    const std::vector<double> p{u(rng), u(rng)};
    s.add(p, quad(p), "seed");
  }
  const auto choice = s.select();
  REQUIRE(choice.phase == "exploit");
  double best = INFINITY;
  for (std::size_t c = 0; c < s.candidates().size(); ++c)
    if (s.candidate_active(c)) best = std::min(best, s.f_bounds(s.candidates()[c]).mean());
  CHECK(s.f_bounds(choice.unit).mean() == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("selection: weighted score and constraint test match a brute-force scan") {
  for (double delta : {0.0, 0.5, 1.0}) {
    SmgoConfig cfg;
    cfg.delta = delta;
    cfg.alpha = 0.0;
    cfg.mesh_points = 300;
    Smgo s(unit_box(2), cfg);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto eval = [](std::span<const double> x) {
      return opt::Evaluation{(x[0] - 0.7) * (x[0] - 0.7) + (x[1] - 0.2) * (x[1] - 0.2), 0.3 - x[0] * x[1], false};
    };
    for (int i = 0; i < 12; ++i) {
      const std::vector<double> p{u(rng), u(rng)};
      s.add(p, eval(p), "seed");
    }
    double best = INFINITY;
    for (std::size_t c = 0; c < s.candidates().size(); ++c) {
      if (!s.candidate_active(c)) continue;
      const auto x = s.candidates()[c];
      const auto gb = s.g_bounds(x);
      if (delta * gb.mean() + (1.0 - delta) * gb.lower < 0.0) continue;
      const auto fb = s.f_bounds(x);
      best = std::min(best, fb.mean() - cfg.beta * fb.uncertainty());
    }
    const auto choice = s.select();
    REQUIRE(choice.phase == "exploit");
    const auto fb = s.f_bounds(choice.unit);
    const auto gb = s.g_bounds(choice.unit);
    CHECK(fb.mean() - cfg.beta * fb.uncertainty() == doctest::Approx(best).epsilon(1e-12));
    CHECK(delta * gb.mean() + (1.0 - delta) * gb.lower >= 0.0);
  }
}

TEST_CASE("exploration on a segment picks the point farthest from both samples") {
  SmgoConfig cfg;
  cfg.alpha = 10.0;  // forces the test to fail
  cfg.gamma_f = 1.0;
  cfg.mesh_points = 50;
  Smgo s(unit_box(1), cfg);
  s.add(std::vector<double>{0.0}, {1.0, 1.0, false}, "seed");
  s.add(std::vector<double>{1.0}, {1.0, 1.0, false}, "seed");
  const auto choice = s.select();
  CHECK(choice.phase == "explore");
  CHECK(choice.unit[0] == doctest::Approx(0.5));
}

TEST_CASE("sampled points leave the candidate set") {
  SmgoConfig cfg;
  cfg.mesh_points = 100;
  cfg.budget = 30;
  Smgo s(unit_box(2), cfg);
  for (int i = 0; i < 30; ++i) s.iterate(quad);
  for (const auto& r : s.history()) {
    const auto fb = s.f_bounds(r.theta);
    CHECK(fb.uncertainty() == doctest::Approx(0.0).scale(1.0));
    for (std::size_t c = 0; c < s.candidates().size(); ++c)
      if (s.candidate_active(c)) CHECK(distance(s.candidates()[c], r.theta) > 1e-12);
  }
}

TEST_CASE("incumbent is monotone and runs are reproducible") {
  SmgoConfig cfg;
  cfg.seed = 17;
  cfg.budget = 60;
  const auto box = oracle::branin_box();
  const auto a = minimize(box, cfg, oracle::branin_eval);
  const auto b = minimize(box, cfg, oracle::branin_eval);
  REQUIRE(a.size() == 60);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].theta == b[k].theta);
    CHECK(a[k].phase == b[k].phase);
    if (k > 0) CHECK(a[k].incumbent <= a[k - 1].incumbent);
  }
  cfg.seed = 18;
  const auto c = minimize(box, cfg, oracle::branin_eval);
  CHECK(c[0].theta != a[0].theta);
}

TEST_CASE("prior point is evaluated first") {
  SmgoConfig cfg;
  cfg.budget = 5;
  const std::vector<double> prior{3.0, 2.0};
  const auto h = minimize(oracle::branin_box(), cfg, oracle::branin_eval, &prior);
  REQUIRE(h.size() == 6);
  CHECK(h[0].phase == "prior");
  CHECK(h[0].theta == prior);
}

TEST_CASE("failed runs are infeasible, penalised and kept out of gamma") {
  SmgoConfig cfg;
  cfg.mesh_points = 50;
  Smgo s(unit_box(1), cfg);
  s.add(std::vector<double>{0.1}, {2.0, 1.0, false}, "seed");
  s.add(std::vector<double>{0.3}, {4.0, 1.0, false}, "seed");
  const double gamma = s.f_estimate().gamma;
  const auto& r = s.add(std::vector<double>{0.31}, {0.0, -5.0, true}, "seed");
  CHECK(r.failed);
  CHECK_FALSE(r.feasible);
  CHECK(r.f == doctest::Approx(40.0));
  CHECK(s.f_estimate().gamma == gamma);
  CHECK(s.incumbent() == 2.0);
}

TEST_CASE("infeasible start searches for the feasible region") {
  SmgoConfig cfg;
  cfg.budget = 40;
  cfg.mesh_points = 300;
  Smgo s(unit_box(2), cfg);
  auto eval = [](std::span<const double> x) {
    return opt::Evaluation{x[0] + x[1], 0.04 - (x[0] - 0.8) * (x[0] - 0.8) - (x[1] - 0.8) * (x[1] - 0.8), false};
  };
  s.add(std::vector<double>{0.05, 0.05}, eval(std::vector<double>{0.05, 0.05}), "seed");
  for (int i = 0; i < 40; ++i) s.iterate(eval);
  CHECK(std::isfinite(s.incumbent()));
}

TEST_CASE("cautious mode never leaves a concave feasible set") {
  SmgoConfig cfg;
  cfg.delta = 0.0;
  cfg.budget = 80;
  cfg.mesh_points = 400;
  cfg.gamma_g = 2.0 * std::sqrt(2.0);  // |grad g| <= 2 sqrt 2 on the unit square
  auto eval = [](std::span<const double> x) {
    const double g = 0.2 - (x[0] - 0.5) * (x[0] - 0.5) - (x[1] - 0.5) * (x[1] - 0.5);
    return opt::Evaluation{std::cos(6.0 * x[0]) + x[1], g, false};
  };
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    cfg.seed = seed;
    const std::vector<double> start{0.5, 0.5};
    const auto h = minimize(unit_box(2), cfg, eval, &start);
    for (const auto& r : h) CHECK(r.g >= 0.0);
  }
}

TEST_CASE("snapshot restore rebuilds the same state") {
  SmgoConfig cfg;
  cfg.seed = 5;
  cfg.mesh_points = 200;
  Smgo s(oracle::branin_box(), cfg);
  for (int i = 0; i < 25; ++i) s.iterate(oracle::branin_eval);
  std::stringstream ss;
  s.save(ss);
  auto r = Smgo::restore(ss, oracle::branin_box(), cfg);
  CHECK(r.history().size() == s.history().size());
  CHECK(r.incumbent() == s.incumbent());
  CHECK(r.active_candidates() == s.active_candidates());
  const auto a = s.select(), b = r.select();
  CHECK(a.unit == b.unit);
  CHECK(a.phase == b.phase);
  std::stringstream bad("nonsense 1 2");
  CHECK_THROWS_AS(Smgo::restore(bad, oracle::branin_box(), cfg), ConfigError);
}

TEST_CASE("config validation") {
  SmgoConfig cfg;
  cfg.delta = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.gamma_inflation = 0.9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("bounds stay valid on a grid for a known Lipschitz constant") {
  const auto grid = oracle::branin_grid(200);
  SmgoConfig cfg;
  cfg.seed = 3;
  cfg.gamma_f = 1.05 * grid.lipschitz_f;
  cfg.gamma_g = 1.05 * grid.lipschitz_g;
  cfg.mesh_points = 300;
  Smgo s(oracle::branin_box(), cfg);
  for (int it = 0; it < 40; ++it) {
    s.iterate(oracle::branin_eval);
    if (it % 10 != 9) continue;
    for (int i = 0; i <= 40; ++i)
      for (int j = 0; j <= 40; ++j) {
        const std::vector<double> u{i / 40.0, j / 40.0};
        const auto th = s.box().from_unit(u);
        const auto fb = s.f_bounds(u);
        const double f = oracle::branin(th[0], th[1]);
        CHECK(f >= fb.lower - 1e-9);
        CHECK(f <= fb.upper + 1e-9);
      }
  }
}
