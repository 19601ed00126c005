#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "bacon/theory.hpp"

using namespace bacon;

namespace {

RiskConfig gaussian_cfg(real epsilon, std::uint64_t seed,
                        std::size_t n = 20000, GaussianSpec g = {}) {
  RiskConfig cfg;
  cfg.epsilon = epsilon;
  cfg.mc_samples = n;
  cfg.seed = seed;
  cfg.spec = g;
  return cfg;
}

real combined_se(const RiskEstimate& a, const RiskEstimate& b) {
  return std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
}

}  // namespace

TEST_CASE("indicator: boundary and hand cases") {
  CHECK(indicator_loss({1, 2}, {1, 2}, 0.1) == 0);
  CHECK(indicator_loss({0, 0}, {3, 4}, 5.0) == 1);   // distance exactly 5
  CHECK(indicator_loss({0, 0}, {3, 4}, 5.1) == 0);
  CHECK(indicator_loss({0}, {2}, 2.0) == 1);
  CHECK_THROWS_AS(indicator_loss({1}, {1, 2}, 1.0), DimMismatch);
}

TEST_CASE("point-mass specs are exact and identical across methods") {
  PointMassSpec equal;
  equal.pairs = {{{1, 1}, {1, 1}}, {{-2, 0}, {-2, 0}}};
  RiskConfig cfg;
  cfg.epsilon = 0.1;
  cfg.mc_samples = 1000;
  cfg.spec = equal;
  CHECK(estimate_risk_direct(cfg).value == 0);
  CHECK(estimate_risk_theorem1(cfg).value == 0);

  PointMassSpec far;
  far.pairs = {{{0, 0}, {10, 0}}};
  cfg.epsilon = 1;
  cfg.spec = far;
  CHECK(estimate_risk_direct(cfg).value == 1);
  CHECK(estimate_risk_theorem1(cfg).value == 1);

  // mixed: half the atoms inside the ball, half out; value is exact by
  // symmetry of the uniform mixture up to MC noise on the atom choice
  PointMassSpec mixed;
  mixed.pairs = {{{0}, {0}}, {{5}, {0}}};
  cfg.epsilon = 1;
  cfg.mc_samples = 40000;
  cfg.spec = mixed;
  auto d = estimate_risk_direct(cfg);
  CHECK(std::fabs(d.value - 0.5) < 3 * d.stderr_);
}

TEST_CASE("theorem 1: direct and decomposition estimators agree on Gaussians") {
  std::vector<GaussianSpec> specs = {
      {0, 1, 0, 1, 1}, {0, 1, 0, 1, 2}, {0, 1, 0, 1, 4},
      {1, 2, -1, 0.5, 2}, {0, 0.3, 0.2, 0.3, 3}, {2, 1, 2, 1, 2},
  };
  std::size_t i = 0;
  for (const auto& g : specs) {
    for (real eps : {0.5, 1.0, 2.0}) {
      auto cfg = gaussian_cfg(eps, 100 + i++, 20000, g);
      auto a = estimate_risk_direct(cfg);
      auto b = estimate_risk_theorem1(cfg);
      INFO("dim " << g.dim << " eps " << eps);
      CHECK(std::fabs(a.value - b.value) <= 3 * combined_se(a, b) + 1e-9);
      CHECK(a.value >= 0);
      CHECK(a.value <= 1);
      CHECK(a.stderr_ ==
            Catch::Approx(std::sqrt(a.value * (1 - a.value) / 20000)));
    }
  }
}

TEST_CASE("risk vanishes for huge epsilon and is monotone in epsilon") {
  auto big = gaussian_cfg(1000, 7);
  CHECK(estimate_risk_direct(big).value == 0);
  CHECK(estimate_risk_theorem1(big).value == 0);

  real prev = 2;
  std::vector<RiskEstimate> ests;
  for (real eps : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    auto e = estimate_risk_direct(gaussian_cfg(eps, 11, 40000));
    if (!ests.empty())
      CHECK(e.value <= prev + 3 * combined_se(e, ests.back()));
    ests.push_back(e);
    prev = e.value;
  }
}

TEST_CASE("estimates are deterministic by seed") {
  auto cfg = gaussian_cfg(1, 42);
  CHECK(estimate_risk_direct(cfg).value == estimate_risk_direct(cfg).value);
  cfg.seed = 43;
  // different seed, same distribution: values close but method tag stable
  CHECK(estimate_risk_direct(cfg).method == "direct");
  CHECK(estimate_risk_theorem1(cfg).method == "theorem1");
}

TEST_CASE("config validation") {
  RiskConfig cfg;
  cfg.epsilon = 0;
  CHECK_THROWS_AS(estimate_risk_direct(cfg), BadDistributionSpec);
  cfg.epsilon = 1;
  cfg.mc_samples = 10;
  CHECK_THROWS_AS(estimate_risk_direct(cfg), BadDistributionSpec);

  // empirical spec with a class present on one side only
  EmpiricalSpec e;
  e.classes = 2;
  e.real_embeddings = {{0, 0}};
  e.real_classes = {0};
  e.syn_embeddings = {{0, 0}, {1, 1}};
  e.syn_classes = {0, 1};
  RiskConfig ec;
  ec.spec = e;
  ec.mc_samples = 1000;
  CHECK_THROWS_AS(estimate_risk_theorem1(ec), ConditionalUnavailable);
}

TEST_CASE("empirical spec: degenerate single-class case") {
  EmpiricalSpec e;
  e.classes = 1;
  e.real_embeddings = {{0, 0}};
  e.real_classes = {0};
  e.syn_embeddings = {{3, 4}};
  e.syn_classes = {0};
  RiskConfig cfg;
  cfg.spec = e;
  cfg.mc_samples = 500;
  cfg.epsilon = 5;  // distance exactly 5 -> indicator 1
  CHECK(estimate_risk_direct(cfg).value == 1);
  cfg.epsilon = 5.0001;
  CHECK(estimate_risk_direct(cfg).value == 0);
  // theorem1 ball uses <=, so distance 5 is inside at epsilon 5
  cfg.epsilon = 5;
  CHECK(estimate_risk_theorem1(cfg).value == 0);
}

TEST_CASE("jensen gap: hand values and equality case") {
  auto [l1, r1] = jensen_gap({2.5, 2.5, 2.5});
  CHECK(l1 == Catch::Approx(std::log(2.5)).margin(1e-12));
  CHECK(r1 == Catch::Approx(std::log(2.5)).margin(1e-12));

  auto [l2, r2] = jensen_gap({1, std::exp(real(2))});
  CHECK(l2 == Catch::Approx(std::log((1 + std::exp(2.0)) / 2)).margin(1e-12));
  CHECK(l2 == Catch::Approx(1.434).margin(5e-4));
  CHECK(r2 == Catch::Approx(1.0).margin(1e-12));
  CHECK(l2 > r2);

  CHECK_THROWS_AS(jensen_gap({}), NonPositiveValue);
  CHECK_THROWS_AS(jensen_gap({1, -0.5}), NonPositiveValue);
}

TEST_CASE("jensen inequality holds on 10^4 random positive vectors") {
  std::mt19937_64 eng(2024);
  std::uniform_real_distribution<real> len(1, 8), val(0.01, 10);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<real> v(std::size_t(len(eng)));
    for (auto& x : v) x = val(eng);
    auto [lhs, rhs] = jensen_gap(v);
    if (lhs < rhs - 1e-12) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("argmax surrogate: single anchor picks the nearest grid point") {
  Tensor anchors = Tensor::from({1, 2}, {0.4, 0.6});
  std::vector<std::vector<real>> grid = {{0, 0}, {0.5, 0.5}, {1, 1}, {2, 2}};
  auto c = argmax_surrogate_check(anchors, 1.0, grid);
  CHECK(c.best_exact == 1);
  CHECK(c.best_surrogate == 1);
  CHECK(c.coincide);
}

TEST_CASE("argmax surrogate: symmetric anchors with large sigma pick midpoint") {
  Tensor anchors = Tensor::from({2, 1}, {-1, 1});
  std::vector<std::vector<real>> grid = {{-1}, {0}, {1}};
  auto c = argmax_surrogate_check(anchors, 3.0, grid);
  CHECK(c.best_exact == 1);
  CHECK(c.best_surrogate == 1);
}

TEST_CASE("argmax surrogate: coincidence rate measured over random instances") {
  std::mt19937_64 eng(5);
  std::uniform_real_distribution<real> u(-2, 2);
  std::size_t agree = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    std::vector<real> a(3 * 2);
    for (auto& x : a) x = u(eng);
    Tensor anchors = Tensor::from({3, 2}, std::move(a));
    std::vector<std::vector<real>> grid;
    for (int i = 0; i < 5; ++i) grid.push_back({u(eng), u(eng)});
    auto c = argmax_surrogate_check(anchors, 0.8, grid);
    agree += c.coincide;
  }
  WARN("argmax surrogate coincidence: " << agree << "/" << trials);
  CHECK(agree >= 1);  // rate reported above, not asserted tight

  CHECK_THROWS_AS(argmax_surrogate_check(Tensor::from({1, 1}, {0}), 1.0, {}),
                  EmptyGrid);
  CHECK_THROWS_AS(
      argmax_surrogate_check(Tensor::from({1, 2}, {0, 0}), 1.0, {{1}}),
      DimMismatch);
}
