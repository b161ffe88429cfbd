#include <catch2/catch_amalgamated.hpp>

#include "agediff/model.hpp"
#include "oracles.hpp"

using namespace agediff;

TEST_CASE("grid invariants", "[model]") {
  SpatialGrid g(2.5, 26, Boundary::neumann);
  CHECK(g.spacing() * (g.n_x - 1) == Catch::Approx(g.length).epsilon(1e-15));
  AgeGrid a(3.0, 120);
  CHECK(a.delta_a() * a.n_a == Catch::Approx(a.a_max).epsilon(1e-15));
  CHECK_THROWS_AS(SpatialGrid(1.0, 2, Boundary::neumann), std::invalid_argument);
  CHECK_THROWS_AS(SpatialGrid(-1.0, 5, Boundary::neumann), std::invalid_argument);
  CHECK_THROWS_AS(AgeGrid(1.0, 1), std::invalid_argument);
}

TEST_CASE("weighted total on the worked examples", "[model]") {
  auto spec = oracles::make_spec(1.0, 7, Boundary::neumann, 2.0, 40, "1", "1");
  AgeSpaceField zero(spec.age.n_nodes(), spec.spatial.n_x, 0.0);
  for (double v : weighted_total(zero, spec)) CHECK(v == 0.0);

  AgeSpaceField ones(spec.age.n_nodes(), spec.spatial.n_x, 1.0);
  for (double v : weighted_total(ones, spec)) CHECK(v == Catch::Approx(2.0).epsilon(1e-14));

  auto spec_rho_a = oracles::make_spec(1.0, 7, Boundary::neumann, 1.0, 50, "1", "1", "1", "a");
  AgeSpaceField ones2(spec_rho_a.age.n_nodes(), 7, 1.0);
  for (double v : weighted_total(ones2, spec_rho_a))
    CHECK(v == Catch::Approx(0.5).margin(1e-12));  // trapezoid exact for linear weights

  AgeSpaceField bad(3, 4);
  CHECK_THROWS_AS(weighted_total(bad, spec), std::invalid_argument);
}

TEST_CASE("weighted total is linear in the field", "[model]") {
  auto spec = oracles::make_spec(1.5, 9, Boundary::neumann, 2.0, 30, "1", "1", "1", "1 + a*x");
  oracles::Rng rng(7);
  AgeSpaceField u(spec.age.n_nodes(), 9), v(spec.age.n_nodes(), 9);
  for (auto& c : u.data) c = rng.uniform(-1, 1);
  for (auto& c : v.data) c = rng.uniform(-1, 1);
  const double alpha = 0.37, beta = -1.21;
  AgeSpaceField lc(spec.age.n_nodes(), 9);
  for (std::size_t k = 0; k < lc.data.size(); ++k) lc.data[k] = alpha * u.data[k] + beta * v.data[k];
  auto wu = weighted_total(u, spec), wv = weighted_total(v, spec), wl = weighted_total(lc, spec);
  for (int i = 0; i < 9; ++i)
    CHECK(wl[i] == Catch::Approx(alpha * wu[i] + beta * wv[i]).margin(1e-13));
}

TEST_CASE("trapezoid quadrature converges at order 2 on exp(-a)", "[model]") {
  auto integral = [](int n_a) {
    AgeGrid g(1.0, n_a);
    auto w = age_weights(g);
    double s = 0.0;
    for (int j = 0; j <= n_a; ++j) s += w[j] * std::exp(-g.node(j));
    return s;
  };
  const double exact = 1.0 - std::exp(-1.0);
  const double e1 = std::abs(integral(64) - exact);
  const double e2 = std::abs(integral(128) - exact);
  const double ratio = e1 / e2;
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);
}

TEST_CASE("validate_spec passes constant rates", "[model]") {
  auto spec = oracles::make_spec(1.0, 5, Boundary::neumann, 2.0, 10, "1", "2");
  auto rep = validate_spec(spec, 2.0);
  CHECK(rep.passed);
  CHECK(rep.total_violations == 0);
}

TEST_CASE("validate_spec flags sign violations where they occur", "[model]") {
  auto spec = oracles::make_spec(1.0, 5, Boundary::neumann, 2.0, 10, "1", "2", "a - 1");
  auto rep = validate_spec(spec, 2.0);
  CHECK_FALSE(rep.passed);
  for (const auto& v : rep.violations) {
    CHECK(v.rate == "d");
    CHECK(v.a <= 1.0);  // a - 1 <= 0 exactly at those nodes
  }

  auto spec_m = oracles::make_spec(1.0, 5, Boundary::neumann, 2.0, 10, "1 - z", "2");
  auto rep_m = validate_spec(spec_m, 2.0);
  CHECK_FALSE(rep_m.passed);
  bool all_large_z = true;
  for (const auto& v : rep_m.violations) {
    if (v.rate != "m") continue;
    if (!(v.z > 1.0)) all_large_z = false;
  }
  CHECK(all_large_z);
}

TEST_CASE("norms", "[model]") {
  auto spec = oracles::make_spec(1.0, 5, Boundary::neumann, 2.0, 4, "1", "1");
  AgeSpaceField u(5, 5, 1.0);
  CHECK(norm_l1_age_sup_x(u, spec.age) == Catch::Approx(2.0));
  CHECK(norm_l1_age_l2_x(u, spec.age, spec.spatial) == Catch::Approx(2.0));  // ||1||_L2(0,1) = 1
  CHECK(sup_norm(u) == 1.0);
  u(2, 3) = -7.0;
  CHECK(sup_norm(u) == 7.0);
}

TEST_CASE("x-independence probe", "[model]") {
  auto spec = oracles::make_spec(1.0, 9, Boundary::neumann, 2.0, 10, "1 + z", "2");
  CHECK(rate_is_x_independent(spec, spec.rates.m, 2.0));
  auto spec2 = oracles::make_spec(1.0, 9, Boundary::neumann, 2.0, 10, "1 + x", "2");
  CHECK_FALSE(rate_is_x_independent(spec2, spec2.rates.m, 2.0));
}
