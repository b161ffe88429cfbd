#include <catch2/catch_amalgamated.hpp>

#include "agediff/expression.hpp"
#include "oracles.hpp"

using namespace agediff;

TEST_CASE("parsing evaluates to the arithmetic meaning", "[expression]") {
  CHECK(eval(parse_rate_expression("1"), 0.3, 1.7, -2.0) == 1.0);
  CHECK(eval(parse_rate_expression("2*exp(-a)"), 0.0, 0.0, 0.0) == 2.0);
  CHECK(eval(parse_rate_expression("z*(1+x)"), 2.0, 0.0, 3.0) == 8.0);
  CHECK(eval(parse_rate_expression("2^3^1"), 0, 0, 0) == 8.0);
  CHECK(eval(parse_rate_expression("-a^2"), 0, 3.0, 0) == -9.0);  // -(a^2)
  CHECK(eval(parse_rate_expression("max(z, a)"), 1.0, 2.5, 0) == 2.5);
  CHECK(eval(parse_rate_expression("min(1, x)"), 0, 0, -4.0) == -4.0);
  CHECK(eval(parse_rate_expression("sqrt(a)*sin(x) + cos(x)*log(z)"), std::exp(1.0), 4.0, 0.0) ==
        Catch::Approx(1.0));  // 2*sin(0) + cos(0)*1
}

TEST_CASE("syntax errors carry 1-based columns", "[expression]") {
  try {
    parse_rate_expression("2*");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.column == 2);
  }
  CHECK_THROWS_AS(parse_rate_expression("(1+2"), ParseError);
  CHECK_THROWS_AS(parse_rate_expression("1 + * 2"), ParseError);
  CHECK_THROWS_AS(parse_rate_expression(""), ParseError);

  try {
    parse_rate_expression("2*foo");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("foo") != std::string::npos);
    CHECK(e.column == 3);
  }
  CHECK_THROWS_AS(parse_rate_expression("hypot(1,2)"), ParseError);
  CHECK_THROWS_AS(parse_rate_expression("max(1)"), ParseError);
  CHECK_THROWS_AS(parse_rate_expression("exp(1,2)"), ParseError);
}

TEST_CASE("runtime evaluation errors are not parse errors", "[expression]") {
  Expr e = parse_rate_expression("1/z");
  CHECK(eval(e, 2.0, 0, 0) == 0.5);
  CHECK_THROWS_AS(eval(e, 0.0, 0, 0), EvalError);
  CHECK_THROWS_AS(eval(parse_rate_expression("log(z)"), 0.0, 0, 0), EvalError);
  CHECK_THROWS_AS(eval(parse_rate_expression("sqrt(0 - a)"), 0, 1.0, 0), EvalError);
  CHECK_THROWS_AS(eval(parse_rate_expression("exp(a)"), 0, 1e6, 0), EvalError);  // overflow
}

TEST_CASE("parameters", "[expression]") {
  Expr e = parse_rate_expression("param:b0 * exp(-a)");
  ParamSet p{{"b0", 2.0}};
  CHECK(eval(e, 0, 0, 0, p) == 2.0);
  CHECK_THROWS_AS(eval(e, 0, 0, 0), EvalError);  // undefined parameter
  std::vector<std::string> names;
  collect_params(e, names);
  REQUIRE(names.size() == 1);
  CHECK(names[0] == "b0");
  CHECK_THROWS_AS(parse_rate_expression("param:"), ParseError);
}

TEST_CASE("symbolic z-derivative on the examples", "[expression]") {
  CHECK(eval(differentiate_in_z(parse_rate_expression("3")), 1.0, 0, 0) == 0.0);
  CHECK(eval(differentiate_in_z(parse_rate_expression("z^2")), 3.0, 0, 0) == 6.0);
  const double d = eval(differentiate_in_z(parse_rate_expression("exp(-z)*a")), 0.0, 2.0, 0.0);
  CHECK(d == Catch::Approx(-2.0).margin(1e-12));
  // agreement with the stated central-difference oracle
  const double fd = oracles::central_dz(parse_rate_expression("exp(-z)*a"), 0.0, 2.0, 0.0);
  CHECK(std::abs(d - fd) <= 1e-6);
}

TEST_CASE("unsupported derivative constructs name the remedy", "[expression]") {
  CHECK_THROWS_AS(differentiate_in_z(parse_rate_expression("max(z, 1)")), DerivativeError);
  try {
    differentiate_in_z(parse_rate_expression("min(z, a)"));
    FAIL("expected DerivativeError");
  } catch (const DerivativeError& e) {
    CHECK(std::string(e.what()).find("explicitly") != std::string::npos);
  }
  // z-free max/min differentiate to zero
  CHECK(eval(differentiate_in_z(parse_rate_expression("max(a, x)")), 0, 1, 2) == 0.0);
}

TEST_CASE("derivatives agree with central differences at random points", "[expression]") {
  const char* exprs[] = {
      "z^2 + 3*z + 1",       "exp(-z)*a + z*x",       "sin(z)*cos(z)",
      "sqrt(z + 2)",          "z/(1 + z)",             "log(z + 3)*a",
      "exp(-(z - 1)^2)",      "(1 + z)^3",             "z^a",
  };
  oracles::Rng rng(20240817);
  for (const char* src : exprs) {
    Expr e = parse_rate_expression(src);
    Expr de = differentiate_in_z(e);
    for (int k = 0; k < 100; ++k) {
      const double z = rng.uniform(0.1, 1.9);
      const double a = rng.uniform(0.1, 2.0);
      const double x = rng.uniform(-1.0, 1.0);
      const double sym = eval(de, z, a, x);
      const double fd = oracles::central_dz(e, z, a, x);
      CHECK(std::abs(sym - fd) <= 1e-6 * std::max(1.0, std::abs(sym)));
    }
  }
}

TEST_CASE("parse then pretty-print then parse is idempotent on the AST", "[expression]") {
  const char* sources[] = {
      "1",
      "2*exp(-a)",
      "z*(1+x)",
      "-(z + a)^2/(1 - x)",
      "max(min(a, x), 0.5) + param:c0",
      "z^-2",
      "1 - 2 - 3",
      "2/(3/4)",
      "sin(cos(exp(z)))",
      "0.5*a + 1.25e-3*x",
  };
  for (const char* src : sources) {
    Expr first = parse_rate_expression(src);
    std::string printed = pretty_print(first);
    Expr second = parse_rate_expression(printed);
    INFO(src << "  ->  " << printed);
    CHECK(expr_equal(first, second));
    CHECK(pretty_print(second) == printed);
  }
}
