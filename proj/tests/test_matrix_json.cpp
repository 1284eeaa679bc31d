#include <cmath>
#include <random>

#include "doctest.h"
#include "kinegraph/error.hpp"
#include "kinegraph/json_io.hpp"
#include "kinegraph/matrix.hpp"
#include "test_support.hpp"

using namespace kinegraph;

TEST_CASE("matmul agrees with a naive triple loop") {
  std::mt19937_64 rng(3);
  const Matrix a = testing::random_matrix(rng, 4, 5);
  const Matrix b = testing::random_matrix(rng, 5, 3);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += a(i, k) * b(k, j);
      CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
  CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("transpose and symmetry helpers") {
  const Matrix m{{1, 2}, {3, 4}};
  CHECK(m.transpose() == Matrix{{1, 3}, {2, 4}});
  CHECK_FALSE(is_symmetric(m, 1e-12));
  CHECK(is_symmetric(m + m.transpose(), 0.0));
  CHECK(max_abs(m) == 4.0);
}

TEST_CASE("significant-digit rounding") {
  CHECK(round_significant(1.0 / 3.0, 9) == 0.333333333);
  CHECK(round_significant(0.0, 9) == 0.0);
  CHECK(round_significant(123456789012.0, 9) == 123456789000.0);
}

TEST_CASE("canonical dump sorts keys and is stable") {
  Json a{{"b", 1.0 / 3.0}, {"a", {1, 2}}};
  const std::string s9 = canonical_dump(a, FloatFormat::Significant9);
  CHECK(s9 == "{\"a\":[1,2],\"b\":0.333333333}\n");
  const std::string full = canonical_dump(a, FloatFormat::Full);
  CHECK(Json::parse(full)["b"].get<double>() == 1.0 / 3.0);
}

TEST_CASE("matrix JSON round trip and schema paths") {
  std::mt19937_64 rng(11);
  const Matrix m = testing::random_matrix(rng, 3, 4);
  const Matrix back = matrix_from_json(Json::parse(matrix_to_json(m).dump()), "/m");
  CHECK(back == m);

  try {
    matrix_from_json(Json::parse("[[1,2],[3]]"), "/abar");
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "/abar/1");
  }
}
