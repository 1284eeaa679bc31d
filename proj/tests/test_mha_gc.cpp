#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "doctest.h"
#include "kinegraph/error.hpp"
#include "kinegraph/mha_gc.hpp"
#include "test_support.hpp"

using namespace kinegraph;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

AttentionParams scalar_params(double gamma, const Matrix& shared) {
  return AttentionParams{shared, gamma, Matrix{{1.0}}, Matrix{{1.0}}, {1.0}};
}

}  // namespace

TEST_CASE("gc_baseline examples") {
  std::mt19937_64 rng(1);
  const Matrix f = testing::random_matrix(rng, 3, 2);
  const Matrix w = testing::random_matrix(rng, 2, 4);
  const Matrix out = gc_baseline(f, {Matrix::identity(3)}, {w});
  const Matrix fw = matmul(f, w);
  for (std::size_t i = 0; i < out.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(fw.data()[i] / 1.001).epsilon(1e-14));

  CHECK(max_abs_diff(gc_baseline(f, {Matrix::identity(3)}, {Matrix::identity(2)}, 0.0), f) < 1e-15);

  // Two isolated nodes: changing node 1 leaves node 0's output untouched.
  Matrix g{{1.0, 2.0}, {3.0, 4.0}};
  const Matrix a = Matrix::identity(2);
  const Matrix before = gc_baseline(g, {a}, {Matrix::identity(2)});
  g(1, 0) = -7.0;
  const Matrix after = gc_baseline(g, {a}, {Matrix::identity(2)});
  CHECK(before(0, 0) == after(0, 0));
  CHECK(before(0, 1) == after(0, 1));

  CHECK_THROWS_AS(gc_baseline(f, {Matrix::identity(4)}, {w}), Error);
  CHECK_THROWS_AS(gc_baseline(f, {Matrix::identity(3)}, {}), Error);
}

TEST_CASE("spatial partitions cover the physical graph") {
  const auto parts = spatial_partitions(25, skeleton_edges(25), 20);
  REQUIRE(parts.size() == 3);
  Matrix sum = parts[0] + parts[1] + parts[2];
  Matrix expected = Matrix::identity(25);
  for (auto [i, j] : skeleton_edges(25)) expected(i, j) = expected(j, i) = 1.0;
  CHECK(sum == expected);
  CHECK(parts[1] == parts[2].transpose());
}

TEST_CASE("one-hop attention examples") {
  const Matrix shared{{0.2, 0.1}, {0.1, 0.3}};
  // Identical node features with W_q = W_k: zero differences.
  const Matrix same{{0.5}, {0.5}};
  const auto s0 = one_hop_attention(same, scalar_params(1.0, shared));
  CHECK(max_abs(s0.a_tilde[0]) == 0.0);
  CHECK(s0.a_bar == shared);

  std::mt19937_64 rng(3);
  const Matrix f = testing::random_matrix(rng, 2, 1);
  CHECK(one_hop_attention(f, scalar_params(0.0, shared)).a_bar == shared);

  const auto s = one_hop_attention(Matrix{{0.0}, {1.0}}, scalar_params(1.0, Matrix(2, 2)));
  const double t1 = std::tanh(1.0);
  CHECK(s.a_tilde[0](0, 0) == 0.0);
  CHECK(s.a_tilde[0](0, 1) == -t1);
  CHECK(s.a_tilde[0](1, 0) == t1);
  CHECK(s.a_bar(0, 1) == doctest::Approx(-0.76159).epsilon(1e-5));
  CHECK(s.a_bar(1, 0) == doctest::Approx(0.76159).epsilon(1e-5));

  CHECK_THROWS_AS(one_hop_attention(Matrix(2, 3), scalar_params(1.0, shared)), Error);
}

TEST_CASE("multi-hop exact examples") {
  const Matrix i2 = Matrix::identity(2);
  CHECK(max_abs_diff(multi_hop_exact(i2, 0.5, 2), i2 * 0.875) == 0.0);

  std::mt19937_64 rng(4);
  const Matrix a = testing::random_matrix(rng, 3, 3);
  CHECK(multi_hop_exact(a, 0.3, 0) == Matrix::identity(3) * 0.3);

  const Matrix swap{{0, 1}, {1, 0}};
  CHECK(max_abs_diff(multi_hop_exact(swap, 0.5, 2), Matrix{{0.625, 0.25}, {0.25, 0.625}}) == 0.0);

  // k = 1 collapses to one-hop propagation beta I + beta (1 - beta) A.
  const Matrix one = multi_hop_exact(a, 0.4, 1);
  CHECK(max_abs_diff(one, Matrix::identity(3) * 0.4 + a * (0.4 * 0.6)) < 1e-16);
}

TEST_CASE("decay weights") {
  for (double beta : {0.1, 0.5, 0.9}) {
    const auto w = decay_weights(beta, 64);
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      sum += w[i];
      CHECK(std::abs(sum - (1.0 - std::pow(1.0 - beta, static_cast<double>(i + 1)))) <= 1e-12);
      if (i > 0) CHECK(w[i] < w[i - 1]);
    }
  }
  CHECK_THROWS_AS(decay_weights(0.0, 3), Error);
  CHECK_THROWS_AS(decay_weights(1.5, 3), Error);
}

TEST_CASE("iterative diffusion examples") {
  std::mt19937_64 rng(6);
  const Matrix f = testing::random_matrix(rng, 3, 2);
  CHECK(max_abs_diff(diffuse_iterative(Matrix::identity(3), f, 0.3, 7), f) < 1e-15);
  CHECK(diffuse_iterative(testing::random_matrix(rng, 3, 3), f, 0.3, 0) == f);
  const Matrix swap{{0, 1}, {1, 0}};
  CHECK(diffuse_iterative(swap, Matrix{{1.0}, {0.0}}, 0.5, 1) == Matrix{{0.5}, {0.5}});
}

TEST_CASE("iterative diffusion matches the closed-form recursion") {
  std::mt19937_64 rng(12);
  const Matrix a = testing::random_row_normalized_symmetric(rng, 6);
  const Matrix f = testing::random_matrix(rng, 6, 3);
  const double beta = 0.35;
  for (std::size_t k : {1u, 2u, 5u, 9u}) {
    // (1 - beta)^K A^K + beta sum_{i<K} (1 - beta)^i A^i
    Matrix power = Matrix::identity(6), op(6, 6);
    for (std::size_t i = 0; i < k; ++i) {
      op += power * (beta * std::pow(1.0 - beta, static_cast<double>(i)));
      power = matmul(power, a);
    }
    op += power * std::pow(1.0 - beta, static_cast<double>(k));
    CHECK(max_abs_diff(diffuse_iterative(a, f, beta, k), matmul(op, f)) < 1e-13);
  }
}

TEST_CASE("aggregate examples") {
  const Matrix f{{1.0, 2.0}, {0.5, 0.0}};
  CHECK(aggregate(Matrix::identity(2), f, Matrix::identity(2)) == f);
  CHECK(aggregate(Matrix::identity(2), Matrix{{-1.0, 2.0}, {0.5, -3.0}}, Matrix::identity(2)) ==
        Matrix{{0.0, 2.0}, {0.5, 0.0}});
  CHECK(aggregate(Matrix{{0.5, 0.5}, {0.5, 0.5}}, Matrix{{2.0}, {0.0}}, Matrix{{1.0}}) == Matrix{{1.0}, {1.0}});
  CHECK_THROWS_AS(aggregate(Matrix::identity(3), f, Matrix::identity(2)), Error);
}

TEST_CASE("Jacobi eigen examples") {
  const auto d = symmetric_eigen(Matrix{{3, 0, 0}, {0, 1, 0}, {0, 0, 2}});
  CHECK(d.values == std::vector<double>{1, 2, 3});
  const auto s = symmetric_eigen(Matrix{{0, 1}, {1, 0}});
  CHECK(s.values[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(s.values[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(symmetric_eigen(Matrix{{0, 1}, {0, 0}}), Error);
}

TEST_CASE("Jacobi agrees with Eigen's self-adjoint solver and reconstructs the input") {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix m = testing::random_symmetric(rng, 25);
    const auto ours = symmetric_eigen(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(to_eigen(m));
    for (std::size_t k = 0; k < 25; ++k)
      CHECK(std::abs(ours.values[k] - oracle.eigenvalues()(static_cast<Eigen::Index>(k))) < 1e-10);

    Matrix lambda(25, 25);
    for (std::size_t k = 0; k < 25; ++k) lambda(k, k) = ours.values[k];
    const Matrix rebuilt = matmul(matmul(ours.vectors, lambda), ours.vectors.transpose());
    CHECK(max_abs_diff(rebuilt, m) < 1e-10);
    const Matrix gram = matmul(ours.vectors.transpose(), ours.vectors);
    CHECK(max_abs_diff(gram, Matrix::identity(25)) < 1e-12);
  }
}

TEST_CASE("eigen relation on symmetric-normalized matrices") {
  std::mt19937_64 rng(31);
  const Matrix a = testing::random_symmetric_normalized(rng, 12);
  const auto report = verify_eigen_relation(a, 0.5, 200);
  CHECK(report.max_eig_residual < 1e-10);
  CHECK(report.max_eigvec_residual < 1e-10);
  CHECK(report.lambda.back() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.lambda_predicted.back() == doctest::Approx(1.0).epsilon(1e-12));

  // Fixed points of the relation: lambda 1 -> 1, 0 -> beta, -1 -> beta / (2 - beta).
  const auto diag = verify_eigen_relation(Matrix{{1, 0, 0}, {0, 0, 0}, {0, 0, -1}}, 0.5, 200);
  CHECK(diag.lambda_predicted[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(diag.lambda_predicted[1] == 0.5);
  CHECK(diag.lambda_predicted[2] == 1.0);
  CHECK(diag.max_eig_residual < 1e-15);

  // Short truncation respects the documented bound.
  const auto short_sum = verify_eigen_relation(a, 0.5, 3);
  CHECK(short_sum.max_eig_residual <= short_sum.truncation_bound * (1.0 + 1e-12));

  try {
    verify_eigen_relation(Matrix{{2, 0}, {0, 0}}, 0.5, 10);
    FAIL("expected SpectrumOutOfRange");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SpectrumOutOfRange);
  }
}

TEST_CASE("diffused operator shares eigenvectors up to sign") {
  std::mt19937_64 rng(44);
  const Matrix a = testing::random_symmetric_normalized(rng, 8);
  const auto ea = symmetric_eigen(a);
  const auto es = symmetric_eigen(multi_hop_exact(a, 0.3, 60));
  for (std::size_t k = 0; k < 8; ++k) {
    double dot = 0.0;
    for (std::size_t r = 0; r < 8; ++r) dot += ea.vectors(r, k) * es.vectors(r, k);
    CHECK(std::abs(std::abs(dot) - 1.0) < 1e-8);
  }
}

TEST_CASE("Laplacian ratio") {
  CHECK(laplacian_ratio(1.0, 0.5).ratio == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(laplacian_ratio(2.0, 0.5).ratio == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto limit = laplacian_ratio(0.0, 0.5);
  CHECK(limit.limit);
  CHECK(limit.ratio == 1.0);
  // Larger Laplacian eigenvalues are damped more.
  for (double beta : {0.1, 0.5, 0.9})
    for (int i = 1; i < 20; ++i) CHECK(laplacian_ratio(0.1 * (i + 1), beta).ratio < laplacian_ratio(0.1 * i, beta).ratio);
  for (double lg = 0.1; lg <= 2.0; lg += 0.1) {
    const double r = laplacian_ratio(lg, 0.3).ratio;
    if (0.3 / 0.7 + lg > 1.0) CHECK(r < 1.0);
  }
  CHECK_THROWS_AS(laplacian_ratio(2.5, 0.5), Error);
  CHECK_THROWS_AS(laplacian_ratio(1.0, 1.0), Error);
}

TEST_CASE("degree stats") {
  std::mt19937_64 rng(2);
  const auto stochastic = degree_stats(testing::random_row_normalized_symmetric(rng, 5));
  for (double q : stochastic.degree) CHECK(q == doctest::Approx(1.0).epsilon(1e-14));
  REQUIRE(stochastic.normalized_eig_range);
  CHECK(stochastic.normalized_eig_range->second == doctest::Approx(1.0).epsilon(1e-12));

  const auto ident = degree_stats(Matrix::identity(3));
  CHECK(ident.degree == std::vector<double>{1, 1, 1});

  const auto small = degree_stats(Matrix{{0.1, 0.1}, {0.1, 0.1}});
  CHECK(small.degree[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(small.degree[1] == doctest::Approx(0.2).epsilon(1e-15));

  const auto zero = degree_stats(Matrix{{0.0, 0.0}, {0.0, 1.0}});
  CHECK(zero.zero_degree);
  CHECK_FALSE(zero.normalized_eig_range);
}

TEST_CASE("normalized physical adjacency has spectrum in [-1, 1]") {
  const Matrix a = normalized_physical_adjacency(25);
  CHECK(is_symmetric(a, 1e-15));
  const auto e = symmetric_eigen(a);
  CHECK(e.values.front() >= -1.0 - 1e-12);
  CHECK(e.values.back() == doctest::Approx(1.0).epsilon(1e-12));
}
