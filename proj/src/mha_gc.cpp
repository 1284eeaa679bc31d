#include "kinegraph/mha_gc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <string>

#include "kinegraph/bone_matrix.hpp"
#include "kinegraph/error.hpp"

namespace kinegraph {

namespace {

void require_square(const Matrix& m, const char* what) {
  if (!m.square() || m.rows() == 0) throw Error(ErrorKind::DimensionMismatch, std::string(what) + " must be square");
}

void require_beta(double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw Error(ErrorKind::InvalidArgument, "beta must lie in (0, 1]");
}

}  // namespace

Matrix normalize_adjacency(const Matrix& adjacency, double alpha) {
  require_square(adjacency, "adjacency");
  const std::size_t n = adjacency.rows();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = alpha;
    for (double a : adjacency.row(i)) deg += a;
    if (!(deg > 0.0)) throw Error(ErrorKind::ZeroDegree, "row " + std::to_string(i) + " has no mass");
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = inv_sqrt[i] * adjacency(i, j) * inv_sqrt[j];
  return out;
}

Matrix gc_baseline(const Matrix& features, const std::vector<Matrix>& partitions, const std::vector<Matrix>& weights,
                   double alpha) {
  if (partitions.empty()) throw Error(ErrorKind::InvalidArgument, "at least one partition is required");
  if (partitions.size() != weights.size())
    throw Error(ErrorKind::DimensionMismatch, "partition and weight counts differ");
  Matrix out;
  for (std::size_t s = 0; s < partitions.size(); ++s) {
    if (partitions[s].rows() != features.rows())
      throw Error(ErrorKind::DimensionMismatch, "partition " + std::to_string(s) + " does not match joint count");
    Matrix term = matmul(matmul(normalize_adjacency(partitions[s], alpha), features), weights[s]);
    if (s == 0)
      out = std::move(term);
    else
      out += term;
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> skeleton_edges(std::size_t joints) {
  if (joints == 25) return ntu_physical_edges();
  std::vector<std::pair<std::size_t, std::size_t>> chain;
  for (std::size_t v = 1; v < joints; ++v) chain.emplace_back(v, v - 1);
  return chain;
}

std::vector<Matrix> spatial_partitions(std::size_t joints,
                                       const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                                       std::size_t center) {
  if (center >= joints) throw Error(ErrorKind::InvalidArgument, "center joint out of range");
  std::vector<std::vector<std::size_t>> adj(joints);
  for (auto [a, b] : edges) {
    if (a >= joints || b >= joints) throw Error(ErrorKind::InvalidArgument, "edge endpoint out of range");
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  constexpr std::size_t kUnreached = static_cast<std::size_t>(-1);
  std::vector<std::size_t> hop(joints, kUnreached);
  std::queue<std::size_t> frontier;
  hop[center] = 0;
  frontier.push(center);
  while (!frontier.empty()) {
    const std::size_t v = frontier.front();
    frontier.pop();
    for (std::size_t w : adj[v])
      if (hop[w] == kUnreached) {
        hop[w] = hop[v] + 1;
        frontier.push(w);
      }
  }

  Matrix root = Matrix::identity(joints), centripetal(joints, joints), centrifugal(joints, joints);
  for (auto [a, b] : edges) {
    for (auto [i, j] : {std::pair{a, b}, std::pair{b, a}}) {
      // Node i aggregates from neighbour j.
      if (hop[j] < hop[i])
        centripetal(i, j) = 1.0;
      else if (hop[j] > hop[i])
        centrifugal(i, j) = 1.0;
      else
        root(i, j) = 1.0;
    }
  }
  return {root, centripetal, centrifugal};
}

Matrix normalized_physical_adjacency(std::size_t joints) {
  Matrix a = Matrix::identity(joints);
  for (auto [i, j] : skeleton_edges(joints)) a(i, j) = a(j, i) = 1.0;
  return normalize_adjacency(a, 0.0);
}

AttentionStack one_hop_attention(const Matrix& features, const AttentionParams& params) {
  const std::size_t joints = features.rows();
  const std::size_t reduce = params.reduce_dim();
  if (params.query.rows() != features.cols() || params.key.rows() != features.cols() ||
      params.key.cols() != reduce || params.w3.size() != reduce)
    throw Error(ErrorKind::DimensionMismatch, "attention projections do not match feature width");
  if (params.shared.rows() != joints || params.shared.cols() != joints)
    throw Error(ErrorKind::DimensionMismatch, "shared topology must be V x V");

  const Matrix m = matmul(features, params.query);
  const Matrix n = matmul(features, params.key);

  AttentionStack stack;
  stack.a_tilde.assign(reduce, Matrix(joints, joints));
  for (std::size_t r = 0; r < reduce; ++r)
    for (std::size_t i = 0; i < joints; ++i)
      for (std::size_t j = 0; j < joints; ++j) stack.a_tilde[r](i, j) = std::tanh(m(i, r) - n(j, r));

  stack.a_bar = params.shared;
  for (std::size_t i = 0; i < joints; ++i)
    for (std::size_t j = 0; j < joints; ++j) {
      double mix = 0.0;
      for (std::size_t r = 0; r < reduce; ++r) mix += params.w3[r] * stack.a_tilde[r](i, j);
      stack.a_bar(i, j) += params.gamma * mix;
    }
  return stack;
}

void DiffusionConfig::validate() const { require_beta(beta); }

std::vector<double> decay_weights(double beta, std::size_t hops) {
  require_beta(beta);
  std::vector<double> w(hops + 1);
  w[0] = beta;
  for (std::size_t i = 1; i <= hops; ++i) w[i] = w[i - 1] * (1.0 - beta);
  return w;
}

Matrix multi_hop_exact(const Matrix& a_bar, double beta, std::size_t hops) {
  require_square(a_bar, "attention");
  const auto w = decay_weights(beta, hops);
  Matrix power = Matrix::identity(a_bar.rows());
  Matrix sum = power * w[0];
  for (std::size_t i = 1; i <= hops; ++i) {
    power = matmul(power, a_bar);
    sum += power * w[i];
  }
  return sum;
}

Matrix diffuse_iterative(const Matrix& a_bar, const Matrix& features, double beta, std::size_t iterations) {
  require_square(a_bar, "attention");
  require_beta(beta);
  if (features.rows() != a_bar.rows()) throw Error(ErrorKind::DimensionMismatch, "features vs attention");
  const Matrix anchor = features * beta;
  Matrix state = features;
  for (std::size_t k = 0; k < iterations; ++k) {
    Matrix next = matmul(a_bar, state);
    next *= 1.0 - beta;
    next += anchor;
    state = std::move(next);
  }
  return state;
}

Matrix aggregate(const Matrix& a_script, const Matrix& features, const Matrix& w4) {
  Matrix out = matmul(matmul(a_script, features), w4);
  for (double& v : out.data()) v = std::max(0.0, v);
  return out;
}

EigenDecomposition symmetric_eigen(const Matrix& input) {
  require_square(input, "eigen input");
  if (!is_symmetric(input, 1e-10)) throw Error(ErrorKind::NotSymmetric, "asymmetry exceeds 1e-10");
  const std::size_t n = input.rows();
  Matrix a = input;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
  Matrix v = Matrix::identity(n);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  constexpr std::size_t kMaxSweeps = 100;
  EigenDecomposition out;
  while (out.sweeps < kMaxSweeps && off_norm() >= 1e-12) {
    ++out.sweeps;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

Matrix spectral_normalize(const Matrix& a_bar) {
  require_square(a_bar, "attention");
  const std::size_t n = a_bar.rows();
  Matrix sym = (a_bar + a_bar.transpose()) * 0.5;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double q = 0.0;
    for (double x : sym.row(i)) q += x;
    if (!(q > 0.0)) throw Error(ErrorKind::ZeroDegree, "degree of joint " + std::to_string(i) + " is not positive");
    inv_sqrt[i] = 1.0 / std::sqrt(q);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  return sym;
}

EigenRelationReport verify_eigen_relation(const Matrix& a_bar, double beta, std::size_t truncation) {
  require_beta(beta);
  const EigenDecomposition base = symmetric_eigen(a_bar);
  constexpr double kSlack = 1e-9;
  for (double l : base.values)
    if (l < -1.0 - kSlack || l > 1.0 + kSlack)
      throw Error(ErrorKind::SpectrumOutOfRange, "eigenvalue " + std::to_string(l) + " outside [-1, 1]");

  const Matrix diffused = multi_hop_exact(a_bar, beta, truncation);
  const EigenDecomposition diff_eig = symmetric_eigen((diffused + diffused.transpose()) * 0.5);

  EigenRelationReport report;
  report.beta = beta;
  report.truncation = truncation;
  report.lambda = base.values;
  report.lambda_diffused = diff_eig.values;
  for (double l : base.values) report.lambda_predicted.push_back(beta / (1.0 - (1.0 - beta) * l));
  // The map is increasing in lambda, so ascending order is preserved.
  std::vector<double> predicted_sorted = report.lambda_predicted;
  std::sort(predicted_sorted.begin(), predicted_sorted.end());
  for (std::size_t i = 0; i < predicted_sorted.size(); ++i)
    report.max_eig_residual = std::max(report.max_eig_residual, std::abs(diff_eig.values[i] - predicted_sorted[i]));

  const std::size_t n = a_bar.rows();
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t r = 0; r < n; ++r) {
      double su = 0.0;
      for (std::size_t c = 0; c < n; ++c) su += diffused(r, c) * base.vectors(c, k);
      report.max_eigvec_residual =
          std::max(report.max_eigvec_residual, std::abs(su - report.lambda_predicted[k] * base.vectors(r, k)));
    }
  }
  report.truncation_bound = std::pow(1.0 - beta, static_cast<double>(truncation + 1));
  return report;
}

Json EigenRelationReport::to_json() const {
  return Json{{"beta", beta},
              {"truncation", truncation},
              {"lambda", lambda},
              {"lambda_predicted", lambda_predicted},
              {"lambda_diffused", lambda_diffused},
              {"max_eig_residual", max_eig_residual},
              {"max_eigvec_residual", max_eigvec_residual},
              {"truncation_bound", truncation_bound}};
}

LaplacianRatio laplacian_ratio(double lambda_g, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw Error(ErrorKind::DomainError, "beta must lie in (0, 1)");
  if (!(lambda_g >= 0.0 && lambda_g <= 2.0)) throw Error(ErrorKind::DomainError, "lambda_g must lie in [0, 2]");
  LaplacianRatio out;
  out.lambda_bar_g = 1.0 - beta / (1.0 - (1.0 - beta) * (1.0 - lambda_g));
  if (lambda_g == 0.0) {
    out.limit = true;
    out.ratio = (1.0 - beta) / beta;
  } else {
    out.ratio = out.lambda_bar_g / lambda_g;
  }
  return out;
}

double laplacian_ratio_closed_form(double lambda_g, double beta) { return 1.0 / (beta / (1.0 - beta) + lambda_g); }

DegreeReport degree_stats(const Matrix& a_bar) {
  require_square(a_bar, "attention");
  if (!all_finite(a_bar)) throw Error(ErrorKind::InvalidArgument, "attention has non-finite entries");
  DegreeReport out;
  for (std::size_t i = 0; i < a_bar.rows(); ++i) {
    double q = 0.0;
    for (double x : a_bar.row(i)) q += x;
    out.degree.push_back(q);
  }
  const auto [lo, hi] = std::minmax_element(out.degree.begin(), out.degree.end());
  out.min_degree = *lo;
  out.max_degree = *hi;
  out.zero_degree = *lo <= 0.0;
  if (!out.zero_degree) {
    try {
      const auto eig = symmetric_eigen(spectral_normalize(a_bar));
      out.normalized_eig_range = std::pair{eig.values.front(), eig.values.back()};
    } catch (const Error& e) {
      // Symmetrization can still produce a non-positive degree.
      if (e.kind() != ErrorKind::ZeroDegree) throw;
      out.zero_degree = true;
    }
  }
  return out;
}

Json DegreeReport::to_json() const {
  Json j{{"degree", degree}, {"min_degree", min_degree}, {"max_degree", max_degree}, {"zero_degree", zero_degree}};
  if (normalized_eig_range)
    j["normalized_eig_range"] = {normalized_eig_range->first, normalized_eig_range->second};
  else
    j["normalized_eig_range"] = nullptr;
  return j;
}

}  // namespace kinegraph
