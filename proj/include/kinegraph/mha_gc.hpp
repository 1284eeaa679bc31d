#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "kinegraph/json_io.hpp"
#include "kinegraph/matrix.hpp"

namespace kinegraph {

// ---------------------------------------------------------------------------
// Baseline graph convolution

// Lambda^{-1/2} A Lambda^{-1/2} with Lambda_ii = sum_j A_ij + alpha.
Matrix normalize_adjacency(const Matrix& adjacency, double alpha = 0.001);

// sum_s norm(A_s) F W_s. Each W_s is C_in x C_out.
Matrix gc_baseline(const Matrix& features, const std::vector<Matrix>& partitions, const std::vector<Matrix>& weights,
                   double alpha = 0.001);

// Undirected skeleton edges: the Kinect v2 layout for V = 25, a chain otherwise.
std::vector<std::pair<std::size_t, std::size_t>> skeleton_edges(std::size_t joints);

// Root / centripetal / centrifugal partitions by hop distance to `center`.
std::vector<Matrix> spatial_partitions(std::size_t joints, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                                       std::size_t center);

// D^{-1/2} (A + I) D^{-1/2} over the skeleton edges.
Matrix normalized_physical_adjacency(std::size_t joints);

// ---------------------------------------------------------------------------
// Attention and diffusion

struct AttentionParams {
  Matrix shared;            // V x V shared topology
  double gamma = 0.0;       // refinement weight
  Matrix query;             // C x R
  Matrix key;               // C x R
  std::vector<double> w3;   // R -> 1 reduction

  std::size_t reduce_dim() const noexcept { return query.cols(); }
};

struct AttentionStack {
  std::vector<Matrix> a_tilde;  // R x (V x V), tanh(M_ir - N_jr)
  Matrix a_bar;                 // shared + gamma * sum_r w3_r a_tilde_r
  std::optional<Matrix> a_script;
};

// `features` is V x C, already pooled over time.
AttentionStack one_hop_attention(const Matrix& features, const AttentionParams& params);

enum class DiffusionMode { ExactPowerSum, Iterative };

struct DiffusionConfig {
  double beta = 0.5;
  std::size_t hops = 4;
  DiffusionMode mode = DiffusionMode::ExactPowerSum;
  std::size_t iterations = 20;

  void validate() const;
};

// w_i = beta (1 - beta)^i for i = 0..hops.
std::vector<double> decay_weights(double beta, std::size_t hops);

// sum_{i=0}^{hops} w_i A^i with A^0 = I.
Matrix multi_hop_exact(const Matrix& a_bar, double beta, std::size_t hops);

// K steps of E <- (1 - beta) A E + beta F starting from E = F.
Matrix diffuse_iterative(const Matrix& a_bar, const Matrix& features, double beta, std::size_t iterations);

// ReLU(A F W4)
Matrix aggregate(const Matrix& a_script, const Matrix& features, const Matrix& w4);

// ---------------------------------------------------------------------------
// Spectral verification

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column k pairs with values[k]
  std::size_t sweeps = 0;
};

// Cyclic Jacobi. Throws NotSymmetric beyond 1e-10 asymmetry.
EigenDecomposition symmetric_eigen(const Matrix& m);

// (A + A^T) / 2 followed by Q^{-1/2} . Q^{-1/2} with Q the row sums of the
// symmetrized matrix. Throws ZeroDegree when some q_i <= 0.
Matrix spectral_normalize(const Matrix& a_bar);

struct EigenRelationReport {
  double beta = 0.0;
  std::size_t truncation = 0;
  std::vector<double> lambda;            // eigenvalues of A, ascending
  std::vector<double> lambda_predicted;  // beta / (1 - (1 - beta) lambda)
  std::vector<double> lambda_diffused;   // eigenvalues of the truncated power sum
  double max_eig_residual = 0.0;
  double max_eigvec_residual = 0.0;      // max_i |S u_i - predicted_i u_i|_inf
  double truncation_bound = 0.0;         // (1 - beta)^(truncation + 1)

  Json to_json() const;
};

// Input must be symmetric with spectrum in [-1, 1] (SpectrumOutOfRange).
EigenRelationReport verify_eigen_relation(const Matrix& a_bar, double beta, std::size_t truncation);

struct LaplacianRatio {
  double ratio = 0.0;          // diffused / one-hop Laplacian eigenvalue
  double lambda_bar_g = 0.0;   // 1 - beta / (1 - (1 - beta)(1 - lambda_g))
  bool limit = false;          // lambda_g == 0: ratio is the limit (1 - beta) / beta
};

LaplacianRatio laplacian_ratio(double lambda_g, double beta);

// Closed form 1 / (beta / (1 - beta) + lambda_g).
double laplacian_ratio_closed_form(double lambda_g, double beta);

struct DegreeReport {
  std::vector<double> degree;
  double min_degree = 0.0;
  double max_degree = 0.0;
  bool zero_degree = false;  // normalization skipped
  std::optional<std::pair<double, double>> normalized_eig_range;

  Json to_json() const;
};

DegreeReport degree_stats(const Matrix& a_bar);

}  // namespace kinegraph
