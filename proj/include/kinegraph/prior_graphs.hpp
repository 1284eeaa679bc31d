#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kinegraph/bone_matrix.hpp"
#include "kinegraph/json_io.hpp"
#include "kinegraph/matrix.hpp"
#include "kinegraph/skeleton_io.hpp"

namespace kinegraph {

// Per-(class, joint) text embeddings, M x V x C row-major.
struct EmbeddingTable {
  std::size_t classes = 0;
  std::size_t joints = 0;
  std::size_t dim = 0;
  std::vector<double> vectors;
  std::string prompt;
  std::string encoder;
  std::vector<std::string> class_names;
  std::vector<std::string> joint_names;

  std::span<const double> vector(std::size_t cls, std::size_t joint) const {
    return {vectors.data() + (cls * joints + joint) * dim, dim};
  }

  void validate() const;

  static EmbeddingTable from_json(const Json& doc);
  static EmbeddingTable load(const std::filesystem::path& path);
  Json to_json() const;
};

// Pairwise Euclidean distances between class-centroid joint embeddings.
struct GprGraph {
  Matrix dist;

  std::size_t joints() const noexcept { return dist.rows(); }
  Json to_json() const;
  static GprGraph from_json(const Json& doc);
};

enum class SimilarityKind { Cosine };

// Per-class V x V joint similarity templates.
struct ClassTemplateSet {
  std::vector<Matrix> templates;
  SimilarityKind kind = SimilarityKind::Cosine;

  std::size_t classes() const noexcept { return templates.size(); }
  std::size_t joints() const noexcept { return templates.empty() ? 0 : templates.front().rows(); }
  Json to_json() const;
  static ClassTemplateSet from_json(const Json& doc);
};

// Row i = mean over classes of joint i's embedding (V x C).
Matrix class_centroids(const EmbeddingTable& table);

GprGraph build_gpr(const Matrix& centroids);

// Cosine similarity of joint embeddings within each class. Throws ZeroVector.
ClassTemplateSet build_templates(const EmbeddingTable& table);

// GPR-guided input representation: (I - B^T) X per frame with the selected bones.
SkeletonSequence weight_skeleton(const SkeletonSequence& seq, const BoneMatrix& selected);

}  // namespace kinegraph
