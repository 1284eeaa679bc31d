#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "kinegraph/json_io.hpp"
#include "kinegraph/matrix.hpp"

namespace kinegraph {

struct Bone {
  std::size_t source;
  std::size_t target;
  bool operator==(const Bone&) const = default;
};

// Source/target bone assignment over V joints.
//
// Dense form follows the convention mat[i][j] = 1 when joint i is the source
// of target joint j. The linear map applied to a frame X (V x d) is
// (I - mat^T), so row j of the result is x_j - x_source(j) and the base row
// stays at its raw coordinates.
//
// Construction checks the structural invariants that hold for any bone set
// (base has no source, no self bones, no unordered pair used twice).
// complete() additionally requires every non-base joint to have a source.
class BoneMatrix {
 public:
  static constexpr long kNoSource = -1;

  BoneMatrix() = default;
  BoneMatrix(std::size_t joints, std::size_t base, std::vector<long> source_of);

  static BoneMatrix empty(std::size_t joints, std::size_t base);
  static BoneMatrix from_bones(std::size_t joints, std::size_t base, const std::vector<Bone>& bones);

  std::size_t joints() const noexcept { return source_of_.size(); }
  std::size_t base() const noexcept { return base_; }
  long source_of(std::size_t target) const { return source_of_.at(target); }
  const std::vector<long>& sources() const noexcept { return source_of_; }

  bool complete() const;
  // Bones ordered by target index.
  std::vector<Bone> bones() const;

  Matrix dense() const;
  // I - dense()^T
  Matrix transform() const;

  Json to_json() const;
  static BoneMatrix from_json(const Json& j);

  bool operator==(const BoneMatrix&) const = default;

 private:
  std::size_t base_ = 0;
  std::vector<long> source_of_;
};

// The 24 physical bones of the 25-joint Kinect v2 layout, rooted at the
// spine-shoulder joint (index 20).
BoneMatrix ntu_physical_bones();

// Undirected physical edges of the 25-joint layout (0-based).
std::vector<std::pair<std::size_t, std::size_t>> ntu_physical_edges();

}  // namespace kinegraph
