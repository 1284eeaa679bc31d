#include "kinegraph/bone_matrix.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "kinegraph/error.hpp"

namespace kinegraph {

BoneMatrix::BoneMatrix(std::size_t joints, std::size_t base, std::vector<long> source_of)
    : base_(base), source_of_(std::move(source_of)) {
  if (joints < 2) throw Error(ErrorKind::InvalidArgument, "bone matrix needs at least 2 joints");
  if (source_of_.size() != joints) throw Error(ErrorKind::DimensionMismatch, "source table size != joints");
  if (base_ >= joints) throw Error(ErrorKind::InvalidArgument, "base joint out of range");
  if (source_of_[base_] != kNoSource)
    throw Error(ErrorKind::InvalidArgument, "base joint " + std::to_string(base_) + " has an incoming bone");

  std::set<std::pair<long, long>> used;
  for (std::size_t t = 0; t < joints; ++t) {
    const long s = source_of_[t];
    if (s == kNoSource) continue;
    if (s < 0 || static_cast<std::size_t>(s) >= joints)
      throw Error(ErrorKind::InvalidArgument, "source of joint " + std::to_string(t) + " out of range");
    if (static_cast<std::size_t>(s) == t)
      throw Error(ErrorKind::InvalidArgument, "joint " + std::to_string(t) + " is its own source");
    const std::pair<long, long> key{std::min(s, static_cast<long>(t)), std::max(s, static_cast<long>(t))};
    if (!used.insert(key).second)
      throw Error(ErrorKind::InvalidArgument, "pair {" + std::to_string(key.first) + "," +
                                                  std::to_string(key.second) + "} used twice");
  }
}

BoneMatrix BoneMatrix::empty(std::size_t joints, std::size_t base) {
  return BoneMatrix(joints, base, std::vector<long>(joints, kNoSource));
}

BoneMatrix BoneMatrix::from_bones(std::size_t joints, std::size_t base, const std::vector<Bone>& bones) {
  std::vector<long> source_of(joints, kNoSource);
  for (const Bone& b : bones) {
    if (b.target >= joints || b.source >= joints)
      throw Error(ErrorKind::InvalidArgument, "bone endpoint out of range");
    if (source_of[b.target] != kNoSource)
      throw Error(ErrorKind::InvalidArgument, "joint " + std::to_string(b.target) + " has two incoming bones");
    source_of[b.target] = static_cast<long>(b.source);
  }
  return BoneMatrix(joints, base, std::move(source_of));
}

bool BoneMatrix::complete() const {
  for (std::size_t t = 0; t < source_of_.size(); ++t)
    if (t != base_ && source_of_[t] == kNoSource) return false;
  return true;
}

std::vector<Bone> BoneMatrix::bones() const {
  std::vector<Bone> out;
  for (std::size_t t = 0; t < source_of_.size(); ++t)
    if (source_of_[t] != kNoSource) out.push_back({static_cast<std::size_t>(source_of_[t]), t});
  return out;
}

Matrix BoneMatrix::dense() const {
  Matrix m(joints(), joints());
  for (const Bone& b : bones()) m(b.source, b.target) = 1.0;
  return m;
}

Matrix BoneMatrix::transform() const {
  Matrix m = Matrix::identity(joints());
  for (const Bone& b : bones()) m(b.target, b.source) -= 1.0;
  return m;
}

Json BoneMatrix::to_json() const {
  Json pairs = Json::array();
  for (const Bone& b : bones()) pairs.push_back({b.source, b.target});
  return Json{{"joints", joints()}, {"base", base_}, {"pairs", pairs}};
}

BoneMatrix BoneMatrix::from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("", "bone matrix must be an object");
  if (!j.contains("base") || !j["base"].is_number_unsigned()) throw SchemaError("/base");
  if (!j.contains("pairs") || !j["pairs"].is_array()) throw SchemaError("/pairs");
  std::vector<Bone> bones;
  std::size_t max_index = j["base"].get<std::size_t>();
  for (std::size_t i = 0; i < j["pairs"].size(); ++i) {
    const Json& p = j["pairs"][i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned())
      throw SchemaError("/pairs/" + std::to_string(i), "must be [source, target]");
    Bone b{p[0].get<std::size_t>(), p[1].get<std::size_t>()};
    max_index = std::max({max_index, b.source, b.target});
    bones.push_back(b);
  }
  std::size_t joints = max_index + 1;
  if (j.contains("joints")) {
    if (!j["joints"].is_number_unsigned()) throw SchemaError("/joints");
    joints = j["joints"].get<std::size_t>();
  }
  return from_bones(joints, j["base"].get<std::size_t>(), bones);
}

std::vector<std::pair<std::size_t, std::size_t>> ntu_physical_edges() {
  // (child, parent), 1-based, Kinect v2 numbering.
  static constexpr std::pair<int, int> kPairs[] = {
      {1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},   {7, 6},   {8, 7},
      {9, 21},  {10, 9},  {11, 10}, {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15},
      {17, 1},  {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8},  {24, 25}, {25, 12}};
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (auto [c, p] : kPairs) out.emplace_back(static_cast<std::size_t>(c - 1), static_cast<std::size_t>(p - 1));
  return out;
}

BoneMatrix ntu_physical_bones() {
  std::vector<Bone> bones;
  for (auto [child, parent] : ntu_physical_edges()) bones.push_back({parent, child});
  return BoneMatrix::from_bones(25, 20, bones);
}

}  // namespace kinegraph
