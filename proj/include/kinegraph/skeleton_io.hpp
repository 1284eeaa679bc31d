#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "kinegraph/bone_matrix.hpp"
#include "kinegraph/json_io.hpp"

namespace kinegraph {

// T x V x d coordinate tensor, stored frame-major then joint then coordinate.
struct SkeletonSequence {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t dims = 0;
  std::vector<double> data;
  std::optional<int> label;
  std::string subject;
  std::string body;
  // Set when some frames had no record for this body and were zero-filled.
  bool missing_frames = false;
  // Set when a single-frame input was repeated during resampling.
  bool repeated_frame = false;

  static SkeletonSequence zeros(std::size_t frames, std::size_t joints, std::size_t dims);

  double& at(std::size_t t, std::size_t v, std::size_t k) { return data[(t * joints + v) * dims + k]; }
  double at(std::size_t t, std::size_t v, std::size_t k) const { return data[(t * joints + v) * dims + k]; }

  // Frame t as a V x d matrix.
  Matrix frame(std::size_t t) const;
  void set_frame(std::size_t t, const Matrix& m);

  // Throws SchemaViolation on shape mismatch or non-finite values.
  void validate() const;
};

struct PreprocessConfig {
  std::size_t target_frames = 64;
  std::size_t center_joint = 0;
};

// NTU-style .skeleton text. One sequence per body slot, in slot order.
std::vector<SkeletonSequence> parse_ntu_text(std::istream& source);
std::vector<SkeletonSequence> parse_ntu_text(const std::string& text);
std::vector<SkeletonSequence> parse_ntu_file(const std::filesystem::path& path);

SkeletonSequence read_canonical(const Json& doc);
SkeletonSequence read_canonical(const std::string& text);
Json canonical_json(const SkeletonSequence& seq);
std::string write_canonical(const SkeletonSequence& seq, FloatFormat fmt = FloatFormat::Full);

// Resample to cfg.target_frames by linear interpolation over normalized time,
// then translate so that cfg.center_joint of frame 0 sits at the origin.
SkeletonSequence preprocess(const SkeletonSequence& seq, const PreprocessConfig& cfg);

// Per frame (I - B^T) X_t: each non-base joint becomes x_target - x_source.
SkeletonSequence bone_stream(const SkeletonSequence& seq, const BoneMatrix& bones);

// Frame t holds X_{t+1} - X_t; the last frame is zero.
SkeletonSequence motion_stream(const SkeletonSequence& seq);

// Loads every *.json (canonical) and *.skeleton (NTU, first body) file in a
// directory, sorted by file name.
// Sorted .json / .skeleton files in dir, excluding run manifests.
std::vector<std::filesystem::path> sequence_files(const std::filesystem::path& dir);
std::vector<SkeletonSequence> load_sequence_dir(const std::filesystem::path& dir);
SkeletonSequence load_sequence_file(const std::filesystem::path& path);

}  // namespace kinegraph
