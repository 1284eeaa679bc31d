#include "kinegraph/skeleton_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kinegraph/error.hpp"

namespace kinegraph {

SkeletonSequence SkeletonSequence::zeros(std::size_t frames, std::size_t joints, std::size_t dims) {
  SkeletonSequence s;
  s.frames = frames;
  s.joints = joints;
  s.dims = dims;
  s.data.assign(frames * joints * dims, 0.0);
  return s;
}

Matrix SkeletonSequence::frame(std::size_t t) const {
  Matrix m(joints, dims);
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(t * joints * dims), joints * dims, m.data().begin());
  return m;
}

void SkeletonSequence::set_frame(std::size_t t, const Matrix& m) {
  if (m.rows() != joints || m.cols() != dims) throw Error(ErrorKind::DimensionMismatch, "frame shape");
  std::copy(m.data().begin(), m.data().end(), data.begin() + static_cast<std::ptrdiff_t>(t * joints * dims));
}

void SkeletonSequence::validate() const {
  if (frames < 1) throw SchemaError("/frames", "must be >= 1");
  if (joints < 2) throw SchemaError("/joints", "must be >= 2");
  if (dims < 1) throw SchemaError("/dims", "must be >= 1");
  if (data.size() != frames * joints * dims) throw SchemaError("/data", "size does not match frames*joints*dims");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      const std::size_t t = i / (joints * dims), v = (i / dims) % joints, k = i % dims;
      throw SchemaError("/data/" + std::to_string(t) + "/" + std::to_string(v) + "/" + std::to_string(k),
                        "non-finite value");
    }
  }
  if (label && *label < 0) throw SchemaError("/label", "must be >= 0");
}

// ---------------------------------------------------------------------------
// NTU text

namespace {

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  // Next non-blank line split into tokens; false at EOF.
  bool next(std::vector<std::string_view>& tokens) {
    while (std::getline(in_, line_)) {
      ++number_;
      tokens.clear();
      std::size_t i = 0;
      while (i < line_.size()) {
        while (i < line_.size() && std::isspace(static_cast<unsigned char>(line_[i]))) ++i;
        std::size_t j = i;
        while (j < line_.size() && !std::isspace(static_cast<unsigned char>(line_[j]))) ++j;
        if (j > i) tokens.emplace_back(line_.data() + i, j - i);
        i = j;
      }
      if (!tokens.empty()) return true;
    }
    return false;
  }

  std::size_t number() const noexcept { return number_; }

 private:
  std::istream& in_;
  std::string line_;
  std::size_t number_ = 0;
};

bool parse_count(std::string_view tok, long& out) {
  const char* end = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(tok.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_real(std::string_view tok, double& out) {
  const char* begin = tok.data();
  if (!tok.empty() && tok.front() == '+') ++begin;
  const char* end = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && p == end && std::isfinite(out);
}

struct BodyTrack {
  std::string id;
  std::size_t joints = 0;
  std::vector<std::optional<std::vector<double>>> frames;
};

}  // namespace

std::vector<SkeletonSequence> parse_ntu_text(std::istream& source) {
  LineReader reader(source);
  std::vector<std::string_view> tok;

  auto expect_count = [&](const char* what) -> long {
    if (!reader.next(tok)) throw ParseError(ErrorKind::MalformedLine, reader.number() + 1, what);
    long n = 0;
    if (tok.size() != 1 || !parse_count(tok[0], n) || n < 0)
      throw ParseError(ErrorKind::MalformedLine, reader.number(), what);
    return n;
  };

  if (!reader.next(tok)) throw Error(ErrorKind::EmptyFile, "no frame count");
  long frame_count = 0;
  if (tok.size() != 1 || !parse_count(tok[0], frame_count) || frame_count < 0)
    throw ParseError(ErrorKind::MalformedLine, reader.number(), "integer frame count");
  if (frame_count == 0) throw Error(ErrorKind::EmptyFile, "frame count is 0");

  const auto frames = static_cast<std::size_t>(frame_count);
  std::vector<BodyTrack> bodies;

  for (std::size_t f = 0; f < frames; ++f) {
    const long body_count = expect_count("integer body count");
    for (long b = 0; b < body_count; ++b) {
      if (!reader.next(tok)) throw ParseError(ErrorKind::MalformedLine, reader.number() + 1, "body header line");
      const std::string id(tok.front());

      const long joint_count = expect_count("integer joint count");
      if (joint_count < 1) throw ParseError(ErrorKind::MalformedLine, reader.number(), "positive joint count");

      const auto slot = static_cast<std::size_t>(b);
      if (slot >= bodies.size()) {
        bodies.resize(slot + 1);
        bodies[slot].frames.resize(frames);
      }
      BodyTrack& track = bodies[slot];
      if (track.joints == 0) {
        track.joints = static_cast<std::size_t>(joint_count);
        track.id = id;
      } else if (track.joints != static_cast<std::size_t>(joint_count)) {
        throw ParseError(ErrorKind::JointCountMismatch, reader.number(),
                         std::to_string(track.joints) + " joints for body slot " + std::to_string(slot) +
                             " (got " + std::to_string(joint_count) + ")");
      }

      std::vector<double> coords;
      coords.reserve(track.joints * 3);
      for (long j = 0; j < joint_count; ++j) {
        if (!reader.next(tok))
          throw ParseError(ErrorKind::MalformedLine, reader.number() + 1, "joint line with at least 3 reals");
        if (tok.size() < 3) throw ParseError(ErrorKind::MalformedLine, reader.number(), "joint line with at least 3 reals");
        for (std::size_t k = 0; k < 3; ++k) {
          double v = 0.0;
          if (!parse_real(tok[k], v)) throw ParseError(ErrorKind::MalformedLine, reader.number(), "real coordinate");
          coords.push_back(v);
        }
      }
      track.frames[f] = std::move(coords);
    }
  }
  if (reader.next(tok)) throw ParseError(ErrorKind::MalformedLine, reader.number(), "end of file");
  if (bodies.empty()) throw Error(ErrorKind::EmptyFile, "no tracked bodies");

  std::vector<SkeletonSequence> out;
  for (std::size_t slot = 0; slot < bodies.size(); ++slot) {
    const BodyTrack& track = bodies[slot];
    SkeletonSequence seq = SkeletonSequence::zeros(frames, track.joints, 3);
    seq.body = track.id;
    for (std::size_t f = 0; f < frames; ++f) {
      if (!track.frames[f]) {
        seq.missing_frames = true;
        continue;
      }
      std::copy(track.frames[f]->begin(), track.frames[f]->end(),
                seq.data.begin() + static_cast<std::ptrdiff_t>(f * track.joints * 3));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<SkeletonSequence> parse_ntu_text(const std::string& text) {
  std::istringstream in(text);
  return parse_ntu_text(in);
}

std::vector<SkeletonSequence> parse_ntu_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  auto seqs = parse_ntu_text(in);
  for (auto& s : seqs) s.subject = path.stem().string();
  return seqs;
}

// ---------------------------------------------------------------------------
// Canonical JSON

namespace {

std::size_t required_count(const Json& doc, const char* key) {
  const std::string path = std::string("/") + key;
  if (!doc.contains(key)) throw SchemaError(path);
  const Json& v = doc[key];
  if (!v.is_number_integer() || v.get<long long>() < 0) throw SchemaError(path, "must be a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

SkeletonSequence read_canonical(const Json& doc) {
  if (!doc.is_object()) throw SchemaError("", "document must be an object");
  if (!doc.contains("version")) throw SchemaError("/version");
  if (doc["version"] != 1) throw SchemaError("/version", "unsupported version");

  SkeletonSequence seq;
  seq.frames = required_count(doc, "frames");
  seq.joints = required_count(doc, "joints");
  seq.dims = required_count(doc, "dims");
  if (doc.contains("label") && !doc["label"].is_null()) {
    if (!doc["label"].is_number_integer()) throw SchemaError("/label", "must be an integer or null");
    seq.label = doc["label"].get<int>();
  }
  if (!doc.contains("data")) throw SchemaError("/data");
  const Json& data = doc["data"];
  if (!data.is_array() || data.size() != seq.frames) throw SchemaError("/data", "must hold `frames` entries");

  seq.data.reserve(seq.frames * seq.joints * seq.dims);
  for (std::size_t t = 0; t < seq.frames; ++t) {
    const std::string tp = "/data/" + std::to_string(t);
    if (!data[t].is_array() || data[t].size() != seq.joints) throw SchemaError(tp, "must hold `joints` entries");
    for (std::size_t v = 0; v < seq.joints; ++v) {
      const std::string vp = tp + "/" + std::to_string(v);
      const Json& joint = data[t][v];
      if (!joint.is_array() || joint.size() != seq.dims) throw SchemaError(vp, "must hold `dims` numbers");
      for (std::size_t k = 0; k < seq.dims; ++k) {
        if (!joint[k].is_number()) throw SchemaError(vp + "/" + std::to_string(k), "must be a number");
        seq.data.push_back(joint[k].get<double>());
      }
    }
  }
  seq.validate();
  return seq;
}

SkeletonSequence read_canonical(const std::string& text) { return read_canonical(parse_json_text(text)); }

Json canonical_json(const SkeletonSequence& seq) {
  seq.validate();
  Json data = Json::array();
  for (std::size_t t = 0; t < seq.frames; ++t) {
    Json frame = Json::array();
    for (std::size_t v = 0; v < seq.joints; ++v) {
      Json joint = Json::array();
      for (std::size_t k = 0; k < seq.dims; ++k) joint.push_back(seq.at(t, v, k));
      frame.push_back(std::move(joint));
    }
    data.push_back(std::move(frame));
  }
  Json doc{{"version", 1}, {"frames", seq.frames}, {"joints", seq.joints}, {"dims", seq.dims}, {"data", data}};
  doc["label"] = seq.label ? Json(*seq.label) : Json(nullptr);
  return doc;
}

std::string write_canonical(const SkeletonSequence& seq, FloatFormat fmt) {
  return canonical_dump(canonical_json(seq), fmt);
}

// ---------------------------------------------------------------------------
// Derived streams

SkeletonSequence preprocess(const SkeletonSequence& seq, const PreprocessConfig& cfg) {
  seq.validate();
  if (cfg.target_frames < 1) throw Error(ErrorKind::InvalidArgument, "target_frames must be >= 1");
  if (cfg.center_joint >= seq.joints) throw Error(ErrorKind::InvalidArgument, "center_joint out of range");

  const std::size_t out_frames = cfg.target_frames;
  SkeletonSequence out = SkeletonSequence::zeros(out_frames, seq.joints, seq.dims);
  out.label = seq.label;
  out.subject = seq.subject;
  out.body = seq.body;
  out.missing_frames = seq.missing_frames;
  out.repeated_frame = seq.frames == 1 && out_frames > 1;

  const std::size_t stride = seq.joints * seq.dims;
  for (std::size_t k = 0; k < out_frames; ++k) {
    // Source position on [0, T-1] for normalized time k / (T' - 1).
    double pos = 0.0;
    if (out_frames > 1 && seq.frames > 1)
      pos = static_cast<double>(k) * static_cast<double>(seq.frames - 1) / static_cast<double>(out_frames - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= seq.frames - 1) lo = seq.frames - 1;
    const std::size_t hi = std::min(lo + 1, seq.frames - 1);
    const double w = pos - static_cast<double>(lo);
    for (std::size_t i = 0; i < stride; ++i) {
      const double a = seq.data[lo * stride + i];
      const double b = seq.data[hi * stride + i];
      out.data[k * stride + i] = w == 0.0 ? a : a + w * (b - a);
    }
  }

  std::vector<double> origin(seq.dims);
  for (std::size_t d = 0; d < seq.dims; ++d) origin[d] = out.at(0, cfg.center_joint, d);
  for (std::size_t t = 0; t < out_frames; ++t)
    for (std::size_t v = 0; v < seq.joints; ++v)
      for (std::size_t d = 0; d < seq.dims; ++d) out.at(t, v, d) -= origin[d];
  return out;
}

SkeletonSequence bone_stream(const SkeletonSequence& seq, const BoneMatrix& bones) {
  if (bones.joints() != seq.joints)
    throw Error(ErrorKind::DimensionMismatch, "bone matrix over " + std::to_string(bones.joints()) +
                                                  " joints applied to a " + std::to_string(seq.joints) +
                                                  "-joint sequence");
  SkeletonSequence out = seq;
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t v = 0; v < seq.joints; ++v) {
      const long src = bones.source_of(v);
      if (src == BoneMatrix::kNoSource) continue;
      for (std::size_t d = 0; d < seq.dims; ++d)
        out.at(t, v, d) = seq.at(t, v, d) - seq.at(t, static_cast<std::size_t>(src), d);
    }
  return out;
}

SkeletonSequence motion_stream(const SkeletonSequence& seq) {
  SkeletonSequence out = seq;
  const std::size_t stride = seq.joints * seq.dims;
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t i = 0; i < stride; ++i)
      out.data[t * stride + i] = t + 1 < seq.frames ? seq.data[(t + 1) * stride + i] - seq.data[t * stride + i] : 0.0;
  return out;
}

SkeletonSequence load_sequence_file(const std::filesystem::path& path) {
  if (path.extension() == ".skeleton") {
    auto seqs = parse_ntu_file(path);
    return std::move(seqs.front());
  }
  SkeletonSequence seq = read_canonical(read_json_file(path));
  seq.subject = path.stem().string();
  return seq;
}

std::vector<std::filesystem::path> sequence_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::Io, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto& p = entry.path();
    const auto ext = p.extension();
    // Run manifests sit next to their outputs; never treat them as samples.
    if (p.filename().string().ends_with(".manifest.json")) continue;
    if (entry.is_regular_file() && (ext == ".json" || ext == ".skeleton")) files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<SkeletonSequence> load_sequence_dir(const std::filesystem::path& dir) {
  std::vector<SkeletonSequence> out;
  for (const auto& f : sequence_files(dir)) out.push_back(load_sequence_file(f));
  return out;
}

}  // namespace kinegraph
