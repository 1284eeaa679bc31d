#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kinegraph/bone_select.hpp"
#include "kinegraph/error.hpp"
#include "kinegraph/mha_gc.hpp"
#include "kinegraph/micro_train.hpp"
#include "kinegraph/model.hpp"
#include "kinegraph/prior_graphs.hpp"
#include "kinegraph/skeleton_io.hpp"

namespace py = pybind11;
using namespace kinegraph;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw Error(ErrorKind::DimensionMismatch, "expected a 2-D array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

SkeletonSequence to_sequence(const Array& a) {
  if (a.ndim() != 3) throw Error(ErrorKind::DimensionMismatch, "expected a (frames, joints, dims) array");
  SkeletonSequence s = SkeletonSequence::zeros(a.shape(0), a.shape(1), a.shape(2));
  std::copy(a.data(), a.data() + a.size(), s.data.begin());
  return s;
}

Array sequence_array(const SkeletonSequence& s) {
  Array out({s.frames, s.joints, s.dims});
  std::copy(s.data.begin(), s.data.end(), out.mutable_data());
  return out;
}

// Structured results cross the boundary as JSON text; the Python package
// decodes them.
std::string dump(const Json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Skeleton graph toolkit core";

  // Messages start with the error kind, e.g. "ShapeMismatch: ...".
  py::register_exception<Error>(m, "KinegraphError");

  m.def("parse_ntu", [](const std::string& path) {
    std::vector<Array> out;
    for (const auto& s : parse_ntu_file(path)) out.push_back(sequence_array(s));
    return out;
  }, py::arg("path"), "Parse an NTU .skeleton file into one (T, V, 3) array per body.");
  m.def("parse_ntu_text", [](const std::string& text) {
    std::vector<Array> out;
    for (const auto& s : parse_ntu_text(text)) out.push_back(sequence_array(s));
    return out;
  });
  m.def("canonical_round_trip", [](const std::string& path) {
    const auto seq = parse_ntu_file(path).front();
    return write_canonical(seq, FloatFormat::Full);
  }, "Canonical JSON text of the first body in an NTU file.");
  m.def("preprocess", [](const Array& x, std::size_t frames, std::size_t center) {
    return sequence_array(preprocess(to_sequence(x), {frames, center}));
  }, py::arg("x"), py::arg("frames") = 64, py::arg("center_joint") = 0);

  m.def("build_graphs_json", [](const std::string& embeddings) {
    const auto table = EmbeddingTable::load(embeddings);
    return std::make_pair(dump(build_gpr(class_centroids(table)).to_json()), dump(build_templates(table).to_json()));
  });

  m.def("bone_std_matrix", [](const Array& x) { return to_array(bone_std_matrix(to_sequence(x))); });
  m.def("select_bones", [](const Array& scores, std::size_t base, bool maximize) {
    const CandidateScores s{to_matrix(scores), 1};
    const BoneMatrix b = maximize ? select_max_assignment(s, base) : select_min_assignment(s, base);
    return std::make_pair(b.sources(), assignment_cost(s, b));
  }, py::arg("scores"), py::arg("base"), py::arg("maximize") = false,
     "Source joint per target (-1 at the base) and the total cost.");
  m.def("brute_force_select", [](const Array& scores, std::size_t base) {
    const CandidateScores s{to_matrix(scores), 1};
    const BoneMatrix b = brute_force_select(s, base);
    return std::make_pair(b.sources(), assignment_cost(s, b));
  });

  m.def("decay_weights", &decay_weights, py::arg("beta"), py::arg("hops"));
  m.def("multi_hop_exact", [](const Array& a, double beta, std::size_t hops) {
    return to_array(multi_hop_exact(to_matrix(a), beta, hops));
  }, py::arg("abar"), py::arg("beta"), py::arg("hops"));
  m.def("diffuse_iterative", [](const Array& a, const Array& f, double beta, std::size_t k) {
    return to_array(diffuse_iterative(to_matrix(a), to_matrix(f), beta, k));
  }, py::arg("abar"), py::arg("features"), py::arg("beta"), py::arg("iterations"));
  m.def("eigen_relation_json", [](const Array& a, double beta, std::size_t trunc) {
    return dump(verify_eigen_relation(to_matrix(a), beta, trunc).to_json());
  });
  m.def("laplacian_ratio", [](double lambda_g, double beta) { return laplacian_ratio(lambda_g, beta).ratio; });

  m.def("parameter_count", [](const std::string& config_json) {
    return parameter_count(ModelConfig::from_json(Json::parse(config_json)));
  }, py::arg("config_json") = "{}");
  m.def("ensemble", [](const std::vector<Array>& streams) {
    std::vector<Matrix> ms;
    for (const auto& s : streams) ms.push_back(to_matrix(s));
    const auto r = ensemble_scores(ms);
    return std::make_pair(to_array(r.fused), r.predictions);
  });
  m.def("micro_train_json", [](const std::string& config_path, std::uint64_t seed, std::optional<std::size_t> steps) {
    MicroTrainConfig cfg = MicroTrainConfig::load(config_path);
    if (steps) cfg.steps = *steps;
    const auto data = synthetic_dataset(cfg.model, cfg.samples_per_class, cfg.noise, cfg.data_seed);
    const auto templates = build_templates(EmbeddingTable::load(cfg.embeddings));
    py::gil_scoped_release release;
    return dump(micro_train(data, templates, cfg, seed).trace.to_json());
  }, py::arg("config_path"), py::arg("seed") = 0, py::arg("steps") = py::none());
}
