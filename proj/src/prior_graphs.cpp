#include "kinegraph/prior_graphs.hpp"

#include <cmath>

#include "kinegraph/error.hpp"

namespace kinegraph {

namespace {

std::size_t header_count(const Json& doc, const char* key, std::size_t min_value) {
  const std::string path = std::string("/") + key;
  if (!doc.contains(key)) throw SchemaError(path);
  if (!doc[key].is_number_integer() || doc[key].get<long long>() < static_cast<long long>(min_value))
    throw SchemaError(path, "must be an integer >= " + std::to_string(min_value));
  return doc[key].get<std::size_t>();
}

std::vector<std::string> name_list(const Json& doc, const char* key, std::size_t expected) {
  const std::string path = std::string("/") + key;
  if (!doc.contains(key)) return {};
  const Json& arr = doc[key];
  if (!arr.is_array() || arr.size() != expected) throw SchemaError(path, "must list " + std::to_string(expected) + " names");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_string()) throw SchemaError(path + "/" + std::to_string(i), "must be a string");
    out.push_back(arr[i].get<std::string>());
  }
  return out;
}

const char* kind_name(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::Cosine: return "cosine";
  }
  return "cosine";
}

}  // namespace

void EmbeddingTable::validate() const {
  if (classes < 1) throw SchemaError("/classes", "must be >= 1");
  if (joints < 2) throw SchemaError("/joints", "must be >= 2");
  if (dim < 1) throw SchemaError("/dim", "must be >= 1");
  if (vectors.size() != classes * joints * dim) throw SchemaError("/vectors", "size mismatch");
  for (std::size_t i = 0; i < vectors.size(); ++i)
    if (!std::isfinite(vectors[i])) {
      const std::size_t m = i / (joints * dim), v = (i / dim) % joints, c = i % dim;
      throw SchemaError("/vectors/" + std::to_string(m) + "/" + std::to_string(v) + "/" + std::to_string(c),
                        "non-finite value");
    }
  if (!class_names.empty() && class_names.size() != classes) throw SchemaError("/class_names", "length mismatch");
  if (!joint_names.empty() && joint_names.size() != joints) throw SchemaError("/joint_names", "length mismatch");
}

EmbeddingTable EmbeddingTable::from_json(const Json& doc) {
  if (!doc.is_object()) throw SchemaError("", "document must be an object");
  if (!doc.contains("version")) throw SchemaError("/version");
  if (doc["version"] != 1) throw SchemaError("/version", "unsupported version");

  EmbeddingTable t;
  t.classes = header_count(doc, "classes", 1);
  t.joints = header_count(doc, "joints", 2);
  t.dim = header_count(doc, "dim", 1);
  if (doc.contains("prompt")) {
    if (!doc["prompt"].is_string()) throw SchemaError("/prompt", "must be a string");
    t.prompt = doc["prompt"].get<std::string>();
  }
  if (doc.contains("encoder")) {
    if (!doc["encoder"].is_string()) throw SchemaError("/encoder", "must be a string");
    t.encoder = doc["encoder"].get<std::string>();
  }
  t.class_names = name_list(doc, "class_names", t.classes);
  t.joint_names = name_list(doc, "joint_names", t.joints);

  if (!doc.contains("vectors")) throw SchemaError("/vectors");
  const Json& vecs = doc["vectors"];
  if (!vecs.is_array() || vecs.size() != t.classes) throw SchemaError("/vectors", "must hold `classes` entries");
  t.vectors.reserve(t.classes * t.joints * t.dim);
  for (std::size_t m = 0; m < t.classes; ++m) {
    const std::string mp = "/vectors/" + std::to_string(m);
    if (!vecs[m].is_array() || vecs[m].size() != t.joints) throw SchemaError(mp, "must hold `joints` entries");
    for (std::size_t v = 0; v < t.joints; ++v) {
      const std::string vp = mp + "/" + std::to_string(v);
      const Json& row = vecs[m][v];
      if (!row.is_array() || row.size() != t.dim) throw SchemaError(vp, "must hold `dim` numbers");
      for (std::size_t c = 0; c < t.dim; ++c) {
        if (!row[c].is_number()) throw SchemaError(vp + "/" + std::to_string(c), "must be a number");
        t.vectors.push_back(row[c].get<double>());
      }
    }
  }
  t.validate();
  return t;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

Json EmbeddingTable::to_json() const {
  Json vecs = Json::array();
  for (std::size_t m = 0; m < classes; ++m) {
    Json per_class = Json::array();
    for (std::size_t v = 0; v < joints; ++v) {
      auto span = vector(m, v);
      per_class.push_back(Json(std::vector<double>(span.begin(), span.end())));
    }
    vecs.push_back(std::move(per_class));
  }
  return Json{{"version", 1},           {"classes", classes},         {"joints", joints},
              {"dim", dim},             {"prompt", prompt},           {"encoder", encoder},
              {"class_names", class_names}, {"joint_names", joint_names}, {"vectors", vecs}};
}

Json GprGraph::to_json() const {
  return Json{{"version", 1}, {"kind", "euclidean"}, {"joints", joints()}, {"dist", matrix_to_json(dist)}};
}

GprGraph GprGraph::from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("dist")) throw SchemaError("/dist");
  GprGraph g{matrix_from_json(doc["dist"], "/dist")};
  if (!g.dist.square()) throw SchemaError("/dist", "must be square");
  if (!all_finite(g.dist)) throw SchemaError("/dist", "non-finite entry");
  for (std::size_t i = 0; i < g.joints(); ++i) {
    if (g.dist(i, i) != 0.0) throw SchemaError("/dist/" + std::to_string(i), "diagonal must be zero");
    for (std::size_t j = 0; j < g.joints(); ++j)
      if (g.dist(i, j) < 0.0) throw SchemaError("/dist/" + std::to_string(i) + "/" + std::to_string(j), "negative");
  }
  if (!is_symmetric(g.dist, 1e-9)) throw SchemaError("/dist", "must be symmetric");
  return g;
}

Json ClassTemplateSet::to_json() const {
  Json arr = Json::array();
  for (const Matrix& m : templates) arr.push_back(matrix_to_json(m));
  return Json{{"version", 1}, {"kind", kind_name(kind)}, {"classes", classes()}, {"joints", joints()},
              {"templates", arr}};
}

ClassTemplateSet ClassTemplateSet::from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("templates") || !doc["templates"].is_array())
    throw SchemaError("/templates");
  if (doc.contains("kind") && doc["kind"] != "cosine") throw SchemaError("/kind", "unsupported similarity kind");
  ClassTemplateSet set;
  const Json& arr = doc["templates"];
  for (std::size_t c = 0; c < arr.size(); ++c) {
    const std::string path = "/templates/" + std::to_string(c);
    Matrix m = matrix_from_json(arr[c], path);
    if (!m.square()) throw SchemaError(path, "must be square");
    if (!set.templates.empty() && m.rows() != set.joints()) throw SchemaError(path, "joint count differs");
    set.templates.push_back(std::move(m));
  }
  if (set.templates.empty()) throw SchemaError("/templates", "must not be empty");
  return set;
}

Matrix class_centroids(const EmbeddingTable& table) {
  table.validate();
  Matrix out(table.joints, table.dim);
  for (std::size_t v = 0; v < table.joints; ++v) {
    auto row = out.row(v);
    for (std::size_t m = 0; m < table.classes; ++m) {
      auto vec = table.vector(m, v);
      for (std::size_t c = 0; c < table.dim; ++c) row[c] += vec[c];
    }
    for (double& x : row) x /= static_cast<double>(table.classes);
  }
  return out;
}

GprGraph build_gpr(const Matrix& centroids) {
  if (!all_finite(centroids)) throw Error(ErrorKind::InvalidArgument, "centroids must be finite");
  const std::size_t n = centroids.rows();
  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < centroids.cols(); ++c) {
        const double d = centroids(i, c) - centroids(j, c);
        acc += d * d;
      }
      dist(i, j) = dist(j, i) = std::sqrt(acc);
    }
  return GprGraph{std::move(dist)};
}

ClassTemplateSet build_templates(const EmbeddingTable& table) {
  table.validate();
  ClassTemplateSet set;
  std::vector<double> norms(table.joints);
  for (std::size_t m = 0; m < table.classes; ++m) {
    for (std::size_t v = 0; v < table.joints; ++v) {
      double acc = 0.0;
      for (double x : table.vector(m, v)) acc += x * x;
      norms[v] = std::sqrt(acc);
      if (norms[v] == 0.0)
        throw Error(ErrorKind::ZeroVector, "class " + std::to_string(m) + ", joint " + std::to_string(v));
    }
    Matrix sim(table.joints, table.joints);
    for (std::size_t i = 0; i < table.joints; ++i) {
      sim(i, i) = 1.0;
      auto a = table.vector(m, i);
      for (std::size_t j = i + 1; j < table.joints; ++j) {
        auto b = table.vector(m, j);
        double dot = 0.0;
        for (std::size_t c = 0; c < table.dim; ++c) dot += a[c] * b[c];
        sim(i, j) = sim(j, i) = dot / (norms[i] * norms[j]);
      }
    }
    set.templates.push_back(std::move(sim));
  }
  return set;
}

SkeletonSequence weight_skeleton(const SkeletonSequence& seq, const BoneMatrix& selected) {
  return bone_stream(seq, selected);
}

}  // namespace kinegraph
