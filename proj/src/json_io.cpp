#include "kinegraph/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "kinegraph/error.hpp"

namespace kinegraph {

double round_significant(double value, int digits) {
  if (!std::isfinite(value) || value == 0.0) return value;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, value);
  return std::strtod(buf, nullptr);
}

void apply_float_format(Json& doc, FloatFormat fmt) {
  if (fmt == FloatFormat::Full) return;
  if (doc.is_number_float()) {
    doc = round_significant(doc.get<double>(), 9);
  } else if (doc.is_array() || doc.is_object()) {
    for (auto& child : doc) apply_float_format(child, fmt);
  }
}

std::string canonical_dump(Json doc, FloatFormat fmt) {
  apply_float_format(doc, fmt);
  return doc.dump() + "\n";
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (double v : m.row(i)) r.push_back(v);
    rows.push_back(std::move(r));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw SchemaError(path, "must be a non-empty 2-D array");
  const std::size_t rows = j.size();
  if (!j[0].is_array()) throw SchemaError(path + "/0", "must be an array");
  const std::size_t cols = j[0].size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::string row_path = path + "/" + std::to_string(r);
    if (!j[r].is_array() || j[r].size() != cols) throw SchemaError(row_path, "row length mismatch");
    for (std::size_t c = 0; c < cols; ++c) {
      const Json& v = j[r][c];
      if (!v.is_number()) throw SchemaError(row_path + "/" + std::to_string(c), "must be a number");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json parse_json_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError("", std::string("invalid JSON: ") + e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) { return parse_json_text(read_text_file(path)); }

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << contents;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace kinegraph
