#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "kinegraph/matrix.hpp"

namespace kinegraph {

using Json = nlohmann::json;

enum class FloatFormat {
  Full,          // shortest text that round-trips the double exactly
  Significant9,  // rounded to 9 significant digits before printing
};

double round_significant(double value, int digits);

// Recursively rounds every floating value in place when fmt is Significant9.
void apply_float_format(Json& doc, FloatFormat fmt);

// Sorted keys, compact, trailing newline.
std::string canonical_dump(Json doc, FloatFormat fmt);

Json matrix_to_json(const Matrix& m);
// `path` is the JSON pointer used in SchemaViolation messages.
Matrix matrix_from_json(const Json& j, const std::string& path);

Json read_json_file(const std::filesystem::path& path);
Json parse_json_text(const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace kinegraph
