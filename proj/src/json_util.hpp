#pragma once

// Helpers shared by the JSON readers/writers. Matrices are stored as nested
// row-major arrays; every accessor reports the offending field by name.

#include <Eigen/Core>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

#include "quadfit/error.hpp"

namespace quadfit::detail {

using nlohmann::json;

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path, e.what()));
  }
}

inline void write_json_file(const std::string& path, const json& j, int indent = -1) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << j.dump(indent) << '\n';
  if (!os) throw IoError("failed writing " + path);
}

inline const json& field(const json& j, const char* name) {
  if (!j.is_object()) throw ParseError(fmt::format("expected an object while reading '{}'", name));
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(fmt::format("missing field '{}'", name));
  return *it;
}

template <typename T>
T scalar(const json& j, const char* name) {
  const json& v = field(j, name);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("field '{}': {}", name, e.what()));
  }
}

template <typename Derived>
json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

template <typename Derived>
json vector_to_json(const Eigen::MatrixBase<Derived>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

template <typename Matrix>
Matrix matrix_from_json(const json& j, const char* name, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array()) throw ParseError(fmt::format("field '{}': expected an array", name));
  if (rows >= 0 && static_cast<Eigen::Index>(j.size()) != rows)
    throw ParseError(fmt::format("field '{}': expected {} rows, got {}", name, rows, j.size()));
  rows = static_cast<Eigen::Index>(j.size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ParseError(fmt::format("field '{}': row {} must have {} entries", name, r, cols));
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw ParseError(fmt::format("field '{}': entry ({}, {}) is not a number", name, r, c));
      m(r, c) = row[c].get<typename Matrix::Scalar>();
    }
  }
  return m;
}

inline Eigen::VectorXd vector_from_json(const json& j, const char* name, Eigen::Index size) {
  if (!j.is_array()) throw ParseError(fmt::format("field '{}': expected an array", name));
  if (size >= 0 && static_cast<Eigen::Index>(j.size()) != size)
    throw ParseError(fmt::format("field '{}': expected {} entries, got {}", name, size, j.size()));
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError(fmt::format("field '{}': entry {} is not a number", name, i));
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

}  // namespace quadfit::detail
