#pragma once

#include "pmesii/errors.hpp"
#include "pmesii/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>

// Strict field access for JSON documents; errors carry the dotted field path.
namespace pmesii::detail {

using json = nlohmann::json;

inline std::string join_path(const std::string &path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

inline std::string index_path(const std::string &path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

inline void expect_object(const json &j, const std::string &path, std::initializer_list<const char *> required,
                   std::initializer_list<const char *> optional = {}) {
  if (!j.is_object())
    throw SchemaError(path + ": expected an object");
  for (const char *key : required)
    if (!j.contains(key))
      throw SchemaError("missing field '" + join_path(path, key) + "'");
  for (const auto &item : j.items()) {
    const auto &key = item.key();
    auto match = [&](const char *k) { return key == k; };
    if (std::none_of(required.begin(), required.end(), match) &&
        std::none_of(optional.begin(), optional.end(), match))
      throw SchemaError("unknown field '" + join_path(path, key) + "'");
  }
}

inline double number(const json &j, const std::string &path) {
  if (!j.is_number())
    throw SchemaError(path + ": expected a number");
  return j.get<double>();
}

inline long long integer(const json &j, const std::string &path) {
  if (!j.is_number_integer())
    throw SchemaError(path + ": expected an integer");
  return j.get<long long>();
}

inline std::string text(const json &j, const std::string &path) {
  if (!j.is_string())
    throw SchemaError(path + ": expected a string");
  return j.get<std::string>();
}

inline bool boolean(const json &j, const std::string &path) {
  if (!j.is_boolean())
    throw SchemaError(path + ": expected a boolean");
  return j.get<bool>();
}

inline const json &array(const json &j, const std::string &path) {
  if (!j.is_array())
    throw SchemaError(path + ": expected an array");
  return j;
}

inline Vector vector_of(const json &j, Index n, const std::string &path) {
  array(j, path);
  if (static_cast<Index>(j.size()) != n)
    throw DimensionError(path + ": expected " + std::to_string(n) + " entries, got " +
                         std::to_string(j.size()));
  Vector v(n);
  for (Index i = 0; i < n; ++i)
    v[i] = number(j[static_cast<std::size_t>(i)], index_path(path, static_cast<std::size_t>(i)));
  return v;
}

inline Matrix square_of(const json &j, Index n, const std::string &path) {
  array(j, path);
  if (static_cast<Index>(j.size()) != n)
    throw DimensionError(path + ": expected " + std::to_string(n) + " rows, got " +
                         std::to_string(j.size()));
  Matrix m(n, n);
  for (Index r = 0; r < n; ++r)
    m.row(r) = vector_of(j[static_cast<std::size_t>(r)], n, index_path(path, static_cast<std::size_t>(r))).transpose();
  return m;
}

inline void check_range(double value, double lo, double hi, const std::string &path) {
  if (!(value >= lo && value <= hi) || std::isnan(value)) {
    std::ostringstream os;
    os << path << ": value " << value << " outside [" << lo << ", " << hi << "]";
    throw RangeError(os.str());
  }
}

inline void check_range(const Vector &v, double lo, double hi, const std::string &path) {
  for (Index i = 0; i < v.size(); ++i)
    check_range(v[i], lo, hi, index_path(path, static_cast<std::size_t>(i)));
}

inline json to_array(const Vector &v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i)
    out.push_back(v[i]);
  return out;
}

inline json to_rows(const Matrix &m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    out.push_back(to_array(m.row(r).transpose()));
  return out;
}

} // namespace pmesii::detail
