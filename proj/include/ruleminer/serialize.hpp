#pragma once

#include <json.hpp>

#include "ruleminer/rules.hpp"

namespace ruleminer {

using Json = nlohmann::json;

inline Json to_json(const Predicate& p) {
  return Json{{"feature", p.feature},
              {"kind", predicate_kind_name(p.kind)},
              {"bin", p.bin},
              {"window", p.window}};
}

inline Predicate predicate_from_json(const Json& j) {
  Predicate p;
  p.feature = j.at("feature").get<int>();
  p.kind = predicate_kind_from_name(j.at("kind").get<std::string>());
  p.bin = j.at("bin").get<int>();
  p.window = j.at("window").get<int>();
  return p;
}

inline Json to_json(const DiscretizedRule& r) {
  Json ant = Json::array();
  for (const auto& p : r.antecedent) ant.push_back(to_json(p));
  return Json{{"id", r.id},
              {"antecedent", ant},
              {"consequent", r.consequent},
              {"support", r.support},
              {"confidence", r.confidence}};
}

inline DiscretizedRule rule_from_json(const Json& j) {
  DiscretizedRule r;
  r.id = j.at("id").get<int>();
  for (const auto& pj : j.at("antecedent"))
    r.antecedent.push_back(predicate_from_json(pj));
  r.consequent = j.at("consequent").get<int>();
  r.support = j.at("support").get<double>();
  r.confidence = j.at("confidence").get<double>();
  return r;
}

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw ParseError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = row.at(static_cast<size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace ruleminer
