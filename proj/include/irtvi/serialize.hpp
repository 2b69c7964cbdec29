#pragma once

// JSON forms of fitted output. Doubles are written in shortest round-trip
// form, so save/load reproduces every parameter bit for bit.

#include "irtvi/autodiff.hpp"
#include "irtvi/error.hpp"
#include "irtvi/models.hpp"
#include "irtvi/random.hpp"
#include "irtvi/samples.hpp"
#include "irtvi/variational.hpp"

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

namespace irtvi {

using Json = nlohmann::json;

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Empty arrays give a 0x0 matrix.
inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw InvalidInput("expected a matrix (array of rows)");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.front().size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw InvalidInput("ragged matrix in JSON at row " + std::to_string(r));
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline Json item_bank_to_json(const ItemBank& items) {
  return {{"family", to_string(items.family)},
          {"dim", items.dim},
          {"params", matrix_to_json(items.params)}};
}

inline ItemBank item_bank_from_json(const Json& j) {
  return ItemBank{parse_family(j.at("family").get<std::string>()), j.at("dim").get<Eigen::Index>(),
                  matrix_from_json(j.at("params"))};
}

inline Json draw_to_json(const PosteriorDraw& d) {
  return {{"abilities", matrix_to_json(d.abilities)}, {"items", matrix_to_json(d.items)}};
}

inline PosteriorDraw draw_from_json(const Json& j) {
  return {matrix_from_json(j.at("abilities")), matrix_from_json(j.at("items"))};
}

inline Json trace_record_to_json(const TraceRecord& r) {
  return {{"iteration", r.iteration},
          {"vibo", r.vibo},
          {"recon", r.recon},
          {"d_ability", r.d_ability},
          {"d_item", r.d_item}};
}

inline Json model_options_to_json(const ModelOptions& o) {
  return {{"hidden_width", o.shape.hidden_width},
          {"hidden_layers", o.shape.hidden_layers},
          {"response_sigma", o.response_sigma}};
}

inline ModelOptions model_options_from_json(const Json& j) {
  ModelOptions o;
  o.shape.hidden_width = j.at("hidden_width").get<Eigen::Index>();
  o.shape.hidden_layers = j.at("hidden_layers").get<int>();
  o.response_sigma = j.at("response_sigma").get<double>();
  return o;
}

inline PosteriorFamily parse_posterior_family(const std::string& s) {
  if (s == "amortized") return PosteriorFamily::amortized;
  if (s == "independent") return PosteriorFamily::independent;
  if (s == "unamortized") return PosteriorFamily::unamortized;
  throw InvalidInput("unknown posterior family '" + s + "'");
}

namespace serialize_detail {

inline Json values_to_json(const std::vector<ad::Var>& params) {
  Json out = Json::array();
  for (const auto& p : params) out.push_back(matrix_to_json(p.value()));
  return out;
}

inline void values_from_json(const Json& j, std::vector<ad::Var> params, const char* what) {
  if (!j.is_array() || j.size() != params.size()) {
    throw InvalidInput(std::string("stored ") + what + " parameter count does not match");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix m = matrix_from_json(j[i]);
    if (m.rows() != params[i].rows() || m.cols() != params[i].cols()) {
      throw InvalidInput(std::string("stored ") + what + " parameter " + std::to_string(i) +
                         " has the wrong shape");
    }
    params[i].mutable_value() = std::move(m);
  }
}

}  // namespace serialize_detail

// Everything needed to rebuild a trained (model, posterior) pair.
inline Json variational_fit_to_json(const VariationalFit& fit) {
  const auto& m = fit.model;
  const auto& q = fit.posterior;
  return {{"family", to_string(m.family())},
          {"dim", m.dim()},
          {"response_kind", to_string(m.kind())},
          {"model_options", model_options_to_json(m.options())},
          {"model_params", serialize_detail::values_to_json(m.parameters())},
          {"posterior_family", to_string(q.family())},
          {"items", q.items()},
          {"persons", q.persons()},
          {"encoder_width", q.has_encoder() ? q.encoder().parameters().front().cols() : 0},
          {"encoder_layers",
           q.has_encoder() ? static_cast<long>(q.encoder().parameters().size() / 2) - 1 : 0},
          {"posterior_params", serialize_detail::values_to_json(q.parameters())}};
}

inline VariationalFit variational_fit_from_json(const Json& j) {
  const Family family = parse_family(j.at("family").get<std::string>());
  const auto dim = j.at("dim").get<Eigen::Index>();
  const ResponseKind kind = parse_response_kind(j.at("response_kind").get<std::string>());
  const ModelOptions options = model_options_from_json(j.at("model_options"));
  // initial values are overwritten below
  Rng scratch = make_stream(0, "init/restore");
  VariationalFit fit;
  fit.model = GenerativeModel(family, dim, kind, scratch, options);
  EncoderShape shape;
  if (j.at("encoder_width").get<Eigen::Index>() > 0) {
    shape.hidden_width = j.at("encoder_width").get<Eigen::Index>();
    shape.hidden_layers = j.at("encoder_layers").get<int>();
  }
  fit.posterior = VariationalPosterior(
      parse_posterior_family(j.at("posterior_family").get<std::string>()), dim,
      fit.model.item_width(), j.at("items").get<Eigen::Index>(),
      j.at("persons").get<Eigen::Index>(), scratch, shape);
  serialize_detail::values_from_json(j.at("model_params"), fit.model.parameters(), "model");
  serialize_detail::values_from_json(j.at("posterior_params"), fit.posterior.parameters(),
                                     "posterior");
  return fit;
}

// One JSON document per line.
inline void write_jsonl(const std::string& path, const std::vector<Json>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline std::vector<Json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<Json> out;
  std::string line;
  long number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw InvalidInput(path + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

inline void write_json(const std::string& path, const Json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

}  // namespace irtvi
