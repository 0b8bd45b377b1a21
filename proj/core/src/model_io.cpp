/*
 * Copyright 2026 The gpmil Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "gpmil/model_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gpmil/error.hpp"

namespace gpmil {

namespace {

using nlohmann::json;

json matrix_json(const MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

json vector_json(const VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

MatrixXd matrix_from(const json& j, const char* what) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw ParseError(std::string("model: bad shape for ") + what);
  }
  MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Index i = 0; i < rows; ++i) {
    for (Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[k++].get<double>();
  }
  return m;
}

VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

json affine_json(const Affine& a) {
  return {{"weight", matrix_json(a.weight)}, {"bias", vector_json(a.bias)}};
}

Affine affine_from(const json& j, const char* what) {
  Affine a;
  a.weight = matrix_from(j.at("weight"), what);
  a.bias = vector_from(j.at("bias"));
  return a;
}

json projector_json(const Projector& p) {
  return {{"hidden", affine_json(p.hidden)}, {"output", affine_json(p.output)}};
}

Projector projector_from(const json& j) {
  return {affine_from(j.at("hidden"), "projector.hidden"),
          affine_from(j.at("output"), "projector.output")};
}

json header(const char* kind, std::string_view config_json) {
  json j;
  j["format"] = "gpmil-model";
  j["version"] = kModelFormatVersion;
  j["kind"] = kind;
  j["config"] = json::parse(config_json);
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

std::string model_to_json(const MilModel& model, std::string_view config_json) {
  json j = header("sgpmil", config_json);
  const auto& s = model.sgp;
  j["normalization"] = std::string(to_string(model.normalization));
  j["projector"] = projector_json(model.projector);
  j["sgp"] = {
      {"inducing_locations", matrix_json(s.inducing_locations)},
      {"variational_mean", vector_json(s.variational_mean)},
      {"raw_cov_factor", matrix_json(s.raw_cov_factor)},
      {"prior_mean", vector_json(s.prior_mean)},
      {"lm_weights", vector_json(s.lm_weights)},
      {"lm_bias", s.lm_bias},
      {"use_lm", s.use_lm},
      {"diag_only", s.diag_only},
      {"kernel",
       {{"raw_outputscale", s.kernel.raw_outputscale},
        {"raw_lengthscales", vector_json(s.kernel.raw_lengthscales)},
        {"raw_offset", s.kernel.raw_offset},
        {"jitter_base", s.kernel.jitter_base}}},
  };
  j["classifier"] = affine_json(model.classifier);
  return j.dump(1) + "\n";
}

std::string model_to_json(const GatedAttentionModel& model,
                          std::string_view config_json) {
  json j = header("gated_attention", config_json);
  j["projector"] = projector_json(model.projector);
  j["attention"] = {{"v", affine_json(model.attention_v)},
                    {"u", affine_json(model.attention_u)},
                    {"w", vector_json(model.attention_w)}};
  j["classifier"] = affine_json(model.classifier);
  return j.dump(1) + "\n";
}

ModelFile model_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "gpmil-model") {
      throw ParseError("model: not a gpmil model file");
    }
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw ParseError("model: unsupported format version " + std::to_string(version));
    }
    ModelFile file;
    file.config_json = j.contains("config") ? j["config"].dump() : "{}";
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "sgpmil") {
      MilModel m;
      m.normalization = parse_normalization(j.at("normalization").get<std::string>());
      m.projector = projector_from(j.at("projector"));
      const json& s = j.at("sgp");
      m.sgp.inducing_locations = matrix_from(s.at("inducing_locations"), "sgp.inducing_locations");
      m.sgp.variational_mean = vector_from(s.at("variational_mean"));
      m.sgp.raw_cov_factor = matrix_from(s.at("raw_cov_factor"), "sgp.raw_cov_factor");
      m.sgp.prior_mean = vector_from(s.at("prior_mean"));
      m.sgp.lm_weights = vector_from(s.at("lm_weights"));
      m.sgp.lm_bias = s.at("lm_bias").get<double>();
      m.sgp.use_lm = s.at("use_lm").get<bool>();
      m.sgp.diag_only = s.at("diag_only").get<bool>();
      const json& k = s.at("kernel");
      m.sgp.kernel.raw_outputscale = k.at("raw_outputscale").get<double>();
      m.sgp.kernel.raw_lengthscales = vector_from(k.at("raw_lengthscales"));
      m.sgp.kernel.raw_offset = k.at("raw_offset").get<double>();
      m.sgp.kernel.jitter_base = k.at("jitter_base").get<double>();
      m.classifier = affine_from(j.at("classifier"), "classifier");
      m.validate();
      file.model = std::move(m);
    } else if (kind == "gated_attention") {
      GatedAttentionModel m;
      m.projector = projector_from(j.at("projector"));
      const json& a = j.at("attention");
      m.attention_v = affine_from(a.at("v"), "attention.v");
      m.attention_u = affine_from(a.at("u"), "attention.u");
      m.attention_w = vector_from(a.at("w"));
      m.classifier = affine_from(j.at("classifier"), "classifier");
      m.validate();
      file.model = std::move(m);
    } else {
      throw ParseError("model: unknown kind '" + kind + "'");
    }
    return file;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("model: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const MilModel& model,
                std::string_view config_json) {
  write_text(path, model_to_json(model, config_json));
}

void save_model(const std::filesystem::path& path,
                const GatedAttentionModel& model, std::string_view config_json) {
  write_text(path, model_to_json(model, config_json));
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace gpmil
