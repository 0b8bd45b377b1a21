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

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "gpmil/mil_head.hpp"

namespace gpmil {

inline constexpr int kModelFormatVersion = 1;

/// A loaded model file. `config_json` is the config echo stored with the
/// parameters ("{}" when none was given).
struct ModelFile {
  std::variant<MilModel, GatedAttentionModel> model;
  std::string config_json = "{}";

  [[nodiscard]] bool is_sgp() const { return model.index() == 0; }
};

/// JSON text with header {"format": "gpmil-model", "version": 1, "kind": ...}.
/// Doubles are written with round-trip precision.
std::string model_to_json(const MilModel& model, std::string_view config_json = "{}");
std::string model_to_json(const GatedAttentionModel& model,
                          std::string_view config_json = "{}");
/// Throws ParseError on malformed input.
ModelFile model_from_json(std::string_view text);

void save_model(const std::filesystem::path& path, const MilModel& model,
                std::string_view config_json = "{}");
void save_model(const std::filesystem::path& path,
                const GatedAttentionModel& model,
                std::string_view config_json = "{}");
/// Throws IoError when the file cannot be read, ParseError when malformed.
ModelFile load_model(const std::filesystem::path& path);

}  // namespace gpmil
