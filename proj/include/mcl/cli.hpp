// Copyright 2026 The MCL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// Command-line entry point: flat key = value config files, precedence
// CLI flag > config file > default, error collection and exit codes.

#include <functional>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "mcl/data.hpp"
#include "mcl/error.hpp"
#include "mcl/synth.hpp"
#include "mcl/trainer.hpp"

namespace mcl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitIo = 3;

int exit_code(ErrorKind kind);

// One scalar: true/false, integer, float, "quoted" or bare string.
nlohmann::json parse_value(std::string_view text);
// Lines of `key = value`; '#' starts a comment. Throws Error(kConfig) naming
// the line of the first malformed entry.
nlohmann::json parse_config_text(std::string_view text);
// "key=value" from the command line.
std::pair<std::string, nlohmann::json> parse_assignment(std::string_view text);

// A resolved configuration or every reason it could not be resolved.
template <typename T>
struct Resolved {
  T value{};
  std::vector<std::string> errors;
  bool ok() const { return errors.empty(); }
};

// Generic resolution over a flat JSON schema given by `to_json(base)`.
template <typename T>
Resolved<T> resolve(const T& base, const nlohmann::json& file, const nlohmann::json& flags,
                    const std::function<nlohmann::json(const T&)>& to_json,
                    const std::function<T(const nlohmann::json&)>& from_json,
                    const std::function<std::vector<std::string>(const T&)>& check);

Resolved<train::TrainConfig> resolve_train_config(const train::TrainConfig& base,
                                                  const nlohmann::json& file,
                                                  const nlohmann::json& flags);

nlohmann::json pipeline_to_json(const data::PreprocessOptions& o);
data::PreprocessOptions pipeline_from_json(const nlohmann::json& j);
std::vector<std::string> validate_pipeline(const data::PreprocessOptions& o);
Resolved<data::PreprocessOptions> resolve_pipeline_options(const nlohmann::json& file,
                                                           const nlohmann::json& flags);

Resolved<synth::SyntheticSpec> resolve_synth_spec(const nlohmann::json& file,
                                                  const nlohmann::json& flags);

// Runs `mcl <args...>` (args exclude the program name) and returns the exit
// code. Diagnostics go to stderr.
int run(const std::vector<std::string>& args);

}  // namespace mcl::cli
