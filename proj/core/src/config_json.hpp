#pragma once

// Shared JSON (de)serialization for config structs; used by checkpoints and
// run configs. Readers take a key path for error messages and reject
// unknown keys so typos fail fast instead of silently using defaults.

#include <string>

#include <json.hpp>

#include "nres/data.hpp"
#include "nres/errors.hpp"
#include "nres/extension.hpp"
#include "nres/model.hpp"
#include "nres/training.hpp"

namespace nres {

using Json = nlohmann::json;

void check_object(const Json& j, const std::string& path);
void check_keys(const Json& j, std::initializer_list<const char*> allowed,
                const std::string& path);

Json to_json(const ModelConfig& cfg);
Json to_json(const ExtensionConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const SyntheticLanguageSpec& spec);

ModelConfig model_config_from_json(const Json& j, const std::string& path);
ExtensionConfig extension_config_from_json(const Json& j, const std::string& path);
TrainConfig train_config_from_json(const Json& j, const std::string& path);
SyntheticLanguageSpec language_spec_from_json(const Json& j, const std::string& path);

// Typed field readers with path-qualified errors; missing keys keep the
// caller-supplied default.
int64_t json_int(const Json& j, const char* key, int64_t fallback, const std::string& path);
uint64_t json_uint(const Json& j, const char* key, uint64_t fallback, const std::string& path);
double json_num(const Json& j, const char* key, double fallback, const std::string& path);
bool json_bool(const Json& j, const char* key, bool fallback, const std::string& path);
std::string json_str(const Json& j, const char* key, const std::string& fallback,
                     const std::string& path);

}  // namespace nres
