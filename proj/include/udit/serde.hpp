#pragma once

// JSON conversions for configuration types. All structured JSON in this
// project uses nlohmann::ordered_json so that serialized output is
// byte-deterministic (insertion order preserved).

#include "json.hpp"
#include "udit/losses.hpp"
#include "udit/nets.hpp"

namespace udit {

using Json = nlohmann::ordered_json;

// Converts a NetHyper to/from JSON. Parsing throws ConfigError on missing
// fields, wrong types, or values that fail validation.
Json hyper_to_json(const nets::NetHyper& h);
nets::NetHyper hyper_from_json(const Json& j);

Json weights_to_json(const losses::LossWeights& w);
losses::LossWeights weights_from_json(const Json& j);

// Reads a required field of type T, rephrasing nlohmann's exceptions as
// ConfigError with the field name.
template <typename T>
T json_get(const Json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key))
    fail<ConfigError>("missing required field \"", key, "\"");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail<ConfigError>("field \"", key, "\": ", e.what());
  }
}

template <typename T>
T json_get_or(const Json& j, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail<ConfigError>("field \"", key, "\": ", e.what());
  }
}

// Parses text as JSON, throwing ConfigError instead of nlohmann's exception.
Json json_parse(const std::string& text, const std::string& what);

}  // namespace udit
