#pragma once

// JSON forms of the shared data types, for modules that embed a schema
// in their own files.

#include "pedsynth/dataset.hpp"

#include <nlohmann/json.hpp>

namespace pedsynth {

using json = nlohmann::ordered_json;

json schema_to_json(const AttributeSchema &schema);
AttributeSchema schema_from_json(const json &j);

} // namespace pedsynth
