#pragma once

#include "pedsynth/dataset.hpp"

#include <string_view>

namespace pedsynth {

/// RAPzs categories as used in the LLM request template (55 attributes).
AttributeSchema rapzs_schema();
/// PETAzs grammar vocabulary, including per-garment colour categories.
AttributeSchema petazs_schema();
/// The 26 PA100k attributes.
AttributeSchema pa100k_schema();
/// Colour and clothing words of the hand-crafted baseline/integration prompts.
AttributeSchema handcrafted_schema();

/// "RAPzs", "PETAzs", "PA100k" or "handcrafted"; throws for anything else.
AttributeSchema builtin_schema(std::string_view dataset_id);

} // namespace pedsynth
