#pragma once

// Dataset expansion: one img2img sample per real training sample (times the
// multiplier), labeled from the prompt that produced it.

#include "pedsynth/conditioning.hpp"
#include "pedsynth/dataset.hpp"
#include "pedsynth/generation.hpp"
#include "pedsynth/metrics.hpp"
#include "pedsynth/promptgen.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pedsynth {

enum class LabelMode {
    negative, ///< attributes absent from the prompt are 0
    masked,   ///< only grammar-covered attributes are known; label_mask marks them
};

std::string_view to_string(LabelMode m) noexcept;
LabelMode parse_label_mode(std::string_view s);

/// 1 exactly at prompt.attributes.
AttributeVector assign_labels(const PromptRecord &prompt, const AttributeSchema &schema);

struct ExpansionPlan {
    DatasetManifest source; ///< only train samples are expanded; others pass through
    std::string config_name = "HiSt_HiSc";
    TechniqueSpec technique;
    /// Prompt grammar; nullopt uses the schema-agnostic phrase-list builder.
    std::optional<GrammarId> grammar = GrammarId::RAPzs;
    std::optional<std::string> head;
    ConditioningSpec conditioning; ///< applied to the init image before granularity fitting
    int multiplier = 1;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    LabelMode label_mode = LabelMode::negative;
    ImageLoader loader = load_sample_image;

    void validate() const;
};

struct SampleLogEntry {
    std::string source_id;
    std::string synthetic_id;
    std::string prompt;      ///< prompt built from the source annotation
    std::string prompt_sent; ///< text given to the backend
    std::string config_name;
    double strength = 0; ///< effective strength
    double scale = 0;
    int steps = 0;
    std::uint64_t seed = 0;
    std::string technique;
    std::string image_path; ///< relative to output_dir
};

struct ExpansionFailure {
    std::string source_id;
    std::string synthetic_id;
    std::string reason;
};

struct ExpansionResult {
    DatasetManifest merged;
    std::vector<SampleLogEntry> log;
    std::vector<ExpansionFailure> failures;
    std::optional<FIDResult> quality_fid; ///< synthetic vs real train, when an embedder was given
};

/// Seed of the k-th synthetic copy (k >= 1) of a sample.
std::uint64_t expansion_seed(std::uint64_t plan_seed, std::string_view sample_id, int k);
std::string synthetic_id(std::string_view source_id, int k);

/// Writes output_dir/synthetic/*.png, manifest.jsonl, per_sample_log.jsonl,
/// failures.jsonl and expansion_report.json. Real samples keep their
/// annotations; their image paths are re-expressed relative to output_dir.
ExpansionResult expand_dataset(const ExpansionPlan &plan, Backend &backend, const Embedder *quality_embedder = nullptr);

} // namespace pedsynth
