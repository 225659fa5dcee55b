#pragma once

// Experiment drivers behind the command-line tool: FID studies over a grid
// of variants and generation configurations, and thin run-directory
// wrappers around expansion, training and evaluation.

#include "pedsynth/expansion.hpp"
#include "pedsynth/partrainer.hpp"
#include "pedsynth/report.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pedsynth {

enum class Experiment {
    prompt_study,
    blur_study,
    context_study,
    resolution_study,
    aspect_study,
    technique_study,
    expand,
    train,
    eval,
    report,
    pipeline,
};

std::string_view to_string(Experiment e) noexcept;
Experiment parse_experiment(std::string_view s);
bool is_study(Experiment e) noexcept;
/// Name of the CLI command running the experiment ("study" for studies).
std::string_view command_name(Experiment e) noexcept;

struct ExperimentConfig {
    Experiment experiment = Experiment::blur_study;
    std::filesystem::path manifest;
    std::string backend = "mock";
    std::string embedder = "mock";
    std::vector<std::string> configs = named_config_names();
    std::uint64_t seed = 0;
    std::size_t n_conditional = 100;
    std::filesystem::path output_dir;
    std::vector<std::string> formats = {"table", "csv", "plot"};

    // Studies. Empty `variants` takes default_variants().
    std::vector<std::string> variants;
    /// "auto" (from the schema's dataset id), a grammar id, or "phrase_list".
    std::string grammar = "auto";
    /// Prompts for image and technique studies: "auto", "attribute",
    /// "phrase_list" or "caption_aligned".
    std::string prompt = "auto";
    std::filesystem::path captions;
    std::filesystem::path llm_fixture;
    int token_steps = 100;
    double s_min = 0.2;
    double s_max = 0.8;
    double amplitude = 0.1;

    // Expansion.
    std::string technique = "plain";
    std::string config_name = "HiSt_HiSc";
    int multiplier = 1;
    std::string label_mode = "negative";
    std::string conditioning = "identity";
    /// Textual inversion: existing library, otherwise tokens are trained
    /// for `token_attributes` (empty: every grammar-covered attribute).
    std::filesystem::path token_library;
    std::vector<std::string> token_attributes;

    // Training and evaluation. The frozen backbone is `embedder`.
    TrainConfig train;
    std::filesystem::path model;
    std::string split = "test";
    /// eval: MA report to compare against; report: input files.
    std::filesystem::path compare;
    std::vector<std::filesystem::path> inputs;

    void validate() const;
};

std::vector<std::string> default_variants(Experiment e, const ExperimentConfig &config);

/// Flat key/value snapshot readable by the CLI's --config, one section
/// named after the command.
std::string config_snapshot(const ExperimentConfig &config);

struct StudyServices {
    Backend *backend = nullptr;   ///< null: make_backend(config.backend)
    Embedder *embedder = nullptr; ///< null: make_embedder(config.embedder)
    LlmClient *llm = nullptr;     ///< null: FileLlmClient(config.llm_fixture) when set
    ImageLoader loader = load_sample_image;
};

/// Writes config.ini, run.log, failures.jsonl, study_report.json and the
/// requested renderings into config.output_dir.
StudyReport run_study(const ExperimentConfig &config, const StudyServices &services = {});

struct RunArtifacts {
    std::filesystem::path run_dir;
    std::vector<std::filesystem::path> files;
};

RunArtifacts run_expand(const ExperimentConfig &config, const StudyServices &services = {});
/// Trains on the train split and writes model.bin, history.csv and the
/// train/val MA reports.
RunArtifacts run_train(const ExperimentConfig &config, const StudyServices &services = {});
RunArtifacts run_eval(const ExperimentConfig &config, const StudyServices &services = {});
/// Re-renders existing report files (study_report.json or MA reports; two
/// MA reports also give a comparison).
RunArtifacts run_report(const ExperimentConfig &config);
/// expand, train on source and merged, evaluate both, compare.
RunArtifacts run_pipeline(const ExperimentConfig &config, const StudyServices &services = {});

} // namespace pedsynth
