#pragma once

// Attribute classifier harness: a linear head with sigmoid outputs trained
// by BCE over features of a frozen backbone (any Embedder).

#include "pedsynth/dataset.hpp"
#include "pedsynth/generation.hpp"
#include "pedsynth/metrics.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pedsynth {

struct TrainConfig {
    std::string backbone_id = "resnet50";
    bool freeze_backbone = true;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lr_fr = 0.01;  ///< backbone group; unused while the backbone is frozen
    double lr_new = 0.01; ///< head group
    double warmup_coef = 0.1;
    int warmup_epochs = 1;
    double plateau_factor = 0.1;
    int plateau_patience = 3;
    int early_stop_patience = 10;
    int input_height = 256;
    int input_width = 192;
    int epochs = 30;
    int batch_size = 64;
    std::uint64_t seed = 0;
    double threshold = 0.5;

    void validate() const;
    [[nodiscard]] std::map<std::string, std::string> snapshot() const;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double monitor_ma = 0; ///< val mA, or train mA without a val split
};

struct TrainedModel {
    std::string backbone_id;
    std::string embedder_id;
    AttributeSchema schema;
    Eigen::MatrixXd weights; ///< m x d, over standardized features
    Eigen::VectorXd bias;    ///< m
    Eigen::VectorXd feature_mean;
    Eigen::VectorXd feature_scale;
    std::map<std::string, std::string> metadata;
    std::vector<EpochRecord> history;

    /// n x m sigmoid scores for raw (unstandardized) feature rows.
    [[nodiscard]] Eigen::MatrixXd predict(const Eigen::MatrixXd &features) const;
};

/// Loads each image, resizes it to the configured input size and embeds it.
FeatureSet extract_features(const Embedder &backbone, const DatasetManifest &manifest, int input_width,
                            int input_height, const ImageLoader &loader = load_sample_image);

/// Lower-level entry point over precomputed features. `mask` (optional,
/// same shape as labels) zeroes the loss of unknown labels.
TrainedModel train_head(const Eigen::MatrixXd &train_features, const Eigen::MatrixXi &train_labels,
                        const Eigen::MatrixXi &train_mask, const Eigen::MatrixXd &val_features,
                        const Eigen::MatrixXi &val_labels, const AttributeSchema &schema, const TrainConfig &config);

TrainedModel train(const DatasetManifest &manifest, const TrainConfig &config, const Embedder &backbone,
                   const ImageLoader &loader = load_sample_image);

MAReport evaluate(const TrainedModel &model, const DatasetManifest &manifest, Split split, const Embedder &backbone,
                  const TrainConfig &config, const ImageLoader &loader = load_sample_image);
MAReport evaluate_features(const TrainedModel &model, const Eigen::MatrixXd &features, const Eigen::MatrixXi &labels,
                           double threshold = 0.5);

void save_model(const TrainedModel &model, const std::filesystem::path &path);
TrainedModel load_model(const std::filesystem::path &path);

// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string attribute;
    double ma_a = 0;
    double ma_b = 0;
    double delta = 0; ///< ma_b - ma_a
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows; ///< delta descending, then attribute name
    double mean_a = 0;               ///< over shared scored attributes
    double mean_b = 0;
    double mean_delta = 0;
    std::vector<std::string> excluded; ///< skipped in either report
};

ComparisonTable compare_reports(const MAReport &a, const MAReport &b);

// ---------------------------------------------------------------------------

/// Five attributes depending linearly on eight band luminances.
struct ToyDataset {
    DatasetManifest manifest;
    Eigen::MatrixXd generator; ///< 5 x 8; label j is generator.row(j) . (f - 127.5) > 0
};

/// Writes 16x64 images with 8 uniform horizontal bands under root/images.
/// Splits: `n` samples, 60% train, 20% val, 20% test.
ToyDataset make_toy_dataset(const std::filesystem::path &root, std::size_t n, std::uint64_t seed, double margin = 20.0);
AttributeSchema toy_schema();

} // namespace pedsynth
