#pragma once

// Generation quality (FID over pluggable embedders) and label-based mean
// accuracy.

#include "pedsynth/dataset.hpp"
#include "pedsynth/generation.hpp"
#include "pedsynth/image.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace pedsynth {

struct FeatureSet {
    Eigen::MatrixXd features; ///< one row per image
    std::string embedder_id;

    [[nodiscard]] Eigen::Index n() const noexcept { return features.rows(); }
    [[nodiscard]] Eigen::Index d() const noexcept { return features.cols(); }
};

class Embedder {
  public:
    virtual ~Embedder() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual int dim() const = 0;
    /// Thread safe.
    [[nodiscard]] virtual Eigen::VectorXd embed(const Image &image) const = 0;
    /// Row i embeds images[i]. The default runs embed() in parallel.
    [[nodiscard]] virtual Eigen::MatrixXd embed_batch(const std::vector<Image> &images) const;
};

/// d = 16: per-channel means and standard deviations (pixel units) followed
/// by a 10-bin luminance histogram in percent.
class MockEmbedder : public Embedder {
  public:
    [[nodiscard]] std::string id() const override { return "mock-stats-16"; }
    [[nodiscard]] int dim() const override { return 16; }
    [[nodiscard]] Eigen::VectorXd embed(const Image &image) const override;
};

/// Mean luminance of `bands` equal horizontal bands, top to bottom.
class BandEmbedder : public Embedder {
  public:
    explicit BandEmbedder(int bands = 8);
    [[nodiscard]] std::string id() const override { return "band-" + std::to_string(bands_); }
    [[nodiscard]] int dim() const override { return bands_; }
    [[nodiscard]] Eigen::VectorXd embed(const Image &image) const override;

  private:
    int bands_;
};

/// Runs `<command> <request.json>` with {"images": [png paths], "output": path};
/// the command writes {"features": [[...], ...]}.
class CommandEmbedder : public Embedder {
  public:
    CommandEmbedder(std::string id, std::string command, int dim);
    [[nodiscard]] std::string id() const override { return id_; }
    [[nodiscard]] int dim() const override { return dim_; }
    [[nodiscard]] Eigen::VectorXd embed(const Image &image) const override;
    [[nodiscard]] Eigen::MatrixXd embed_batch(const std::vector<Image> &images) const override;

  private:
    std::string id_;
    std::string command_;
    int dim_;
};

/// "mock", "band", "inception-pool3" ($PEDSYNTH_INCEPTION_COMMAND, default
/// tools/inception_features.py) or "command:<dim>:<shell command>".
std::unique_ptr<Embedder> make_embedder(std::string_view id);

FeatureSet embed_images(const Embedder &embedder, const std::vector<Image> &images);
FeatureSet embed_manifest(const Embedder &embedder, const DatasetManifest &manifest,
                          const ImageLoader &loader = load_sample_image);

// ---------------------------------------------------------------------------

struct FIDResult {
    double value = 0;
    Eigen::Index n_a = 0;
    Eigen::Index n_b = 0;
    std::string embedder_id;
    double epsilon_used = 0;
};

FIDResult compute_fid(const FeatureSet &a, const FeatureSet &b, double epsilon = 1e-6);

/// FID between a seeded random n-row subset of `features` and all of it.
FIDResult reference_subset_fid(const FeatureSet &features, std::size_t n, std::uint64_t seed, double epsilon = 1e-6);
/// Subset chosen with random_subset(manifest, n, seed).
FIDResult reference_subset_fid(const DatasetManifest &manifest, const Embedder &embedder, std::size_t n,
                               std::uint64_t seed, const ImageLoader &loader = load_sample_image);

// ---------------------------------------------------------------------------

struct AttributeAccuracy {
    std::string attribute;
    std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
    double tpr = 0;
    double tnr = 0;
    double ma = 0; ///< 100 * (tpr + tnr) / 2

    bool operator==(const AttributeAccuracy &) const = default;
};

struct MAReport {
    std::vector<AttributeAccuracy> per_attribute; ///< scored attributes, in column order
    std::vector<std::string> skipped;             ///< no positives or no negatives in labels
    double mean_ma = 0;                           ///< 0 when every attribute is skipped
    double threshold = 0.5;

    [[nodiscard]] const AttributeAccuracy *find(std::string_view attribute) const;
    bool operator==(const MAReport &) const = default;
};

/// `attributes` names the columns; empty means "attr<i>".
MAReport compute_ma(const Eigen::MatrixXd &scores, const Eigen::MatrixXi &labels, double threshold = 0.5,
                    const std::vector<std::string> &attributes = {});

std::string ma_report_to_json(const MAReport &report);
MAReport ma_report_from_json(std::string_view text);
void save_ma_report(const MAReport &report, const std::filesystem::path &path);
MAReport load_ma_report(const std::filesystem::path &path);

/// Label matrix (n x m) of a manifest's samples.
Eigen::MatrixXi label_matrix(const DatasetManifest &manifest);

} // namespace pedsynth
