#pragma once

// Image-to-image generation: configurations, the backend contract, the
// technique adapters and per-attribute token libraries.

#include "pedsynth/dataset.hpp"
#include "pedsynth/image.hpp"
#include "pedsynth/promptgen.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace pedsynth {

struct GenerationConfig {
    std::string name;
    double strength = 0.6;
    double scale = 15.0;
    int steps = 50;
    std::uint64_t seed = 0;
    int granularity = 8;

    /// Throws InvalidArgument when an invariant is violated.
    void validate() const;
    bool operator==(const GenerationConfig &) const = default;
};

/// HiSt_HiSc (0.6, 15), HiSt_LoSc (0.6, 3), LoSt_LoSc (0.2, 3).
GenerationConfig named_config(std::string_view name, int granularity = 8);
const std::vector<std::string> &named_config_names();

// ---------------------------------------------------------------------------

struct TokenEntry {
    std::string token;  ///< pseudo-word inserted into prompts
    std::string handle; ///< backend-opaque reference to the learned embedding
    std::size_t subset_size = 0;

    bool operator==(const TokenEntry &) const = default;
};

struct TokenLibrary {
    AttributeSchema schema;
    std::map<std::string, TokenEntry> tokens; ///< attribute -> token
    std::map<std::string, std::string> metadata;

    [[nodiscard]] bool empty() const noexcept { return tokens.empty(); }
    bool operator==(const TokenLibrary &) const = default;
};

/// Pseudo-token for an attribute, e.g. "<ps-attr-hat>".
std::string attribute_token(std::string_view attribute);

void save_token_library(const TokenLibrary &library, const std::filesystem::path &path);
TokenLibrary load_token_library(const std::filesystem::path &path);

/// Replaces each matched attribute phrase that has a token with the token.
/// `attributes` is left unchanged.
PromptRecord apply_tokens(const PromptRecord &prompt, const TokenLibrary &library);
/// Inverse of apply_tokens for text built from schema phrases.
std::string restore_tokens(std::string_view text, const TokenLibrary &library);

// ---------------------------------------------------------------------------

enum class TechniqueKind { plain, textual_inversion, dynamic_strength, latent_alteration };

std::string_view to_string(TechniqueKind k) noexcept;
TechniqueKind parse_technique_kind(std::string_view s);

struct TechniqueSpec {
    TechniqueKind kind = TechniqueKind::plain;
    std::shared_ptr<const TokenLibrary> tokens; ///< textual_inversion
    double s_min = 0.2;                         ///< dynamic_strength
    double s_max = 0.8;
    double amplitude = 0.1; ///< latent_alteration, in units of the latent standard deviation

    static TechniqueSpec plain() { return {}; }
    static TechniqueSpec textual_inversion(std::shared_ptr<const TokenLibrary> library);
    static TechniqueSpec dynamic_strength(double s_min = 0.2, double s_max = 0.8);
    static TechniqueSpec latent_alteration(double amplitude = 0.1);

    void validate() const;
};

// ---------------------------------------------------------------------------

enum class Determinism { bit_exact, statistical };

struct GenerationRequest {
    const Image *init = nullptr;
    std::string prompt;
    double strength = 0;
    double scale = 0;
    int steps = 1;
    std::uint64_t seed = 0;
    /// Latent perturbation amplitude relative to the latent standard deviation; 0 disables.
    double latent_noise = 0;
};

class Backend {
  public:
    virtual ~Backend() = default;

    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual int granularity() const = 0;
    [[nodiscard]] virtual Determinism determinism() const = 0;
    /// Maximum per-pixel deviation of a strength-0 round trip.
    [[nodiscard]] virtual double round_trip_error_bound() const = 0;
    [[nodiscard]] virtual int max_concurrency() const = 0;

    /// Encode, noise, denoise and decode in one call. Must be safe to call
    /// concurrently up to max_concurrency().
    virtual Image generate(const GenerationRequest &request) = 0;

    [[nodiscard]] virtual bool supports_token_training() const { return false; }
    /// Returns a handle for the learned embedding.
    virtual std::string train_token(const std::vector<Image> &images, std::string_view class_word, std::string_view token,
                                    int steps, std::uint64_t seed);

    [[nodiscard]] virtual bool supports_similarity() const { return false; }
    /// Image-text similarity in [0, 1].
    virtual double image_text_similarity(const Image &image, std::string_view text);
};

/// Offline backend: out = (1 - s) * init + s * noise(prompt, seed), per
/// channel value, quantized. Latent alteration adds seeded Gaussian noise
/// to the init pixels (the mock's latent) before mixing.
class MockBackend : public Backend {
  public:
    explicit MockBackend(int granularity = 8, int max_concurrency = 4);

    [[nodiscard]] std::string id() const override { return "mock"; }
    [[nodiscard]] int granularity() const override { return granularity_; }
    [[nodiscard]] Determinism determinism() const override { return Determinism::bit_exact; }
    [[nodiscard]] double round_trip_error_bound() const override { return 0; }
    [[nodiscard]] int max_concurrency() const override { return max_concurrency_; }

    Image generate(const GenerationRequest &request) override;

    [[nodiscard]] bool supports_token_training() const override { return true; }
    std::string train_token(const std::vector<Image> &images, std::string_view class_word, std::string_view token,
                            int steps, std::uint64_t seed) override;

    [[nodiscard]] bool supports_similarity() const override { return true; }
    double image_text_similarity(const Image &image, std::string_view text) override;

  private:
    int granularity_;
    int max_concurrency_;
};

/// Adapter for an external generator process. Each call writes the init
/// image and a JSON request into a scratch directory and runs
/// `<command> <request.json>`; the process writes the output PNG (or a
/// JSON reply for token training and similarity) named in the request.
class CommandBackend : public Backend {
  public:
    CommandBackend(std::string id, std::string command, int granularity = 8);

    [[nodiscard]] std::string id() const override { return id_; }
    [[nodiscard]] int granularity() const override { return granularity_; }
    [[nodiscard]] Determinism determinism() const override { return Determinism::statistical; }
    [[nodiscard]] double round_trip_error_bound() const override { return 255; }
    [[nodiscard]] int max_concurrency() const override { return 1; }

    Image generate(const GenerationRequest &request) override;
    [[nodiscard]] bool supports_token_training() const override { return true; }
    std::string train_token(const std::vector<Image> &images, std::string_view class_word, std::string_view token,
                            int steps, std::uint64_t seed) override;
    [[nodiscard]] bool supports_similarity() const override { return true; }
    double image_text_similarity(const Image &image, std::string_view text) override;

  private:
    std::filesystem::path scratch_dir();
    void invoke(const std::filesystem::path &request) const;

    std::string id_;
    std::string command_;
    int granularity_;
    std::uint64_t calls_ = 0;
};

/// "mock", "command:<shell command>", or "stable-diffusion-v1-4" (runs the
/// command in $PEDSYNTH_SD_COMMAND, default tools/sd_img2img.py).
std::unique_ptr<Backend> make_backend(std::string_view id);

// ---------------------------------------------------------------------------

/// s_min + (1 - similarity) * (s_max - s_min).
double compute_dynamic_strength(double similarity, double s_min, double s_max);

struct GenerationResult {
    Image image;
    std::string prompt_text; ///< text sent to the backend (after token substitution)
    double effective_strength = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> metadata;
};

GenerationResult generate(Backend &backend, const Image &init, const PromptRecord &prompt, const GenerationConfig &config,
                          const TechniqueSpec &technique);

using ImageLoader = std::function<Image(const DatasetManifest &, const PedestrianSample &)>;
/// Reads manifest.image_file(sample).
Image load_sample_image(const DatasetManifest &manifest, const PedestrianSample &sample);

struct TokenTrainingResult {
    TokenLibrary library;
    std::map<std::string, std::string> errors; ///< attribute -> reason
};

TokenTrainingResult train_attribute_tokens(Backend &backend, const DatasetManifest &manifest,
                                           const std::vector<std::string> &attributes, int steps, std::uint64_t seed,
                                           const ImageLoader &loader = load_sample_image);

} // namespace pedsynth
