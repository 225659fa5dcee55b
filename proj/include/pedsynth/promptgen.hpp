#pragma once

// Prompt construction from annotations, captions and language-model
// output, plus the inverse mapping from text back to attributes.

#include "pedsynth/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace pedsynth {

struct PromptRecord {
    std::string text;
    std::set<std::string> attributes;
    std::string builder;
    std::optional<std::string> source_sample_id;

    bool operator==(const PromptRecord &) const = default;
};

// ---------------------------------------------------------------------------
// Phrase matching

struct PhraseMatch {
    std::string attribute;
    std::size_t begin = 0; ///< byte offset into the original text
    std::size_t end = 0;
};

/// Whole-token, case-insensitive, longest-first matches of schema phrases
/// and attribute names; matched tokens are consumed. Sorted by offset.
std::vector<PhraseMatch> find_phrase_matches(std::string_view text, const AttributeSchema &schema);

std::set<std::string> extract_attributes(std::string_view text, const AttributeSchema &schema);

/// prompt.attributes is a subset of the sample's positive attributes.
bool check_alignment(const PromptRecord &prompt, const PedestrianSample &sample, const AttributeSchema &schema);

// ---------------------------------------------------------------------------
// Hand-crafted prompts

inline constexpr std::string_view kBaselineBuilder = "baseline";
inline constexpr std::string_view kIntegrationBuilder = "integration";

const std::vector<std::string> &baseline_colors();
const std::vector<std::string> &baseline_clothes();

/// "A photo of a pedestrian wearing <color> <clothes>"; hat and hair take "with".
PromptRecord build_baseline_prompt(std::string_view color, std::string_view clothes);

/// Slot names in rendering order.
const std::vector<std::string> &integration_slot_names();
/// Allowed values per slot. The action slot also accepts "" (omitted).
const std::vector<std::string> &integration_vocabulary(std::string_view slot);

using IntegrationSlots = std::map<std::string, std::string>;

/// Missing slots are drawn uniformly from their vocabulary with `seed`.
PromptRecord build_integration_prompt(const IntegrationSlots &slots, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Attribute grammars

enum class GrammarId { RAPzs, PETAzs, PA100k };

std::string_view to_string(GrammarId g) noexcept;
GrammarId parse_grammar_id(std::string_view s);

struct GrammarGroup {
    std::string category;
    /// Attributes rendered from the category, in order; empty means all.
    std::vector<std::string> attributes;
    /// Colour category rendered in front of this group when the group is non-empty.
    std::string color_category;
};

struct GrammarSegment {
    std::string connective;
    std::vector<GrammarGroup> groups;
};

struct AttributeGrammar {
    GrammarId id;
    std::string dataset_id;
    std::string default_head;
    std::vector<std::string> heads;
    std::string subject_category;
    std::string fallback_subject = "pedestrian";
    std::vector<GrammarSegment> segments;
    /// Attributes rendered as a literal word that do not count as encoded
    /// (colours, "nothing" options).
    std::map<std::string, std::string> literal_words;
};

const AttributeGrammar &attribute_grammar(GrammarId id);

/// Category name -> words in rendering order.
using SlotWords = std::map<std::string, std::vector<std::string>>;

/// Renders a grammar from slot words. Empty categories drop out together
/// with their connective; colour words only render in front of a non-empty garment group.
std::string render_grammar(const AttributeGrammar &grammar, std::string_view head, const SlotWords &words);

/// Attributes the grammar encodes as labels (rendered and not literal-only).
std::set<std::string> grammar_covered_attributes(const AttributeGrammar &grammar, const AttributeSchema &schema);

/// `head` defaults to the grammar's default head form.
PromptRecord build_attribute_prompt(const PedestrianSample &sample, const AttributeSchema &schema, GrammarId grammar,
                                    std::optional<std::string_view> head = std::nullopt);

/// Schema-agnostic fallback: "A photo of a pedestrian with <p1>, <p2> and
/// <p3>." over the phrases of every positive attribute, in schema order.
PromptRecord build_phrase_list_prompt(const PedestrianSample &sample, const AttributeSchema &schema);

// ---------------------------------------------------------------------------
// Captions

/// sample_id -> caption
using CaptionTable = std::map<std::string, std::string>;

/// JSON lines {"sample_id": ..., "caption": ...}
CaptionTable load_captions(const std::filesystem::path &path);
void save_captions(const CaptionTable &captions, const std::filesystem::path &path);

/// MALS-style annotation list: JSON array of {"image": path, "caption": text}.
/// Produces real samples with empty attribute vectors plus the caption table.
std::pair<DatasetManifest, CaptionTable> ingest_captioned_images(const std::filesystem::path &json_path,
                                                                 const AttributeSchema &schema, Split split = Split::train);

PromptRecord caption_prompt(std::string caption, const AttributeSchema &schema, std::string builder,
                            std::optional<std::string> source_sample_id = std::nullopt);

/// One prompt per sample. Aligned prompts use the sample's own caption;
/// unaligned prompts use a seeded random caption from another sample.
std::vector<PromptRecord> caption_prompts(const std::vector<PedestrianSample> &samples, const CaptionTable &captions,
                                          const AttributeSchema &schema, bool aligned, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Language-model requests

enum class LlmStyle { DALDA, ALIA };

std::string_view to_string(LlmStyle s) noexcept;
LlmStyle parse_llm_style(std::string_view s);

struct LlmRequest {
    LlmStyle style;
    std::string text;
    int expected_count = 0;
};

/// ALIA requests need captions; `prefix` fills the requested output form.
LlmRequest build_llm_request(LlmStyle style, const AttributeSchema &schema, const std::vector<std::string> &captions,
                             int count, std::string_view prefix = "A photo of a pedestrian");

/// DALDA: key/value object (JSON or single-quoted, outer braces optional).
/// ALIA: one prompt per non-empty line, list markers stripped.
std::vector<PromptRecord> parse_llm_response(LlmStyle style, std::string_view response, const AttributeSchema &schema);

class LlmClient {
  public:
    virtual ~LlmClient() = default;
    virtual std::string send(const LlmRequest &request) = 0;
};

/// Offline client. Fixture file: {"DALDA": [response, ...], "ALIA": [...]};
/// responses for a style are returned in order, cycling.
class FileLlmClient final : public LlmClient {
  public:
    explicit FileLlmClient(const std::filesystem::path &fixture);
    std::string send(const LlmRequest &request) override;

  private:
    std::map<LlmStyle, std::vector<std::string>> responses_;
    std::map<LlmStyle, std::size_t> next_;
};

} // namespace pedsynth
