#pragma once

// Data model for real and synthetic pedestrian-attribute datasets and the
// line-delimited manifest format.
//
// Manifest file layout (UTF-8, one JSON object per line):
//   line 1   {"record":"schema","dataset_id":...,"categories":[...],"phrases":{...},
//             "description":...,"metadata":{...}}
//   line 2.. {"record":"sample","sample_id":...,"image_path":...,"attributes":[0,1,...],
//             "split":"train|val|test","source":"real|synthetic", optional "bbox":[x,y,w,h],
//             "width", "height", "prompt", "gen_config_name", "source_sample_id", "label_mask"}

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pedsynth {

/// Lowercase and drop spaces, hyphens and underscores. Used for every
/// phrase and attribute-name comparison.
std::string canonicalize(std::string_view text);

struct AttributeCategory {
    std::string name;
    std::vector<std::string> attributes;
    bool exclusive = false;

    bool operator==(const AttributeCategory &) const = default;
};

/// Attribute categories, their order, and the phrase used for each
/// attribute in prompts. Construction validates the schema invariants.
class AttributeSchema {
  public:
    AttributeSchema() = default;
    AttributeSchema(std::string dataset_id, std::vector<AttributeCategory> categories,
                    std::map<std::string, std::string> phrases, std::string description = {});

    [[nodiscard]] const std::string &dataset_id() const noexcept { return dataset_id_; }
    [[nodiscard]] const std::string &description() const noexcept { return description_; }
    [[nodiscard]] const std::vector<AttributeCategory> &categories() const noexcept { return categories_; }
    [[nodiscard]] const std::map<std::string, std::string> &phrases() const noexcept { return phrases_; }

    /// Attribute names flattened in category order; vector positions follow this order.
    [[nodiscard]] const std::vector<std::string> &attributes() const noexcept { return attributes_; }
    [[nodiscard]] std::size_t size() const noexcept { return attributes_.size(); }

    [[nodiscard]] std::optional<std::size_t> index_of(std::string_view name) const;
    /// Throws InvalidArgument naming the attribute when unknown.
    [[nodiscard]] std::size_t require_index(std::string_view name) const;
    [[nodiscard]] const std::string &phrase(std::string_view name) const;
    [[nodiscard]] std::size_t category_index_of(std::size_t attribute_index) const {
        return category_of_[attribute_index];
    }
    [[nodiscard]] const AttributeCategory *find_category(std::string_view name) const;

    /// Stable hex digest over id, categories and phrases.
    [[nodiscard]] std::string fingerprint() const;

    bool operator==(const AttributeSchema &o) const {
        return dataset_id_ == o.dataset_id_ && categories_ == o.categories_ && phrases_ == o.phrases_ &&
               description_ == o.description_;
    }

  private:
    std::string dataset_id_;
    std::vector<AttributeCategory> categories_;
    std::map<std::string, std::string> phrases_;
    std::string description_;
    std::vector<std::string> attributes_;
    std::vector<std::size_t> category_of_;
};

class AttributeVector {
  public:
    AttributeVector() = default;
    explicit AttributeVector(std::size_t n) : values_(n, 0) {}
    explicit AttributeVector(std::vector<std::uint8_t> values) : values_(std::move(values)) {}

    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool test(std::size_t i) const { return values_.at(i) != 0; }
    void set(std::size_t i, bool on = true) { values_.at(i) = on ? 1 : 0; }
    [[nodiscard]] std::span<const std::uint8_t> values() const noexcept { return values_; }
    [[nodiscard]] std::size_t count() const noexcept;

    bool operator==(const AttributeVector &) const = default;

  private:
    std::vector<std::uint8_t> values_;
};

enum class Split { train, val, test };
enum class Source { real, synthetic };

std::string_view to_string(Split s) noexcept;
std::string_view to_string(Source s) noexcept;
Split parse_split(std::string_view s);
Source parse_source(std::string_view s);

struct BBox {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool operator==(const BBox &) const = default;
};

struct PedestrianSample {
    std::string sample_id;
    std::string image_path;
    AttributeVector attributes;
    Split split = Split::train;
    Source source = Source::real;
    std::optional<BBox> bbox;
    /// Image dimensions, when known; lets validation check the bbox.
    std::optional<int> width;
    std::optional<int> height;
    std::optional<std::string> prompt;
    std::optional<std::string> gen_config_name;
    std::optional<std::string> source_sample_id;
    /// Synthetic samples in masked-label mode: 1 where the label is known.
    std::optional<std::vector<std::uint8_t>> label_mask;

    bool operator==(const PedestrianSample &) const = default;
};

struct DatasetManifest {
    AttributeSchema schema;
    std::vector<PedestrianSample> samples;
    std::map<std::string, std::string> metadata;
    /// Directory image paths are relative to. Not serialized.
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path image_file(const PedestrianSample &s) const { return root / s.image_path; }
    [[nodiscard]] std::size_t count(Split split) const;

    /// Structural equality: schema, samples, metadata (root ignored).
    [[nodiscard]] bool same_content(const DatasetManifest &o) const {
        return schema == o.schema && samples == o.samples && metadata == o.metadata;
    }
};

/// Names of positive attributes in schema order.
std::vector<std::string> positive_attributes(const AttributeVector &v, const AttributeSchema &schema);

DatasetManifest load_manifest(const std::filesystem::path &path);
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path &root = {});
void save_manifest(const DatasetManifest &manifest, const std::filesystem::path &path);
std::string serialize_manifest(const DatasetManifest &manifest);

/// Empty iff every type invariant holds. Each entry names the sample and the rule.
std::vector<std::string> validate_manifest(const DatasetManifest &manifest);

DatasetManifest subset_by_attribute(const DatasetManifest &manifest, std::string_view attribute, bool positive);
DatasetManifest filter_split(const DatasetManifest &manifest, Split split);

/// `n` distinct samples chosen by a seeded partial shuffle over the samples
/// sorted by id, so the choice depends only on content, `n` and `seed`.
DatasetManifest random_subset(const DatasetManifest &manifest, std::size_t n, std::uint64_t seed);

/// Schema JSON (the manifest header without "record"/"metadata").
AttributeSchema load_schema(const std::filesystem::path &path);
void save_schema(const AttributeSchema &schema, const std::filesystem::path &path);

/// CSV annotations: header `sample_id,image_path,split,<attribute...>` plus
/// optional `bbox_x,bbox_y,bbox_w,bbox_h`. Attribute columns hold 0/1.
DatasetManifest ingest_csv(const std::filesystem::path &csv, const AttributeSchema &schema);

} // namespace pedsynth
