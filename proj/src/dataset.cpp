#include "pedsynth/dataset.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/json_io.hpp"
#include "pedsynth/rng.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace pedsynth {

std::string canonicalize(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (unsigned char c : text) {
        if (c == ' ' || c == '-' || c == '_' || c == '\t') continue;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

AttributeSchema::AttributeSchema(std::string dataset_id, std::vector<AttributeCategory> categories,
                                 std::map<std::string, std::string> phrases, std::string description)
    : dataset_id_(std::move(dataset_id)), categories_(std::move(categories)), phrases_(std::move(phrases)),
      description_(std::move(description)) {
    if (dataset_id_.empty()) throw InvalidArgument("schema: dataset_id must not be empty");
    std::unordered_set<std::string> seen;
    for (std::size_t c = 0; c < categories_.size(); ++c) {
        for (const auto &a : categories_[c].attributes) {
            if (a.empty()) throw InvalidArgument("schema: empty attribute name in category '" + categories_[c].name + "'");
            if (!seen.insert(a).second) throw InvalidArgument("schema: attribute '" + a + "' appears more than once");
            attributes_.push_back(a);
            category_of_.push_back(c);
        }
    }
    for (const auto &[name, phrase] : phrases_) {
        if (!seen.contains(name)) throw InvalidArgument("schema: phrase given for unknown attribute '" + name + "'");
        if (canonicalize(phrase).empty()) throw InvalidArgument("schema: empty phrase for '" + name + "'");
    }
    // Names and phrases are both matchable keys; each canonical key must
    // resolve to a single attribute.
    std::unordered_map<std::string, std::string> owner;
    auto claim = [&](const std::string &key, const std::string &attr) {
        auto [it, inserted] = owner.emplace(key, attr);
        if (!inserted && it->second != attr)
            throw InvalidArgument("schema: '" + key + "' maps to both '" + it->second + "' and '" + attr + "'");
    };
    for (const auto &a : attributes_) {
        auto it = phrases_.find(a);
        if (it == phrases_.end()) throw InvalidArgument("schema: attribute '" + a + "' has no phrase");
        claim(canonicalize(it->second), a);
    }
    for (const auto &a : attributes_) claim(canonicalize(a), a);
}

std::optional<std::size_t> AttributeSchema::index_of(std::string_view name) const {
    auto it = std::find(attributes_.begin(), attributes_.end(), name);
    if (it == attributes_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - attributes_.begin());
}

std::size_t AttributeSchema::require_index(std::string_view name) const {
    auto idx = index_of(name);
    if (!idx) throw InvalidArgument("unknown attribute '" + std::string(name) + "' in schema " + dataset_id_);
    return *idx;
}

const std::string &AttributeSchema::phrase(std::string_view name) const {
    auto it = phrases_.find(std::string(name));
    if (it == phrases_.end()) throw InvalidArgument("unknown attribute '" + std::string(name) + "'");
    return it->second;
}

const AttributeCategory *AttributeSchema::find_category(std::string_view name) const {
    for (const auto &c : categories_)
        if (c.name == name) return &c;
    return nullptr;
}

json schema_to_json(const AttributeSchema &schema) {
    json j;
    j["dataset_id"] = schema.dataset_id();
    if (!schema.description().empty()) j["description"] = schema.description();
    json cats = json::array();
    for (const auto &c : schema.categories())
        cats.push_back(json{{"name", c.name}, {"attributes", c.attributes}, {"exclusive", c.exclusive}});
    j["categories"] = std::move(cats);
    json phrases = json::object();
    for (const auto &a : schema.attributes()) phrases[a] = schema.phrase(a);
    j["phrases"] = std::move(phrases);
    return j;
}

AttributeSchema schema_from_json(const json &j) {
    std::vector<AttributeCategory> cats;
    for (const auto &c : j.at("categories")) {
        AttributeCategory cat;
        cat.name = c.at("name").get<std::string>();
        cat.attributes = c.at("attributes").get<std::vector<std::string>>();
        cat.exclusive = c.value("exclusive", false);
        cats.push_back(std::move(cat));
    }
    std::map<std::string, std::string> phrases;
    for (const auto &[k, v] : j.at("phrases").items()) phrases[k] = v.get<std::string>();
    return AttributeSchema(j.at("dataset_id").get<std::string>(), std::move(cats), std::move(phrases),
                           j.value("description", std::string{}));
}

namespace {

json sample_to_json(const PedestrianSample &s) {
    json j;
    j["record"] = "sample";
    j["sample_id"] = s.sample_id;
    j["image_path"] = s.image_path;
    j["attributes"] = std::vector<int>(s.attributes.values().begin(), s.attributes.values().end());
    j["split"] = to_string(s.split);
    j["source"] = to_string(s.source);
    if (s.bbox) j["bbox"] = {s.bbox->x, s.bbox->y, s.bbox->w, s.bbox->h};
    if (s.width) j["width"] = *s.width;
    if (s.height) j["height"] = *s.height;
    if (s.prompt) j["prompt"] = *s.prompt;
    if (s.gen_config_name) j["gen_config_name"] = *s.gen_config_name;
    if (s.source_sample_id) j["source_sample_id"] = *s.source_sample_id;
    if (s.label_mask) j["label_mask"] = std::vector<int>(s.label_mask->begin(), s.label_mask->end());
    return j;
}

std::vector<std::uint8_t> bits_from_json(const json &arr, const char *field) {
    std::vector<std::uint8_t> out;
    out.reserve(arr.size());
    for (const auto &v : arr) {
        const int b = v.get<int>();
        if (b != 0 && b != 1) throw InvalidArgument(std::string(field) + " values must be 0 or 1");
        out.push_back(static_cast<std::uint8_t>(b));
    }
    return out;
}

PedestrianSample sample_from_json(const json &j) {
    PedestrianSample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.image_path = j.at("image_path").get<std::string>();
    s.attributes = AttributeVector(bits_from_json(j.at("attributes"), "attributes"));
    s.split = parse_split(j.at("split").get<std::string>());
    s.source = parse_source(j.at("source").get<std::string>());
    if (j.contains("bbox")) {
        const auto &b = j.at("bbox");
        if (b.size() != 4) throw InvalidArgument("bbox must have 4 entries");
        s.bbox = BBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    }
    if (j.contains("width")) s.width = j.at("width").get<int>();
    if (j.contains("height")) s.height = j.at("height").get<int>();
    if (j.contains("prompt")) s.prompt = j.at("prompt").get<std::string>();
    if (j.contains("gen_config_name")) s.gen_config_name = j.at("gen_config_name").get<std::string>();
    if (j.contains("source_sample_id")) s.source_sample_id = j.at("source_sample_id").get<std::string>();
    if (j.contains("label_mask")) s.label_mask = bits_from_json(j.at("label_mask"), "label_mask");
    return s;
}

} // namespace

std::string AttributeSchema::fingerprint() const {
    const std::string dump = schema_to_json(*this).dump();
    const std::uint64_t h = fnv1a64(dump);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = hex[(h >> (4 * i)) & 0xF];
    return out;
}

std::size_t AttributeVector::count() const noexcept {
    return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

std::string_view to_string(Split s) noexcept {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

std::string_view to_string(Source s) noexcept { return s == Source::real ? "real" : "synthetic"; }

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw InvalidArgument("unknown split '" + std::string(s) + "'");
}

Source parse_source(std::string_view s) {
    if (s == "real") return Source::real;
    if (s == "synthetic") return Source::synthetic;
    throw InvalidArgument("unknown source '" + std::string(s) + "'");
}

std::size_t DatasetManifest::count(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [&](const auto &s) { return s.split == split; }));
}

std::vector<std::string> positive_attributes(const AttributeVector &v, const AttributeSchema &schema) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size() && i < schema.size(); ++i)
        if (v.test(i)) out.push_back(schema.attributes()[i]);
    return out;
}

std::vector<std::string> validate_manifest(const DatasetManifest &m) {
    std::vector<std::string> issues;
    std::unordered_set<std::string> ids;
    const auto &schema = m.schema;
    for (const auto &s : m.samples) {
        const std::string who = "sample '" + s.sample_id + "': ";
        if (s.sample_id.empty()) issues.push_back("sample with empty sample_id");
        if (!ids.insert(s.sample_id).second) issues.push_back(who + "duplicate sample_id");
        if (s.attributes.size() != schema.size()) {
            issues.push_back(who + "attribute vector length " + std::to_string(s.attributes.size()) +
                             " does not match schema size " + std::to_string(schema.size()));
            continue;
        }
        for (const auto &cat : schema.categories()) {
            if (!cat.exclusive) continue;
            std::size_t on = 0;
            for (const auto &a : cat.attributes) on += s.attributes.test(*schema.index_of(a)) ? 1 : 0;
            if (on > 1) issues.push_back(who + "exclusive category '" + cat.name + "' has " + std::to_string(on) + " positives");
        }
        if (s.source == Source::synthetic) {
            if (!s.prompt) issues.push_back(who + "synthetic requires prompt");
            if (!s.gen_config_name) issues.push_back(who + "synthetic requires gen_config_name");
        } else {
            if (s.prompt) issues.push_back(who + "real sample must not carry prompt");
            if (s.gen_config_name) issues.push_back(who + "real sample must not carry gen_config_name");
            if (s.label_mask) issues.push_back(who + "real sample must not carry label_mask");
        }
        if (s.label_mask && s.label_mask->size() != schema.size())
            issues.push_back(who + "label_mask length does not match schema size");
        if (s.bbox) {
            const auto &b = *s.bbox;
            if (b.x < 0 || b.y < 0 || b.w <= 0 || b.h <= 0) issues.push_back(who + "bbox must be non-negative with positive area");
            if (s.width && s.height && (b.x + b.w > *s.width || b.y + b.h > *s.height))
                issues.push_back(who + "bbox lies outside image bounds");
        }
    }
    return issues;
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path &root) {
    DatasetManifest m;
    m.root = root;
    std::size_t line_no = 0;
    bool have_schema = false;
    std::size_t pos = 0;
    std::unordered_set<std::string> ids;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            if (end == text.size()) break;
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error &e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what(), line_no, e.byte);
        }
        try {
            const std::string record = j.value("record", std::string{});
            if (!have_schema) {
                if (record != "schema") throw ParseError("manifest line 1 must be a schema record", line_no);
                m.schema = schema_from_json(j);
                if (j.contains("metadata"))
                    for (const auto &[k, v] : j.at("metadata").items())
                        m.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
                have_schema = true;
            } else {
                if (record != "sample") throw ParseError("manifest line " + std::to_string(line_no) + ": expected sample record", line_no);
                auto s = sample_from_json(j);
                if (!ids.insert(s.sample_id).second)
                    throw InvalidArgument("manifest line " + std::to_string(line_no) + ": duplicate sample_id '" + s.sample_id + "'");
                if (s.attributes.size() != m.schema.size())
                    throw InvalidArgument("manifest line " + std::to_string(line_no) + ": sample '" + s.sample_id +
                                          "' has " + std::to_string(s.attributes.size()) + " attributes, schema has " +
                                          std::to_string(m.schema.size()));
                m.samples.push_back(std::move(s));
            }
        } catch (const json::exception &e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what(), line_no);
        } catch (const InvalidArgument &e) {
            const std::string msg = e.what();
            if (msg.rfind("manifest line", 0) == 0) throw;
            throw InvalidArgument("manifest line " + std::to_string(line_no) + ": " + msg);
        }
        if (end == text.size()) break;
    }
    if (!have_schema) throw ParseError("manifest has no schema record", line_no);
    if (auto issues = validate_manifest(m); !issues.empty()) throw InvalidArgument("invalid manifest: " + issues.front());
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path &path) {
    return parse_manifest(read_file(path), path.parent_path());
}

std::string serialize_manifest(const DatasetManifest &m) {
    json header;
    header["record"] = "schema";
    const json schema = schema_to_json(m.schema);
    for (const auto &[k, v] : schema.items()) header[k] = v;
    json meta = json::object();
    for (const auto &[k, v] : m.metadata) meta[k] = v;
    header["metadata"] = std::move(meta);
    std::string out = header.dump();
    out.push_back('\n');
    for (const auto &s : m.samples) {
        out += sample_to_json(s).dump();
        out.push_back('\n');
    }
    return out;
}

void save_manifest(const DatasetManifest &m, const std::filesystem::path &path) {
    write_file(path, serialize_manifest(m));
}

DatasetManifest subset_by_attribute(const DatasetManifest &m, std::string_view attribute, bool positive) {
    const std::size_t idx = m.schema.require_index(attribute);
    DatasetManifest out{m.schema, {}, m.metadata, m.root};
    for (const auto &s : m.samples)
        if (s.attributes.test(idx) == positive) out.samples.push_back(s);
    return out;
}

DatasetManifest filter_split(const DatasetManifest &m, Split split) {
    DatasetManifest out{m.schema, {}, m.metadata, m.root};
    for (const auto &s : m.samples)
        if (s.split == split) out.samples.push_back(s);
    return out;
}

DatasetManifest random_subset(const DatasetManifest &m, std::size_t n, std::uint64_t seed) {
    if (n > m.samples.size())
        throw InvalidArgument("random_subset: requested " + std::to_string(n) + " samples but only " +
                              std::to_string(m.samples.size()) + " available");
    std::vector<std::size_t> order(m.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return m.samples[a].sample_id < m.samples[b].sample_id; });
    Rng rng(splitmix64(seed));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
        std::swap(order[i], order[j]);
    }
    DatasetManifest out{m.schema, {}, m.metadata, m.root};
    out.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.samples.push_back(m.samples[order[i]]);
    return out;
}

AttributeSchema load_schema(const std::filesystem::path &path) {
    try {
        return schema_from_json(json::parse(read_file(path)));
    } catch (const json::exception &e) {
        throw ParseError("schema " + path.string() + ": " + e.what(), 0);
    }
}

void save_schema(const AttributeSchema &schema, const std::filesystem::path &path) {
    write_file(path, schema_to_json(schema).dump(2) + "\n");
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(std::move(cur));
    return cells;
}

} // namespace

DatasetManifest ingest_csv(const std::filesystem::path &csv, const AttributeSchema &schema) {
    const std::string text = read_file(csv);
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> col;
    DatasetManifest m;
    m.schema = schema;
    m.root = csv.parent_path();
    std::vector<std::size_t> attr_col(schema.size());
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (col.empty()) {
            for (std::size_t i = 0; i < cells.size(); ++i) col[cells[i]] = i;
            for (const char *req : {"sample_id", "image_path", "split"})
                if (!col.contains(req)) throw ParseError(csv.string() + ": missing column '" + req + "'", line_no);
            for (std::size_t a = 0; a < schema.size(); ++a) {
                auto it = col.find(schema.attributes()[a]);
                if (it == col.end()) throw ParseError(csv.string() + ": missing attribute column '" + schema.attributes()[a] + "'", line_no);
                attr_col[a] = it->second;
            }
            continue;
        }
        if (cells.size() < col.size()) throw ParseError(csv.string() + ": short row at line " + std::to_string(line_no), line_no);
        PedestrianSample s;
        s.sample_id = cells[col["sample_id"]];
        s.image_path = cells[col["image_path"]];
        try {
            s.split = parse_split(cells[col["split"]]);
        } catch (const InvalidArgument &e) {
            throw ParseError(csv.string() + " line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
        AttributeVector v(schema.size());
        for (std::size_t a = 0; a < schema.size(); ++a) {
            const auto &cell = cells[attr_col[a]];
            if (cell != "0" && cell != "1")
                throw ParseError(csv.string() + " line " + std::to_string(line_no) + ": attribute cell must be 0 or 1", line_no);
            v.set(a, cell == "1");
        }
        s.attributes = std::move(v);
        if (col.contains("bbox_x") && col.contains("bbox_y") && col.contains("bbox_w") && col.contains("bbox_h") &&
            !cells[col["bbox_x"]].empty()) {
            s.bbox = BBox{std::stoi(cells[col["bbox_x"]]), std::stoi(cells[col["bbox_y"]]), std::stoi(cells[col["bbox_w"]]),
                          std::stoi(cells[col["bbox_h"]])};
        }
        m.samples.push_back(std::move(s));
    }
    if (auto issues = validate_manifest(m); !issues.empty()) throw InvalidArgument(csv.string() + ": " + issues.front());
    return m;
}

} // namespace pedsynth
