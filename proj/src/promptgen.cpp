#include "pedsynth/promptgen.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <sstream>

namespace pedsynth {

using json = nlohmann::ordered_json;

namespace {

struct Token {
    std::string canon;
    std::size_t begin;
    std::size_t end;
};

bool is_token_char(unsigned char c) { return std::isalnum(c) || c == '-' || c == '_' || c >= 0x80; }

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !is_token_char(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t b = i;
        while (i < text.size() && is_token_char(static_cast<unsigned char>(text[i]))) ++i;
        if (i > b) {
            std::string canon = canonicalize(text.substr(b, i - b));
            if (!canon.empty()) tokens.push_back({std::move(canon), b, i});
        }
    }
    return tokens;
}

struct Key {
    std::string canon;
    std::string attribute;
};

std::vector<Key> matching_keys(const AttributeSchema &schema) {
    std::vector<Key> keys;
    for (const auto &a : schema.attributes()) {
        keys.push_back({canonicalize(schema.phrase(a)), a});
        std::string name = canonicalize(a);
        if (name != keys.back().canon) keys.push_back({std::move(name), a});
    }
    std::sort(keys.begin(), keys.end(), [](const Key &x, const Key &y) {
        if (x.canon.size() != y.canon.size()) return x.canon.size() > y.canon.size();
        return x.canon < y.canon;
    });
    return keys;
}

std::string join(const std::vector<std::string> &parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

} // namespace

std::vector<PhraseMatch> find_phrase_matches(std::string_view text, const AttributeSchema &schema) {
    const auto tokens = tokenize(text);
    std::vector<bool> consumed(tokens.size(), false);
    std::vector<PhraseMatch> matches;
    for (const auto &key : matching_keys(schema)) {
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (consumed[i]) continue;
            std::string concat;
            std::size_t j = i;
            while (j < tokens.size() && !consumed[j] && concat.size() < key.canon.size()) concat += tokens[j++].canon;
            if (concat != key.canon) continue;
            for (std::size_t k = i; k < j; ++k) consumed[k] = true;
            matches.push_back({key.attribute, tokens[i].begin, tokens[j - 1].end});
        }
    }
    std::sort(matches.begin(), matches.end(), [](const auto &a, const auto &b) { return a.begin < b.begin; });
    return matches;
}

std::set<std::string> extract_attributes(std::string_view text, const AttributeSchema &schema) {
    std::set<std::string> out;
    for (auto &m : find_phrase_matches(text, schema)) out.insert(std::move(m.attribute));
    return out;
}

bool check_alignment(const PromptRecord &prompt, const PedestrianSample &sample, const AttributeSchema &schema) {
    for (const auto &a : prompt.attributes) {
        auto idx = schema.index_of(a);
        if (!idx || *idx >= sample.attributes.size() || !sample.attributes.test(*idx)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------

const std::vector<std::string> &baseline_colors() {
    static const std::vector<std::string> v{"white", "black", "red", "blue", "yellow", "orange"};
    return v;
}

const std::vector<std::string> &baseline_clothes() {
    static const std::vector<std::string> v{"sweater", "t-shirt", "dress", "jeans", "hat", "hair"};
    return v;
}

PromptRecord build_baseline_prompt(std::string_view color, std::string_view clothes) {
    const auto &colors = baseline_colors();
    const auto &items = baseline_clothes();
    if (std::find(colors.begin(), colors.end(), color) == colors.end())
        throw InvalidArgument("baseline prompt: color '" + std::string(color) + "' not in vocabulary");
    if (std::find(items.begin(), items.end(), clothes) == items.end())
        throw InvalidArgument("baseline prompt: clothes '" + std::string(clothes) + "' not in vocabulary");
    const bool worn_with = clothes == "hat" || clothes == "hair";
    PromptRecord r;
    r.text = std::string("A photo of a pedestrian ") + (worn_with ? "with " : "wearing ") + std::string(color) + " " +
             std::string(clothes);
    r.attributes = {std::string(color), std::string(clothes)};
    r.builder = std::string(kBaselineBuilder);
    return r;
}

const std::vector<std::string> &integration_slot_names() {
    static const std::vector<std::string> v{"template", "article", "age",   "body", "expression", "class",
                                            "clothes_article", "clothes", "color", "pose", "direction", "action"};
    return v;
}

const std::vector<std::string> &integration_vocabulary(std::string_view slot) {
    static const std::map<std::string, std::vector<std::string>, std::less<>> vocab{
        {"template", {"There is a", "A photo of"}},
        {"article", {"a", "an", "the"}},
        {"age", {"young", "old", "little", "elderly"}},
        {"body", {"tall", "short", "big", "small"}},
        {"expression", {"smiling", "crying", "displeased"}},
        {"class", {"pedestrian"}},
        {"clothes_article", {"in", "wearing", "with"}},
        {"clothes", {"sweater", "t-shirt", "dress", "jeans", "hat", "hair"}},
        {"color", {"white", "black", "red", "blue", "yellow", "orange"}},
        {"pose", {"standing", "walking", "sitting", "crouching"}},
        {"direction", {"in front", "in profile", "from behind"}},
        {"action", {"", "walking"}},
    };
    auto it = vocab.find(slot);
    if (it == vocab.end()) throw InvalidArgument("integration prompt: unknown slot '" + std::string(slot) + "'");
    return it->second;
}

PromptRecord build_integration_prompt(const IntegrationSlots &slots, std::uint64_t seed) {
    for (const auto &[slot, value] : slots) {
        const auto &vocab = integration_vocabulary(slot);
        if (std::find(vocab.begin(), vocab.end(), value) == vocab.end())
            throw InvalidArgument("integration prompt: '" + value + "' not in vocabulary of slot '" + slot + "'");
    }
    Rng rng(hash_combine(seed, 0x1A7E6a710Dull));
    std::vector<std::string> parts;
    std::map<std::string, std::string> chosen;
    for (const auto &slot : integration_slot_names()) {
        const auto &vocab = integration_vocabulary(slot);
        // Draw even when the slot is given so the stream position does not
        // depend on which slots were provided.
        const std::string &drawn = vocab[static_cast<std::size_t>(rng.below(vocab.size()))];
        auto it = slots.find(slot);
        const std::string &value = it != slots.end() ? it->second : drawn;
        chosen[slot] = value;
        if (!value.empty()) parts.push_back(value);
    }
    PromptRecord r;
    r.text = join(parts, " ") + ".";
    r.attributes = {chosen["clothes"], chosen["color"]};
    r.builder = std::string(kIntegrationBuilder);
    return r;
}

// ---------------------------------------------------------------------------

std::string_view to_string(GrammarId g) noexcept {
    switch (g) {
    case GrammarId::RAPzs: return "RAPzs";
    case GrammarId::PETAzs: return "PETAzs";
    case GrammarId::PA100k: return "PA100k";
    }
    return "RAPzs";
}

GrammarId parse_grammar_id(std::string_view s) {
    if (s == "RAPzs") return GrammarId::RAPzs;
    if (s == "PETAzs") return GrammarId::PETAzs;
    if (s == "PA100k") return GrammarId::PA100k;
    throw InvalidArgument("unknown grammar '" + std::string(s) + "'");
}

namespace {

AttributeGrammar make_rapzs_grammar() {
    AttributeGrammar g;
    g.id = GrammarId::RAPzs;
    g.dataset_id = "RAPzs";
    g.heads = {"A", "There is a"};
    g.default_head = "A";
    g.subject_category = "gender";
    g.segments = {
        {"with", {{"head", {}, {}}}},
        {"is", {{"action", {}, {}}}},
        {"", {{"accessory", {}, {}}}},
        {"wearing", {{"upper body", {}, {}}}},
        {"wearing", {{"lower body", {}, {}}}},
        {"wearing", {{"footwear", {}, {}}}},
    };
    return g;
}

AttributeGrammar make_petazs_grammar() {
    AttributeGrammar g;
    g.id = GrammarId::PETAzs;
    g.dataset_id = "PETAzs";
    g.heads = {"A", "There is a"};
    g.default_head = "A";
    g.subject_category = "gender";
    g.segments = {
        {"with", {{"hair", {}, "hair color"}}},
        {"carrying", {{"attachment", {}, {}}}},
        {"with", {{"accessory", {}, {}}}},
        {"wearing", {{"upper body", {}, "upper color"}, {"lower body", {}, "lower color"}, {"footwear", {}, "footwear color"}}},
    };
    g.literal_words = {{"attachmentNothing", "nothing"}, {"accessoryNothing", "nothing"}};
    static constexpr const char *colours[] = {"black", "blue", "brown", "green", "grey", "orange",
                                              "pink", "purple", "red", "white", "yellow"};
    for (const char *prefix : {"hairColor", "upperBody", "lowerBody", "footwear"}) {
        for (const char *c : colours) {
            std::string attr = std::string(prefix) + static_cast<char>(c[0] - 'a' + 'A') + (c + 1);
            g.literal_words[attr] = c;
        }
    }
    return g;
}

AttributeGrammar make_pa100k_grammar() {
    AttributeGrammar g;
    g.id = GrammarId::PA100k;
    g.dataset_id = "PA100k";
    g.heads = {"There is a", "A"};
    g.default_head = "There is a";
    g.subject_category = "gender";
    g.segments = {
        {"from", {{"view", {}, {}}}},
        {"with", {{"attachment", {}, {}}}},
        {"wearing",
         {{"upper wearing", {}, {}},
          {"upper pattern", {"UpperLogo", "UpperPlaid", "UpperSplice"}, {}},
          {"lower clothes", {}, {}},
          {"lower pattern", {}, {}},
          {"shoes", {}, {}}}},
    };
    return g;
}

/// Attributes of a group present in the schema, in rendering order.
std::vector<std::string> group_attributes(const GrammarGroup &group, const AttributeSchema &schema) {
    const AttributeCategory *cat = schema.find_category(group.category);
    if (!cat) return {};
    if (group.attributes.empty()) return cat->attributes;
    std::vector<std::string> out;
    for (const auto &a : group.attributes)
        if (std::find(cat->attributes.begin(), cat->attributes.end(), a) != cat->attributes.end()) out.push_back(a);
    return out;
}

std::vector<std::string> category_attributes(const std::string &category, const AttributeSchema &schema) {
    const AttributeCategory *cat = schema.find_category(category);
    return cat ? cat->attributes : std::vector<std::string>{};
}

} // namespace

const AttributeGrammar &attribute_grammar(GrammarId id) {
    static const AttributeGrammar rap = make_rapzs_grammar();
    static const AttributeGrammar peta = make_petazs_grammar();
    static const AttributeGrammar pa = make_pa100k_grammar();
    switch (id) {
    case GrammarId::RAPzs: return rap;
    case GrammarId::PETAzs: return peta;
    case GrammarId::PA100k: return pa;
    }
    return rap;
}

std::string render_grammar(const AttributeGrammar &grammar, std::string_view head, const SlotWords &words) {
    auto get = [&](const std::string &cat) -> const std::vector<std::string> & {
        static const std::vector<std::string> empty;
        auto it = words.find(cat);
        return it == words.end() ? empty : it->second;
    };
    std::string out(head);
    const auto &subject = get(grammar.subject_category);
    out += " ";
    out += subject.empty() ? grammar.fallback_subject : join(subject, " ");
    for (const auto &seg : grammar.segments) {
        std::vector<std::string> parts;
        for (const auto &group : seg.groups) {
            const auto &garment = get(group.category);
            if (garment.empty()) continue;
            if (!group.color_category.empty())
                for (const auto &c : get(group.color_category)) parts.push_back(c);
            parts.insert(parts.end(), garment.begin(), garment.end());
        }
        if (parts.empty()) continue;
        if (!seg.connective.empty()) out += " " + seg.connective;
        out += " " + join(parts, " ");
    }
    out += ".";
    return out;
}

std::set<std::string> grammar_covered_attributes(const AttributeGrammar &grammar, const AttributeSchema &schema) {
    std::set<std::string> out;
    auto add = [&](const std::vector<std::string> &attrs) {
        for (const auto &a : attrs)
            if (!grammar.literal_words.contains(a)) out.insert(a);
    };
    add(category_attributes(grammar.subject_category, schema));
    for (const auto &seg : grammar.segments)
        for (const auto &group : seg.groups) add(group_attributes(group, schema));
    return out;
}

PromptRecord build_phrase_list_prompt(const PedestrianSample &sample, const AttributeSchema &schema) {
    if (sample.attributes.size() != schema.size())
        throw InvalidArgument("sample '" + sample.sample_id + "' attribute vector does not match schema");
    PromptRecord r;
    std::vector<std::string> phrases;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (!sample.attributes.test(i)) continue;
        phrases.push_back(schema.phrase(schema.attributes()[i]));
        r.attributes.insert(schema.attributes()[i]);
    }
    r.text = "A photo of a pedestrian";
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        r.text += i == 0 ? " with " : (i + 1 == phrases.size() ? " and " : ", ");
        r.text += phrases[i];
    }
    r.text += ".";
    r.builder = "phrase_list";
    r.source_sample_id = sample.sample_id;
    return r;
}

PromptRecord build_attribute_prompt(const PedestrianSample &sample, const AttributeSchema &schema, GrammarId grammar_id,
                                    std::optional<std::string_view> head) {
    const AttributeGrammar &grammar = attribute_grammar(grammar_id);
    if (schema.dataset_id() != grammar.dataset_id)
        throw InvalidArgument("grammar " + std::string(to_string(grammar_id)) + " does not match schema '" +
                              schema.dataset_id() + "'");
    if (sample.attributes.size() != schema.size())
        throw InvalidArgument("sample '" + sample.sample_id + "' attribute vector does not match schema");
    const std::string_view head_form = head.value_or(grammar.default_head);
    if (std::find(grammar.heads.begin(), grammar.heads.end(), head_form) == grammar.heads.end())
        throw InvalidArgument("grammar " + std::string(to_string(grammar_id)) + " has no head form '" + std::string(head_form) + "'");

    PromptRecord r;
    SlotWords words;
    auto fill = [&](const std::string &category, const std::vector<std::string> &attrs) {
        for (const auto &a : attrs) {
            const std::size_t idx = *schema.index_of(a);
            if (!sample.attributes.test(idx)) continue;
            auto lit = grammar.literal_words.find(a);
            if (lit != grammar.literal_words.end()) {
                words[category].push_back(lit->second);
            } else {
                words[category].push_back(schema.phrase(a));
                r.attributes.insert(a);
            }
        }
    };
    fill(grammar.subject_category, category_attributes(grammar.subject_category, schema));
    for (const auto &seg : grammar.segments) {
        for (const auto &group : seg.groups) {
            fill(group.category, group_attributes(group, schema));
            if (group.color_category.empty()) continue;
            // Colours only render in front of a non-empty garment group.
            if (words[group.category].empty()) continue;
            for (const auto &a : category_attributes(group.color_category, schema))
                if (sample.attributes.test(*schema.index_of(a))) {
                    auto lit = grammar.literal_words.find(a);
                    words[group.color_category].push_back(lit != grammar.literal_words.end() ? lit->second : schema.phrase(a));
                    if (lit == grammar.literal_words.end()) r.attributes.insert(a);
                }
        }
    }
    r.text = render_grammar(grammar, head_form, words);
    r.builder = std::string(to_string(grammar_id));
    r.source_sample_id = sample.sample_id;
    return r;
}

// ---------------------------------------------------------------------------

CaptionTable load_captions(const std::filesystem::path &path) {
    const std::string text = read_file(path);
    CaptionTable out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            out[j.at("sample_id").get<std::string>()] = j.at("caption").get<std::string>();
        } catch (const json::exception &e) {
            throw ParseError("captions line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
    }
    return out;
}

void save_captions(const CaptionTable &captions, const std::filesystem::path &path) {
    std::string out;
    for (const auto &[id, caption] : captions) out += json{{"sample_id", id}, {"caption", caption}}.dump() + "\n";
    write_file(path, out);
}

std::pair<DatasetManifest, CaptionTable> ingest_captioned_images(const std::filesystem::path &json_path,
                                                                 const AttributeSchema &schema, Split split) {
    json doc;
    try {
        doc = json::parse(read_file(json_path));
    } catch (const json::parse_error &e) {
        throw ParseError(json_path.string() + ": " + e.what(), 0, e.byte);
    }
    if (!doc.is_array()) throw ParseError(json_path.string() + ": expected a JSON array", 0);
    DatasetManifest m;
    m.schema = schema;
    m.root = json_path.parent_path();
    CaptionTable captions;
    for (const auto &entry : doc) {
        PedestrianSample s;
        s.image_path = entry.at("image").get<std::string>();
        if (entry.contains("image_id"))
            s.sample_id = entry["image_id"].is_string() ? entry["image_id"].get<std::string>() : entry["image_id"].dump();
        else
            s.sample_id = s.image_path;
        s.attributes = AttributeVector(schema.size());
        s.split = split;
        if (entry.contains("caption")) captions[s.sample_id] = entry["caption"].get<std::string>();
        m.samples.push_back(std::move(s));
    }
    if (auto issues = validate_manifest(m); !issues.empty()) throw InvalidArgument(json_path.string() + ": " + issues.front());
    return {std::move(m), std::move(captions)};
}

PromptRecord caption_prompt(std::string caption, const AttributeSchema &schema, std::string builder,
                            std::optional<std::string> source_sample_id) {
    PromptRecord r;
    r.attributes = extract_attributes(caption, schema);
    r.text = std::move(caption);
    r.builder = std::move(builder);
    r.source_sample_id = std::move(source_sample_id);
    return r;
}

std::vector<PromptRecord> caption_prompts(const std::vector<PedestrianSample> &samples, const CaptionTable &captions,
                                          const AttributeSchema &schema, bool aligned, std::uint64_t seed) {
    std::vector<PromptRecord> out;
    out.reserve(samples.size());
    std::vector<const std::pair<const std::string, std::string> *> pool;
    for (const auto &entry : captions) pool.push_back(&entry);
    Rng rng(hash_combine(seed, 0xCA7110Aull));
    for (const auto &s : samples) {
        if (aligned) {
            auto it = captions.find(s.sample_id);
            if (it == captions.end()) throw InvalidArgument("no caption for sample '" + s.sample_id + "'");
            out.push_back(caption_prompt(it->second, schema, "caption_aligned", s.sample_id));
            continue;
        }
        const bool own = captions.contains(s.sample_id);
        const std::size_t choices = pool.size() - (own ? 1 : 0);
        if (choices == 0) throw InvalidArgument("unaligned captions need at least one caption from another sample");
        std::size_t k = static_cast<std::size_t>(rng.below(choices));
        std::size_t idx = 0;
        for (; idx < pool.size(); ++idx) {
            if (pool[idx]->first == s.sample_id) continue;
            if (k-- == 0) break;
        }
        out.push_back(caption_prompt(pool[idx]->second, schema, "caption_unaligned", s.sample_id));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(LlmStyle s) noexcept { return s == LlmStyle::DALDA ? "DALDA" : "ALIA"; }

LlmStyle parse_llm_style(std::string_view s) {
    if (s == "DALDA" || s == "dalda") return LlmStyle::DALDA;
    if (s == "ALIA" || s == "alia") return LlmStyle::ALIA;
    throw InvalidArgument("unknown LLM request style '" + std::string(s) + "'");
}

LlmRequest build_llm_request(LlmStyle style, const AttributeSchema &schema, const std::vector<std::string> &captions,
                             int count, std::string_view prefix) {
    if (count < 1) throw InvalidArgument("LLM request: count must be >= 1");
    LlmRequest req{style, {}, count};
    if (style == LlmStyle::DALDA) {
        std::vector<std::string> cats;
        for (const auto &c : schema.categories()) cats.push_back("'" + c.name + "' [" + join(c.attributes, ", ") + "]");
        std::string t;
        t += schema.dataset_id() + " dataset are images of pedestrians with attributes. ";
        if (!schema.description().empty()) t += schema.description() + " ";
        t += "The attribute categories will be explained as 'attribute category': 'option1, option2..'.\n";
        t += "The attribute categories are the following, in each attribute category you will find each options that "
             "you can select for the prompt, the binary ones does not have options, only to put the category at the "
             "prompt or not:\n";
        t += join(cats, ", ") + ".\n";
        t += "- You must create a sentence that describes the attribute-oriented image corresponding to the 'dataset "
             "description' and a combination of each attribute category and their options.\n";
        t += "- While maintaining the properties of each attribute category, we will add external elements other than "
             "the class to the statement.\n";
        t += "- The attributes added to each sentence must fit the 'dataset description' and be realistic.\n";
        t += "- Find the best combination sentence of the category attributes to generate images to image.\n";
        t += "So you must create " + std::to_string(count) +
             " sentence with a combination of each attribute category, remind that the binary categories should be "
             "used with their name or not appear at the sentence.\n";
        t += "The output should always be in json format, no text other than json is required like this: "
             "{'prompt1': 'sentence', 'prompt2': 'sentence'}";
        req.text = std::move(t);
    } else {
        if (captions.empty()) throw InvalidArgument("ALIA request requires captions");
        std::string t;
        t += "I have a set of image captions that I want to summarize into objective descriptions that describe the "
             "scenes, actions, camera pose, zoom, and other image qualities present.\n";
        t += "My captions are:\n";
        for (const auto &c : captions) t += c + "\n";
        t += "I want the output to be a less than " + std::to_string(count) +
             " of captions that describe a unique setting, of the form \"" + std::string(prefix) + "\".\n";
        t += "Here are 1 examples of what I want the output to look like:\n";
        t += "- A male with a hat, in a jacket and long trousers, shoes-Casual, carrying attachment-PlasticBag, walking "
             "through a gallery";
        req.text = std::move(t);
    }
    return req;
}

namespace {

/// Lenient key/value reader for `{'k': 'v', "k2": "v2"}`; outer braces optional.
class KeyValueReader {
  public:
    explicit KeyValueReader(std::string_view s) : s_(s) {}

    std::vector<std::pair<std::string, std::string>> read() {
        std::vector<std::pair<std::string, std::string>> out;
        skip_ws();
        const bool braced = peek() == '{';
        if (braced) ++pos_;
        for (;;) {
            skip_ws();
            if (pos_ >= s_.size()) {
                if (braced) fail("unterminated object");
                break;
            }
            if (peek() == '}') {
                ++pos_;
                break;
            }
            std::string key = read_string(true);
            skip_ws();
            expect(':');
            skip_ws();
            std::string value = read_string();
            out.emplace_back(std::move(key), std::move(value));
            skip_ws();
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            if (peek() == '}') {
                ++pos_;
                break;
            }
            if (pos_ >= s_.size()) {
                if (braced) fail("unterminated object");
                break;
            }
            fail("expected ',' or '}'");
        }
        skip_ws();
        if (pos_ < s_.size()) fail("trailing characters");
        return out;
    }

  private:
    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    [[noreturn]] void fail(const std::string &why) const {
        throw ParseError("LLM response: " + why + " at offset " + std::to_string(pos_), 0, pos_);
    }
    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }
    std::string read_string(bool strict = false) {
        const char q = peek();
        if (q != '\'' && q != '"') fail("expected quoted string");
        ++pos_;
        std::string out;
        while (pos_ < s_.size()) {
            const char c = s_[pos_];
            if (c == '\\' && pos_ + 1 < s_.size()) {
                const char n = s_[pos_ + 1];
                out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
                pos_ += 2;
                continue;
            }
            if (c == q && strict) {
                ++pos_;
                return out;
            }
            if (c == q) {
                // A quote followed by a separator ends the string; anything else
                // (an apostrophe inside a single-quoted sentence) is content.
                std::size_t k = pos_ + 1;
                while (k < s_.size() && std::isspace(static_cast<unsigned char>(s_[k]))) ++k;
                if (k >= s_.size() || s_[k] == ',' || s_[k] == ':' || s_[k] == '}') {
                    ++pos_;
                    return out;
                }
            }
            out.push_back(c);
            ++pos_;
        }
        fail("unterminated string");
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

std::string_view strip_list_marker(std::string_view line, bool &had_marker) {
    had_marker = false;
    line = trim(line);
    if (line.starts_with("- ") || line.starts_with("* ") || line == "-" || line == "*") {
        had_marker = true;
        line.remove_prefix(1);
    } else if (line.starts_with("\xE2\x80\xA2")) { // bullet
        had_marker = true;
        line.remove_prefix(3);
    } else {
        std::size_t d = 0;
        while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
        if (d > 0 && d < line.size() && (line[d] == '.' || line[d] == ')')) {
            had_marker = true;
            line.remove_prefix(d + 1);
        }
    }
    line = trim(line);
    if (line.size() >= 2 && ((line.front() == '"' && line.back() == '"') || (line.front() == '\'' && line.back() == '\''))) {
        line.remove_prefix(1);
        line.remove_suffix(1);
    }
    return trim(line);
}

} // namespace

std::vector<PromptRecord> parse_llm_response(LlmStyle style, std::string_view response, const AttributeSchema &schema) {
    std::vector<PromptRecord> out;
    const std::string_view body = trim(response);
    if (body.empty()) return out;
    const std::string builder(to_string(style));
    if (style == LlmStyle::DALDA) {
        std::vector<std::string> sentences;
        try {
            const auto j = json::parse(body);
            if (j.is_object()) {
                for (const auto &[k, v] : j.items()) sentences.push_back(v.get<std::string>());
            } else if (j.is_array()) {
                for (const auto &v : j) sentences.push_back(v.get<std::string>());
            } else {
                throw ParseError("LLM response: expected an object of prompts at offset 0", 0, 0);
            }
        } catch (const json::exception &) {
            for (auto &[k, v] : KeyValueReader(body).read()) sentences.push_back(std::move(v));
        }
        for (auto &s : sentences) out.push_back(caption_prompt(std::move(s), schema, builder));
        return out;
    }
    std::vector<std::pair<std::string, bool>> lines;
    bool any_marker = false;
    std::size_t pos = 0;
    while (pos <= body.size()) {
        std::size_t end = body.find('\n', pos);
        if (end == std::string_view::npos) end = body.size();
        bool marker = false;
        std::string_view line = strip_list_marker(body.substr(pos, end - pos), marker);
        if (!line.empty()) {
            lines.emplace_back(std::string(line), marker);
            any_marker = any_marker || marker;
        }
        pos = end + 1;
    }
    for (auto &[line, marker] : lines)
        if (marker || !any_marker) out.push_back(caption_prompt(std::move(line), schema, builder));
    return out;
}

FileLlmClient::FileLlmClient(const std::filesystem::path &fixture) {
    json doc;
    try {
        doc = json::parse(read_file(fixture));
    } catch (const json::parse_error &e) {
        throw ParseError(fixture.string() + ": " + e.what(), 0, e.byte);
    }
    for (const auto &[k, v] : doc.items()) responses_[parse_llm_style(k)] = v.get<std::vector<std::string>>();
}

std::string FileLlmClient::send(const LlmRequest &request) {
    auto it = responses_.find(request.style);
    if (it == responses_.end() || it->second.empty())
        throw BackendError("LLM fixture has no responses for style " + std::string(to_string(request.style)));
    std::size_t &n = next_[request.style];
    return it->second[n++ % it->second.size()];
}

} // namespace pedsynth
