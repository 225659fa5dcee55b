#include "pedsynth/generation.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/format.hpp"
#include "pedsynth/json_io.hpp"
#include "pedsynth/kernels.hpp"
#include "pedsynth/rng.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>

namespace pedsynth {

void GenerationConfig::validate() const {
    if (!(strength >= 0.0 && strength <= 1.0)) throw InvalidArgument("generation config: strength must be in [0, 1]");
    if (!(scale >= 0.0)) throw InvalidArgument("generation config: scale must be >= 0");
    if (steps < 1) throw InvalidArgument("generation config: steps must be >= 1");
    if (granularity < 1) throw InvalidArgument("generation config: granularity must be >= 1");
}

const std::vector<std::string> &named_config_names() {
    static const std::vector<std::string> names{"HiSt_HiSc", "HiSt_LoSc", "LoSt_LoSc"};
    return names;
}

GenerationConfig named_config(std::string_view name, int granularity) {
    GenerationConfig c;
    c.name = std::string(name);
    c.granularity = granularity;
    if (name == "HiSt_HiSc") {
        c.strength = 0.6;
        c.scale = 15;
    } else if (name == "HiSt_LoSc") {
        c.strength = 0.6;
        c.scale = 3;
    } else if (name == "LoSt_LoSc") {
        c.strength = 0.2;
        c.scale = 3;
    } else {
        throw InvalidArgument("unknown configuration '" + std::string(name) + "'");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

std::string attribute_token(std::string_view attribute) { return "<ps-attr-" + canonicalize(attribute) + ">"; }

void save_token_library(const TokenLibrary &library, const std::filesystem::path &path) {
    json j;
    j["schema"] = schema_to_json(library.schema);
    json tokens = json::object();
    for (const auto &[attr, e] : library.tokens)
        tokens[attr] = json{{"token", e.token}, {"handle", e.handle}, {"subset_size", e.subset_size}};
    j["tokens"] = std::move(tokens);
    json meta = json::object();
    for (const auto &[k, v] : library.metadata) meta[k] = v;
    j["metadata"] = std::move(meta);
    write_file(path, j.dump(2) + "\n");
}

TokenLibrary load_token_library(const std::filesystem::path &path) {
    try {
        const json j = json::parse(read_file(path));
        TokenLibrary lib;
        lib.schema = schema_from_json(j.at("schema"));
        for (const auto &[attr, e] : j.at("tokens").items()) {
            (void)lib.schema.require_index(attr);
            lib.tokens[attr] = TokenEntry{e.at("token").get<std::string>(), e.at("handle").get<std::string>(),
                                          e.at("subset_size").get<std::size_t>()};
        }
        if (j.contains("metadata"))
            for (const auto &[k, v] : j.at("metadata").items()) lib.metadata[k] = v.get<std::string>();
        return lib;
    } catch (const json::exception &e) {
        throw ParseError("token library " + path.string() + ": " + e.what(), 0);
    }
}

PromptRecord apply_tokens(const PromptRecord &prompt, const TokenLibrary &library) {
    if (library.empty()) return prompt;
    PromptRecord out = prompt;
    out.text.clear();
    std::size_t pos = 0;
    for (const auto &m : find_phrase_matches(prompt.text, library.schema)) {
        auto it = library.tokens.find(m.attribute);
        if (it == library.tokens.end()) continue;
        out.text.append(prompt.text, pos, m.begin - pos);
        out.text += it->second.token;
        pos = m.end;
    }
    out.text.append(prompt.text, pos);
    return out;
}

std::string restore_tokens(std::string_view text, const TokenLibrary &library) {
    std::string out(text);
    for (const auto &[attr, e] : library.tokens) {
        const std::string &phrase = library.schema.phrase(attr);
        for (std::size_t p = out.find(e.token); p != std::string::npos; p = out.find(e.token, p + phrase.size()))
            out.replace(p, e.token.size(), phrase);
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(TechniqueKind k) noexcept {
    switch (k) {
    case TechniqueKind::plain: return "plain";
    case TechniqueKind::textual_inversion: return "textual_inversion";
    case TechniqueKind::dynamic_strength: return "dynamic_strength";
    case TechniqueKind::latent_alteration: return "latent_alteration";
    }
    return "plain";
}

TechniqueKind parse_technique_kind(std::string_view s) {
    for (auto k : {TechniqueKind::plain, TechniqueKind::textual_inversion, TechniqueKind::dynamic_strength,
                   TechniqueKind::latent_alteration})
        if (s == to_string(k)) return k;
    throw InvalidArgument("unknown technique '" + std::string(s) + "'");
}

TechniqueSpec TechniqueSpec::textual_inversion(std::shared_ptr<const TokenLibrary> library) {
    TechniqueSpec t;
    t.kind = TechniqueKind::textual_inversion;
    t.tokens = std::move(library);
    return t;
}

TechniqueSpec TechniqueSpec::dynamic_strength(double s_min, double s_max) {
    TechniqueSpec t;
    t.kind = TechniqueKind::dynamic_strength;
    t.s_min = s_min;
    t.s_max = s_max;
    return t;
}

TechniqueSpec TechniqueSpec::latent_alteration(double amplitude) {
    TechniqueSpec t;
    t.kind = TechniqueKind::latent_alteration;
    t.amplitude = amplitude;
    return t;
}

void TechniqueSpec::validate() const {
    switch (kind) {
    case TechniqueKind::plain: break;
    case TechniqueKind::textual_inversion:
        if (!tokens) throw InvalidArgument("textual_inversion requires a token library");
        break;
    case TechniqueKind::dynamic_strength:
        if (!(s_min >= 0 && s_min <= s_max && s_max <= 1))
            throw InvalidArgument("dynamic_strength requires 0 <= s_min <= s_max <= 1");
        break;
    case TechniqueKind::latent_alteration:
        if (!(amplitude >= 0 && std::isfinite(amplitude))) throw InvalidArgument("latent_alteration amplitude must be >= 0");
        break;
    }
}

// ---------------------------------------------------------------------------

std::string Backend::train_token(const std::vector<Image> &, std::string_view, std::string_view, int, std::uint64_t) {
    throw BackendError("backend " + id() + " does not support token training");
}

double Backend::image_text_similarity(const Image &, std::string_view) {
    throw BackendError("backend " + id() + " does not support image-text similarity");
}

namespace {

std::uint64_t hash_image(const Image &img, std::uint64_t h = 0xCBF29CE484222325ULL) {
    h = fnv1a64(std::to_string(img.width) + "x" + std::to_string(img.height), h);
    return fnv1a64(std::string_view(reinterpret_cast<const char *>(img.pixels.data()), img.pixels.size()), h);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double pixel_stddev(const Image &img) {
    double sum = 0, sq = 0;
    for (auto p : img.pixels) {
        sum += p;
        sq += double(p) * p;
    }
    const double n = static_cast<double>(img.pixels.size());
    return std::sqrt(std::max(0.0, sq / n - (sum / n) * (sum / n)));
}

} // namespace

MockBackend::MockBackend(int granularity, int max_concurrency)
    : granularity_(granularity), max_concurrency_(max_concurrency) {
    if (granularity < 1 || max_concurrency < 1) throw InvalidArgument("mock backend: granularity and concurrency must be >= 1");
}

Image MockBackend::generate(const GenerationRequest &r) {
    if (!r.init || r.init->empty()) throw InvalidArgument("mock backend: missing init image");
    kernels::MixParams p;
    p.strength = r.strength;
    p.noise_key = hash_combine(fnv1a64(r.prompt), r.seed);
    if (r.latent_noise > 0) {
        p.perturb_sigma = r.latent_noise * pixel_stddev(*r.init);
        p.perturb_key = hash_combine(p.noise_key, 0x1A7E47ull);
    }
    Image out(r.init->width, r.init->height);
    kernels::parallel::mix_noise(r.init->pixels, p, out.pixels);
    return out;
}

std::string MockBackend::train_token(const std::vector<Image> &images, std::string_view class_word, std::string_view token,
                                     int steps, std::uint64_t seed) {
    if (images.empty()) throw BackendError("mock backend: token training needs at least one image");
    std::uint64_t h = fnv1a64(class_word, fnv1a64(token));
    for (const auto &img : images) h = hash_image(img, h);
    h = hash_combine(hash_combine(h, static_cast<std::uint64_t>(steps)), seed);
    return "mock:" + hex64(h);
}

double MockBackend::image_text_similarity(const Image &image, std::string_view text) {
    return unit_from_bits(splitmix64(hash_image(image, fnv1a64(text))));
}

// ---------------------------------------------------------------------------

CommandBackend::CommandBackend(std::string id, std::string command, int granularity)
    : id_(std::move(id)), command_(std::move(command)), granularity_(granularity) {
    if (command_.empty()) throw InvalidArgument("command backend: empty command");
}

std::filesystem::path CommandBackend::scratch_dir() {
    auto dir = std::filesystem::temp_directory_path() / ("pedsynth_cmd_" + hex64(fnv1a64(id_)) + "_" + std::to_string(calls_++));
    std::filesystem::create_directories(dir);
    return dir;
}

void CommandBackend::invoke(const std::filesystem::path &request) const {
    const std::string cmd = command_ + " '" + request.string() + "'";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw BackendError("backend " + id_ + ": command exited with status " + std::to_string(rc) + ": " + cmd);
}

Image CommandBackend::generate(const GenerationRequest &r) {
    if (!r.init) throw InvalidArgument("command backend: missing init image");
    const auto dir = scratch_dir();
    write_png(*r.init, dir / "init.png");
    json req{{"mode", "generate"},     {"init", (dir / "init.png").string()}, {"prompt", r.prompt},
             {"strength", r.strength}, {"scale", r.scale},                    {"steps", r.steps},
             {"seed", r.seed},         {"latent_noise", r.latent_noise},      {"output", (dir / "out.png").string()}};
    write_file(dir / "request.json", req.dump(2));
    invoke(dir / "request.json");
    Image out = read_image(dir / "out.png");
    std::filesystem::remove_all(dir);
    return out;
}

std::string CommandBackend::train_token(const std::vector<Image> &images, std::string_view class_word,
                                        std::string_view token, int steps, std::uint64_t seed) {
    const auto dir = scratch_dir();
    json paths = json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto p = dir / ("img" + std::to_string(i) + ".png");
        write_png(images[i], p);
        paths.push_back(p.string());
    }
    json req{{"mode", "train_token"}, {"images", paths}, {"class_word", class_word}, {"token", token},
             {"steps", steps},        {"seed", seed},    {"output", (dir / "reply.json").string()}};
    write_file(dir / "request.json", req.dump(2));
    invoke(dir / "request.json");
    const std::string handle = json::parse(read_file(dir / "reply.json")).at("handle").get<std::string>();
    std::filesystem::remove_all(dir);
    return handle;
}

double CommandBackend::image_text_similarity(const Image &image, std::string_view text) {
    const auto dir = scratch_dir();
    write_png(image, dir / "image.png");
    json req{{"mode", "similarity"}, {"image", (dir / "image.png").string()}, {"text", text},
             {"output", (dir / "reply.json").string()}};
    write_file(dir / "request.json", req.dump(2));
    invoke(dir / "request.json");
    const double s = json::parse(read_file(dir / "reply.json")).at("similarity").get<double>();
    std::filesystem::remove_all(dir);
    return std::clamp(s, 0.0, 1.0);
}

std::unique_ptr<Backend> make_backend(std::string_view id) {
    if (id == "mock") return std::make_unique<MockBackend>();
    if (id.starts_with("command:")) return std::make_unique<CommandBackend>("command", std::string(id.substr(8)));
    if (id == "stable-diffusion-v1-4") {
        const char *env = std::getenv("PEDSYNTH_SD_COMMAND");
        return std::make_unique<CommandBackend>(
            std::string(id), env ? env : "python3 tools/sd_img2img.py --model CompVis/stable-diffusion-v1-4");
    }
    throw InvalidArgument("unknown backend '" + std::string(id) + "'");
}

// ---------------------------------------------------------------------------

double compute_dynamic_strength(double similarity, double s_min, double s_max) {
    if (!(similarity >= 0 && similarity <= 1)) throw InvalidArgument("dynamic strength: similarity must be in [0, 1]");
    if (!(s_min >= 0 && s_min <= s_max && s_max <= 1))
        throw InvalidArgument("dynamic strength: need 0 <= s_min <= s_max <= 1");
    return s_min + (1.0 - similarity) * (s_max - s_min);
}

GenerationResult generate(Backend &backend, const Image &init, const PromptRecord &prompt, const GenerationConfig &config,
                          const TechniqueSpec &technique) {
    config.validate();
    technique.validate();
    const int g = backend.granularity();
    if (init.empty() || init.width % g != 0 || init.height % g != 0)
        throw InvalidArgument("init image " + std::to_string(init.width) + "x" + std::to_string(init.height) +
                              " is not a multiple of backend granularity " + std::to_string(g));

    GenerationRequest req;
    req.init = &init;
    req.prompt = prompt.text;
    req.strength = config.strength;
    req.scale = config.scale;
    req.steps = config.steps;
    req.seed = config.seed;
    switch (technique.kind) {
    case TechniqueKind::plain: break;
    case TechniqueKind::textual_inversion: req.prompt = apply_tokens(prompt, *technique.tokens).text; break;
    case TechniqueKind::dynamic_strength:
        if (!backend.supports_similarity()) throw BackendError("backend " + backend.id() + " cannot score image-text similarity");
        req.strength = compute_dynamic_strength(backend.image_text_similarity(init, prompt.text), technique.s_min, technique.s_max);
        break;
    case TechniqueKind::latent_alteration: req.latent_noise = technique.amplitude; break;
    }

    GenerationResult out;
    try {
        out.image = backend.generate(req);
    } catch (const std::exception &e) {
        throw BackendError("backend " + backend.id() + " failed for prompt \"" + prompt.text + "\": " + e.what());
    }
    if (out.image.width != init.width || out.image.height != init.height)
        throw BackendError("backend " + backend.id() + " returned " + std::to_string(out.image.width) + "x" +
                           std::to_string(out.image.height) + " for a " + std::to_string(init.width) + "x" +
                           std::to_string(init.height) + " init image");
    out.prompt_text = req.prompt;
    out.effective_strength = req.strength;
    out.seed = req.seed;
    out.metadata = {{"backend", backend.id()},
                    {"config", config.name},
                    {"strength", format_double(req.strength)},
                    {"scale", format_double(req.scale)},
                    {"steps", std::to_string(req.steps)},
                    {"seed", std::to_string(req.seed)},
                    {"technique", std::string(to_string(technique.kind))}};
    if (technique.kind == TechniqueKind::latent_alteration) out.metadata["latent_noise"] = format_double(req.latent_noise);
    return out;
}

Image load_sample_image(const DatasetManifest &manifest, const PedestrianSample &sample) {
    return read_image(manifest.image_file(sample));
}

TokenTrainingResult train_attribute_tokens(Backend &backend, const DatasetManifest &manifest,
                                           const std::vector<std::string> &attributes, int steps, std::uint64_t seed,
                                           const ImageLoader &loader) {
    if (!backend.supports_token_training()) throw BackendError("backend " + backend.id() + " does not support token training");
    if (steps < 1) throw InvalidArgument("token training: steps must be >= 1");
    TokenTrainingResult result;
    result.library.schema = manifest.schema;
    result.library.metadata = {{"backend", backend.id()}, {"steps", std::to_string(steps)}, {"seed", std::to_string(seed)}};
    for (const auto &attr : attributes) {
        if (!manifest.schema.index_of(attr)) {
            result.errors[attr] = "unknown attribute";
            continue;
        }
        const auto subset = subset_by_attribute(manifest, attr, true);
        if (subset.samples.empty()) {
            result.errors[attr] = "no positive samples";
            continue;
        }
        try {
            std::vector<Image> images;
            images.reserve(subset.samples.size());
            for (const auto &s : subset.samples) images.push_back(loader(subset, s));
            const std::string token = attribute_token(attr);
            const std::string handle = backend.train_token(images, manifest.schema.phrase(attr), token, steps,
                                                           hash_combine(seed, fnv1a64(attr)));
            result.library.tokens[attr] = TokenEntry{token, handle, subset.samples.size()};
        } catch (const Error &e) {
            result.errors[attr] = e.what();
        }
    }
    return result;
}

} // namespace pedsynth
