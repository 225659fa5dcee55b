#include "pedsynth/study.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/format.hpp"
#include "pedsynth/json_io.hpp"
#include "pedsynth/rng.hpp"

#include <omp.h>

#include <algorithm>
#include <fstream>
#include <set>

namespace pedsynth {

namespace fs = std::filesystem;

namespace {

constexpr Experiment kAllExperiments[] = {
    Experiment::prompt_study, Experiment::blur_study, Experiment::context_study, Experiment::resolution_study,
    Experiment::aspect_study, Experiment::technique_study, Experiment::expand,     Experiment::train,
    Experiment::eval,         Experiment::report,       Experiment::pipeline,
};

} // namespace

std::string_view to_string(Experiment e) noexcept {
    switch (e) {
    case Experiment::prompt_study: return "prompt_study";
    case Experiment::blur_study: return "blur_study";
    case Experiment::context_study: return "context_study";
    case Experiment::resolution_study: return "resolution_study";
    case Experiment::aspect_study: return "aspect_study";
    case Experiment::technique_study: return "technique_study";
    case Experiment::expand: return "expand";
    case Experiment::train: return "train";
    case Experiment::eval: return "eval";
    case Experiment::report: return "report";
    case Experiment::pipeline: return "pipeline";
    }
    return "?";
}

Experiment parse_experiment(std::string_view s) {
    for (auto e : kAllExperiments)
        if (s == to_string(e)) return e;
    throw InvalidArgument("unknown experiment '" + std::string(s) + "'");
}

bool is_study(Experiment e) noexcept {
    switch (e) {
    case Experiment::prompt_study:
    case Experiment::blur_study:
    case Experiment::context_study:
    case Experiment::resolution_study:
    case Experiment::aspect_study:
    case Experiment::technique_study: return true;
    default: return false;
    }
}

std::string_view command_name(Experiment e) noexcept { return is_study(e) ? "study" : to_string(e); }

// ---------------------------------------------------------------------------
// Variants

namespace {

std::optional<GrammarId> resolve_grammar(std::string_view name, const AttributeSchema &schema) {
    if (name == "phrase_list") return std::nullopt;
    if (name == "auto") {
        for (auto g : {GrammarId::RAPzs, GrammarId::PETAzs, GrammarId::PA100k})
            if (attribute_grammar(g).dataset_id == schema.dataset_id()) return g;
        return std::nullopt;
    }
    const GrammarId g = parse_grammar_id(name);
    if (attribute_grammar(g).dataset_id != schema.dataset_id())
        throw InvalidArgument("grammar " + std::string(name) + " does not fit schema " + schema.dataset_id());
    return g;
}

std::string grammar_name(const std::optional<GrammarId> &g) { return g ? std::string(to_string(*g)) : "phrase_list"; }

const std::set<std::string> kPromptVariants = {"baseline",          "integration", "attribute", "phrase_list",
                                               "caption_aligned",   "caption_unaligned", "dalda", "alia"};
const std::set<std::string> kTechniqueVariants = {"plain", "textual_inversion", "dynamic_strength",
                                                  "latent_alteration"};

ConditioningSpec variant_conditioning(Experiment e, const std::string &v) {
    switch (e) {
    case Experiment::blur_study: return parse_conditioning("blur:" + v);
    case Experiment::context_study: return parse_conditioning("context:" + v);
    case Experiment::resolution_study: return v == "original" ? ConditioningSpec{} : parse_conditioning("resolution:" + v);
    case Experiment::aspect_study: return v == "original" ? ConditioningSpec{} : parse_conditioning("aspect:" + v);
    default: return {};
    }
}

void check_variant(Experiment e, const std::string &v) {
    if (e == Experiment::prompt_study) {
        if (!kPromptVariants.contains(v)) throw InvalidArgument("unknown prompt variant '" + v + "'");
    } else if (e == Experiment::technique_study) {
        if (!kTechniqueVariants.contains(v)) throw InvalidArgument("unknown technique '" + v + "'");
    } else {
        (void)variant_conditioning(e, v);
    }
}

} // namespace

std::vector<std::string> default_variants(Experiment e, const ExperimentConfig &config) {
    switch (e) {
    case Experiment::prompt_study: {
        std::vector<std::string> v = {"baseline", "integration"};
        bool grammar = false;
        if (config.grammar != "phrase_list") {
            if (config.grammar != "auto") {
                grammar = true;
            } else if (!config.manifest.empty() && fs::exists(config.manifest)) {
                grammar = resolve_grammar("auto", load_manifest(config.manifest).schema).has_value();
            }
        }
        v.push_back(grammar ? "attribute" : "phrase_list");
        if (!config.captions.empty()) {
            v.push_back("caption_aligned");
            v.push_back("caption_unaligned");
        }
        if (!config.llm_fixture.empty()) {
            v.push_back("dalda");
            if (!config.captions.empty()) v.push_back("alia");
        }
        return v;
    }
    case Experiment::blur_study: return {"none", "low", "medium", "high"};
    case Experiment::context_study: return {"0.10", "0.25", "0.50", "1.00"};
    case Experiment::resolution_study: return {"original", "0.50", "0.25"};
    case Experiment::aspect_study: return {"original", "square", "wide", "tall"};
    case Experiment::technique_study: return {"textual_inversion", "dynamic_strength", "latent_alteration"};
    default: return {};
    }
}

void ExperimentConfig::validate() const {
    const std::string cmd(command_name(experiment));
    auto need = [&](bool ok, const std::string &what) {
        if (!ok) throw InvalidArgument(cmd + ": " + what);
    };
    (void)parse_report_formats(formats);
    if (experiment == Experiment::report) {
        need(!inputs.empty(), "at least one input report is required");
        return;
    }
    need(!manifest.empty(), "a manifest is required");
    need(!output_dir.empty(), "an output directory is required");
    need(grammar == "auto" || grammar == "phrase_list" || (parse_grammar_id(grammar), true), "bad grammar");
    need(token_steps >= 1, "token steps must be >= 1");
    TechniqueSpec::dynamic_strength(s_min, s_max).validate();
    TechniqueSpec::latent_alteration(amplitude).validate();

    if (is_study(experiment)) {
        need(n_conditional >= 2, "n_conditional must be >= 2");
        need(!configs.empty(), "at least one configuration is required");
        for (const auto &c : configs) (void)named_config(c);
        need(prompt == "auto" || prompt == "attribute" || prompt == "phrase_list" || prompt == "caption_aligned",
             "prompt must be auto, attribute, phrase_list or caption_aligned");
        need(prompt != "caption_aligned" || !captions.empty(), "caption_aligned prompts need a captions file");
        for (const auto &v : variants) check_variant(experiment, v);
        if (experiment == Experiment::prompt_study) {
            const auto vs = variants.empty() ? default_variants(experiment, *this) : variants;
            for (const auto &v : vs) {
                if (v.starts_with("caption_") || v == "alia")
                    need(!captions.empty(), "prompt variant '" + v + "' needs a captions file");
                if (v == "dalda" || v == "alia")
                    need(!llm_fixture.empty(), "prompt variant '" + v + "' needs an LLM fixture");
            }
        }
        return;
    }
    if (experiment == Experiment::expand || experiment == Experiment::pipeline) {
        need(multiplier >= 1, "multiplier must be >= 1");
        (void)named_config(config_name);
        (void)parse_technique_kind(technique);
        (void)parse_label_mode(label_mode);
        (void)parse_conditioning(conditioning);
    }
    if (experiment == Experiment::train || experiment == Experiment::pipeline) train.validate();
    if (experiment == Experiment::eval) need(!model.empty(), "a model file is required");
    if (experiment == Experiment::eval || experiment == Experiment::pipeline) (void)parse_split(split);
}

// ---------------------------------------------------------------------------
// Config snapshot

namespace {

std::string quoted(const std::string &v) {
    if (v.find_first_of("\"\n\r") != std::string::npos)
        throw InvalidArgument("config value cannot be written to a snapshot: " + v);
    return "\"" + v + "\"";
}

std::string joined(const std::vector<std::string> &items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

std::string variants_key(Experiment e) {
    switch (e) {
    case Experiment::prompt_study: return "prompts";
    case Experiment::blur_study: return "levels";
    case Experiment::context_study: return "fractions";
    case Experiment::resolution_study: return "factors";
    case Experiment::aspect_study: return "aspects";
    case Experiment::technique_study: return "techniques";
    default: return "variants";
    }
}

} // namespace

std::string config_snapshot(const ExperimentConfig &c) {
    std::string out = "[" + std::string(command_name(c.experiment)) + "]\n";
    auto put = [&](const std::string &k, const std::string &v) { out += k + "=" + quoted(v) + "\n"; };
    auto num = [&](const std::string &k, const std::string &v) { out += k + "=" + v + "\n"; };
    auto path = [&](const std::string &k, const fs::path &p) {
        if (!p.empty()) put(k, p.string());
    };
    const Experiment e = c.experiment;
    const bool expands = e == Experiment::expand || e == Experiment::pipeline;
    const bool trains = e == Experiment::train || e == Experiment::pipeline;

    if (is_study(e)) put("experiment", std::string(to_string(e)));
    if (e == Experiment::report) {
        std::vector<std::string> in;
        for (const auto &p : c.inputs) in.push_back(p.string());
        put("inputs", joined(in));
    } else {
        path("manifest", c.manifest);
        if (is_study(e) || expands) put("backend", c.backend);
        put("embedder", c.embedder);
        num("seed", std::to_string(c.seed));
    }
    put("formats", joined(c.formats));
    if (is_study(e)) {
        put("configs", joined(c.configs));
        num("n-conditional", std::to_string(c.n_conditional));
        put(variants_key(e), joined(c.variants.empty() ? default_variants(e, c) : c.variants));
        put("prompt", c.prompt);
        path("captions", c.captions);
        path("llm-fixture", c.llm_fixture);
    }
    if (is_study(e) || expands) {
        put("grammar", c.grammar);
        num("token-steps", std::to_string(c.token_steps));
        num("s-min", format_double(c.s_min));
        num("s-max", format_double(c.s_max));
        num("amplitude", format_double(c.amplitude));
    }
    if (expands) {
        put("gen-config", c.config_name);
        put("technique", c.technique);
        num("multiplier", std::to_string(c.multiplier));
        put("label-mode", c.label_mode);
        put("conditioning", c.conditioning);
        path("token-library", c.token_library);
        if (!c.token_attributes.empty()) put("token-attributes", joined(c.token_attributes));
    }
    if (trains) {
        const TrainConfig &t = c.train;
        put("backbone", t.backbone_id);
        num("epochs", std::to_string(t.epochs));
        num("batch-size", std::to_string(t.batch_size));
        num("lr", format_double(t.lr_new));
        num("momentum", format_double(t.momentum));
        num("weight-decay", format_double(t.weight_decay));
        num("warmup-epochs", std::to_string(t.warmup_epochs));
        num("warmup-coef", format_double(t.warmup_coef));
        num("plateau-factor", format_double(t.plateau_factor));
        num("plateau-patience", std::to_string(t.plateau_patience));
        num("early-stop", std::to_string(t.early_stop_patience));
        num("input-width", std::to_string(t.input_width));
        num("input-height", std::to_string(t.input_height));
    }
    if (trains || e == Experiment::eval) num("threshold", format_double(c.train.threshold));
    if (e == Experiment::eval) {
        path("model", c.model);
        path("compare", c.compare);
    }
    if (e == Experiment::eval || e == Experiment::pipeline) put("split", c.split);
    return out;
}

// ---------------------------------------------------------------------------
// Run directories

namespace {

class RunLog {
  public:
    explicit RunLog(const fs::path &path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot write " + path.string());
    }
    void operator()(const std::string &line) { out_ << line << "\n" << std::flush; }

  private:
    std::ofstream out_;
};

fs::path prepare_run_dir(const ExperimentConfig &config) {
    const fs::path dir = config.output_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
    write_file(dir / "config.ini", config_snapshot(config));
    return dir;
}

// Rethrows library errors with the run directory prepended, keeping the type.
template <class F> auto in_run(const ExperimentConfig &config, F &&body) {
    const std::string ctx =
        std::string(to_string(config.experiment)) + " run in " + config.output_dir.string() + ": ";
    try {
        return body();
    } catch (const ParseError &e) {
        throw ParseError(ctx + e.what(), e.line(), e.offset());
    } catch (const InvalidArgument &e) {
        throw InvalidArgument(ctx + e.what());
    } catch (const BackendError &e) {
        throw BackendError(ctx + e.what());
    } catch (const IoError &e) {
        throw IoError(ctx + e.what());
    } catch (const Error &e) {
        throw Error(ctx + e.what());
    }
}

struct Resolved {
    std::unique_ptr<Backend> own_backend;
    std::unique_ptr<Embedder> own_embedder;
    Backend *backend = nullptr;
    Embedder *embedder = nullptr;
};

Resolved resolve(const ExperimentConfig &c, const StudyServices &s, bool want_backend, bool want_embedder) {
    Resolved r;
    if (want_backend) {
        r.backend = s.backend;
        if (!r.backend) {
            r.own_backend = make_backend(c.backend);
            r.backend = r.own_backend.get();
        }
    }
    if (want_embedder) {
        r.embedder = s.embedder;
        if (!r.embedder) {
            r.own_embedder = make_embedder(c.embedder);
            r.embedder = r.own_embedder.get();
        }
    }
    return r;
}

std::uint64_t sample_seed(std::uint64_t seed, std::string_view sample_id) {
    return hash_combine(seed, fnv1a64(sample_id));
}

std::string fmt(double v) { return format_fixed(v, 4); }

// Attributes in schema order.
std::vector<std::string> in_schema_order(const std::set<std::string> &attrs, const AttributeSchema &schema) {
    std::vector<std::string> out;
    for (const auto &a : schema.attributes())
        if (attrs.contains(a)) out.push_back(a);
    return out;
}

std::shared_ptr<const TokenLibrary> token_library_for(Backend &backend, const DatasetManifest &manifest,
                                                      const std::vector<std::string> &attributes, int steps,
                                                      std::uint64_t seed, const ImageLoader &loader,
                                                      const fs::path &save_to, RunLog &log) {
    DatasetManifest train = filter_split(manifest, Split::train);
    if (train.samples.empty()) train = manifest;
    auto result = train_attribute_tokens(backend, train, attributes, steps, seed, loader);
    for (const auto &[attr, reason] : result.errors) log("token " + attr + " skipped: " + reason);
    log("tokens trained: " + std::to_string(result.library.tokens.size()) + " of " +
        std::to_string(attributes.size()));
    save_token_library(result.library, save_to);
    return std::make_shared<const TokenLibrary>(std::move(result.library));
}

} // namespace

// ---------------------------------------------------------------------------
// Studies

namespace {

struct Variant {
    std::string name;
    ConditioningSpec conditioning;
    TechniqueSpec technique;
    std::vector<std::optional<PromptRecord>> prompts;
    std::vector<std::string> prompt_errors;
    std::string row_error; ///< fails every cell of the row
};

struct StudyContext {
    const ExperimentConfig &config;
    const DatasetManifest &manifest;
    const std::vector<PedestrianSample> &samples;
    std::optional<GrammarId> grammar;
    std::optional<CaptionTable> captions;
    LlmClient *llm = nullptr;
    Backend &backend;
    const ImageLoader &loader;
    const fs::path &dir;
    RunLog &log;
    std::shared_ptr<const TokenLibrary> tokens; ///< trained on first use
};

std::vector<PromptRecord> llm_prompts(StudyContext &ctx, LlmStyle style) {
    std::vector<std::string> captions;
    if (style == LlmStyle::ALIA)
        for (const auto &s : ctx.samples)
            if (auto it = ctx.captions->find(s.sample_id); it != ctx.captions->end()) captions.push_back(it->second);
    const auto request = build_llm_request(style, ctx.manifest.schema, captions, static_cast<int>(ctx.samples.size()));
    auto prompts = parse_llm_response(style, ctx.llm->send(request), ctx.manifest.schema);
    if (prompts.empty()) throw BackendError("LLM response holds no prompts");
    ctx.log(std::string(to_string(style)) + " prompts received: " + std::to_string(prompts.size()));
    return prompts;
}

// Fills v.prompts for the named builder; per-sample failures go to prompt_errors.
void build_prompts(StudyContext &ctx, Variant &v, const std::string &builder) {
    const auto &schema = ctx.manifest.schema;
    const std::size_t n = ctx.samples.size();
    v.prompts.assign(n, std::nullopt);
    v.prompt_errors.assign(n, {});
    std::vector<PromptRecord> batch;
    if (builder == "caption_aligned" || builder == "caption_unaligned") {
        batch = caption_prompts(ctx.samples, *ctx.captions, schema, builder == "caption_aligned", ctx.config.seed);
    } else if (builder == "dalda" || builder == "alia") {
        auto pool = llm_prompts(ctx, builder == "dalda" ? LlmStyle::DALDA : LlmStyle::ALIA);
        for (std::size_t i = 0; i < n; ++i) batch.push_back(pool[i % pool.size()]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto &s = ctx.samples[i];
        const std::uint64_t seed = sample_seed(ctx.config.seed, s.sample_id);
        try {
            if (!batch.empty()) {
                v.prompts[i] = batch[i];
            } else if (builder == "baseline") {
                Rng rng(hash_combine(seed, fnv1a64("baseline")));
                const auto &colors = baseline_colors();
                const auto &clothes = baseline_clothes();
                const auto &color = colors[rng.below(colors.size())];
                v.prompts[i] = build_baseline_prompt(color, clothes[rng.below(clothes.size())]);
            } else if (builder == "integration") {
                v.prompts[i] = build_integration_prompt({}, hash_combine(seed, fnv1a64("integration")));
            } else if (builder == "attribute") {
                v.prompts[i] = build_attribute_prompt(s, schema, *ctx.grammar);
            } else {
                v.prompts[i] = build_phrase_list_prompt(s, schema);
            }
        } catch (const Error &e) {
            v.prompt_errors[i] = e.what();
        }
    }
}

std::string image_study_builder(const StudyContext &ctx) {
    const std::string &p = ctx.config.prompt;
    if (p == "attribute" && !ctx.grammar)
        throw InvalidArgument("attribute prompts need a grammar for schema " + ctx.manifest.schema.dataset_id());
    if (p != "auto") return p;
    if (ctx.grammar) return "attribute";
    if (ctx.captions) return "caption_aligned";
    return "phrase_list";
}

Variant make_variant(StudyContext &ctx, const std::string &name, const std::string &builder) {
    const auto &cfg = ctx.config;
    Variant v;
    v.name = name;
    const Experiment e = cfg.experiment;
    try {
        if (e == Experiment::prompt_study) {
            if (name == "attribute" && !ctx.grammar)
                throw InvalidArgument("attribute prompts need a grammar for schema " +
                                      ctx.manifest.schema.dataset_id());
            build_prompts(ctx, v, name);
            return v;
        }
        v.conditioning = variant_conditioning(e, name);
        build_prompts(ctx, v, builder);
        if (e != Experiment::technique_study) return v;

        switch (parse_technique_kind(name)) {
        case TechniqueKind::plain: break;
        case TechniqueKind::dynamic_strength: v.technique = TechniqueSpec::dynamic_strength(cfg.s_min, cfg.s_max); break;
        case TechniqueKind::latent_alteration: v.technique = TechniqueSpec::latent_alteration(cfg.amplitude); break;
        case TechniqueKind::textual_inversion: {
            if (!ctx.tokens) {
                std::set<std::string> mentioned;
                for (const auto &p : v.prompts)
                    if (p) mentioned.insert(p->attributes.begin(), p->attributes.end());
                if (mentioned.empty()) throw InvalidArgument("prompts mention no attributes to learn tokens for");
                ctx.tokens = token_library_for(ctx.backend, ctx.manifest, in_schema_order(mentioned, ctx.manifest.schema),
                                               cfg.token_steps, cfg.seed, ctx.loader, ctx.dir / "tokens.json", ctx.log);
            }
            v.technique = TechniqueSpec::textual_inversion(ctx.tokens);
            break;
        }
        }
    } catch (const Error &err) {
        v.row_error = err.what();
    }
    return v;
}

} // namespace

StudyReport run_study(const ExperimentConfig &config, const StudyServices &services) {
    if (!is_study(config.experiment))
        throw InvalidArgument("run_study: '" + std::string(to_string(config.experiment)) + "' is not a study");
    config.validate();
    const fs::path dir = prepare_run_dir(config);
    return in_run(config, [&] {
        RunLog log(dir / "run.log");
        const DatasetManifest manifest = load_manifest(config.manifest);
        if (manifest.samples.size() < config.n_conditional)
            throw InvalidArgument("manifest has " + std::to_string(manifest.samples.size()) +
                                  " samples, fewer than n_conditional " + std::to_string(config.n_conditional));
        auto res = resolve(config, services, true, true);
        Backend &backend = *res.backend;
        const Embedder &embedder = *res.embedder;
        const int granularity = backend.granularity();
        log("experiment: " + std::string(to_string(config.experiment)));
        log("manifest: " + config.manifest.string() + " (" + std::to_string(manifest.samples.size()) + " samples, " +
            manifest.schema.dataset_id() + ")");
        log("backend: " + backend.id() + ", embedder: " + embedder.id());

        std::optional<CaptionTable> captions;
        if (!config.captions.empty()) captions = load_captions(config.captions);
        std::unique_ptr<LlmClient> own_llm;
        LlmClient *llm = services.llm;
        if (!llm && !config.llm_fixture.empty()) {
            own_llm = std::make_unique<FileLlmClient>(config.llm_fixture);
            llm = own_llm.get();
        }

        const DatasetManifest conditional = random_subset(manifest, config.n_conditional, config.seed);
        const auto &samples = conditional.samples;
        log("conditional samples: " + std::to_string(samples.size()) + " (seed " + std::to_string(config.seed) + ")");

        const FeatureSet full = embed_manifest(embedder, manifest, services.loader);
        std::map<std::string, Eigen::Index> row_of;
        for (std::size_t i = 0; i < manifest.samples.size(); ++i)
            row_of.emplace(manifest.samples[i].sample_id, static_cast<Eigen::Index>(i));
        FeatureSet reference_rows{Eigen::MatrixXd(static_cast<Eigen::Index>(samples.size()), full.d()), full.embedder_id};
        for (std::size_t i = 0; i < samples.size(); ++i)
            reference_rows.features.row(static_cast<Eigen::Index>(i)) = full.features.row(row_of.at(samples[i].sample_id));
        const double reference_fid = compute_fid(reference_rows, full).value;
        log("reference FID: " + fmt(reference_fid));

        std::vector<std::optional<Image>> originals(samples.size());
        std::vector<std::string> load_errors(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            try {
                originals[i] = services.loader(manifest, samples[i]);
            } catch (const Error &e) {
                load_errors[i] = e.what();
            }
        }

        StudyContext ctx{config, manifest, samples, resolve_grammar(config.grammar, manifest.schema), captions, llm,
                         backend, services.loader, dir, log, nullptr};
        const std::string builder =
            config.experiment == Experiment::prompt_study ? std::string() : image_study_builder(ctx);
        if (!builder.empty()) log("prompt builder: " + builder);

        StudyReport report;
        report.experiment = std::string(to_string(config.experiment));
        report.variants = config.variants.empty() ? default_variants(config.experiment, config) : config.variants;
        report.configs = config.configs;
        report.reference_fid = reference_fid;
        report.n_conditional = samples.size();
        report.full_set_size = manifest.samples.size();
        report.embedder_id = embedder.id();
        report.backend_id = backend.id();
        report.metadata = {{"dataset", manifest.schema.dataset_id()},
                           {"grammar", grammar_name(ctx.grammar)},
                           {"seed", std::to_string(config.seed)}};
        if (!builder.empty()) report.metadata["prompt_builder"] = builder;

        json failures = json::array();
        const int threads = std::max(1, std::min(backend.max_concurrency(), omp_get_max_threads()));
        const auto n = static_cast<std::int64_t>(samples.size());

        for (const auto &name : report.variants) {
            Variant v = make_variant(ctx, name, builder);
            if (!v.row_error.empty()) log("variant " + name + " failed: " + v.row_error);

            // Conditioned init images do not depend on the configuration.
            std::vector<std::optional<Image>> inits(samples.size());
            std::vector<std::string> init_errors = load_errors;
            if (v.row_error.empty()) {
#pragma omp parallel for schedule(dynamic) num_threads(threads)
                for (std::int64_t i = 0; i < n; ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    if (!originals[k]) continue;
                    try {
                        inits[k] = fit_granularity(
                            apply_conditioning(*originals[k], v.conditioning, samples[k].bbox, granularity), granularity);
                    } catch (const Error &e) {
                        init_errors[k] = e.what();
                    }
                }
            }

            auto &row = report.cells.emplace_back();
            for (const auto &config_name : report.configs) {
                const GenerationConfig base = named_config(config_name, granularity);
                std::vector<std::optional<Image>> out(samples.size());
                std::vector<std::string> reasons(samples.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads)
                for (std::int64_t i = 0; i < n; ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    if (!v.row_error.empty()) {
                        reasons[k] = v.row_error;
                    } else if (!v.prompts[k]) {
                        reasons[k] = v.prompt_errors[k];
                    } else if (!inits[k]) {
                        reasons[k] = init_errors[k];
                    } else {
                        try {
                            GenerationConfig g = base;
                            g.seed = sample_seed(config.seed, samples[k].sample_id);
                            out[k] = generate(backend, *inits[k], *v.prompts[k], g, v.technique).image;
                        } catch (const Error &e) {
                            reasons[k] = e.what();
                        }
                    }
                }

                std::vector<Image> images;
                StudyCell cell;
                for (std::size_t k = 0; k < samples.size(); ++k) {
                    if (out[k]) {
                        images.push_back(std::move(*out[k]));
                    } else {
                        ++cell.failures;
                        failures.push_back({{"variant", name},
                                            {"config", config_name},
                                            {"sample_id", samples[k].sample_id},
                                            {"reason", reasons[k]}});
                    }
                }
                cell.generated = images.size();
                if (images.size() >= 2) cell.fid = compute_fid(embed_images(embedder, images), full).value;
                log("cell " + name + " / " + config_name + ": generated " + std::to_string(cell.generated) +
                    ", failures " + std::to_string(cell.failures) + ", FID " + (cell.fid ? fmt(*cell.fid) : "n/a"));
                row.push_back(cell);
            }
        }

        std::string failure_lines;
        for (const auto &f : failures) failure_lines += f.dump() + "\n";
        write_file(dir / "failures.jsonl", failure_lines);
        save_study_report(report, dir / "study_report.json");
        report.validate();
        for (const auto &p : emit_report(report, parse_report_formats(config.formats), dir, "study"))
            log("wrote " + p.filename().string());
        return report;
    });
}

// ---------------------------------------------------------------------------
// Expansion, training, evaluation

namespace {

ExperimentConfig sub_run(const ExperimentConfig &parent, Experiment e, const fs::path &dir) {
    ExperimentConfig c = parent;
    c.experiment = e;
    c.output_dir = dir;
    return c;
}

std::vector<fs::path> list_files(const fs::path &dir) {
    std::vector<fs::path> out;
    for (const auto &e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::string history_csv(const TrainedModel &model) {
    std::string out = "epoch,lr,train_loss,monitor_ma\n";
    for (const auto &h : model.history)
        out += std::to_string(h.epoch) + "," + format_double(h.lr) + "," + format_double(h.train_loss) + "," +
               format_double(h.monitor_ma) + "\n";
    return out;
}

// Input size and threshold the model was trained with, unless overridden.
TrainConfig eval_config(const TrainedModel &model, const TrainConfig &base) {
    TrainConfig t = base;
    if (auto it = model.metadata.find("input_size"); it != model.metadata.end()) {
        const auto x = it->second.find('x');
        if (x != std::string::npos) {
            t.input_height = std::stoi(it->second.substr(0, x));
            t.input_width = std::stoi(it->second.substr(x + 1));
        }
    }
    return t;
}

} // namespace

RunArtifacts run_expand(const ExperimentConfig &config, const StudyServices &services) {
    config.validate();
    const fs::path dir = prepare_run_dir(config);
    return in_run(config, [&] {
        RunLog log(dir / "run.log");
        const DatasetManifest manifest = load_manifest(config.manifest);
        auto res = resolve(config, services, true, true);
        Backend &backend = *res.backend;
        log("manifest: " + config.manifest.string() + " (" + std::to_string(manifest.count(Split::train)) +
            " train samples)");
        log("backend: " + backend.id() + ", embedder: " + res.embedder->id());

        ExpansionPlan plan;
        plan.source = manifest;
        plan.config_name = config.config_name;
        plan.grammar = resolve_grammar(config.grammar, manifest.schema);
        plan.conditioning = parse_conditioning(config.conditioning);
        plan.multiplier = config.multiplier;
        plan.seed = config.seed;
        plan.output_dir = dir;
        plan.label_mode = parse_label_mode(config.label_mode);
        plan.loader = services.loader;
        switch (parse_technique_kind(config.technique)) {
        case TechniqueKind::plain: break;
        case TechniqueKind::dynamic_strength:
            plan.technique = TechniqueSpec::dynamic_strength(config.s_min, config.s_max);
            break;
        case TechniqueKind::latent_alteration: plan.technique = TechniqueSpec::latent_alteration(config.amplitude); break;
        case TechniqueKind::textual_inversion: {
            std::shared_ptr<const TokenLibrary> lib;
            if (!config.token_library.empty()) {
                lib = std::make_shared<const TokenLibrary>(load_token_library(config.token_library));
                log("token library: " + config.token_library.string());
            } else {
                std::vector<std::string> attrs = config.token_attributes;
                if (attrs.empty())
                    attrs = plan.grammar ? in_schema_order(grammar_covered_attributes(attribute_grammar(*plan.grammar),
                                                                                      manifest.schema),
                                                           manifest.schema)
                                         : manifest.schema.attributes();
                lib = token_library_for(backend, manifest, attrs, config.token_steps, config.seed, services.loader,
                                        dir / "tokens.json", log);
            }
            plan.technique = TechniqueSpec::textual_inversion(lib);
            break;
        }
        }
        log("config: " + plan.config_name + ", technique: " + config.technique + ", grammar: " +
            grammar_name(plan.grammar) + ", multiplier: " + std::to_string(plan.multiplier));

        const ExpansionResult r = expand_dataset(plan, backend, res.embedder);
        log("synthetic samples: " + std::to_string(r.log.size()) + ", failures: " + std::to_string(r.failures.size()));
        log("merged train split: " + std::to_string(r.merged.count(Split::train)));
        if (r.quality_fid) log("synthetic vs real train FID: " + fmt(r.quality_fid->value));
        return RunArtifacts{dir, list_files(dir)};
    });
}

RunArtifacts run_train(const ExperimentConfig &config, const StudyServices &services) {
    config.validate();
    const fs::path dir = prepare_run_dir(config);
    return in_run(config, [&] {
        RunLog log(dir / "run.log");
        const DatasetManifest manifest = load_manifest(config.manifest);
        auto res = resolve(config, services, false, true);
        const Embedder &backbone = *res.embedder;
        TrainConfig tc = config.train;
        tc.seed = config.seed;
        log("manifest: " + config.manifest.string() + " (" + std::to_string(manifest.count(Split::train)) +
            " train, " + std::to_string(manifest.count(Split::val)) + " val)");
        log("backbone: " + tc.backbone_id + " features from " + backbone.id());

        const TrainedModel model = train(manifest, tc, backbone, services.loader);
        save_model(model, dir / "model.bin");
        write_file(dir / "history.csv", history_csv(model));
        log("epochs run: " + model.metadata.at("epochs_run") + ", best epoch: " + model.metadata.at("best_epoch"));

        const auto formats = parse_report_formats(config.formats);
        for (Split s : {Split::train, Split::val}) {
            if (manifest.count(s) == 0) continue;
            const MAReport r = evaluate(model, manifest, s, backbone, tc, services.loader);
            const std::string stem = "ma_" + std::string(to_string(s));
            save_ma_report(r, dir / (stem + ".json"));
            (void)emit_report(r, formats, dir, stem);
            log(std::string(to_string(s)) + " mA: " + fmt(r.mean_ma));
        }
        return RunArtifacts{dir, list_files(dir)};
    });
}

RunArtifacts run_eval(const ExperimentConfig &config, const StudyServices &services) {
    config.validate();
    const fs::path dir = prepare_run_dir(config);
    return in_run(config, [&] {
        RunLog log(dir / "run.log");
        const DatasetManifest manifest = load_manifest(config.manifest);
        const TrainedModel model = load_model(config.model);
        auto res = resolve(config, services, false, true);
        const Split split = parse_split(config.split);
        log("model: " + config.model.string() + ", split: " + config.split);

        const MAReport r = evaluate(model, manifest, split, *res.embedder, eval_config(model, config.train), services.loader);
        save_ma_report(r, dir / "ma_report.json");
        const auto formats = parse_report_formats(config.formats);
        (void)emit_report(r, formats, dir, "ma");
        log("mA: " + fmt(r.mean_ma) + " over " + std::to_string(r.per_attribute.size()) + " attributes");
        if (!config.compare.empty()) {
            const ComparisonTable t = compare_reports(load_ma_report(config.compare), r);
            (void)emit_report(t, formats, dir, "comparison", "reference", "evaluated");
            log("mean delta vs " + config.compare.string() + ": " + fmt(t.mean_delta));
        }
        return RunArtifacts{dir, list_files(dir)};
    });
}

RunArtifacts run_report(const ExperimentConfig &config) {
    config.validate();
    ExperimentConfig c = config;
    if (c.output_dir.empty()) c.output_dir = c.inputs.front().parent_path();
    if (c.output_dir.empty()) c.output_dir = ".";
    return in_run(c, [&] {
        const auto formats = parse_report_formats(c.formats);
        std::vector<fs::path> written;
        std::vector<std::pair<std::string, MAReport>> ma;
        for (std::size_t i = 0; i < c.inputs.size(); ++i) {
            const fs::path &in = c.inputs[i];
            const std::string text = read_file(in);
            json j;
            try {
                j = json::parse(text);
            } catch (const json::parse_error &e) {
                throw ParseError(in.string() + ": " + e.what(), 0, e.byte);
            }
            const std::string stem = c.inputs.size() == 1 ? "" : "_" + in.stem().string();
            std::vector<fs::path> paths;
            if (j.contains("cells")) {
                paths = emit_report(study_report_from_json(text), formats, c.output_dir, "study" + stem);
            } else if (j.contains("per_attribute")) {
                ma.emplace_back(in.stem().string(), ma_report_from_json(text));
                paths = emit_report(ma.back().second, formats, c.output_dir, "ma" + stem);
            } else {
                throw InvalidArgument(in.string() + " is neither a study report nor an MA report");
            }
            written.insert(written.end(), paths.begin(), paths.end());
        }
        if (ma.size() == 2) {
            const auto paths = emit_report(compare_reports(ma[0].second, ma[1].second), formats, c.output_dir,
                                           "comparison", ma[0].first, ma[1].first);
            written.insert(written.end(), paths.begin(), paths.end());
        }
        return RunArtifacts{c.output_dir, written};
    });
}

RunArtifacts run_pipeline(const ExperimentConfig &config, const StudyServices &services) {
    config.validate();
    const fs::path dir = prepare_run_dir(config);
    return in_run(config, [&] {
        RunLog log(dir / "run.log");
        (void)run_expand(sub_run(config, Experiment::expand, dir / "expand"), services);
        log("expanded manifest: expand/manifest.jsonl");

        auto source_train = sub_run(config, Experiment::train, dir / "train_source");
        auto expanded_train = sub_run(config, Experiment::train, dir / "train_expanded");
        expanded_train.manifest = dir / "expand" / "manifest.jsonl";
        (void)run_train(source_train, services);
        (void)run_train(expanded_train, services);

        auto source_eval = sub_run(config, Experiment::eval, dir / "eval_source");
        source_eval.model = dir / "train_source" / "model.bin";
        auto expanded_eval = sub_run(config, Experiment::eval, dir / "eval_expanded");
        expanded_eval.model = dir / "train_expanded" / "model.bin";
        (void)run_eval(source_eval, services);
        (void)run_eval(expanded_eval, services);

        const MAReport a = load_ma_report(dir / "eval_source" / "ma_report.json");
        const MAReport b = load_ma_report(dir / "eval_expanded" / "ma_report.json");
        const ComparisonTable t = compare_reports(a, b);
        (void)emit_report(t, parse_report_formats(config.formats), dir, "comparison", "source", "expanded");
        log(config.split + " mA, source: " + fmt(t.mean_a) + ", expanded: " + fmt(t.mean_b) +
            ", delta: " + fmt(t.mean_delta));
        return RunArtifacts{dir, list_files(dir)};
    });
}

} // namespace pedsynth
