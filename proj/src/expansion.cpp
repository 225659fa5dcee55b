#include "pedsynth/expansion.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/json_io.hpp"
#include "pedsynth/rng.hpp"

#include <omp.h>

#include <algorithm>
#include <numeric>

namespace pedsynth {

std::string_view to_string(LabelMode m) noexcept { return m == LabelMode::masked ? "masked" : "negative"; }

LabelMode parse_label_mode(std::string_view s) {
    if (s == "negative") return LabelMode::negative;
    if (s == "masked") return LabelMode::masked;
    throw InvalidArgument("unknown label mode '" + std::string(s) + "' (expected negative or masked)");
}

AttributeVector assign_labels(const PromptRecord &prompt, const AttributeSchema &schema) {
    AttributeVector v(schema.size());
    for (const auto &a : prompt.attributes) {
        const auto i = schema.index_of(a);
        if (!i) throw InvalidArgument("assign_labels: attribute '" + a + "' is not in schema " + schema.dataset_id());
        v.set(*i);
    }
    return v;
}

void ExpansionPlan::validate() const {
    if (multiplier < 1) throw InvalidArgument("expansion: multiplier must be >= 1");
    if (source.count(Split::train) == 0) throw InvalidArgument("expansion: source has no train samples");
    if (output_dir.empty()) throw InvalidArgument("expansion: output_dir is required");
    if (!loader) throw InvalidArgument("expansion: image loader is required");
    (void)named_config(config_name);
    technique.validate();
    if (technique.kind == TechniqueKind::textual_inversion &&
        technique.tokens->schema.fingerprint() != source.schema.fingerprint())
        throw InvalidArgument("expansion: token library was trained for a different schema");
    if (grammar && attribute_grammar(*grammar).dataset_id != source.schema.dataset_id())
        throw InvalidArgument("expansion: grammar " + std::string(to_string(*grammar)) + " does not fit schema " +
                              source.schema.dataset_id());
}

std::uint64_t expansion_seed(std::uint64_t plan_seed, std::string_view sample_id, int k) {
    return hash_combine(hash_combine(plan_seed, fnv1a64(sample_id)), static_cast<std::uint64_t>(k));
}

std::string synthetic_id(std::string_view source_id, int k) {
    return std::string(source_id) + "__syn" + std::to_string(k);
}

namespace {

std::string grammar_name(const std::optional<GrammarId> &g) { return g ? std::string(to_string(*g)) : "phrase_list"; }

struct Task {
    std::size_t sample = 0; ///< index into plan.source.samples
    int k = 1;
    // outputs
    bool ok = false;
    std::string error;
    PedestrianSample synthetic;
    SampleLogEntry log;
    Eigen::VectorXd features;
};

std::filesystem::path resolved(const std::filesystem::path &p) {
    return std::filesystem::weakly_canonical(std::filesystem::absolute(p));
}

json log_to_json(const SampleLogEntry &e) {
    return json{{"source_id", e.source_id},     {"synthetic_id", e.synthetic_id}, {"prompt", e.prompt},
                {"prompt_sent", e.prompt_sent}, {"config", e.config_name},        {"strength", e.strength},
                {"scale", e.scale},             {"steps", e.steps},               {"seed", e.seed},
                {"technique", e.technique},     {"image", e.image_path}};
}

void write_jsonl(const std::filesystem::path &path, const std::vector<json> &rows) {
    std::string out;
    for (const auto &r : rows) out += r.dump() + "\n";
    write_file(path, out);
}

} // namespace

ExpansionResult expand_dataset(const ExpansionPlan &plan, Backend &backend, const Embedder *quality_embedder) {
    plan.validate();
    const DatasetManifest &src = plan.source;
    const AttributeSchema &schema = src.schema;

    std::error_code ec;
    std::filesystem::create_directories(plan.output_dir / "synthetic", ec);
    if (ec) throw IoError("cannot create " + (plan.output_dir / "synthetic").string() + ": " + ec.message());
    const auto probe = plan.output_dir / ".write_probe";
    write_file(probe, "");
    std::filesystem::remove(probe);

    GenerationConfig base = named_config(plan.config_name, backend.granularity());
    const std::set<std::string> covered =
        plan.grammar ? grammar_covered_attributes(attribute_grammar(*plan.grammar), schema)
                     : std::set<std::string>(schema.attributes().begin(), schema.attributes().end());

    // Train samples ordered by id; this order fixes the synthetic section of the merged manifest.
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < src.samples.size(); ++i)
        if (src.samples[i].split == Split::train) train.push_back(i);
    std::sort(train.begin(), train.end(),
              [&](std::size_t a, std::size_t b) { return src.samples[a].sample_id < src.samples[b].sample_id; });

    std::vector<Task> tasks;
    tasks.reserve(train.size() * static_cast<std::size_t>(plan.multiplier));
    for (auto i : train)
        for (int k = 1; k <= plan.multiplier; ++k) {
            Task t;
            t.sample = i;
            t.k = k;
            tasks.push_back(std::move(t));
        }

    const int threads = std::max(1, std::min(backend.max_concurrency(), omp_get_max_threads()));
    const auto n_tasks = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::ptrdiff_t t = 0; t < n_tasks; ++t) {
        Task &task = tasks[static_cast<std::size_t>(t)];
        const PedestrianSample &s = src.samples[task.sample];
        const std::string syn_id = synthetic_id(s.sample_id, task.k);
        try {
            const PromptRecord prompt = plan.grammar ? build_attribute_prompt(s, schema, *plan.grammar, plan.head)
                                                     : build_phrase_list_prompt(s, schema);
            Image init = apply_conditioning(plan.loader(src, s), plan.conditioning, s.bbox, backend.granularity());
            init = fit_granularity(init, backend.granularity());
            GenerationConfig cfg = base;
            cfg.seed = expansion_seed(plan.seed, s.sample_id, task.k);
            const GenerationResult gen = generate(backend, init, prompt, cfg, plan.technique);

            const std::string rel = "synthetic/" + syn_id + ".png";
            write_png(gen.image, plan.output_dir / rel);
            if (quality_embedder) task.features = quality_embedder->embed(gen.image);

            PedestrianSample &out = task.synthetic;
            out.sample_id = syn_id;
            out.image_path = rel;
            out.split = Split::train;
            out.source = Source::synthetic;
            out.width = gen.image.width;
            out.height = gen.image.height;
            out.prompt = prompt.text;
            out.gen_config_name = plan.config_name;
            out.source_sample_id = s.sample_id;
            out.attributes = assign_labels(prompt, schema);
            if (plan.label_mode == LabelMode::masked) {
                std::vector<std::uint8_t> mask(schema.size(), 0);
                for (const auto &a : covered) mask[schema.require_index(a)] = 1;
                out.label_mask = std::move(mask);
            }
            task.log = SampleLogEntry{s.sample_id, syn_id,   prompt.text,    gen.prompt_text,
                                      plan.config_name, gen.effective_strength, cfg.scale, cfg.steps,
                                      cfg.seed,     std::string(to_string(plan.technique.kind)), rel};
            task.ok = true;
        } catch (const std::exception &e) {
            task.error = e.what();
        }
    }

    ExpansionResult result;
    DatasetManifest &merged = result.merged;
    merged.schema = schema;
    merged.metadata = src.metadata;
    merged.metadata["expansion.config"] = plan.config_name;
    merged.metadata["expansion.technique"] = std::string(to_string(plan.technique.kind));
    merged.metadata["expansion.grammar"] = grammar_name(plan.grammar);
    merged.metadata["expansion.multiplier"] = std::to_string(plan.multiplier);
    merged.metadata["expansion.seed"] = std::to_string(plan.seed);
    merged.metadata["expansion.label_mode"] = std::string(to_string(plan.label_mode));
    merged.metadata["expansion.conditioning"] = to_string(plan.conditioning);
    merged.metadata["expansion.backend"] = backend.id();
    merged.root = plan.output_dir;

    const auto out_abs = resolved(plan.output_dir);
    for (const auto &s : src.samples) {
        PedestrianSample copy = s;
        copy.image_path = resolved(src.image_file(s)).lexically_relative(out_abs).generic_string();
        merged.samples.push_back(std::move(copy));
    }

    std::vector<Eigen::VectorXd> synthetic_features;
    for (auto &task : tasks) {
        if (task.ok) {
            merged.samples.push_back(std::move(task.synthetic));
            result.log.push_back(std::move(task.log));
            if (quality_embedder) synthetic_features.push_back(std::move(task.features));
        } else {
            const auto &sid = src.samples[task.sample].sample_id;
            result.failures.push_back({sid, synthetic_id(sid, task.k), task.error});
        }
    }

    json report;
    report["source_train"] = train.size();
    report["synthetic"] = result.log.size();
    report["failures"] = result.failures.size();
    report["merged_train"] = merged.count(Split::train);
    report["config"] = plan.config_name;
    report["technique"] = to_string(plan.technique.kind);
    report["grammar"] = grammar_name(plan.grammar);
    report["multiplier"] = plan.multiplier;
    report["seed"] = plan.seed;
    report["backend"] = backend.id();

    if (quality_embedder && synthetic_features.size() >= 2 && train.size() >= 2) {
        DatasetManifest real_train{schema, {}, {}, src.root};
        for (auto i : train) real_train.samples.push_back(src.samples[i]);
        const FeatureSet real = embed_manifest(*quality_embedder, real_train, plan.loader);
        FeatureSet syn{Eigen::MatrixXd(static_cast<Eigen::Index>(synthetic_features.size()), quality_embedder->dim()),
                       quality_embedder->id()};
        for (std::size_t i = 0; i < synthetic_features.size(); ++i)
            syn.features.row(static_cast<Eigen::Index>(i)) = synthetic_features[i].transpose();
        result.quality_fid = compute_fid(syn, real);
        report["quality_fid"] = {{"value", result.quality_fid->value},
                                 {"embedder", result.quality_fid->embedder_id},
                                 {"n_synthetic", result.quality_fid->n_a},
                                 {"n_real", result.quality_fid->n_b}};
    }

    save_manifest(merged, plan.output_dir / "manifest.jsonl");
    std::vector<json> rows;
    for (const auto &e : result.log) rows.push_back(log_to_json(e));
    write_jsonl(plan.output_dir / "per_sample_log.jsonl", rows);
    rows.clear();
    for (const auto &f : result.failures)
        rows.push_back(json{{"source_id", f.source_id}, {"synthetic_id", f.synthetic_id}, {"reason", f.reason}});
    write_jsonl(plan.output_dir / "failures.jsonl", rows);
    write_file(plan.output_dir / "expansion_report.json", report.dump(2) + "\n");
    return result;
}

} // namespace pedsynth
