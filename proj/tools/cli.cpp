#include "cli.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/schemas.hpp"
#include "pedsynth/study.hpp"

#include <CLI11.hpp>

#include <map>

namespace pedsynth::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
    ExperimentConfig cfg;
    std::string experiment;
    std::vector<std::string> inputs;
    std::map<std::string, std::vector<std::string>> variant_lists; ///< by flag name
    // toy / ingest
    std::size_t toy_n = 200;
    double toy_margin = 20.0;
    std::string csv;
    std::string captions_json;
    std::string schema = "RAPzs";
    std::string split = "train";
};

const char *const kVariantFlags[] = {"prompts", "levels", "fractions", "factors", "aspects", "techniques"};

std::string variant_flag(Experiment e) {
    switch (e) {
    case Experiment::prompt_study: return "prompts";
    case Experiment::blur_study: return "levels";
    case Experiment::context_study: return "fractions";
    case Experiment::resolution_study: return "factors";
    case Experiment::aspect_study: return "aspects";
    case Experiment::technique_study: return "techniques";
    default: return {};
    }
}

void add_common(CLI::App *sub, Flags &f, bool runs_models) {
    auto &c = f.cfg;
    sub->add_option("--manifest", c.manifest, "Dataset manifest (JSON lines)");
    if (runs_models) sub->add_option("--backend", c.backend, "Generation backend: mock, stable-diffusion-v1-4, command:<cmd>");
    sub->add_option("--embedder", c.embedder, "Feature extractor: mock, band, inception-pool3, command:<dim>:<cmd>");
    sub->add_option("--seed", c.seed, "Top-level seed");
    sub->add_option("--out", c.output_dir, "Run directory")->required();
    sub->add_option("--formats", c.formats, "Renderings: table,csv,plot (none for no files)")->delimiter(',');
}

void add_technique_params(CLI::App *sub, Flags &f) {
    auto &c = f.cfg;
    sub->add_option("--grammar", c.grammar, "Prompt grammar: auto, RAPzs, PETAzs, PA100k, phrase_list");
    sub->add_option("--token-steps", c.token_steps, "Textual inversion training steps");
    sub->add_option("--s-min", c.s_min, "Dynamic strength lower bound");
    sub->add_option("--s-max", c.s_max, "Dynamic strength upper bound");
    sub->add_option("--amplitude", c.amplitude, "Latent alteration amplitude");
}

void add_expand_params(CLI::App *sub, Flags &f) {
    auto &c = f.cfg;
    sub->add_option("--gen-config", c.config_name, "Named generation configuration");
    sub->add_option("--technique", c.technique,
                    "plain, textual_inversion, dynamic_strength or latent_alteration");
    sub->add_option("--multiplier", c.multiplier, "Synthetic copies per train sample");
    sub->add_option("--label-mode", c.label_mode, "negative or masked");
    sub->add_option("--conditioning", c.conditioning, "Init image transform, e.g. blur:low");
    sub->add_option("--token-library", c.token_library, "Existing token library (JSON)");
    sub->add_option("--token-attributes", c.token_attributes, "Attributes to learn tokens for")->delimiter(',');
}

void add_train_params(CLI::App *sub, Flags &f) {
    auto &t = f.cfg.train;
    sub->add_option("--backbone", t.backbone_id, "Backbone name recorded with the model");
    sub->add_option("--epochs", t.epochs);
    sub->add_option("--batch-size", t.batch_size);
    sub->add_option("--lr", t.lr_new, "Head learning rate");
    sub->add_option("--momentum", t.momentum);
    sub->add_option("--weight-decay", t.weight_decay);
    sub->add_option("--warmup-epochs", t.warmup_epochs);
    sub->add_option("--warmup-coef", t.warmup_coef);
    sub->add_option("--plateau-factor", t.plateau_factor);
    sub->add_option("--plateau-patience", t.plateau_patience);
    sub->add_option("--early-stop", t.early_stop_patience);
    sub->add_option("--input-width", t.input_width);
    sub->add_option("--input-height", t.input_height);
}

// Usage-level checks that need the parsed values.
void finish(Flags &f, CLI::App *sub) {
    auto &c = f.cfg;
    if (c.formats.size() == 1 && c.formats[0] == "none") c.formats.clear();
    if (sub->get_name() == "study") {
        c.experiment = parse_experiment(f.experiment);
        if (!is_study(c.experiment)) throw InvalidArgument("'" + f.experiment + "' is not a study");
        const std::string own = variant_flag(c.experiment);
        for (const char *flag : kVariantFlags) {
            if (sub->count(std::string("--") + flag) == 0) continue;
            if (flag != own)
                throw InvalidArgument("--" + std::string(flag) + " does not apply to " + f.experiment +
                                      " (use --" + own + ")");
            c.variants = f.variant_lists[flag];
        }
    } else if (sub->get_name() == "report") {
        c.experiment = Experiment::report;
        for (const auto &p : f.inputs) c.inputs.emplace_back(p);
    } else if (sub->get_name() != "toy" && sub->get_name() != "ingest") {
        c.experiment = parse_experiment(sub->get_name());
    }
}

void print_files(std::ostream &out, const RunArtifacts &a) {
    out << "run directory: " << a.run_dir.string() << "\n";
    for (const auto &p : a.files) out << "  " << p.lexically_relative(a.run_dir).string() << "\n";
}

} // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    Flags f;
    CLI::App app{"Synthetic pedestrian data generation, evaluation and expansion"};
    app.set_config("--config", "", "Flat key=value file with one [command] section; flags override it");
    app.require_subcommand(1);
    app.set_version_flag("--version", "pedsynth 0.1.0");

    auto *study = app.add_subcommand("study", "Run an FID study over variants x configurations");
    study->add_option("experiment,--experiment", f.experiment,
                      "prompt_study, blur_study, context_study, resolution_study, aspect_study, technique_study")
        ->required();
    add_common(study, f, true);
    study->add_option("--configs", f.cfg.configs, "Named configurations (columns)")->delimiter(',');
    study->add_option("--n-conditional", f.cfg.n_conditional, "Conditional real images per cell");
    for (const char *flag : kVariantFlags)
        study->add_option(std::string("--") + flag, f.variant_lists[flag], "Variants (rows)")->delimiter(',');
    study->add_option("--prompt", f.cfg.prompt, "Prompts for image/technique studies: auto, attribute, phrase_list, caption_aligned");
    study->add_option("--captions", f.cfg.captions, "Captions (JSON lines sample_id/caption)");
    study->add_option("--llm-fixture", f.cfg.llm_fixture, "Offline LLM responses (JSON)");
    add_technique_params(study, f);

    auto *expand = app.add_subcommand("expand", "Expand the train split with synthetic samples");
    add_common(expand, f, true);
    add_technique_params(expand, f);
    add_expand_params(expand, f);

    auto *train = app.add_subcommand("train", "Train an attribute head on frozen backbone features");
    add_common(train, f, false);
    add_train_params(train, f);
    train->add_option("--threshold", f.cfg.train.threshold, "Decision threshold");

    auto *eval = app.add_subcommand("eval", "Evaluate a trained model on a split");
    add_common(eval, f, false);
    eval->add_option("--model", f.cfg.model, "model.bin from a train run")->required();
    eval->add_option("--split", f.cfg.split, "train, val or test");
    eval->add_option("--compare", f.cfg.compare, "MA report to compare against");
    eval->add_option("--threshold", f.cfg.train.threshold, "Decision threshold");

    auto *report = app.add_subcommand("report", "Re-render study or MA report files");
    report->add_option("inputs,--inputs", f.inputs, "study_report.json or MA report files")->required()->delimiter(',');
    report->add_option("--formats", f.cfg.formats, "Renderings: table,csv,plot")->delimiter(',');
    report->add_option("--out", f.cfg.output_dir, "Output directory (default: next to the first input)");

    auto *pipeline = app.add_subcommand("pipeline", "expand, train on source and expanded data, evaluate, compare");
    add_common(pipeline, f, true);
    add_technique_params(pipeline, f);
    add_expand_params(pipeline, f);
    add_train_params(pipeline, f);
    pipeline->add_option("--split", f.cfg.split, "Evaluation split");
    pipeline->add_option("--threshold", f.cfg.train.threshold, "Decision threshold");

    auto *toy = app.add_subcommand("toy", "Write the linearly separable toy dataset");
    toy->add_option("--out", f.cfg.output_dir, "Output directory")->required();
    toy->add_option("--n", f.toy_n, "Samples");
    toy->add_option("--seed", f.cfg.seed, "Seed");
    toy->add_option("--margin", f.toy_margin, "Minimum band distance from the decision plane");

    auto *ingest = app.add_subcommand("ingest", "Convert annotations into a manifest");
    auto *src = ingest->add_option_group("source");
    src->add_option("--csv", f.csv, "CSV annotations");
    src->add_option("--captions-json", f.captions_json, "Caption list [{image, caption}]");
    src->require_option(1);
    ingest->add_option("--schema", f.schema, "Built-in schema id or schema JSON file");
    ingest->add_option("--split", f.split, "Split for caption-list samples");
    ingest->add_option("--out", f.cfg.manifest, "Output manifest path")->required();

    for (auto *sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success &e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError &e) {
        (void)app.exit(e, out, err);
        return kExitUsage;
    }

    CLI::App *sub = app.get_subcommands().front();
    try {
        finish(f, sub);
        if (sub != toy && sub != ingest) f.cfg.validate();
    } catch (const Error &e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        const auto &c = f.cfg;
        if (sub == study) {
            const StudyReport r = run_study(c);
            out << study_table(r);
            out << "run directory: " << c.output_dir.string() << "\n";
            bool failed = false;
            for (const auto &row : r.cells)
                for (const auto &cell : row) failed = failed || cell.failures > 0;
            return failed ? kExitRuntime : kExitOk;
        }
        if (sub == expand) {
            const auto a = run_expand(c);
            print_files(out, a);
            return read_file(c.output_dir / "failures.jsonl").empty() ? kExitOk : kExitRuntime;
        }
        if (sub == train) print_files(out, run_train(c));
        if (sub == eval) {
            print_files(out, run_eval(c));
            out << "mean mA: " << load_ma_report(c.output_dir / "ma_report.json").mean_ma << "\n";
        }
        if (sub == report) print_files(out, run_report(c));
        if (sub == pipeline) {
            print_files(out, run_pipeline(c));
            if (fs::exists(c.output_dir / "comparison.txt")) out << read_file(c.output_dir / "comparison.txt");
            return read_file(c.output_dir / "expand" / "failures.jsonl").empty() ? kExitOk : kExitRuntime;
        }
        if (sub == toy) {
            const auto t = make_toy_dataset(c.output_dir, f.toy_n, c.seed, f.toy_margin);
            save_manifest(t.manifest, c.output_dir / "manifest.jsonl");
            out << "toy manifest: " << (c.output_dir / "manifest.jsonl").string() << " (" << t.manifest.samples.size()
                << " samples)\n";
        }
        if (sub == ingest) {
            const AttributeSchema schema = fs::exists(f.schema) ? load_schema(f.schema) : builtin_schema(f.schema);
            DatasetManifest m;
            if (!f.csv.empty()) {
                m = ingest_csv(f.csv, schema);
            } else {
                auto [manifest, captions] = ingest_captioned_images(f.captions_json, schema, parse_split(f.split));
                m = std::move(manifest);
                const fs::path cap = fs::path(c.manifest).replace_extension(".captions.jsonl");
                save_captions(captions, cap);
                out << "captions: " << cap.string() << "\n";
            }
            // Image paths stay valid relative to wherever the manifest is written.
            const fs::path target_dir = fs::absolute(c.manifest).parent_path();
            for (auto &smp : m.samples)
                smp.image_path = fs::absolute(m.image_file(smp)).lexically_normal().lexically_relative(target_dir).generic_string();
            save_manifest(m, c.manifest);
            const auto problems = validate_manifest(m);
            for (const auto &p : problems) err << "warning: " << p << "\n";
            out << "manifest: " << c.manifest.string() << " (" << m.samples.size() << " samples)\n";
        }
        return kExitOk;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace pedsynth::cli
