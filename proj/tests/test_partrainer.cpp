#include "fixtures.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/expansion.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/partrainer.hpp"
#include "pedsynth/schemas.hpp"

#include <doctest.h>

#include <Eigen/QR>

#include <random>

using namespace pedsynth;

namespace {

TrainConfig toy_config(std::uint64_t seed = 0, int epochs = 50) {
    TrainConfig c;
    c.epochs = epochs;
    c.seed = seed;
    return c;
}

// Band features multiplied by a constant.
class ScaledBands : public Embedder {
  public:
    explicit ScaledBands(double k) : k_(k) {}
    std::string id() const override { return "band-8"; }
    int dim() const override { return 8; }
    Eigen::VectorXd embed(const Image &img) const override { return k_ * inner_.embed(img); }

  private:
    BandEmbedder inner_;
    double k_;
};

// Fraction of samples every attribute of which is reproduced by a
// per-attribute least-squares fit of +-1 targets on [features, 1].
double least_squares_separability(const Eigen::MatrixXd &f, const Eigen::MatrixXi &labels) {
    Eigen::MatrixXd a(f.rows(), f.cols() + 1);
    a << f, Eigen::VectorXd::Ones(f.rows());
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    std::size_t correct = 0, total = 0;
    for (Eigen::Index j = 0; j < labels.cols(); ++j) {
        const Eigen::VectorXd target = 2.0 * labels.col(j).cast<double>().array() - 1.0;
        const Eigen::VectorXd beta = qr.solve(target);
        const Eigen::VectorXd pred = a * beta;
        for (Eigen::Index i = 0; i < f.rows(); ++i, ++total) correct += (pred[i] > 0) == (labels(i, j) == 1);
    }
    return 100.0 * double(correct) / double(total);
}

} // namespace

TEST_CASE("toy dataset construction") {
    fixtures::TempDir dir("toy");
    const auto toy = make_toy_dataset(dir.path(), 200, 1);
    CHECK(toy.manifest.samples.size() == 200);
    CHECK(toy.manifest.count(Split::train) == 120);
    CHECK(toy.manifest.count(Split::val) == 40);
    CHECK(toy.manifest.count(Split::test) == 40);
    CHECK(toy.manifest.schema.size() == 5);
    CHECK(validate_manifest(toy.manifest).empty());
    // Labels are the generator's decisions on the exact band levels.
    BandEmbedder bands;
    const auto f = extract_features(bands, toy.manifest, 16, 64);
    const auto labels = label_matrix(toy.manifest);
    const Eigen::MatrixXd proj = (f.features.array() - 127.5).matrix() * toy.generator.transpose();
    for (Eigen::Index i = 0; i < proj.rows(); ++i)
        for (Eigen::Index j = 0; j < proj.cols(); ++j) CHECK((proj(i, j) > 0) == (labels(i, j) == 1));
    // Roughly balanced attributes.
    for (Eigen::Index j = 0; j < 5; ++j) {
        const double rate = labels.col(j).cast<double>().mean();
        CHECK(rate > 0.2);
        CHECK(rate < 0.8);
    }
    CHECK(least_squares_separability(f.features, labels) == 100.0);
}

TEST_CASE("head training separates the toy dataset") {
    fixtures::TempDir dir("toy_train");
    const auto toy = make_toy_dataset(dir.path(), 200, 2);
    BandEmbedder bands;
    const auto cfg = toy_config();
    const auto model = train(toy.manifest, cfg, bands);
    CHECK(model.history.size() <= 50);
    const auto on_train = evaluate(model, toy.manifest, Split::train, bands, cfg);
    CHECK(on_train.mean_ma > 95.0);
    const auto on_test = evaluate(model, toy.manifest, Split::test, bands, cfg);
    CHECK(on_test.mean_ma > 90.0);
    CHECK(model.weights.rows() == 5);
    CHECK(model.weights.cols() == 8);
    CHECK(model.metadata.at("monitor") == "val_ma");
    CHECK(model.metadata.at("momentum") == "0.9");

    // The least-squares oracle reaches 100% on the same (resized) features.
    const auto train_split = filter_split(toy.manifest, Split::train);
    const auto f = extract_features(bands, train_split, cfg.input_width, cfg.input_height);
    CHECK(least_squares_separability(f.features, label_matrix(train_split)) == 100.0);

    // Loss never rises across a 10-epoch window.
    for (std::size_t e = 0; e + 10 < model.history.size(); ++e)
        CHECK(model.history[e + 10].train_loss <= model.history[e].train_loss);
    // Warmup starts below the base rate.
    CHECK(model.history.front().lr < cfg.lr_new);
}

TEST_CASE("training determinism and config checks") {
    fixtures::TempDir dir("toy_det");
    const auto toy = make_toy_dataset(dir.path(), 100, 3);
    BandEmbedder bands;
    const auto a = train(toy.manifest, toy_config(5, 10), bands);
    const auto b = train(toy.manifest, toy_config(5, 10), bands);
    CHECK(a.weights == b.weights);
    CHECK(a.bias == b.bias);
    const auto c = train(toy.manifest, toy_config(6, 10), bands);
    CHECK_FALSE(a.weights == c.weights);

    auto bad = toy_config();
    bad.epochs = 0;
    CHECK_THROWS_AS(train(toy.manifest, bad, bands), InvalidArgument);
    bad = toy_config();
    bad.lr_new = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = toy_config();
    bad.freeze_backbone = false;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    CHECK_THROWS_AS(train(filter_split(toy.manifest, Split::test), toy_config(), bands), InvalidArgument);
}

TEST_CASE("decision boundary is invariant to feature scaling") {
    fixtures::TempDir dir("toy_scale");
    const auto toy = make_toy_dataset(dir.path(), 200, 4);
    BandEmbedder bands;
    ScaledBands scaled(3.7);
    const auto cfg = toy_config(1);
    const auto m1 = train(toy.manifest, cfg, bands);
    const auto m2 = train(toy.manifest, cfg, scaled);
    const auto test = filter_split(toy.manifest, Split::test);
    const auto p1 = m1.predict(extract_features(bands, test, cfg.input_width, cfg.input_height).features);
    const auto p2 = m2.predict(extract_features(scaled, test, cfg.input_width, cfg.input_height).features);
    for (Eigen::Index i = 0; i < p1.rows(); ++i)
        for (Eigen::Index j = 0; j < p1.cols(); ++j) CHECK((p1(i, j) >= 0.5) == (p2(i, j) >= 0.5));
}

TEST_CASE("evaluate: oracle and chance-level heads") {
    fixtures::TempDir dir("toy_eval");
    const auto toy = make_toy_dataset(dir.path(), 200, 5);
    BandEmbedder bands;
    TrainedModel oracle;
    oracle.schema = toy.manifest.schema;
    oracle.embedder_id = bands.id();
    oracle.weights = toy.generator;
    oracle.bias = Eigen::VectorXd::Zero(5);
    oracle.feature_mean = Eigen::VectorXd::Constant(8, 127.5);
    oracle.feature_scale = Eigen::VectorXd::Ones(8);
    TrainConfig native;
    native.input_width = 16;
    native.input_height = 64;
    for (auto split : {Split::train, Split::val, Split::test})
        CHECK(evaluate(oracle, toy.manifest, split, bands, native).mean_ma == 100.0);

    // Random heads on balanced random labels.
    std::mt19937_64 gen(8);
    std::normal_distribution<double> z;
    double total = 0;
    for (int s = 0; s < 20; ++s) {
        const int n = 400, d = 8, m = 5;
        Eigen::MatrixXd f(n, d);
        Eigen::MatrixXi labels(n, m);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) f(i, j) = z(gen);
            for (int j = 0; j < m; ++j) labels(i, j) = int(gen() & 1);
        }
        TrainedModel random_head;
        random_head.schema = toy.manifest.schema;
        random_head.weights.resize(m, d);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j) random_head.weights(i, j) = z(gen);
        random_head.bias = Eigen::VectorXd::Zero(m);
        random_head.feature_mean = Eigen::VectorXd::Zero(d);
        random_head.feature_scale = Eigen::VectorXd::Ones(d);
        const double v = evaluate_features(random_head, f, labels).mean_ma;
        CHECK(v > 45);
        CHECK(v < 55);
        total += v;
    }
    CHECK(std::abs(total / 20 - 50) < 2);

    TrainedModel wrong = oracle;
    wrong.schema = rapzs_schema();
    CHECK_THROWS_AS(evaluate(wrong, toy.manifest, Split::test, bands, native), InvalidArgument);
    try {
        (void)evaluate(oracle, filter_split(toy.manifest, Split::train), Split::val, bands, native);
        FAIL("expected an error");
    } catch (const InvalidArgument &e) {
        CHECK(std::string(e.what()).find("'val'") != std::string::npos);
    }
}

TEST_CASE("masked labels do not contribute to the loss") {
    fixtures::TempDir dir("toy_mask");
    const auto toy = make_toy_dataset(dir.path(), 100, 6);
    BandEmbedder bands;
    const auto tr = filter_split(toy.manifest, Split::train);
    const auto f = extract_features(bands, tr, 192, 256).features;
    Eigen::MatrixXi mask = Eigen::MatrixXi::Ones(f.rows(), 5);
    mask.col(2).setZero();
    const auto model = train_head(f, label_matrix(tr), mask, Eigen::MatrixXd(0, 8), Eigen::MatrixXi(0, 5),
                                  toy.manifest.schema, toy_config(0, 20));
    CHECK(model.weights.row(2).cwiseAbs().maxCoeff() < 0.05);
    CHECK(model.bias[2] == 0.0);
    CHECK(model.weights.row(0).cwiseAbs().maxCoeff() > 0.1);
    CHECK(model.metadata.at("monitor") == "train_ma");
}

TEST_CASE("model artifact round trip") {
    fixtures::TempDir dir("toy_model");
    const auto toy = make_toy_dataset(dir.path() / "data", 100, 7);
    BandEmbedder bands;
    const auto model = train(toy.manifest, toy_config(0, 5), bands);
    save_model(model, dir.path() / "head.bin");
    const auto loaded = load_model(dir.path() / "head.bin");
    CHECK(loaded.weights == model.weights);
    CHECK(loaded.bias == model.bias);
    CHECK(loaded.feature_mean == model.feature_mean);
    CHECK(loaded.feature_scale == model.feature_scale);
    CHECK(loaded.schema == model.schema);
    CHECK(loaded.metadata == model.metadata);
    CHECK(loaded.history.size() == model.history.size());
    save_model(loaded, dir.path() / "again.bin");
    CHECK(read_file(dir.path() / "head.bin") == read_file(dir.path() / "again.bin"));
    // Block size: 4 bytes per value after the header.
    const auto bytes = read_file(dir.path() / "head.bin");
    std::string truncated = bytes.substr(0, bytes.size() - 4);
    write_file(dir.path() / "bad.bin", truncated);
    CHECK_THROWS_AS(load_model(dir.path() / "bad.bin"), ParseError);
    write_file(dir.path() / "bad.bin", "not a model");
    CHECK_THROWS_AS(load_model(dir.path() / "bad.bin"), ParseError);
}

TEST_CASE("compare_reports") {
    const auto make = [](std::vector<std::pair<std::string, double>> rows, std::vector<std::string> skipped) {
        MAReport r;
        double s = 0;
        for (auto &[a, v] : rows) {
            AttributeAccuracy x;
            x.attribute = a;
            x.ma = v;
            r.per_attribute.push_back(x);
            s += v;
        }
        r.mean_ma = rows.empty() ? 0 : s / double(rows.size());
        r.skipped = std::move(skipped);
        return r;
    };
    const auto a = make({{"hat", 70}, {"bag", 80}, {"male", 90}}, {});
    const auto same = compare_reports(a, a);
    for (const auto &r : same.rows) CHECK(r.delta == 0);
    CHECK(same.mean_delta == 0);

    const auto b = make({{"hat", 80}, {"bag", 80}, {"male", 90}}, {});
    const auto t = compare_reports(a, b);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].attribute == "hat");
    CHECK(t.rows[0].delta == 10);
    CHECK(t.rows[1].delta == 0);
    CHECK(t.rows[2].delta == 0);
    CHECK(t.mean_delta == doctest::Approx(b.mean_ma - a.mean_ma));

    // Mean delta over shared scored attributes equals the difference of means.
    const auto c = make({{"hat", 60}, {"male", 95}}, {"bag"});
    const auto u = compare_reports(a, c);
    CHECK(u.rows.size() == 2);
    CHECK(u.excluded == std::vector<std::string>{"bag"});
    CHECK(u.mean_delta == doctest::Approx(u.mean_b - u.mean_a));
    CHECK(u.mean_a == doctest::Approx(80));
    CHECK(u.rows.front().attribute == "male");

    CHECK_THROWS_AS(compare_reports(a, make({{"hat", 1}}, {})), InvalidArgument);
}

TEST_CASE("expanded toy training keeps up with the baseline") {
    // Mock generation at HiSt_HiSc shrinks band levels toward mid-grey and
    // adds noise; labels come from the prompt.
    double base_sum = 0, expanded_sum = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        fixtures::TempDir dir("toy_expand");
        const auto toy = make_toy_dataset(dir.path() / "data", 200, 100 + seed);
        BandEmbedder bands;
        MockBackend mock;
        ExpansionPlan plan;
        plan.source = toy.manifest;
        plan.grammar = std::nullopt;
        plan.seed = seed;
        plan.output_dir = dir.path() / "expanded";
        const auto ex = expand_dataset(plan, mock);
        REQUIRE(ex.failures.empty());
        CHECK(ex.merged.count(Split::train) == 240);
        for (const auto &s : ex.merged.samples)
            if (s.source == Source::synthetic) {
                const auto &src = *std::find_if(toy.manifest.samples.begin(), toy.manifest.samples.end(),
                                                [&](const PedestrianSample &x) { return x.sample_id == s.source_sample_id; });
                CHECK(s.attributes == src.attributes);
            }

        const auto cfg = toy_config(seed);
        const double base = evaluate(train(toy.manifest, cfg, bands), toy.manifest, Split::test, bands, cfg).mean_ma;
        const double expanded = evaluate(train(ex.merged, cfg, bands), ex.merged, Split::test, bands, cfg).mean_ma;
        MESSAGE("seed " << seed << ": baseline " << base << ", expanded " << expanded);
        base_sum += base;
        expanded_sum += expanded;
    }
    CHECK(expanded_sum / 5 >= base_sum / 5 - 0.5);
}
