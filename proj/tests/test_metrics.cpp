#include "fixtures.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/metrics.hpp"
#include "pedsynth/schemas.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <complex>
#include <random>

using namespace pedsynth;

namespace {

// Rows drawn from N(mean, diag(var)) with an RNG unrelated to the library's.
FeatureSet gaussian_set(const Eigen::VectorXd &mean, const Eigen::VectorXd &var, int n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> z;
    FeatureSet fs{Eigen::MatrixXd(n, mean.size()), "test"};
    for (int i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < mean.size(); ++j) fs.features(i, j) = mean[j] + std::sqrt(var[j]) * z(gen);
    return fs;
}

// Independent evaluation: plain two-pass covariance and the eigenvalues of
// the (non-symmetric) product from a general eigensolver.
double fid_oracle(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b, double eps) {
    auto stats = [&](const Eigen::MatrixXd &x, Eigen::VectorXd &mu, Eigen::MatrixXd &cov) {
        mu = x.colwise().mean().transpose();
        const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
        cov = (c.transpose() * c) / double(x.rows() - 1);
        cov += eps * Eigen::MatrixXd::Identity(x.cols(), x.cols());
    };
    Eigen::VectorXd ma, mb;
    Eigen::MatrixXd ca, cb;
    stats(a, ma, ca);
    stats(b, mb, cb);
    Eigen::EigenSolver<Eigen::MatrixXd> es(ca * cb);
    double tr = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr += std::sqrt(es.eigenvalues()[i]).real();
    return (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2 * tr;
}

Eigen::MatrixXd random_orthogonal(int d, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> z;
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = z(gen);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    return qr.householderQ();
}

} // namespace

TEST_CASE("fid: mean shift with identity covariance") {
    const int d = 8;
    Eigen::VectorXd mu(d);
    mu << 1.0, -0.5, 2.0, 0.0, 0.75, -1.25, 0.5, 1.5;
    const auto a = gaussian_set(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d), 10000, 1);
    const auto b = gaussian_set(mu, Eigen::VectorXd::Ones(d), 10000, 2);
    const double expected = mu.squaredNorm();
    const auto r = compute_fid(a, b);
    CHECK(std::abs(r.value - expected) / expected < 0.05);
    CHECK(r.n_a == 10000);
    CHECK(r.epsilon_used == 1e-6);
}

TEST_CASE("fid: diagonal covariance closed form") {
    const int d = 8;
    for (std::uint64_t s = 0; s < 3; ++s) {
        std::mt19937_64 gen(100 + s);
        std::uniform_real_distribution<double> u(0.2, 4.0);
        Eigen::VectorXd va(d), vb(d), ma(d), mb(d);
        for (int j = 0; j < d; ++j) {
            va[j] = u(gen);
            vb[j] = u(gen);
            ma[j] = u(gen) - 2;
            mb[j] = u(gen) - 2;
        }
        double expected = (ma - mb).squaredNorm();
        for (int j = 0; j < d; ++j) expected += va[j] + vb[j] - 2 * std::sqrt(va[j] * vb[j]);
        const auto a = gaussian_set(ma, va, 10000, 10 + s);
        const auto b = gaussian_set(mb, vb, 10000, 20 + s);
        CHECK(std::abs(compute_fid(a, b).value - expected) / expected < 0.05);
    }
}

TEST_CASE("fid: identity, symmetry, rotation invariance, oracle agreement") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        std::mt19937_64 gen(s);
        const int d = 2 + int(s % 7);
        const int n = 20 + int(s * 13);
        Eigen::MatrixXd mix = Eigen::MatrixXd::Random(d, d);
        FeatureSet a{gaussian_set(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d), n, 1000 + s).features * mix, "t"};
        FeatureSet b{gaussian_set(Eigen::VectorXd::Constant(d, 0.3), Eigen::VectorXd::Constant(d, 2.0), n + 7, 2000 + s)
                         .features,
                     "t"};
        CHECK(compute_fid(a, a).value <= 1e-6);
        const double ab = compute_fid(a, b).value;
        const double ba = compute_fid(b, a).value;
        CHECK(ab >= 0);
        CHECK(std::abs(ab - ba) <= 1e-6 * std::max(1.0, ab));
        CHECK(ab == doctest::Approx(fid_oracle(a.features, b.features, 1e-6)).epsilon(1e-6));

        const Eigen::MatrixXd q = random_orthogonal(d, 3000 + s);
        const FeatureSet ra{a.features * q, "t"}, rb{b.features * q, "t"};
        CHECK(std::abs(compute_fid(ra, rb).value - ab) <= 1e-4 * std::max(1.0, ab));
    }
}

TEST_CASE("fid: rank-deficient covariances stay finite") {
    // n = 10 < d = 32, as with small image sets and wide embeddings.
    const auto a = gaussian_set(Eigen::VectorXd::Zero(32), Eigen::VectorXd::Ones(32), 10, 5);
    const auto b = gaussian_set(Eigen::VectorXd::Zero(32), Eigen::VectorXd::Ones(32), 10, 6);
    const auto r = compute_fid(a, b);
    CHECK(std::isfinite(r.value));
    CHECK(r.value > 0);
    CHECK(compute_fid(a, a).value <= 1e-6);
}

TEST_CASE("fid: argument checks") {
    const auto a = gaussian_set(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4), 10, 1);
    auto other = a;
    other.embedder_id = "different";
    CHECK_THROWS_AS(compute_fid(a, other), InvalidArgument);
    const auto wide = gaussian_set(Eigen::VectorXd::Zero(5), Eigen::VectorXd::Ones(5), 10, 1);
    CHECK_THROWS_AS(compute_fid(a, wide), InvalidArgument);
    const FeatureSet one{a.features.topRows(1), "test"};
    CHECK_THROWS_AS(compute_fid(one, a), InvalidArgument);
}

TEST_CASE("reference subset fid") {
    const auto fs = gaussian_set(Eigen::VectorXd::Zero(6), Eigen::VectorXd::Ones(6), 300, 9);
    CHECK(reference_subset_fid(fs, 300, 1).value <= 1e-6);
    const double v1 = reference_subset_fid(fs, 100, 1).value;
    const double v2 = reference_subset_fid(fs, 100, 2).value;
    CHECK(v1 >= 0);
    CHECK(v2 >= 0);
    CHECK(v1 != v2);
    CHECK(reference_subset_fid(fs, 100, 1).value == v1);
    CHECK_THROWS_AS(reference_subset_fid(fs, 301, 1), InvalidArgument);

    auto m = fixtures::random_manifest(rapzs_schema(), 40, 3);
    const ImageLoader loader = [](const DatasetManifest &, const PedestrianSample &s) {
        return procedural_image(16, 32, fnv1a64(s.sample_id));
    };
    MockEmbedder emb;
    CHECK(reference_subset_fid(m, emb, 40, 0, loader).value <= 1e-6);
    CHECK(reference_subset_fid(m, emb, 20, 0, loader).value > 0);
    CHECK_THROWS_AS(reference_subset_fid(m, emb, 41, 0, loader), InvalidArgument);
}

TEST_CASE("mock embedders") {
    MockEmbedder emb;
    const Image flat(8, 8, 90);
    const auto f = emb.embed(flat);
    REQUIRE(f.size() == 16);
    CHECK(f[0] == 90);
    CHECK(f[1] == 90);
    CHECK(f[2] == 90);
    CHECK(f[3] == 0);
    CHECK(f.tail(10).sum() == doctest::Approx(100));
    CHECK(f[6 + 3] == doctest::Approx(100)); // luminance 90 falls in [76.8, 102.4)

    const Image x = procedural_image(32, 64, 4);
    const auto fs = embed_images(emb, {x, x, flat});
    CHECK(fs.n() == 3);
    CHECK(fs.d() == 16);
    CHECK(fs.features.row(0) == fs.features.row(1));
    CHECK(fs.embedder_id == emb.id());
    CHECK_THROWS_AS(embed_images(emb, {}), InvalidArgument);

    BandEmbedder bands;
    Image split(4, 16, 0);
    for (int y = 8; y < 16; ++y)
        for (int xx = 0; xx < 4; ++xx)
            for (int c = 0; c < 3; ++c) split.at(xx, y, c) = 200;
    const auto b = bands.embed(split);
    REQUIRE(b.size() == 8);
    for (int i = 0; i < 4; ++i) CHECK(b[i] == doctest::Approx(0));
    for (int i = 4; i < 8; ++i) CHECK(b[i] == doctest::Approx(200));
    CHECK_THROWS_AS((void)bands.embed(Image(4, 4, 0)), InvalidArgument);

    CHECK(make_embedder("mock")->dim() == 16);
    CHECK(make_embedder("inception-pool3")->dim() == 2048);
    CHECK(make_embedder("command:3:true")->dim() == 3);
    CHECK_THROWS_AS(make_embedder("clip"), InvalidArgument);
}

// ---------------------------------------------------------------------------

namespace {

struct Instance {
    Eigen::MatrixXd scores;
    Eigen::MatrixXi labels;
};

Instance random_instance(std::uint64_t seed, int n, int m, double positive_rate) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Instance in{Eigen::MatrixXd(n, m), Eigen::MatrixXi(n, m)};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            in.labels(i, j) = u(gen) < positive_rate ? 1 : 0;
            in.scores(i, j) = u(gen);
        }
    return in;
}

} // namespace

TEST_CASE("mA equals brute-force confusion counts") {
    std::mt19937_64 gen(77);
    for (int t = 0; t < 100; ++t) {
        const int n = 1 + int(gen() % 1000);
        const int m = 1 + int(gen() % 51);
        const double rate = 0.02 + 0.96 * double(gen() % 1000) / 1000.0;
        const auto in = random_instance(gen(), n, m, rate);
        const auto r = compute_ma(in.scores, in.labels, 0.5);

        double sum = 0;
        int scored = 0;
        std::vector<std::string> skipped;
        std::size_t k = 0;
        for (int j = 0; j < m; ++j) {
            std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
            for (int i = 0; i < n; ++i) {
                const bool pred = in.scores(i, j) >= 0.5;
                if (in.labels(i, j) == 1) (pred ? tp : fn)++;
                else (pred ? fp : tn)++;
            }
            const std::string name = "attr" + std::to_string(j);
            if (tp + fn == 0 || tn + fp == 0) {
                skipped.push_back(name);
                continue;
            }
            const double tpr = double(tp) / double(tp + fn), tnr = double(tn) / double(tn + fp);
            const double ma = 100.0 * (tpr + tnr) / 2.0;
            REQUIRE(k < r.per_attribute.size());
            const auto &a = r.per_attribute[k++];
            CHECK(a.attribute == name);
            CHECK(a.tp == tp);
            CHECK(a.fn == fn);
            CHECK(a.tn == tn);
            CHECK(a.fp == fp);
            CHECK(a.tpr == tpr);
            CHECK(a.tnr == tnr);
            CHECK(a.ma == ma);
            sum += ma;
            ++scored;
        }
        CHECK(k == r.per_attribute.size());
        CHECK(r.skipped == skipped);
        CHECK(r.mean_ma == (scored ? sum / scored : 0.0));
    }
}

TEST_CASE("mA special cases") {
    const auto in = random_instance(5, 200, 10, 0.5);
    const Eigen::MatrixXd perfect = in.labels.cast<double>();
    CHECK(compute_ma(perfect, in.labels).mean_ma == 100.0);

    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto chance = random_instance(1000 + s, 1000, 26, 0.5);
        const double v = compute_ma(chance.scores, chance.labels).mean_ma;
        CHECK(v > 45);
        CHECK(v < 55);
    }

    // One attribute: 4 positives with 2 detected, 4 negatives all rejected.
    Eigen::MatrixXi labels(8, 1);
    labels << 1, 1, 1, 1, 0, 0, 0, 0;
    Eigen::MatrixXd scores(8, 1);
    scores << 0.9, 0.6, 0.1, 0.4, 0.0, 0.2, 0.3, 0.49;
    const auto r = compute_ma(scores, labels, 0.5, {"Hat"});
    REQUIRE(r.per_attribute.size() == 1);
    CHECK(r.per_attribute[0].tpr == 0.5);
    CHECK(r.per_attribute[0].tnr == 1.0);
    CHECK(r.per_attribute[0].ma == 75.0);
    CHECK(r.find("Hat") != nullptr);
    CHECK(r.find("Cap") == nullptr);

    // Zero-support column is skipped and excluded from the mean.
    Eigen::MatrixXi l2(4, 2);
    l2 << 1, 0, 0, 0, 1, 0, 0, 0;
    Eigen::MatrixXd s2(4, 2);
    s2 << 1, 1, 0, 1, 1, 1, 0, 1;
    const auto r2 = compute_ma(s2, l2, 0.5, {"a", "b"});
    CHECK(r2.skipped == std::vector<std::string>{"b"});
    CHECK(r2.mean_ma == 100.0);

    CHECK_THROWS_AS(compute_ma(s2, labels), InvalidArgument);
    CHECK_THROWS_AS(compute_ma(s2, l2, 0.5, {"a"}), InvalidArgument);
    Eigen::MatrixXi bad = l2;
    bad(0, 0) = 2;
    CHECK_THROWS_AS(compute_ma(s2, bad), InvalidArgument);
}

TEST_CASE("mA report serialization") {
    const auto in = random_instance(9, 100, 12, 0.3);
    const auto r = compute_ma(in.scores, in.labels, 0.4);
    CHECK(ma_report_from_json(ma_report_to_json(r)) == r);
    fixtures::TempDir dir("ma");
    save_ma_report(r, dir.path() / "r.json");
    CHECK(load_ma_report(dir.path() / "r.json") == r);
    CHECK_THROWS_AS(ma_report_from_json("{}"), ParseError);
}

TEST_CASE("label matrix") {
    const auto m = fixtures::random_manifest(pa100k_schema(), 15, 2);
    const auto l = label_matrix(m);
    CHECK(l.rows() == 15);
    CHECK(l.cols() == 26);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 26; ++j) CHECK(l(i, j) == (m.samples[i].attributes.test(j) ? 1 : 0));
}
