#include "pedsynth/metrics.hpp"

#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/json_io.hpp"
#include "pedsynth/kernels.hpp"
#include "pedsynth/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <unordered_map>

namespace pedsynth {

Eigen::MatrixXd Embedder::embed_batch(const std::vector<Image> &images) const {
    const auto n = static_cast<Eigen::Index>(images.size());
    Eigen::MatrixXd out(n, dim());
    std::string failure;
#pragma omp parallel for schedule(dynamic, 4)
    for (Eigen::Index i = 0; i < n; ++i) {
        try {
            out.row(i) = embed(images[static_cast<std::size_t>(i)]).transpose();
        } catch (const std::exception &e) {
#pragma omp critical(pedsynth_embed_error)
            if (failure.empty()) failure = "image " + std::to_string(i) + ": " + e.what();
        }
    }
    if (!failure.empty()) throw BackendError("embedder " + id() + ": " + failure);
    return out;
}

namespace {

double luminance(const Image &img, std::size_t i) {
    return 0.299 * img.pixels[i] + 0.587 * img.pixels[i + 1] + 0.114 * img.pixels[i + 2];
}

} // namespace

Eigen::VectorXd MockEmbedder::embed(const Image &img) const {
    if (img.empty()) throw InvalidArgument("mock embedder: empty image");
    Eigen::VectorXd f = Eigen::VectorXd::Zero(16);
    const double n = double(img.width) * img.height;
    double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
        for (int c = 0; c < 3; ++c) {
            const double v = img.pixels[i + c];
            sum[c] += v;
            sq[c] += v * v;
        }
        const int bin = std::min(9, static_cast<int>(luminance(img, i) / 25.6));
        f[6 + bin] += 1;
    }
    for (int c = 0; c < 3; ++c) {
        const double mean = sum[c] / n;
        f[c] = mean;
        f[3 + c] = std::sqrt(std::max(0.0, sq[c] / n - mean * mean));
    }
    f.tail(10) *= 100.0 / n;
    return f;
}

BandEmbedder::BandEmbedder(int bands) : bands_(bands) {
    if (bands < 1) throw InvalidArgument("band embedder: bands must be >= 1");
}

Eigen::VectorXd BandEmbedder::embed(const Image &img) const {
    if (img.height < bands_ || img.width < 1)
        throw InvalidArgument("band embedder: image shorter than " + std::to_string(bands_) + " rows");
    Eigen::VectorXd f = Eigen::VectorXd::Zero(bands_);
    for (int b = 0; b < bands_; ++b) {
        const int y0 = b * img.height / bands_, y1 = (b + 1) * img.height / bands_;
        double s = 0;
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < img.width; ++x) s += luminance(img, img.index(x, y, 0));
        f[b] = s / (double(y1 - y0) * img.width);
    }
    return f;
}

CommandEmbedder::CommandEmbedder(std::string id, std::string command, int dim)
    : id_(std::move(id)), command_(std::move(command)), dim_(dim) {
    if (dim < 1) throw InvalidArgument("command embedder: dim must be >= 1");
}

Eigen::VectorXd CommandEmbedder::embed(const Image &image) const { return embed_batch({image}).row(0).transpose(); }

Eigen::MatrixXd CommandEmbedder::embed_batch(const std::vector<Image> &images) const {
    static std::uint64_t counter = 0;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("pedsynth_embed_" + std::to_string(fnv1a64(id_) & 0xFFFFFF) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(dir);
    json paths = json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto p = dir / ("img" + std::to_string(i) + ".png");
        write_png(images[i], p);
        paths.push_back(p.string());
    }
    const json req{{"mode", "embed"}, {"images", paths}, {"output", (dir / "features.json").string()}};
    write_file(dir / "request.json", req.dump());
    const std::string cmd = command_ + " '" + (dir / "request.json").string() + "'";
    if (const int rc = std::system(cmd.c_str()); rc != 0)
        throw BackendError("embedder " + id_ + ": command exited with status " + std::to_string(rc));
    const json reply = json::parse(read_file(dir / "features.json"));
    std::filesystem::remove_all(dir);
    const auto &rows = reply.at("features");
    if (rows.size() != images.size()) throw BackendError("embedder " + id_ + ": wrong number of feature rows");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), dim_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != static_cast<std::size_t>(dim_))
            throw BackendError("embedder " + id_ + ": expected " + std::to_string(dim_) + " features per image");
        for (int j = 0; j < dim_; ++j) out(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)].get<double>();
    }
    return out;
}

std::unique_ptr<Embedder> make_embedder(std::string_view id) {
    if (id == "mock") return std::make_unique<MockEmbedder>();
    if (id == "band") return std::make_unique<BandEmbedder>();
    if (id == "inception-pool3") {
        const char *env = std::getenv("PEDSYNTH_INCEPTION_COMMAND");
        return std::make_unique<CommandEmbedder>(std::string(id), env ? env : "python3 tools/inception_features.py", 2048);
    }
    if (id.starts_with("command:")) {
        const auto rest = id.substr(8);
        const auto colon = rest.find(':');
        if (colon == std::string_view::npos) throw InvalidArgument("command embedder id must be command:<dim>:<cmd>");
        const int dim = std::atoi(std::string(rest.substr(0, colon)).c_str());
        return std::make_unique<CommandEmbedder>("command", std::string(rest.substr(colon + 1)), dim);
    }
    throw InvalidArgument("unknown embedder '" + std::string(id) + "'");
}

FeatureSet embed_images(const Embedder &embedder, const std::vector<Image> &images) {
    if (images.empty()) throw InvalidArgument("embed_images: no images");
    FeatureSet fs{embedder.embed_batch(images), embedder.id()};
    if (!fs.features.allFinite()) throw BackendError("embedder " + embedder.id() + " produced non-finite features");
    return fs;
}

FeatureSet embed_manifest(const Embedder &embedder, const DatasetManifest &manifest, const ImageLoader &loader) {
    std::vector<Image> images(manifest.samples.size());
    std::string failure;
#pragma omp parallel for schedule(dynamic, 4)
    for (std::size_t i = 0; i < images.size(); ++i) {
        try {
            images[i] = loader(manifest, manifest.samples[i]);
        } catch (const std::exception &e) {
#pragma omp critical(pedsynth_embed_error)
            if (failure.empty()) failure = manifest.samples[i].sample_id + ": " + e.what();
        }
    }
    if (!failure.empty()) throw IoError("cannot read image " + failure);
    return embed_images(embedder, images);
}

// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd &m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw BackendError("fid: eigendecomposition failed");
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

FIDResult compute_fid(const FeatureSet &a, const FeatureSet &b, double epsilon) {
    if (a.embedder_id != b.embedder_id)
        throw InvalidArgument("fid: embedder mismatch (" + a.embedder_id + " vs " + b.embedder_id + ")");
    if (a.d() != b.d()) throw InvalidArgument("fid: feature dimension mismatch");
    if (a.n() < 2 || b.n() < 2) throw InvalidArgument("fid: each feature set needs at least 2 rows");
    if (!(epsilon >= 0)) throw InvalidArgument("fid: epsilon must be >= 0");

    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    kernels::parallel::mean_covariance(a.features, mu_a, cov_a);
    kernels::parallel::mean_covariance(b.features, mu_b, cov_b);
    const auto eye = Eigen::MatrixXd::Identity(a.d(), a.d());
    cov_a += epsilon * eye;
    cov_b += epsilon * eye;

    // Tr((Σa Σb)^½) = Tr((A Σb A)^½) with A = Σa^½; the latter is symmetric.
    const Eigen::MatrixXd root_a = symmetric_sqrt(cov_a);
    Eigen::MatrixXd inner = root_a * cov_b * root_a;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw BackendError("fid: eigendecomposition failed");
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    if (!std::isfinite(value)) throw BackendError("fid: non-finite result");
    return FIDResult{std::max(0.0, value), a.n(), b.n(), a.embedder_id, epsilon};
}

FIDResult reference_subset_fid(const FeatureSet &features, std::size_t n, std::uint64_t seed, double epsilon) {
    const auto total = static_cast<std::size_t>(features.n());
    if (n < 2 || n > total)
        throw InvalidArgument("reference subset: need 2 <= n <= " + std::to_string(total) + ", got " + std::to_string(n));
    std::vector<Eigen::Index> order(total);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(splitmix64(seed));
    for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(total - i)]);
    FeatureSet sub{Eigen::MatrixXd(static_cast<Eigen::Index>(n), features.d()), features.embedder_id};
    for (std::size_t i = 0; i < n; ++i) sub.features.row(static_cast<Eigen::Index>(i)) = features.features.row(order[i]);
    return compute_fid(sub, features, epsilon);
}

FIDResult reference_subset_fid(const DatasetManifest &manifest, const Embedder &embedder, std::size_t n,
                               std::uint64_t seed, const ImageLoader &loader) {
    if (n < 2 || n > manifest.samples.size())
        throw InvalidArgument("reference subset: need 2 <= n <= " + std::to_string(manifest.samples.size()) +
                              ", got " + std::to_string(n));
    const FeatureSet all = embed_manifest(embedder, manifest, loader);
    std::unordered_map<std::string, Eigen::Index> row;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i)
        row[manifest.samples[i].sample_id] = static_cast<Eigen::Index>(i);
    const auto subset = random_subset(manifest, n, seed);
    FeatureSet sub{Eigen::MatrixXd(static_cast<Eigen::Index>(n), all.d()), all.embedder_id};
    for (std::size_t i = 0; i < n; ++i)
        sub.features.row(static_cast<Eigen::Index>(i)) = all.features.row(row.at(subset.samples[i].sample_id));
    return compute_fid(sub, all);
}

// ---------------------------------------------------------------------------

const AttributeAccuracy *MAReport::find(std::string_view attribute) const {
    for (const auto &a : per_attribute)
        if (a.attribute == attribute) return &a;
    return nullptr;
}

MAReport compute_ma(const Eigen::MatrixXd &scores, const Eigen::MatrixXi &labels, double threshold,
                    const std::vector<std::string> &attributes) {
    if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
        throw InvalidArgument("compute_ma: scores are " + std::to_string(scores.rows()) + "x" +
                              std::to_string(scores.cols()) + " but labels are " + std::to_string(labels.rows()) + "x" +
                              std::to_string(labels.cols()));
    if (!attributes.empty() && attributes.size() != static_cast<std::size_t>(labels.cols()))
        throw InvalidArgument("compute_ma: " + std::to_string(attributes.size()) + " attribute names for " +
                              std::to_string(labels.cols()) + " columns");
    if ((labels.array() != 0 && labels.array() != 1).any()) throw InvalidArgument("compute_ma: labels must be 0/1");

    const auto counts = kernels::parallel::confusion_counts(scores, labels, threshold);
    MAReport r;
    r.threshold = threshold;
    double sum = 0;
    for (std::size_t j = 0; j < counts.size(); ++j) {
        const std::string name = attributes.empty() ? "attr" + std::to_string(j) : attributes[j];
        const auto &c = counts[j];
        const auto pos = c.tp + c.fn, neg = c.tn + c.fp;
        if (pos == 0 || neg == 0) {
            r.skipped.push_back(name);
            continue;
        }
        AttributeAccuracy a{name, c.tp, c.fn, c.tn, c.fp, double(c.tp) / double(pos), double(c.tn) / double(neg), 0};
        a.ma = 100.0 * (a.tpr + a.tnr) / 2.0;
        sum += a.ma;
        r.per_attribute.push_back(a);
    }
    if (!r.per_attribute.empty()) r.mean_ma = sum / static_cast<double>(r.per_attribute.size());
    return r;
}

std::string ma_report_to_json(const MAReport &r) {
    json j;
    j["mean_ma"] = r.mean_ma;
    j["threshold"] = r.threshold;
    json attrs = json::array();
    for (const auto &a : r.per_attribute)
        attrs.push_back({{"attribute", a.attribute},
                         {"tp", a.tp},
                         {"fn", a.fn},
                         {"tn", a.tn},
                         {"fp", a.fp},
                         {"tpr", a.tpr},
                         {"tnr", a.tnr},
                         {"ma", a.ma}});
    j["per_attribute"] = std::move(attrs);
    j["skipped"] = r.skipped;
    return j.dump(2) + "\n";
}

MAReport ma_report_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        MAReport r;
        r.mean_ma = j.at("mean_ma").get<double>();
        r.threshold = j.at("threshold").get<double>();
        for (const auto &a : j.at("per_attribute"))
            r.per_attribute.push_back({a.at("attribute").get<std::string>(), a.at("tp").get<std::int64_t>(),
                                       a.at("fn").get<std::int64_t>(), a.at("tn").get<std::int64_t>(),
                                       a.at("fp").get<std::int64_t>(), a.at("tpr").get<double>(),
                                       a.at("tnr").get<double>(), a.at("ma").get<double>()});
        r.skipped = j.at("skipped").get<std::vector<std::string>>();
        return r;
    } catch (const json::exception &e) {
        throw ParseError(std::string("mA report: ") + e.what(), 0);
    }
}

void save_ma_report(const MAReport &report, const std::filesystem::path &path) {
    write_file(path, ma_report_to_json(report));
}

MAReport load_ma_report(const std::filesystem::path &path) { return ma_report_from_json(read_file(path)); }

Eigen::MatrixXi label_matrix(const DatasetManifest &manifest) {
    const auto m = static_cast<Eigen::Index>(manifest.schema.size());
    Eigen::MatrixXi out(static_cast<Eigen::Index>(manifest.samples.size()), m);
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        const auto v = manifest.samples[i].attributes.values();
        if (static_cast<Eigen::Index>(v.size()) != m) throw InvalidArgument("label_matrix: vector length mismatch");
        for (Eigen::Index j = 0; j < m; ++j) out(static_cast<Eigen::Index>(i), j) = v[static_cast<std::size_t>(j)];
    }
    return out;
}

} // namespace pedsynth
