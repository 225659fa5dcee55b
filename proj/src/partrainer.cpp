#include "pedsynth/partrainer.hpp"

#include "pedsynth/conditioning.hpp"
#include "pedsynth/error.hpp"
#include "pedsynth/fileio.hpp"
#include "pedsynth/format.hpp"
#include "pedsynth/json_io.hpp"
#include "pedsynth/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

namespace pedsynth {

void TrainConfig::validate() const {
    if (!(lr_new > 0) || !(lr_fr > 0)) throw InvalidArgument("train config: learning rates must be > 0");
    if (input_height < 1 || input_width < 1) throw InvalidArgument("train config: input size must be positive");
    if (epochs < 1) throw InvalidArgument("train config: epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("train config: batch_size must be >= 1");
    if (!(momentum >= 0 && momentum < 1)) throw InvalidArgument("train config: momentum must be in [0, 1)");
    if (!(weight_decay >= 0)) throw InvalidArgument("train config: weight_decay must be >= 0");
    if (!(warmup_coef > 0 && warmup_coef <= 1)) throw InvalidArgument("train config: warmup_coef must be in (0, 1]");
    if (warmup_epochs < 0) throw InvalidArgument("train config: warmup_epochs must be >= 0");
    if (!(plateau_factor > 0 && plateau_factor <= 1)) throw InvalidArgument("train config: plateau_factor must be in (0, 1]");
    if (plateau_patience < 0 || early_stop_patience < 1) throw InvalidArgument("train config: bad patience");
    if (!freeze_backbone)
        throw InvalidArgument("train config: end-to-end fine-tuning needs a differentiable backbone; "
                              "feature-provider backbones only support freeze_backbone=true");
}

std::map<std::string, std::string> TrainConfig::snapshot() const {
    return {{"backbone_id", backbone_id},
            {"freeze_backbone", freeze_backbone ? "true" : "false"},
            {"optimizer", "sgd"},
            {"momentum", format_double(momentum)},
            {"weight_decay", format_double(weight_decay)},
            {"lr_fr", format_double(lr_fr)},
            {"lr_new", format_double(lr_new)},
            {"warmup_coef", format_double(warmup_coef)},
            {"warmup_epochs", std::to_string(warmup_epochs)},
            {"scheduler", "plateau"},
            {"plateau_factor", format_double(plateau_factor)},
            {"plateau_patience", std::to_string(plateau_patience)},
            {"early_stop_patience", std::to_string(early_stop_patience)},
            {"loss", "bce"},
            {"input_size", std::to_string(input_height) + "x" + std::to_string(input_width)},
            {"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"seed", std::to_string(seed)},
            {"threshold", format_double(threshold)}};
}

namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd &x) {
    return x.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

// Numerically stable BCE on logits, summed over known labels.
double bce_sum(const Eigen::MatrixXd &logits, const Eigen::MatrixXi &labels, const Eigen::MatrixXi &mask) {
    double s = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            if (!mask(i, j)) continue;
            const double z = logits(i, j);
            s += std::max(z, 0.0) - z * labels(i, j) + std::log1p(std::exp(-std::abs(z)));
        }
    return s;
}

Eigen::MatrixXd standardized(const Eigen::MatrixXd &f, const Eigen::VectorXd &mean, const Eigen::VectorXd &scale) {
    return (f.rowwise() - mean.transpose()).array().rowwise() * scale.transpose().array();
}

Eigen::MatrixXd to_float_precision(const Eigen::MatrixXd &m) { return m.cast<float>().cast<double>(); }

} // namespace

Eigen::MatrixXd TrainedModel::predict(const Eigen::MatrixXd &features) const {
    if (features.cols() != weights.cols())
        throw InvalidArgument("model expects " + std::to_string(weights.cols()) + " features, got " +
                              std::to_string(features.cols()));
    const Eigen::MatrixXd logits = (standardized(features, feature_mean, feature_scale) * weights.transpose()).rowwise() +
                                   bias.transpose();
    return sigmoid(logits);
}

FeatureSet extract_features(const Embedder &backbone, const DatasetManifest &manifest, int input_width,
                            int input_height, const ImageLoader &loader) {
    if (manifest.samples.empty()) throw InvalidArgument("extract_features: no samples");
    constexpr std::size_t chunk = 256;
    FeatureSet out{Eigen::MatrixXd(static_cast<Eigen::Index>(manifest.samples.size()), backbone.dim()), backbone.id()};
    for (std::size_t start = 0; start < manifest.samples.size(); start += chunk) {
        const std::size_t end = std::min(manifest.samples.size(), start + chunk);
        std::vector<Image> images(end - start);
        std::string failure;
#pragma omp parallel for schedule(dynamic, 4)
        for (std::size_t i = start; i < end; ++i) {
            try {
                images[i - start] = resize(loader(manifest, manifest.samples[i]), input_width, input_height);
            } catch (const std::exception &e) {
#pragma omp critical(pedsynth_extract_error)
                if (failure.empty()) failure = manifest.samples[i].sample_id + ": " + e.what();
            }
        }
        if (!failure.empty()) throw IoError("cannot load image " + failure);
        out.features.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
            backbone.embed_batch(images);
    }
    if (!out.features.allFinite()) throw BackendError("backbone " + backbone.id() + " produced non-finite features");
    return out;
}

TrainedModel train_head(const Eigen::MatrixXd &x, const Eigen::MatrixXi &y, const Eigen::MatrixXi &mask_in,
                        const Eigen::MatrixXd &val_x, const Eigen::MatrixXi &val_y, const AttributeSchema &schema,
                        const TrainConfig &config) {
    config.validate();
    const Eigen::Index n = x.rows(), d = x.cols(), m = y.cols();
    if (n == 0) throw InvalidArgument("train: empty train split");
    if (y.rows() != n) throw InvalidArgument("train: feature and label row counts differ");
    if (m != static_cast<Eigen::Index>(schema.size()))
        throw InvalidArgument("train: label width " + std::to_string(m) + " does not match schema size " +
                              std::to_string(schema.size()));
    const Eigen::MatrixXi mask = mask_in.size() ? mask_in : Eigen::MatrixXi::Ones(n, m);
    if (mask.rows() != n || mask.cols() != m) throw InvalidArgument("train: mask shape mismatch");
    const bool has_val = val_x.rows() > 0;

    TrainedModel model;
    model.backbone_id = config.backbone_id;
    model.schema = schema;
    model.feature_mean = x.colwise().mean().transpose();
    const Eigen::VectorXd var = (x.rowwise() - model.feature_mean.transpose()).array().square().colwise().mean();
    model.feature_scale = var.unaryExpr([](double v) { return v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0; });
    model.feature_mean = to_float_precision(model.feature_mean);
    model.feature_scale = to_float_precision(model.feature_scale);
    const Eigen::MatrixXd z = standardized(x, model.feature_mean, model.feature_scale);

    Rng rng(hash_combine(config.seed, 0x7EA1));
    Eigen::MatrixXd w(m, d);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < d; ++j) w(i, j) = 0.01 * rng.normal();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd vw = Eigen::MatrixXd::Zero(m, d);
    Eigen::VectorXd vb = Eigen::VectorXd::Zero(m);

    const Eigen::Index bs = std::min<Eigen::Index>(config.batch_size, n);
    const Eigen::Index batches = (n + bs - 1) / bs;
    const Eigen::Index warmup_steps = batches * config.warmup_epochs;
    const double known = std::max<double>(1.0, mask.cast<double>().sum());

    double plateau_scale = 1.0;
    double best = -1, plateau_best = -1;
    int bad_epochs = 0, since_best = 0, best_epoch = 0;
    Eigen::MatrixXd best_w = w;
    Eigen::VectorXd best_b = b;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Eigen::Index step = 0;
    double lr = config.lr_new;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        for (Eigen::Index bi = 0; bi < batches; ++bi, ++step) {
            const Eigen::Index lo = bi * bs, hi = std::min(n, lo + bs), rows = hi - lo;
            Eigen::MatrixXd zb(rows, d);
            Eigen::MatrixXd g(rows, m);
            for (Eigen::Index r = 0; r < rows; ++r) zb.row(r) = z.row(order[static_cast<std::size_t>(lo + r)]);
            const Eigen::MatrixXd p = sigmoid((zb * w.transpose()).rowwise() + b.transpose());
            for (Eigen::Index r = 0; r < rows; ++r) {
                const Eigen::Index src = order[static_cast<std::size_t>(lo + r)];
                for (Eigen::Index j = 0; j < m; ++j) g(r, j) = mask(src, j) ? (p(r, j) - y(src, j)) / double(rows) : 0.0;
            }
            const Eigen::MatrixXd gw = g.transpose() * zb + config.weight_decay * w;
            const Eigen::VectorXd gb = g.colwise().sum().transpose();

            lr = config.lr_new * plateau_scale;
            if (step < warmup_steps)
                lr *= config.warmup_coef + (1.0 - config.warmup_coef) * double(step) / double(warmup_steps);
            vw = config.momentum * vw + gw;
            vb = config.momentum * vb + gb;
            w -= lr * vw;
            b -= lr * vb;
        }

        const Eigen::MatrixXd logits = (z * w.transpose()).rowwise() + b.transpose();
        const double loss = bce_sum(logits, y, mask) / known;
        if (!std::isfinite(loss) || !w.allFinite())
            throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + " (lr " + format_double(lr) +
                        ", max |w| " + format_double(w.cwiseAbs().maxCoeff()) + ")");
        double monitor;
        if (has_val) {
            const Eigen::MatrixXd vz = standardized(val_x, model.feature_mean, model.feature_scale);
            monitor = compute_ma(sigmoid((vz * w.transpose()).rowwise() + b.transpose()), val_y, config.threshold).mean_ma;
        } else {
            monitor = compute_ma(sigmoid(logits), y, config.threshold).mean_ma;
        }
        model.history.push_back({epoch, lr, loss, monitor});

        if (monitor > best + 1e-12) {
            best = monitor;
            best_w = w;
            best_b = b;
            best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.early_stop_patience) {
            break;
        }
        if (monitor > plateau_best + 1e-12) {
            plateau_best = monitor;
            bad_epochs = 0;
        } else if (++bad_epochs > config.plateau_patience) {
            plateau_scale *= config.plateau_factor;
            bad_epochs = 0;
        }
    }

    model.weights = to_float_precision(best_w);
    model.bias = to_float_precision(best_b);
    model.metadata = config.snapshot();
    model.metadata["epochs_run"] = std::to_string(model.history.size());
    model.metadata["best_epoch"] = std::to_string(best_epoch);
    model.metadata["monitor"] = has_val ? "val_ma" : "train_ma";
    model.metadata["train_samples"] = std::to_string(n);
    return model;
}

namespace {

Eigen::MatrixXi mask_matrix(const DatasetManifest &m) {
    Eigen::MatrixXi out = Eigen::MatrixXi::Ones(static_cast<Eigen::Index>(m.samples.size()),
                                                static_cast<Eigen::Index>(m.schema.size()));
    for (std::size_t i = 0; i < m.samples.size(); ++i)
        if (const auto &mk = m.samples[i].label_mask) {
            if (mk->size() != m.schema.size())
                throw InvalidArgument("sample '" + m.samples[i].sample_id + "' label mask does not match schema");
            for (std::size_t j = 0; j < mk->size(); ++j)
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*mk)[j] ? 1 : 0;
        }
    return out;
}

} // namespace

TrainedModel train(const DatasetManifest &manifest, const TrainConfig &config, const Embedder &backbone,
                   const ImageLoader &loader) {
    config.validate();
    const DatasetManifest tr = filter_split(manifest, Split::train);
    if (tr.samples.empty()) throw InvalidArgument("train: manifest has no train split");
    const DatasetManifest val = filter_split(manifest, Split::val);
    const FeatureSet x = extract_features(backbone, tr, config.input_width, config.input_height, loader);
    Eigen::MatrixXd vx(0, backbone.dim());
    Eigen::MatrixXi vy(0, static_cast<Eigen::Index>(manifest.schema.size()));
    if (!val.samples.empty()) {
        vx = extract_features(backbone, val, config.input_width, config.input_height, loader).features;
        vy = label_matrix(val);
    }
    TrainedModel model = train_head(x.features, label_matrix(tr), mask_matrix(tr), vx, vy, manifest.schema, config);
    model.embedder_id = backbone.id();
    model.metadata["val_samples"] = std::to_string(val.samples.size());
    return model;
}

MAReport evaluate_features(const TrainedModel &model, const Eigen::MatrixXd &features, const Eigen::MatrixXi &labels,
                           double threshold) {
    return compute_ma(model.predict(features), labels, threshold, model.schema.attributes());
}

MAReport evaluate(const TrainedModel &model, const DatasetManifest &manifest, Split split, const Embedder &backbone,
                  const TrainConfig &config, const ImageLoader &loader) {
    if (model.schema.fingerprint() != manifest.schema.fingerprint())
        throw InvalidArgument("evaluate: model was trained for schema " + model.schema.dataset_id() + " (" +
                              model.schema.fingerprint() + "), manifest uses " + manifest.schema.dataset_id() + " (" +
                              manifest.schema.fingerprint() + ")");
    if (!model.embedder_id.empty() && model.embedder_id != backbone.id())
        throw InvalidArgument("evaluate: model expects features from " + model.embedder_id + ", got " + backbone.id());
    const DatasetManifest part = filter_split(manifest, split);
    if (part.samples.empty())
        throw InvalidArgument("evaluate: manifest has no samples in split '" + std::string(to_string(split)) + "'");
    const FeatureSet f = extract_features(backbone, part, config.input_width, config.input_height, loader);
    return evaluate_features(model, f.features, label_matrix(part), config.threshold);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'S', 'H', 'E', 'A', 'D', '0', '1'};

void put_u32(std::string &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string &in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

void put_floats(std::string &out, const double *data, Eigen::Index count) {
    for (Eigen::Index i = 0; i < count; ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(data[i])));
}

} // namespace

void save_model(const TrainedModel &model, const std::filesystem::path &path) {
    const Eigen::Index m = model.weights.rows(), d = model.weights.cols();
    json header;
    header["format"] = "pedsynth-linear-head";
    header["backbone_id"] = model.backbone_id;
    header["embedder_id"] = model.embedder_id;
    header["schema_fingerprint"] = model.schema.fingerprint();
    header["schema"] = schema_to_json(model.schema);
    header["m"] = m;
    header["d"] = d;
    header["layout"] = "weights[m][d] bias[m] feature_mean[d] feature_scale[d], float32 little-endian";
    json meta = json::object();
    for (const auto &[k, v] : model.metadata) meta[k] = v;
    header["metadata"] = std::move(meta);
    json hist = json::array();
    for (const auto &e : model.history)
        hist.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"monitor_ma", e.monitor_ma}});
    header["history"] = std::move(hist);

    const std::string text = header.dump();
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = model.weights;
    put_floats(out, w.data(), w.size());
    put_floats(out, model.bias.data(), m);
    put_floats(out, model.feature_mean.data(), d);
    put_floats(out, model.feature_scale.data(), d);
    write_file(path, out);
}

TrainedModel load_model(const std::filesystem::path &path) {
    const std::string in = read_file(path);
    if (in.size() < 12 || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0)
        throw ParseError("model " + path.string() + ": bad magic", 0, 0);
    const std::size_t hlen = get_u32(in, 8);
    if (in.size() < 12 + hlen) throw ParseError("model " + path.string() + ": truncated header", 0, 8);
    TrainedModel model;
    Eigen::Index m = 0, d = 0;
    try {
        const json h = json::parse(in.substr(12, hlen));
        model.backbone_id = h.at("backbone_id").get<std::string>();
        model.embedder_id = h.at("embedder_id").get<std::string>();
        model.schema = schema_from_json(h.at("schema"));
        if (model.schema.fingerprint() != h.at("schema_fingerprint").get<std::string>())
            throw ParseError("model " + path.string() + ": schema fingerprint mismatch", 0, 12);
        m = h.at("m").get<Eigen::Index>();
        d = h.at("d").get<Eigen::Index>();
        for (const auto &[k, v] : h.at("metadata").items()) model.metadata[k] = v.get<std::string>();
        for (const auto &e : h.at("history"))
            model.history.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(), e.at("train_loss").get<double>(),
                                     e.at("monitor_ma").get<double>()});
    } catch (const json::exception &e) {
        throw ParseError("model " + path.string() + ": " + e.what(), 0, 12);
    }
    if (m != static_cast<Eigen::Index>(model.schema.size())) throw ParseError("model: head size does not match schema", 0, 12);
    const std::size_t expected = 12 + hlen + 4 * static_cast<std::size_t>(m * d + m + 2 * d);
    if (in.size() != expected)
        throw ParseError("model " + path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(in.size()), 0, 12 + hlen);
    std::size_t pos = 12 + hlen;
    auto next = [&] {
        const float f = std::bit_cast<float>(get_u32(in, pos));
        pos += 4;
        return static_cast<double>(f);
    };
    model.weights.resize(m, d);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < d; ++j) model.weights(i, j) = next();
    model.bias.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) model.bias[i] = next();
    model.feature_mean.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) model.feature_mean[j] = next();
    model.feature_scale.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) model.feature_scale[j] = next();
    if (!model.weights.allFinite() || !model.bias.allFinite()) throw ParseError("model: non-finite weights", 0, 12 + hlen);
    return model;
}

// ---------------------------------------------------------------------------

ComparisonTable compare_reports(const MAReport &a, const MAReport &b) {
    auto names = [](const MAReport &r) {
        std::set<std::string> s(r.skipped.begin(), r.skipped.end());
        for (const auto &x : r.per_attribute) s.insert(x.attribute);
        return s;
    };
    if (names(a) != names(b)) throw InvalidArgument("compare_reports: reports cover different attribute sets");
    ComparisonTable t;
    for (const auto &x : a.per_attribute) {
        const auto *y = b.find(x.attribute);
        if (!y) {
            t.excluded.push_back(x.attribute);
            continue;
        }
        t.rows.push_back({x.attribute, x.ma, y->ma, y->ma - x.ma});
    }
    for (const auto &s : a.skipped) t.excluded.push_back(s);
    std::sort(t.excluded.begin(), t.excluded.end());
    std::sort(t.rows.begin(), t.rows.end(), [](const ComparisonRow &l, const ComparisonRow &r) {
        return l.delta != r.delta ? l.delta > r.delta : l.attribute < r.attribute;
    });
    if (!t.rows.empty()) {
        for (const auto &r : t.rows) {
            t.mean_a += r.ma_a;
            t.mean_b += r.ma_b;
            t.mean_delta += r.delta;
        }
        const double k = static_cast<double>(t.rows.size());
        t.mean_a /= k;
        t.mean_b /= k;
        t.mean_delta /= k;
    }
    return t;
}

// ---------------------------------------------------------------------------

AttributeSchema toy_schema() {
    static const AttributeSchema schema(
        "toy", {{"marks", {"mark-a", "mark-b", "mark-c", "mark-d", "mark-e"}, false}},
        {{"mark-a", "amber"}, {"mark-b", "blue"}, {"mark-c", "coral"}, {"mark-d", "dune"}, {"mark-e", "ember"}},
        "Synthetic 16x64 images of 8 grey bands; each attribute is a linear function of the band levels.");
    return schema;
}

ToyDataset make_toy_dataset(const std::filesystem::path &root, std::size_t n, std::uint64_t seed, double margin) {
    constexpr int bands = 8, m = 5, width = 16, band_rows = 8;
    if (n < 5) throw InvalidArgument("toy dataset: need at least 5 samples");
    Rng rng(hash_combine(seed, 0x70E));
    ToyDataset toy;
    toy.generator.resize(m, bands);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < bands; ++j) toy.generator(i, j) = rng.normal();
    const Eigen::VectorXd norms = toy.generator.rowwise().norm();

    toy.manifest.schema = toy_schema();
    toy.manifest.root = root;
    toy.manifest.metadata["generator_seed"] = std::to_string(seed);
    std::filesystem::create_directories(root / "images");
    for (std::size_t k = 0; k < n; ++k) {
        Eigen::VectorXd f(bands);
        Eigen::VectorXd proj;
        do {
            for (int j = 0; j < bands; ++j) f[j] = 40.0 + static_cast<double>(rng.below(176));
            proj = toy.generator * (f.array() - 127.5).matrix();
        } while ((proj.array().abs() / norms.array()).minCoeff() < margin);

        Image img(width, bands * band_rows);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < width; ++x)
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(f[y / band_rows]);
        char id[32];
        std::snprintf(id, sizeof id, "toy%04zu", k);
        PedestrianSample s;
        s.sample_id = id;
        s.image_path = std::string("images/") + id + ".png";
        s.attributes = AttributeVector(m);
        for (int i = 0; i < m; ++i) s.attributes.set(static_cast<std::size_t>(i), proj[i] > 0);
        s.split = k < n * 6 / 10 ? Split::train : (k < n * 8 / 10 ? Split::val : Split::test);
        s.width = img.width;
        s.height = img.height;
        write_png(img, root / s.image_path);
        toy.manifest.samples.push_back(std::move(s));
    }
    return toy;
}

} // namespace pedsynth
