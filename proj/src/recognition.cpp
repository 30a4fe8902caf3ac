#include "arcpick/recognition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <limits>
#include <numeric>

#include "arcpick/core.hpp"
#include "arcpick/io.hpp"
#include "arcpick/random.hpp"
#include "json.hpp"

namespace arcpick::recognition {

namespace {

constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::uint32_t kModelVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_dim(const Eigen::VectorXd& v, std::size_t d, const char* what) {
    if (static_cast<std::size_t>(v.size()) != d)
        throw InvalidArgument(std::string(what) + ": expected dimension " + std::to_string(d) + ", got " +
                              std::to_string(v.size()));
}

LossAndGradient through_model(const Eigen::VectorXd& observed, double loss, const Eigen::VectorXd& grad_f) {
    LossAndGradient out;
    out.loss = loss;
    out.grad_weights = grad_f * observed.transpose();
    out.grad_bias = grad_f;
    return out;
}

const Eigen::VectorXd& anchor_of(const Eigen::VectorXd& f, const CatalogEntry& entry, bool multi_anchor) {
    if (!multi_anchor) return entry.products.front();
    return entry.products[select_anchor(f, entry.products)];
}

double nearest_distance(const Eigen::VectorXd& f, const CatalogEntry& entry) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : entry.products) best = std::min(best, (f - p).norm());
    return best;
}

EmbeddingModel train_impl(std::span<const TrainingSample> samples, const ProductCatalog& catalog,
                          const TrainConfig& config, bool with_classifier, TrainingReport* report) {
    config.validate();
    if (catalog.size() == 0) throw InvalidArgument("training: empty catalog");

    // Objects in catalog order; negatives are drawn from this list.
    std::vector<std::size_t> object_of(samples.size());
    std::vector<const CatalogEntry*> objects;
    std::vector<std::size_t> slot(catalog.size(), SIZE_MAX);
    {
        std::vector<bool> present(catalog.size(), false);
        std::vector<std::size_t> entry_index(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            if (!catalog.contains(s.object_id))
                throw InvalidArgument("training: object '" + s.object_id + "' is not in the catalog");
            const auto& entry = catalog.at(s.object_id);
            if (!entry.known) throw InvalidArgument("training: object '" + s.object_id + "' is not marked known");
            const auto idx = static_cast<std::size_t>(&entry - catalog.entries().data());
            present[idx] = true;
            entry_index[i] = idx;
        }
        for (std::size_t j = 0; j < catalog.size(); ++j)
            if (present[j]) {
                slot[j] = objects.size();
                objects.push_back(&catalog.entries()[j]);
            }
        for (std::size_t i = 0; i < samples.size(); ++i) object_of[i] = slot[entry_index[i]];
    }
    if (objects.size() < 2) throw InvalidArgument("training: at least two objects are needed to form negatives");

    const std::size_t d_out = catalog.dim();
    const std::size_t d_in = static_cast<std::size_t>(samples.front().observed.size());
    for (const auto& s : samples) {
        require_dim(s.observed, d_in, "training sample");
        if (!s.observed.allFinite()) throw InvalidArgument("training: non-finite observed vector");
    }
    if (d_in < d_out) throw InvalidArgument("training: observed dimension smaller than product dimension");

    std::optional<PrototypeClassifier> classifier;
    if (with_classifier && config.lambda > 0.0)
        classifier = PrototypeClassifier::from_catalog(catalog, config.classifier_scale);

    EmbeddingModel model = EmbeddingModel::identity(d_in, d_out);
    Eigen::MatrixXd vw = Eigen::MatrixXd::Zero(model.weights.rows(), model.weights.cols());
    Eigen::VectorXd vb = Eigen::VectorXd::Zero(model.bias.size());
    Rng rng(config.seed);
    std::vector<std::size_t> order(samples.size());
    const std::size_t n_obj = objects.size();

    if (report) report->epoch_loss.clear();
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        double total = 0.0;
        for (const std::size_t i : order) {
            const auto& x = samples[i].observed;
            const std::size_t own = object_of[i];
            std::size_t neg = static_cast<std::size_t>(rng.index(n_obj - 1));
            if (neg == own) neg = n_obj - 1;

            const Eigen::VectorXd f = model.embed(x);
            const auto& pos = anchor_of(f, *objects[own], config.multi_anchor);
            const auto& ng = anchor_of(f, *objects[neg], config.multi_anchor);
            LossAndGradient step =
                classifier ? joint_loss(model, *classifier, x, pos, ng,
                                        classifier->label_of(samples[i].object_id), config.lambda)
                           : triplet_ratio_loss(model, x, pos, ng);
            total += step.loss;
            vw = config.momentum * vw - config.learning_rate * step.grad_weights;
            vb = config.momentum * vb - config.learning_rate * step.grad_bias;
            model.weights += vw;
            model.bias += vb;
        }
        if (report) report->epoch_loss.push_back(samples.empty() ? 0.0 : total / static_cast<double>(samples.size()));
    }
    model.trained = config.epochs > 0;
    model.validate();
    return model;
}

}  // namespace

EmbeddingModel EmbeddingModel::identity(std::size_t d_in, std::size_t d_out) {
    if (d_out == 0 || d_in < d_out) throw InvalidArgument("identity model needs 0 < d_out <= d_in");
    EmbeddingModel m;
    m.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in));
    m.weights.leftCols(static_cast<Eigen::Index>(d_out)).setIdentity();
    m.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d_out));
    return m;
}

Eigen::VectorXd EmbeddingModel::embed(const Eigen::VectorXd& observed) const {
    require_dim(observed, input_dim(), "embed");
    return weights * observed + bias;
}

void EmbeddingModel::validate() const {
    if (weights.rows() == 0 || weights.cols() == 0) throw InvalidArgument("embedding model is empty");
    if (bias.size() != weights.rows()) throw InvalidArgument("embedding bias does not match weight rows");
    if (!weights.allFinite() || !bias.allFinite()) throw InvalidArgument("embedding model has non-finite parameters");
}

void ProductCatalog::add(const std::string& object_id, bool known, const Eigen::VectorXd& product) {
    if (object_id.empty()) throw InvalidArgument("catalog: empty object id");
    if (product.size() == 0) throw InvalidArgument("catalog: empty product vector");
    if (!product.allFinite()) throw InvalidArgument("catalog: non-finite product vector for '" + object_id + "'");
    if (dim_ == 0) dim_ = static_cast<std::size_t>(product.size());
    require_dim(product, dim_, "catalog");
    auto it = index_.find(object_id);
    if (it == index_.end()) {
        index_.emplace(object_id, entries_.size());
        entries_.push_back(CatalogEntry{object_id, known, {product}});
        return;
    }
    auto& entry = entries_[it->second];
    if (entry.known != known) throw InvalidArgument("catalog: conflicting known flag for '" + object_id + "'");
    entry.products.push_back(product);
}

const CatalogEntry& ProductCatalog::at(const std::string& object_id) const {
    auto it = index_.find(object_id);
    if (it == index_.end()) throw InvalidArgument("catalog: unknown object '" + object_id + "'");
    return entries_[it->second];
}

std::vector<std::string> ProductCatalog::known_ids() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.known) out.push_back(e.object_id);
    return out;
}

double triplet_ratio_loss(const Eigen::VectorXd& f, const Eigen::VectorXd& pos, const Eigen::VectorXd& neg,
                          Eigen::VectorXd* grad_f) {
    if (pos.size() != f.size() || neg.size() != f.size()) throw InvalidArgument("triplet loss: dimension mismatch");
    const Eigen::VectorXd ep = f - pos, en = f - neg;
    const double dp = std::sqrt(ep.squaredNorm() + kDistanceEpsilon);
    const double dn = std::sqrt(en.squaredNorm() + kDistanceEpsilon);
    // e^{d+} / (e^{d+} + e^{d-}) == sigmoid(d+ - d-)
    const double p = sigmoid(dp - dn);
    if (grad_f) {
        const double g = 2.0 * p * p * (1.0 - p);
        *grad_f = g * (ep / dp - en / dn);
    }
    return p * p;
}

LossAndGradient triplet_ratio_loss(const EmbeddingModel& model, const Eigen::VectorXd& observed,
                                   const Eigen::VectorXd& pos, const Eigen::VectorXd& neg) {
    const Eigen::VectorXd f = model.embed(observed);
    Eigen::VectorXd gf;
    const double loss = triplet_ratio_loss(f, pos, neg, &gf);
    return through_model(observed, loss, gf);
}

PrototypeClassifier PrototypeClassifier::from_catalog(const ProductCatalog& catalog, double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("classifier scale must be positive");
    PrototypeClassifier c;
    c.scale = scale;
    std::vector<Eigen::VectorXd> rows;
    for (const auto& e : catalog.entries()) {
        if (!e.known) continue;
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(catalog.dim()));
        for (const auto& p : e.products) mean += p;
        mean /= static_cast<double>(e.products.size());
        const double n = mean.norm();
        if (!(n > 0.0)) throw InvalidArgument("classifier: zero product centroid for '" + e.object_id + "'");
        rows.push_back(mean / n);
        c.labels.push_back(e.object_id);
    }
    if (rows.empty()) throw InvalidArgument("classifier: catalog has no known objects");
    c.prototypes.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(catalog.dim()));
    for (std::size_t i = 0; i < rows.size(); ++i) c.prototypes.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return c;
}

std::size_t PrototypeClassifier::label_of(const std::string& object_id) const {
    auto it = std::find(labels.begin(), labels.end(), object_id);
    if (it == labels.end()) throw InvalidArgument("classifier: '" + object_id + "' is not a known object");
    return static_cast<std::size_t>(it - labels.begin());
}

double PrototypeClassifier::cross_entropy(const Eigen::VectorXd& f, std::size_t label, Eigen::VectorXd* grad_f) const {
    if (label >= labels.size()) throw InvalidArgument("classifier: label out of range");
    if (f.size() != prototypes.cols()) throw InvalidArgument("classifier: dimension mismatch");
    const double nf = f.norm();
    if (!(nf > 0.0)) throw InvalidArgument("classifier: zero embedding");
    const Eigen::VectorXd fh = f / nf;
    Eigen::VectorXd z = scale * (prototypes * fh);
    z.array() -= z.maxCoeff();
    Eigen::VectorXd q = z.array().exp();
    const double sum = q.sum();
    q /= sum;
    const auto l = static_cast<Eigen::Index>(label);
    const double loss = std::log(sum) - z(l);
    if (grad_f) {
        Eigen::VectorXd dz = q;
        dz(l) -= 1.0;
        const Eigen::VectorXd gfh = scale * (prototypes.transpose() * dz);
        *grad_f = (gfh - fh * fh.dot(gfh)) / nf;
    }
    return loss;
}

LossAndGradient joint_loss(const EmbeddingModel& model, const PrototypeClassifier& classifier,
                           const Eigen::VectorXd& observed, const Eigen::VectorXd& pos, const Eigen::VectorXd& neg,
                           std::size_t label, double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be finite and >= 0");
    const Eigen::VectorXd f = model.embed(observed);
    Eigen::VectorXd gt, gc;
    double loss = triplet_ratio_loss(f, pos, neg, &gt);
    if (lambda > 0.0) {
        loss += lambda * classifier.cross_entropy(f, label, &gc);
        gt += lambda * gc;
    }
    return through_model(observed, loss, gt);
}

std::size_t select_anchor(const Eigen::VectorXd& f, std::span<const Eigen::VectorXd> products) {
    if (products.empty()) throw InvalidArgument("select_anchor: no product vectors");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < products.size(); ++i) {
        if (products[i].size() != f.size()) throw InvalidArgument("select_anchor: dimension mismatch");
        const double d = (f - products[i]).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be finite and >= 0");
    if (!(classifier_scale > 0.0) || !std::isfinite(classifier_scale))
        throw InvalidArgument("classifier scale must be positive");
}

EmbeddingModel train_embedding(std::span<const TrainingSample> samples, const ProductCatalog& catalog,
                               const TrainConfig& config, TrainingReport* report) {
    return train_impl(samples, catalog, config, false, report);
}

EmbeddingModel train_knet(std::span<const TrainingSample> samples, const ProductCatalog& catalog,
                          const TrainConfig& config, TrainingReport* report) {
    return train_impl(samples, catalog, config, true, report);
}

double anchor_distance(const EmbeddingModel& model, const Eigen::VectorXd& observed, const ProductCatalog& catalog,
                       const std::string& object_id) {
    return nearest_distance(model.embed(observed), catalog.at(object_id));
}

double known_distance(const Eigen::VectorXd& observed, const EmbeddingModel& knet, const ProductCatalog& catalog) {
    const Eigen::VectorXd f = knet.embed(observed);
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& e : catalog.entries()) {
        if (!e.known) continue;
        any = true;
        best = std::min(best, nearest_distance(f, e));
    }
    if (!any) throw InvalidArgument("recollect: catalog has no known objects");
    return best;
}

Verdict recollect(const Eigen::VectorXd& observed, const EmbeddingModel& knet, const ProductCatalog& catalog,
                  double k_threshold) {
    if (!(k_threshold >= 0.0)) throw InvalidArgument("recollect: threshold must be >= 0");
    return known_distance(observed, knet, catalog) > k_threshold ? Verdict::novel : Verdict::known;
}

std::vector<std::string> rank_candidates(const EmbeddingModel& model, const Eigen::VectorXd& observed,
                                         const ProductCatalog& catalog, std::span<const std::string> candidates) {
    if (candidates.empty()) throw InvalidArgument("recognize: empty candidate list");
    const Eigen::VectorXd f = model.embed(observed);
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        scored.emplace_back(nearest_distance(f, catalog.at(candidates[i])), i);
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::string> out;
    out.reserve(scored.size());
    for (const auto& [d, i] : scored) out.push_back(candidates[i]);
    return out;
}

void RecognitionConfig::validate() const {
    if (!(k_threshold > 0.0) || !std::isfinite(k_threshold)) throw InvalidArgument("k_threshold must be positive");
    if (!knet || !nnet) throw InvalidArgument("recognition needs both K-net and N-net");
}

Recognition recognize(const Eigen::VectorXd& observed, const RecognitionConfig& config, const ProductCatalog& catalog,
                      std::span<const std::string> candidates) {
    config.validate();
    if (candidates.empty()) throw InvalidArgument("recognize: empty candidate list");
    Recognition r;
    r.stage = recollect(observed, *config.knet, catalog, config.k_threshold);
    r.ranking = rank_candidates(r.stage == Verdict::known ? *config.knet : *config.nnet, observed, catalog, candidates);
    return r;
}

double calibrate_k(std::span<const TrainingSample> validation, const EmbeddingModel& knet,
                   const ProductCatalog& catalog) {
    std::vector<std::pair<double, bool>> scored;
    std::size_t n_known = 0;
    for (const auto& s : validation) {
        const bool known = catalog.at(s.object_id).known;
        n_known += known;
        scored.emplace_back(known_distance(s.observed, knet, catalog), known);
    }
    const std::size_t n_novel = scored.size() - n_known;
    if (n_known == 0 || n_novel == 0) throw InvalidArgument("calibrate_k: need both known and novel observations");
    std::sort(scored.begin(), scored.end());

    // Threshold between i-1 and i: the first i are called known.
    double best_acc = -1.0, best_k = 0.0;
    std::size_t known_below = 0;
    for (std::size_t i = 1; i < scored.size(); ++i) {
        known_below += scored[i - 1].second;
        if (scored[i].first == scored[i - 1].first) continue;
        const std::size_t novel_below = i - known_below;
        const double acc = 0.5 * static_cast<double>(known_below) / static_cast<double>(n_known) +
                           0.5 * static_cast<double>(n_novel - novel_below) / static_cast<double>(n_novel);
        if (acc > best_acc) {
            best_acc = acc;
            best_k = 0.5 * (scored[i - 1].first + scored[i].first);
        }
    }
    if (best_acc < 0.0) throw InvalidArgument("calibrate_k: all distances are equal");
    return best_k;
}

void write_features(const std::filesystem::path& path, std::span<const FeatureVector> features) {
    io::BinaryWriter w;
    w.bytes("FEAT", 4);
    w.u32(kFeatureVersion);
    const std::size_t d = features.empty() ? 0 : static_cast<std::size_t>(features.front().values.size());
    w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(features.size()));
    for (const auto& f : features) {
        if (static_cast<std::size_t>(f.values.size()) != d) throw InvalidArgument("write_features: mixed dimensions");
        if (!f.values.allFinite()) throw InvalidArgument("write_features: non-finite values");
        if (f.object_id.size() > 0xFFFF) throw InvalidArgument("write_features: object id too long");
        w.u16(static_cast<std::uint16_t>(f.object_id.size()));
        w.bytes(f.object_id.data(), f.object_id.size());
        for (Eigen::Index i = 0; i < f.values.size(); ++i) w.f32(static_cast<float>(f.values(i)));
    }
    w.save(path);
}

std::vector<FeatureVector> read_features(const std::filesystem::path& path, FeatureSource source) {
    auto r = io::BinaryReader::open(path);
    if (r.magic() != "FEAT") throw FormatError(path.string() + ": not a feature file");
    if (const auto v = r.u32(); v != kFeatureVersion)
        throw FormatError(path.string() + ": unsupported feature version " + std::to_string(v));
    const std::uint32_t d = r.u32();
    const std::uint32_t count = r.u32();
    if (count > 0 && d == 0) throw FormatError(path.string() + ": zero feature dimension");
    if (static_cast<std::uintmax_t>(count) * (2ull + 4ull * d) > std::filesystem::file_size(path))
        throw FormatError(path.string() + ": truncated feature file");
    std::vector<FeatureVector> out;
    for (std::uint32_t k = 0; k < count; ++k) {
        FeatureVector f;
        f.source = source;
        f.object_id.resize(r.u16());
        r.bytes(f.object_id.data(), f.object_id.size());
        if (f.object_id.empty()) throw FormatError(path.string() + ": empty object id");
        f.values.resize(d);
        for (std::uint32_t i = 0; i < d; ++i) f.values(i) = r.f32();
        if (!f.values.allFinite()) throw FormatError(path.string() + ": non-finite feature values");
        out.push_back(std::move(f));
    }
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
    return out;
}

void save_model(const std::filesystem::path& path, const EmbeddingModel& model) {
    model.validate();
    io::BinaryWriter w;
    w.bytes("EMBD", 4);
    w.u32(kModelVersion);
    w.u32(static_cast<std::uint32_t>(model.input_dim()));
    w.u32(static_cast<std::uint32_t>(model.output_dim()));
    w.u32(model.trained ? 1u : 0u);
    for (Eigen::Index r = 0; r < model.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < model.weights.cols(); ++c) w.f32(static_cast<float>(model.weights(r, c)));
    for (Eigen::Index r = 0; r < model.bias.size(); ++r) w.f32(static_cast<float>(model.bias(r)));
    w.save(path);
}

EmbeddingModel load_model(const std::filesystem::path& path) {
    auto r = io::BinaryReader::open(path);
    if (r.magic() != "EMBD") throw FormatError(path.string() + ": not a model file");
    if (const auto v = r.u32(); v != kModelVersion)
        throw FormatError(path.string() + ": unsupported model version " + std::to_string(v));
    const std::uint32_t d_in = r.u32(), d_out = r.u32(), trained = r.u32();
    if (d_in == 0 || d_out == 0) throw FormatError(path.string() + ": zero model dimension");
    if (trained > 1) throw FormatError(path.string() + ": bad trained flag");
    if (4ull * (static_cast<std::uintmax_t>(d_in) + 1) * d_out > std::filesystem::file_size(path))
        throw FormatError(path.string() + ": truncated model file");
    EmbeddingModel m;
    m.weights.resize(d_out, d_in);
    m.bias.resize(d_out);
    for (Eigen::Index i = 0; i < m.weights.rows(); ++i)
        for (Eigen::Index j = 0; j < m.weights.cols(); ++j) m.weights(i, j) = r.f32();
    for (Eigen::Index i = 0; i < m.bias.size(); ++i) m.bias(i) = r.f32();
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
    if (!m.weights.allFinite() || !m.bias.allFinite()) throw FormatError(path.string() + ": non-finite parameters");
    m.trained = trained == 1;
    return m;
}

void write_catalog(const std::filesystem::path& dir, const ProductCatalog& catalog) {
    std::filesystem::create_directories(dir);
    std::vector<FeatureVector> products;
    nlohmann::json known = nlohmann::json::array();
    for (const auto& e : catalog.entries()) {
        if (e.known) known.push_back(e.object_id);
        for (const auto& p : e.products) products.push_back({e.object_id, FeatureSource::product, p});
    }
    write_features(dir / "products.feat", products);
    std::ofstream out(dir / "catalog.json");
    out << nlohmann::json{{"known", known}}.dump(2) << "\n";
    if (!out) throw Error("cannot write " + (dir / "catalog.json").string());
}

ProductCatalog read_catalog(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw InvalidArgument("catalog directory not found: " + dir.string());
    const auto json_path = dir / "catalog.json";
    std::ifstream in(json_path);
    if (!in) throw FormatError("cannot read " + json_path.string());
    std::set<std::string> known;
    try {
        const auto j = nlohmann::json::parse(in);
        for (const auto& id : j.at("known")) known.insert(id.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(json_path.string() + ": " + e.what());
    }
    ProductCatalog catalog;
    for (const auto& f : read_features(dir / "products.feat", FeatureSource::product))
        catalog.add(f.object_id, known.count(f.object_id) != 0, f.values);
    for (const auto& id : known)
        if (!catalog.contains(id)) throw FormatError(json_path.string() + ": known object '" + id + "' has no products");
    return catalog;
}

std::vector<TrainingSample> to_samples(std::span<const FeatureVector> observed) {
    std::vector<TrainingSample> out;
    out.reserve(observed.size());
    for (const auto& f : observed) out.push_back({f.object_id, f.values});
    return out;
}

}  // namespace arcpick::recognition
