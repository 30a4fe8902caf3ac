#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace arcpick::recognition {

enum class FeatureSource : std::uint8_t { product, observed };

struct FeatureVector {
    std::string object_id;
    FeatureSource source = FeatureSource::observed;
    Eigen::VectorXd values;
};

/**
 * @brief Observed-stream embedding f(x) = W x + b.
 *
 * Product features are never passed through the model; they already live in
 * the target space.
 */
struct EmbeddingModel {
    Eigen::MatrixXd weights;  ///< d_out x d_in
    Eigen::VectorXd bias;     ///< d_out
    bool trained = false;

    /// W = [I 0] (truncated identity), b = 0.
    static EmbeddingModel identity(std::size_t d_in, std::size_t d_out);

    std::size_t input_dim() const { return static_cast<std::size_t>(weights.cols()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(weights.rows()); }
    Eigen::VectorXd embed(const Eigen::VectorXd& observed) const;
    /// Throws InvalidArgument on shape mismatch or non-finite parameters.
    void validate() const;
};

struct CatalogEntry {
    std::string object_id;
    bool known = false;
    std::vector<Eigen::VectorXd> products;
};

/// Product features per object, in insertion order.
class ProductCatalog {
public:
    /// Adds a product vector, creating the entry on first use. Throws
    /// InvalidArgument on dimension mismatch, non-finite values or a known
    /// flag that contradicts an existing entry.
    void add(const std::string& object_id, bool known, const Eigen::VectorXd& product);

    const CatalogEntry& at(const std::string& object_id) const;
    bool contains(const std::string& object_id) const { return index_.count(object_id) != 0; }
    const std::vector<CatalogEntry>& entries() const { return entries_; }
    std::vector<std::string> known_ids() const;
    std::size_t size() const { return entries_.size(); }
    std::size_t dim() const { return dim_; }

private:
    std::vector<CatalogEntry> entries_;
    std::map<std::string, std::size_t> index_;
    std::size_t dim_ = 0;
};

struct LossAndGradient {
    double loss = 0.0;
    Eigen::MatrixXd grad_weights;
    Eigen::VectorXd grad_bias;
};

/// Smoothing added under the square roots of both distances.
inline constexpr double kDistanceEpsilon = 1e-8;

/**
 * @brief Distance-ratio triplet loss on an embedded observation.
 *
 * d+ = |f - pos|, d- = |f - neg|, loss = (e^{d+} / (e^{d+} + e^{d-}))^2.
 * grad_f receives dloss/df when non-null.
 */
double triplet_ratio_loss(const Eigen::VectorXd& f, const Eigen::VectorXd& pos, const Eigen::VectorXd& neg,
                          Eigen::VectorXd* grad_f = nullptr);

/// Same loss through the model, with gradients for W and b.
LossAndGradient triplet_ratio_loss(const EmbeddingModel& model, const Eigen::VectorXd& observed,
                                   const Eigen::VectorXd& pos, const Eigen::VectorXd& neg);

/**
 * @brief Auxiliary known-object classifier used while training the K-net.
 *
 * logits = scale * P f / |f|, rows of P are the unit-normalized product
 * centroids of the known objects. The weights stay fixed.
 */
struct PrototypeClassifier {
    std::vector<std::string> labels;
    Eigen::MatrixXd prototypes;  ///< K x d, unit rows
    double scale = 5.0;

    static PrototypeClassifier from_catalog(const ProductCatalog& catalog, double scale);
    std::size_t label_of(const std::string& object_id) const;
    /// Softmax cross-entropy of label; grad_f receives dloss/df when non-null.
    double cross_entropy(const Eigen::VectorXd& f, std::size_t label, Eigen::VectorXd* grad_f = nullptr) const;
};

/// triplet + lambda * cross_entropy, with gradients for W and b.
LossAndGradient joint_loss(const EmbeddingModel& model, const PrototypeClassifier& classifier,
                           const Eigen::VectorXd& observed, const Eigen::VectorXd& pos, const Eigen::VectorXd& neg,
                           std::size_t label, double lambda);

/// Index of the product vector nearest to f; first index wins ties.
std::size_t select_anchor(const Eigen::VectorXd& f, std::span<const Eigen::VectorXd> products);

struct TrainingSample {
    std::string object_id;
    Eigen::VectorXd observed;
};

struct TrainConfig {
    std::size_t epochs = 10;
    double learning_rate = 1e-3;
    double momentum = 0.99;
    double lambda = 1.0;            ///< classification weight (K-net only)
    double classifier_scale = 5.0;  ///< logit scale of the prototype classifier
    bool multi_anchor = true;       ///< nearest product of each object, else its first product
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainingReport {
    std::vector<double> epoch_loss;  ///< mean loss per epoch
};

/**
 * @brief N-net: SGD with momentum on the triplet loss.
 *
 * Each step pairs one observation with a matching and a non-matching product
 * of a random other training object. Throws InvalidArgument when the samples
 * cover fewer than two objects or name objects outside the catalog.
 */
EmbeddingModel train_embedding(std::span<const TrainingSample> samples, const ProductCatalog& catalog,
                               const TrainConfig& config, TrainingReport* report = nullptr);

/// K-net: as train_embedding plus lambda * classification over known objects.
/// With lambda = 0 the trajectory equals train_embedding's.
EmbeddingModel train_knet(std::span<const TrainingSample> samples, const ProductCatalog& catalog,
                          const TrainConfig& config, TrainingReport* report = nullptr);

/// Distance from the embedded observation to the nearest product of object_id.
double anchor_distance(const EmbeddingModel& model, const Eigen::VectorXd& observed, const ProductCatalog& catalog,
                       const std::string& object_id);

/// Nearest-product distance over known objects under the K-net.
double known_distance(const Eigen::VectorXd& observed, const EmbeddingModel& knet, const ProductCatalog& catalog);

enum class Verdict : std::uint8_t { known, novel };

Verdict recollect(const Eigen::VectorXd& observed, const EmbeddingModel& knet, const ProductCatalog& catalog,
                  double k_threshold);

/// Candidates sorted by anchor distance ascending, ties by input order.
std::vector<std::string> rank_candidates(const EmbeddingModel& model, const Eigen::VectorXd& observed,
                                         const ProductCatalog& catalog, std::span<const std::string> candidates);

struct RecognitionConfig {
    double k_threshold = 1.0;
    const EmbeddingModel* knet = nullptr;
    const EmbeddingModel* nnet = nullptr;

    void validate() const;
};

struct Recognition {
    Verdict stage = Verdict::known;
    std::vector<std::string> ranking;
};

/// Recollection with the K-net, then ranking with the K-net (known) or N-net (novel).
Recognition recognize(const Eigen::VectorXd& observed, const RecognitionConfig& config, const ProductCatalog& catalog,
                      std::span<const std::string> candidates);

/// Threshold maximizing balanced known/novel accuracy on labeled observations;
/// midpoints between consecutive sorted distances, smallest best wins.
double calibrate_k(std::span<const TrainingSample> validation, const EmbeddingModel& knet,
                   const ProductCatalog& catalog);

// File formats (little-endian).
void write_features(const std::filesystem::path& path, std::span<const FeatureVector> features);
/// Source of the returned vectors is `source`; the file does not record it.
std::vector<FeatureVector> read_features(const std::filesystem::path& path,
                                         FeatureSource source = FeatureSource::observed);
void save_model(const std::filesystem::path& path, const EmbeddingModel& model);

/// Catalog directory: products.feat with every product vector and
/// catalog.json {"known": [ids]}. Objects absent from "known" are novel.
void write_catalog(const std::filesystem::path& dir, const ProductCatalog& catalog);
/// Throws InvalidArgument when dir is missing, FormatError on bad contents.
ProductCatalog read_catalog(const std::filesystem::path& dir);

std::vector<TrainingSample> to_samples(std::span<const FeatureVector> observed);
EmbeddingModel load_model(const std::filesystem::path& path);

}  // namespace arcpick::recognition
