#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "arcpick/random.hpp"
#include "arcpick/recognition.hpp"

namespace arcpick::synthetic {

/**
 * @brief Generator parameters for a synthetic product/observation feature world.
 *
 * Objects come in families whose members share a center. Observed vectors are
 * a distorted, offset copy of a product vector plus a per-object appearance
 * shift, followed by an object-specific texture block that products lack.
 */
struct FeatureWorldParams {
    std::size_t dim = 32;             ///< product feature dimension
    std::size_t texture_dim = 20;     ///< extra observed-only dimensions
    std::size_t objects = 40;
    std::size_t family_size = 5;
    double scale = 0.3;               ///< overall feature scale
    double family_spread = 0.15;      ///< member offset from family center, in units of scale
    std::size_t max_products = 3;     ///< 1..max_products product vectors per object
    double product_jitter = 0.05;
    double distortion = 1.0;          ///< A = I + distortion * G / sqrt(dim)
    double offset = 0.5;              ///< global observed offset
    double appearance_shift = 0.3;    ///< per-object bias between product and observed
    double noise = 0.4;               ///< per-observation noise
    double texture_scale = 3.0;
    double texture_noise = 0.3;
    bool split_by_family = true;      ///< known/novel split keeps families together
    double known_fraction = 0.5;
};

class FeatureWorld {
public:
    FeatureWorld(const FeatureWorldParams& params, std::uint64_t seed);

    const FeatureWorldParams& params() const { return params_; }
    std::size_t observed_dim() const { return params_.dim + params_.texture_dim; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<std::size_t>& known() const { return known_; }
    const std::vector<std::size_t>& novel() const { return novel_; }
    bool is_known(std::size_t object) const { return known_flag_[object]; }
    const std::vector<Eigen::VectorXd>& products(std::size_t object) const { return products_[object]; }

    recognition::ProductCatalog catalog() const;
    /// Observation of a random product image of the object.
    Eigen::VectorXd observe(std::size_t object, Rng& rng) const;
    /// per_object observations of every known object.
    std::vector<recognition::TrainingSample> training_set(std::size_t per_object, Rng& rng) const;
    /// count observations alternating known and novel objects.
    std::vector<recognition::TrainingSample> validation_set(std::size_t count, Rng& rng) const;

private:
    FeatureWorldParams params_;
    std::vector<std::string> ids_;
    std::vector<std::vector<Eigen::VectorXd>> products_;
    std::vector<Eigen::VectorXd> shift_, texture_;
    Eigen::MatrixXd distortion_;
    Eigen::VectorXd offset_;
    std::vector<std::size_t> known_, novel_;
    std::vector<bool> known_flag_;
};

}  // namespace arcpick::synthetic
