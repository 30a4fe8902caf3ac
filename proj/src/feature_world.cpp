#include "arcpick/feature_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "arcpick/core.hpp"

namespace arcpick::synthetic {

namespace {

Eigen::VectorXd gaussian(std::size_t n, double sd, Rng& rng) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal(0.0, sd);
    return v;
}

}  // namespace

FeatureWorld::FeatureWorld(const FeatureWorldParams& params, std::uint64_t seed) : params_(params) {
    const auto& p = params_;
    if (p.dim == 0 || p.objects < 2 || p.family_size == 0 || p.max_products == 0)
        throw InvalidArgument("feature world: empty dimensions");
    if (!(p.known_fraction > 0.0 && p.known_fraction < 1.0))
        throw InvalidArgument("feature world: known_fraction must be in (0, 1)");
    Rng rng(seed);
    const std::size_t families = (p.objects + p.family_size - 1) / p.family_size;
    std::vector<Eigen::VectorXd> family_centers;
    for (std::size_t f = 0; f < families; ++f) family_centers.push_back(gaussian(p.dim, p.scale, rng));

    for (std::size_t o = 0; o < p.objects; ++o) {
        char name[32];
        std::snprintf(name, sizeof name, "obj%03zu", o);
        ids_.emplace_back(name);
        const Eigen::VectorXd center =
            family_centers[o / p.family_size] + gaussian(p.dim, p.family_spread * p.scale, rng);
        const std::size_t n = 1 + static_cast<std::size_t>(rng.index(p.max_products));
        std::vector<Eigen::VectorXd> prods;
        for (std::size_t k = 0; k < n; ++k) prods.push_back(center + gaussian(p.dim, p.product_jitter * p.scale, rng));
        products_.push_back(std::move(prods));
    }

    const auto d = static_cast<Eigen::Index>(p.dim);
    distortion_ = Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c)
            distortion_(r, c) += p.distortion * rng.normal() / std::sqrt(static_cast<double>(p.dim));
    offset_ = gaussian(p.dim, p.offset * p.scale, rng);
    for (std::size_t o = 0; o < p.objects; ++o) shift_.push_back(gaussian(p.dim, p.appearance_shift * p.scale, rng));
    for (std::size_t o = 0; o < p.objects; ++o)
        texture_.push_back(gaussian(p.texture_dim, p.texture_scale * p.scale, rng));

    known_flag_.assign(p.objects, false);
    if (p.split_by_family) {
        std::vector<std::size_t> fam(families);
        std::iota(fam.begin(), fam.end(), std::size_t{0});
        rng.shuffle(fam);
        const auto n_known = static_cast<std::size_t>(std::lround(p.known_fraction * static_cast<double>(families)));
        for (std::size_t i = 0; i < n_known; ++i)
            for (std::size_t o = fam[i] * p.family_size; o < std::min(p.objects, (fam[i] + 1) * p.family_size); ++o)
                known_flag_[o] = true;
    } else {
        std::vector<std::size_t> obj(p.objects);
        std::iota(obj.begin(), obj.end(), std::size_t{0});
        rng.shuffle(obj);
        const auto n_known = static_cast<std::size_t>(std::lround(p.known_fraction * static_cast<double>(p.objects)));
        for (std::size_t i = 0; i < n_known; ++i) known_flag_[obj[i]] = true;
    }
    for (std::size_t o = 0; o < p.objects; ++o) (known_flag_[o] ? known_ : novel_).push_back(o);
    if (known_.empty() || novel_.empty()) throw InvalidArgument("feature world: split left a side empty");
}

recognition::ProductCatalog FeatureWorld::catalog() const {
    recognition::ProductCatalog c;
    for (std::size_t o = 0; o < ids_.size(); ++o)
        for (const auto& v : products_[o]) c.add(ids_[o], known_flag_[o], v);
    return c;
}

Eigen::VectorXd FeatureWorld::observe(std::size_t object, Rng& rng) const {
    if (object >= ids_.size()) throw InvalidArgument("feature world: object index out of range");
    const auto& p = params_;
    const auto& prods = products_[object];
    const Eigen::VectorXd& prod = prods[rng.index(prods.size())];
    Eigen::VectorXd x(static_cast<Eigen::Index>(observed_dim()));
    const auto d = static_cast<Eigen::Index>(p.dim);
    x.head(d) = distortion_ * (prod + shift_[object] + gaussian(p.dim, p.noise * p.scale, rng)) + offset_;
    x.tail(static_cast<Eigen::Index>(p.texture_dim)) =
        texture_[object] + gaussian(p.texture_dim, p.texture_noise * p.scale, rng);
    return x;
}

std::vector<recognition::TrainingSample> FeatureWorld::training_set(std::size_t per_object, Rng& rng) const {
    std::vector<recognition::TrainingSample> out;
    for (const std::size_t o : known_)
        for (std::size_t i = 0; i < per_object; ++i) out.push_back({ids_[o], observe(o, rng)});
    return out;
}

std::vector<recognition::TrainingSample> FeatureWorld::validation_set(std::size_t count, Rng& rng) const {
    std::vector<recognition::TrainingSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& pool = i % 2 == 0 ? known_ : novel_;
        const std::size_t o = pool[rng.index(pool.size())];
        out.push_back({ids_[o], observe(o, rng)});
    }
    return out;
}

}  // namespace arcpick::synthetic
