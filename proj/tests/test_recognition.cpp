#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "arcpick/evaluation.hpp"
#include "arcpick/feature_world.hpp"
#include "arcpick/recognition.hpp"
#include "doctest.h"

using namespace arcpick;
using namespace arcpick::recognition;
namespace fs = std::filesystem;

namespace {

Eigen::VectorXd random_vector(Rng& rng, std::size_t n, double sd = 1.0) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal(0.0, sd);
    return v;
}

EmbeddingModel random_model(Rng& rng, std::size_t d_in, std::size_t d_out) {
    EmbeddingModel m = EmbeddingModel::identity(d_in, d_out);
    for (Eigen::Index r = 0; r < m.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < m.weights.cols(); ++c) m.weights(r, c) += rng.normal(0.0, 0.3);
    m.bias = random_vector(rng, d_out, 0.3);
    return m;
}

/// Central differences of loss over every weight and bias entry, flattened
/// as [row-major W, b].
template <typename LossFn>
Eigen::VectorXd numeric_gradient(const EmbeddingModel& model, LossFn loss, double h = 1e-5) {
    const auto rows = model.weights.rows(), cols = model.weights.cols();
    Eigen::VectorXd g(rows * cols + rows);
    EmbeddingModel m = model;
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c, ++k) {
            const double orig = m.weights(r, c);
            m.weights(r, c) = orig + h;
            const double up = loss(m);
            m.weights(r, c) = orig - h;
            const double down = loss(m);
            m.weights(r, c) = orig;
            g(k) = (up - down) / (2.0 * h);
        }
    for (Eigen::Index r = 0; r < rows; ++r, ++k) {
        const double orig = m.bias(r);
        m.bias(r) = orig + h;
        const double up = loss(m);
        m.bias(r) = orig - h;
        const double down = loss(m);
        m.bias(r) = orig;
        g(k) = (up - down) / (2.0 * h);
    }
    return g;
}

Eigen::VectorXd flatten(const LossAndGradient& lg) {
    const auto rows = lg.grad_weights.rows(), cols = lg.grad_weights.cols();
    Eigen::VectorXd g(rows * cols + rows);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) g(k++) = lg.grad_weights(r, c);
    for (Eigen::Index r = 0; r < rows; ++r) g(k++) = lg.grad_bias(r);
    return g;
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

/// Ten well separated clusters: products at the centers, observations are a
/// fixed unknown affine distortion of center + noise.
struct ClusterWorld {
    synthetic::FeatureWorld world;
    ProductCatalog catalog;

    explicit ClusterWorld(std::uint64_t seed)
        : world(
              [] {
                  synthetic::FeatureWorldParams p;
                  p.dim = 16;
                  p.texture_dim = 0;
                  p.objects = 10;
                  p.family_size = 1;
                  p.scale = 1.0;
                  p.family_spread = 0.0;
                  p.max_products = 1;
                  p.product_jitter = 0.0;
                  p.distortion = 1.0;
                  p.offset = 0.5;
                  p.appearance_shift = 0.0;
                  p.noise = 0.4;
                  p.split_by_family = false;
                  return p;
              }(),
              seed) {
        for (std::size_t o = 0; o < world.ids().size(); ++o) catalog.add(world.ids()[o], true, world.products(o)[0]);
    }

    std::vector<TrainingSample> samples(std::size_t per_object, Rng& rng) const {
        std::vector<TrainingSample> out;
        for (std::size_t o = 0; o < world.ids().size(); ++o)
            for (std::size_t i = 0; i < per_object; ++i) out.push_back({world.ids()[o], world.observe(o, rng)});
        return out;
    }

    double top1(const EmbeddingModel& model, std::span<const TrainingSample> held_out) const {
        std::vector<std::string> ids = world.ids();
        std::size_t correct = 0;
        for (const auto& s : held_out) correct += rank_candidates(model, s.observed, catalog, ids).front() == s.object_id;
        return static_cast<double>(correct) / static_cast<double>(held_out.size());
    }
};

}  // namespace

TEST_CASE("triplet loss examples") {
    const Eigen::VectorXd f = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd pos(4), neg(4);
    pos << 1, 0, 0, 0;
    neg << 0, -1, 0, 0;
    CHECK(triplet_ratio_loss(f, pos, neg) == doctest::Approx(0.25).epsilon(1e-12));

    // d+ -> 0 and d- large: (1 / (1 + e^{d-}))^2 -> 0.
    neg << 40, 0, 0, 0;
    const double far = triplet_ratio_loss(f, f, neg);
    CHECK(far < 1e-30);
    CHECK(far >= 0.0);

    Eigen::VectorXd g;
    triplet_ratio_loss(f, f, f, &g);  // all distances zero: smoothing keeps it finite
    CHECK(g.allFinite());
    CHECK_THROWS_AS(triplet_ratio_loss(f, Eigen::VectorXd::Zero(3), neg), InvalidArgument);
}

TEST_CASE("triplet loss gradient matches central differences at 10 random points") {
    Rng rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        const auto model = random_model(rng, 10, 8);
        const auto x = random_vector(rng, 10), pos = random_vector(rng, 8), neg = random_vector(rng, 8);
        const auto analytic = flatten(triplet_ratio_loss(model, x, pos, neg));
        const auto numeric =
            numeric_gradient(model, [&](const EmbeddingModel& m) { return triplet_ratio_loss(m, x, pos, neg).loss; });
        CAPTURE(trial);
        CHECK(relative_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("joint loss gradient matches central differences at 10 random points") {
    Rng rng(202);
    for (int trial = 0; trial < 10; ++trial) {
        ProductCatalog catalog;
        for (int o = 0; o < 5; ++o) catalog.add("o" + std::to_string(o), o < 3, random_vector(rng, 8));
        const auto classifier = PrototypeClassifier::from_catalog(catalog, 5.0);
        const auto model = random_model(rng, 10, 8);
        const auto x = random_vector(rng, 10), pos = random_vector(rng, 8), neg = random_vector(rng, 8);
        const std::size_t label = static_cast<std::size_t>(rng.index(3));
        const double lambda = rng.uniform(0.1, 2.0);
        const auto analytic = flatten(joint_loss(model, classifier, x, pos, neg, label, lambda));
        const auto numeric = numeric_gradient(model, [&](const EmbeddingModel& m) {
            return joint_loss(m, classifier, x, pos, neg, label, lambda).loss;
        });
        CAPTURE(trial);
        CHECK(relative_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("joint loss with lambda 0 is the triplet loss") {
    Rng rng(3);
    ProductCatalog catalog;
    catalog.add("a", true, random_vector(rng, 4));
    catalog.add("b", true, random_vector(rng, 4));
    const auto classifier = PrototypeClassifier::from_catalog(catalog, 5.0);
    const auto model = random_model(rng, 6, 4);
    const auto x = random_vector(rng, 6), pos = random_vector(rng, 4), neg = random_vector(rng, 4);
    const auto j = joint_loss(model, classifier, x, pos, neg, 0, 0.0);
    const auto t = triplet_ratio_loss(model, x, pos, neg);
    CHECK(j.loss == t.loss);
    CHECK(j.grad_weights == t.grad_weights);
    CHECK(j.grad_bias == t.grad_bias);
}

TEST_CASE("prototype classifier") {
    ProductCatalog catalog;
    Eigen::VectorXd a(2), b(2), c(2);
    a << 2, 0;
    b << 0, 3;
    c << -1, -1;
    catalog.add("a", true, a);
    catalog.add("b", true, b);
    catalog.add("c", false, c);
    const auto cls = PrototypeClassifier::from_catalog(catalog, 5.0);
    CHECK(cls.labels == std::vector<std::string>{"a", "b"});
    CHECK(cls.prototypes.row(0).norm() == doctest::Approx(1.0));
    CHECK(cls.label_of("b") == 1);
    CHECK_THROWS_AS(cls.label_of("c"), InvalidArgument);
    // Pointing at a prototype: softmax over (5, 0) -> loss log(1 + e^-5).
    CHECK(cls.cross_entropy(a, 0) == doctest::Approx(std::log1p(std::exp(-5.0))).epsilon(1e-12));
    CHECK_THROWS_AS(cls.cross_entropy(Eigen::VectorXd::Zero(2), 0), InvalidArgument);
    CHECK_THROWS_AS(PrototypeClassifier::from_catalog(catalog, 0.0), InvalidArgument);
}

TEST_CASE("select_anchor") {
    Eigen::VectorXd p(3);
    p << 1, 2, 3;
    std::vector<Eigen::VectorXd> one{p};
    CHECK(select_anchor(Eigen::VectorXd::Zero(3), one) == 0);

    Rng rng(5);
    std::vector<Eigen::VectorXd> three{random_vector(rng, 3), random_vector(rng, 3), random_vector(rng, 3)};
    CHECK(select_anchor(three[1], three) == 1);

    SUBCASE("ties go to the first index") {
        std::vector<Eigen::VectorXd> dup{three[2], three[0], three[0]};
        CHECK(select_anchor(three[0], dup) == 1);
    }
    SUBCASE("matches an exhaustive scan") {
        for (int trial = 0; trial < 500; ++trial) {
            const std::size_t n = 1 + rng.index(6);
            std::vector<Eigen::VectorXd> set;
            for (std::size_t i = 0; i < n; ++i) set.push_back(random_vector(rng, 4));
            if (rng.bernoulli(0.3)) set.push_back(set[rng.index(set.size())]);
            const auto f = random_vector(rng, 4);
            std::size_t best = 0;
            for (std::size_t i = 1; i < set.size(); ++i)
                if ((f - set[i]).norm() < (f - set[best]).norm()) best = i;
            REQUIRE(select_anchor(f, set) == best);
        }
    }
    CHECK_THROWS_AS(select_anchor(p, std::vector<Eigen::VectorXd>{}), InvalidArgument);
}

TEST_CASE("embedding model and catalog validation") {
    const auto m = EmbeddingModel::identity(5, 3);
    CHECK(m.input_dim() == 5);
    CHECK(m.output_dim() == 3);
    CHECK_FALSE(m.trained);
    Eigen::VectorXd x(5);
    x << 1, 2, 3, 4, 5;
    CHECK(m.embed(x) == Eigen::Vector3d(1, 2, 3));
    CHECK_THROWS_AS(m.embed(Eigen::VectorXd::Zero(4)), InvalidArgument);
    CHECK_THROWS_AS(EmbeddingModel::identity(2, 3), InvalidArgument);
    auto bad = m;
    bad.weights(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);

    ProductCatalog c;
    c.add("a", true, Eigen::Vector3d(1, 0, 0));
    c.add("a", true, Eigen::Vector3d(0, 1, 0));
    CHECK(c.at("a").products.size() == 2);
    CHECK_THROWS_AS(c.add("a", false, Eigen::Vector3d(0, 0, 1)), InvalidArgument);
    CHECK_THROWS_AS(c.add("b", true, Eigen::Vector2d(0, 0)), InvalidArgument);
    CHECK_THROWS_AS(c.add("b", true, Eigen::Vector3d(0, std::numeric_limits<double>::infinity(), 0)), InvalidArgument);
    CHECK_THROWS_AS(c.at("zzz"), InvalidArgument);
}

TEST_CASE("recollect") {
    ProductCatalog c;
    c.add("known", true, Eigen::Vector3d(1, 0, 0));
    c.add("novel", false, Eigen::Vector3d(0, 0, 5));
    const auto id = EmbeddingModel::identity(3, 3);
    CHECK(recollect(Eigen::Vector3d(1, 0, 0), id, c, 1e-6) == Verdict::known);
    CHECK(recollect(Eigen::Vector3d(0, 0, 5), id, c, 0.1) == Verdict::novel);

    SUBCASE("sweeping k flips the verdict exactly once") {
        Rng rng(9);
        for (int trial = 0; trial < 100; ++trial) {
            const Eigen::VectorXd x = random_vector(rng, 3, 2.0);
            int flips = 0;
            Verdict prev = recollect(x, id, c, 0.0);
            CHECK(prev == Verdict::novel);
            for (double k = 0.0; k < 20.0; k += 0.01) {
                const Verdict v = recollect(x, id, c, k);
                flips += v != prev;
                prev = v;
            }
            CHECK(flips == 1);
            CHECK(prev == Verdict::known);
        }
    }
    ProductCatalog none;
    none.add("x", false, Eigen::Vector3d(1, 0, 0));
    CHECK_THROWS_AS(recollect(Eigen::Vector3d(1, 0, 0), id, none, 1.0), InvalidArgument);
}

TEST_CASE("recognize") {
    ProductCatalog c;
    Rng rng(17);
    for (int o = 0; o < 6; ++o) c.add("o" + std::to_string(o), o < 3, random_vector(rng, 4));
    c.add("o1", true, random_vector(rng, 4));
    const auto id = EmbeddingModel::identity(4, 4);
    RecognitionConfig cfg{0.5, &id, &id};

    const std::vector<std::string> single{"o4"};
    CHECK(recognize(random_vector(rng, 4), cfg, c, single).ranking == single);

    const std::vector<std::string> all{"o0", "o1", "o2", "o3", "o4", "o5"};
    const auto exact = recognize(c.at("o1").products[1], cfg, c, all);
    CHECK(exact.stage == Verdict::known);
    CHECK(exact.ranking.front() == "o1");

    CHECK_THROWS_AS(recognize(random_vector(rng, 4), cfg, c, std::vector<std::string>{}), InvalidArgument);
    CHECK_THROWS_AS(recognize(random_vector(rng, 4), cfg, c, std::vector<std::string>{"nope"}), InvalidArgument);
    RecognitionConfig bad{0.0, &id, &id};
    CHECK_THROWS_AS(recognize(random_vector(rng, 4), bad, c, all), InvalidArgument);

    SUBCASE("appending far-away candidates keeps the prefix") {
        ProductCatalog big = c;
        for (int o = 0; o < 4; ++o) big.add("far" + std::to_string(o), false, Eigen::VectorXd::Constant(4, 100.0 + o));
        for (int trial = 0; trial < 50; ++trial) {
            const auto x = random_vector(rng, 4);
            const auto base = recognize(x, cfg, big, all);
            auto more = all;
            for (int o = 0; o < 4; ++o) more.push_back("far" + std::to_string(o));
            const auto extended = recognize(x, cfg, big, more);
            REQUIRE(extended.ranking.size() == 10);
            CHECK(std::equal(base.ranking.begin(), base.ranking.end(), extended.ranking.begin()));
        }
    }
}

TEST_CASE("rank_candidates tie-break keeps input order") {
    ProductCatalog c;
    c.add("a", true, Eigen::Vector2d(1, 0));
    c.add("b", true, Eigen::Vector2d(0, 1));
    c.add("c", true, Eigen::Vector2d(-1, 0));
    const auto id = EmbeddingModel::identity(2, 2);
    CHECK(rank_candidates(id, Eigen::Vector2d(0, 0), c, std::vector<std::string>{"c", "a", "b"}) ==
          std::vector<std::string>{"c", "a", "b"});
}

TEST_CASE("training edge cases") {
    ClusterWorld cw(11);
    Rng rng(12);
    const auto samples = cw.samples(5, rng);
    const std::size_t d_in = cw.world.observed_dim(), d_out = cw.world.params().dim;
    const auto identity = EmbeddingModel::identity(d_in, d_out);

    TrainConfig zero;
    zero.epochs = 0;
    const auto m0 = train_embedding(samples, cw.catalog, zero);
    CHECK(m0.weights == identity.weights);
    CHECK(m0.bias == identity.bias);
    CHECK_FALSE(m0.trained);

    TrainConfig still;
    still.epochs = 3;
    still.learning_rate = 0.0;
    const auto m1 = train_knet(samples, cw.catalog, still);
    CHECK(m1.weights == identity.weights);
    CHECK(m1.bias == identity.bias);

    std::vector<TrainingSample> one_object;
    for (const auto& s : samples)
        if (s.object_id == samples.front().object_id) one_object.push_back(s);
    CHECK_THROWS_AS(train_embedding(one_object, cw.catalog, TrainConfig{}), InvalidArgument);
    CHECK_THROWS_AS(train_knet(one_object, cw.catalog, TrainConfig{}), InvalidArgument);

    auto stray = samples;
    stray.push_back({"not-in-catalog", samples.front().observed});
    CHECK_THROWS_AS(train_embedding(stray, cw.catalog, TrainConfig{}), InvalidArgument);

    TrainConfig bad;
    bad.momentum = 1.0;
    CHECK_THROWS_AS(train_embedding(samples, cw.catalog, bad), InvalidArgument);
}

TEST_CASE("K-net with lambda 0 follows the N-net trajectory exactly") {
    ClusterWorld cw(21);
    Rng rng(22);
    const auto samples = cw.samples(10, rng);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.lambda = 0.0;
    cfg.seed = 99;
    TrainingReport rn, rk;
    const auto n = train_embedding(samples, cw.catalog, cfg, &rn);
    const auto k = train_knet(samples, cw.catalog, cfg, &rk);
    CHECK(n.weights == k.weights);
    CHECK(n.bias == k.bias);
    CHECK(rn.epoch_loss == rk.epoch_loss);
}

TEST_CASE("training on synthetic clusters reaches 95% held-out top-1") {
    ClusterWorld cw(31);
    Rng rng(32);
    const auto train = cw.samples(20, rng);
    const auto held_out = cw.samples(30, rng);
    const auto products_before = cw.catalog.entries();

    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 33;
    TrainingReport report;
    const auto model = train_embedding(train, cw.catalog, cfg, &report);
    REQUIRE(report.epoch_loss.size() == 20);
    CHECK(report.epoch_loss.back() < report.epoch_loss.front());
    CHECK(model.trained);

    const double before = cw.top1(EmbeddingModel::identity(cw.world.observed_dim(), cw.world.params().dim), held_out);
    const double after = cw.top1(model, held_out);
    MESSAGE("identity top-1 " << before << ", trained top-1 " << after);
    CHECK(after >= 0.95);
    CHECK(after > before);

    // Guided embedding: the product side never moves.
    for (std::size_t i = 0; i < products_before.size(); ++i)
        CHECK(products_before[i].products == cw.catalog.entries()[i].products);

    TrainingReport kreport;
    const auto knet = train_knet(train, cw.catalog, cfg, &kreport);
    CHECK(kreport.epoch_loss.back() < kreport.epoch_loss.front());
    CHECK(cw.top1(knet, held_out) >= 0.95);
}

TEST_CASE("K-net beats N-net on known objects in the family world") {
    evaluation::RecognitionBenchmarkConfig cfg;
    const auto r = evaluation::run_recognition_benchmark(cfg);
    MESSAGE("known K " << r.knet.known() << " N " << r.nnet.known());
    CHECK(r.knet.known() >= r.nnet.known());
}

TEST_CASE("calibrate_k") {
    ProductCatalog c;
    c.add("k", true, Eigen::Vector2d(0, 0));
    c.add("n", false, Eigen::Vector2d(10, 0));
    const auto id = EmbeddingModel::identity(2, 2);
    std::vector<TrainingSample> val{{"k", Eigen::Vector2d(0.1, 0)},
                                    {"k", Eigen::Vector2d(0.3, 0)},
                                    {"n", Eigen::Vector2d(0.9, 0)},
                                    {"n", Eigen::Vector2d(2.0, 0)}};
    const double k = calibrate_k(val, id, c);
    CHECK(k == doctest::Approx(0.6));
    for (const auto& s : val)
        CHECK((recollect(s.observed, id, c, k) == Verdict::known) == (s.object_id == "k"));

    val.resize(2);
    CHECK_THROWS_AS(calibrate_k(val, id, c), InvalidArgument);
}

TEST_CASE("feature and model files round trip") {
    const fs::path dir = fs::temp_directory_path() / "arcpick_recognition_io";
    fs::create_directories(dir);
    Rng rng(41);
    std::vector<FeatureVector> feats;
    for (int i = 0; i < 5; ++i)
        feats.push_back({"object-" + std::to_string(i), FeatureSource::product, random_vector(rng, 7)});
    write_features(dir / "f.feat", feats);
    const auto back = read_features(dir / "f.feat", FeatureSource::product);
    REQUIRE(back.size() == feats.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        CHECK(back[i].object_id == feats[i].object_id);
        CHECK(back[i].source == FeatureSource::product);
        CHECK((back[i].values - feats[i].values).cwiseAbs().maxCoeff() < 1e-6);
    }

    auto model = random_model(rng, 7, 4);
    model.trained = true;
    save_model(dir / "m.embd", model);
    const auto loaded = load_model(dir / "m.embd");
    CHECK(loaded.trained);
    CHECK((loaded.weights - model.weights).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((loaded.bias - model.bias).cwiseAbs().maxCoeff() < 1e-6);

    SUBCASE("corruption is rejected") {
        auto bytes = [](const fs::path& p) {
            std::ifstream in(p, std::ios::binary);
            return std::string(std::istreambuf_iterator<char>(in), {});
        };
        auto put = [](const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; };
        const std::string good = bytes(dir / "f.feat");

        put(dir / "bad.feat", "FEAX" + good.substr(4));
        CHECK_THROWS_AS(read_features(dir / "bad.feat"), FormatError);
        put(dir / "bad.feat", good.substr(0, good.size() - 3));
        CHECK_THROWS_AS(read_features(dir / "bad.feat"), FormatError);
        put(dir / "bad.feat", good + "x");
        CHECK_THROWS_AS(read_features(dir / "bad.feat"), FormatError);
        std::string nan = good;
        const float q = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(nan.data() + nan.size() - 4, &q, 4);
        put(dir / "bad.feat", nan);
        CHECK_THROWS_AS(read_features(dir / "bad.feat"), FormatError);

        const std::string gm = bytes(dir / "m.embd");
        put(dir / "bad.embd", gm.substr(0, gm.size() - 1));
        CHECK_THROWS_AS(load_model(dir / "bad.embd"), FormatError);
        put(dir / "bad.embd", "FEAT" + gm.substr(4));
        CHECK_THROWS_AS(load_model(dir / "bad.embd"), FormatError);
        CHECK_THROWS(load_model(dir / "missing.embd"));
    }
    std::vector<FeatureVector> mixed{feats[0], {"x", FeatureSource::product, random_vector(rng, 3)}};
    CHECK_THROWS_AS(write_features(dir / "mixed.feat", mixed), InvalidArgument);
    fs::remove_all(dir);
}
