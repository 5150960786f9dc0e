#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

#include <json.hpp>

#include "ecofuse/errors.hpp"
#include "ecofuse/fusion.hpp"
#include "ecofuse/rng.hpp"
#include "oracles.hpp"
#include "synth.hpp"

using namespace ecofuse;
using namespace ecofuse::fusion;

TEST_CASE("uniform average of opposing certainties is an even split") {
    const auto bundle = synth::bundle_from_rows({{{1.0, 0.0}}, {{0.0, 1.0}}}, {0});
    const auto avg = average_probabilities(bundle);
    CHECK(avg.rows(0, 0) == 0.5);
    CHECK(avg.rows(0, 1) == 0.5);
    CHECK(avg.model_id == "model_0+model_1");
}

TEST_CASE("degenerate weights reproduce a single model exactly") {
    const auto bundle = synth::random_bundle(2, 2, 12, 3);
    const auto avg = average_probabilities(bundle, EnsembleWeights{{1.0, 0.0}});
    for (std::size_t i = 0; i < bundle.n(); ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(avg.rows(i, j) == bundle.models[0].rows(i, j));
}

TEST_CASE("quarter/three-quarter blend of the standard rows") {
    const auto bundle = synth::bundle_from_rows({{{0.7, 0.3}}, {{0.3, 0.7}}}, {1});
    const auto avg = average_probabilities(bundle, EnsembleWeights{{0.25, 0.75}});
    CHECK(avg.rows(0, 0) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(avg.rows(0, 1) == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("weight length must match the bundle") {
    const auto bundle = synth::random_bundle(4, 3, 5, 2);
    CHECK_THROWS_AS(average_probabilities(bundle, EnsembleWeights{{0.5, 0.5}}),
                    WeightLengthMismatch);
}

TEST_CASE("argmax prediction with first-index tie break") {
    const auto one = synth::model_from_rows("m", {{0.2, 0.8}});
    CHECK(predict_argmax(one).labels == std::vector<int>{1});
    const auto tie = synth::model_from_rows("m", {{0.5, 0.5}});
    CHECK(predict_argmax(tie).labels == std::vector<int>{0});
    const auto multi = synth::model_from_rows("m", {{0.1, 0.7, 0.2}, {0.4, 0.3, 0.3}});
    CHECK(predict_argmax(multi).labels == std::vector<int>{1, 0});
}

TEST_CASE("argmax is invariant under strictly increasing transforms") {
    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng::bounded(gen, 20);
        const std::size_t c = 2 + rng::bounded(gen, 5);
        std::vector<std::vector<double>> rows, warped;
        for (std::size_t i = 0; i < n; ++i) {
            auto row = rng::simplex_point(gen, c);
            std::vector<double> w;
            for (double v : row) w.push_back(v * v * v + 2.0 * v);  // strictly increasing
            rows.push_back(row);
            warped.push_back(w);
        }
        auto plain = synth::model_from_rows("p", rows);
        auto bent = synth::model_from_rows("b", warped);  // not row-stochastic, argmax only
        CHECK(predict_argmax(plain).labels == predict_argmax(bent).labels);
    }
}

TEST_CASE("averaged rows stay inside the simplex") {
    std::mt19937_64 gen(91);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t k = 2 + rng::bounded(gen, 4);
        const auto bundle = synth::random_bundle(gen(), k, 10, 4);
        auto wv = rng::simplex_point(gen, k);
        const auto avg = average_probabilities(bundle, EnsembleWeights{wv});
        for (std::size_t i = 0; i < avg.n(); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < avg.c(); ++j) {
                CHECK(avg.rows(i, j) >= 0.0);
                CHECK(avg.rows(i, j) <= 1.0);
                sum += avg.rows(i, j);
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("explicit uniform weights equal the absent-weights path bitwise") {
    const auto bundle = synth::random_bundle(12, 3, 9, 4);
    const auto a = average_probabilities(bundle);
    const auto b = average_probabilities(bundle, EnsembleWeights::uniform(3));
    CHECK(a.rows == b.rows);
}

TEST_CASE("accuracy against ground truth") {
    data::LabelVector pred, truth;
    pred.sample_ids = truth.sample_ids = synth::sample_ids(4);
    pred.labels = {0, 1, 1, 0};
    truth.labels = {0, 1, 0, 0};
    CHECK(accuracy(pred, truth) == 0.75);
    data::LabelVector longer = truth;
    longer.labels.push_back(1);
    longer.sample_ids.push_back("s4");
    CHECK_THROWS_AS(accuracy(pred, longer), ShapeMismatch);
}

TEST_CASE("one-hot model plus uniform noise resolves to the centered optimum") {
    const auto bundle = synth::one_hot_plus_uniform({0, 1, 0, 1, 1, 0}, 2);
    const auto res = optimize_weights(bundle, OptimizerConfig{});
    CHECK(res.achieved_accuracy == 1.0);
    // every w_A > 0 attains accuracy 1, so the closest-to-uniform rule picks 1/2
    CHECK(res.weights.weights[0] == 0.5);
    CHECK(res.weights.weights[1] == 0.5);
}

TEST_CASE("identical models leave the optimizer at uniform") {
    const auto one = synth::random_bundle(6, 1, 15, 3);
    data::AlignedBundle bundle;
    bundle.models = {one.models[0], one.models[0]};
    bundle.models[1].model_id = "copy";
    bundle.labels = one.labels;
    const auto res = optimize_weights(bundle, OptimizerConfig{});
    CHECK(res.weights.weights[0] == 0.5);
    CHECK(res.weights.weights[1] == 0.5);
}

TEST_CASE("two-model optimum matches the exhaustive fine sweep") {
    OptimizerConfig cfg;
    cfg.grid_step = 0.001;
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        const auto bundle = synth::random_bundle(seed, 2, 40, 3);
        const auto res = optimize_weights(bundle, cfg);
        const auto sweep = oracle::sweep_two_model_weights(bundle, 1000);
        CHECK(res.achieved_accuracy == sweep.best_accuracy);
        double nearest = 1e9;
        for (double wa : sweep.optimal_was)
            nearest = std::min(nearest, std::fabs(res.weights.weights[0] - wa));
        CHECK(nearest <= cfg.grid_step + 1e-12);
    }
}

TEST_CASE("three-model grid never loses to uniform or the corners") {
    std::mt19937_64 gen(21);
    std::vector<double> scratch;
    for (int trial = 0; trial < 10; ++trial) {
        const auto bundle = synth::random_bundle(gen(), 3, 25, 3);
        const auto res = optimize_weights(bundle, OptimizerConfig{});
        const auto uniform_acc =
            accuracy(predict_argmax(average_probabilities(bundle)), bundle.labels);
        CHECK(res.achieved_accuracy >= uniform_acc);
        for (std::size_t m = 0; m < 3; ++m) {
            CHECK(res.achieved_accuracy >= synth::single_model_accuracy(bundle, m));
        }
        // result reproduces its own claimed accuracy through the public path
        const auto again =
            accuracy(predict_argmax(average_probabilities(bundle, res.weights)), bundle.labels);
        CHECK(again == res.achieved_accuracy);
    }
}

TEST_CASE("optimizer outputs stay on the simplex for any k") {
    std::mt19937_64 gen(33);
    OptimizerConfig cfg;
    cfg.restarts = 4;
    cfg.max_iterations = 60;
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t k = 2 + rng::bounded(gen, 5);  // exercises both branches
        const auto bundle = synth::random_bundle(gen(), k, 12, 3);
        cfg.seed = gen();
        const auto res = optimize_weights(bundle, cfg);
        REQUIRE(res.weights.k() == k);
        double sum = 0.0;
        for (double w : res.weights.weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-9);
        CHECK_NOTHROW(res.weights.validate());
    }
}

TEST_CASE("compass search for many models beats or ties uniform") {
    std::mt19937_64 gen(47);
    for (int trial = 0; trial < 5; ++trial) {
        const auto bundle = synth::random_bundle(gen(), 5, 30, 3);
        OptimizerConfig cfg;
        cfg.seed = trial;
        const auto res = optimize_weights(bundle, cfg);
        const auto uniform_acc =
            accuracy(predict_argmax(average_probabilities(bundle)), bundle.labels);
        CHECK(res.achieved_accuracy >= uniform_acc);
    }
}

TEST_CASE("optimizer determinism for a fixed seed") {
    const auto bundle = synth::random_bundle(71, 4, 20, 3);
    OptimizerConfig cfg;
    cfg.seed = 9;
    const auto a = optimize_weights(bundle, cfg);
    const auto b = optimize_weights(bundle, cfg);
    CHECK(a.weights.weights == b.weights.weights);
    CHECK(a.achieved_accuracy == b.achieved_accuracy);
}

TEST_CASE("optimizer input validation") {
    const auto single = synth::random_bundle(3, 1, 8, 2);
    CHECK_THROWS_AS(optimize_weights(single, OptimizerConfig{}), TooFewModels);
    const auto pair = synth::random_bundle(3, 2, 8, 2);
    OptimizerConfig bad;
    bad.grid_step = 0.0;
    CHECK_THROWS_AS(optimize_weights(pair, bad), ValidationError);
    bad.grid_step = 0.01;
    bad.restarts = 0;
    CHECK_THROWS_AS(optimize_weights(pair, bad), ValidationError);
}

TEST_CASE("weights validate rejects bad vectors") {
    CHECK_THROWS_AS((EnsembleWeights{{0.6, 0.6}}).validate(), ValidationError);
    CHECK_THROWS_AS((EnsembleWeights{{1.2, -0.2}}).validate(), ValidationError);
    CHECK_NOTHROW(EnsembleWeights::uniform(7).validate());
}

TEST_CASE("simplex projection") {
    SUBCASE("feasible points pass through unchanged") {
        std::mt19937_64 gen(14);
        for (int trial = 0; trial < 20; ++trial) {
            const auto p = rng::simplex_point(gen, 2 + rng::bounded(gen, 5));
            CHECK(project_to_simplex(p) == p);
        }
    }
    SUBCASE("known projection") {
        const auto p = project_to_simplex({1.5, 0.5});
        CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("arbitrary vectors land on the simplex") {
        std::mt19937_64 gen(15);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t k = 1 + rng::bounded(gen, 6);
            std::vector<double> v;
            for (std::size_t i = 0; i < k; ++i)
                v.push_back((rng::uniform01(gen) - 0.5) * 10.0);
            const auto p = project_to_simplex(v);
            double sum = 0.0;
            for (double x : p) {
                CHECK(x >= 0.0);
                sum += x;
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("weighted average agrees with the brute-force oracle") {
    std::mt19937_64 gen(26);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t k = 1 + rng::bounded(gen, 4);
        const auto bundle = synth::random_bundle(gen(), k, 15, 4);
        const auto wv = rng::simplex_point(gen, k);
        const auto avg = average_probabilities(bundle, EnsembleWeights{wv});
        const auto expect = oracle::weighted_average(bundle, wv);
        for (std::size_t i = 0; i < bundle.n(); ++i)
            for (std::size_t j = 0; j < bundle.c(); ++j)
                CHECK(std::fabs(avg.rows(i, j) - expect[i][j]) <= 1e-12);
        CHECK(predict_argmax(avg).labels == oracle::argmax_labels(expect));
    }
}

TEST_CASE("weights json records the mapping and provenance") {
    const auto text = weights_to_json(EnsembleWeights{{0.25, 0.75}}, {"resnet", "mobilenet"},
                                      0.9, ObjectiveSplit::validation);
    const auto parsed = nlohmann::json::parse(text);
    CHECK(parsed.at("model_ids") == nlohmann::json({"resnet", "mobilenet"}));
    CHECK(parsed.at("weights")[0].get<double>() == 0.25);
    CHECK(parsed.at("weights")[1].get<double>() == 0.75);
    CHECK(parsed.at("achieved_accuracy").get<double>() == 0.9);
    CHECK(parsed.at("objective_split").get<std::string>() == "validation");
}
