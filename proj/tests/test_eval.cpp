#include <gtest/gtest.h>

#include <cmath>

#include "deisam/eval.hpp"
#include "deisam/rng.hpp"

using namespace deisam;

namespace {

std::string fixture(const std::string& name) { return std::string(DEISAM_TEST_DATA) + "/" + name; }

Box random_box(rng& r) { return {std::floor(r.uniform(0, 80)), std::floor(r.uniform(0, 80)), 5 + std::floor(r.uniform(0, 20)), 5 + std::floor(r.uniform(0, 20))}; }

EvalInstance random_instance(rng& r) {
    EvalInstance in;
    const std::size_t na = 1 + r.index(4);
    for (std::size_t i = 0; i < na; ++i) in.answers.push_back(random_box(r));
    const std::size_t np = r.index(7);
    for (std::size_t i = 0; i < np; ++i) {
        // half the predictions are jittered copies of answers
        Box b = r.bernoulli(0.5) ? in.answers[r.index(na)] : random_box(r);
        b.x += std::floor(r.uniform(0, 3));
        in.predictions.push_back({b, r.unit()});
    }
    return in;
}

}  // namespace

TEST(Iou, Examples) {
    EXPECT_NEAR(iou({0, 0, 10, 10}, {5, 0, 10, 10}), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
    EXPECT_EQ(iou({0, 0, 10, 10}, {10, 0, 10, 10}), 0.0);
}

TEST(Ap, WrongOneRankedHigher) {
    const std::vector<ScoredBox> preds{{{50, 50, 10, 10}, 0.9}, {{0, 0, 10, 10}, 0.4}};
    const std::vector<Box> answers{{0, 0, 10, 10}};
    EXPECT_DOUBLE_EQ(average_precision(preds, answers, 0.5), 0.5);
}

TEST(Ap, MeanOfTwo) {
    const std::vector<double> aps{1.0, 0.0};
    EXPECT_EQ(mean_average_precision(aps), 0.5);
    EXPECT_THROW(mean_average_precision(std::vector<double>{}), empty_evaluation);
    EXPECT_THROW(evaluate({}, EvalConfig{}), empty_evaluation);
}

TEST(Ap, EdgeCases) {
    const std::vector<Box> answers{{0, 0, 10, 10}};
    EXPECT_EQ(average_precision(std::vector<ScoredBox>{}, answers, 0.5), 0.0);
    EXPECT_THROW(average_precision(std::vector<ScoredBox>{}, std::vector<Box>{}, 0.5), input_error);
    EvalConfig bad;
    bad.match_iou = 0;
    EXPECT_THROW(bad.validate(), input_error);
}

TEST(Ap, HandComputedFixture) {
    const json j = read_json_file(fixture("eval_five.json"));
    const auto instances = eval_instances_from_json(j);
    ASSERT_EQ(instances.size(), 5u);
    EvalConfig cfg;
    cfg.match_iou = j["match_iou"].get<double>();
    const auto rep = evaluate(instances, cfg);
    // 1; 1/2; 1/2 + 1/2 * 2/3 = 5/6; 1/2; 1/3 + 1/3 * 2/3 = 5/9; mean 61/90
    const auto expected = j["expected"]["ap"].get<std::vector<double>>();
    ASSERT_EQ(rep.per_instance.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(rep.per_instance[i].ap, expected[i], 1e-9) << i;
    EXPECT_NEAR(rep.map, j["expected"]["mAP"].get<double>(), 1e-9);
    EXPECT_NEAR(rep.map, 61.0 / 90.0, 1e-12);
    EXPECT_EQ(rep.to_json()["instances"][4]["matches"].size(), 2u);
    EXPECT_NE(rep.table().find("mAP"), std::string::npos);
}

TEST(Ap, JsonRoundTrip) {
    const auto instances = eval_instances_from_json(read_json_file(fixture("eval_five.json")));
    const auto back = eval_instances_from_json(eval_instances_to_json(instances));
    ASSERT_EQ(back.size(), instances.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].answers, instances[i].answers);
        EXPECT_EQ(back[i].predictions.size(), instances[i].predictions.size());
    }
    EXPECT_THROW(eval_instances_from_json(json::parse(R"({"instances": [{"predictions": []}]})")), schema_error);
}

TEST(Property, MonotoneScoreTransformInvariance) {
    rng r(21);
    for (int trial = 0; trial < 1000; ++trial) {
        const EvalInstance in = random_instance(r);
        auto transformed = in.predictions;
        const int kind = static_cast<int>(r.index(3));
        for (auto& p : transformed) {
            if (kind == 0) p.score = std::exp(4 * p.score) + 7;
            if (kind == 1) p.score = p.score * p.score * p.score;
            if (kind == 2) p.score = 1 / (1 + std::exp(-10 * (p.score - 0.5)));
        }
        EXPECT_EQ(average_precision(in.predictions, in.answers, 0.5), average_precision(transformed, in.answers, 0.5));
    }
}

TEST(Property, BoundsAndPerfectPredictions) {
    rng r(22);
    for (int trial = 0; trial < 500; ++trial) {
        const EvalInstance in = random_instance(r);
        const double ap = average_precision(in.predictions, in.answers, 0.5);
        EXPECT_GE(ap, 0.0);
        EXPECT_LE(ap, 1.0);
        std::vector<ScoredBox> perfect;
        for (const auto& a : in.answers) perfect.push_back({a, 2.0});
        for (const auto& p : in.predictions) perfect.push_back({p.box, p.score});
        EXPECT_EQ(average_precision(perfect, in.answers, 0.5), 1.0);
    }
}

TEST(Property, LowScoredDuplicateNeverHelps) {
    rng r(23);
    for (int trial = 0; trial < 500; ++trial) {
        EvalInstance in = random_instance(r);
        if (in.predictions.empty()) continue;
        const double before = average_precision(in.predictions, in.answers, 0.5);
        auto dup = in.predictions[r.index(in.predictions.size())];
        dup.score = -1.0;
        in.predictions.push_back(dup);
        EXPECT_LE(average_precision(in.predictions, in.answers, 0.5), before + 1e-15);
    }
}
