#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cncd/crp/trainer.hpp"
#include "cncd/scene/scene.hpp"
#include "support/instances.hpp"

using namespace cncd;

namespace {

std::vector<PointScene> toy_dataset(std::size_t num_base = 4, std::uint64_t seed = 1) {
    SceneSpec spec;
    spec.num_base = num_base;
    spec.num_novel = 2;
    spec.points = 256;
    spec.seed = seed;
    return generate_dataset(spec, 3, 1);
}

CrpConfig small_config() {
    CrpConfig cfg;
    cfg.epochs = 3;
    cfg.hidden = 16;
    cfg.feature_dim = 8;
    cfg.adversary_hidden = 8;
    cfg.batch_points = 64;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST(ClassificationLoss, Examples) {
    EXPECT_NEAR(classification_loss(Matrix{{1.0, 0.0}}, std::vector<int>{0}), -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-15);
    EXPECT_NEAR(classification_loss(Matrix{{1.0, 0.0}}, std::vector<int>{0}), 0.313262, 1e-6);
    EXPECT_NEAR(classification_loss(Matrix{{0.3, 0.3}, {-2.0, -2.0}}, std::vector<int>{0, 1}), std::log(2.0), 1e-15);
    EXPECT_LT(classification_loss(Matrix{{20.0, 0.0}}, std::vector<int>{0}), 1e-8);
    EXPECT_THROW(classification_loss(Matrix{{1.0, 0.0}}, std::vector<int>{2}), DataError);
    EXPECT_THROW(classification_loss(Matrix{{1.0, 0.0}}, std::vector<int>{-1}), DataError);
}

TEST(AdversarialLoss, Examples) {
    EXPECT_LE(adversarial_loss(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0}), 1e-6);
    EXPECT_NEAR(adversarial_loss(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1}), std::log(2.0), 1e-15);
    EXPECT_NEAR(adversarial_loss(std::vector<double>{0.9}, std::vector<int>{1}), -std::log(0.9), 1e-15);
    EXPECT_NEAR(adversarial_loss(std::vector<double>{0.9}, std::vector<int>{1}), 0.1053605, 1e-7);
    EXPECT_TRUE(std::isfinite(adversarial_loss(std::vector<double>{0.0}, std::vector<int>{1})));
}

TEST(SimilarityWeights, Examples) {
    const Matrix z{{1.0, 0.0}, {0.3, -0.2}};
    const SoftAssignment one = similarity_weights(z, PrototypeSet{Matrix{{0.5, 0.5}}});
    for (double w : one.weights.data()) EXPECT_EQ(w, 1.0);

    const SoftAssignment sym = similarity_weights(Matrix{{1.0, 0.0}}, PrototypeSet{Matrix{{1.0, 1.0}, {1.0, -1.0}}});
    EXPECT_DOUBLE_EQ(sym.weights(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(sym.weights(0, 1), 0.5);

    // cosines (1, 0)
    const SoftAssignment w = similarity_weights(Matrix{{2.0, 0.0}}, PrototypeSet{Matrix{{1.0, 0.0}, {0.0, 3.0}}});
    EXPECT_NEAR(w.weights(0, 0), std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
    EXPECT_NEAR(w.weights(0, 0), 0.731059, 1e-6);
    EXPECT_NEAR(w.weights(0, 1), 0.268941, 1e-6);

    EXPECT_THROW(similarity_weights(Matrix{{0.0, 0.0}}, PrototypeSet{Matrix{{1.0, 0.0}}}), DegenerateInputError);
}

TEST(SimilarityWeights, RowsSumToOneAndStayInsideUnitInterval) {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const Matrix z = fixtures::random_matrix(rng, 7, 4), c = fixtures::random_matrix(rng, 3, 4);
        const SoftAssignment w = similarity_weights(z, PrototypeSet{c});
        for (std::size_t j = 0; j < z.rows(); ++j) {
            double s = 0.0;
            for (double v : w.weights.row(j)) {
                EXPECT_GT(v, 0.0);
                EXPECT_LT(v, 1.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(UpdatePrototypes, Examples) {
    const PrototypeSet c{Matrix{{1.0, 0.0}, {0.0, 1.0}}, 4};
    const PrototypeSet single = update_prototypes(Matrix{{0.2, -0.7}}, c, SoftAssignment{Matrix{{0.4, 0.6}}});
    EXPECT_EQ(single.iteration, 5u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_DOUBLE_EQ(single.prototypes(i, 0), 0.2);
        EXPECT_DOUBLE_EQ(single.prototypes(i, 1), -0.7);
    }

    const Matrix z{{1.0, 0.0}, {0.0, 1.0}};
    const PrototypeSet mid = update_prototypes(z, c, SoftAssignment{Matrix{{0.5, 0.75}, {0.5, 0.25}}});
    EXPECT_DOUBLE_EQ(mid.prototypes(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(mid.prototypes(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(mid.prototypes(1, 0), 0.75);
    EXPECT_DOUBLE_EQ(mid.prototypes(1, 1), 0.25);
}

TEST(UpdatePrototypes, StaysInsideFeatureBoundingBox) {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        const Matrix z = fixtures::random_matrix(rng, 9, 3, 2.0);
        const PrototypeSet c{fixtures::random_matrix(rng, 4, 3)};
        const PrototypeSet next = update_prototypes(z, c, similarity_weights(z, c));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t r = 0; r < 3; ++r) {
                double lo = z(0, r), hi = z(0, r);
                for (std::size_t j = 1; j < z.rows(); ++j) lo = std::min(lo, z(j, r)), hi = std::max(hi, z(j, r));
                EXPECT_GE(next.prototypes(i, r), lo - 1e-12);
                EXPECT_LE(next.prototypes(i, r), hi + 1e-12);
            }
    }
}

TEST(PrototypeMatchingLoss, Examples) {
    const Matrix z{{0.6, 0.8}};
    const PrototypeSet c{z};
    const SoftAssignment w{Matrix{{1.0}}};
    EXPECT_NEAR(prototype_matching_loss(z, c, w, 0.0), -1.0, 1e-15);
    EXPECT_NEAR(prototype_matching_loss(z, c, w, 0.02), -0.98, 1e-15);
    EXPECT_THROW(prototype_matching_loss(z, c, w, -0.1), ParameterError);
}

TEST(PrototypeMatchingLoss, NonDecreasingInLambda) {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        const Matrix z = fixtures::random_matrix(rng, 5, 3);
        const PrototypeSet c{fixtures::random_matrix(rng, 2, 3)};
        const SoftAssignment w = similarity_weights(z, c);
        double prev = prototype_matching_loss(z, c, w, 0.0);
        for (double lambda = 0.01; lambda < 1.0; lambda += 0.07) {
            const double cur = prototype_matching_loss(z, c, w, lambda);
            EXPECT_GE(cur, prev);
            prev = cur;
        }
    }
}

TEST(PrototypeMatchingLoss, DifferentiableFormAgreesWithFixedWeights) {
    Rng rng(6);
    const Matrix z = fixtures::random_matrix(rng, 6, 3);
    const PrototypeSet c{fixtures::random_matrix(rng, 3, 3)};
    ad::Tape t;
    const double diff = prototype_matching_loss(t.constant(z), t.constant(c.prototypes), 0.02).scalar();
    EXPECT_NEAR(diff, prototype_matching_loss(z, c, similarity_weights(z, c), 0.02), 1e-12);
}

TEST(PrototypeIteration, ConvergesWithShrinkingSteps) {
    const auto data = toy_dataset();
    const PointBatch b = collect_base_points(data);
    const ExtractorParams e = init_extractor(b.x.cols(), 16, 8, 4, 11);
    const Matrix z = features(e, b.x);
    const auto res = iterate_prototypes(z, class_mean_prototypes(z, b.labels, 4), 1e-6, 200, 0.06);
    ASSERT_TRUE(res.converged);
    EXPECT_LE(res.iterations, 200u);
    EXPECT_LT(res.movement.back(), 1e-6);
    // after the initial transient the steps contract
    for (std::size_t k = res.movement.size() / 2 + 1; k < res.movement.size(); ++k)
        EXPECT_LE(res.movement[k], res.movement[k - 1]);
}

TEST(ClassMeanPrototypes, RejectsEmptyClassAndBadLabels) {
    const Matrix z{{1.0, 0.0}, {0.0, 1.0}};
    EXPECT_THROW(class_mean_prototypes(z, std::vector<int>{0, 0}, 2), DataError);
    EXPECT_THROW(class_mean_prototypes(z, std::vector<int>{0, 3}, 2), DataError);
    const PrototypeSet c = class_mean_prototypes(z, std::vector<int>{1, 0}, 2);
    EXPECT_EQ(c.prototypes, (Matrix{{0.0, 1.0}, {1.0, 0.0}}));
}

TEST(TrainStep, EmptyOrInconsistentBatchIsUsageError) {
    ExtractorParams e = init_extractor(4, 8, 4, 2, 1);
    AdversaryParams a = init_adversary(4, 4, 2);
    const CrpConfig cfg = small_config();
    CrpOptimizers opt = make_crp_optimizers(e, a, cfg);
    EXPECT_THROW(train_step(PointBatch{Matrix(0, 4), {}, {}}, e, a, opt, cfg, 0.5), UsageError);
    EXPECT_THROW(train_step(PointBatch{Matrix(2, 4), {0, 1}, {1}}, e, a, opt, cfg, 0.5), UsageError);
}

TEST(TrainStep, AdversaryStepDecreasesItsLoss) {
    Rng rng(12);
    for (int t = 0; t < 10; ++t) {
        const PointBatch b{fixtures::random_matrix(rng, 32, 5), fixtures::random_labels(rng, 32, 3),
                           fixtures::random_labels(rng, 32, 2)};
        const ExtractorParams e = init_extractor(5, 8, 4, 3, rng.next_u64());
        AdversaryParams a = init_adversary(4, 6, rng.next_u64());
        OptimState opt = make_optim_state(a.tensors, 1e-4);
        CrpConfig cfg;
        const double before = adversary_step(b, e, a, opt, cfg);
        const Matrix p = adversary_probabilities(a, features(e, b.x));
        EXPECT_LT(adversarial_loss(p.data(), b.tags), before);
    }
}

TEST(TrainStep, ExtractorStepDecreasesItsObjective) {
    Rng rng(13);
    for (int t = 0; t < 10; ++t) {
        const PointBatch b{fixtures::random_matrix(rng, 32, 5), fixtures::random_labels(rng, 32, 3),
                           fixtures::random_labels(rng, 32, 2)};
        ExtractorParams e = init_extractor(5, 8, 4, 3, rng.next_u64());
        AdversaryParams a = init_adversary(4, 6, rng.next_u64());
        CrpConfig cfg;
        cfg.adversary_steps = 0;  // keep φ fixed so both evaluations share it
        cfg.lr.initial = 1e-4;
        CrpOptimizers opt = make_crp_optimizers(e, a, cfg);
        const LossReport before = train_step(b, e, a, opt, cfg, 0.5);
        ad::Tape tape;
        const auto after = extractor_objective(tape, bind_params(tape, e.tensors, false), e.slope, e.center, &a, b, 0.5,
                                               nullptr, cfg);
        EXPECT_LT(after.total.scalar(), before.l_total);
        EXPECT_NEAR(before.l_total, before.l_cls - 0.5 * before.l_adv, 1e-12);
    }
}

TEST(TrainStep, ZeroAdversaryWeightGivesMonotoneClassificationLoss) {
    // Two separable classes, full batch.
    Rng rng(14);
    PointBatch b{Matrix(40, 3), {}, {}};
    for (std::size_t i = 0; i < 40; ++i) {
        const int y = static_cast<int>(i % 2);
        b.x(i, 0) = (y ? 2.0 : -2.0) + 0.3 * rng.normal();
        b.x(i, 1) = 0.3 * rng.normal();
        b.x(i, 2) = 1.0 + 0.3 * rng.normal();
        b.labels.push_back(y);
        b.tags.push_back(rng.bernoulli(0.5));
    }
    ExtractorParams e = init_extractor(3, 8, 4, 2, 77);
    AdversaryParams a = init_adversary(4, 4, 78);
    CrpConfig cfg;
    cfg.weight_decay = 0.0;
    CrpOptimizers opt = make_crp_optimizers(e, a, cfg);
    double prev = train_step(b, e, a, opt, cfg, 0.0).l_cls;
    for (int s = 0; s < 100; ++s) {
        const double cur = train_step(b, e, a, opt, cfg, 0.0).l_cls;
        EXPECT_LE(cur, prev + 1e-12) << "step " << s;
        prev = cur;
    }
}

TEST(FitCrp, ZeroAdversaryWeightMatchesAdversaryFreeTraining) {
    const auto data = toy_dataset();
    CrpConfig with = small_config();
    with.lambda_adv = 0.0;
    CrpConfig without = with;
    without.adversary_enabled = false;
    const CrpResult a = fit_crp(data, with), b = fit_crp(data, without);
    EXPECT_EQ(a.extractor, b.extractor);
    EXPECT_EQ(a.prototypes, b.prototypes);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].l_cls, b.trace[k].l_cls);
}

TEST(FitCrp, DeterministicUnderFixedSeed) {
    const auto data = toy_dataset();
    const CrpConfig cfg = small_config();
    const CrpResult a = fit_crp(data, cfg), b = fit_crp(data, cfg);
    EXPECT_EQ(a.extractor, b.extractor);
    EXPECT_EQ(a.adversary, b.adversary);
    EXPECT_EQ(a.prototypes, b.prototypes);
    CrpConfig other = cfg;
    other.seed = 6;
    EXPECT_NE(fit_crp(data, other).extractor, a.extractor);
}

TEST(FitCrp, TwoSeparatedClassesGivePrototypesAlongClassMeans) {
    const auto data = toy_dataset(2, 4);
    CrpConfig cfg = small_config();
    cfg.epochs = 20;
    cfg.lr.initial = 1e-2;
    const CrpResult r = fit_crp(data, cfg);
    EXPECT_TRUE(r.prototypes_converged);
    const PointBatch b = collect_base_points(train_scenes_of(data));
    const Matrix z = features(r.extractor, b.x);
    const PrototypeSet means = class_mean_prototypes(z, b.labels, 2);
    for (std::size_t i = 0; i < 2; ++i)
        EXPECT_GT(cosine_sim(r.prototypes.prototypes.row(i), means.prototypes.row(i)), 0.99);
    for (const auto& rep : r.trace) {
        EXPECT_GE(rep.l_cls, 0.0);
        EXPECT_GE(rep.l_adv, 0.0);
    }
}

TEST(FitCrp, NoTrainScenesIsUsageError) {
    auto data = toy_dataset();
    std::vector<PointScene> test_only{data.back()};
    EXPECT_THROW(fit_crp(test_only, small_config()), UsageError);
}
