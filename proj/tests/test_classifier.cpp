#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace activegan;
using namespace testing_support;

namespace {

LabeledDataset two_blobs(std::size_t per_class, double sep, double noise, std::uint64_t seed) {
    SeededRng rng(seed);
    LabeledDataset d;
    d.num_classes = 2;
    d.features = Tensor(Shape{2 * per_class, 2});
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const std::size_t y = i < per_class ? 0 : 1;
        d.features.at(i, 0) = (y == 0 ? -sep : sep) + noise * rng.normal();
        d.features.at(i, 1) = noise * rng.normal();
        d.labels.push_back(y);
    }
    return d;
}

double accuracy(const ProbClassifier& c, const LabeledDataset& d) {
    const auto p = c.predict(d.features);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.size(); ++i) ok += p[i] == d.labels[i];
    return static_cast<double>(ok) / static_cast<double>(d.size());
}

}  // namespace

TEST(Classifier, SeparableBlobsReachPerfectAccuracy) {
    const auto d = two_blobs(50, 3.0, 0.5, 1);
    SeededRng rng(0);
    const auto c = train_classifier(d, ClassifierHyperparams{}, rng);
    EXPECT_EQ(accuracy(c, d), 1.0);
}

TEST(Classifier, ObjectiveDecreasesMonotonically) {
    const auto d = toy_data(3, 40, 1.0);
    for (auto mode : {CalibrationMode::softmax, CalibrationMode::platt}) {
        ClassifierHyperparams hp;
        hp.mode = mode;
        SeededRng rng(0);
        const auto c = train_classifier(d, hp, rng);
        const auto& t = c.objective_trace();
        ASSERT_EQ(t.size(), hp.epochs);
        for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LE(t[i], t[i - 1] + 1e-9) << "epoch " << i;
    }
}

TEST(Classifier, DeterministicUnderSeed) {
    const auto d = toy_data(4, 30);
    SeededRng a(5), b(5);
    const auto ca = train_classifier(d, ClassifierHyperparams{}, a);
    const auto cb = train_classifier(d, ClassifierHyperparams{}, b);
    EXPECT_EQ(ca.weights(), cb.weights());
    EXPECT_EQ(ca.bias(), cb.bias());
}

TEST(Classifier, MiniBatchModeIsDeterministicAndLearns) {
    const auto d = toy_data(5, 60);
    ClassifierHyperparams hp;
    hp.full_batch_limit = 10;  // force mini-batches
    hp.learning_rate = 0.5;
    hp.epochs = 30;
    SeededRng a(1), b(1);
    const auto ca = train_classifier(d, hp, a);
    const auto cb = train_classifier(d, hp, b);
    EXPECT_EQ(ca.weights(), cb.weights());
    EXPECT_GT(accuracy(ca, d), 0.95);
}

TEST(Classifier, DuplicatedDatasetGivesSameDecisionFunction) {
    const auto d = toy_data(6, 25, 1.0);
    const auto dd = LabeledDataset::concat(d, d);
    SeededRng a(0), b(0);
    const auto c1 = train_classifier(d, ClassifierHyperparams{}, a);
    const auto c2 = train_classifier(dd, ClassifierHyperparams{}, b);
    for (std::size_t i = 0; i < c1.weights().size(); ++i) EXPECT_NEAR(c1.weights()[i], c2.weights()[i], 1e-9);
    SeededRng probe(3);
    const Tensor x = random_tensor({500, 2}, probe, -3, 3);
    EXPECT_EQ(c1.predict(x), c2.predict(x));
}

TEST(Classifier, LabelPermutationPermutesWeights) {
    const auto d = toy_data(7, 25, 1.0);
    const std::vector<std::size_t> perm{2, 0, 1};
    LabeledDataset p = d;
    for (auto& y : p.labels) y = perm[y];
    SeededRng a(0), b(0);
    const auto c = train_classifier(d, ClassifierHyperparams{}, a);
    const auto cp = train_classifier(p, ClassifierHyperparams{}, b);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(cp.weights().at(r, perm[k]), c.weights().at(r, k), 1e-9);
    }
    const auto pred = c.predict(d.features), pred_p = cp.predict(d.features);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(pred_p[i], perm[pred[i]]);
}

TEST(Classifier, Errors) {
    auto d = toy_data(8, 10);
    LabeledDataset single = d;
    for (auto& y : single.labels) y = 1;
    SeededRng rng(0);
    EXPECT_THROW(train_classifier(single, ClassifierHyperparams{}, rng), ContractError);
    LabeledDataset bad = d;
    bad.features.at(0, 0) = std::nan("");
    EXPECT_THROW(train_classifier(bad, ClassifierHyperparams{}, rng), NumericError);
    const auto c = train_classifier(d, ClassifierHyperparams{}, rng);
    EXPECT_THROW(c.predict_proba(Tensor(Shape{2, 3})), ShapeError);
}

TEST(PredictProba, ZeroWeightsAndEqualScoresAreUniform) {
    ProbClassifier c(2, 4, ClassifierHyperparams{});
    const auto p = c.predict_proba(std::vector<double>{1.5, -3.0});
    for (double v : p) EXPECT_NEAR(v, 0.25, 1e-15);
    ProbClassifier s(1, 3, ClassifierHyperparams{});
    s.weights() = Tensor::matrix({{2.0, 2.0, 2.0}});
    const auto q = s.predict_proba(std::vector<double>{0.7});
    for (double v : q) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(PredictProba, RowsSumToOneInBothModes) {
    const auto d = toy_data(9, 30, 1.0);
    SeededRng probe(2);
    const Tensor x = random_tensor({300, 2}, probe, -10, 10);
    for (auto mode : {CalibrationMode::softmax, CalibrationMode::platt}) {
        ClassifierHyperparams hp;
        hp.mode = mode;
        SeededRng rng(0);
        const auto c = train_classifier(d, hp, rng);
        const Tensor p = c.predict_proba(x);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double total = 0.0;
            for (double v : p.row(r)) {
                EXPECT_GE(v, 0.0);
                total += v;
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
}

TEST(PredictProba, ArgmaxInvariantToScoreShift) {
    const auto d = toy_data(10, 30, 1.0);
    SeededRng rng(0);
    auto c = train_classifier(d, ClassifierHyperparams{}, rng);
    const auto before = c.predict(d.features);
    for (std::size_t k = 0; k < 3; ++k) c.bias()[k] += 17.25;
    EXPECT_EQ(c.predict(d.features), before);
}

TEST(Calibration, MidpointOfSymmetricBlobsIsHalf) {
    const auto d = two_blobs(100, 2.0, 1.0, 11);
    for (auto mode : {CalibrationMode::softmax, CalibrationMode::platt}) {
        ClassifierHyperparams hp;
        hp.mode = mode;
        SeededRng rng(0);
        const auto c = train_classifier(d, hp, rng);
        const auto p = c.predict_proba(std::vector<double>{0.0, 0.0});
        EXPECT_NEAR(p[0], 0.5, 0.05) << to_string(mode);
    }
}

TEST(Calibration, AppendingDuplicatesIsStable) {
    const auto train = toy_data(12, 34, 1.0);
    SyntheticSpec ts;
    ts.noise = 1.0;
    ts.per_class = 300;
    ts.seed = 99;
    const auto test = standardize_with(make_synthetic(ts), *train.standardization);
    SeededRng a(0), b(0);
    const auto c1 = train_classifier(train, ClassifierHyperparams{}, a);
    const auto c2 = train_classifier(LabeledDataset::concat(train, train), ClassifierHyperparams{}, b);
    const double f1 = f_score(c1.predict(test.features), test.labels, 3).macro;
    const double f2 = f_score(c2.predict(test.features), test.labels, 3).macro;
    EXPECT_LT(std::abs(f1 - f2), 0.005);
}

TEST(Classifier, ParametersRoundTrip) {
    const auto d = toy_data(13, 20);
    for (auto mode : {CalibrationMode::softmax, CalibrationMode::platt}) {
        ClassifierHyperparams hp;
        hp.mode = mode;
        SeededRng rng(0);
        const auto c = train_classifier(d, hp, rng);
        const auto back = classifier_from_parameters(c.parameters(), hp);
        EXPECT_EQ(back.predict_proba(d.features), c.predict_proba(d.features));
    }
}

TEST(ClassifierGradient, ObjectiveMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SeededRng rng(seed);
        Tensor w = random_tensor({4, 3}, rng), b = random_tensor({3}, rng);
        const Tensor x = random_tensor({10, 4}, rng, -2, 2);
        std::vector<std::size_t> y(10);
        for (auto& v : y) v = rng.index(3);
        const auto r = check_gradients({&w, &b}, [&](Tape& t, const std::vector<Var>& p) {
            return detail::classifier_objective(p[0], p[1], t.constant(x), y, 0.01, CalibrationMode::softmax);
        });
        EXPECT_LT(r.max_rel_error, 1e-4);
    }
}

TEST(GridSearch, SingleCandidateReturned) {
    const auto d = toy_data(14, 20);
    GridSearchSpec s;
    s.regularizations = {0.05};
    s.learning_rates = {0.5};
    SeededRng rng(0);
    const auto r = grid_search(d, s, rng);
    EXPECT_EQ(r.best.regularization, 0.05);
    EXPECT_EQ(r.best.learning_rate, 0.5);
    EXPECT_EQ(r.rows.size(), 1u);
}

TEST(GridSearch, HighestMeanScoreWins) {
    const auto d = toy_data(15, 30, 1.0);
    GridSearchSpec s;
    s.regularizations = {0.0001, 0.01, 10.0};
    s.learning_rates = {0.05, 1.0};
    s.base.epochs = 20;
    SeededRng rng(0);
    const auto r = grid_search(d, s, rng);
    ASSERT_EQ(r.rows.size(), 6u);
    double top = -1.0;
    for (const auto& row : r.rows) {
        double mean = 0.0;
        for (double f : row.fold_scores) mean += f / static_cast<double>(s.folds);
        EXPECT_NEAR(mean, row.mean_score, 1e-12);
        top = std::max(top, mean);
    }
    EXPECT_NEAR(r.best_score, top, 1e-12);
}

TEST(GridSearch, TiesGoToLowerRegularizationThenLowerLearningRate) {
    const auto d = two_blobs(30, 5.0, 0.3, 16);  // every candidate scores 1.0
    GridSearchSpec s;
    s.regularizations = {0.01, 0.001};
    s.learning_rates = {1.0, 0.5};
    SeededRng rng(0);
    const auto r = grid_search(d, s, rng);
    for (const auto& row : r.rows) EXPECT_EQ(row.mean_score, 1.0);
    EXPECT_EQ(r.best.regularization, 0.001);
    EXPECT_EQ(r.best.learning_rate, 0.5);
}

TEST(GridSearch, EmptyCandidatesAreContractError) {
    const auto d = toy_data(17, 10);
    GridSearchSpec s;
    s.regularizations.clear();
    SeededRng rng(0);
    EXPECT_THROW(grid_search(d, s, rng), ContractError);
    GridSearchSpec t;
    t.folds = 1;
    EXPECT_THROW(grid_search(d, t, rng), ContractError);
}

TEST(Metrics, FScoreExamples) {
    const std::vector<std::size_t> t{0, 1, 2, 1};
    EXPECT_EQ(f_score(t, t, 3).macro, 1.0);
    // Class 0: TP=4, FP=1, FN=1.
    const std::vector<std::size_t> truth{0, 0, 0, 0, 0, 1, 1};
    const std::vector<std::size_t> pred{0, 0, 0, 0, 1, 0, 1};
    EXPECT_NEAR(f_score(pred, truth, 2).per_class[0], 0.8, 1e-15);
}

TEST(Metrics, FScoreConventionsAndErrors) {
    const std::vector<std::size_t> truth{0, 0, 1};
    const std::vector<std::size_t> pred{0, 0, 0};
    const auto f = f_score(pred, truth, 3);
    EXPECT_EQ(f.per_class[1], 0.0);  // present, never predicted
    EXPECT_EQ(f.per_class[2], 1.0);  // absent and never predicted
    EXPECT_THROW(f_score(std::vector<std::size_t>{}, std::vector<std::size_t>{}, 2), ContractError);
    EXPECT_THROW(f_score(pred, std::vector<std::size_t>{0}, 2), ContractError);
    EXPECT_THROW(f_score(std::vector<std::size_t>{3}, std::vector<std::size_t>{0}, 3), ContractError);
}

TEST(Metrics, FScoreMatchesConfusionOracle) {
    SeededRng rng(18);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.index(40), k = 2 + rng.index(4);
        std::vector<std::size_t> p(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.index(k);
            t[i] = rng.index(k);
        }
        const auto f = f_score(p, t, k);
        const auto ref = ref_per_class_f(p, t, k);
        EXPECT_NEAR(f.macro, ref_macro_f(p, t, k), 1e-12);
        for (std::size_t c = 0; c < k; ++c) EXPECT_NEAR(f.per_class[c], ref[c], 1e-12);
    }
}
