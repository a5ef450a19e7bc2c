#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msfan/classifier.hpp"
#include "msfan/rng.hpp"
#include "oracles.hpp"

using namespace msfan;

namespace {

Matrix unit_rows(std::size_t n, std::size_t d, Rng& rng) {
    Matrix m(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) m(i, j) = rng.normal();
        const double r = norm2(m.row(i));
        for (std::size_t j = 0; j < d; ++j) m(i, j) /= r;
    }
    return m;
}

CosineClassifier basis_classifier(std::size_t d, std::size_t n_classes, double temperature) {
    CosineClassifier clf(d, n_classes, temperature);
    for (std::size_t c = 0; c < n_classes; ++c) clf.weights(c % d, c) = 1.0;
    return clf;
}

} // namespace

TEST_CASE("classify with basis weights reproduces the scalar softmax") {
    CosineClassifier clf = basis_classifier(3, 2, 1.0);
    const std::vector<double> f{1.0, 0.0, 0.0};
    const std::vector<double> p = classify(clf, f);
    CHECK(p[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.2689).epsilon(1e-4));

    // Identical columns flatten the output for any feature.
    CosineClassifier same(3, 4, 0.05);
    for (std::size_t c = 0; c < 4; ++c) same.weights(0, c) = 1.0;
    const std::vector<double> uniform = classify(same, f);
    for (double v : uniform) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    // Huge temperature flattens as well.
    CosineClassifier hot = basis_classifier(3, 2, 1e6);
    const std::vector<double> flat = classify(hot, f);
    CHECK(flat[0] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("cls_loss values and label validation") {
    // Single sample with p = (0.9, 0.1) via controlled logits: T = 1,
    // logits = (log 9, 0) scaled so softmax gives (0.9, 0.1).
    CosineClassifier clf(2, 2, 1.0);
    clf.weights(0, 0) = std::log(9.0);
    Matrix features(1, 2);
    features(0, 0) = 1.0;
    std::vector<CosineClassifier> clfs;
    clfs.push_back(std::move(clf));

    const std::vector<std::size_t> rows{0};
    const std::vector<int> labels{0};
    Matrix grad(1, 2);
    const double loss = cls_loss(clfs, features, rows, labels, 2, 1.0, grad, true);
    CHECK(loss == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    CHECK(loss == doctest::Approx(0.10536).epsilon(1e-4));

    // Uniform predictions, 2 classifiers, 5 classes: 2 log 5.
    std::vector<CosineClassifier> uniform_clfs;
    for (int i = 0; i < 2; ++i) uniform_clfs.emplace_back(3, 5, 0.05); // zero weights: uniform
    Matrix f5(2, 3);
    f5(0, 0) = 1.0;
    f5(1, 1) = 1.0;
    const std::vector<std::size_t> rows5{0, 1};
    const std::vector<int> labels5{4, 2};
    Matrix grad5(2, 3);
    const double loss5 = cls_loss(uniform_clfs, f5, rows5, labels5, 5, 1.0, grad5, true);
    CHECK(loss5 == doctest::Approx(2.0 * std::log(5.0)).epsilon(1e-12));

    const std::vector<int> bad{7};
    CHECK_THROWS_AS(cls_loss(clfs, features, rows, bad, 2, 1.0, grad, true), DataError);
}

TEST_CASE("prototype_weight_update normalizes refreshed columns and keeps the rest") {
    Rng rng(3);
    Matrix bank_rows(4, 2);
    bank_rows(0, 0) = 1.0; bank_rows(0, 1) = 0.0;
    bank_rows(1, 0) = 0.0; bank_rows(1, 1) = 1.0;
    bank_rows(2, 0) = 1.0; bank_rows(2, 1) = 0.0;
    bank_rows(3, 0) = -1.0; bank_rows(3, 1) = 0.0;
    const MemoryBank bank = init_bank(0, bank_rows, 0.5);

    CosineClassifier clf(2, 3, 0.05);
    clf.init(rng);
    const Matrix before = clf.weights;

    SupportSet support;
    support.domain_id = 0;
    // Class 0: rows (1,0) and (0,1) -> mean (0.5, 0.5) -> normalized (r2/2, r2/2).
    // Class 1: single row 2 -> (1, 0). Class 2: empty, column kept.
    support.entries = {{0, 0, false}, {1, 0, false}, {2, 1, true}};
    const int degenerate = prototype_weight_update(clf, support, bank);
    CHECK(degenerate == 0);
    CHECK(clf.weights(0, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK(clf.weights(1, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK(clf.weights(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(clf.weights(1, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(clf.weights(0, 2) == before(0, 2));
    CHECK(clf.weights(1, 2) == before(1, 2));
    for (std::size_t c = 0; c < 2; ++c) {
        double norm_sq = 0.0;
        for (std::size_t j = 0; j < 2; ++j) norm_sq += clf.weights(j, c) * clf.weights(j, c);
        CHECK(std::sqrt(norm_sq) == doctest::Approx(1.0).epsilon(1e-9));
    }

    // Zero-norm mean: rows 0 and 3 cancel; the column stays and is reported.
    SupportSet opposed;
    opposed.domain_id = 0;
    opposed.entries = {{0, 1, false}, {3, 1, false}};
    CosineClassifier clf2(2, 3, 0.05);
    clf2.init(rng);
    const Matrix before2 = clf2.weights;
    CHECK(prototype_weight_update(clf2, opposed, bank) == 1);
    CHECK(clf2.weights == before2);
}

TEST_CASE("tracker update mixes and renormalizes") {
    PriorTracker tracker(2, 0.5);
    const std::vector<double> mean{0.8, 0.2};
    tracker.update(mean);
    CHECK(tracker.probs[0] == doctest::Approx(0.65).epsilon(1e-12));
    CHECK(tracker.probs[1] == doctest::Approx(0.35).epsilon(1e-12));

    PriorTracker replace(2, 0.0);
    replace.update(mean);
    CHECK(replace.probs[0] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("mi_loss trivial cases") {
    // All predictions identical one-hot: I = 0. T small enough that the
    // softmax underflows to an exact one-hot.
    CosineClassifier sharp(2, 2, 1e-3);
    sharp.weights(0, 0) = 1.0;
    sharp.weights(0, 1) = -1.0;
    std::vector<CosineClassifier> clfs;
    clfs.push_back(std::move(sharp));

    Matrix features(2, 2);
    features(0, 0) = 1.0;
    features(1, 0) = 1.0;
    const std::vector<std::size_t> rows{0, 1};

    std::vector<PriorTracker> trackers{PriorTracker(2, 0.9)};
    trackers[0].probs = {1.0, 0.0};
    // Tracker entries must stay positive for the log; nudge off exact zero.
    trackers[0].probs = {1.0 - 1e-12, 1e-12};
    Matrix grad(2, 2);
    MiResult r = mi_loss(clfs, features, rows, trackers, 1.0, grad, false);
    CHECK(r.per_classifier_mi[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-9));

    // Uniform predictions with a uniform tracker: marginal and conditional
    // entropies coincide, I = 0.
    std::vector<CosineClassifier> flat;
    flat.emplace_back(2, 2, 0.05); // zero weights
    std::vector<PriorTracker> uniform{PriorTracker(2, 0.9)};
    Matrix grad2(2, 2);
    r = mi_loss(flat, features, rows, uniform, 1.0, grad2, false);
    CHECK(r.per_classifier_mi[0] == doctest::Approx(0.0).epsilon(1e-12));

    // Two exact one-hots at different classes with tracker = batch mean:
    // I = log 2.
    CosineClassifier split(2, 2, 1e-3);
    split.weights(0, 0) = 1.0;
    split.weights(1, 1) = 1.0;
    std::vector<CosineClassifier> split_clfs;
    split_clfs.push_back(std::move(split));
    Matrix f2(2, 2);
    f2(0, 0) = 1.0; // class 0
    f2(1, 1) = 1.0; // class 1
    std::vector<PriorTracker> mean_tracker{PriorTracker(2, 0.0)};
    Matrix grad3(2, 2);
    r = mi_loss(split_clfs, f2, rows, mean_tracker, 1.0, grad3, false);
    CHECK(r.per_classifier_mi[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.loss == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(r.batch_mean[0][0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("mi identity against the brute-force joint and nonnegativity") {
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 2 + rng.below(7); // batch <= 8
        const std::size_t n_classes = 2 + rng.below(3); // <= 4
        const std::size_t dim = 6;

        std::vector<CosineClassifier> clfs;
        for (int i = 0; i < 2; ++i) {
            CosineClassifier clf(dim, n_classes, 0.2);
            clf.init(rng);
            clfs.push_back(std::move(clf));
        }
        const Matrix features = unit_rows(n, dim, rng);
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = i;

        // Tracker = exact batch marginal (the beta = 0 mode).
        std::vector<PriorTracker> trackers;
        std::vector<std::vector<std::vector<double>>> conditionals(clfs.size());
        for (std::size_t i = 0; i < clfs.size(); ++i) {
            std::vector<double> marginal(n_classes, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const std::vector<double> p = classify(clfs[i], features.row(r));
                conditionals[i].push_back(p);
                for (std::size_t c = 0; c < n_classes; ++c)
                    marginal[c] += p[c] / static_cast<double>(n);
            }
            PriorTracker tracker(n_classes, 0.0);
            tracker.probs = marginal;
            trackers.push_back(std::move(tracker));
        }

        Matrix grad(n, dim);
        const MiResult r = mi_loss(clfs, features, rows, trackers, 1.0, grad, false);
        double expected_loss = 0.0;
        for (std::size_t i = 0; i < clfs.size(); ++i) {
            const double brute = oracles::brute_force_mutual_information(conditionals[i]);
            CHECK(std::abs(r.per_classifier_mi[i] - brute) < 1e-10);
            CHECK(r.per_classifier_mi[i] >= -1e-12);
            expected_loss -= brute;
        }
        CHECK(std::abs(r.loss - expected_loss) < 1e-10);
    }
}

TEST_CASE("inference rules and tie-breaking") {
    // Classifier 0 peaks at class 1, classifier 1 ties exactly at class 0.
    std::vector<CosineClassifier> clfs;
    CosineClassifier a(2, 2, 0.05);
    a.weights(0, 1) = 1.0; // class 1 weight = e0
    CosineClassifier b(2, 2, 0.05);
    b.weights(0, 0) = 1.0; // class 0 weight = e0
    clfs.push_back(std::move(a));
    clfs.push_back(std::move(b));

    const std::vector<double> f{1.0, 0.0};
    // Exact tie between (domain 0, class 1) and (domain 1, class 0): lower
    // domain wins, so class 1.
    CHECK(global_max_similarity_inference(clfs, f) == 1);

    // Exact feature match dominates everything else.
    std::vector<CosineClassifier> many;
    for (int i = 0; i < 3; ++i) {
        CosineClassifier clf(4, 6, 0.05);
        Rng rng(40 + static_cast<std::uint64_t>(i));
        clf.init(rng);
        for (std::size_t c = 0; c < 6; ++c) {
            double norm_sq = 0.0;
            for (std::size_t j = 0; j < 4; ++j) norm_sq += clf.weights(j, c) * clf.weights(j, c);
            for (std::size_t j = 0; j < 4; ++j) clf.weights(j, c) *= 0.9 / std::sqrt(norm_sq);
        }
        many.push_back(std::move(clf));
    }
    std::vector<double> probe(4, 0.0);
    probe[2] = 1.0;
    for (std::size_t j = 0; j < 4; ++j) many[2].weights(j, 5) = probe[j];
    CHECK(global_max_similarity_inference(many, probe) == 5);

    // Positive rescaling of the feature cannot change the argmax.
    std::vector<double> scaled(4);
    for (std::size_t j = 0; j < 4; ++j) scaled[j] = 17.5 * probe[j];
    CHECK(global_max_similarity_inference(many, scaled) ==
          global_max_similarity_inference(many, probe));

    // Ensemble: mean of (0.6, 0.4) and (0.3, 0.7) favors class 1.
    // Build classifiers whose softmax outputs are exactly those pairs.
    std::vector<CosineClassifier> ens;
    CosineClassifier c1(2, 2, 1.0);
    c1.weights(0, 0) = std::log(0.6 / 0.4);
    CosineClassifier c2(2, 2, 1.0);
    c2.weights(0, 0) = std::log(0.3 / 0.7);
    ens.push_back(std::move(c1));
    ens.push_back(std::move(c2));
    CHECK(ensemble_inference(ens, f) == 1);

    // M = 1 reduces both rules to the single classifier's argmax.
    std::vector<CosineClassifier> solo;
    solo.push_back(basis_classifier(2, 2, 0.5));
    CHECK(global_max_similarity_inference(solo, f) == 0);
    CHECK(ensemble_inference(solo, f) == 0);
}

TEST_CASE("cls and mi gradients (features and weights) match finite differences") {
    Rng rng(19);
    const std::size_t dim = 6, n = 4, n_classes = 3;
    std::vector<CosineClassifier> clfs;
    for (int i = 0; i < 2; ++i) {
        CosineClassifier clf(dim, n_classes, 0.1);
        clf.init(rng);
        clfs.push_back(std::move(clf));
    }
    Matrix features = unit_rows(n, dim, rng);
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    std::vector<int> labels(n);
    for (int& y : labels) y = static_cast<int>(rng.below(n_classes));

    std::vector<PriorTracker> trackers;
    for (int i = 0; i < 2; ++i) {
        PriorTracker tracker(n_classes, 0.9);
        double total = 0.0;
        for (double& p : tracker.probs) {
            p = 0.2 + rng.uniform();
            total += p;
        }
        for (double& p : tracker.probs) p /= total;
        trackers.push_back(std::move(tracker));
    }

    SUBCASE("cls") {
        for (CosineClassifier& clf : clfs) clf.zero_grad();
        Matrix grad(n, dim);
        cls_loss(clfs, features, rows, labels, n_classes, 1.0, grad, true);
        std::vector<double> analytic(grad.data.begin(), grad.data.end());
        for (const CosineClassifier& clf : clfs)
            analytic.insert(analytic.end(), clf.grad.data.begin(), clf.grad.data.end());

        auto value = [&]() {
            Matrix scratch(n, dim);
            return cls_loss(clfs, features, rows, labels, n_classes, 1.0, scratch, false);
        };
        std::vector<std::span<double>> params{features.data};
        for (CosineClassifier& clf : clfs) params.push_back(clf.weights.data);
        const std::vector<double> fd = oracles::finite_difference(value, params);
        CHECK(oracles::max_relative_error(analytic, fd) < 1e-4);
    }

    SUBCASE("mi with frozen tracker") {
        for (CosineClassifier& clf : clfs) clf.zero_grad();
        Matrix grad(n, dim);
        mi_loss(clfs, features, rows, trackers, 1.0, grad, true);
        std::vector<double> analytic(grad.data.begin(), grad.data.end());
        for (const CosineClassifier& clf : clfs)
            analytic.insert(analytic.end(), clf.grad.data.begin(), clf.grad.data.end());

        auto value = [&]() {
            Matrix scratch(n, dim);
            return mi_loss(clfs, features, rows, trackers, 1.0, scratch, false).loss;
        };
        std::vector<std::span<double>> params{features.data};
        for (CosineClassifier& clf : clfs) params.push_back(clf.weights.data);
        const std::vector<double> fd = oracles::finite_difference(value, params);
        CHECK(oracles::max_relative_error(analytic, fd) < 1e-4);
    }
}
