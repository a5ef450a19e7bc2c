#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msfan/numerics.hpp"
#include "msfan/rng.hpp"
#include "msfan/ssl_losses.hpp"
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

ClusteringResult make_clustering(const Matrix& prototypes, std::vector<int> assignment) {
    ClusteringResult c;
    c.k = prototypes.rows;
    c.prototypes = prototypes;
    c.assignment = std::move(assignment);
    return c;
}

// Random banks, clusterings and a small batch for the gradient checks.
struct Fixture {
    static constexpr int sources = 2;
    static constexpr int classes = 3;
    static constexpr std::size_t dim = 8;
    std::vector<ClusterSet> cluster_sets;
    Matrix features;
    std::vector<BatchSlice> slices;
    SslConfig cfg;

    explicit Fixture(std::uint64_t seed) {
        Rng rng(seed);
        for (int dom = 0; dom <= sources; ++dom) {
            ClusterSet set;
            for (std::size_t k : {3, 3, 6}) {
                Matrix protos = unit_rows(k, dim, rng);
                std::vector<int> assignment(8);
                for (int& a : assignment) a = static_cast<int>(rng.below(k));
                set.push_back(make_clustering(protos, std::move(assignment)));
            }
            cluster_sets.push_back(std::move(set));
        }
        features = unit_rows(6, dim, rng);
        std::size_t row = 0;
        for (int dom = 0; dom <= sources; ++dom) {
            BatchSlice slice;
            slice.domain_id = dom;
            for (int q = 0; q < 2; ++q) {
                slice.rows.push_back(row++);
                slice.bank_indices.push_back(rng.below(8));
            }
            slices.push_back(std::move(slice));
        }
    }
};

} // namespace

TEST_CASE("in_domain_similarity margin arithmetic") {
    // Two prototypes with sims (1, 0); margin only on the assigned one.
    Matrix protos(2, 2);
    protos(0, 0) = 1.0;
    protos(1, 1) = 1.0;
    const ClusteringResult clustering = make_clustering(protos, {0});
    const std::vector<double> f{1.0, 0.0};

    SslConfig cfg;
    cfg.phi = 0.1;
    cfg.margin = 0.1;
    const std::vector<double> p = in_domain_similarity(f, clustering, 0, cfg);
    const double expected = std::exp(9.0) / (std::exp(9.0) + 1.0);
    CHECK(p[0] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(p[0] == doctest::Approx(0.99988).epsilon(1e-4));

    // m = 0 collapses to a temperature softmax of the cosine similarities.
    cfg.margin = 0.0;
    const std::vector<double> no_margin = in_domain_similarity(f, clustering, 0, cfg);
    const std::vector<double> direct = softmax(std::vector<double>{1.0 / cfg.phi, 0.0 / cfg.phi});
    CHECK(no_margin[0] == doctest::Approx(direct[0]).epsilon(1e-12));
    CHECK(no_margin[1] == doctest::Approx(direct[1]).epsilon(1e-12));

    // Equidistant prototypes with m = 0 split evenly.
    Matrix sym(2, 2);
    sym(0, 0) = 1.0;
    sym(1, 0) = 1.0;
    const std::vector<double> even =
        in_domain_similarity(f, make_clustering(sym, {0}), 0, cfg);
    CHECK(even[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("a positive margin strictly increases the assigned-cluster CE term") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const Matrix protos = unit_rows(4, 6, rng);
        Matrix f = unit_rows(1, 6, rng);
        const int assigned = static_cast<int>(rng.below(4));
        const ClusteringResult clustering = make_clustering(protos, {assigned});

        SslConfig with_margin, without;
        with_margin.margin = 0.1;
        without.margin = 0.0;
        const double ce_with = -std::log(
            in_domain_similarity(f.row(0), clustering, assigned, with_margin)[static_cast<std::size_t>(assigned)]);
        const double ce_without = -std::log(
            in_domain_similarity(f.row(0), clustering, assigned, without)[static_cast<std::size_t>(assigned)]);
        CHECK(ce_with > ce_without);
    }
}

TEST_CASE("cross_domain_similarity values and limits") {
    Matrix protos(2, 2);
    protos(0, 0) = 1.0;
    protos(1, 1) = 1.0;
    const std::vector<double> f{1.0, 0.0};

    const std::vector<double> p = cross_domain_similarity(f, protos, 0.1);
    const double expected = std::exp(10.0) / (std::exp(10.0) + 1.0);
    CHECK(p[0] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(p[0] == doctest::Approx(0.9999546).epsilon(1e-6));

    // Huge temperature flattens toward uniform.
    const std::vector<double> flat = cross_domain_similarity(f, protos, 1e6);
    CHECK(flat[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(flat[1] == doctest::Approx(0.5).epsilon(1e-6));

    // Orthogonal feature sees uniform similarities.
    const std::vector<double> ortho{0.0, 0.0};
    Matrix protos3(2, 3);
    protos3(0, 0) = 1.0;
    protos3(1, 1) = 1.0;
    const std::vector<double> f3{0.0, 0.0, 1.0};
    const std::vector<double> uniform = cross_domain_similarity(f3, protos3, 0.1);
    CHECK(uniform[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("ips_loss derived value and reductions") {
    // One sample, one domain, one clustering with P = (0.8, 0.2), assigned 0.
    // Choosing logits directly: sims chosen so softmax((sims - m*1)/phi) = (0.8, 0.2).
    SslConfig cfg;
    cfg.phi = 1.0;
    cfg.margin = 0.0;
    Matrix protos(2, 2);
    protos(0, 0) = std::log(0.8);
    protos(1, 0) = std::log(0.2);
    // f = e0 picks out the first coordinate as the logit.
    Matrix features(1, 2);
    features(0, 0) = 1.0;

    ClusterSet set{make_clustering(protos, {0})};
    std::vector<ClusterSet> sets{set};
    BatchSlice slice;
    slice.domain_id = 0;
    slice.rows = {0};
    slice.bank_indices = {0};
    Matrix grad(1, 2);
    const double loss = ips_loss(features, std::vector<BatchSlice>{slice}, sets, cfg, 1.0, grad);
    CHECK(loss == doctest::Approx(-std::log(0.8)).epsilon(1e-9));
    CHECK(loss == doctest::Approx(0.22314).epsilon(1e-4));

    // R identical clusterings: the average equals the single-run loss.
    std::vector<ClusterSet> repeated{{set[0], set[0], set[0]}};
    Matrix grad3(1, 2);
    const double loss3 =
        ips_loss(features, std::vector<BatchSlice>{slice}, repeated, cfg, 1.0, grad3);
    CHECK(loss3 == doctest::Approx(loss).epsilon(1e-12));

    // A sample whose distribution is one-hot at its assignment contributes ~0.
    SslConfig sharp;
    sharp.phi = 0.001;
    sharp.margin = 0.0;
    Matrix hot_protos(2, 2);
    hot_protos(0, 0) = 1.0;
    hot_protos(1, 1) = 1.0;
    std::vector<ClusterSet> hot_sets{{make_clustering(hot_protos, {0})}};
    Matrix hot_grad(1, 2);
    const double hot_loss =
        ips_loss(features, std::vector<BatchSlice>{slice}, hot_sets, sharp, 1.0, hot_grad);
    CHECK(hot_loss == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("ips_loss reports stale clusterings") {
    const Fixture fx(5);
    Matrix grad(fx.features.rows, fx.features.cols);
    std::vector<BatchSlice> slices = fx.slices;
    slices[0].bank_indices[0] = 999;
    CHECK_THROWS_AS(
        ips_loss(fx.features, slices, fx.cluster_sets, fx.cfg, 1.0, grad), StateError);
}

TEST_CASE("cps_loss entropy values, bounds, and directions") {
    SslConfig cfg;
    // Source feature equal to one target prototype, others orthogonal: near-zero entropy.
    Matrix protos(2, 3);
    protos(0, 0) = 1.0;
    protos(1, 1) = 1.0;
    Matrix features(1, 3);
    features(0, 0) = 1.0;
    BatchSlice src;
    src.domain_id = 0;
    src.rows = {0};
    src.bank_indices = {0};
    // Dummy source cluster sets; target set holds the prototypes (k = n_c = 2).
    ClusterSet target_set{make_clustering(protos, {0})};
    ClusterSet source_set{make_clustering(protos, {0})};
    std::vector<ClusterSet> sets{source_set, target_set};

    Matrix grad(1, 3);
    const double loss = cps_loss(features, std::vector<BatchSlice>{src}, sets, 1, 2, cfg,
                                 CpsDirection::src_to_tgt, false, 1.0, grad);
    CHECK(loss == doctest::Approx(0.00050).epsilon(2e-2));
    CHECK(loss < 0.001);

    // Feature equidistant from all prototypes: entropy reaches log k.
    Matrix far(1, 3);
    far(0, 2) = 1.0;
    Matrix grad2(1, 3);
    const double max_loss = cps_loss(far, std::vector<BatchSlice>{src}, sets, 1, 2, cfg,
                                     CpsDirection::src_to_tgt, false, 1.0, grad2);
    CHECK(max_loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    // Zero sources: empty sum.
    std::vector<ClusterSet> only_target{target_set};
    BatchSlice tgt;
    tgt.domain_id = 0;
    tgt.rows = {0};
    tgt.bank_indices = {0};
    Matrix grad3(1, 3);
    CHECK(cps_loss(features, std::vector<BatchSlice>{tgt}, only_target, 0, 2, cfg,
                   CpsDirection::src_to_tgt, false, 1.0, grad3) == 0.0);

    // tgt_to_src only touches target slices.
    Matrix grad4(1, 3);
    BatchSlice target_slice;
    target_slice.domain_id = 1;
    target_slice.rows = {0};
    target_slice.bank_indices = {0};
    const double tgt_loss =
        cps_loss(features, std::vector<BatchSlice>{target_slice}, sets, 1, 2, cfg,
                 CpsDirection::tgt_to_src, false, 1.0, grad4);
    CHECK(tgt_loss == doctest::Approx(loss).epsilon(1e-9));
}

TEST_CASE("per-sample cps entropy stays within [0, log k] and ignores prototype order") {
    Rng rng(7);
    SslConfig cfg;
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t k = 2 + rng.below(5);
        Matrix protos = unit_rows(k, 6, rng);
        Matrix f = unit_rows(1, 6, rng);
        const std::vector<double> p = cross_domain_similarity(f.row(0), protos, cfg.tau);
        const double h = entropy(p);
        CHECK(h >= 0.0);
        CHECK(h <= std::log(static_cast<double>(k)) + 1e-12);

        // Permuting prototype rows leaves the entropy unchanged.
        Matrix permuted(k, 6);
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t j = 0; j < 6; ++j) permuted(r, j) = protos((r + 1) % k, j);
        const double h2 = entropy(cross_domain_similarity(f.row(0), permuted, cfg.tau));
        CHECK(h2 == doctest::Approx(h).epsilon(1e-12));
    }
}

TEST_CASE("mps_loss is the toggle-respecting sum") {
    const Fixture fx(11);
    Matrix grad_a(fx.features.rows, fx.features.cols);
    double ips = 0.0, cps = 0.0;
    const double both =
        mps_loss(fx.features, fx.slices, fx.cluster_sets, Fixture::sources, Fixture::classes,
                 fx.cfg, CpsDirection::src_to_tgt, false, true, true, 1.0, grad_a, &ips, &cps);
    CHECK(both == doctest::Approx(ips + cps).epsilon(1e-12));
    CHECK(ips > 0.0);
    CHECK(cps > 0.0);

    Matrix grad_b(fx.features.rows, fx.features.cols);
    double ips_only = 0.0, cps_off = 0.0;
    const double ips_alone =
        mps_loss(fx.features, fx.slices, fx.cluster_sets, Fixture::sources, Fixture::classes,
                 fx.cfg, CpsDirection::src_to_tgt, false, true, false, 1.0, grad_b, &ips_only,
                 &cps_off);
    CHECK(ips_alone == doctest::Approx(ips).epsilon(1e-12));
    CHECK(cps_off == 0.0);
}

TEST_CASE("ips and cps feature gradients match finite differences") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        Fixture fx(seed);

        // IPS: gradient w.r.t. every feature entry.
        Matrix grad(fx.features.rows, fx.features.cols);
        ips_loss(fx.features, fx.slices, fx.cluster_sets, fx.cfg, 1.0, grad);
        auto ips_value = [&]() {
            Matrix scratch(fx.features.rows, fx.features.cols);
            return ips_loss(fx.features, fx.slices, fx.cluster_sets, fx.cfg, 1.0, scratch);
        };
        const std::vector<double> fd =
            oracles::finite_difference(ips_value, {std::span<double>(fx.features.data)});
        CHECK(oracles::max_relative_error(grad.data, fd) < 1e-4);

        // CPS in both directions.
        for (CpsDirection dir :
             {CpsDirection::src_to_tgt, CpsDirection::tgt_to_src, CpsDirection::both}) {
            Matrix cgrad(fx.features.rows, fx.features.cols);
            cps_loss(fx.features, fx.slices, fx.cluster_sets, Fixture::sources, Fixture::classes,
                     fx.cfg, dir, false, 1.0, cgrad);
            auto cps_value = [&]() {
                Matrix scratch(fx.features.rows, fx.features.cols);
                return cps_loss(fx.features, fx.slices, fx.cluster_sets, Fixture::sources,
                                Fixture::classes, fx.cfg, dir, false, 1.0, scratch);
            };
            const std::vector<double> cfd =
                oracles::finite_difference(cps_value, {std::span<double>(fx.features.data)});
            CHECK(oracles::max_relative_error(cgrad.data, cfd) < 1e-4);
        }
    }
}
