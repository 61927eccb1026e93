#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "semicon/pseudolabel.hpp"

using namespace semicon;
using semicon::pseudo::PseudoConfig;

namespace {

FeatureBatch batch_of(Matrix m) { return make_feature_batch(std::move(m)); }

PseudoConfig with_k(int k) {
    PseudoConfig c;
    c.subgroup_size = k;
    return c;
}

}  // namespace

TEST_CASE("normalize_rows scales to unit length") {
    Matrix m(2, 2);
    m << 3, 4, 0, 2;
    auto out = pseudo::normalize_rows(batch_of(m));
    CHECK(out.normalized);
    CHECK(out.vectors(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(out.vectors(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(out.vectors(1, 1) == doctest::Approx(1.0));

    auto again = pseudo::normalize_rows(out);
    CHECK((again.vectors - out.vectors).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normalize_rows names the zero row") {
    Matrix m(3, 2);
    m << 1, 0, 0, 0, 0, 1;
    try {
        pseudo::normalize_rows(batch_of(m));
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find('1') != std::string::npos);
    }
}

TEST_CASE("cosine similarity of basis vectors") {
    Eigen::RowVectorXd a(3), b(3);
    a << 1, 0, 0;
    b << 0, 1, 0;
    CHECK(pseudo::cosine_similarity(a, a) == 1.0);
    CHECK(pseudo::cosine_similarity(a, -a) == -1.0);
    CHECK(pseudo::cosine_similarity(a, b) == 0.0);
    Eigen::RowVectorXd c = a * (1 + 1e-15);
    CHECK(pseudo::cosine_similarity(c, c) <= 1.0);
}

TEST_CASE("median of three picks the middle similarity") {
    // anchor e1; members with cosines 0.9, 0.1, 0.5 to it
    Matrix un(3, 2);
    auto row = [](double c) { return Eigen::RowVector2d(c, std::sqrt(1 - c * c)); };
    un.row(0) = row(0.9);
    un.row(1) = row(0.1);
    un.row(2) = row(0.5);
    Matrix pos(1, 2);
    pos << 1, 0;
    Rng rng(1);
    auto set = pseudo::synthesize_pseudo_negatives(batch_of(un), batch_of(pos), with_k(3), rng);
    REQUIRE(set.size() == 1);
    CHECK(set.rows[0] == 2);
    CHECK(set.similarities[0][2] == doctest::Approx(0.5));
}

TEST_CASE("512 rows in subgroups of 16 give 32 pseudo-negatives") {
    std::mt19937_64 g(3);
    auto un = oracle::random_matrix(512, 8, g);
    auto pos = oracle::random_matrix(16, 8, g);
    Rng rng(5);
    auto set = pseudo::synthesize_pseudo_negatives(batch_of(un), batch_of(pos), with_k(16), rng);
    CHECK(set.size() == 32);
    CHECK(set.vectors.rows() == 32);
    CHECK(set.dropped == 0);
    CHECK(set.anchor < 16);
}

TEST_CASE("remainder rows are dropped") {
    std::mt19937_64 g(4);
    auto un = oracle::random_matrix(37, 4, g);
    auto pos = oracle::random_matrix(2, 4, g);
    Rng rng(5);
    auto set = pseudo::synthesize_pseudo_negatives(batch_of(un), batch_of(pos), with_k(16), rng);
    CHECK(set.size() == 2);
    CHECK(set.dropped == 5);
    for (auto r : set.rows) CHECK(r < 32);
}

TEST_CASE("too few unlabeled rows is an error") {
    std::mt19937_64 g(4);
    Rng rng(1);
    CHECK_THROWS(pseudo::synthesize_pseudo_negatives(batch_of(oracle::random_matrix(15, 4, g)),
                                                     batch_of(oracle::random_matrix(1, 4, g)), with_k(16), rng));
    CHECK_THROWS(pseudo::synthesize_pseudo_negatives(batch_of(oracle::random_matrix(16, 4, g)),
                                                     batch_of(Matrix(0, 4)), with_k(16), rng));
}

TEST_CASE("one selection per subgroup, drawn from that subgroup") {
    std::mt19937_64 g(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = 2 + trial % 7;
        const int X = k * (1 + trial % 5) + trial % k;
        auto un = batch_of(oracle::random_matrix(X, 6, g));
        std::shuffle(un.source_indices.begin(), un.source_indices.end(), g);
        auto pos = batch_of(oracle::random_matrix(3, 6, g));
        Rng rng(trial);
        auto set = pseudo::synthesize_pseudo_negatives(un, pos, with_k(k), rng);
        REQUIRE(set.size() == static_cast<std::size_t>(X / k));
        for (std::size_t s = 0; s < set.size(); ++s) {
            CHECK(set.rows[s] / k == s);
            CHECK(set.source_indices[s] == un.source_indices[set.rows[s]]);
            CHECK(set.similarities[s].size() == static_cast<std::size_t>(k));
            Eigen::RowVectorXd expect = un.vectors.row(set.rows[s]).normalized();
            CHECK((set.vectors.row(s) - expect).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("selection rank is the lower median with index tie-break") {
    std::mt19937_64 g(21);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + trial % 15;
        const int groups = 1 + trial % 4;
        Matrix un = oracle::random_matrix(k * groups, 3, g);
        if (trial % 3 == 0) {
            // force exact ties by duplicating rows
            for (int r = 1; r < un.rows(); r += 2) un.row(r) = un.row(r - 1);
        }
        auto pos = batch_of(oracle::random_matrix(4, 3, g));
        Rng rng(trial);
        auto set = pseudo::synthesize_pseudo_negatives(batch_of(un), pos, with_k(k), rng);
        const int want_rank = (k + 1) / 2;
        for (std::size_t s = 0; s < set.size(); ++s) {
            const auto& sims = set.similarities[s];
            const std::size_t chosen = set.rows[s] - s * k;
            // members ordered before the chosen one under (similarity, index)
            int before = 0;
            for (std::size_t j = 0; j < sims.size(); ++j) {
                if (sims[j] < sims[chosen] || (sims[j] == sims[chosen] && j < chosen)) ++before;
            }
            CHECK(before == want_rank - 1);
            // and the similarity itself is recomputed independently
            Eigen::RowVectorXd a = pos.vectors.row(set.anchor).normalized();
            Eigen::RowVectorXd u = un.row(set.rows[s]).normalized();
            CHECK(sims[chosen] == doctest::Approx(a.dot(u)).epsilon(1e-12));
        }
    }
}

TEST_CASE("partitioning does not depend on the anchor") {
    std::mt19937_64 g(31);
    auto un = batch_of(oracle::random_matrix(64, 5, g));
    auto pos = batch_of(oracle::random_matrix(8, 5, g));
    std::vector<std::size_t> anchors_seen;
    for (int seed = 0; seed < 40; ++seed) {
        Rng rng(seed);
        auto set = pseudo::synthesize_pseudo_negatives(un, pos, with_k(16), rng);
        anchors_seen.push_back(set.anchor);
        for (std::size_t s = 0; s < set.size(); ++s) {
            CHECK(set.rows[s] >= s * 16);
            CHECK(set.rows[s] < (s + 1) * 16);
        }
    }
    std::sort(anchors_seen.begin(), anchors_seen.end());
    CHECK(std::unique(anchors_seen.begin(), anchors_seen.end()) - anchors_seen.begin() > 1);
}

TEST_CASE("positive row scaling leaves the selection unchanged") {
    std::mt19937_64 g(41);
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int trial = 0; trial < 30; ++trial) {
        Matrix un = oracle::random_matrix(48, 6, g);
        Matrix pos = oracle::random_matrix(5, 6, g);
        Rng r1(trial), r2(trial);
        auto base = pseudo::synthesize_pseudo_negatives(batch_of(un), batch_of(pos), with_k(16), r1);
        for (int i = 0; i < un.rows(); ++i) un.row(i) *= scale(g);
        for (int i = 0; i < pos.rows(); ++i) pos.row(i) *= scale(g);
        auto scaled = pseudo::synthesize_pseudo_negatives(batch_of(un), batch_of(pos), with_k(16), r2);
        CHECK(base.anchor == scaled.anchor);
        CHECK(base.rows == scaled.rows);
    }
}

TEST_CASE("purity for a 505-tile pool with 5 positives") {
    auto est = pseudo::purity_exact(505, 5, 16);
    CHECK(est.at_most(1) == doctest::Approx(0.991).epsilon(0.001 / 0.991));
    CHECK(std::abs(est.at_most(1) - 0.991) <= 0.001);
    CHECK(est.pmf[0] == doctest::Approx(oracle::hypergeometric_exact(505, 5, 16, 0)).epsilon(1e-12));
    CHECK(std::abs(est.pmf[0] - 0.850) < 0.001);
    for (int n = 0; n <= 5; ++n) {
        CHECK(est.pmf[n] == doctest::Approx(oracle::hypergeometric_exact(505, 5, 16, n)).epsilon(1e-11));
    }
}

TEST_CASE("purity edge cases") {
    auto none = pseudo::purity_exact(100, 0, 16);
    REQUIRE(none.pmf.size() == 1);
    CHECK(none.pmf[0] == 1.0);
    auto all = pseudo::purity_exact(10, 10, 4);
    CHECK(all.pmf.back() == doctest::Approx(1.0));
    CHECK_THROWS(pseudo::purity_exact(10, 11, 3));
    CHECK_THROWS(pseudo::purity_exact(10, 2, 0));
    CHECK_THROWS(pseudo::purity_exact(10, 2, 11));
}

TEST_CASE("purity sums to one on random triples") {
    std::mt19937_64 g(51);
    for (int t = 0; t < 100; ++t) {
        const std::size_t N = std::uniform_int_distribution<std::size_t>(1, 5000)(g);
        const std::size_t K = std::uniform_int_distribution<std::size_t>(0, N)(g);
        const std::size_t m = std::uniform_int_distribution<std::size_t>(1, N)(g);
        auto est = pseudo::purity_exact(N, K, m);
        const double total = std::accumulate(est.pmf.begin(), est.pmf.end(), 0.0);
        CHECK(std::abs(total - 1.0) <= 1e-12);
        for (double p : est.pmf) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
        CHECK(std::abs(est.cumulative.back() - 1.0) <= 1e-12);
    }
}

TEST_CASE("purity matches subset enumeration for small pools") {
    for (int N = 1; N <= 12; ++N) {
        for (int K = 0; K <= N; ++K) {
            for (int m = 1; m <= N; ++m) {
                auto est = pseudo::purity_exact(N, K, m);
                auto brute = oracle::hypergeometric_by_enumeration(N, K, m);
                REQUIRE(est.pmf.size() == brute.size());
                for (std::size_t n = 0; n < brute.size(); ++n) {
                    CHECK(std::abs(est.pmf[n] - brute[n]) <= 1e-14);
                }
            }
        }
    }
}
