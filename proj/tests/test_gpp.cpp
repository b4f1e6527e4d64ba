#include "gossipgp/gpp.hpp"

#include <gtest/gtest.h>

#include <random>

#include "support/testutil.hpp"

using gossipgp::build_basis;
using gossipgp::Matrix;
using gossipgp::MaternParams;

TEST(Gpp, IdentityWhenLocationsAreKnots) {
    std::mt19937_64 rng(21);
    const Matrix locs = testutil::random_locs(12, rng);
    const auto basis = build_basis(locs, locs, {1.3, 0.2, 0.7}, true);
    EXPECT_LT((basis.B - Matrix::Identity(12, 12)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_DOUBLE_EQ(basis.dB[0].cwiseAbs().maxCoeff(), 0.0);     // sigma-free basis
    EXPECT_LT(basis.dB[1].cwiseAbs().maxCoeff(), 1e-8);           // B == I for any beta
}

TEST(Gpp, SingleKnotScalarDivision) {
    std::mt19937_64 rng(22);
    const Matrix locs = testutil::random_locs(20, rng);
    Matrix knot(1, 2);
    knot << 0.4, 0.6;
    const MaternParams p{1.7, 0.15, 0.5};
    const auto basis = build_basis(locs, knot, p, false);
    for (int i = 0; i < 20; ++i) {
        const double d = (locs.row(i) - knot.row(0)).norm();
        EXPECT_NEAR(basis.B(i, 0), gossipgp::matern_cov(d, p) / (p.sigma * p.sigma), 1e-12);
    }
}

TEST(Gpp, KnotCovarianceSymmetricPositiveDefinite) {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 12; ++rep) {
        const int m = 10 + (rep % 4) * 60;  // up to 190
        const Matrix knots = testutil::random_locs(m, rng);
        const auto basis = build_basis(knots, knots, {1.0, 0.1, 0.5 + 0.2 * (rep % 3)}, false);
        EXPECT_LT((basis.K - basis.K.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        Eigen::LLT<Matrix> llt(basis.K);
        EXPECT_EQ(llt.info(), Eigen::Success) << "m=" << m;
    }
}

TEST(Gpp, DerivativesMatchFiniteDifferences) {
    std::mt19937_64 rng(24);
    const Matrix locs = testutil::random_locs(25, rng);
    const Matrix knots = testutil::random_locs(8, rng);
    for (const MaternParams p :
         {MaternParams{1.0, 0.15, 0.5}, MaternParams{0.8, 0.3, 1.3}, MaternParams{2.0, 0.1, 0.9}}) {
        const auto basis = build_basis(locs, knots, p, true);
        const double h = 1e-6 * p.beta;
        MaternParams up = p, dn = p;
        up.beta += h;
        dn.beta -= h;
        const Matrix fd =
            (build_basis(locs, knots, up, false).B - build_basis(locs, knots, dn, false).B) /
            (2 * h);
        const double scale = fd.cwiseAbs().maxCoeff();
        EXPECT_LT((basis.dB[1] - fd).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, scale));

        // sigma direction: B is scale-invariant
        up = dn = p;
        up.sigma += 1e-6;
        dn.sigma -= 1e-6;
        const Matrix fds =
            (build_basis(locs, knots, up, false).B - build_basis(locs, knots, dn, false).B);
        EXPECT_LT(fds.cwiseAbs().maxCoeff(), 1e-12);

        // dK entries against kernel partials
        const auto g = gossipgp::matern_cov_grad((knots.row(0) - knots.row(1)).norm(), p);
        EXPECT_NEAR(basis.dK[0](0, 1), g.d_sigma, 1e-9);
        EXPECT_NEAR(basis.dK[1](0, 1), g.d_beta, 1e-9);
    }
}

TEST(Gpp, SingularKnotLayoutThrows) {
    Matrix knots(3, 2);
    knots << 0.1, 0.1, 0.1, 0.1, 0.5, 0.5;  // exact duplicate
    Matrix locs(4, 2);
    locs << 0.0, 0.0, 0.3, 0.2, 0.7, 0.9, 0.2, 0.8;
    EXPECT_THROW(build_basis(locs, knots, {1.0, 0.1, 0.5}, false), gossipgp::numerical_error);
    // a jitter rescues the degenerate layout
    EXPECT_NO_THROW(build_basis(locs, knots, {1.0, 0.1, 0.5}, false, 1e-6));
}

TEST(Gpp, DimensionsConsistent) {
    std::mt19937_64 rng(25);
    const Matrix locs = testutil::random_locs(17, rng);
    const Matrix knots = testutil::random_locs(5, rng);
    const auto basis = build_basis(locs, knots, {1.0, 0.2, 0.5}, true);
    EXPECT_EQ(basis.B.rows(), 17);
    EXPECT_EQ(basis.B.cols(), 5);
    EXPECT_EQ(basis.K.rows(), 5);
    EXPECT_EQ(basis.dB.size(), 2u);
    EXPECT_EQ(basis.dK.size(), 2u);
}
