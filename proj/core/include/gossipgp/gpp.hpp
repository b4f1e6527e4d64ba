#pragma once

#include <Eigen/Cholesky>
#include <memory>
#include <vector>

#include "gossipgp/matern.hpp"
#include "gossipgp/types.hpp"

namespace gossipgp {

// Predictive-process basis pieces at one parameter point.
//   B = C(S, S*) K^{-1}   (n x m), K = C(S*, S*)   (m x m SPD)
// Derivative lists are ordered (sigma, beta).  B does not depend on
// sigma (both covariances scale with sigma^2), so dB[0] is zero.
struct BasisMatrices {
    Matrix B;
    Matrix K;
    std::vector<Matrix> dB;  // dB/dsigma, dB/dbeta (empty unless requested)
    std::vector<Matrix> dK;  // dK/dsigma, dK/dbeta
};

// locs: n x 2, knots: m x 2.  Computes B via a Cholesky solve of K, never
// an explicit inverse.  Throws numerical_error when K is numerically
// singular (condition estimate > 1e14); a small diagonal jitter (at
// correlation scale) can be supplied for degenerate knot layouts.
BasisMatrices build_basis(const Matrix& locs, const Matrix& knots, const MaternParams& params,
                          bool with_derivatives, double jitter = 0.0);

// Distance-matrix cache for one (locations, knots) pair.  Everything a
// fitting iteration needs at a given (beta, nu) is sigma-free, so the
// cache is keyed on (beta, nu) only and parameter sweeps in sigma are
// free.  Holds the few most recent entries (a Newton step touches the
// base point plus finite-difference offsets).
class GppWorkspace {
public:
    GppWorkspace(Matrix locs, Matrix knots, double jitter = 0.0);

    struct Entry {
        Matrix B;          // n x m, unit-sigma basis (== B(theta))
        Matrix dBdbeta;    // n x m
        Matrix Khat;       // m x m correlation at knots (+ jitter I)
        Matrix dKhatdbeta; // m x m
        Eigen::LLT<Matrix> lltKhat;
        double logdetKhat = 0.0;
        bool with_derivs = false;
    };

    const Entry& at(double beta, double nu, bool with_derivs);

    int n() const { return static_cast<int>(locs_.rows()); }
    int m() const { return static_cast<int>(knots_.rows()); }
    const Matrix& locs() const { return locs_; }
    const Matrix& knots() const { return knots_; }

private:
    Matrix locs_, knots_;
    double jitter_;
    Matrix dist_x_;  // n x m cross distances
    Matrix dist_k_;  // m x m knot distances
    struct Keyed {
        double beta, nu;
        std::shared_ptr<Entry> entry;
    };
    std::vector<Keyed> cache_;  // small, insertion-ordered
};

}  // namespace gossipgp
