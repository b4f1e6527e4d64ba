#pragma once

#include <vector>

#include "gossipgp/geo.hpp"
#include "gossipgp/gpp.hpp"
#include "gossipgp/types.hpp"

namespace gossipgp {

// Non-variational model parameters.  delta = tau^-2 is the nugget
// precision.
struct ModelParams {
    Vector gamma;
    double delta = 1.0;
    MaternParams theta;

    void validate() const;
};

// Gaussian variational factor over the latent knot vector.
struct VariationalState {
    Vector mu;
    Matrix Sigma;
};

struct ThetaDerivs {
    Vector2 grad;   // d/d(sigma, beta)
    Matrix2 hess;
};

enum class DerivMode { analytic, fd };

// Machine-local negative expected log-likelihood term
//   f_j = (n_j/2) log(2 pi) - (n_j/2) log delta
//       + (delta/2) tr(B^T B (Sigma + mu mu^T))
//       - delta (z - X gamma)^T B mu + (delta/2) (z - X gamma)^T (z - X gamma).
double local_elbo_fj(const SpatialDataset& data, const BasisMatrices& basis,
                     const VariationalState& v, const ModelParams& params);
double local_elbo_fj(const SpatialDataset& data, GppWorkspace& ws, const VariationalState& v,
                     const ModelParams& params);

// KL(N(mu, Sigma) || N(0, K)).
double kl_h(const VariationalState& v, const Matrix& K);
double kl_h(GppWorkspace& ws, const VariationalState& v, const ModelParams& params);

// Negative log-likelihood of the full model via the Woodbury identity:
// never forms an N x N matrix, cost O(N m^2).
double nll(const std::vector<SpatialDataset>& datasets, const KnotSet& knots,
           const ModelParams& params);

// Derivatives of f_j + (1/num_machines) h with respect to (sigma, beta),
// holding (mu, Sigma, gamma, delta) fixed.  The analytic mode chains the
// kernel partials; the Hessian is symmetric finite differences of the
// analytic gradient.  fd mode differentiates the scalar objective and
// serves as an oracle.
ThetaDerivs elbo_theta_derivs(const SpatialDataset& data, const KnotSet& knots,
                              const VariationalState& v, const ModelParams& params,
                              DerivMode mode = DerivMode::analytic, int num_machines = 1);

// Split pieces used by the decentralized Newton step (f-block and
// h-block are tracked by different consensus mechanisms).
Vector2 theta_grad_f(const SpatialDataset& data, GppWorkspace& ws, const VariationalState& v,
                     const ModelParams& params);
Matrix2 theta_hess_f(const SpatialDataset& data, GppWorkspace& ws, const VariationalState& v,
                     const ModelParams& params);
Vector2 theta_grad_h(GppWorkspace& ws, const VariationalState& v, const ModelParams& params);
Matrix2 theta_hess_h(GppWorkspace& ws, const VariationalState& v, const ModelParams& params);

// Eigenvalue modification making a symmetric Hessian positive definite:
// negative eigenvalues are flipped, magnitudes below eps are floored at
// lambda_min.
Matrix md(const Matrix& H, double eps, double lambda_min);

}  // namespace gossipgp
