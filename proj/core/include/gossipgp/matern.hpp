#pragma once

#include "gossipgp/types.hpp"

namespace gossipgp {

// Matern kernel parameters: c(d) = sigma^2 * 2^{1-nu}/Gamma(nu)
//   * (sqrt(2 nu) d / beta)^nu * K_nu(sqrt(2 nu) d / beta).
struct MaternParams {
    double sigma = 1.0;  // marginal standard deviation (variance sigma^2)
    double beta = 0.1;   // range
    double nu = 0.5;     // smoothness

    void validate() const;
};

// Kernel value at distance d >= 0; c(0) = sigma^2 by continuity.
double matern_cov(double d, const MaternParams& params);

struct MaternGrad {
    double d_sigma;  // dc/dsigma = 2 c / sigma
    double d_beta;   // dc/dbeta
};

// Analytic partials with respect to (sigma, beta); at d = 0 these are
// (2 sigma, 0).
MaternGrad matern_cov_grad(double d, const MaternParams& params);

// Kernel value and partials from a single Bessel evaluation.
double matern_cov_with_grad(double d, const MaternParams& params, MaternGrad& grad);

// Distance d* at which c(d*)/sigma^2 = 0.05, by bisection.
double effective_range(const MaternParams& params);

}  // namespace gossipgp
