#include "gossipgp/matern.hpp"

#include <cmath>
#include <stdexcept>

#include "gossipgp/bessel.hpp"

namespace gossipgp {
namespace {

bool near(double a, double b) { return std::fabs(a - b) < 1e-12; }

// Half-integer orders have closed forms; they double as the fast path
// for the common smoothness choices.
bool half_integer_poly(double nu, double x, double& corr, double& dcorr_dx) {
    const double e = std::exp(-x);
    if (near(nu, 0.5)) {
        corr = e;
        dcorr_dx = -e;
        return true;
    }
    if (near(nu, 1.5)) {
        corr = (1.0 + x) * e;
        dcorr_dx = -x * e;
        return true;
    }
    if (near(nu, 2.5)) {
        corr = (1.0 + x + x * x / 3.0) * e;
        dcorr_dx = -(x + x * x) / 3.0 * e;
        return true;
    }
    return false;
}

}  // namespace

void MaternParams::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw std::invalid_argument("MaternParams: sigma must be positive");
    if (!(beta > 0.0) || !std::isfinite(beta))
        throw std::invalid_argument("MaternParams: beta must be positive");
    if (!(nu > 0.0) || !std::isfinite(nu))
        throw std::invalid_argument("MaternParams: nu must be positive");
}

double matern_cov(double d, const MaternParams& params) {
    params.validate();
    if (d < 0.0) throw std::invalid_argument("matern_cov: distance must be nonnegative");
    const double s2 = params.sigma * params.sigma;
    if (d == 0.0) return s2;  // the formula is 0 * inf at d = 0
    const double x = std::sqrt(2.0 * params.nu) * d / params.beta;
    double corr, dcorr;
    if (half_integer_poly(params.nu, x, corr, dcorr)) return s2 * corr;
    const double a = std::pow(2.0, 1.0 - params.nu) / std::tgamma(params.nu);
    return s2 * a * std::pow(x, params.nu) * bessel_k(params.nu, x);
}

double matern_cov_with_grad(double d, const MaternParams& params, MaternGrad& grad) {
    if (d < 0.0) throw std::invalid_argument("matern_cov_grad: distance must be nonnegative");
    const double s2 = params.sigma * params.sigma;
    if (d == 0.0) {
        grad = {2.0 * params.sigma, 0.0};
        return s2;
    }
    const double nu = params.nu;
    const double x = std::sqrt(2.0 * nu) * d / params.beta;
    double corr, dcorr;
    if (half_integer_poly(nu, x, corr, dcorr)) {
        // dc/dbeta = sigma^2 * dcorr/dx * dx/dbeta, dx/dbeta = -x/beta
        grad = {2.0 * params.sigma * corr, -s2 * dcorr * x / params.beta};
        return s2 * corr;
    }
    const double a = std::pow(2.0, 1.0 - nu) / std::tgamma(nu);
    const BesselKPair kp = bessel_k_pair(nu, x);
    const double xpnu = std::pow(x, nu);
    const double c = s2 * a * xpnu * kp.knu;
    // d/dx [x^nu K_nu(x)] = -x^nu K_{nu-1}(x), K_{nu-1} = K_{nu+1} - (2 nu / x) K_nu
    const double knum1 = kp.knu1 - (2.0 * nu / x) * kp.knu;
    grad = {2.0 * c / params.sigma, s2 * a * xpnu * knum1 * x / params.beta};
    return c;
}

MaternGrad matern_cov_grad(double d, const MaternParams& params) {
    params.validate();
    MaternGrad g;
    matern_cov_with_grad(d, params, g);
    return g;
}

double effective_range(const MaternParams& params) {
    params.validate();
    const double target = 0.05 * params.sigma * params.sigma;
    double hi = params.beta;
    while (matern_cov(hi, params) > target) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200 && (hi - lo) > 1e-12 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        (matern_cov(mid, params) > target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace gossipgp
