#include "gossipgp/bessel.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

// K_nu via Temme's method: a power series for small arguments and
// Steed's continued fraction (CF2) for large ones, evaluated at the
// fractional order mu = nu - round(nu), then recurred upward.  This is
// the classical scheme behind the SLATEC/DBSKNU family of routines.

namespace gossipgp {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kMaxIter = 20000;
constexpr double kEulerGamma = 0.57721566490153286060651209;
constexpr double kPi = 3.14159265358979323846264338;

// gam1 = [1/Gamma(1-mu) - 1/Gamma(1+mu)] / (2 mu)  (-> -EulerGamma as mu -> 0)
// gam2 = [1/Gamma(1-mu) + 1/Gamma(1+mu)] / 2
// gampl = 1/Gamma(1+mu), gammi = 1/Gamma(1-mu), |mu| <= 1/2.
void temme_gammas(double mu, double& gam1, double& gam2, double& gampl, double& gammi) {
    gampl = 1.0 / std::tgamma(1.0 + mu);
    gammi = 1.0 / std::tgamma(1.0 - mu);
    if (std::fabs(mu) < 1e-5) {
        // odd-series coefficients of 1/Gamma(1+x) to avoid cancellation
        const double zeta3 = 1.20205690315959428539973816;
        const double c3 = zeta3 / 3.0 - kEulerGamma * kPi * kPi / 12.0
                          + kEulerGamma * kEulerGamma * kEulerGamma / 6.0;
        gam1 = -(kEulerGamma + c3 * mu * mu);
    } else {
        gam1 = (gammi - gampl) / (2.0 * mu);
    }
    gam2 = 0.5 * (gammi + gampl);
}

// K_mu(x) and K_{mu+1}(x) for x <= 2, |mu| <= 1/2 (Temme 1975 series).
BesselKPair temme_series(double mu, double x) {
    const double x2 = 0.5 * x;
    const double pimu = kPi * mu;
    const double fact = (std::fabs(pimu) < kEps) ? 1.0 : pimu / std::sin(pimu);
    double d = -std::log(x2);
    double e = mu * d;
    const double fact2 = (std::fabs(e) < kEps) ? 1.0 : std::sinh(e) / e;
    double gam1, gam2, gampl, gammi;
    temme_gammas(mu, gam1, gam2, gampl, gammi);
    double ff = fact * (gam1 * std::cosh(e) + gam2 * fact2 * d);
    double sum = ff;
    e = std::exp(e);
    double p = 0.5 * e / gampl;
    double q = 0.5 / (e * gammi);
    double c = 1.0;
    d = x2 * x2;
    double sum1 = p;
    const double mu2 = mu * mu;
    for (int i = 1; i <= kMaxIter; ++i) {
        ff = (i * ff + p + q) / (i * i - mu2);
        c *= d / i;
        p /= (i - mu);
        q /= (i + mu);
        const double del = c * ff;
        sum += del;
        const double del1 = c * (p - i * ff);
        sum1 += del1;
        if (std::fabs(del) < std::fabs(sum) * kEps) break;
    }
    return {sum, sum1 * (2.0 / x)};
}

// K_mu(x) and K_{mu+1}(x) for x > 2, |mu| <= 1/2 (Steed's CF2 per
// Thompson & Barnett).
BesselKPair steed_cf2(double mu, double x) {
    const double mu2 = mu * mu;
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    const double a1 = 0.25 - mu2;
    double q = a1, c = a1, a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 2; i <= kMaxIter; ++i) {
        a -= 2.0 * (i - 1);
        c = -a * c / i;
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::fabs(dels / s) < kEps) break;
    }
    h = a1 * h;
    const double kmu = std::sqrt(kPi / (2.0 * x)) * std::exp(-x) / s;
    const double kmu1 = kmu * (mu + x + 0.5 - h) / x;
    return {kmu, kmu1};
}

}  // namespace

BesselKPair bessel_k_pair(double nu, double x) {
    if (!(x > 0.0)) throw std::domain_error("bessel_k: argument must be positive");
    if (std::isnan(nu)) throw std::domain_error("bessel_k: order must be finite");
    nu = std::fabs(nu);  // K_{-nu} = K_nu

    const int nl = static_cast<int>(nu + 0.5);
    const double mu = nu - nl;  // |mu| <= 1/2

    BesselKPair kp = (x <= 2.0) ? temme_series(mu, x) : steed_cf2(mu, x);

    // upward recurrence K_{v+1} = K_{v-1} + (2v/x) K_v, stable for K
    double kprev = kp.knu, kcur = kp.knu1;
    for (int i = 1; i <= nl; ++i) {
        const double knext = kprev + (2.0 * (mu + i) / x) * kcur;
        kprev = kcur;
        kcur = knext;
    }
    return {kprev, kcur};
}

double bessel_k(double nu, double x) {
    return bessel_k_pair(nu, x).knu;
}

}  // namespace gossipgp
