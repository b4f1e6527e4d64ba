#pragma once

namespace gossipgp {

// Modified Bessel function of the second kind K_nu(x), x > 0.
// Accurate to ~1e-12 relative for nu in [0, 6], x in [1e-8, 700].
// Throws std::domain_error for x <= 0.
double bessel_k(double nu, double x);

struct BesselKPair {
    double knu;    // K_nu(x)
    double knu1;   // K_{nu+1}(x)
};

// K_nu and K_{nu+1} from one evaluation; the pair is what covariance
// derivatives consume (K_{nu-1} follows from the three-term recurrence).
BesselKPair bessel_k_pair(double nu, double x);

}  // namespace gossipgp
