#pragma once

#include <string>
#include <vector>

#include "gossipgp/dbcd.hpp"

namespace gossipgp {

struct PredictiveDistribution {
    Vector mean;  // n_P
    Matrix cov;   // n_P x n_P, symmetric PSD
};

// Plug-in predictive law at new locations:
//   mean = X^P gamma + B^P mu,  cov = B^P Sigma (B^P)^T + delta^-1 I.
PredictiveDistribution predict(const Matrix& new_locs, const Matrix& new_X, const KnotSet& knots,
                               const ModelParams& params, const VariationalState& v);

struct AsymptoticVariances {
    Matrix V_gamma;        // p x p (empty when p = 0)
    double v_delta = 0.0;
    Matrix2 V_theta;       // (sigma, beta)
};

// How global sums are assembled: over the network (W, K rounds) or by
// direct summation (the exact reference).
struct ConsensusContext {
    const WeightMatrix* W = nullptr;  // nullptr = exact global sums
    int K = 0;
};

AsymptoticVariances estimate_variances(const std::vector<SpatialDataset>& machines,
                                       const KnotSet& knots, const ModelParams& params,
                                       const ConsensusContext& ctx = {});

struct ConfidenceIntervals {
    struct Entry {
        std::string name;
        double point = 0.0, sd = 0.0, lower = 0.0, upper = 0.0;
    };
    std::vector<Entry> entries;  // gamma_1..p, delta, sigma, beta
    double level = 0.95;
};

// Normal-theory intervals with inverse-information half-widths:
// z * sqrt([V_gamma^-1]_ii / N) for gamma, z / sqrt(N v_delta) for delta,
// z * sqrt([V_theta^-1]_ii / m) for sigma and beta.
ConfidenceIntervals confidence_intervals(const AsymptoticVariances& vars,
                                         const ModelParams& estimates, long N, int m,
                                         double level);

double normal_quantile(double p);  // inverse standard normal CDF

// Single-machine block coordinate descent to convergence; the baseline
// estimate against which decentralized runs are scored.
RunResult fit_centralized_run(const SpatialDataset& data, const KnotSet& knots,
                              const RunConfig& cfg);
ModelParams fit_centralized(const SpatialDataset& data, const KnotSet& knots,
                            const RunConfig& cfg);

struct NuSearchResult {
    struct Row {
        double nu = 0.0;
        double nll_value = 0.0;
        bool ok = false;
    };
    std::vector<Row> table;
    double nu_hat = 0.0;
};

// Full fit of (gamma, delta, sigma, beta) at each fixed candidate nu;
// the candidate minimizing the negative log-likelihood wins.  Failed
// candidates are recorded and excluded.
NuSearchResult estimate_nu(const SpatialDataset& data, const KnotSet& knots,
                           const std::vector<double>& candidates, const RunConfig& cfg);

}  // namespace gossipgp
