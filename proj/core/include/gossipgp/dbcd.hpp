#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "gossipgp/geo.hpp"
#include "gossipgp/network.hpp"
#include "gossipgp/objective.hpp"

namespace gossipgp {

struct RunConfig {
    int T = 100;               // outer iterations
    int K = 6;                 // multi-consensus rounds per averaging step
    int S = 5;                 // max Newton steps per theta update
    double newton_tol = 1e-8;  // inner early stop on step norm
    int max_halvings = 20;     // step-size halvings before a stall
    double box_lo = 1e-4;      // feasibility box for sigma and beta
    double box_hi = 1e4;
    double md_eps_rel = 1e-8;      // md thresholds, scaled by 1 + max |eig|
    double md_lambda_rel = 1e-6;
    double early_stop_tol = 0.0;   // outer early stop on parameter change; 0 = off
    std::uint64_t seed = 0;
    int workers = 1;

    // initialization (local fits averaged over the network)
    int init_iters = 40;
    double init_tol = 1e-7;
    double init_sigma = 1.0;
    double init_beta = 0.1;
    double nu = 0.5;  // smoothness, fixed during fitting

    void validate() const;
};

// One machine: its data slice, parameter copies, and every consensus
// accumulator (current value plus the previous contribution that the
// dynamic recursion needs).
struct MachineState {
    SpatialDataset data;
    ModelParams params;
    VariationalState v;

    Matrix Y_Sigma, Y_Sigma_prev;  // tracks avg B_i^T B_i
    Vector y_mu, y_mu_prev;        // tracks avg B_i^T (z_i - X_i gamma_i)
    Matrix Y_X;                    // static consensus of X_i^T X_i
    Vector y_gamma, y_gamma_prev;  // tracks avg (X_i^T z_i - X_i^T B_i mu_i)
    double y_delta = 0.0, y_delta_prev = 0.0;  // tracks avg l_i
    double y_n = 0.0;              // static consensus of n_i

    bool gamma_acc_ready = false;  // those two accumulators seed on first use
    bool delta_acc_ready = false;

    bool stall = false;          // theta line search stalled this iteration
    bool init_fallback = false;  // local init fit diverged, moment start used

    Matrix BtB;  // B(theta^t)^T B(theta^t), shared by the delta update
    std::shared_ptr<GppWorkspace> ws;

    int n() const { return data.n(); }
};

struct MachineSnapshot {
    Vector gamma;
    double delta = 0.0, sigma = 0.0, beta = 0.0;
    bool stall = false;
};

struct ConvergenceTrace {
    struct Iter {
        int iter = 0;
        std::vector<MachineSnapshot> machines;
        double log_rel_err = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<Iter> iters;  // length T+1 including the initial point
    int p = 0;
};

// Per-machine local fits (block coordinate descent on the machine's own
// data), consensus-averaged with K rounds, then all accumulators seeded
// at the averaged parameters.
std::vector<MachineState> init_local(const std::vector<SpatialDataset>& machines,
                                     const KnotSet& knots, const WeightMatrix& W,
                                     const RunConfig& cfg);

// The four block updates of one outer iteration, in order.  t is the
// outer iteration index; t = 0 consumes the freshly seeded accumulators
// without a consensus advance, matching their recursions.
void update_mu_sigma(std::vector<MachineState>& states, const WeightMatrix& W,
                     const RunConfig& cfg, int t);
void update_gamma(std::vector<MachineState>& states, const WeightMatrix& W, const RunConfig& cfg,
                  int t);
void update_delta(std::vector<MachineState>& states, const WeightMatrix& W, const RunConfig& cfg,
                  int t);
void update_theta(std::vector<MachineState>& states, const WeightMatrix& W, const RunConfig& cfg,
                  int t);

// log10 of the worst machine's summed relative parameter deviation from
// the reference (which also provides the normalizers); exact agreement
// clamps at -16.
double log_relative_error(const std::vector<MachineState>& states, const ModelParams& reference);

struct RunResult {
    std::vector<MachineState> states;
    ConvergenceTrace trace;
};

// T outer iterations of the four block updates over the given topology.
// When a reference estimate is supplied the trace records the
// logarithmic relative error per iteration.
RunResult run(const std::vector<SpatialDataset>& machines, const KnotSet& knots,
              const Topology& topo, const RunConfig& cfg,
              const ModelParams* reference = nullptr);

// Trace CSV: iter,machine,gamma_1..p,delta,sigma,beta,log_rel_err,stall_flag.
void write_trace_csv(const std::string& path, const ConvergenceTrace& trace);

}  // namespace gossipgp
