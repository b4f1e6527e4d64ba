#include "gossipgp/inference.hpp"

#include <algorithm>
#include <cmath>

#include "gossipgp/parallel.hpp"

namespace gossipgp {
namespace {

// Sums of machine-local terms entering the information matrices.
struct GlobalSums {
    Matrix Sx;    // sum X_j^T X_j        (p x p)
    Matrix SxB;   // sum X_j^T B_j        (p x m)
    Matrix S;     // sum B_j^T B_j        (m x m)
    Vector u;     // sum B_j^T r_j        (m)
    double rss = 0.0;
    long N = 0;
};

// Assembles the sums either exactly or through K rounds of averaging
// (averages times J).  The consensus route returns machine 0's copy.
GlobalSums assemble_sums(const std::vector<SpatialDataset>& machines, const KnotSet& knots,
                         const ModelParams& params, const ConsensusContext& ctx) {
    const int J = static_cast<int>(machines.size());
    const int m = knots.m();
    const int p = machines.front().p();

    std::vector<Matrix> Sx(J), SxB(J), S(J);
    std::vector<Vector> u(J);
    std::vector<double> rss(J), n(J);
    for (int j = 0; j < J; ++j) {
        const auto& d = machines[j];
        GppWorkspace ws(d.locs, knots.knots);
        const auto& e = ws.at(params.theta.beta, params.theta.nu, false);
        const Vector r = d.p() > 0 ? Vector(d.z - d.X * params.gamma) : d.z;
        Sx[j] = p > 0 ? Matrix(d.X.transpose() * d.X) : Matrix(0, 0);
        SxB[j] = p > 0 ? Matrix(d.X.transpose() * e.B) : Matrix(0, m);
        S[j] = e.B.transpose() * e.B;
        u[j] = e.B.transpose() * r;
        rss[j] = r.squaredNorm();
        n[j] = d.n();
    }
    if (ctx.W) {
        if (ctx.K < 1) throw std::invalid_argument("estimate_variances: consensus needs K >= 1");
        if (p > 0) {
            Sx = multi_consensus(Sx, *ctx.W, ctx.K);
            SxB = multi_consensus(SxB, *ctx.W, ctx.K);
        }
        S = multi_consensus(S, *ctx.W, ctx.K);
        u = multi_consensus(u, *ctx.W, ctx.K);
        rss = multi_consensus(rss, *ctx.W, ctx.K);
        n = multi_consensus(n, *ctx.W, ctx.K);
        GlobalSums g;
        g.Sx = p > 0 ? Matrix(J * Sx[0]) : Matrix(0, 0);
        g.SxB = p > 0 ? Matrix(J * SxB[0]) : Matrix(0, m);
        g.S = J * S[0];
        g.u = J * u[0];
        g.rss = J * rss[0];
        g.N = std::lround(J * n[0]);
        return g;
    }
    GlobalSums g;
    g.Sx = p > 0 ? Matrix::Zero(p, p) : Matrix(0, 0);
    g.SxB = p > 0 ? Matrix::Zero(p, m) : Matrix(0, m);
    g.S = Matrix::Zero(m, m);
    g.u = Vector::Zero(m);
    for (int j = 0; j < J; ++j) {
        if (p > 0) {
            g.Sx += Sx[j];
            g.SxB += SxB[j];
        }
        g.S += S[j];
        g.u += u[j];
        g.rss += rss[j];
        g.N += machines[j].n();
    }
    return g;
}

// Negative log-likelihood from assembled sums (the Woodbury form).
double nll_from_sums(const GlobalSums& g, const KnotSet& knots, const ModelParams& params) {
    const int m = knots.m();
    const double s2 = params.theta.sigma * params.theta.sigma;
    GppWorkspace wsk(knots.knots, knots.knots);
    const auto& ek = wsk.at(params.theta.beta, params.theta.nu, false);
    const Matrix Kinv = ek.lltKhat.solve(Matrix::Identity(m, m)) / s2;
    Eigen::LLT<Matrix> lltA(Matrix(Kinv + params.delta * g.S));
    if (lltA.info() != Eigen::Success)
        throw numerical_error("nll: Woodbury inner matrix is not positive definite");
    const double logdetA = 2.0 * lltA.matrixLLT().diagonal().array().log().sum();
    const double logdetK = m * std::log(s2) + ek.logdetKhat;
    const double logdetC = -double(g.N) * std::log(params.delta) + logdetK + logdetA;
    const double quad =
        params.delta * g.rss - params.delta * params.delta * g.u.dot(lltA.solve(g.u));
    return 0.5 * g.N * 1.8378770664093454835606594728 + 0.5 * logdetC + 0.5 * quad;
}

}  // namespace

PredictiveDistribution predict(const Matrix& new_locs, const Matrix& new_X, const KnotSet& knots,
                               const ModelParams& params, const VariationalState& v) {
    params.validate();
    knots.validate();
    if (new_locs.cols() != 2) throw std::invalid_argument("predict: locations must be n x 2");
    if (params.gamma.size() > 0 && new_X.cols() != params.gamma.size())
        throw std::invalid_argument("predict: covariate width does not match gamma");
    if (params.gamma.size() > 0 && new_X.rows() != new_locs.rows())
        throw std::invalid_argument("predict: covariate rows do not match locations");

    const BasisMatrices basis = build_basis(new_locs, knots.knots, params.theta, false);
    PredictiveDistribution out;
    out.mean = basis.B * v.mu;
    if (params.gamma.size() > 0) out.mean += new_X * params.gamma;
    out.cov = basis.B * v.Sigma * basis.B.transpose();
    out.cov.diagonal().array() += 1.0 / params.delta;  // nugget variance tau^2
    out.cov = 0.5 * (out.cov + out.cov.transpose());
    return out;
}

AsymptoticVariances estimate_variances(const std::vector<SpatialDataset>& machines,
                                       const KnotSet& knots, const ModelParams& params,
                                       const ConsensusContext& ctx) {
    params.validate();
    knots.validate();
    if (machines.empty()) throw std::invalid_argument("estimate_variances: no machines");
    const int m = knots.m();
    const int p = machines.front().p();
    const double delta = params.delta;

    const GlobalSums g = assemble_sums(machines, knots, params, ctx);
    const double s2 = params.theta.sigma * params.theta.sigma;
    GppWorkspace wsk(knots.knots, knots.knots);
    const auto& ek = wsk.at(params.theta.beta, params.theta.nu, false);
    const Matrix Kinv = ek.lltKhat.solve(Matrix::Identity(m, m)) / s2;
    Eigen::LLT<Matrix> lltA(Matrix(Kinv + delta * g.S));
    if (lltA.info() != Eigen::Success)
        throw numerical_error("estimate_variances: Woodbury inner matrix not positive definite");

    AsymptoticVariances out;
    // V_gamma = (1/N) [delta sum X^T X - delta^2 (sum X^T B) A^-1 (sum B^T X)]
    if (p > 0) {
        const Matrix Ax = lltA.solve(g.SxB.transpose());  // m x p
        out.V_gamma = (delta * g.Sx - delta * delta * g.SxB * Ax) / double(g.N);
        out.V_gamma = 0.5 * (out.V_gamma + out.V_gamma.transpose());
    }

    // tr(C^-2) = delta^2 N - 2 delta^3 tr(A^-1 S) + delta^4 tr(A^-1 S A^-1 S)
    const Matrix AinvS = lltA.solve(g.S);
    const double trAS = AinvS.trace();
    const double trASAS = AinvS.cwiseProduct(AinvS.transpose()).sum();
    const double trC2 = delta * delta * g.N - 2.0 * std::pow(delta, 3) * trAS +
                        std::pow(delta, 4) * trASAS;
    out.v_delta = trC2 / (2.0 * double(g.N) * std::pow(delta, 4));

    // V_theta = (1/m) x the finite-difference Hessian of the
    // log-likelihood in (sigma, beta) at the estimate.
    const double base[2] = {params.theta.sigma, params.theta.beta};
    double h[2];
    for (int k = 0; k < 2; ++k) h[k] = 1e-4 * (1.0 + std::fabs(base[k]));
    const auto eval = [&](double dsig, double dbet) {
        ModelParams pp = params;
        pp.theta.sigma += dsig;
        pp.theta.beta += dbet;
        const GlobalSums gg = assemble_sums(machines, knots, pp, ctx);
        return nll_from_sums(gg, knots, pp);
    };
    const double f0 = eval(0, 0);
    Matrix2 H;
    H(0, 0) = (eval(h[0], 0) - 2 * f0 + eval(-h[0], 0)) / (h[0] * h[0]);
    H(1, 1) = (eval(0, h[1]) - 2 * f0 + eval(0, -h[1])) / (h[1] * h[1]);
    H(0, 1) = H(1, 0) = (eval(h[0], h[1]) - eval(h[0], -h[1]) - eval(-h[0], h[1]) +
                         eval(-h[0], -h[1])) /
                        (4 * h[0] * h[1]);
    out.V_theta = H / double(m);
    return out;
}

double normal_quantile(double p) {
    // Wichura's AS 241 (PPND16), |error| ~ 1e-16.
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p in (0,1) required");
    const double q = p - 0.5;
    double r;
    if (std::fabs(q) <= 0.425) {
        r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                     6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                   1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                 1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
               (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                     3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                   5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                 4.2313330701600911252e1) * r + 1.0);
    }
    r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                  3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
              (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
              (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return (q < 0.0) ? -val : val;
}

ConfidenceIntervals confidence_intervals(const AsymptoticVariances& vars,
                                         const ModelParams& estimates, long N, int m,
                                         double level) {
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("confidence_intervals: level in (0,1) required");
    if (N < 1 || m < 1) throw std::invalid_argument("confidence_intervals: bad N or m");
    const double z = normal_quantile(0.5 + level / 2.0);
    ConfidenceIntervals out;
    out.level = level;
    const auto push = [&](const std::string& name, double point, double sd) {
        if (!(sd > 0.0) || !std::isfinite(sd))
            throw numerical_error("confidence_intervals: nonpositive variance for " + name);
        out.entries.push_back({name, point, sd, point - z * sd, point + z * sd});
    };
    const int p = static_cast<int>(estimates.gamma.size());
    if (p > 0) {
        Eigen::LLT<Matrix> llt(vars.V_gamma);
        if (llt.info() != Eigen::Success)
            throw numerical_error("confidence_intervals: singular V_gamma");
        const Matrix Vinv = llt.solve(Matrix::Identity(p, p));
        for (int i = 0; i < p; ++i)
            push("gamma_" + std::to_string(i + 1), estimates.gamma(i),
                 std::sqrt(Vinv(i, i) / double(N)));
    }
    push("delta", estimates.delta, std::sqrt(1.0 / (double(N) * vars.v_delta)));
    const Matrix2 Vti = vars.V_theta.inverse();
    if (!Vti.allFinite()) throw numerical_error("confidence_intervals: singular V_theta");
    push("sigma", estimates.theta.sigma, std::sqrt(Vti(0, 0) / double(m)));
    push("beta", estimates.theta.beta, std::sqrt(Vti(1, 1) / double(m)));
    return out;
}

RunResult fit_centralized_run(const SpatialDataset& data, const KnotSet& knots,
                              const RunConfig& cfg) {
    data.validate();
    Topology topo;
    topo.J = 1;
    RunConfig c = cfg;
    if (c.early_stop_tol <= 0.0) c.early_stop_tol = 1e-11;
    return run({data}, knots, topo, c, nullptr);
}

ModelParams fit_centralized(const SpatialDataset& data, const KnotSet& knots,
                            const RunConfig& cfg) {
    return fit_centralized_run(data, knots, cfg).states.front().params;
}

NuSearchResult estimate_nu(const SpatialDataset& data, const KnotSet& knots,
                           const std::vector<double>& candidates, const RunConfig& cfg) {
    if (candidates.empty()) throw std::invalid_argument("estimate_nu: no candidates");
    for (double c : candidates)
        if (!(c > 0.0)) throw std::invalid_argument("estimate_nu: candidates must be positive");

    NuSearchResult out;
    out.table.resize(candidates.size());
    parallel_for(static_cast<int>(candidates.size()), cfg.workers, [&](int i) {
        auto& row = out.table[i];
        row.nu = candidates[i];
        try {
            RunConfig c = cfg;
            c.nu = candidates[i];
            c.workers = 1;
            const ModelParams est = fit_centralized(data, knots, c);
            row.nll_value = nll({data}, knots, est);
            row.ok = std::isfinite(row.nll_value);
        } catch (const std::exception&) {
            row.ok = false;
        }
    });

    const auto best = std::min_element(out.table.begin(), out.table.end(),
                                       [](const auto& a, const auto& b) {
                                           if (a.ok != b.ok) return a.ok;
                                           return a.nll_value < b.nll_value;
                                       });
    if (best == out.table.end() || !best->ok)
        throw numerical_error("estimate_nu: every candidate fit failed");
    out.nu_hat = best->nu;
    return out;
}

}  // namespace gossipgp
