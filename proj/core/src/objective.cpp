#include "gossipgp/objective.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <functional>

namespace gossipgp {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728;

Vector residual(const SpatialDataset& data, const ModelParams& params) {
    if (data.p() == 0) return data.z;
    if (params.gamma.size() != data.p())
        throw std::invalid_argument("objective: gamma length does not match covariates");
    return data.z - data.X * params.gamma;
}

double logdet_llt(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// f_j from precomputed products: G = B^T B, bz = B^T r, rss = r^T r.
double fj_from_products(int n, const Matrix& G, const Vector& bz, double rss,
                        const VariationalState& v, double delta) {
    const double quad = G.cwiseProduct(v.Sigma).sum() + v.mu.dot(G * v.mu);
    return 0.5 * n * kLog2Pi - 0.5 * n * std::log(delta) + 0.5 * delta * quad -
           delta * bz.dot(v.mu) + 0.5 * delta * rss;
}

struct HTerms {
    double value;
    Vector2 grad;
};

// h and its (sigma, beta) gradient share the same solves.
HTerms h_terms(GppWorkspace& ws, const VariationalState& v, const ModelParams& params,
               bool want_grad) {
    const auto& e = ws.at(params.theta.beta, params.theta.nu, want_grad);
    const double s2 = params.theta.sigma * params.theta.sigma;
    const int m = ws.m();

    const Vector a = e.lltKhat.solve(v.mu);            // Khat^-1 mu
    const Matrix Q = e.lltKhat.solve(v.Sigma);         // Khat^-1 Sigma
    const double muKmu = v.mu.dot(a) / s2;             // mu^T K^-1 mu
    const double trKS = Q.trace() / s2;                // tr(K^-1 Sigma)

    Eigen::LLT<Matrix> lltS(v.Sigma);
    if (lltS.info() != Eigen::Success)
        throw numerical_error("kl_h: variational covariance is not positive definite");
    const double logdetK = m * std::log(s2) + e.logdetKhat;

    HTerms out;
    out.value = 0.5 * (muKmu + trKS - logdet_llt(lltS) + logdetK - m);
    if (want_grad) {
        // dh/dsigma = [m - mu^T K^-1 mu - tr(K^-1 Sigma)] / sigma
        out.grad(0) = (m - muKmu - trKS) / params.theta.sigma;
        // dh/dbeta = (1/2)[-a^T dKhat a / s2 - tr(Khat^-1 dKhat Khat^-1 Sigma)/s2
        //            + tr(Khat^-1 dKhat)]
        const Matrix P = e.lltKhat.solve(e.dKhatdbeta);
        out.grad(1) = 0.5 * (-a.dot(e.dKhatdbeta * a) / s2 -
                             P.cwiseProduct(Q.transpose()).sum() / s2 + P.trace());
    }
    return out;
}

Matrix2 hess_by_grad_fd(const std::function<Vector2(const MaternParams&)>& grad,
                        const MaternParams& theta) {
    Matrix2 H;
    for (int k = 0; k < 2; ++k) {
        MaternParams up = theta, dn = theta;
        double& u = (k == 0) ? up.sigma : up.beta;
        double& d = (k == 0) ? dn.sigma : dn.beta;
        const double h = 1e-5 * (1.0 + std::fabs(u));
        u += h;
        d -= h;
        if (u == d) throw numerical_error("theta Hessian: finite-difference step underflow");
        H.col(k) = (grad(up) - grad(dn)) / (u - d);
    }
    return Matrix2(0.5 * (H + H.transpose()));
}

}  // namespace

void ModelParams::validate() const {
    if (!(delta > 0.0) || !std::isfinite(delta))
        throw std::invalid_argument("ModelParams: delta must be positive");
    theta.validate();
}

double local_elbo_fj(const SpatialDataset& data, const BasisMatrices& basis,
                     const VariationalState& v, const ModelParams& params) {
    params.validate();
    const Vector r = residual(data, params);
    const Matrix G = basis.B.transpose() * basis.B;
    return fj_from_products(data.n(), G, basis.B.transpose() * r, r.squaredNorm(), v,
                            params.delta);
}

double local_elbo_fj(const SpatialDataset& data, GppWorkspace& ws, const VariationalState& v,
                     const ModelParams& params) {
    const auto& e = ws.at(params.theta.beta, params.theta.nu, false);
    const Vector r = residual(data, params);
    // tr(B^T B M) = sum (B M) .* B with M = Sigma + mu mu^T
    const Matrix BM = e.B * v.Sigma;
    const Vector Bmu = e.B * v.mu;
    const double quad = BM.cwiseProduct(e.B).sum() + Bmu.squaredNorm();
    return 0.5 * data.n() * kLog2Pi - 0.5 * data.n() * std::log(params.delta) +
           0.5 * params.delta * quad - params.delta * r.dot(Bmu) +
           0.5 * params.delta * r.squaredNorm();
}

double kl_h(const VariationalState& v, const Matrix& K) {
    const int m = static_cast<int>(K.rows());
    Eigen::LLT<Matrix> lltK(K);
    if (lltK.info() != Eigen::Success)
        throw numerical_error("kl_h: prior covariance is not positive definite");
    Eigen::LLT<Matrix> lltS(v.Sigma);
    if (lltS.info() != Eigen::Success)
        throw numerical_error("kl_h: variational covariance is not positive definite");
    const double muKmu = v.mu.dot(lltK.solve(v.mu));
    const double trKS = lltK.solve(v.Sigma).trace();
    return 0.5 * (muKmu + trKS - logdet_llt(lltS) + logdet_llt(lltK) - m);
}

double kl_h(GppWorkspace& ws, const VariationalState& v, const ModelParams& params) {
    return h_terms(ws, v, params, false).value;
}

double nll(const std::vector<SpatialDataset>& datasets, const KnotSet& knots,
           const ModelParams& params) {
    params.validate();
    knots.validate();
    const int m = knots.m();
    const double delta = params.delta;

    Matrix S = Matrix::Zero(m, m);  // sum_j B_j^T B_j
    Vector u = Vector::Zero(m);     // sum_j B_j^T r_j
    double rss = 0.0;
    long N = 0;
    double logdetKhat = 0.0;
    for (const auto& d : datasets) {
        GppWorkspace ws(d.locs, knots.knots);
        const auto& e = ws.at(params.theta.beta, params.theta.nu, false);
        const Vector r = residual(d, params);
        S.noalias() += e.B.transpose() * e.B;
        u.noalias() += e.B.transpose() * r;
        rss += r.squaredNorm();
        N += d.n();
        logdetKhat = e.logdetKhat;
    }
    if (N < 1) throw std::invalid_argument("nll: empty data");

    const double s2 = params.theta.sigma * params.theta.sigma;
    // A = K^-1 + delta sum_j B_j^T B_j, with K = s2 Khat
    GppWorkspace wsk(knots.knots, knots.knots);
    const auto& ek = wsk.at(params.theta.beta, params.theta.nu, false);
    const Matrix Kinv = ek.lltKhat.solve(Matrix::Identity(m, m)) / s2;
    const Matrix A = Kinv + delta * S;
    Eigen::LLT<Matrix> lltA(A);
    if (lltA.info() != Eigen::Success)
        throw numerical_error("nll: Woodbury inner matrix is not positive definite");

    const double logdetK = m * std::log(s2) + logdetKhat;
    const double logdetC = -double(N) * std::log(delta) + logdetK + logdet_llt(lltA);
    const double quad = delta * rss - delta * delta * u.dot(lltA.solve(u));
    return 0.5 * N * kLog2Pi + 0.5 * logdetC + 0.5 * quad;
}

Vector2 theta_grad_f(const SpatialDataset& data, GppWorkspace& ws, const VariationalState& v,
                     const ModelParams& params) {
    const auto& e = ws.at(params.theta.beta, params.theta.nu, true);
    const Vector r = residual(data, params);
    // df/dbeta = delta [ sum dB .* (B M) - r^T dB mu ], M = Sigma + mu mu^T;
    // B is sigma-free, so df/dsigma = 0.
    const Matrix BM = e.B * v.Sigma;
    const Vector Bmu = e.B * v.mu;
    const double tr_term =
        e.dBdbeta.cwiseProduct(BM).sum() + (e.dBdbeta * v.mu).dot(Bmu);
    const double lin_term = r.dot(e.dBdbeta * v.mu);
    Vector2 g;
    g(0) = 0.0;
    g(1) = params.delta * (tr_term - lin_term);
    return g;
}

Matrix2 theta_hess_f(const SpatialDataset& data, GppWorkspace& ws, const VariationalState& v,
                     const ModelParams& params) {
    // f is sigma-free through B, so only the beta column is live.
    Matrix2 H = Matrix2::Zero();
    const double h = 1e-5 * (1.0 + std::fabs(params.theta.beta));
    ModelParams up = params, dn = params;
    up.theta.beta += h;
    dn.theta.beta -= h;
    if (up.theta.beta == dn.theta.beta)
        throw numerical_error("theta Hessian: finite-difference step underflow");
    const Vector2 diff = theta_grad_f(data, ws, v, up) - theta_grad_f(data, ws, v, dn);
    H(1, 1) = diff(1) / (up.theta.beta - dn.theta.beta);
    return H;
}

Vector2 theta_grad_h(GppWorkspace& ws, const VariationalState& v, const ModelParams& params) {
    return h_terms(ws, v, params, true).grad;
}

Matrix2 theta_hess_h(GppWorkspace& ws, const VariationalState& v, const ModelParams& params) {
    return hess_by_grad_fd(
        [&](const MaternParams& th) {
            ModelParams p = params;
            p.theta = th;
            return theta_grad_h(ws, v, p);
        },
        params.theta);
}

ThetaDerivs elbo_theta_derivs(const SpatialDataset& data, const KnotSet& knots,
                              const VariationalState& v, const ModelParams& params,
                              DerivMode mode, int num_machines) {
    params.validate();
    knots.validate();
    if (num_machines < 1) throw std::invalid_argument("elbo_theta_derivs: bad machine count");
    GppWorkspace ws(data.locs, knots.knots);
    const double wh = 1.0 / num_machines;

    ThetaDerivs out;
    if (mode == DerivMode::analytic) {
        out.grad = theta_grad_f(data, ws, v, params) + wh * theta_grad_h(ws, v, params);
        out.hess = theta_hess_f(data, ws, v, params) + wh * theta_hess_h(ws, v, params);
        return out;
    }

    const auto phi = [&](const MaternParams& th) {
        ModelParams p = params;
        p.theta = th;
        return local_elbo_fj(data, ws, v, p) + wh * kl_h(ws, v, p);
    };
    const double base[2] = {params.theta.sigma, params.theta.beta};
    double step[2];
    for (int k = 0; k < 2; ++k) step[k] = 1e-5 * (1.0 + std::fabs(base[k]));
    const auto at = [&](double ds, double db) {
        MaternParams th = params.theta;
        th.sigma += ds;
        th.beta += db;
        return phi(th);
    };
    out.grad(0) = (at(step[0], 0) - at(-step[0], 0)) / (2 * step[0]);
    out.grad(1) = (at(0, step[1]) - at(0, -step[1])) / (2 * step[1]);
    const double f0 = at(0, 0);
    out.hess(0, 0) = (at(step[0], 0) - 2 * f0 + at(-step[0], 0)) / (step[0] * step[0]);
    out.hess(1, 1) = (at(0, step[1]) - 2 * f0 + at(0, -step[1])) / (step[1] * step[1]);
    out.hess(0, 1) = out.hess(1, 0) =
        (at(step[0], step[1]) - at(step[0], -step[1]) - at(-step[0], step[1]) +
         at(-step[0], -step[1])) /
        (4 * step[0] * step[1]);
    return out;
}

Matrix md(const Matrix& H, double eps, double lambda_min) {
    if (!(eps > 0.0) || !(lambda_min > 0.0))
        throw std::invalid_argument("md: thresholds must be positive");
    if (H.rows() != H.cols()) throw std::invalid_argument("md: matrix must be square");
    const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw std::invalid_argument("md: matrix must be symmetric");

    Eigen::SelfAdjointEigenSolver<Matrix> es(H);
    Vector lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (std::fabs(lam(i)) < eps)
            lam(i) = lambda_min;
        else if (lam(i) < 0.0)
            lam(i) = -lam(i);
    }
    Matrix out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

}  // namespace gossipgp
