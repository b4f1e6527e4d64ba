#pragma once

// Reference recursion for the decentralized block updates in which every
// weighted-averaging step is replaced by the exact global mean of the
// same quantities.  Independent bookkeeping from the engine: plain
// per-machine containers, direct averaging, no consensus code.  On a
// complete communication graph the engine must reproduce this recursion
// at every iteration.

#include <Eigen/Eigenvalues>
#include <vector>

#include "gossipgp/dbcd.hpp"
#include "gossipgp/objective.hpp"

namespace exact_reference {

using namespace gossipgp;

struct State {
    std::vector<SpatialDataset> data;
    std::vector<ModelParams> params;
    std::vector<VariationalState> v;
    std::vector<std::shared_ptr<GppWorkspace>> ws;

    // trackers; at t = 0 these are the machine-local seeds
    std::vector<Matrix> YS;
    std::vector<Vector> ymu;
    std::vector<Matrix> YX;
    std::vector<Vector> ygam;
    std::vector<double> ydel;
    std::vector<double> yn;
    bool gamma_seeded = false;
    bool delta_seeded = false;

    int J() const { return static_cast<int>(data.size()); }
};

inline Matrix clip_psd(const Matrix& Y) {
    const Matrix Ys = 0.5 * (Y + Y.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(Ys);
    if (es.eigenvalues().minCoeff() >= 0.0) return Ys;
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
           es.eigenvectors().transpose();
}

inline State make(const std::vector<SpatialDataset>& machines, const KnotSet& knots,
                  const std::vector<ModelParams>& params0,
                  const std::vector<VariationalState>& v0) {
    State st;
    st.data = machines;
    st.params = params0;
    st.v = v0;
    const int J = st.J();
    st.YS.resize(J);
    st.ymu.resize(J);
    st.YX.resize(J);
    st.ygam.resize(J);
    st.ydel.assign(J, 0.0);
    st.yn.resize(J);
    for (int j = 0; j < J; ++j) {
        st.ws.push_back(std::make_shared<GppWorkspace>(machines[j].locs, knots.knots));
        const auto& e = st.ws[j]->at(params0[j].theta.beta, params0[j].theta.nu, true);
        const Vector r = machines[j].p() > 0
                             ? Vector(machines[j].z - machines[j].X * params0[j].gamma)
                             : machines[j].z;
        st.YS[j] = e.B.transpose() * e.B;
        st.ymu[j] = e.B.transpose() * r;
        st.YX[j] = machines[j].p() > 0 ? Matrix(machines[j].X.transpose() * machines[j].X)
                                       : Matrix(0, 0);
        st.yn[j] = machines[j].n();
    }
    return st;
}

template <class T>
T mean_of(const std::vector<T>& xs) {
    T acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc += xs[i];
    return acc / double(xs.size());
}

// One outer iteration; t = 0 uses the local seeds exactly as the
// decentralized recursion does.
inline void iterate(State& st, const RunConfig& cfg, int t) {
    const int J = st.J();
    const int m = static_cast<int>(st.YS[0].rows());

    // ---- mu / Sigma ----
    if (t > 0) {
        std::vector<Matrix> cY(J);
        std::vector<Vector> cy(J);
        for (int j = 0; j < J; ++j) {
            const auto& e = st.ws[j]->at(st.params[j].theta.beta, st.params[j].theta.nu, true);
            const Vector r = st.data[j].p() > 0
                                 ? Vector(st.data[j].z - st.data[j].X * st.params[j].gamma)
                                 : st.data[j].z;
            cY[j] = e.B.transpose() * e.B;
            cy[j] = e.B.transpose() * r;
        }
        const Matrix mY = mean_of(cY);
        const Vector my = mean_of(cy);
        for (int j = 0; j < J; ++j) {
            st.YS[j] = mY;
            st.ymu[j] = my;
        }
    }
    std::vector<Matrix> Kinv(J);
    for (int j = 0; j < J; ++j) {
        const auto& e = st.ws[j]->at(st.params[j].theta.beta, st.params[j].theta.nu, true);
        Kinv[j] = e.lltKhat.solve(Matrix::Identity(m, m)) /
                  (st.params[j].theta.sigma * st.params[j].theta.sigma);
    }
    const Matrix meanKinv = mean_of(Kinv);
    for (int j = 0; j < J; ++j) {
        const Matrix P = st.params[j].delta * J * clip_psd(st.YS[j]);
        st.v[j].Sigma = Matrix((P + Kinv[j]).llt().solve(Matrix::Identity(m, m)));
        st.v[j].Sigma = 0.5 * (st.v[j].Sigma + st.v[j].Sigma.transpose());
        st.v[j].mu =
            (P + meanKinv).llt().solve(Vector(J * st.params[j].delta * st.ymu[j]));
    }

    // ---- gamma ----
    if (st.data[0].p() > 0) {
        if (t > 0) {
            const Matrix mYX = mean_of(st.YX);
            for (int j = 0; j < J; ++j) st.YX[j] = mYX;
        }
        std::vector<Vector> c(J);
        for (int j = 0; j < J; ++j) {
            const auto& e = st.ws[j]->at(st.params[j].theta.beta, st.params[j].theta.nu, true);
            c[j] = st.data[j].X.transpose() * (st.data[j].z - e.B * st.v[j].mu);
        }
        if (!st.gamma_seeded) {
            st.ygam = c;
            st.gamma_seeded = true;
        } else {
            const Vector mc = mean_of(c);
            for (int j = 0; j < J; ++j) st.ygam[j] = mc;
        }
        for (int j = 0; j < J; ++j) st.params[j].gamma = st.YX[j].llt().solve(st.ygam[j]);
    }

    // ---- delta ----
    if (t > 0) {
        const double myn = mean_of(st.yn);
        for (int j = 0; j < J; ++j) st.yn[j] = myn;
    }
    std::vector<double> l(J);
    for (int j = 0; j < J; ++j) {
        const auto& e = st.ws[j]->at(st.params[j].theta.beta, st.params[j].theta.nu, true);
        const Vector r = st.data[j].p() > 0
                             ? Vector(st.data[j].z - st.data[j].X * st.params[j].gamma)
                             : st.data[j].z;
        const Matrix BtB = e.B.transpose() * e.B;
        l[j] = BtB.cwiseProduct(st.v[j].Sigma).sum() + st.v[j].mu.dot(BtB * st.v[j].mu) -
               2.0 * r.dot(e.B * st.v[j].mu) + r.squaredNorm();
    }
    if (!st.delta_seeded) {
        st.ydel = l;
        st.delta_seeded = true;
    } else {
        const double ml = mean_of(l);
        for (int j = 0; j < J; ++j) st.ydel[j] = ml;
    }
    for (int j = 0; j < J; ++j) st.params[j].delta = st.yn[j] / st.ydel[j];

    // ---- theta (Newton with exact averages at every inner step) ----
    for (int s = 1; s <= cfg.S; ++s) {
        std::vector<Matrix2> Hf(J), Hh(J);
        std::vector<Vector2> Gf(J), Gh(J);
        for (int j = 0; j < J; ++j) {
            Hf[j] = theta_hess_f(st.data[j], *st.ws[j], st.v[j], st.params[j]);
            Gf[j] = theta_grad_f(st.data[j], *st.ws[j], st.v[j], st.params[j]);
            Hh[j] = theta_hess_h(*st.ws[j], st.v[j], st.params[j]);
            Gh[j] = theta_grad_h(*st.ws[j], st.v[j], st.params[j]);
        }
        const Matrix2 mHf = mean_of(Hf), mHh = mean_of(Hh);
        const Vector2 mGf = mean_of(Gf), mGh = mean_of(Gh);
        double max_step = 0.0;
        for (int j = 0; j < J; ++j) {
            Matrix2 Hsys = mHf + mHh / J;
            Hsys = 0.5 * (Hsys + Hsys.transpose());
            const Vector2 g = mGf + mGh / J;
            Eigen::SelfAdjointEigenSolver<Matrix2> es(Hsys, Eigen::EigenvaluesOnly);
            const double scale = 1.0 + es.eigenvalues().cwiseAbs().maxCoeff();
            const Matrix Hmod = md(Hsys, cfg.md_eps_rel * scale, cfg.md_lambda_rel * scale);
            const Vector2 dir = -Matrix2(Hmod).inverse() * g;
            if (dir.norm() < cfg.newton_tol) continue;
            ModelParams pj = st.params[j];
            const auto phi = [&](const MaternParams& th) {
                ModelParams q = pj;
                q.theta = th;
                return local_elbo_fj(st.data[j], *st.ws[j], st.v[j], q) +
                       kl_h(*st.ws[j], st.v[j], q) / J;
            };
            const double cur = phi(pj.theta);
            double alpha = 1.0;
            for (int h = 0; h < cfg.max_halvings; ++h, alpha *= 0.5) {
                MaternParams cand = pj.theta;
                cand.sigma += alpha * dir(0);
                cand.beta += alpha * dir(1);
                if (cand.sigma < cfg.box_lo || cand.sigma > cfg.box_hi ||
                    cand.beta < cfg.box_lo || cand.beta > cfg.box_hi)
                    continue;
                double val;
                try {
                    val = phi(cand);
                } catch (const numerical_error&) {
                    continue;
                }
                if (val < cur) {
                    st.params[j].theta = cand;
                    max_step = std::max(max_step, alpha * dir.norm());
                    break;
                }
            }
        }
        if (max_step < cfg.newton_tol) break;
    }
}

}  // namespace exact_reference
