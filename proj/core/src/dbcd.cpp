#include "gossipgp/dbcd.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "gossipgp/parallel.hpp"

namespace gossipgp {
namespace {

Matrix clip_psd(const Matrix& Y) {
    const Matrix Ys = 0.5 * (Y + Y.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(Ys);
    if (es.eigenvalues().minCoeff() >= 0.0) return Ys;
    const Vector lam = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

Vector residual_of(const MachineState& st) {
    if (st.data.p() == 0) return st.data.z;
    return st.data.z - st.data.X * st.params.gamma;
}

// l_i(mu, Sigma, gamma, theta) of the delta subproblem, from cached
// B^T B at the machine's current theta.
double delta_term(const MachineState& st) {
    const auto& e = st.ws->at(st.params.theta.beta, st.params.theta.nu, true);
    const Vector r = residual_of(st);
    const Vector Bmu = e.B * st.v.mu;
    return st.BtB.cwiseProduct(st.v.Sigma).sum() + st.v.mu.dot(st.BtB * st.v.mu) -
           2.0 * r.dot(Bmu) + r.squaredNorm();
}

double local_surrogate(MachineState& st, const MaternParams& theta, int J) {
    ModelParams p = st.params;
    p.theta = theta;
    return local_elbo_fj(st.data, *st.ws, st.v, p) + kl_h(*st.ws, st.v, p) / J;
}

ModelParams moment_start(const SpatialDataset& data, const RunConfig& cfg) {
    ModelParams p;
    if (data.p() > 0) {
        p.gamma = (data.X.transpose() * data.X)
                      .ldlt()
                      .solve(data.X.transpose() * data.z);
    } else {
        p.gamma = Vector(0);
    }
    const Vector r = data.p() > 0 ? Vector(data.z - data.X * p.gamma) : data.z;
    const double var = std::max(r.squaredNorm() / data.n(), 1e-12);
    p.delta = 1.0 / var;
    p.theta = MaternParams{cfg.init_sigma, cfg.init_beta, cfg.nu};
    return p;
}

MachineState make_state(const SpatialDataset& data, const KnotSet& knots,
                        const ModelParams& params, const VariationalState* v0) {
    MachineState st;
    st.data = data;
    st.params = params;
    st.ws = std::make_shared<GppWorkspace>(data.locs, knots.knots);
    const auto& e = st.ws->at(params.theta.beta, params.theta.nu, true);
    const double s2 = params.theta.sigma * params.theta.sigma;
    if (v0) {
        st.v = *v0;
    } else {
        st.v.mu = Vector::Zero(knots.m());
        st.v.Sigma = s2 * e.Khat;
    }
    st.BtB = e.B.transpose() * e.B;
    st.Y_Sigma = st.BtB;
    st.Y_Sigma_prev = st.BtB;
    st.y_mu = e.B.transpose() * residual_of(st);
    st.y_mu_prev = st.y_mu;
    st.Y_X = data.p() > 0 ? Matrix(data.X.transpose() * data.X) : Matrix(0, 0);
    st.y_n = data.n();
    return st;
}

bool params_finite(const MachineState& st) {
    return st.params.gamma.allFinite() && std::isfinite(st.params.delta) &&
           st.params.delta > 0.0 && std::isfinite(st.params.theta.sigma) &&
           std::isfinite(st.params.theta.beta) && st.v.mu.allFinite() && st.v.Sigma.allFinite();
}

double param_change(const std::vector<MachineState>& states,
                    const std::vector<ModelParams>& old) {
    double chg = 0.0;
    for (size_t j = 0; j < states.size(); ++j) {
        double c = std::fabs(states[j].params.delta - old[j].delta) +
                   std::fabs(states[j].params.theta.sigma - old[j].theta.sigma) +
                   std::fabs(states[j].params.theta.beta - old[j].theta.beta);
        if (states[j].params.gamma.size() > 0)
            c += (states[j].params.gamma - old[j].gamma).cwiseAbs().maxCoeff();
        chg = std::max(chg, c);
    }
    return chg;
}

void record_iteration(ConvergenceTrace& trace, const std::vector<MachineState>& states, int iter,
                      const ModelParams* reference) {
    ConvergenceTrace::Iter it;
    it.iter = iter;
    for (const auto& st : states) {
        MachineSnapshot snap;
        snap.gamma = st.params.gamma;
        snap.delta = st.params.delta;
        snap.sigma = st.params.theta.sigma;
        snap.beta = st.params.theta.beta;
        snap.stall = st.stall;
        it.machines.push_back(std::move(snap));
    }
    if (reference) it.log_rel_err = log_relative_error(states, *reference);
    trace.iters.push_back(std::move(it));
}

}  // namespace

void RunConfig::validate() const {
    if (T < 1) throw std::invalid_argument("RunConfig: T must be >= 1");
    if (K < 1) throw std::invalid_argument("RunConfig: K must be >= 1");
    if (S < 1) throw std::invalid_argument("RunConfig: S must be >= 1");
    if (!(newton_tol > 0.0)) throw std::invalid_argument("RunConfig: newton_tol must be positive");
    if (!(box_lo > 0.0 && box_hi > box_lo))
        throw std::invalid_argument("RunConfig: bad sigma/beta box");
    if (!(nu > 0.0)) throw std::invalid_argument("RunConfig: nu must be positive");
    if (workers < 1) throw std::invalid_argument("RunConfig: workers must be >= 1");
}

void update_mu_sigma(std::vector<MachineState>& states, const WeightMatrix& W,
                     const RunConfig& cfg, int t) {
    const int J = static_cast<int>(states.size());
    const int m = states.front().ws->m();

    if (t > 0) {
        std::vector<Matrix> contribY(J);
        std::vector<Vector> contriby(J);
        parallel_for(J, cfg.workers, [&](int j) {
            auto& st = states[j];
            const auto& e = st.ws->at(st.params.theta.beta, st.params.theta.nu, true);
            st.BtB = e.B.transpose() * e.B;
            contribY[j] = st.BtB;
            contriby[j] = e.B.transpose() * residual_of(st);
        });
        ConsensusAccumulator<Matrix> accY;
        ConsensusAccumulator<Vector> accy;
        for (auto& st : states) {
            accY.y.push_back(st.Y_Sigma);
            accY.prev.push_back(st.Y_Sigma_prev);
            accy.y.push_back(st.y_mu);
            accy.prev.push_back(st.y_mu_prev);
        }
        accY.initialized = accy.initialized = true;
        dynamic_consensus_step(accY, contribY, W, cfg.K);
        dynamic_consensus_step(accy, contriby, W, cfg.K);
        for (int j = 0; j < J; ++j) {
            states[j].Y_Sigma = accY.y[j];
            states[j].Y_Sigma_prev = accY.prev[j];
            states[j].y_mu = accy.y[j];
            states[j].y_mu_prev = accy.prev[j];
        }
    }

    // single-round weighting of the neighbors' K^-1, as the mu update uses
    std::vector<Matrix> Kinv(J);
    parallel_for(J, cfg.workers, [&](int j) {
        auto& st = states[j];
        const auto& e = st.ws->at(st.params.theta.beta, st.params.theta.nu, true);
        const double s2 = st.params.theta.sigma * st.params.theta.sigma;
        Kinv[j] = e.lltKhat.solve(Matrix::Identity(m, m)) / s2;
    });
    const std::vector<Matrix> mixedKinv = detail::mix_round(Kinv, W.W);

    parallel_for(J, cfg.workers, [&](int j) {
        auto& st = states[j];
        const Matrix P = st.params.delta * J * clip_psd(st.Y_Sigma);
        Eigen::LLT<Matrix> lltSig(P + Kinv[j]);
        if (lltSig.info() != Eigen::Success)
            throw numerical_error("update_mu_sigma: singular system on machine " +
                                  std::to_string(j));
        const Matrix Sig = lltSig.solve(Matrix::Identity(m, m));
        st.v.Sigma = 0.5 * (Sig + Sig.transpose());
        Eigen::LLT<Matrix> lltMu(P + mixedKinv[j]);
        if (lltMu.info() != Eigen::Success)
            throw numerical_error("update_mu_sigma: singular system on machine " +
                                  std::to_string(j));
        st.v.mu = lltMu.solve(Vector(J * st.params.delta * st.y_mu));
    });
}

void update_gamma(std::vector<MachineState>& states, const WeightMatrix& W, const RunConfig& cfg,
                  int t) {
    const int J = static_cast<int>(states.size());
    if (states.front().data.p() == 0) return;

    if (t > 0) {
        std::vector<Matrix> YX;
        for (auto& st : states) YX.push_back(st.Y_X);
        YX = multi_consensus(YX, W, cfg.K);
        for (int j = 0; j < J; ++j) states[j].Y_X = YX[j];
    }

    std::vector<Vector> contrib(J);
    parallel_for(J, cfg.workers, [&](int j) {
        auto& st = states[j];
        const auto& e = st.ws->at(st.params.theta.beta, st.params.theta.nu, true);
        contrib[j] = st.data.X.transpose() * (st.data.z - e.B * st.v.mu);
    });

    if (!states.front().gamma_acc_ready) {
        for (int j = 0; j < J; ++j) {
            states[j].y_gamma = contrib[j];
            states[j].y_gamma_prev = contrib[j];
            states[j].gamma_acc_ready = true;
        }
    } else {
        ConsensusAccumulator<Vector> acc;
        for (auto& st : states) {
            acc.y.push_back(st.y_gamma);
            acc.prev.push_back(st.y_gamma_prev);
        }
        acc.initialized = true;
        dynamic_consensus_step(acc, contrib, W, cfg.K);
        for (int j = 0; j < J; ++j) {
            states[j].y_gamma = acc.y[j];
            states[j].y_gamma_prev = acc.prev[j];
        }
    }

    parallel_for(J, cfg.workers, [&](int j) {
        auto& st = states[j];
        Eigen::LLT<Matrix> llt(st.Y_X);
        if (llt.info() != Eigen::Success)
            throw numerical_error("update_gamma: collinear covariates on machine " +
                                  std::to_string(j));
        st.params.gamma = llt.solve(st.y_gamma);
    });
}

void update_delta(std::vector<MachineState>& states, const WeightMatrix& W, const RunConfig& cfg,
                  int t) {
    const int J = static_cast<int>(states.size());

    if (t > 0) {
        std::vector<double> yn;
        for (auto& st : states) yn.push_back(st.y_n);
        yn = multi_consensus(yn, W, cfg.K);
        for (int j = 0; j < J; ++j) states[j].y_n = yn[j];
    }

    std::vector<double> contrib(J);
    parallel_for(J, cfg.workers, [&](int j) { contrib[j] = delta_term(states[j]); });

    if (!states.front().delta_acc_ready) {
        for (int j = 0; j < J; ++j) {
            states[j].y_delta = contrib[j];
            states[j].y_delta_prev = contrib[j];
            states[j].delta_acc_ready = true;
        }
    } else {
        ConsensusAccumulator<double> acc;
        for (auto& st : states) {
            acc.y.push_back(st.y_delta);
            acc.prev.push_back(st.y_delta_prev);
        }
        acc.initialized = true;
        dynamic_consensus_step(acc, contrib, W, cfg.K);
        for (int j = 0; j < J; ++j) {
            states[j].y_delta = acc.y[j];
            states[j].y_delta_prev = acc.prev[j];
        }
    }

    for (int j = 0; j < J; ++j) {
        auto& st = states[j];
        if (!(st.y_delta > 0.0))
            throw numerical_error("update_delta: nonpositive accumulator on machine " +
                                  std::to_string(j) + " (divergent consensus)");
        st.params.delta = st.y_n / st.y_delta;
    }
}

void update_theta(std::vector<MachineState>& states, const WeightMatrix& W, const RunConfig& cfg,
                  int t) {
    (void)t;
    const int J = static_cast<int>(states.size());
    for (auto& st : states) st.stall = false;

    std::vector<Matrix2> Hf(J);
    std::vector<Vector2> Gf(J);
    auto eval_f_derivs = [&](int j) {
        auto& st = states[j];
        Hf[j] = theta_hess_f(st.data, *st.ws, st.v, st.params);
        Gf[j] = theta_grad_f(st.data, *st.ws, st.v, st.params);
    };
    parallel_for(J, cfg.workers, eval_f_derivs);
    ConsensusAccumulator<Matrix2> accH;
    ConsensusAccumulator<Vector2> accG;
    init_consensus(accH, Hf);
    init_consensus(accG, Gf);

    std::vector<Matrix2> Hh(J);
    std::vector<Vector2> Gh(J);
    std::vector<double> step_norm(J);

    for (int s = 1; s <= cfg.S; ++s) {
        if (s > 1) parallel_for(J, cfg.workers, eval_f_derivs);
        dynamic_consensus_step(accH, Hf, W, cfg.K);
        dynamic_consensus_step(accG, Gf, W, cfg.K);

        parallel_for(J, cfg.workers, [&](int j) {
            auto& st = states[j];
            Hh[j] = theta_hess_h(*st.ws, st.v, st.params);
            Gh[j] = theta_grad_h(*st.ws, st.v, st.params);
        });
        const std::vector<Matrix2> hH = multi_consensus(Hh, W, cfg.K);
        const std::vector<Vector2> hG = multi_consensus(Gh, W, cfg.K);

        parallel_for(J, cfg.workers, [&](int j) {
            auto& st = states[j];
            step_norm[j] = 0.0;
            Matrix2 Hsys = accH.y[j] + hH[j] / J;
            Hsys = 0.5 * (Hsys + Hsys.transpose());
            const Vector2 g = accG.y[j] + hG[j] / J;

            Eigen::SelfAdjointEigenSolver<Matrix2> es(Hsys, Eigen::EigenvaluesOnly);
            const double lam_scale = 1.0 + es.eigenvalues().cwiseAbs().maxCoeff();
            const Matrix Hmod =
                md(Hsys, cfg.md_eps_rel * lam_scale, cfg.md_lambda_rel * lam_scale);
            const Vector2 dir = -Matrix2(Hmod).inverse() * g;
            if (!dir.allFinite())
                throw numerical_error("update_theta: non-finite Newton direction on machine " +
                                      std::to_string(j));
            if (dir.norm() < cfg.newton_tol) return;

            const double phi_cur = local_surrogate(st, st.params.theta, J);
            double alpha = 1.0;
            for (int halv = 0; halv < cfg.max_halvings; ++halv, alpha *= 0.5) {
                MaternParams cand = st.params.theta;
                cand.sigma += alpha * dir(0);
                cand.beta += alpha * dir(1);
                if (cand.sigma < cfg.box_lo || cand.sigma > cfg.box_hi ||
                    cand.beta < cfg.box_lo || cand.beta > cfg.box_hi)
                    continue;
                double phi_new;
                try {
                    phi_new = local_surrogate(st, cand, J);
                } catch (const numerical_error&) {
                    continue;  // degenerate candidate, keep halving
                }
                if (phi_new < phi_cur) {
                    st.params.theta = cand;
                    step_norm[j] = alpha * dir.norm();
                    return;
                }
            }
            st.stall = true;
        });

        double max_step = 0.0;
        for (double sn : step_norm) max_step = std::max(max_step, sn);
        if (max_step < cfg.newton_tol) break;
    }
}

std::vector<MachineState> init_local(const std::vector<SpatialDataset>& machines,
                                     const KnotSet& knots, const WeightMatrix& W,
                                     const RunConfig& cfg) {
    if (machines.empty()) throw std::invalid_argument("init_local: no machines");
    const int J = static_cast<int>(machines.size());
    knots.validate();

    // Each machine fits its own data (single-machine semantics) to a
    // loose tolerance; divergence falls back to the moment start.
    std::vector<ModelParams> local(J);
    std::vector<VariationalState> vlocal(J);
    std::vector<char> fallback(J, 0);
    WeightMatrix W1;
    W1.W = Matrix::Ones(1, 1);
    W1.rho = 0.0;
    RunConfig lcfg = cfg;
    lcfg.T = cfg.init_iters;
    lcfg.K = 1;
    lcfg.workers = 1;
    lcfg.early_stop_tol = std::max(cfg.init_tol, 0.0);

    parallel_for(J, cfg.workers, [&](int j) {
        machines[j].validate();
        const ModelParams start = moment_start(machines[j], cfg);
        std::vector<MachineState> one;
        one.push_back(make_state(machines[j], knots, start, nullptr));
        bool ok = true;
        try {
            std::vector<ModelParams> old(1);
            for (int it = 0; it < lcfg.T; ++it) {
                old[0] = one[0].params;
                update_mu_sigma(one, W1, lcfg, it);
                update_gamma(one, W1, lcfg, it);
                update_delta(one, W1, lcfg, it);
                update_theta(one, W1, lcfg, it);
                if (!params_finite(one[0])) throw numerical_error("init_local: diverged");
                if (lcfg.early_stop_tol > 0.0 && it > 0 &&
                    param_change(one, old) < lcfg.early_stop_tol)
                    break;
            }
        } catch (const std::exception&) {
            ok = false;
        }
        if (ok && params_finite(one[0])) {
            local[j] = one[0].params;
            vlocal[j] = one[0].v;
        } else {
            local[j] = start;
            MachineState fresh = make_state(machines[j], knots, start, nullptr);
            vlocal[j] = fresh.v;
            fallback[j] = 1;
        }
    });

    // Consensus-average the local minimizers to get the common start.
    const int p = machines.front().p();
    std::vector<Vector> gam(J), mu(J);
    std::vector<Matrix> Sig(J);
    std::vector<double> del(J), sig(J), bet(J);
    for (int j = 0; j < J; ++j) {
        gam[j] = local[j].gamma;
        del[j] = local[j].delta;
        sig[j] = local[j].theta.sigma;
        bet[j] = local[j].theta.beta;
        mu[j] = vlocal[j].mu;
        Sig[j] = vlocal[j].Sigma;
    }
    if (p > 0) gam = multi_consensus(gam, W, cfg.K);
    del = multi_consensus(del, W, cfg.K);
    sig = multi_consensus(sig, W, cfg.K);
    bet = multi_consensus(bet, W, cfg.K);
    mu = multi_consensus(mu, W, cfg.K);
    Sig = multi_consensus(Sig, W, cfg.K);

    std::vector<MachineState> states(J);
    parallel_for(J, cfg.workers, [&](int j) {
        ModelParams pj;
        pj.gamma = gam[j];
        pj.delta = del[j];
        pj.theta = MaternParams{sig[j], bet[j], cfg.nu};
        VariationalState vj{mu[j], Sig[j]};
        states[j] = make_state(machines[j], knots, pj, &vj);
        states[j].init_fallback = fallback[j] != 0;
    });
    return states;
}

double log_relative_error(const std::vector<MachineState>& states, const ModelParams& reference) {
    const int p = static_cast<int>(reference.gamma.size());
    for (int i = 0; i < p; ++i)
        if (reference.gamma(i) == 0.0)
            throw std::invalid_argument("log_relative_error: zero reference gamma component");
    if (reference.delta == 0.0 || reference.theta.sigma == 0.0 || reference.theta.beta == 0.0)
        throw std::invalid_argument("log_relative_error: zero reference component");

    double worst = 0.0;
    for (const auto& st : states) {
        double val = std::fabs((st.params.delta - reference.delta) / reference.delta) +
                     std::fabs((st.params.theta.sigma - reference.theta.sigma) /
                               reference.theta.sigma) +
                     std::fabs((st.params.theta.beta - reference.theta.beta) /
                               reference.theta.beta);
        if (p > 0) {
            if (st.params.gamma.size() != p)
                throw std::invalid_argument("log_relative_error: gamma length mismatch");
            val += ((st.params.gamma - reference.gamma).cwiseQuotient(reference.gamma)).norm();
        }
        worst = std::max(worst, val);
    }
    if (worst == 0.0) return -16.0;
    return std::max(std::log10(worst), -16.0);
}

RunResult run(const std::vector<SpatialDataset>& machines, const KnotSet& knots,
              const Topology& topo, const RunConfig& cfg, const ModelParams* reference) {
    cfg.validate();
    topo.validate();
    if (topo.J != static_cast<int>(machines.size()))
        throw std::invalid_argument("run: topology size does not match machine count");
    const WeightMatrix W = metropolis_weights(topo);

    RunResult out;
    out.states = init_local(machines, knots, W, cfg);
    out.trace.p = machines.front().p();
    record_iteration(out.trace, out.states, 0, reference);

    std::vector<ModelParams> old(out.states.size());
    for (int t = 0; t < cfg.T; ++t) {
        for (size_t j = 0; j < out.states.size(); ++j) old[j] = out.states[j].params;
        update_mu_sigma(out.states, W, cfg, t);
        update_gamma(out.states, W, cfg, t);
        update_delta(out.states, W, cfg, t);
        update_theta(out.states, W, cfg, t);
        record_iteration(out.trace, out.states, t + 1, reference);
        if (cfg.early_stop_tol > 0.0 && param_change(out.states, old) < cfg.early_stop_tol)
            break;
    }
    return out;
}

void write_trace_csv(const std::string& path, const ConvergenceTrace& trace) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_trace_csv: cannot open " + path);
    f << "iter,machine";
    for (int k = 1; k <= trace.p; ++k) f << ",gamma_" << k;
    f << ",delta,sigma,beta,log_rel_err,stall_flag\n";
    char buf[40];
    const auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        f << ',' << buf;
    };
    for (const auto& it : trace.iters) {
        for (size_t j = 0; j < it.machines.size(); ++j) {
            const auto& ms = it.machines[j];
            f << it.iter << ',' << j;
            for (int k = 0; k < trace.p; ++k) put(ms.gamma(k));
            put(ms.delta);
            put(ms.sigma);
            put(ms.beta);
            put(it.log_rel_err);
            f << ',' << (ms.stall ? 1 : 0) << "\n";
        }
    }
    if (!f) throw std::runtime_error("write_trace_csv: write failed for " + path);
}

}  // namespace gossipgp
