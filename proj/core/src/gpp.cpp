#include "gossipgp/gpp.hpp"

#include <cmath>
#include <stdexcept>

namespace gossipgp {
namespace {

Matrix pairwise_dist(const Matrix& a, const Matrix& b) {
    Matrix d(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            d(i, j) = (a.row(i) - b.row(j)).norm();
    return d;
}

void fill_corr(const Matrix& dist, const MaternParams& unit, Matrix& corr, Matrix* dcorr) {
    corr.resize(dist.rows(), dist.cols());
    if (dcorr) dcorr->resize(dist.rows(), dist.cols());
    MaternGrad g;
    for (Eigen::Index i = 0; i < dist.rows(); ++i) {
        for (Eigen::Index j = 0; j < dist.cols(); ++j) {
            if (dcorr) {
                corr(i, j) = matern_cov_with_grad(dist(i, j), unit, g);
                (*dcorr)(i, j) = g.d_beta;
            } else {
                corr(i, j) = matern_cov(dist(i, j), unit);
            }
        }
    }
}

}  // namespace

GppWorkspace::GppWorkspace(Matrix locs, Matrix knots, double jitter)
    : locs_(std::move(locs)), knots_(std::move(knots)), jitter_(jitter) {
    if (locs_.cols() != 2 || knots_.cols() != 2)
        throw std::invalid_argument("GppWorkspace: locations must be n x 2");
    if (knots_.rows() < 1) throw std::invalid_argument("GppWorkspace: need at least one knot");
    dist_x_ = pairwise_dist(locs_, knots_);
    dist_k_ = pairwise_dist(knots_, knots_);
}

const GppWorkspace::Entry& GppWorkspace::at(double beta, double nu, bool with_derivs) {
    for (auto& k : cache_) {
        if (k.beta == beta && k.nu == nu && (k.entry->with_derivs || !with_derivs))
            return *k.entry;
    }
    const MaternParams unit{1.0, beta, nu};
    unit.validate();
    auto e = std::make_shared<Entry>();
    e->with_derivs = with_derivs;

    Matrix corr_x, dcorr_x;
    fill_corr(dist_x_, unit, corr_x, with_derivs ? &dcorr_x : nullptr);
    fill_corr(dist_k_, unit, e->Khat, with_derivs ? &e->dKhatdbeta : nullptr);
    if (jitter_ > 0.0) e->Khat.diagonal().array() += jitter_;

    e->lltKhat.compute(e->Khat);
    if (e->lltKhat.info() != Eigen::Success)
        throw numerical_error("GppWorkspace: knot covariance factorization failed "
                              "(duplicate knots? consider a jitter)");
    const Vector diagL = e->lltKhat.matrixLLT().diagonal();
    const double cond = std::pow(diagL.maxCoeff() / diagL.minCoeff(), 2);
    if (!(cond < 1e14))
        throw numerical_error("GppWorkspace: knot covariance numerically singular "
                              "(condition estimate > 1e14); consider a jitter");
    e->logdetKhat = 2.0 * diagL.array().log().sum();

    e->B = e->lltKhat.solve(corr_x.transpose()).transpose();
    if (with_derivs)
        e->dBdbeta = e->lltKhat.solve((dcorr_x - e->B * e->dKhatdbeta).transpose()).transpose();

    if (cache_.size() >= 6) cache_.erase(cache_.begin());
    cache_.push_back({beta, nu, e});
    return *cache_.back().entry;
}

BasisMatrices build_basis(const Matrix& locs, const Matrix& knots, const MaternParams& params,
                          bool with_derivatives, double jitter) {
    params.validate();
    GppWorkspace ws(locs, knots, jitter);
    const auto& e = ws.at(params.beta, params.nu, with_derivatives);
    const double s2 = params.sigma * params.sigma;
    BasisMatrices out;
    out.B = e.B;
    out.K = s2 * e.Khat;
    if (with_derivatives) {
        out.dB = {Matrix::Zero(e.B.rows(), e.B.cols()), e.dBdbeta};
        out.dK = {(2.0 / params.sigma) * out.K, s2 * e.dKhatdbeta};
    }
    return out;
}

}  // namespace gossipgp
