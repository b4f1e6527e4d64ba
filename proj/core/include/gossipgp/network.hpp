#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "gossipgp/types.hpp"

namespace gossipgp {

// Undirected connected communication graph over J machines.
struct Topology {
    int J = 1;
    std::vector<std::pair<int, int>> edges;  // i < j, no self loops

    void validate() const;
};

bool is_connected(const Topology& topo);

// Each pair connected independently with probability p; resampled (then
// augmented with a random spanning chain as a last resort) until
// connected.  Deterministic per seed.
Topology erdos_renyi(int J, double p, std::uint64_t seed);

// Doubly stochastic mixing matrix and its mixing rate
// rho = max |eig(W - (1/J) 1 1^T)|.
struct WeightMatrix {
    Matrix W;
    double rho = 0.0;
};

// Metropolis-Hastings weights: w_ij = 1 / (1 + max(deg_i, deg_j)) on
// edges, diagonal fills the row to one.  Needs only neighbor degrees.
WeightMatrix metropolis_weights(const Topology& topo);

double mixing_rate(const Matrix& W);

// Edge-list CSV `i,j` (0-based, one edge per line, header row).
void write_edge_csv(const std::string& path, const Topology& topo);
Topology read_edge_csv(const std::string& path, int J = -1);  // J inferred when -1

namespace detail {

template <class T>
void check_uniform_shapes(const std::vector<T>& values) {
    if (values.empty()) throw std::invalid_argument("consensus: no machines");
    if constexpr (!std::is_arithmetic_v<T>) {
        for (const auto& v : values)
            if (v.rows() != values.front().rows() || v.cols() != values.front().cols())
                throw std::invalid_argument("consensus: per-machine shapes differ");
    }
}

template <class T>
void check_same_shape(const T& a, const T& b) {
    if constexpr (!std::is_arithmetic_v<T>) {
        if (a.rows() != b.rows() || a.cols() != b.cols())
            throw std::invalid_argument("consensus: contribution shape changed");
    }
}

// One weighted-averaging round: out_j = sum_i W(i,j) v_i.
template <class T>
std::vector<T> mix_round(const std::vector<T>& v, const Matrix& W) {
    const int J = static_cast<int>(v.size());
    if (W.rows() != J || W.cols() != J)
        throw std::invalid_argument("consensus: weight matrix size mismatch");
    std::vector<T> out(v);
    for (int j = 0; j < J; ++j) {
        out[j] = W(0, j) * v[0];
        for (int i = 1; i < J; ++i)
            if (W(i, j) != 0.0) out[j] += W(i, j) * v[i];
    }
    return out;
}

}  // namespace detail

// K rounds of weighted averaging (mixes with W^K without forming it).
template <class T>
std::vector<T> multi_consensus(const std::vector<T>& values, const WeightMatrix& W, int K) {
    if (K < 0) throw std::invalid_argument("multi_consensus: K must be nonnegative");
    detail::check_uniform_shapes(values);
    std::vector<T> out = values;
    for (int k = 0; k < K; ++k) out = detail::mix_round(out, W.W);
    return out;
}

// Dynamic consensus tracker for a time-varying average: machines hold
// y_j plus their previous contribution a_j(x^{t-1}).
template <class T>
struct ConsensusAccumulator {
    std::vector<T> y;
    std::vector<T> prev;
    bool initialized = false;
};

template <class T>
void init_consensus(ConsensusAccumulator<T>& acc, std::vector<T> contribs) {
    acc.y = contribs;
    acc.prev = std::move(contribs);
    acc.initialized = true;
}

// y_j^t = sum_i [W^K]_ij (y_i^{t-1} + a_i(x^t) - a_i(x^{t-1})).
template <class T>
void dynamic_consensus_step(ConsensusAccumulator<T>& acc, const std::vector<T>& contribs,
                            const WeightMatrix& W, int K) {
    if (!acc.initialized) throw std::invalid_argument("dynamic_consensus_step: not initialized");
    if (acc.y.size() != contribs.size())
        throw std::invalid_argument("dynamic_consensus_step: machine count mismatch");
    detail::check_uniform_shapes(contribs);
    detail::check_uniform_shapes(acc.y);
    std::vector<T> drifted = acc.y;
    for (size_t j = 0; j < drifted.size(); ++j) {
        detail::check_same_shape(contribs[j], acc.prev[j]);
        drifted[j] += contribs[j] - acc.prev[j];
    }
    acc.y = multi_consensus(drifted, W, K);
    acc.prev = contribs;
}

}  // namespace gossipgp
