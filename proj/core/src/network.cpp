#include "gossipgp/network.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>

namespace gossipgp {
namespace {

std::vector<int> degrees(const Topology& topo) {
    std::vector<int> deg(topo.J, 0);
    for (auto [i, j] : topo.edges) {
        ++deg[i];
        ++deg[j];
    }
    return deg;
}

}  // namespace

void Topology::validate() const {
    if (J < 1) throw std::invalid_argument("Topology: J must be >= 1");
    for (auto [i, j] : edges) {
        if (i < 0 || j < 0 || i >= J || j >= J)
            throw std::invalid_argument("Topology: edge endpoint out of range");
        if (i == j) throw std::invalid_argument("Topology: self loops are not allowed");
    }
    if (!is_connected(*this)) throw std::invalid_argument("Topology: graph is not connected");
}

bool is_connected(const Topology& topo) {
    if (topo.J <= 1) return true;
    std::vector<std::vector<int>> adj(topo.J);
    for (auto [i, j] : topo.edges) {
        adj[i].push_back(j);
        adj[j].push_back(i);
    }
    std::vector<char> seen(topo.J, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (int w : adj[v])
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                q.push(w);
            }
    }
    return count == topo.J;
}

Topology erdos_renyi(int J, double p, std::uint64_t seed) {
    if (J < 1) throw std::invalid_argument("erdos_renyi: J must be >= 1");
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("erdos_renyi: need 0 < p <= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Topology topo;
    topo.J = J;
    for (int attempt = 0; attempt < 64; ++attempt) {
        topo.edges.clear();
        for (int i = 0; i < J; ++i)
            for (int j = i + 1; j < J; ++j)
                if (unif(rng) < p) topo.edges.emplace_back(i, j);
        if (is_connected(topo)) return topo;
    }
    // Bad luck at small p: keep the last sample and chain a random
    // spanning permutation through it.
    std::vector<int> order(J);
    std::iota(order.begin(), order.end(), 0);
    for (int i = J - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(order[i], order[pick(rng)]);
    }
    for (int i = 0; i + 1 < J; ++i) {
        const auto e = std::minmax(order[i], order[i + 1]);
        if (std::find(topo.edges.begin(), topo.edges.end(), std::make_pair(e.first, e.second)) ==
            topo.edges.end())
            topo.edges.emplace_back(e.first, e.second);
    }
    std::sort(topo.edges.begin(), topo.edges.end());
    return topo;
}

WeightMatrix metropolis_weights(const Topology& topo) {
    topo.validate();
    const int J = topo.J;
    const auto deg = degrees(topo);
    WeightMatrix wm;
    wm.W = Matrix::Zero(J, J);
    for (auto [i, j] : topo.edges) {
        const double w = 1.0 / (1.0 + std::max(deg[i], deg[j]));
        wm.W(i, j) = w;
        wm.W(j, i) = w;
    }
    for (int i = 0; i < J; ++i) wm.W(i, i) = 1.0 - wm.W.row(i).sum();
    wm.rho = mixing_rate(wm.W);
    return wm;
}

double mixing_rate(const Matrix& W) {
    const int J = static_cast<int>(W.rows());
    if (W.cols() != J || J < 1) throw std::invalid_argument("mixing_rate: square matrix required");
    if ((W - W.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("mixing_rate: weight matrix must be symmetric");
    if (J == 1) return 0.0;
    const Matrix M = W - Matrix::Constant(J, J, 1.0 / J);
    Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

void write_edge_csv(const std::string& path, const Topology& topo) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_edge_csv: cannot open " + path);
    f << "i,j\n";
    for (auto [i, j] : topo.edges) f << i << ',' << j << "\n";
    if (!f) throw std::runtime_error("write_edge_csv: write failed for " + path);
}

Topology read_edge_csv(const std::string& path, int J) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_edge_csv: cannot open " + path);
    std::string line;
    Topology topo;
    int maxv = -1;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty() || (first && line.rfind("i,j", 0) == 0)) {
            first = false;
            continue;
        }
        first = false;
        int a, b;
        if (std::sscanf(line.c_str(), "%d,%d", &a, &b) != 2)
            throw std::invalid_argument(path + ": malformed edge row '" + line + "'");
        const auto e = std::minmax(a, b);
        topo.edges.emplace_back(e.first, e.second);
        maxv = std::max({maxv, a, b});
    }
    topo.J = (J > 0) ? J : maxv + 1;
    std::sort(topo.edges.begin(), topo.edges.end());
    topo.edges.erase(std::unique(topo.edges.begin(), topo.edges.end()), topo.edges.end());
    topo.validate();
    return topo;
}

}  // namespace gossipgp
