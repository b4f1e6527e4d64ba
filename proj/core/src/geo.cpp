#include "gossipgp/geo.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "gossipgp/gpp.hpp"

namespace gossipgp {
namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

std::vector<int> shuffled_indices(int n, std::mt19937_64& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(idx[i], idx[pick(rng)]);
    }
    return idx;
}

// Split n items into parts chunks whose sizes differ by at most one.
std::vector<std::vector<int>> chunk(const std::vector<int>& idx, int parts) {
    std::vector<std::vector<int>> out(parts);
    const int n = static_cast<int>(idx.size());
    const int base = n / parts, extra = n % parts;
    int pos = 0;
    for (int j = 0; j < parts; ++j) {
        const int len = base + (j < extra ? 1 : 0);
        out[j].assign(idx.begin() + pos, idx.begin() + pos + len);
        pos += len;
    }
    return out;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& path) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw std::invalid_argument(path + ": malformed number '" + s + "'");
    return v;
}

}  // namespace

void SpatialDataset::validate() const {
    require(locs.cols() == 2, "SpatialDataset: locations must have two coordinates");
    require(locs.rows() >= 1, "SpatialDataset: need at least one observation");
    require(z.size() == locs.rows() && (X.rows() == locs.rows() || X.size() == 0),
            "SpatialDataset: row counts disagree");
    require(locs.allFinite() && z.allFinite() && X.allFinite(),
            "SpatialDataset: non-finite entries");
}

void KnotSet::validate() const {
    require(knots.cols() == 2 && knots.rows() >= 1, "KnotSet: need m >= 1 planar knots");
    require(knots.allFinite(), "KnotSet: non-finite entries");
    for (int i = 0; i < m(); ++i)
        for (int j = i + 1; j < m(); ++j)
            if ((knots.row(i) - knots.row(j)).norm() == 0.0)
                throw std::invalid_argument("KnotSet: duplicate knots");
}

void TrueModel::validate() const {
    require(tau > 0.0 && std::isfinite(tau), "TrueModel: tau must be positive");
    theta.validate();
}

Matrix generate_locations(int grid_side, double spacing, double jitter_frac, std::uint64_t seed) {
    require(grid_side >= 1, "generate_locations: grid_side must be >= 1");
    require(spacing > 0.0, "generate_locations: spacing must be positive");
    require(jitter_frac >= 0.0 && jitter_frac < 0.5,
            "generate_locations: jitter_frac must lie in [0, 0.5)");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jit(-jitter_frac, jitter_frac);
    Matrix locs(static_cast<Eigen::Index>(grid_side) * grid_side, 2);
    Eigen::Index r = 0;
    for (int i = 0; i < grid_side; ++i) {
        for (int j = 0; j < grid_side; ++j, ++r) {
            locs(r, 0) = i * spacing + (jitter_frac > 0.0 ? jit(rng) * spacing : 0.0);
            locs(r, 1) = j * spacing + (jitter_frac > 0.0 ? jit(rng) * spacing : 0.0);
        }
    }
    return locs;
}

KnotSet select_knots(const Matrix& locs, int m, std::uint64_t seed) {
    require(m >= 1 && m <= locs.rows(), "select_knots: need 1 <= m <= n");
    std::mt19937_64 rng(seed);
    auto idx = shuffled_indices(static_cast<int>(locs.rows()), rng);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    KnotSet ks;
    ks.knots.resize(m, 2);
    for (int i = 0; i < m; ++i) ks.knots.row(i) = locs.row(idx[i]);
    ks.validate();
    return ks;
}

SimulatedDraws simulate_dataset_debug(const Matrix& locs, const KnotSet& knots,
                                      const TrueModel& model, int p, std::uint64_t seed) {
    knots.validate();
    model.validate();
    require(p == model.gamma.size(), "simulate_dataset: p must equal the length of gamma");
    const int n = static_cast<int>(locs.rows());
    const int m = knots.m();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SimulatedDraws out;
    out.data.locs = locs;
    out.data.X.resize(n, p);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < p; ++k) out.data.X(i, k) = gauss(rng);

    const BasisMatrices basis = build_basis(locs, knots.knots, model.theta, false);
    Eigen::LLT<Matrix> llt(basis.K);
    if (llt.info() != Eigen::Success)
        throw numerical_error("simulate_dataset: K(theta) factorization failed");
    Vector xi(m);
    for (int i = 0; i < m; ++i) xi(i) = gauss(rng);
    out.eta = llt.matrixL() * xi;

    out.eps.resize(n);
    for (int i = 0; i < n; ++i) out.eps(i) = model.tau * gauss(rng);

    out.data.z = basis.B * out.eta + out.eps;
    if (p > 0) out.data.z += out.data.X * model.gamma;
    out.data.validate();
    return out;
}

SpatialDataset simulate_dataset(const Matrix& locs, const KnotSet& knots, const TrueModel& model,
                                int p, std::uint64_t seed) {
    return simulate_dataset_debug(locs, knots, model, p, seed).data;
}

std::vector<std::vector<int>> partition_indices(const SpatialDataset& data,
                                                const PartitionSpec& spec) {
    data.validate();
    const int n = data.n();
    require(spec.J >= 1, "partition: J must be >= 1");
    require(spec.J <= n, "partition: J exceeds the number of observations");
    require(spec.k >= 0, "partition: k must be nonnegative");
    std::mt19937_64 rng(spec.seed);

    if (spec.scheme == PartitionScheme::area_based) {
        // r x c grid of marginal quantile splits, r the largest divisor
        // of J with r <= sqrt(J); J prime degrades to 1 x J strips.
        int r = 1;
        for (int d = static_cast<int>(std::sqrt(double(spec.J))); d >= 1; --d)
            if (spec.J % d == 0) {
                r = d;
                break;
            }
        const int c = spec.J / r;
        std::vector<int> byx(n);
        std::iota(byx.begin(), byx.end(), 0);
        std::sort(byx.begin(), byx.end(),
                  [&](int a, int b) { return data.locs(a, 0) < data.locs(b, 0); });
        auto cols = chunk(byx, c);
        std::vector<std::vector<int>> out;
        out.reserve(spec.J);
        for (auto& col : cols) {
            std::sort(col.begin(), col.end(),
                      [&](int a, int b) { return data.locs(a, 1) < data.locs(b, 1); });
            for (auto& block : chunk(col, r)) {
                std::sort(block.begin(), block.end());
                out.push_back(std::move(block));
            }
        }
        return out;
    }

    auto seeds = chunk(shuffled_indices(n, rng), spec.J);
    for (auto& s : seeds) std::sort(s.begin(), s.end());
    if (spec.scheme == PartitionScheme::random || spec.k == 0) {
        if (spec.scheme == PartitionScheme::random && spec.k != 0)
            throw std::invalid_argument("partition: random scheme takes no neighbor count");
        return seeds;
    }

    // k nearest neighbors of every seed point join its machine; overlap
    // across machines is allowed.
    const int k = std::min(spec.k, n - 1);
    std::vector<std::vector<int>> out(spec.J);
    std::vector<std::pair<double, int>> cand(n);
    std::vector<char> taken(n);
    for (int j = 0; j < spec.J; ++j) {
        std::fill(taken.begin(), taken.end(), 0);
        for (int s : seeds[j]) taken[s] = 1;
        for (int s : seeds[j]) {
            for (int i = 0; i < n; ++i)
                cand[i] = {(data.locs.row(i) - data.locs.row(s)).squaredNorm(), i};
            cand[s].first = std::numeric_limits<double>::infinity();
            std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
            for (int q = 0; q < k; ++q) taken[cand[q].second] = 1;
        }
        for (int i = 0; i < n; ++i)
            if (taken[i]) out[j].push_back(i);
    }
    return out;
}

SpatialDataset subset_rows(const SpatialDataset& data, const std::vector<int>& rows) {
    SpatialDataset out;
    out.locs.resize(rows.size(), 2);
    out.z.resize(rows.size());
    out.X.resize(rows.size(), data.p());
    for (size_t i = 0; i < rows.size(); ++i) {
        out.locs.row(i) = data.locs.row(rows[i]);
        out.z(i) = data.z(rows[i]);
        if (data.p() > 0) out.X.row(i) = data.X.row(rows[i]);
    }
    return out;
}

std::vector<SpatialDataset> partition(const SpatialDataset& data, const PartitionSpec& spec) {
    std::vector<SpatialDataset> out;
    for (const auto& rows : partition_indices(data, spec)) out.push_back(subset_rows(data, rows));
    return out;
}

int LabeledDataset::machine_count() const {
    int mx = -1;
    for (int id : machine_id) mx = std::max(mx, id);
    return mx + 1;
}

std::vector<SpatialDataset> LabeledDataset::split() const {
    const int J = machine_count();
    require(J >= 1, "LabeledDataset: no machine assignments present");
    std::vector<std::vector<int>> rows(J);
    for (size_t i = 0; i < machine_id.size(); ++i) {
        require(machine_id[i] >= 0, "LabeledDataset: unassigned rows present");
        rows[machine_id[i]].push_back(static_cast<int>(i));
    }
    std::vector<SpatialDataset> out;
    for (const auto& r : rows) {
        require(!r.empty(), "LabeledDataset: a machine id has no rows");
        out.push_back(subset_rows(data, r));
    }
    return out;
}

void write_dataset_csv(const std::string& path, const SpatialDataset& data,
                       const std::vector<int>& machine_id) {
    data.validate();
    require(machine_id.empty() || machine_id.size() == static_cast<size_t>(data.n()),
            "write_dataset_csv: machine_id length mismatch");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_dataset_csv: cannot open " + path);
    f << "machine_id,s1,s2,z";
    for (int k = 1; k <= data.p(); ++k) f << ",x" << k;
    f << "\n";
    for (int i = 0; i < data.n(); ++i) {
        f << (machine_id.empty() ? -1 : machine_id[i]) << ',' << fmt17(data.locs(i, 0)) << ','
          << fmt17(data.locs(i, 1)) << ',' << fmt17(data.z(i));
        for (int k = 0; k < data.p(); ++k) f << ',' << fmt17(data.X(i, k));
        f << "\n";
    }
    if (!f) throw std::runtime_error("write_dataset_csv: write failed for " + path);
}

LabeledDataset read_dataset_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_dataset_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::invalid_argument(path + ": empty file");
    auto header = split_line(line);
    require(header.size() >= 4 && header[0] == "machine_id" && header[1] == "s1" &&
                header[2] == "s2" && header[3] == "z",
            path + ": expected header machine_id,s1,s2,z,x1,...");
    const int p = static_cast<int>(header.size()) - 4;

    std::vector<std::array<double, 3>> num;
    std::vector<std::vector<double>> xs;
    std::vector<int> ids;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto tok = split_line(line);
        require(tok.size() == header.size(), path + ": ragged row");
        ids.push_back(static_cast<int>(parse_double(tok[0], path)));
        num.push_back({parse_double(tok[1], path), parse_double(tok[2], path),
                       parse_double(tok[3], path)});
        std::vector<double> row(p);
        for (int k = 0; k < p; ++k) row[k] = parse_double(tok[4 + k], path);
        xs.push_back(std::move(row));
    }
    const int n = static_cast<int>(num.size());
    require(n >= 1, path + ": no data rows");
    LabeledDataset out;
    out.machine_id = std::move(ids);
    out.data.locs.resize(n, 2);
    out.data.z.resize(n);
    out.data.X.resize(n, p);
    for (int i = 0; i < n; ++i) {
        out.data.locs(i, 0) = num[i][0];
        out.data.locs(i, 1) = num[i][1];
        out.data.z(i) = num[i][2];
        for (int k = 0; k < p; ++k) out.data.X(i, k) = xs[i][k];
    }
    out.data.validate();
    return out;
}

void write_knots_csv(const std::string& path, const KnotSet& knots) {
    knots.validate();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_knots_csv: cannot open " + path);
    f << "s1,s2\n";
    for (int i = 0; i < knots.m(); ++i)
        f << fmt17(knots.knots(i, 0)) << ',' << fmt17(knots.knots(i, 1)) << "\n";
    if (!f) throw std::runtime_error("write_knots_csv: write failed for " + path);
}

KnotSet read_knots_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_knots_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::invalid_argument(path + ": empty file");
    require(split_line(line) == std::vector<std::string>({"s1", "s2"}),
            path + ": expected header s1,s2");
    std::vector<std::pair<double, double>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto tok = split_line(line);
        require(tok.size() == 2, path + ": ragged row");
        rows.emplace_back(parse_double(tok[0], path), parse_double(tok[1], path));
    }
    KnotSet ks;
    ks.knots.resize(rows.size(), 2);
    for (size_t i = 0; i < rows.size(); ++i) {
        ks.knots(i, 0) = rows[i].first;
        ks.knots(i, 1) = rows[i].second;
    }
    ks.validate();
    return ks;
}

}  // namespace gossipgp
