#include "gossipgp/geo.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "gossipgp/gpp.hpp"
#include "support/testutil.hpp"

using namespace gossipgp;

TEST(GenerateLocations, PlainGridArithmetic) {
    const Matrix locs = generate_locations(100, 0.02, 0.0, 1);
    EXPECT_EQ(locs.rows(), 10000);
    EXPECT_DOUBLE_EQ(locs.maxCoeff(), 1.98);
    EXPECT_DOUBLE_EQ(locs.minCoeff(), 0.0);
}

TEST(GenerateLocations, JitterStaysWithinBounds) {
    const Matrix base = generate_locations(40, 0.02, 0.0, 7);
    const Matrix jit = generate_locations(40, 0.02, 0.4, 7);
    EXPECT_LE((jit - base).cwiseAbs().maxCoeff(), 0.4 * 0.02);
}

TEST(GenerateLocations, DeterministicPerSeed) {
    const Matrix a = generate_locations(20, 0.02, 0.4, 99);
    const Matrix b = generate_locations(20, 0.02, 0.4, 99);
    EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
    const Matrix c = generate_locations(20, 0.02, 0.4, 100);
    EXPECT_GT((a - c).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GenerateLocations, AdjacentPointsNeverCoincide) {
    const Matrix locs = generate_locations(30, 0.05, 0.49, 3);
    double min_d = 1e9;
    for (int i = 0; i < locs.rows(); ++i)
        for (int j = i + 1; j < locs.rows(); ++j)
            min_d = std::min(min_d, (locs.row(i) - locs.row(j)).norm());
    EXPECT_GT(min_d, 0.0);
}

TEST(GenerateLocations, ArgumentErrors) {
    EXPECT_THROW(generate_locations(0, 0.02, 0.0, 1), std::invalid_argument);
    EXPECT_THROW(generate_locations(10, -1.0, 0.0, 1), std::invalid_argument);
    EXPECT_THROW(generate_locations(10, 0.02, 0.5, 1), std::invalid_argument);
}

TEST(Simulate, NuggetOnlyVariance) {
    // kernel amplitude driven to zero: z is gamma-free noise with var tau^2
    TrueModel model;
    model.gamma = Vector(0);
    model.tau = 2.0;
    model.theta = {1e-12, 0.1, 0.5};
    const Matrix locs = generate_locations(100, 0.02, 0.4, 5);
    const KnotSet knots = select_knots(locs, 25, 6);
    const SpatialDataset ds = simulate_dataset(locs, knots, model, 0, 77);
    const double mean = ds.z.mean();
    const double var = (ds.z.array() - mean).square().sum() / (ds.n() - 1);
    EXPECT_NEAR(var / (model.tau * model.tau), 1.0, 0.05);
}

TEST(Simulate, FullRankCovarianceMatchesMatern) {
    // tau -> 0 and knots == locations: cov(z - X gamma) == the full kernel
    std::mt19937_64 rng(8);
    const int n = 30, reps = 2000;
    const Matrix locs = testutil::random_locs(n, rng);
    KnotSet knots;
    knots.knots = locs;
    TrueModel model;
    model.gamma = Vector::Ones(2);
    model.tau = 1e-8;
    model.theta = {1.0, 0.2, 0.5};

    Matrix sum = Matrix::Zero(n, n);
    for (int r = 0; r < reps; ++r) {
        const auto d = simulate_dataset(locs, knots, model, 2, 1000 + r);
        const Vector res = d.z - d.X * model.gamma;
        sum += res * res.transpose();
    }
    const Matrix emp = sum / reps;
    Matrix truth(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            truth(i, j) = matern_cov((locs.row(i) - locs.row(j)).norm(), model.theta);
    EXPECT_LT((emp - truth).norm() / truth.norm(), 0.2);
}

TEST(Simulate, DebugDrawsSatisfyModelIdentity) {
    std::mt19937_64 rng(9);
    const Matrix locs = testutil::random_locs(50, rng);
    const KnotSet knots = select_knots(locs, 10, 2);
    TrueModel model;
    model.gamma = testutil::random_vec(3, rng);
    model.tau = 0.7;
    model.theta = {1.0, 0.15, 0.5};
    const auto sim = simulate_dataset_debug(locs, knots, model, 3, 123);
    const auto basis = build_basis(locs, knots.knots, model.theta, false);
    const Vector lhs = sim.data.z - basis.B * sim.eta - sim.eps;
    const Vector rhs = sim.data.X * model.gamma;
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Simulate, DeterministicPerSeed) {
    std::mt19937_64 rng(10);
    const Matrix locs = testutil::random_locs(40, rng);
    const KnotSet knots = select_knots(locs, 8, 3);
    TrueModel model;
    model.gamma = Vector::Ones(1);
    model.tau = 1.0;
    model.theta = {1.0, 0.1, 0.5};
    const auto a = simulate_dataset(locs, knots, model, 1, 55);
    const auto b = simulate_dataset(locs, knots, model, 1, 55);
    EXPECT_EQ((a.z - b.z).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((a.X - b.X).cwiseAbs().maxCoeff(), 0.0);
}

namespace {

SpatialDataset grid_dataset(int n_side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    SpatialDataset ds;
    ds.locs = generate_locations(n_side, 0.02, 0.4, seed);
    ds.z = testutil::random_vec(static_cast<int>(ds.locs.rows()), rng);
    ds.X = Matrix(ds.n(), 0);
    return ds;
}

}  // namespace

TEST(Partition, RandomEqualSizes) {
    std::mt19937_64 rng(31);
    SpatialDataset ds;
    ds.locs = testutil::random_locs(9000, rng);
    ds.z = testutil::random_vec(9000, rng);
    ds.X = Matrix(9000, 0);
    const auto parts = partition(ds, {PartitionScheme::random, 9, 0, 4});
    ASSERT_EQ(parts.size(), 9u);
    for (const auto& p : parts) EXPECT_EQ(p.n(), 1000);
}

TEST(Partition, UnionPreservesRows) {
    SpatialDataset ds = grid_dataset(20, 17);
    const auto idx = partition_indices(ds, {PartitionScheme::random, 7, 0, 9});
    std::vector<int> all;
    for (const auto& part : idx) all.insert(all.end(), part.begin(), part.end());
    std::sort(all.begin(), all.end());
    std::vector<int> expect(ds.n());
    std::iota(expect.begin(), expect.end(), 0);
    EXPECT_EQ(all, expect);
}

TEST(Partition, SingleMachineIsIdentity) {
    SpatialDataset ds = grid_dataset(10, 18);
    const auto parts = partition(ds, {PartitionScheme::random, 1, 0, 3});
    ASSERT_EQ(parts.size(), 1u);
    EXPECT_EQ((parts[0].locs - ds.locs).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((parts[0].z - ds.z).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Partition, AreaBasedBoxesDisjoint) {
    SpatialDataset ds = grid_dataset(40, 19);
    const auto idx = partition_indices(ds, {PartitionScheme::area_based, 4, 0, 0});
    ASSERT_EQ(idx.size(), 4u);
    std::vector<std::array<double, 4>> boxes;  // xmin xmax ymin ymax
    for (const auto& part : idx) {
        std::array<double, 4> b = {1e18, -1e18, 1e18, -1e18};
        for (int i : part) {
            b[0] = std::min(b[0], ds.locs(i, 0));
            b[1] = std::max(b[1], ds.locs(i, 0));
            b[2] = std::min(b[2], ds.locs(i, 1));
            b[3] = std::max(b[3], ds.locs(i, 1));
        }
        boxes.push_back(b);
    }
    for (size_t a = 0; a < boxes.size(); ++a)
        for (size_t b = a + 1; b < boxes.size(); ++b) {
            const bool x_disjoint = boxes[a][1] < boxes[b][0] || boxes[b][1] < boxes[a][0];
            const bool y_disjoint = boxes[a][3] < boxes[b][2] || boxes[b][3] < boxes[a][2];
            EXPECT_TRUE(x_disjoint || y_disjoint) << a << " vs " << b;
        }
}

TEST(Partition, AreaBasedPrimeFallsBackToStrips) {
    SpatialDataset ds = grid_dataset(20, 20);
    const auto idx = partition_indices(ds, {PartitionScheme::area_based, 5, 0, 0});
    ASSERT_EQ(idx.size(), 5u);
    // strips: consecutive blocks ordered in x
    double prev_max = -1e18;
    for (const auto& part : idx) {
        double xmin = 1e18, xmax = -1e18;
        for (int i : part) {
            xmin = std::min(xmin, ds.locs(i, 0));
            xmax = std::max(xmax, ds.locs(i, 0));
        }
        EXPECT_GT(xmin, prev_max);
        prev_max = xmax;
    }
}

TEST(Partition, RandomPlusNeighborsCoversSeedsAndOverlaps) {
    SpatialDataset ds = grid_dataset(15, 21);
    PartitionSpec spec{PartitionScheme::random_plus_neighbors, 5, 9, 11};
    const auto idx = partition_indices(ds, spec);
    ASSERT_EQ(idx.size(), 5u);
    size_t total = 0;
    for (const auto& part : idx) {
        EXPECT_GE(static_cast<int>(part.size()), ds.n() / 5);
        total += part.size();
        EXPECT_TRUE(std::is_sorted(part.begin(), part.end()));
        EXPECT_EQ(std::adjacent_find(part.begin(), part.end()), part.end());  // no dup rows
    }
    EXPECT_GT(total, static_cast<size_t>(ds.n()));  // machines overlap
    // k = 0 reduces to the random split
    spec.k = 0;
    const auto plain = partition_indices(ds, spec);
    std::vector<int> all;
    for (const auto& part : plain) all.insert(all.end(), part.begin(), part.end());
    EXPECT_EQ(static_cast<int>(all.size()), ds.n());
}

TEST(Partition, ArgumentErrors) {
    SpatialDataset ds = grid_dataset(3, 22);
    EXPECT_THROW(partition(ds, {PartitionScheme::random, 10, 0, 0}), std::invalid_argument);
    EXPECT_THROW(partition(ds, {PartitionScheme::random, 0, 0, 0}), std::invalid_argument);
}

TEST(CsvIo, DatasetRoundTripIsExact) {
    std::mt19937_64 rng(41);
    SpatialDataset ds;
    ds.locs = testutil::random_locs(37, rng);
    ds.z = testutil::random_vec(37, rng);
    ds.X = Matrix::Random(37, 3);
    std::vector<int> ids(37);
    for (int i = 0; i < 37; ++i) ids[i] = i % 4;

    const auto path = std::filesystem::temp_directory_path() / "gossipgp_ds.csv";
    write_dataset_csv(path.string(), ds, ids);
    const LabeledDataset back = read_dataset_csv(path.string());
    EXPECT_EQ(back.machine_id, ids);
    EXPECT_EQ((back.data.locs - ds.locs).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((back.data.z - ds.z).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((back.data.X - ds.X).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(back.machine_count(), 4);
    EXPECT_EQ(back.split().size(), 4u);
    std::filesystem::remove(path);
}

TEST(CsvIo, KnotsRoundTripIsExact) {
    std::mt19937_64 rng(42);
    KnotSet ks;
    ks.knots = testutil::random_locs(11, rng);
    const auto path = std::filesystem::temp_directory_path() / "gossipgp_knots.csv";
    write_knots_csv(path.string(), ks);
    const KnotSet back = read_knots_csv(path.string());
    EXPECT_EQ((back.knots - ks.knots).cwiseAbs().maxCoeff(), 0.0);
    std::filesystem::remove(path);
}

TEST(CsvIo, MalformedHeaderRejected) {
    const auto path = std::filesystem::temp_directory_path() / "gossipgp_bad.csv";
    {
        std::ofstream f(path);
        f << "a,b,c\n1,2,3\n";
    }
    EXPECT_THROW(read_dataset_csv(path.string()), std::invalid_argument);
    std::filesystem::remove(path);
}

TEST(SelectKnots, DistinctAndReproducible) {
    const Matrix locs = generate_locations(30, 0.02, 0.4, 2);
    const KnotSet a = select_knots(locs, 50, 9);
    const KnotSet b = select_knots(locs, 50, 9);
    EXPECT_EQ((a.knots - b.knots).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_NO_THROW(a.validate());
    EXPECT_THROW(select_knots(locs, 0, 1), std::invalid_argument);
}
