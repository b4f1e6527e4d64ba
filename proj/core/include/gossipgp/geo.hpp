#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gossipgp/matern.hpp"
#include "gossipgp/types.hpp"

namespace gossipgp {

// One machine's (or the global) slice of observations.
struct SpatialDataset {
    Matrix locs;  // n x 2 planar coordinates
    Vector z;     // n responses
    Matrix X;     // n x p covariates (p may be 0)

    int n() const { return static_cast<int>(locs.rows()); }
    int p() const { return static_cast<int>(X.cols()); }
    void validate() const;
};

struct KnotSet {
    Matrix knots;  // m x 2, pairwise distinct

    int m() const { return static_cast<int>(knots.rows()); }
    void validate() const;
};

enum class PartitionScheme { random, area_based, random_plus_neighbors };

struct PartitionSpec {
    PartitionScheme scheme = PartitionScheme::random;
    int J = 1;
    int k = 0;  // neighbors per seed point (random_plus_neighbors only)
    std::uint64_t seed = 0;
};

// Ground truth for synthetic data: z = X gamma + B(theta) eta + eps,
// eta ~ N(0, K(theta)), eps ~ N(0, tau^2) iid.
struct TrueModel {
    Vector gamma;
    double tau = 1.0;  // nugget std; the model precision is delta = tau^-2
    MaternParams theta;

    void validate() const;
};

// grid_side^2 points on a square grid with the given spacing, each
// coordinate perturbed by U[-jitter_frac, jitter_frac] * spacing.
Matrix generate_locations(int grid_side, double spacing, double jitter_frac, std::uint64_t seed);

// m knots sampled uniformly without replacement from the locations.
KnotSet select_knots(const Matrix& locs, int m, std::uint64_t seed);

struct SimulatedDraws {
    SpatialDataset data;
    Vector eta;  // latent knot values
    Vector eps;  // nugget noise
};

// Draw order: X entries (row major), then eta, then eps.
SimulatedDraws simulate_dataset_debug(const Matrix& locs, const KnotSet& knots,
                                      const TrueModel& model, int p, std::uint64_t seed);
SpatialDataset simulate_dataset(const Matrix& locs, const KnotSet& knots, const TrueModel& model,
                                int p, std::uint64_t seed);

// Row indices per machine.  random: near-equal sizes (within 1);
// area_based: r x c quantile blocks with r c = J (1 x J strips when J
// has no better factorization); random_plus_neighbors: a random split
// plus the k nearest neighbors of every seed point, so machines may
// share rows.
std::vector<std::vector<int>> partition_indices(const SpatialDataset& data,
                                                const PartitionSpec& spec);
std::vector<SpatialDataset> partition(const SpatialDataset& data, const PartitionSpec& spec);

SpatialDataset subset_rows(const SpatialDataset& data, const std::vector<int>& rows);

// CSV formats.  Dataset: header machine_id,s1,s2,z,x1,...,xp with
// machine_id = -1 for unassigned rows; floats round-trip at 17
// significant digits.  Knots: header s1,s2.
struct LabeledDataset {
    SpatialDataset data;
    std::vector<int> machine_id;  // -1 = unassigned

    int machine_count() const;
    std::vector<SpatialDataset> split() const;
};

void write_dataset_csv(const std::string& path, const SpatialDataset& data,
                       const std::vector<int>& machine_id = {});
LabeledDataset read_dataset_csv(const std::string& path);
void write_knots_csv(const std::string& path, const KnotSet& knots);
KnotSet read_knots_csv(const std::string& path);

}  // namespace gossipgp
