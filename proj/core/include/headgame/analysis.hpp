#pragma once

// Post-hoc analyses of interaction matrices collected during training:
// coalition detection on the final G, intra- versus extra-coalition change
// statistics, the Gamma -> hallucination-gap curve fit with bootstrap
// prediction bands, and per-pair coupling trajectories.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headgame/numerics.hpp"

namespace headgame {

// One periodic record of the interaction matrix.
struct Snapshot {
  std::size_t step = 0;
  Matrix g;
  double gamma = 0.0;
  double p_hat = 0.0;  // eval-set Pr(E >= 0.2) at this step
};

// --- coalitions -------------------------------------------------------------

struct CoalitionPartition {
  std::vector<std::size_t> labels;   // head -> cluster, numbered by first appearance
  std::size_t k = 1;
  std::vector<std::size_t> reorder;  // heads grouped by cluster, stable within a cluster
  double modularity = 0.0;           // Newman modularity on |G| without self-loops
  bool degenerate = false;           // Gamma(G) < 1e-6: every head its own cluster
};

struct BiclusterOptions {
  std::size_t k = 0;  // 0 selects k by the largest eigengap in [2, H/2]
  std::uint64_t seed = 0;
  std::size_t restarts = 8;  // seeded k-means++ restarts besides the deterministic start
};

// Spectral embedding of D^-1/2 |G| D^-1/2 (top-k eigenvectors, rows
// normalized) followed by k-means; the lowest-inertia clustering wins.
CoalitionPartition spectral_bicluster(const Matrix& g, const BiclusterOptions& options = {});

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);

// --- Mann-Whitney -------------------------------------------------------------

struct MannWhitneyResult {
  double u = 0.0;  // U of the first sample (midranks for ties)
  double p_value = 1.0;
  bool exact = false;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
};

// Two-sided test. Exact permutation distribution when n1 + n2 <= exact_limit,
// otherwise the normal approximation with tie and continuity corrections.
MannWhitneyResult mann_whitney(std::span<const double> x, std::span<const double> y,
                               std::size_t exact_limit = 20);

struct CoalitionDeltaResult {
  MannWhitneyResult test;
  double mean_intra = 0.0;
  double mean_extra = 0.0;
  std::vector<double> intra;  // Delta G_ij, i < j, same cluster
  std::vector<double> extra;
};

CoalitionDeltaResult coalition_delta_test(const Matrix& delta_g,
                                          const CoalitionPartition& partition);

// --- curve fit ------------------------------------------------------------------

struct CurvePoint {
  double gamma = 0.0;
  double delta_h = 0.0;
};

struct FitOptions {
  std::size_t n_boot = 1000;
  std::uint64_t seed = 0;
  std::size_t grid = 200;        // coarse grid intervals over c
  std::size_t band_points = 101;
};

// delta_h = a - lambda / (1 - c gamma), c in [0, 0.99 / max gamma].
struct FitResult {
  double a = 0.0;
  double lambda = 0.0;
  double c = 0.0;
  double r2 = 0.0;
  double sse = 0.0;
  bool rejected = false;
  std::string reason;
  std::vector<double> sse_history;  // best SSE after the grid and after each accepted refinement
  std::size_t n_boot = 0;           // replicates that produced a fit
  std::vector<double> band_gamma;
  std::vector<double> band_low;   // 2.5th percentile of bootstrap predictions
  std::vector<double> band_high;  // 97.5th percentile

  double predict(double gamma) const;
  // Linear interpolation of the band; clamps outside the fitted range.
  std::pair<double, double> band_at(double gamma) const;
};

FitResult fit_poa_curve(std::span<const CurvePoint> points, const FitOptions& options = {});

// (gamma of the regularized run, p_hat baseline - p_hat regularized) at every
// step present in both logs.
std::vector<CurvePoint> delta_h_points(std::span<const Snapshot> baseline,
                                       std::span<const Snapshot> regularized);

// --- pair dynamics ------------------------------------------------------------------

enum class PairTrend { kStrengthen, kWeaken, kFlat };

const char* to_string(PairTrend t);

struct PairTrace {
  std::size_t i = 0;
  std::size_t j = 0;
  std::vector<double> trace;  // (G_ij(t) - G_ij(0)) / max(|G_ij(0)|, 1e-3)
  PairTrend trend = PairTrend::kFlat;
  std::optional<std::size_t> crossing_step;  // first step past the threshold in the trend direction
};

struct PairDynamics {
  std::vector<std::size_t> steps;
  std::vector<PairTrace> pairs;
  std::size_t strengthen = 0;
  std::size_t weaken = 0;
  std::size_t flat = 0;
};

PairDynamics pair_dynamics(std::span<const Snapshot> snapshots, double threshold = 0.1);

// --- plot data ---------------------------------------------------------------------

void write_partition_csv(std::ostream& out, const CoalitionPartition& p);
// Shared-edge histogram of intra and extra samples.
void write_delta_histogram_csv(std::ostream& out, const CoalitionDeltaResult& r,
                               std::size_t bins = 20);
void write_fit_csv(std::ostream& out, const FitResult& fit, std::span<const CurvePoint> points);
void write_traces_csv(std::ostream& out, const PairDynamics& d);

// Linear-interpolation percentile (q in [0, 1]) of unsorted values.
double percentile(std::vector<double> values, double q);

}  // namespace headgame
