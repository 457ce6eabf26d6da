#pragma once

#include <cstdint>
#include <vector>

#include "geotopo/geometry.hpp"
#include "geotopo/voxel.hpp"

namespace geotopo {

// ---------------------------------------------------------------------------
// Morphological features and the Frechet morphological distance
// ---------------------------------------------------------------------------

/// Per-tissue (channels 1..C-1; channel 0 is background) concatenation of
/// global mass, centroid, and trace-normalized covariance eigenvalues:
/// 7 values per tissue.
std::vector<double> morph_features(const VoxelMap& v);

struct MorphStats {
    std::vector<double> mean;
    std::vector<double> std;  // floored at 1e-8
};

MorphStats morph_stats(const std::vector<std::vector<double>>& features);

/// Frechet distance between Gaussian fits of the two feature sets, both
/// normalized by `stats` (conventionally the real-set statistics):
/// |mu_r - mu_s|^2 + tr(S_r + S_s - 2 (S_r S_s)^(1/2)), eigenvalues clipped
/// at zero inside the square root.
double fmd(const std::vector<std::vector<double>>& real_features,
           const std::vector<std::vector<double>>& synth_features, const MorphStats& stats);

// ---------------------------------------------------------------------------
// Point-cloud two-sample test
// ---------------------------------------------------------------------------

/// Voxel centers carrying the given label.
std::vector<Vec3> label_cloud(const LabelGrid& labels, std::uint32_t channel);

/// Deterministic farthest-point sampling; the start index is seed % size.
/// Clouds smaller than `count` are cycled.
std::vector<Vec3> farthest_point_sample(const std::vector<Vec3>& cloud, std::size_t count,
                                        std::uint64_t seed);

/// Exact earth mover's distance between equal-size clouds: mean matched
/// distance under the optimal assignment (Hungarian algorithm).
double emd(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

/// Leave-one-out 1-nearest-neighbor two-sample accuracy from a precomputed
/// symmetric distance matrix over real ++ synth (0.5 = indistinguishable).
double one_nna_from_distances(const std::vector<std::vector<double>>& dist, std::size_t n_real);

double one_nna(const std::vector<std::vector<Vec3>>& real_clouds,
               const std::vector<std::vector<Vec3>>& synth_clouds);

// ---------------------------------------------------------------------------
// Control fidelity
// ---------------------------------------------------------------------------

struct FidelityReport {
    double mass = 0.0;        // mean |m - m_target|
    double centroid = 0.0;    // mean over coordinates of |p - p_target|
    double covariance = 0.0;  // mean over entries of |Sn - Sn_target|
    std::size_t count = 0;

    // Display-scaled variants (x1e5, x1e4, x1e5).
    double mass_scaled() const { return mass * 1e5; }
    double centroid_scaled() const { return centroid * 1e4; }
    double covariance_scaled() const { return covariance * 1e5; }
};

class FidelityAccumulator {
  public:
    /// `global` must be a global-frame measurement; undefined moments count
    /// the mass term only.
    void add(const GeometricMoments& global, const GeometricTarget& target);
    FidelityReport report() const;

  private:
    double mass_ = 0, centroid_ = 0, covariance_ = 0;
    std::size_t count_ = 0, defined_ = 0;
};

struct BettiPrecision {
    double b0 = 0, b1 = 0, b2 = 0;
    std::size_t count = 0;
};

/// Fraction of label grids whose selected-tissue Betti numbers match the
/// prior, per dimension.
BettiPrecision betti_precision(const std::vector<LabelGrid>& samples,
                               const std::vector<bool>& selection,
                               const std::array<std::size_t, 3>& prior);

/// Foreground of the selected channels of an argmaxed map.
BinaryMap selection_mask(const LabelGrid& labels, const std::vector<bool>& selection);

}  // namespace geotopo
