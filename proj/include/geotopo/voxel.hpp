#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "geotopo/grid.hpp"

namespace geotopo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Scalar [0,1] intensity field over the voxel grid (union of selected tissues).
using StructureMap = Grid3<double>;

/// One class index per voxel, values in [0, C).
struct LabelGrid {
    Grid3<std::uint8_t> labels;
    std::uint32_t num_classes = 0;
};

/// C-channel real field over (H, W, D). When `probability` is set, per-voxel
/// channel values are nonnegative and sum to 1.
class VoxelMap {
  public:
    VoxelMap() = default;
    VoxelMap(std::uint32_t channels, Dim3 dims, bool probability = false);

    std::uint32_t channels() const { return static_cast<std::uint32_t>(chan_.size()); }
    const Dim3& dims() const { return dims_; }
    bool probability() const { return probability_; }
    void set_probability(bool p) { probability_ = p; }

    Grid3<double>& channel(std::size_t c) { return chan_[c]; }
    const Grid3<double>& channel(std::size_t c) const { return chan_[c]; }

    /// Per-voxel argmax over channels; ties go to the lowest channel index.
    LabelGrid argmax() const;

  private:
    Dim3 dims_;
    bool probability_ = false;
    std::vector<Grid3<double>> chan_;
};

// World frame convention: the voxel volume spans the cube [-1/2, 1/2]^3 on
// every axis; the center of voxel i along an axis of n voxels sits at
// (i + 0.5)/n - 1/2. The identity control domain with grid (H, W, D) visits
// every voxel center exactly once.
inline double axis_center(std::size_t i, std::size_t n) {
    return (static_cast<double>(i) + 0.5) / static_cast<double>(n) - 0.5;
}
inline Vec3 voxel_center(const Dim3& dims, std::size_t i, std::size_t j, std::size_t k) {
    return {axis_center(i, dims.h), axis_center(j, dims.w), axis_center(k, dims.d)};
}

VoxelMap one_hot_encode(const LabelGrid& labels, std::uint32_t channels);

/// Channelwise softmax with temperature tau (logits scaled by tau before the
/// stabilized exponential). Output is probability-flagged.
VoxelMap softmax_channels(const VoxelMap& logits, double temperature);

/// Voxelwise maximum over the channels selected by `u` (all-false -> zero map).
StructureMap boolean_subset(const VoxelMap& v, const std::vector<bool>& u);

constexpr double kBinarizeThreshold = 0.9;
BinaryMap binarize(const StructureMap& s, double threshold = kBinarizeThreshold);

/// Linear-map handle from trilinear sampling: maps a cotangent on the sampled
/// values back to a sparse gradient on the source grid (8 voxels per point).
class SampleHandle {
  public:
    SampleHandle(Dim3 dims, std::size_t npoints) : dims_(dims) {
        corner_.resize(npoints * 8, 0);
        weight_.resize(npoints * 8, 0.0);
    }

    const Dim3& dims() const { return dims_; }
    std::size_t npoints() const { return weight_.size() / 8; }

    void set(std::size_t point, int slot, std::size_t flat, double w) {
        corner_[point * 8 + slot] = flat;
        weight_[point * 8 + slot] = w;
    }

    /// Accumulates cotangent[p] * weight into grad at each touched voxel.
    void accumulate(const std::vector<double>& cotangent, Grid3<double>& grad) const;
    Grid3<double> vjp(const std::vector<double>& cotangent) const;

    double weight(std::size_t point, int slot) const { return weight_[point * 8 + slot]; }
    std::size_t corner(std::size_t point, int slot) const { return corner_[point * 8 + slot]; }

  private:
    Dim3 dims_;
    std::vector<std::size_t> corner_;
    std::vector<double> weight_;
};

/// Trilinear interpolation of S at world-coordinate points. Points outside the
/// world cube read zeros (out-of-volume space is empty background). Queries
/// within 1e-9 of a voxel center snap to it, so sampling all centers returns
/// the stored values bit-for-bit.
std::vector<double> trilinear_sample(const StructureMap& s, const std::vector<Vec3>& points,
                                     SampleHandle* handle = nullptr);

}  // namespace geotopo
