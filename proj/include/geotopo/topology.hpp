#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "geotopo/geometry.hpp"
#include "geotopo/grid.hpp"

namespace geotopo {

// Cubical persistent homology of the super-level-set filtration of a
// substructure. Voxels are top cells; every lower cell carries the maximum
// over its incident voxels, so components of {S >= tau} are 26-connected and
// voids are 6-connected components of the complement. Cells whose incident
// maximum is <= 0 never enter the filtration, which makes the essential
// counts of a binary map equal its foreground Betti numbers.

struct PersistencePoint {
    int dim = 0;             // homology dimension 0..2
    double birth = 0.0;
    double death = 0.0;      // 0 for essential points
    std::array<std::uint32_t, 3> birth_voxel{};  // creator voxel of the birth cell
    std::array<std::uint32_t, 3> death_voxel{};  // valid iff !essential
    bool essential = false;

    double persistence() const { return birth - death; }
};

struct PersistenceDiagram {
    std::array<std::vector<PersistencePoint>, 3> points;  // grouped by dim

    std::size_t essential_count(int dim) const;
    std::array<std::size_t, 3> essential_counts() const;

    /// Flat export (dim asc, persistence desc, birth desc, coordinate lex).
    std::vector<PersistencePoint> flat() const;
};

/// Per-axis grid cap for the persistence computation; coarse parsing keeps
/// guidance well below it (a 64^3 substructure is supported as required).
constexpr std::size_t kHomologyGridCap = 96;

PersistenceDiagram persistent_homology(const Grid3<double>& values);
inline PersistenceDiagram persistent_homology(const Substructure& s) {
    return persistent_homology(s.values);
}

/// Betti numbers of a binary map under the 26/6 convention, computed by
/// union-find components plus the Euler characteristic of the closure complex
/// (independent of the reduction path; must agree with essential counts).
std::array<std::size_t, 3> betti_numbers(const BinaryMap& b);

struct TopologicalPrior {
    std::array<std::size_t, 3> betti{0, 0, 0};
};

struct DiagramPartition {
    std::vector<PersistencePoint> preserve;  // top-B_i by persistence per dim
    std::vector<PersistencePoint> suppress;  // the rest
};

/// Splits each dimension's points by persistence (descending; ties by birth
/// descending, then lexicographic birth coordinate) keeping the top B_i.
DiagramPartition partition_diagram(const PersistenceDiagram& d, const TopologicalPrior& prior);

struct TopoPotentialResult {
    double loss = 0.0;
    // (flat voxel index, d loss / d value), coordinate-sorted and accumulated.
    std::vector<std::pair<std::size_t, double>> grad;
};

/// Preserve/suppress potential: -sum_Y |S(rb)-S(rd)|^2 + sum_Z |S(rb)-S(rd)|^2,
/// with essential deaths pinned to 0 (no death gradient). Gradients touch only
/// recorded birth/death voxels.
TopoPotentialResult topological_potential(const Grid3<double>& values,
                                          const DiagramPartition& partition);

std::vector<double> to_dense_grad(const TopoPotentialResult& r, std::size_t size);

}  // namespace geotopo
