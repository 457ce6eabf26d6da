#pragma once

// Test-only oracles, kept independent of the production implementations.

#include <array>
#include <cstdint>
#include <vector>

#include "geotopo/grid.hpp"

namespace geotopo::oracles {

/// Betti numbers via GF(2) boundary-matrix ranks over the closure complex of
/// the foreground (voxels as top cells): B_d = n_d - rank d_d - rank d_{d+1}.
inline std::array<std::size_t, 3> gf2_betti(const BinaryMap& b) {
    const Dim3 dims = b.dims();
    const std::size_t da = 2 * dims.h + 1, db = 2 * dims.w + 1, dc = 2 * dims.d + 1;
    const auto cell_id = [&](std::size_t x, std::size_t y, std::size_t z) {
        return (x * db + y) * dc + z;
    };

    // Closure: every face of every foreground cube.
    std::vector<std::uint8_t> present(da * db * dc, 0);
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j)
            for (std::size_t k = 0; k < dims.d; ++k) {
                if (!b.at(i, j, k)) continue;
                for (std::size_t x = 2 * i; x <= 2 * i + 2; ++x)
                    for (std::size_t y = 2 * j; y <= 2 * j + 2; ++y)
                        for (std::size_t z = 2 * k; z <= 2 * k + 2; ++z)
                            present[cell_id(x, y, z)] = 1;
            }

    std::array<std::vector<std::size_t>, 4> cells;   // ids per dimension
    std::vector<std::int64_t> row_of(da * db * dc, -1);  // id -> row in its dim list
    for (std::size_t x = 0; x < da; ++x)
        for (std::size_t y = 0; y < db; ++y)
            for (std::size_t z = 0; z < dc; ++z) {
                const std::size_t id = cell_id(x, y, z);
                if (!present[id]) continue;
                const int dim = static_cast<int>((x & 1) + (y & 1) + (z & 1));
                row_of[id] = static_cast<std::int64_t>(cells[dim].size());
                cells[dim].push_back(id);
            }

    // rank of the boundary matrix d_d : C_d -> C_{d-1} by column elimination.
    const auto boundary_rank = [&](int d) -> std::size_t {
        if (d == 0 || cells[d].empty()) return 0;
        const std::size_t rows = cells[d - 1].size();
        const std::size_t words = (rows + 63) / 64;
        std::vector<std::vector<std::uint64_t>> pivots(rows);
        std::vector<std::int64_t> pivot_row_claimed(rows, -1);
        std::size_t rank = 0;

        std::vector<std::uint64_t> col(words);
        for (std::size_t cidx = 0; cidx < cells[d].size(); ++cidx) {
            std::fill(col.begin(), col.end(), 0);
            const std::size_t id = cells[d][cidx];
            const std::size_t z = id % dc, rest = id / dc;
            const std::size_t x = rest / db, y = rest % db;
            const std::array<std::size_t, 3> coords{x, y, z};
            for (int ax = 0; ax < 3; ++ax) {
                if (!(coords[ax] & 1)) continue;
                for (int sign = -1; sign <= 1; sign += 2) {
                    auto f = coords;
                    f[ax] = coords[ax] + sign;
                    const std::size_t fid = cell_id(f[0], f[1], f[2]);
                    const std::size_t row = static_cast<std::size_t>(row_of[fid]);
                    col[row / 64] ^= (1ull << (row % 64));
                }
            }
            while (true) {
                std::int64_t top = -1;
                for (std::int64_t w = static_cast<std::int64_t>(words) - 1; w >= 0; --w) {
                    if (col[w]) {
                        top = w * 64 + (63 - __builtin_clzll(col[w]));
                        break;
                    }
                }
                if (top < 0) break;
                if (pivot_row_claimed[top] < 0) {
                    pivot_row_claimed[top] = 1;
                    pivots[top] = col;
                    ++rank;
                    break;
                }
                for (std::size_t w = 0; w < words; ++w) col[w] ^= pivots[top][w];
            }
        }
        return rank;
    };

    const std::size_t r1 = boundary_rank(1);
    const std::size_t r2 = boundary_rank(2);
    const std::size_t r3 = boundary_rank(3);
    return {cells[0].size() - r1, cells[1].size() - r1 - r2, cells[2].size() - r2 - r3};
}

}  // namespace geotopo::oracles
