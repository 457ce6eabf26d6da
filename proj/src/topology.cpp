#include "geotopo/topology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace geotopo {

namespace {

// Cells live on the doubled grid (2a+1, 2b+1, 2c+1); a coordinate is odd
// where the cell extends along that axis, so dim = number of odd coordinates
// and voxel (i,j,k) is the top cell at (2i+1, 2j+1, 2k+1).
struct CellGrid {
    std::size_t ga, gb, gc;  // voxel grid
    std::size_t da, db, dc;  // doubled grid

    explicit CellGrid(const Dim3& dims)
        : ga(dims.h), gb(dims.w), gc(dims.d), da(2 * dims.h + 1), db(2 * dims.w + 1),
          dc(2 * dims.d + 1) {}

    std::size_t cell_count() const { return da * db * dc; }
    std::size_t cell_id(std::size_t x, std::size_t y, std::size_t z) const {
        return (x * db + y) * dc + z;
    }
    std::array<std::size_t, 3> cell_coords(std::size_t id) const {
        const std::size_t z = id % dc;
        const std::size_t rest = id / dc;
        return {rest / db, rest % db, z};
    }
    static int cell_dim(const std::array<std::size_t, 3>& c) {
        return static_cast<int>((c[0] & 1) + (c[1] & 1) + (c[2] & 1));
    }
};

struct CellTable {
    std::vector<double> value;          // max over incident voxels
    std::vector<std::uint32_t> creator; // flat voxel index realizing the max
};

/// Max-extension of the voxel values to every cell of the complex.
CellTable build_cells(const Grid3<double>& s, const CellGrid& cg) {
    CellTable t;
    t.value.assign(cg.cell_count(), -std::numeric_limits<double>::infinity());
    t.creator.assign(cg.cell_count(), 0);

    for (std::size_t x = 0; x < cg.da; ++x) {
        for (std::size_t y = 0; y < cg.db; ++y)
            for (std::size_t z = 0; z < cg.dc; ++z) {
                // Incident voxels per axis: odd coordinate -> exactly (c-1)/2;
                // even coordinate -> {c/2 - 1, c/2} clipped to the volume.
                double best = -std::numeric_limits<double>::infinity();
                std::uint32_t best_voxel = 0;
                const auto axis_range = [](std::size_t c, std::size_t n, std::size_t& lo,
                                           std::size_t& hi) {
                    if (c & 1) {
                        lo = hi = (c - 1) / 2;
                    } else {
                        lo = (c == 0) ? 0 : c / 2 - 1;
                        hi = (c == 2 * n) ? n - 1 : c / 2;
                    }
                };
                std::size_t xlo, xhi, ylo, yhi, zlo, zhi;
                axis_range(x, cg.ga, xlo, xhi);
                axis_range(y, cg.gb, ylo, yhi);
                axis_range(z, cg.gc, zlo, zhi);
                for (std::size_t i = xlo; i <= xhi; ++i)
                    for (std::size_t j = ylo; j <= yhi; ++j)
                        for (std::size_t k = zlo; k <= zhi; ++k) {
                            const std::uint32_t flat =
                                static_cast<std::uint32_t>((i * cg.gb + j) * cg.gc + k);
                            const double v = s[flat];
                            if (v > best || (v == best && flat < best_voxel)) {
                                best = v;
                                best_voxel = flat;
                            }
                        }
                const std::size_t id = cg.cell_id(x, y, z);
                t.value[id] = best;
                t.creator[id] = best_voxel;
            }
    }
    return t;
}

}  // namespace

std::size_t PersistenceDiagram::essential_count(int dim) const {
    std::size_t n = 0;
    for (const auto& p : points[dim])
        if (p.essential) ++n;
    return n;
}

std::array<std::size_t, 3> PersistenceDiagram::essential_counts() const {
    return {essential_count(0), essential_count(1), essential_count(2)};
}

namespace {

bool point_order(const PersistencePoint& a, const PersistencePoint& b) {
    if (a.persistence() != b.persistence()) return a.persistence() > b.persistence();
    if (a.birth != b.birth) return a.birth > b.birth;
    return a.birth_voxel < b.birth_voxel;
}

}  // namespace

std::vector<PersistencePoint> PersistenceDiagram::flat() const {
    std::vector<PersistencePoint> out;
    for (int d = 0; d < 3; ++d) {
        std::vector<PersistencePoint> grp = points[d];
        std::sort(grp.begin(), grp.end(), point_order);
        out.insert(out.end(), grp.begin(), grp.end());
    }
    return out;
}

PersistenceDiagram persistent_homology(const Grid3<double>& values) {
    const Dim3 dims = values.dims();
    if (dims.h > kHomologyGridCap || dims.w > kHomologyGridCap || dims.d > kHomologyGridCap)
        throw std::invalid_argument("persistent_homology: grid exceeds the supported cap");
    for (double v : values.data())
        if (!std::isfinite(v))
            throw std::invalid_argument("persistent_homology: non-finite values");

    const CellGrid cg(dims);
    const CellTable cells = build_cells(values, cg);

    // Filtration order: value descending, then dim ascending (faces before
    // cofaces at equal value), then cell id. Cells at value <= 0 are excluded.
    std::vector<std::uint32_t> order;
    order.reserve(cg.cell_count());
    std::vector<std::uint8_t> cdim(cg.cell_count());
    for (std::size_t id = 0; id < cg.cell_count(); ++id) {
        cdim[id] = static_cast<std::uint8_t>(CellGrid::cell_dim(cg.cell_coords(id)));
        if (cells.value[id] > 0.0) order.push_back(static_cast<std::uint32_t>(id));
    }
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (cells.value[a] != cells.value[b]) return cells.value[a] > cells.value[b];
        if (cdim[a] != cdim[b]) return cdim[a] < cdim[b];
        return a < b;
    });

    constexpr std::int32_t kNone = -1;
    std::vector<std::int32_t> pos_of(cg.cell_count(), kNone);
    for (std::size_t p = 0; p < order.size(); ++p) pos_of[order[p]] = static_cast<std::int32_t>(p);

    const std::size_t n = order.size();
    std::vector<std::int32_t> pivot_owner(n, kNone);    // position of a (d-1)-cell -> death column
    std::vector<std::uint8_t> birth_paired(n, 0);       // cleared columns in the next pass down
    std::vector<std::vector<std::int32_t>> columns(n);  // reduced columns, keyed by death position

    struct Pair {
        std::int32_t birth_pos, death_pos;
    };
    std::vector<Pair> pairs;

    std::vector<std::int32_t> col, tmp;
    const auto boundary_of = [&](std::uint32_t id, std::vector<std::int32_t>& out) {
        out.clear();
        const auto c = cg.cell_coords(id);
        for (int ax = 0; ax < 3; ++ax) {
            if (!(c[ax] & 1)) continue;
            auto f = c;
            f[ax] = c[ax] - 1;
            out.push_back(pos_of[cg.cell_id(f[0], f[1], f[2])]);
            f[ax] = c[ax] + 1;
            out.push_back(pos_of[cg.cell_id(f[0], f[1], f[2])]);
        }
        std::sort(out.begin(), out.end());
    };

    for (int d = 3; d >= 1; --d) {
        for (std::size_t p = 0; p < n; ++p) {
            const std::uint32_t id = order[p];
            if (cdim[id] != d) continue;
            if (birth_paired[p]) continue;  // clearing: known zero column

            boundary_of(id, col);
            while (!col.empty()) {
                const std::int32_t pivot = col.back();
                const std::int32_t owner = pivot_owner[pivot];
                if (owner == kNone) break;
                // Symmetric difference with the owning reduced column.
                const auto& other = columns[owner];
                tmp.clear();
                std::set_symmetric_difference(col.begin(), col.end(), other.begin(), other.end(),
                                              std::back_inserter(tmp));
                col.swap(tmp);
            }
            if (col.empty()) continue;  // cycle creator; may be essential in dim d

            const std::int32_t pivot = col.back();
            pivot_owner[pivot] = static_cast<std::int32_t>(p);
            columns[p] = col;
            birth_paired[pivot] = 1;
            pairs.push_back({pivot, static_cast<std::int32_t>(p)});
        }
    }

    PersistenceDiagram diagram;
    const auto voxel_coords = [&](std::uint32_t flat) {
        const std::array<std::size_t, 3> c = values.unravel(flat);
        return std::array<std::uint32_t, 3>{static_cast<std::uint32_t>(c[0]),
                                            static_cast<std::uint32_t>(c[1]),
                                            static_cast<std::uint32_t>(c[2])};
    };

    for (const Pair& pr : pairs) {
        const std::uint32_t bid = order[pr.birth_pos];
        const std::uint32_t did = order[pr.death_pos];
        const double b = cells.value[bid];
        const double dvalue = cells.value[did];
        if (b == dvalue) continue;  // zero persistence
        PersistencePoint pt;
        pt.dim = cdim[bid];
        pt.birth = b;
        pt.death = dvalue;
        pt.birth_voxel = voxel_coords(cells.creator[bid]);
        pt.death_voxel = voxel_coords(cells.creator[did]);
        diagram.points[pt.dim].push_back(pt);
    }

    // Unpaired cycle creators survive the whole filtration: essential classes
    // with death pinned at the 0 intensity floor.
    std::vector<std::uint8_t> is_death(n, 0);
    for (const Pair& pr : pairs) is_death[pr.death_pos] = 1;
    for (std::size_t p = 0; p < n; ++p) {
        const std::uint32_t id = order[p];
        if (birth_paired[p] || is_death[p]) continue;
        if (cdim[id] >= 3) continue;
        PersistencePoint pt;
        pt.dim = cdim[id];
        pt.birth = cells.value[id];
        pt.death = 0.0;
        pt.birth_voxel = voxel_coords(cells.creator[id]);
        pt.essential = true;
        diagram.points[pt.dim].push_back(pt);
    }
    return diagram;
}

// ---------------------------------------------------------------------------
// Betti numbers (union-find + Euler characteristic route)
// ---------------------------------------------------------------------------

namespace {

std::size_t components26(const BinaryMap& b) {
    const Dim3 dims = b.dims();
    std::vector<std::uint8_t> seen(b.size(), 0);
    std::vector<std::size_t> stack;
    std::size_t count = 0;
    for (std::size_t s = 0; s < b.size(); ++s) {
        if (!b[s] || seen[s]) continue;
        ++count;
        seen[s] = 1;
        stack.assign(1, s);
        while (!stack.empty()) {
            const auto [ci, cj, ck] = b.unravel(stack.back());
            stack.pop_back();
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj)
                    for (int dk = -1; dk <= 1; ++dk) {
                        if (!di && !dj && !dk) continue;
                        const long i = static_cast<long>(ci) + di;
                        const long j = static_cast<long>(cj) + dj;
                        const long k = static_cast<long>(ck) + dk;
                        if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(dims.h) ||
                            j >= static_cast<long>(dims.w) || k >= static_cast<long>(dims.d))
                            continue;
                        const std::size_t f = b.index(i, j, k);
                        if (b[f] && !seen[f]) {
                            seen[f] = 1;
                            stack.push_back(f);
                        }
                    }
        }
    }
    return count;
}

/// Bounded 6-connected components of the complement (voids). The border
/// connects to the outside, so a flood from every border background voxel
/// marks the unbounded component first.
std::size_t bounded_complement6(const BinaryMap& b) {
    const Dim3 dims = b.dims();
    std::vector<std::uint8_t> seen(b.size(), 0);
    std::vector<std::size_t> stack;

    const auto flood = [&](std::size_t start) {
        seen[start] = 1;
        stack.assign(1, start);
        while (!stack.empty()) {
            const auto [ci, cj, ck] = b.unravel(stack.back());
            stack.pop_back();
            constexpr int steps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                         {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
            for (const auto& st : steps) {
                const long i = static_cast<long>(ci) + st[0];
                const long j = static_cast<long>(cj) + st[1];
                const long k = static_cast<long>(ck) + st[2];
                if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(dims.h) ||
                    j >= static_cast<long>(dims.w) || k >= static_cast<long>(dims.d))
                    continue;
                const std::size_t f = b.index(i, j, k);
                if (!b[f] && !seen[f]) {
                    seen[f] = 1;
                    stack.push_back(f);
                }
            }
        }
    };

    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j)
            for (std::size_t k = 0; k < dims.d; ++k) {
                const bool border = i == 0 || j == 0 || k == 0 || i + 1 == dims.h ||
                                    j + 1 == dims.w || k + 1 == dims.d;
                if (!border) continue;
                const std::size_t f = b.index(i, j, k);
                if (!b[f] && !seen[f]) flood(f);
            }

    std::size_t voids = 0;
    for (std::size_t f = 0; f < b.size(); ++f) {
        if (b[f] || seen[f]) continue;
        ++voids;
        flood(f);
    }
    return voids;
}

/// Euler characteristic of the closure complex of the foreground.
long long euler_characteristic(const BinaryMap& b) {
    const CellGrid cg(b.dims());
    long long chi = 0;
    for (std::size_t x = 0; x < cg.da; ++x)
        for (std::size_t y = 0; y < cg.db; ++y)
            for (std::size_t z = 0; z < cg.dc; ++z) {
                const auto axis_range = [](std::size_t c, std::size_t n, std::size_t& lo,
                                           std::size_t& hi) {
                    if (c & 1) {
                        lo = hi = (c - 1) / 2;
                    } else {
                        lo = (c == 0) ? 0 : c / 2 - 1;
                        hi = (c == 2 * n) ? n - 1 : c / 2;
                    }
                };
                std::size_t xlo, xhi, ylo, yhi, zlo, zhi;
                axis_range(x, cg.ga, xlo, xhi);
                axis_range(y, cg.gb, ylo, yhi);
                axis_range(z, cg.gc, zlo, zhi);
                bool present = false;
                for (std::size_t i = xlo; i <= xhi && !present; ++i)
                    for (std::size_t j = ylo; j <= yhi && !present; ++j)
                        for (std::size_t k = zlo; k <= zhi && !present; ++k)
                            present = b.at(i, j, k) != 0;
                if (!present) continue;
                const int dim = CellGrid::cell_dim({x, y, z});
                chi += (dim % 2 == 0) ? 1 : -1;
            }
    return chi;
}

}  // namespace

std::array<std::size_t, 3> betti_numbers(const BinaryMap& b) {
    const std::size_t b0 = components26(b);
    if (b0 == 0) return {0, 0, 0};
    const std::size_t b2 = bounded_complement6(b);
    const long long chi = euler_characteristic(b);
    const long long b1 = static_cast<long long>(b0) + static_cast<long long>(b2) - chi;
    if (b1 < 0) throw std::logic_error("betti_numbers: negative first Betti number");
    return {b0, static_cast<std::size_t>(b1), b2};
}

DiagramPartition partition_diagram(const PersistenceDiagram& d, const TopologicalPrior& prior) {
    DiagramPartition out;
    for (int dim = 0; dim < 3; ++dim) {
        std::vector<PersistencePoint> grp = d.points[dim];
        std::sort(grp.begin(), grp.end(), point_order);
        const std::size_t keep = std::min(grp.size(), prior.betti[dim]);
        out.preserve.insert(out.preserve.end(), grp.begin(), grp.begin() + keep);
        out.suppress.insert(out.suppress.end(), grp.begin() + keep, grp.end());
    }
    return out;
}

TopoPotentialResult topological_potential(const Grid3<double>& values,
                                          const DiagramPartition& partition) {
    const Dim3 dims = values.dims();
    TopoPotentialResult out;

    const auto flat_index = [&](const std::array<std::uint32_t, 3>& c) {
        if (c[0] >= dims.h || c[1] >= dims.w || c[2] >= dims.d)
            throw std::out_of_range("topological_potential: coordinate outside the grid");
        return values.index(c[0], c[1], c[2]);
    };

    const auto add = [&](const PersistencePoint& p, double sign) {
        const std::size_t rb = flat_index(p.birth_voxel);
        const double sb = values[rb];
        const double sd = p.essential ? 0.0 : values[flat_index(p.death_voxel)];
        const double diff = sb - sd;
        out.loss += sign * diff * diff;
        out.grad.emplace_back(rb, sign * 2.0 * diff);
        if (!p.essential)
            out.grad.emplace_back(flat_index(p.death_voxel), -sign * 2.0 * diff);
    };

    for (const auto& p : partition.preserve) add(p, -1.0);
    for (const auto& p : partition.suppress) add(p, +1.0);

    std::sort(out.grad.begin(), out.grad.end());
    std::vector<std::pair<std::size_t, double>> merged;
    for (const auto& [idx, g] : out.grad) {
        if (!merged.empty() && merged.back().first == idx)
            merged.back().second += g;
        else
            merged.emplace_back(idx, g);
    }
    std::erase_if(merged, [](const auto& e) { return e.second == 0.0; });
    out.grad = std::move(merged);
    return out;
}

std::vector<double> to_dense_grad(const TopoPotentialResult& r, std::size_t size) {
    std::vector<double> g(size, 0.0);
    for (const auto& [idx, v] : r.grad) g[idx] += v;
    return g;
}

}  // namespace geotopo
