#include "geotopo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "geotopo/topology.hpp"

namespace geotopo {

std::vector<double> morph_features(const VoxelMap& v) {
    if (v.channels() < 2)
        throw std::invalid_argument("morph_features: need at least one tissue channel");
    std::vector<double> out;
    out.reserve(7 * (v.channels() - 1));
    const GridSize grid{v.dims().h, v.dims().w, v.dims().d};
    for (std::uint32_t c = 1; c < v.channels(); ++c) {
        Substructure s;
        s.domain = make_domain(grid, global_domain());
        s.values = v.channel(c);
        const GeometricMoments g = measure_global(s);
        out.push_back(g.mass);
        const Vec3 p = g.defined ? g.centroid : Vec3::Zero();
        out.insert(out.end(), {p.x(), p.y(), p.z()});
        const MomentDecomposition dec = decompose(g.defined ? g.covariance : Mat3::Zero());
        out.insert(out.end(), {dec.shape[0], dec.shape[1], dec.shape[2]});
    }
    return out;
}

MorphStats morph_stats(const std::vector<std::vector<double>>& features) {
    if (features.empty()) throw std::invalid_argument("morph_stats: empty feature set");
    const std::size_t d = features.front().size();
    MorphStats out;
    out.mean.assign(d, 0.0);
    out.std.assign(d, 0.0);
    for (const auto& f : features)
        for (std::size_t i = 0; i < d; ++i) out.mean[i] += f[i];
    for (double& m : out.mean) m /= static_cast<double>(features.size());
    for (const auto& f : features)
        for (std::size_t i = 0; i < d; ++i) {
            const double c = f[i] - out.mean[i];
            out.std[i] += c * c;
        }
    for (double& s : out.std)
        s = std::max(1e-8, std::sqrt(s / static_cast<double>(features.size())));
    return out;
}

namespace {

Eigen::MatrixXd normalized_matrix(const std::vector<std::vector<double>>& features,
                                  const MorphStats& stats) {
    const std::size_t n = features.size(), d = stats.mean.size();
    Eigen::MatrixXd m(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        if (features[i].size() != d)
            throw std::invalid_argument("fmd: inconsistent feature dimensions");
        for (std::size_t j = 0; j < d; ++j)
            m(i, j) = (features[i][j] - stats.mean[j]) / stats.std[j];
    }
    return m;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fmd(const std::vector<std::vector<double>>& real_features,
           const std::vector<std::vector<double>>& synth_features, const MorphStats& stats) {
    if (real_features.size() < 2 || synth_features.size() < 2)
        throw std::invalid_argument("fmd: need at least two samples per set");

    const Eigen::MatrixXd r = normalized_matrix(real_features, stats);
    const Eigen::MatrixXd s = normalized_matrix(synth_features, stats);

    const Eigen::VectorXd mu_r = r.colwise().mean();
    const Eigen::VectorXd mu_s = s.colwise().mean();
    const Eigen::MatrixXd cr = (r.rowwise() - mu_r.transpose()).transpose() *
                               (r.rowwise() - mu_r.transpose()) /
                               static_cast<double>(r.rows() - 1);
    const Eigen::MatrixXd cs = (s.rowwise() - mu_s.transpose()).transpose() *
                               (s.rowwise() - mu_s.transpose()) /
                               static_cast<double>(s.rows() - 1);

    // tr((S_r S_s)^(1/2)) via the symmetric form A = sqrt(S_r) S_s sqrt(S_r).
    const Eigen::MatrixXd root_r = sqrt_psd(cr);
    const Eigen::MatrixXd inner = root_r * cs * root_r;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()));
    const double trace_cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    return (mu_r - mu_s).squaredNorm() + cr.trace() + cs.trace() - 2.0 * trace_cross;
}

// ---------------------------------------------------------------------------
// Point clouds
// ---------------------------------------------------------------------------

std::vector<Vec3> label_cloud(const LabelGrid& labels, std::uint32_t channel) {
    std::vector<Vec3> out;
    const Dim3 dims = labels.labels.dims();
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j)
            for (std::size_t k = 0; k < dims.d; ++k)
                if (labels.labels.at(i, j, k) == channel)
                    out.push_back(voxel_center(dims, i, j, k));
    return out;
}

std::vector<Vec3> farthest_point_sample(const std::vector<Vec3>& cloud, std::size_t count,
                                        std::uint64_t seed) {
    if (cloud.empty()) throw std::invalid_argument("farthest_point_sample: empty cloud");
    std::vector<Vec3> out;
    out.reserve(count);
    if (cloud.size() <= count) {
        for (std::size_t i = 0; i < count; ++i) out.push_back(cloud[i % cloud.size()]);
        return out;
    }
    std::vector<double> best(cloud.size(), std::numeric_limits<double>::infinity());
    std::size_t cursor = seed % cloud.size();
    for (std::size_t picked = 0; picked < count; ++picked) {
        out.push_back(cloud[cursor]);
        double far_d = -1.0;
        std::size_t far_i = 0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            best[i] = std::min(best[i], (cloud[i] - cloud[cursor]).squaredNorm());
            if (best[i] > far_d) {
                far_d = best[i];
                far_i = i;
            }
        }
        cursor = far_i;
    }
    return out;
}

double emd(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("emd: clouds must be nonempty and equal size");
    const int n = static_cast<int>(a.size());

    // Hungarian algorithm (shortest augmenting paths with potentials).
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cost[i][j] = (a[i] - b[j]).norm();

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, -1);  // column -> row; column n is virtual
    std::vector<double> minv(n + 1);
    std::vector<int> way(n + 1);
    std::vector<char> used(n + 1);
    for (int i = 0; i < n; ++i) {
        minv.assign(n + 1, kInf);
        way.assign(n + 1, n);
        used.assign(n + 1, 0);
        int j0 = n;
        match[j0] = i;
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            double delta = kInf;
            int j1 = -1;
            for (int j = 0; j < n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0][j] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != -1);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != n);
    }

    double total = 0.0;
    for (int j = 0; j < n; ++j)
        if (match[j] >= 0) total += cost[match[j]][j];
    return total / n;
}

double one_nna_from_distances(const std::vector<std::vector<double>>& dist, std::size_t n_real) {
    const std::size_t n = dist.size();
    if (n_real == 0 || n_real >= n)
        throw std::invalid_argument("one_nna: need clouds on both sides");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t nn = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (dist[i][j] < best) {
                best = dist[i][j];
                nn = j;
            }
        }
        const bool same_side = (i < n_real) == (nn < n_real);
        if (same_side) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

double one_nna(const std::vector<std::vector<Vec3>>& real_clouds,
               const std::vector<std::vector<Vec3>>& synth_clouds) {
    if (real_clouds.size() < 2 || synth_clouds.size() < 2)
        throw std::invalid_argument("one_nna: need at least two clouds per side");
    std::vector<const std::vector<Vec3>*> all;
    for (const auto& c : real_clouds) all.push_back(&c);
    for (const auto& c : synth_clouds) all.push_back(&c);
    const std::size_t n = all.size();
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = emd(*all[i], *all[j]);
    return one_nna_from_distances(dist, real_clouds.size());
}

// ---------------------------------------------------------------------------
// Control fidelity
// ---------------------------------------------------------------------------

void FidelityAccumulator::add(const GeometricMoments& global, const GeometricTarget& target) {
    if (global.frame != MomentFrame::Global)
        throw std::invalid_argument("FidelityAccumulator: moments must be global-frame");
    mass_ += std::abs(global.mass - target.mass);
    ++count_;
    if (!global.defined) return;
    ++defined_;
    centroid_ += (global.centroid - target.centroid).cwiseAbs().mean();
    const MomentDecomposition dec = decompose(global.covariance);
    covariance_ += (dec.normalized - target.covariance_n).cwiseAbs().mean();
}

FidelityReport FidelityAccumulator::report() const {
    FidelityReport out;
    out.count = count_;
    if (count_ == 0) return out;
    out.mass = mass_ / static_cast<double>(count_);
    if (defined_ > 0) {
        out.centroid = centroid_ / static_cast<double>(defined_);
        out.covariance = covariance_ / static_cast<double>(defined_);
    }
    return out;
}

BinaryMap selection_mask(const LabelGrid& labels, const std::vector<bool>& selection) {
    if (selection.size() != labels.num_classes)
        throw std::invalid_argument("selection_mask: selection length mismatch");
    BinaryMap out(labels.labels.dims(), 0);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = selection[labels.labels[i]] ? 1 : 0;
    return out;
}

BettiPrecision betti_precision(const std::vector<LabelGrid>& samples,
                               const std::vector<bool>& selection,
                               const std::array<std::size_t, 3>& prior) {
    if (samples.empty()) throw std::invalid_argument("betti_precision: empty sample set");
    BettiPrecision out;
    out.count = samples.size();
    for (const LabelGrid& s : samples) {
        const auto betti = betti_numbers(selection_mask(s, selection));
        if (betti[0] == prior[0]) out.b0 += 1;
        if (betti[1] == prior[1]) out.b1 += 1;
        if (betti[2] == prior[2]) out.b2 += 1;
    }
    out.b0 /= static_cast<double>(out.count);
    out.b1 /= static_cast<double>(out.count);
    out.b2 /= static_cast<double>(out.count);
    return out;
}

}  // namespace geotopo
