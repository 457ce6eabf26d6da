// Python bindings for the core operations: voxel algebra, control domains,
// moments, persistence, the surrogate codec, guided sampling, and metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "geotopo/gvox.hpp"
#include "geotopo/metrics.hpp"
#include "geotopo/sampler.hpp"
#include "geotopo/task.hpp"

namespace py = pybind11;
using namespace geotopo;

namespace {

// numpy (C, H, W, D) float64 <-> VoxelMap; (H, W, D) <-> Grid3.

template <typename T>
py::array_t<T> vec_to_array(const std::vector<T>& v) {
    py::array_t<T> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

VoxelMap map_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                        bool probability = false) {
    if (a.ndim() != 4) throw py::value_error("expected a (C, H, W, D) array");
    const Dim3 dims{static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(2)),
                    static_cast<std::size_t>(a.shape(3))};
    VoxelMap out(static_cast<std::uint32_t>(a.shape(0)), dims, probability);
    const double* src = a.data();
    const std::size_t n = dims.count();
    for (std::uint32_t c = 0; c < out.channels(); ++c)
        std::copy(src + c * n, src + (c + 1) * n, out.channel(c).data().begin());
    return out;
}

py::array_t<double> map_to_array(const VoxelMap& v) {
    const std::size_t n = v.dims().count();
    py::array_t<double> out(
        {static_cast<std::size_t>(v.channels()), v.dims().h, v.dims().w, v.dims().d});
    double* dst = out.mutable_data();
    for (std::uint32_t c = 0; c < v.channels(); ++c)
        std::copy(v.channel(c).data().begin(), v.channel(c).data().end(), dst + c * n);
    return out;
}

Grid3<double> grid_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3) throw py::value_error("expected an (H, W, D) array");
    Grid3<double> g({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                     static_cast<std::size_t>(a.shape(2))});
    std::copy(a.data(), a.data() + g.size(), g.data().begin());
    return g;
}

py::array_t<double> grid_to_array(const Grid3<double>& g) {
    py::array_t<double> out({g.dims().h, g.dims().w, g.dims().d});
    std::copy(g.data().begin(), g.data().end(), out.mutable_data());
    return out;
}

py::array_t<std::uint8_t> labels_to_array(const LabelGrid& l) {
    py::array_t<std::uint8_t> out({l.labels.dims().h, l.labels.dims().w, l.labels.dims().d});
    std::copy(l.labels.data().begin(), l.labels.data().end(), out.mutable_data());
    return out;
}

LabelGrid labels_from_array(
    const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a,
    std::uint32_t num_classes) {
    if (a.ndim() != 3) throw py::value_error("expected an (H, W, D) uint8 array");
    LabelGrid l;
    l.num_classes = num_classes;
    l.labels = Grid3<std::uint8_t>({static_cast<std::size_t>(a.shape(0)),
                                    static_cast<std::size_t>(a.shape(1)),
                                    static_cast<std::size_t>(a.shape(2))});
    std::copy(a.data(), a.data() + l.labels.size(), l.labels.data().begin());
    return l;
}

std::vector<Vec3> points_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error("expected an (N, 3) array");
    std::vector<Vec3> pts(a.shape(0));
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        pts[i] = Vec3(a.at(i, 0), a.at(i, 1), a.at(i, 2));
    return pts;
}

AffineParams affine_from_arrays(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& r,
    const py::array_t<double, py::array::c_style | py::array::forcecast>& s,
    const py::array_t<double, py::array::c_style | py::array::forcecast>& t) {
    if (r.ndim() != 2 || r.shape(0) != 3 || r.shape(1) != 3)
        throw py::value_error("R must be 3x3");
    Mat3 rot;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rot(i, j) = r.at(i, j);
    const Vec3 scale(s.at(0), s.at(1), s.at(2));
    const Vec3 trans(t.at(0), t.at(1), t.at(2));
    return AffineParams(rot, scale, trans);
}

py::dict diagram_to_dict(const PersistenceDiagram& d) {
    const std::vector<PersistencePoint> flat = d.flat();
    const std::size_t n = flat.size();
    std::vector<int> dims(n);
    std::vector<double> births(n), deaths(n);
    std::vector<std::uint8_t> essential(n);
    py::array_t<std::int64_t> birth_voxels({n, static_cast<std::size_t>(3)});
    py::array_t<std::int64_t> death_voxels({n, static_cast<std::size_t>(3)});
    for (std::size_t i = 0; i < n; ++i) {
        dims[i] = flat[i].dim;
        births[i] = flat[i].birth;
        deaths[i] = flat[i].death;
        essential[i] = flat[i].essential ? 1 : 0;
        for (int ax = 0; ax < 3; ++ax) {
            birth_voxels.mutable_at(i, ax) = flat[i].birth_voxel[ax];
            death_voxels.mutable_at(i, ax) = flat[i].essential ? -1 : flat[i].death_voxel[ax];
        }
    }
    py::dict out;
    out["dim"] = vec_to_array(dims);
    out["birth"] = vec_to_array(births);
    out["death"] = vec_to_array(deaths);
    out["birth_voxel"] = birth_voxels;
    out["death_voxel"] = death_voxels;
    out["essential"] = vec_to_array(essential).attr("astype")("bool");
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "localized geo-topological measurement and guided diffusion over voxel maps";

    // voxel algebra -----------------------------------------------------
    m.def(
        "one_hot",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& labels,
           std::uint32_t channels) {
            return map_to_array(one_hot_encode(labels_from_array(labels, channels), channels));
        },
        py::arg("labels"), py::arg("channels"));
    m.def(
        "argmax",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& v) {
            return labels_to_array(map_from_array(v).argmax());
        },
        py::arg("map"));
    m.def(
        "softmax_channels",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
           double temperature) {
            return map_to_array(softmax_channels(map_from_array(logits), temperature));
        },
        py::arg("logits"), py::arg("temperature") = 1.0);
    m.def(
        "boolean_subset",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& v,
           const std::vector<bool>& selection) {
            return grid_to_array(boolean_subset(map_from_array(v), selection));
        },
        py::arg("map"), py::arg("selection"));
    m.def(
        "trilinear_sample",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& grid,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& points) {
            return vec_to_array(
                trilinear_sample(grid_from_array(grid), points_from_array(points)));
        },
        py::arg("grid"), py::arg("points"));

    // domains -------------------------------------------------------------
    m.def(
        "template_points",
        [](std::size_t a, std::size_t b, std::size_t c) {
            const TemplateGrid t = make_template({a, b, c});
            py::array_t<double> out({t.points.size(), static_cast<std::size_t>(3)});
            for (std::size_t i = 0; i < t.points.size(); ++i)
                for (int ax = 0; ax < 3; ++ax) out.mutable_at(i, ax) = t.points[i][ax];
            return out;
        },
        py::arg("a"), py::arg("b"), py::arg("c"));
    m.def(
        "domain_points",
        [](std::size_t a, std::size_t b, std::size_t c,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& r,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& s,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& t) {
            const ControlDomain d = make_domain({a, b, c}, affine_from_arrays(r, s, t));
            py::array_t<double> out({d.points.size(), static_cast<std::size_t>(3)});
            for (std::size_t i = 0; i < d.points.size(); ++i)
                for (int ax = 0; ax < 3; ++ax) out.mutable_at(i, ax) = d.points[i][ax];
            return out;
        },
        py::arg("a"), py::arg("b"), py::arg("c"), py::arg("R"), py::arg("s"), py::arg("t"));
    m.def(
        "fibonacci_lattice",
        [](std::size_t n) {
            const auto dirs = fibonacci_lattice(n);
            py::array_t<double> out({dirs.size(), static_cast<std::size_t>(3)});
            for (std::size_t i = 0; i < dirs.size(); ++i)
                for (int ax = 0; ax < 3; ++ax) out.mutable_at(i, ax) = dirs[i][ax];
            return out;
        },
        py::arg("n"));

    // geometry --------------------------------------------------------------
    m.def(
        "moments",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& values,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& r,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& s,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& t) {
            Substructure sub;
            sub.values = grid_from_array(values);
            sub.domain =
                make_domain({sub.values.dims().h, sub.values.dims().w, sub.values.dims().d},
                            affine_from_arrays(r, s, t));
            const GeometricMoments g = measure_global(sub);
            py::dict out;
            out["mass"] = g.mass;
            out["defined"] = g.defined;
            py::array_t<double> cov({3, 3});
            std::vector<double> centroid(3);
            for (int i = 0; i < 3; ++i) {
                centroid[i] = g.centroid[i];
                for (int j = 0; j < 3; ++j) cov.mutable_at(i, j) = g.covariance(i, j);
            }
            out["centroid"] = vec_to_array(centroid);
            out["covariance"] = cov;
            return out;
        },
        py::arg("values"), py::arg("R"), py::arg("s"), py::arg("t"),
        "Global-frame mass/centroid/covariance of a substructure");

    // topology ---------------------------------------------------------------
    m.def(
        "persistent_homology",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& values) {
            return diagram_to_dict(persistent_homology(grid_from_array(values)));
        },
        py::arg("values"));
    m.def(
        "betti_numbers",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask) {
            BinaryMap b({static_cast<std::size_t>(mask.shape(0)),
                         static_cast<std::size_t>(mask.shape(1)),
                         static_cast<std::size_t>(mask.shape(2))});
            std::copy(mask.data(), mask.data() + b.size(), b.data().begin());
            const auto betti = betti_numbers(b);
            return py::make_tuple(betti[0], betti[1], betti[2]);
        },
        py::arg("mask"));

    // surrogate ---------------------------------------------------------------
    m.def(
        "generate_phantom",
        [](const std::string& family, std::uint64_t seed, std::uint64_t index) {
            const Phantom p = generate_phantom(phantom_family(family, seed), index);
            return labels_to_array(p.map.argmax());
        },
        py::arg("family"), py::arg("seed"), py::arg("index"));
    m.def("phantom_families", [] { return phantom_family_names(); });
    m.def(
        "encode",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& v,
           std::uint32_t factor) {
            return map_to_array(encode(map_from_array(v, true), factor).logits);
        },
        py::arg("map"), py::arg("factor"));
    m.def(
        "decode_field",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& points,
           double temperature) {
            Latent z;
            z.logits = map_from_array(logits);
            const auto pts = points_from_array(points);
            const DecodedField f = decode_field(z, pts, temperature);
            py::array_t<double> out({f.npoints, static_cast<std::size_t>(f.channels)});
            std::copy(f.probs.begin(), f.probs.end(), out.mutable_data());
            return out;
        },
        py::arg("logits"), py::arg("points"), py::arg("temperature") = 1.0);

    // sampler -------------------------------------------------------------------
    m.def(
        "noise_schedule",
        [](std::size_t n, double sigma_max, double sigma_min, double rho) {
            return vec_to_array(noise_schedule(n, sigma_max, sigma_min, rho).sigmas);
        },
        py::arg("n") = 100, py::arg("sigma_max") = 80.0, py::arg("sigma_min") = 0.01,
        py::arg("rho") = 1.0);
    m.def(
        "empirical_denoiser",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& z, double sigma,
           const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>&
               dataset) {
            std::vector<VoxelMap> atoms;
            for (const auto& a : dataset) atoms.push_back(map_from_array(a));
            return map_to_array(empirical_denoiser(map_from_array(z), sigma, atoms));
        },
        py::arg("z"), py::arg("sigma"), py::arg("dataset"));
    m.def(
        "run_task",
        [](const std::string& config_json) {
            const TaskConfig config = task_config_from_json(Json::parse(config_json));
            const ResolvedTask task = resolve_task(config);
            py::list out;
            for (std::size_t i = 0; i < config.num_seeds; ++i) {
                SamplerConfig sc = config.sampler;
                sc.seed = config.sampler.seed + i;
                const SampleResult r = sample(sc, task.prior_latents, config.latent_factor,
                                              task.native_dims, task.constraints);
                py::dict entry;
                entry["seed"] = sc.seed;
                entry["labels"] = labels_to_array(r.labels);
                std::vector<double> losses(r.log.size());
                for (std::size_t s = 0; s < r.log.size(); ++s) losses[s] = r.log[s].loss;
                entry["losses"] = vec_to_array(losses);
                out.append(entry);
            }
            return out;
        },
        py::arg("config_json"),
        "Run guided sampling from a task config JSON string; returns labels per seed");

    // io ---------------------------------------------------------------------
    m.def(
        "gvox_write_labels",
        [](const std::string& path,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& labels,
           std::uint32_t num_classes) {
            gvox_write(path, labels_from_array(labels, num_classes));
        },
        py::arg("path"), py::arg("labels"), py::arg("num_classes"));
    m.def(
        "gvox_read",
        [](const std::string& path) -> py::object {
            GvoxPayload p = gvox_read(path);
            if (std::holds_alternative<LabelGrid>(p))
                return labels_to_array(std::get<LabelGrid>(p));
            return map_to_array(std::get<VoxelMap>(p));
        },
        py::arg("path"));

    // metrics ------------------------------------------------------------------
    m.def(
        "fmd",
        [](const std::vector<std::vector<double>>& real,
           const std::vector<std::vector<double>>& synth) {
            return fmd(real, synth, morph_stats(real));
        },
        py::arg("real_features"), py::arg("synth_features"));
    m.def(
        "morph_features",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& v) {
            return morph_features(map_from_array(v));
        },
        py::arg("map"));
    m.def(
        "emd",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return emd(points_from_array(a), points_from_array(b));
        },
        py::arg("a"), py::arg("b"));

#ifdef GEOTOPO_VERSION
    m.attr("__version__") = GEOTOPO_VERSION;
#else
    m.attr("__version__") = "dev";
#endif
}
