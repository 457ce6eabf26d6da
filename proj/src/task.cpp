#include "geotopo/task.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "geotopo/gvox.hpp"
#include "geotopo/parallel.hpp"

namespace fs = std::filesystem;

namespace geotopo {

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ValidationError(where + ": " + what);
}

const Json& expect(const Json& j, const char* key, const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
    const auto it = j.find(key);
    if (it == j.end()) fail(where, std::string("missing required field '") + key + "'");
    return *it;
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) fail(where, "unknown field '" + key + "'");
    }
}

double number(const Json& j, const std::string& where) {
    if (!j.is_number()) fail(where, "expected a number");
    return j.get<double>();
}

double number_or(const Json& j, const char* key, double fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    return number(j[key], where + "." + key);
}

std::size_t index_of(const Json& j, const std::string& where) {
    if (j.is_number_unsigned()) return j.get<std::size_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0)
        return static_cast<std::size_t>(j.get<std::int64_t>());
    fail(where, "expected a nonnegative integer");
}

bool boolean_or(const Json& j, const char* key, bool fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_boolean()) fail(where + "." + key, "expected a boolean");
    return j[key].get<bool>();
}

Vec3 vec3_from(const Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) fail(where, "expected an array of 3 numbers");
    return {number(j[0], where), number(j[1], where), number(j[2], where)};
}

Json vec3_to(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Mat3 mat3_from(const Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) fail(where, "expected a 3x3 array");
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
        if (!j[r].is_array() || j[r].size() != 3) fail(where, "expected a 3x3 array");
        for (int c = 0; c < 3; ++c) m(r, c) = number(j[r][c], where);
    }
    return m;
}

Json mat3_to(const Mat3& m) {
    Json rows = Json::array();
    for (int r = 0; r < 3; ++r) rows.push_back(Json::array({m(r, 0), m(r, 1), m(r, 2)}));
    return rows;
}

GridSize grid_from(const Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) fail(where, "expected [a, b, c]");
    const GridSize g{index_of(j[0], where), index_of(j[1], where), index_of(j[2], where)};
    if (g.a == 0 || g.b == 0 || g.c == 0) fail(where, "grid sizes must be positive");
    return g;
}

Dim3 dims_from(const Json& j, const std::string& where) {
    const GridSize g = grid_from(j, where);
    return {g.a, g.b, g.c};
}

std::vector<bool> selection_from(const Json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) fail(where, "expected a nonempty boolean array");
    std::vector<bool> out;
    for (const auto& v : j) {
        if (v.is_boolean())
            out.push_back(v.get<bool>());
        else if (v.is_number_unsigned() && v.get<std::uint64_t>() <= 1)
            out.push_back(v.get<std::uint64_t>() == 1);
        else
            fail(where, "selection entries must be booleans (or 0/1)");
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

Json affine_to_json(const AffineParams& a) {
    Json j;
    j["R"] = mat3_to(a.rotation);
    j["s"] = vec3_to(a.scale);
    j["t"] = vec3_to(a.translation);
    return j;
}

AffineParams affine_from_json(const Json& j, const std::string& where) {
    check_keys(j, {"R", "s", "t"}, where);
    try {
        return AffineParams(mat3_from(expect(j, "R", where), where + ".R"),
                            vec3_from(expect(j, "s", where), where + ".s"),
                            vec3_from(expect(j, "t", where), where + ".t"));
    } catch (const std::invalid_argument& e) {
        fail(where, e.what());
    }
}

namespace {

const char* shape_name(PartShape s) {
    switch (s) {
        case PartShape::Ellipsoid: return "ellipsoid";
        case PartShape::Tube: return "tube";
        case PartShape::Torus: return "torus";
        case PartShape::Arc: return "arc";
        case PartShape::Shell: return "shell";
        case PartShape::Box: return "box";
    }
    return "ellipsoid";
}

PartShape shape_from(const std::string& s, const std::string& where) {
    if (s == "ellipsoid") return PartShape::Ellipsoid;
    if (s == "tube") return PartShape::Tube;
    if (s == "torus") return PartShape::Torus;
    if (s == "arc") return PartShape::Arc;
    if (s == "shell") return PartShape::Shell;
    if (s == "box") return PartShape::Box;
    fail(where, "unknown shape '" + s + "'");
}

Json part_to_json(const PhantomPart& p) {
    Json j;
    j["shape"] = shape_name(p.shape);
    j["channel"] = p.channel;
    j["center"] = vec3_to(p.center);
    j["center_jitter"] = vec3_to(p.center_jitter);
    j["radii"] = vec3_to(p.radii);
    j["size_jitter"] = p.size_jitter;
    j["axis"] = vec3_to(p.axis);
    j["rot_jitter"] = p.rot_jitter;
    j["arc_span"] = p.arc_span;
    return j;
}

PhantomPart part_from_json(const Json& j, const std::string& where) {
    check_keys(j,
               {"shape", "channel", "center", "center_jitter", "radii", "size_jitter", "axis",
                "rot_jitter", "arc_span"},
               where);
    PhantomPart p;
    p.shape = shape_from(expect(j, "shape", where).get<std::string>(), where + ".shape");
    p.channel = static_cast<std::uint32_t>(index_of(expect(j, "channel", where), where));
    p.center = vec3_from(expect(j, "center", where), where + ".center");
    if (j.contains("center_jitter"))
        p.center_jitter = vec3_from(j["center_jitter"], where + ".center_jitter");
    p.radii = vec3_from(expect(j, "radii", where), where + ".radii");
    p.size_jitter = number_or(j, "size_jitter", 0.0, where);
    if (j.contains("axis")) p.axis = vec3_from(j["axis"], where + ".axis");
    p.rot_jitter = number_or(j, "rot_jitter", 0.0, where);
    p.arc_span = number_or(j, "arc_span", p.arc_span, where);
    return p;
}

}  // namespace

Json phantom_spec_to_json(const PhantomSpec& spec) {
    Json j;
    j["channels"] = spec.channels;
    j["dims"] = Json::array({spec.dims.h, spec.dims.w, spec.dims.d});
    j["seed"] = spec.seed;
    Json parts = Json::array();
    for (const PhantomPart& p : spec.parts) parts.push_back(part_to_json(p));
    j["parts"] = parts;
    if (!spec.variants.empty()) {
        Json variants = Json::array();
        for (const PhantomVariant& v : spec.variants) {
            Json vj;
            vj["prob"] = v.prob;
            Json vparts = Json::array();
            for (const PhantomPart& p : v.parts) vparts.push_back(part_to_json(p));
            vj["parts"] = vparts;
            variants.push_back(vj);
        }
        j["variants"] = variants;
    }
    return j;
}

PhantomSpec phantom_spec_from_json(const Json& j) {
    const std::string where = "phantom_spec";
    check_keys(j, {"channels", "dims", "seed", "parts", "variants"}, where);
    PhantomSpec spec;
    spec.channels = static_cast<std::uint32_t>(index_of(expect(j, "channels", where), where));
    spec.dims = dims_from(expect(j, "dims", where), where + ".dims");
    spec.seed = expect(j, "seed", where).get<std::uint64_t>();
    for (std::size_t i = 0; i < expect(j, "parts", where).size(); ++i)
        spec.parts.push_back(
            part_from_json(j["parts"][i], where + ".parts[" + std::to_string(i) + "]"));
    if (j.contains("variants")) {
        double total = 0;
        for (std::size_t v = 0; v < j["variants"].size(); ++v) {
            const std::string vw = where + ".variants[" + std::to_string(v) + "]";
            check_keys(j["variants"][v], {"prob", "parts"}, vw);
            PhantomVariant var;
            var.prob = number(expect(j["variants"][v], "prob", vw), vw + ".prob");
            total += var.prob;
            for (std::size_t i = 0; i < expect(j["variants"][v], "parts", vw).size(); ++i)
                var.parts.push_back(part_from_json(j["variants"][v]["parts"][i],
                                                   vw + ".parts[" + std::to_string(i) + "]"));
            spec.variants.push_back(std::move(var));
        }
        if (total > 1.0 + 1e-9) fail(where + ".variants", "probabilities exceed 1");
    }
    return spec;
}

std::string json_hash(const Json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Constraints
// ---------------------------------------------------------------------------

namespace {

DomainSource::Kind domain_kind_from(const std::string& s, const std::string& where) {
    using Kind = DomainSource::Kind;
    if (s == "explicit") return Kind::Explicit;
    if (s == "global") return Kind::Global;
    if (s == "cartesian") return Kind::Cartesian;
    if (s == "interface") return Kind::Interface;
    if (s == "curvilinear") return Kind::Curvilinear;
    if (s == "spherical") return Kind::Spherical;
    if (s == "cylindrical") return Kind::Cylindrical;
    fail(where, "unknown domain type '" + s + "'");
}

const char* domain_kind_name(DomainSource::Kind k) {
    using Kind = DomainSource::Kind;
    switch (k) {
        case Kind::Explicit: return "explicit";
        case Kind::Global: return "global";
        case Kind::Cartesian: return "cartesian";
        case Kind::Interface: return "interface";
        case Kind::Curvilinear: return "curvilinear";
        case Kind::Spherical: return "spherical";
        case Kind::Cylindrical: return "cylindrical";
    }
    return "global";
}

DomainSource domain_from_json(const Json& j, const std::string& where) {
    check_keys(j,
               {"type", "affines", "dynamic", "selection_b", "k_dil", "ref", "subsample",
                "n_rays", "n_z", "n_theta", "n_query", "min_ray_mass"},
               where);
    DomainSource d;
    d.kind = domain_kind_from(expect(j, "type", where).get<std::string>(), where + ".type");
    d.dynamic = boolean_or(j, "dynamic", false, where);
    using Kind = DomainSource::Kind;
    if (d.kind == Kind::Explicit) {
        const Json& affines = expect(j, "affines", where);
        if (!affines.is_array() || affines.empty())
            fail(where + ".affines", "expected a nonempty array");
        for (std::size_t i = 0; i < affines.size(); ++i)
            d.affines.push_back(
                affine_from_json(affines[i], where + ".affines[" + std::to_string(i) + "]"));
        if (d.dynamic) fail(where, "explicit domains cannot be dynamic");
    } else if (j.contains("affines")) {
        fail(where, "'affines' is only valid for explicit domains");
    }
    if (d.kind == Kind::Interface) {
        d.selection_b = selection_from(expect(j, "selection_b", where), where + ".selection_b");
        d.k_dil = static_cast<int>(index_of(j.value("k_dil", Json(5)), where + ".k_dil"));
        if (d.k_dil < 1 || d.k_dil % 2 == 0)
            fail(where + ".k_dil", "dilation kernel must be odd and positive");
    } else if (j.contains("selection_b") || j.contains("k_dil")) {
        fail(where, "'selection_b'/'k_dil' are only valid for interface domains");
    }
    if (j.contains("ref")) d.ref = vec3_from(j["ref"], where + ".ref");
    if (j.contains("subsample")) {
        if (d.kind != Kind::Curvilinear)
            fail(where, "'subsample' is only valid for curvilinear domains");
        for (const auto& v : j["subsample"])
            d.subsample.push_back(index_of(v, where + ".subsample"));
    }
    if (j.contains("n_rays")) d.n_rays = index_of(j["n_rays"], where + ".n_rays");
    if (j.contains("n_z")) d.n_z = index_of(j["n_z"], where + ".n_z");
    if (j.contains("n_theta")) d.n_theta = index_of(j["n_theta"], where + ".n_theta");
    if (j.contains("n_query")) d.n_query = index_of(j["n_query"], where + ".n_query");
    d.min_ray_mass = number_or(j, "min_ray_mass", d.min_ray_mass, where);
    return d;
}

Json domain_to_json(const DomainSource& d) {
    Json j;
    j["type"] = domain_kind_name(d.kind);
    if (d.kind == DomainSource::Kind::Explicit) {
        Json affines = Json::array();
        for (const AffineParams& a : d.affines) affines.push_back(affine_to_json(a));
        j["affines"] = affines;
    }
    if (d.dynamic) j["dynamic"] = true;
    if (d.kind == DomainSource::Kind::Interface) {
        Json sel = Json::array();
        for (bool b : d.selection_b) sel.push_back(b);
        j["selection_b"] = sel;
        j["k_dil"] = d.k_dil;
    }
    if (d.kind == DomainSource::Kind::Spherical) {
        j["n_rays"] = d.n_rays;
        j["n_query"] = d.n_query;
        j["min_ray_mass"] = d.min_ray_mass;
    }
    if (d.kind == DomainSource::Kind::Cylindrical) {
        j["n_z"] = d.n_z;
        j["n_theta"] = d.n_theta;
        j["n_query"] = d.n_query;
        j["min_ray_mass"] = d.min_ray_mass;
    }
    if (d.kind == DomainSource::Kind::Curvilinear && !d.subsample.empty()) {
        Json sub = Json::array();
        for (std::size_t i : d.subsample) sub.push_back(i);
        j["subsample"] = sub;
    }
    j["ref"] = vec3_to(d.ref);
    return j;
}

GeometricTarget target_from_json(const Json& j, const std::string& where) {
    check_keys(j, {"mass", "centroid", "covariance_n", "weights", "mass_threshold"}, where);
    GeometricTarget t;
    t.mass = number(expect(j, "mass", where), where + ".mass");
    t.centroid = vec3_from(expect(j, "centroid", where), where + ".centroid");
    if (j.contains("covariance_n"))
        t.covariance_n = mat3_from(j["covariance_n"], where + ".covariance_n");
    const Json& w = expect(j, "weights", where);
    if (!w.is_array() || w.size() != 3) fail(where + ".weights", "expected [l0, l1, l2]");
    t.lambda_mass = number(w[0], where + ".weights");
    t.lambda_centroid = number(w[1], where + ".weights");
    t.lambda_covariance = number(w[2], where + ".weights");
    if (t.lambda_mass < 0 || t.lambda_centroid < 0 || t.lambda_covariance < 0)
        fail(where + ".weights", "weights must be nonnegative");
    t.mass_threshold = number_or(j, "mass_threshold", 0.0, where);
    return t;
}

Json target_to_json(const GeometricTarget& t) {
    Json j;
    j["mass"] = t.mass;
    j["centroid"] = vec3_to(t.centroid);
    j["covariance_n"] = mat3_to(t.covariance_n);
    j["weights"] = Json::array({t.lambda_mass, t.lambda_centroid, t.lambda_covariance});
    j["mass_threshold"] = t.mass_threshold;
    return j;
}

ParsingMode mode_from(const std::string& s, const std::string& where) {
    if (s == "v") return ParsingMode::VFull;
    if (s == "l_coarse") return ParsingMode::LCoarse;
    if (s == "l_local") return ParsingMode::LLocal;
    fail(where, "unknown parsing mode '" + s + "' (expected v | l_coarse | l_local)");
}

const char* mode_name(ParsingMode m) {
    switch (m) {
        case ParsingMode::VFull: return "v";
        case ParsingMode::LCoarse: return "l_coarse";
        case ParsingMode::LLocal: return "l_local";
    }
    return "l_local";
}

ConstraintConfig constraint_from_json(const Json& j, const std::string& where) {
    check_keys(j,
               {"selection", "domain", "grid", "mode", "temperature", "geometric", "auto_target",
                "topological", "weight_geo", "weight_topo", "reference", "note"},
               where);
    ConstraintConfig out;
    ConstraintSpec& spec = out.spec;
    spec.selection = selection_from(expect(j, "selection", where), where + ".selection");
    spec.domain = domain_from_json(expect(j, "domain", where), where + ".domain");
    spec.grid = grid_from(expect(j, "grid", where), where + ".grid");
    if (j.contains("mode"))
        spec.mode = mode_from(j["mode"].get<std::string>(), where + ".mode");
    spec.temperature = number_or(j, "temperature", 0.0, where);

    if (j.contains("geometric")) {
        const Json& g = j["geometric"];
        if (g.is_array()) {
            for (std::size_t i = 0; i < g.size(); ++i)
                spec.geometric.push_back(
                    target_from_json(g[i], where + ".geometric[" + std::to_string(i) + "]"));
        } else {
            spec.geometric.push_back(target_from_json(g, where + ".geometric"));
        }
    }
    out.auto_target = boolean_or(j, "auto_target", false, where);
    if (out.auto_target) {
        if (!j.contains("geometric")) fail(where, "auto_target needs a 'geometric' weight entry");
        if (spec.geometric.size() != 1)
            fail(where + ".geometric", "auto_target expects exactly one weight template");
    }

    if (j.contains("topological")) {
        const Json& t = j["topological"];
        check_keys(t, {"betti"}, where + ".topological");
        const Json& b = expect(t, "betti", where + ".topological");
        if (!b.is_array() || b.size() != 3)
            fail(where + ".topological.betti", "expected [B0, B1, B2]");
        TopologicalPrior prior;
        for (int i = 0; i < 3; ++i)
            prior.betti[i] = index_of(b[i], where + ".topological.betti");
        spec.topological = prior;
    }

    if (spec.geometric.empty() && !out.auto_target && !spec.topological)
        fail(where, "constraint needs a geometric target and/or a topological prior");

    spec.weight_geo = number_or(j, "weight_geo", 1.0, where);
    spec.weight_topo = number_or(j, "weight_topo", 1.0, where);
    if (spec.weight_geo < 0 || spec.weight_topo < 0)
        fail(where, "constraint weights must be nonnegative");

    if (spec.temperature == 0.0)
        spec.temperature = spec.topological ? kTopoTemperature : 1.0;
    if (spec.temperature < 0) fail(where + ".temperature", "temperature must be positive");

    if (j.contains("reference")) out.reference = j["reference"].get<std::string>();
    const bool needs_reference =
        spec.domain.kind != DomainSource::Kind::Explicit &&
        spec.domain.kind != DomainSource::Kind::Global && !spec.domain.dynamic;
    if (needs_reference && out.reference.empty())
        fail(where, std::string("static '") + domain_kind_name(spec.domain.kind) +
                        "' domains need a 'reference' volume (or set domain.dynamic)");
    if (out.auto_target && out.reference.empty())
        fail(where, "auto_target needs a 'reference' volume");
    return out;
}

}  // namespace

Json constraint_to_json(const ConstraintSpec& spec, const std::string& reference) {
    Json j;
    Json sel = Json::array();
    for (bool b : spec.selection) sel.push_back(b);
    j["selection"] = sel;
    j["domain"] = domain_to_json(spec.domain);
    j["grid"] = Json::array({spec.grid.a, spec.grid.b, spec.grid.c});
    j["mode"] = mode_name(spec.mode);
    j["temperature"] = spec.temperature;
    if (!spec.geometric.empty()) {
        Json g = Json::array();
        for (const GeometricTarget& t : spec.geometric) g.push_back(target_to_json(t));
        j["geometric"] = g;
    }
    if (spec.topological) {
        Json t;
        t["betti"] = Json::array({spec.topological->betti[0], spec.topological->betti[1],
                                  spec.topological->betti[2]});
        j["topological"] = t;
    }
    j["weight_geo"] = spec.weight_geo;
    j["weight_topo"] = spec.weight_topo;
    if (!reference.empty()) j["reference"] = reference;
    return j;
}

Json sampler_config_to_json(const SamplerConfig& c) {
    Json j;
    j["steps"] = c.steps;
    j["sigma_max"] = c.sigma_max;
    j["sigma_min"] = c.sigma_min;
    j["rho"] = c.rho;
    j["churn"] = c.churn;
    j["guidance"] = c.guidance == GuidanceMode::FullVjp ? "vjp" : "stop_grad";
    j["domain_refresh_every"] = c.domain_refresh_every;
    j["domain_freeze_sigma"] = c.domain_freeze_sigma;
    return j;
}

namespace {

SamplerConfig sampler_from_json(const Json& j, const std::string& where) {
    check_keys(j,
               {"steps", "sigma_max", "sigma_min", "rho", "churn", "guidance",
                "domain_refresh_every", "domain_freeze_sigma"},
               where);
    SamplerConfig c;
    if (j.contains("steps")) c.steps = index_of(j["steps"], where + ".steps");
    c.sigma_max = number_or(j, "sigma_max", c.sigma_max, where);
    c.sigma_min = number_or(j, "sigma_min", c.sigma_min, where);
    c.rho = number_or(j, "rho", c.rho, where);
    c.churn = number_or(j, "churn", c.churn, where);
    if (j.contains("guidance")) {
        const std::string g = j["guidance"].get<std::string>();
        if (g == "vjp")
            c.guidance = GuidanceMode::FullVjp;
        else if (g == "stop_grad")
            c.guidance = GuidanceMode::StopGradient;
        else
            fail(where + ".guidance", "expected 'vjp' or 'stop_grad'");
    }
    if (j.contains("domain_refresh_every"))
        c.domain_refresh_every = index_of(j["domain_refresh_every"], where);
    c.domain_freeze_sigma = number_or(j, "domain_freeze_sigma", c.domain_freeze_sigma, where);
    if (c.steps < 2) fail(where + ".steps", "need at least two steps");
    if (!(c.sigma_min > 0) || !(c.sigma_max > c.sigma_min))
        fail(where, "need 0 < sigma_min < sigma_max");
    if (!(c.rho > 0)) fail(where + ".rho", "rho must be positive");
    if (c.churn < 0) fail(where + ".churn", "churn must be nonnegative");
    if (c.domain_refresh_every == 0) fail(where + ".domain_refresh_every", "must be positive");
    return c;
}

}  // namespace

TaskConfig task_config_from_json(const Json& j, const LoadOptions& opts) {
    const std::string where = "task";
    check_keys(j,
               {"schema_version", "dataset", "latent_factor", "sampler", "seeds", "output",
                "constraints", "evaluation", "note"},
               where);
    const Json& version = expect(j, "schema_version", where);
    if (index_of(version, where + ".schema_version") != 1)
        fail(where + ".schema_version", "this build reads schema_version 1");

    TaskConfig out;
    out.raw = j;
    if (j.contains("dataset")) out.dataset_dir = j["dataset"].get<std::string>();
    if (opts.require_dataset && out.dataset_dir.empty())
        fail(where, "missing required field 'dataset'");

    if (j.contains("latent_factor"))
        out.latent_factor =
            static_cast<std::uint32_t>(index_of(j["latent_factor"], where + ".latent_factor"));
    if (out.latent_factor == 0) fail(where + ".latent_factor", "must be positive");

    if (j.contains("sampler")) out.sampler = sampler_from_json(j["sampler"], where + ".sampler");

    if (j.contains("seeds")) {
        check_keys(j["seeds"], {"count", "base"}, where + ".seeds");
        out.num_seeds = index_of(j["seeds"].value("count", Json(1)), where + ".seeds.count");
        out.sampler.seed = j["seeds"].value("base", Json(0)).get<std::uint64_t>();
        if (out.num_seeds == 0) fail(where + ".seeds.count", "must be positive");
    }

    if (j.contains("output")) {
        check_keys(j["output"], {"dir", "probabilities", "renders", "wireframes"},
                   where + ".output");
        if (j["output"].contains("dir")) out.out_dir = j["output"]["dir"].get<std::string>();
        out.write_probabilities = boolean_or(j["output"], "probabilities", false, where);
        out.write_renders = boolean_or(j["output"], "renders", false, where);
        out.write_wireframes = boolean_or(j["output"], "wireframes", false, where);
    }

    if (j.contains("evaluation")) {
        check_keys(j["evaluation"], {"nna_points"}, where + ".evaluation");
        if (j["evaluation"].contains("nna_points"))
            out.nna_points = index_of(j["evaluation"]["nna_points"], where + ".evaluation");
    }

    if (j.contains("constraints")) {
        const Json& cs = j["constraints"];
        if (!cs.is_array()) fail(where + ".constraints", "expected an array");
        for (std::size_t i = 0; i < cs.size(); ++i)
            out.constraints.push_back(
                constraint_from_json(cs[i], "constraints[" + std::to_string(i) + "]"));
    }
    if (opts.require_constraints && out.constraints.empty())
        fail(where, "this command needs at least one constraint");
    return out;
}

TaskConfig load_task_config(const std::string& path, const LoadOptions& opts) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open config file " + path);
    Json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ValidationError(std::string("config parse error in ") + path + ": " + e.what());
    }
    return task_config_from_json(j, opts);
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace {

Json geometric_weights_entry(double l0, double l1, double l2, double mass_threshold) {
    Json g;
    g["mass"] = 0.0;
    g["centroid"] = Json::array({0.0, 0.0, 0.0});
    g["weights"] = Json::array({l0, l1, l2});
    g["mass_threshold"] = mass_threshold;
    return g;
}

}  // namespace

Json preset_json(const std::string& name) {
    Json j;
    j["schema_version"] = 1;
    j["dataset"] = "";
    j["latent_factor"] = 2;
    Json sampler;
    sampler["steps"] = 100;
    j["sampler"] = sampler;
    j["seeds"] = {{"count", 4}, {"base", 0}};
    j["output"] = {{"dir", ""}};

    Json c;
    if (name == "right-ventricle-like") {
        j["note"] = "volumetric cartesian control of a single blob (pair with family 'blobs')";
        c["selection"] = Json::array({false, true});
        c["domain"] = {{"type", "cartesian"}};
        c["grid"] = Json::array({32, 32, 32});
        c["mode"] = "l_local";
        c["geometric"] = geometric_weights_entry(1e7, 1e5, 1e4, 1e-5);
        c["auto_target"] = true;
        c["reference"] = "dataset:0";
    } else if (name == "interface") {
        j["note"] = "planar control at the contact of two structures (family 'pair')";
        c["selection"] = Json::array({false, true, false});
        c["domain"] = {{"type", "interface"},
                       {"selection_b", Json::array({false, false, true})},
                       {"k_dil", 5}};
        c["grid"] = Json::array({4, 32, 32});
        c["mode"] = "l_local";
        c["geometric"] = geometric_weights_entry(1e9, 1e6, 1e4, 1e-4);
        c["auto_target"] = true;
        c["reference"] = "dataset:0";
    } else if (name == "curvilinear") {
        j["note"] = "five cross-sectional planes along a tube centerline (family 'tubes')";
        c["selection"] = Json::array({false, true});
        c["domain"] = {{"type", "curvilinear"}};
        c["grid"] = Json::array({1, 32, 32});
        c["mode"] = "l_local";
        c["geometric"] = geometric_weights_entry(1e9, 1e5, 1e3, 1e-6);
        c["auto_target"] = true;
        c["reference"] = "dataset:0";
    } else if (name == "spherical-wall") {
        j["note"] = "radial ray domains over a shell wall (family 'shell')";
        c["selection"] = Json::array({false, true, false});
        c["domain"] = {{"type", "spherical"}, {"n_rays", 4}, {"n_query", 64}};
        c["grid"] = Json::array({4, 4, 16});
        c["mode"] = "l_local";
        c["geometric"] = geometric_weights_entry(1e9, 1e5, 1e4, 1e-6);
        c["auto_target"] = true;
        c["reference"] = "dataset:0";
    } else if (name == "atria-separation-like") {
        j["note"] = "two components enforced on one channel (family 'twoblob')";
        c["selection"] = Json::array({false, true});
        c["domain"] = {{"type", "global"}};
        c["grid"] = Json::array({24, 24, 24});
        c["mode"] = "l_coarse";
        c["temperature"] = 4.0;
        c["topological"] = {{"betti", Json::array({2, 0, 0})}};
        c["weight_topo"] = 5.0;
    } else if (name == "branch-connectivity-like") {
        j["note"] = "single connected component on the tube channel (family 'tubes')";
        c["selection"] = Json::array({false, true});
        c["domain"] = {{"type", "global"}};
        c["grid"] = Json::array({24, 24, 24});
        c["mode"] = "l_coarse";
        c["temperature"] = 4.0;
        c["topological"] = {{"betti", Json::array({1, 0, 0})}};
        c["weight_topo"] = 1.0;
    } else if (name == "vertebrae-like") {
        j["note"] = "one component with one loop (family 'tori')";
        c["selection"] = Json::array({false, true});
        c["domain"] = {{"type", "global"}};
        c["grid"] = Json::array({24, 24, 24});
        c["mode"] = "l_coarse";
        c["temperature"] = 4.0;
        c["topological"] = {{"betti", Json::array({1, 1, 0})}};
        c["weight_topo"] = 5.0;
    } else if (name == "calcium-count-like") {
        j["note"] = "two calcium components inside the wall (family 'annulus')";
        c["selection"] = Json::array({false, false, false, true});
        c["domain"] = {{"type", "global"}};
        c["grid"] = Json::array({24, 24, 24});
        c["mode"] = "l_coarse";
        c["temperature"] = 4.0;
        c["topological"] = {{"betti", Json::array({2, 0, 0})}};
        c["weight_topo"] = 50.0;
    } else {
        throw ValidationError("unknown preset '" + name + "'");
    }
    j["constraints"] = Json::array({c});
    return j;
}

std::vector<std::string> preset_names() {
    return {"right-ventricle-like",   "interface",        "curvilinear",
            "spherical-wall",         "atria-separation-like", "branch-connectivity-like",
            "vertebrae-like",         "calcium-count-like"};
}

TaskConfig preset_task(const std::string& name, const std::string& dataset_dir,
                       const std::string& out_dir) {
    Json j = preset_json(name);
    j["dataset"] = dataset_dir;
    j["output"]["dir"] = out_dir;
    return task_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Dataset persistence
// ---------------------------------------------------------------------------

namespace {

Json realized_part_to_json(const RealizedPart& rp) {
    Json j;
    j["part"] = part_to_json(rp.part);
    j["rotation"] = mat3_to(rp.rotation);
    if (rp.has_analytic_moments) {
        Json m;
        m["mass"] = rp.mass;
        m["centroid"] = vec3_to(rp.centroid);
        m["covariance"] = mat3_to(rp.covariance);
        j["analytic_moments"] = m;
    }
    return j;
}

RealizedPart realized_part_from_json(const Json& j, const std::string& where) {
    RealizedPart rp;
    rp.part = part_from_json(expect(j, "part", where), where + ".part");
    rp.rotation = mat3_from(expect(j, "rotation", where), where + ".rotation");
    if (j.contains("analytic_moments")) {
        rp.has_analytic_moments = true;
        const Json& m = j["analytic_moments"];
        rp.mass = number(expect(m, "mass", where), where);
        rp.centroid = vec3_from(expect(m, "centroid", where), where);
        rp.covariance = mat3_from(expect(m, "covariance", where), where);
    }
    return rp;
}

std::string sample_filename(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05zu.gvox", index);
    return buf;
}

}  // namespace

Dataset write_dataset(const PhantomSpec& spec, std::size_t count, const std::string& out_dir,
                      unsigned jobs) {
    fs::create_directories(out_dir);
    Dataset ds;
    ds.spec = spec;
    ds.dir = out_dir;
    ds.spec_hash = json_hash(phantom_spec_to_json(spec));
    ds.entries.resize(count);

    parallel_for(count, jobs, [&](std::size_t i) {
        const Phantom p = generate_phantom(spec, i);
        DatasetEntry e;
        e.file = sample_filename(i);
        e.variant_index = p.variant_index;
        e.parts = p.parts;
        gvox_write((fs::path(out_dir) / e.file).string(), p.map.argmax());
        ds.entries[i] = std::move(e);
    });

    Json manifest;
    manifest["schema_version"] = 1;
    manifest["spec"] = phantom_spec_to_json(spec);
    manifest["spec_hash"] = ds.spec_hash;
    manifest["count"] = count;
    Json samples = Json::array();
    for (const DatasetEntry& e : ds.entries) {
        Json s;
        s["file"] = e.file;
        s["variant"] = e.variant_index;
        Json parts = Json::array();
        for (const RealizedPart& rp : e.parts) parts.push_back(realized_part_to_json(rp));
        s["parts"] = parts;
        samples.push_back(s);
    }
    manifest["samples"] = samples;
    std::ofstream os(fs::path(out_dir) / "manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("write_dataset: cannot write manifest in " + out_dir);
    return ds;
}

Dataset open_dataset(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw ValidationError("dataset manifest not found: " + manifest_path.string());
    Json manifest;
    try {
        is >> manifest;
    } catch (const std::exception& e) {
        throw ValidationError("dataset manifest parse error: " + std::string(e.what()));
    }
    Dataset ds;
    ds.dir = dir;
    ds.spec = phantom_spec_from_json(expect(manifest, "spec", "manifest"));
    ds.spec_hash = manifest.value("spec_hash", "");
    for (const auto& s : expect(manifest, "samples", "manifest")) {
        DatasetEntry e;
        e.file = expect(s, "file", "manifest.samples").get<std::string>();
        e.variant_index = s.value("variant", 0);
        if (s.contains("parts"))
            for (const auto& p : s["parts"])
                e.parts.push_back(realized_part_from_json(p, "manifest.samples.parts"));
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

VoxelMap Dataset::load_map(std::size_t index) const {
    return gvox_read_map((fs::path(dir) / entries.at(index).file).string());
}

LabelGrid Dataset::load_labels(std::size_t index) const {
    GvoxPayload p = gvox_read((fs::path(dir) / entries.at(index).file).string());
    if (std::holds_alternative<LabelGrid>(p)) return std::get<LabelGrid>(std::move(p));
    return std::get<VoxelMap>(p).argmax();
}

// ---------------------------------------------------------------------------
// Task resolution
// ---------------------------------------------------------------------------

ResolvedTask resolve_task(const TaskConfig& config) {
    const Dataset ds = open_dataset(config.dataset_dir);
    if (ds.entries.empty()) throw ValidationError("dataset is empty: " + config.dataset_dir);

    ResolvedTask out;
    out.native_dims = ds.spec.dims;
    out.channels = ds.spec.channels;

    std::vector<VoxelMap> maps;
    maps.reserve(ds.entries.size());
    for (std::size_t i = 0; i < ds.entries.size(); ++i) maps.push_back(ds.load_map(i));
    for (const VoxelMap& m : maps) {
        if (!(m.dims() == out.native_dims) || m.channels() != out.channels)
            throw ValidationError("dataset volumes have inconsistent shapes");
        out.prior_latents.push_back(encode(m, config.latent_factor).logits);
    }

    const auto reference_map = [&](const std::string& ref,
                                   const std::string& where) -> VoxelMap {
        if (ref.rfind("dataset:", 0) == 0) {
            const std::size_t idx = std::stoul(ref.substr(8));
            if (idx >= ds.entries.size())
                throw ValidationError(where + ": reference index " + std::to_string(idx) +
                                      " beyond dataset size " +
                                      std::to_string(ds.entries.size()));
            return maps[idx];
        }
        if (!fs::exists(ref)) throw ValidationError(where + ": reference volume not found: " + ref);
        return gvox_read_map(ref);
    };

    for (std::size_t ci = 0; ci < config.constraints.size(); ++ci) {
        const std::string where = "constraints[" + std::to_string(ci) + "]";
        ConstraintSpec spec = config.constraints[ci].spec;
        if (spec.selection.size() != out.channels)
            throw ValidationError(where + ": selection has " +
                                  std::to_string(spec.selection.size()) + " entries, dataset has " +
                                  std::to_string(out.channels) + " channels");
        if (spec.domain.kind == DomainSource::Kind::Interface &&
            spec.domain.selection_b.size() != out.channels)
            throw ValidationError(where + ": selection_b length does not match channel count");

        const bool constructor_domain = spec.domain.kind != DomainSource::Kind::Explicit &&
                                        spec.domain.kind != DomainSource::Kind::Global;
        ResolvedDomains baked;
        if (constructor_domain && !spec.domain.dynamic) {
            const VoxelMap ref = reference_map(config.constraints[ci].reference, where);
            baked = resolve_domains(spec, ref);
            DomainSource explicit_source;
            explicit_source.kind = DomainSource::Kind::Explicit;
            for (const ControlDomain& d : baked.domains)
                explicit_source.affines.push_back(d.affine);
            explicit_source.affine_valid = baked.valid;
            spec.domain = explicit_source;
        }

        if (config.constraints[ci].auto_target) {
            // Measure per-domain targets on the reference, then set the mass
            // threshold from the task-average measured mass over the dataset.
            const VoxelMap ref = reference_map(config.constraints[ci].reference, where);
            const ResolvedDomains doms = resolve_domains(spec, ref);
            const GeometricTarget weights = spec.geometric.at(0);
            spec.geometric.clear();

            const VParse ref_parse = v_parse(ref, spec.selection, doms.domains);
            for (std::size_t k = 0; k < doms.domains.size(); ++k) {
                GeometricTarget t = weights;
                Substructure sub = ref_parse.subs[k];
                sub.valid = doms.valid[k];
                if (sub.valid) {
                    const GeometricMoments g = measure_global(sub);
                    t.mass = g.mass;
                    if (g.defined) {
                        t.centroid = g.centroid;
                        t.covariance_n = decompose(g.covariance).normalized;
                    }
                }
                spec.geometric.push_back(t);
            }

            double mass_acc = 0.0;
            std::size_t mass_n = 0;
            for (const VoxelMap& m : maps) {
                const VParse parse = v_parse(m, spec.selection, doms.domains);
                for (std::size_t k = 0; k < doms.domains.size(); ++k) {
                    if (!doms.valid[k]) continue;
                    mass_acc += measure_global(parse.subs[k]).mass;
                    ++mass_n;
                }
            }
            const double threshold =
                mass_n == 0 ? 0.0 : 0.1 * mass_acc / static_cast<double>(mass_n);
            for (GeometricTarget& t : spec.geometric)
                if (t.mass_threshold == 0.0) t.mass_threshold = threshold;
        }
        out.constraints.push_back(std::move(spec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Renders and wireframes
// ---------------------------------------------------------------------------

void write_slice_render(const LabelGrid& labels, int axis, const std::string& path) {
    static constexpr unsigned char palette[12][3] = {
        {20, 20, 20},   {230, 80, 80},   {80, 180, 90},  {90, 120, 230},
        {230, 190, 60}, {170, 90, 200},  {80, 200, 200}, {240, 140, 60},
        {150, 150, 150}, {120, 200, 120}, {200, 120, 160}, {120, 140, 90}};
    const Dim3 dims = labels.labels.dims();
    std::size_t w = 0, h = 0;
    if (axis == 0) {
        w = dims.w;
        h = dims.d;
    } else if (axis == 1) {
        w = dims.h;
        h = dims.d;
    } else {
        w = dims.h;
        h = dims.w;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_slice_render: cannot open " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t label;
            if (axis == 0)
                label = labels.labels.at(dims.h / 2, x, y);
            else if (axis == 1)
                label = labels.labels.at(x, dims.w / 2, y);
            else
                label = labels.labels.at(x, y, dims.d / 2);
            const auto& rgb = palette[label % 12];
            os.write(reinterpret_cast<const char*>(rgb), 3);
        }
}

Json domain_wireframes(const std::vector<ConstraintSpec>& constraints,
                       const std::vector<ResolvedDomains>& resolved) {
    Json out = Json::array();
    static constexpr int edges[12][2] = {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {4, 5}, {4, 6},
                                         {5, 7}, {6, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
    for (std::size_t ci = 0; ci < resolved.size(); ++ci) {
        for (std::size_t k = 0; k < resolved[ci].domains.size(); ++k) {
            const ControlDomain& d = resolved[ci].domains[k];
            Json entry;
            entry["constraint"] = ci;
            entry["domain"] = k;
            entry["valid"] = static_cast<bool>(resolved[ci].valid[k]);
            entry["affine"] = affine_to_json(d.affine);
            Json corners = Json::array();
            std::array<Vec3, 8> corner_pts;
            const Mat3 lin = d.affine.linear();
            for (int c = 0; c < 8; ++c) {
                const Vec3 unit(c & 1 ? 0.5 : -0.5, c & 2 ? 0.5 : -0.5, c & 4 ? 0.5 : -0.5);
                corner_pts[c] = lin * unit + d.affine.translation;
                corners.push_back(vec3_to(corner_pts[c]));
            }
            entry["corners"] = corners;
            Json polylines = Json::array();
            for (const auto& e : edges)
                polylines.push_back(
                    Json::array({vec3_to(corner_pts[e[0]]), vec3_to(corner_pts[e[1]])}));
            entry["edges"] = polylines;
            out.push_back(entry);
        }
        (void)constraints;
    }
    return out;
}

}  // namespace geotopo
