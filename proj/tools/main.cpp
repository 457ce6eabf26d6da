// geotopo CLI: dataset generation, guided sampling, measurement, evaluation,
// parsing benchmarks, and domain export over GVOX volumes.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>

#include "geotopo/gvox.hpp"
#include "geotopo/metrics.hpp"
#include "geotopo/parallel.hpp"
#include "geotopo/sampler.hpp"
#include "geotopo/task.hpp"

namespace fs = std::filesystem;
using namespace geotopo;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

void write_json_file(const std::string& path, const Json& j) {
    if (const fs::path parent = fs::path(path).parent_path(); !parent.empty())
        fs::create_directories(parent);
    std::ofstream os(path);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("cannot write " + path);
}

std::vector<std::string> list_gvox(const std::string& dir) {
    std::vector<std::string> files;
    if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".gvox") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

std::string seed_tag(std::uint64_t seed) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05llu", static_cast<unsigned long long>(seed));
    return buf;
}

// ---------------------------------------------------------------------------
// gen-dataset
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string family;
    std::string spec_file;
    std::size_t count = 16;
    std::uint64_t seed = 0;
    std::string out;
    unsigned jobs = default_jobs();
};

int cmd_gen_dataset(const GenArgs& args) {
    PhantomSpec spec;
    if (!args.spec_file.empty()) {
        std::ifstream is(args.spec_file);
        if (!is) throw ValidationError("cannot open spec file " + args.spec_file);
        Json j;
        try {
            is >> j;
        } catch (const std::exception& e) {
            throw ValidationError("spec parse error: " + std::string(e.what()));
        }
        spec = phantom_spec_from_json(j);
        spec.seed = args.seed;
    } else if (!args.family.empty()) {
        try {
            spec = phantom_family(args.family, args.seed);
        } catch (const std::invalid_argument& e) {
            throw ValidationError(e.what());
        }
    } else {
        throw ValidationError("gen-dataset needs --family or --spec");
    }

    const Dataset ds = write_dataset(spec, args.count, args.out, args.jobs);
    std::cout << "wrote " << ds.entries.size() << " volumes to " << args.out << " (spec "
              << ds.spec_hash << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string config;
    std::string preset;
    std::string dataset;
    std::string out;
    std::string dump_preset;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t seeds = 0;
    unsigned jobs = default_jobs();
};

int cmd_sample(const SampleArgs& args) {
    if (!args.dump_preset.empty()) {
        std::cout << preset_json(args.dump_preset).dump(2) << "\n";
        return 0;
    }

    TaskConfig config;
    if (!args.preset.empty()) {
        if (args.dataset.empty())
            throw ValidationError("--preset needs --dataset to point at a generated family");
        config = preset_task(args.preset, args.dataset, args.out.empty() ? "out" : args.out);
    } else if (!args.config.empty()) {
        config = load_task_config(args.config);
    } else {
        throw ValidationError("sample needs --config or --preset");
    }
    if (!args.out.empty()) config.out_dir = args.out;
    if (config.out_dir.empty()) throw ValidationError("no output directory configured");
    if (args.seeds > 0) config.num_seeds = args.seeds;
    if (args.seed_set) config.sampler.seed = args.seed;

    const ResolvedTask task = resolve_task(config);
    fs::create_directories(config.out_dir);
    const std::string config_hash = json_hash(config.raw);

    if (config.write_wireframes) {
        // Static view of the domains against the first dataset volume.
        const Dataset ds = open_dataset(config.dataset_dir);
        const VoxelMap state = ds.load_map(0);
        std::vector<ResolvedDomains> resolved;
        for (const ConstraintSpec& c : task.constraints)
            resolved.push_back(resolve_domains(c, state));
        write_json_file((fs::path(config.out_dir) / "domains.json").string(),
                        domain_wireframes(task.constraints, resolved));
    }

    std::mutex io_mutex;
    parallel_for(config.num_seeds, args.jobs, [&](std::size_t i) {
        SamplerConfig sc = config.sampler;
        sc.seed = config.sampler.seed + i;
        const auto t0 = std::chrono::steady_clock::now();
        const SampleResult result = sample(sc, task.prior_latents, config.latent_factor,
                                           task.native_dims, task.constraints);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        const std::string tag = seed_tag(sc.seed);
        gvox_write((fs::path(config.out_dir) / ("sample_" + tag + ".gvox")).string(),
                   result.labels);
        if (config.write_probabilities)
            gvox_write((fs::path(config.out_dir) / ("prob_" + tag + ".gvox")).string(),
                       result.probabilities);
        if (config.write_renders)
            for (int axis = 0; axis < 3; ++axis)
                write_slice_render(result.labels, axis,
                                   (fs::path(config.out_dir) /
                                    ("sample_" + tag + "_" + std::string(1, char('x' + axis)) +
                                     ".ppm"))
                                       .string());

        {
            std::ofstream os(fs::path(config.out_dir) / ("loss_" + tag + ".csv"));
            os << "step,sigma,loss,guidance_norm\n";
            char line[160];
            for (std::size_t s = 0; s < result.log.size(); ++s) {
                std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g\n", s,
                              result.log[s].sigma, result.log[s].loss,
                              result.log[s].guidance_norm);
                os << line;
            }
        }

        Json manifest;
        manifest["schema_version"] = 1;
        manifest["config_hash"] = config_hash;
        manifest["seed"] = sc.seed;
        manifest["schedule"] = sampler_config_to_json(sc);
        Json losses = Json::array();
        for (const StepLog& s : result.log) losses.push_back(s.loss);
        manifest["losses"] = losses;
        manifest["wall_time_s"] = wall;
        write_json_file((fs::path(config.out_dir) / ("run_" + tag + ".json")).string(), manifest);

        std::lock_guard<std::mutex> lock(io_mutex);
        std::cout << "seed " << sc.seed << ": " << result.log.size() << " steps, final loss "
                  << (result.log.empty() ? 0.0 : result.log.back().loss) << ", " << wall << " s\n";
    });
    return 0;
}

// ---------------------------------------------------------------------------
// measure
// ---------------------------------------------------------------------------

Json measure_volume(const VoxelMap& map, const std::vector<ConstraintSpec>& constraints) {
    Json out = Json::array();
    for (std::size_t ci = 0; ci < constraints.size(); ++ci) {
        const ConstraintSpec& spec = constraints[ci];
        Json entry;
        entry["constraint"] = ci;

        const auto betti = betti_numbers(binarize(boolean_subset(map, spec.selection)));
        entry["betti"] = Json::array({betti[0], betti[1], betti[2]});

        const ResolvedDomains doms = resolve_domains(spec, map);
        Json subs = Json::array();
        FidelityAccumulator fidelity;
        for (std::size_t k = 0; k < doms.domains.size(); ++k) {
            Json sj;
            sj["valid"] = static_cast<bool>(doms.valid[k]);
            const VParse parse = v_parse(map, spec.selection, {doms.domains[k]});
            const GeometricMoments g = measure_global(parse.subs[0]);
            sj["mass"] = g.mass;
            sj["defined"] = g.defined;
            if (g.defined) {
                sj["centroid"] = Json::array({g.centroid.x(), g.centroid.y(), g.centroid.z()});
                const MomentDecomposition dec = decompose(g.covariance);
                sj["size"] = dec.size;
                sj["shape"] = Json::array({dec.shape[0], dec.shape[1], dec.shape[2]});
                Json cov = Json::array();
                for (int r = 0; r < 3; ++r)
                    cov.push_back(Json::array(
                        {dec.normalized(r, 0), dec.normalized(r, 1), dec.normalized(r, 2)}));
                sj["covariance_n"] = cov;
            }
            if (!spec.geometric.empty() && doms.valid[k]) {
                const GeometricTarget& t = spec.geometric[std::min(k, spec.geometric.size() - 1)];
                fidelity.add(g, t);
            }
            subs.push_back(sj);
        }
        entry["substructures"] = subs;
        if (!spec.geometric.empty()) {
            const FidelityReport r = fidelity.report();
            Json f;
            f["mass"] = r.mass;
            f["centroid"] = r.centroid;
            f["covariance"] = r.covariance;
            f["mass_scaled"] = r.mass_scaled();
            f["centroid_scaled"] = r.centroid_scaled();
            f["covariance_scaled"] = r.covariance_scaled();
            entry["fidelity"] = f;
        }
        out.push_back(entry);
    }
    return out;
}

struct MeasureArgs {
    std::string volumes;
    std::string config;
    std::string out;
};

int cmd_measure(const MeasureArgs& args) {
    LoadOptions opts;
    opts.require_dataset = false;
    opts.require_constraints = true;
    TaskConfig config = load_task_config(args.config, opts);

    std::vector<ConstraintSpec> constraints;
    if (!config.dataset_dir.empty()) {
        constraints = resolve_task(config).constraints;
    } else {
        for (const ConstraintConfig& c : config.constraints) constraints.push_back(c.spec);
    }

    const std::vector<std::string> files = list_gvox(args.volumes);
    if (files.empty()) throw ValidationError("no .gvox volumes in " + args.volumes);

    Json report;
    report["schema_version"] = 1;
    Json entries = Json::array();
    std::size_t failures = 0;
    for (const std::string& f : files) {
        Json entry;
        entry["file"] = f;
        try {
            const VoxelMap map = gvox_read_map(f);
            entry["constraints"] = measure_volume(map, constraints);
        } catch (const std::exception& e) {
            entry["error"] = e.what();
            ++failures;
        }
        entries.push_back(entry);
    }
    report["volumes"] = entries;
    report["failed"] = failures;

    if (args.out.empty())
        std::cout << report.dump(2) << "\n";
    else
        write_json_file(args.out, report);
    if (failures == files.size()) throw std::runtime_error("every volume failed to measure");
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string real_dir;
    std::string synth_dir;
    std::string config;
    std::string out;
    std::size_t points = 0;
    std::uint64_t seed = 0;
};

int cmd_evaluate(const EvaluateArgs& args) {
    LoadOptions opts;
    opts.require_dataset = true;
    const TaskConfig config = load_task_config(args.config, opts);
    const ResolvedTask task = resolve_task(config);
    const std::size_t points = args.points > 0 ? args.points : config.nna_points;

    const auto load_all = [](const std::string& dir) {
        std::vector<LabelGrid> out;
        for (const std::string& f : list_gvox(dir)) {
            GvoxPayload p = gvox_read(f);
            if (std::holds_alternative<LabelGrid>(p))
                out.push_back(std::get<LabelGrid>(std::move(p)));
            else
                out.push_back(std::get<VoxelMap>(p).argmax());
        }
        if (out.size() < 2) throw ValidationError("need at least two volumes in " + dir);
        return out;
    };
    const std::vector<LabelGrid> real = load_all(args.real_dir);
    const std::vector<LabelGrid> synth = load_all(args.synth_dir);

    Json report;
    report["schema_version"] = 1;
    report["task"] = json_hash(config.raw);
    report["real_count"] = real.size();
    report["synth_count"] = synth.size();

    // Frechet morphological distance over per-tissue moment features.
    std::vector<std::vector<double>> real_features, synth_features;
    for (const LabelGrid& l : real)
        real_features.push_back(morph_features(one_hot_encode(l, task.channels)));
    for (const LabelGrid& l : synth)
        synth_features.push_back(morph_features(one_hot_encode(l, task.channels)));
    const MorphStats stats = morph_stats(real_features);
    report["fmd"] = fmd(real_features, synth_features, stats);

    // Per-tissue 1-NNA over farthest-point-sampled clouds.
    Json nna = Json::object();
    double nna_acc = 0;
    std::size_t nna_n = 0;
    std::vector<std::string> skipped;
    for (std::uint32_t c = 1; c < task.channels; ++c) {
        std::vector<std::vector<Vec3>> rc, sc;
        bool empty_somewhere = false;
        for (const LabelGrid& l : real) {
            const auto cloud = label_cloud(l, c);
            if (cloud.empty()) {
                empty_somewhere = true;
                break;
            }
            rc.push_back(farthest_point_sample(cloud, points, args.seed));
        }
        for (const LabelGrid& l : synth) {
            if (empty_somewhere) break;
            const auto cloud = label_cloud(l, c);
            if (cloud.empty()) {
                empty_somewhere = true;
                break;
            }
            sc.push_back(farthest_point_sample(cloud, points, args.seed));
        }
        if (empty_somewhere) {
            skipped.push_back("tissue " + std::to_string(c) + " empty in some volume");
            continue;
        }
        const double acc = one_nna(rc, sc);
        nna["tissue_" + std::to_string(c)] = acc;
        nna_acc += acc;
        ++nna_n;
    }
    report["one_nna_per_tissue"] = nna;
    report["one_nna"] = nna_n ? Json(nna_acc / static_cast<double>(nna_n)) : Json();
    if (!skipped.empty()) report["one_nna_notes"] = skipped;

    // Geometric fidelity and Betti precision against the task constraints.
    Json per_constraint = Json::array();
    for (std::size_t ci = 0; ci < task.constraints.size(); ++ci) {
        const ConstraintSpec& spec = task.constraints[ci];
        Json entry;
        entry["constraint"] = ci;
        if (!spec.geometric.empty()) {
            FidelityAccumulator acc;
            for (const LabelGrid& l : synth) {
                const VoxelMap map = one_hot_encode(l, task.channels);
                const ResolvedDomains doms = resolve_domains(spec, map);
                const VParse parse = v_parse(map, spec.selection, doms.domains);
                for (std::size_t k = 0; k < doms.domains.size(); ++k) {
                    if (!doms.valid[k]) continue;
                    acc.add(measure_global(parse.subs[k]),
                            spec.geometric[std::min(k, spec.geometric.size() - 1)]);
                }
            }
            const FidelityReport r = acc.report();
            Json f;
            f["mass"] = r.mass;
            f["centroid"] = r.centroid;
            f["covariance"] = r.covariance;
            f["mass_scaled"] = r.mass_scaled();
            f["centroid_scaled"] = r.centroid_scaled();
            f["covariance_scaled"] = r.covariance_scaled();
            f["count"] = r.count;
            entry["fidelity"] = f;
        }
        if (spec.topological) {
            const BettiPrecision bp =
                betti_precision(synth, spec.selection, spec.topological->betti);
            entry["betti_precision"] = Json::array({bp.b0, bp.b1, bp.b2});
        }
        per_constraint.push_back(entry);
    }
    report["constraints"] = per_constraint;

    if (args.out.empty())
        std::cout << report.dump(2) << "\n";
    else
        write_json_file(args.out, report);
    return 0;
}

// ---------------------------------------------------------------------------
// bench-parsing
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string config;
    std::string out;
    std::vector<std::size_t> resolutions{16, 32};
    std::size_t steps = 10;
    std::size_t seeds = 2;
};

int cmd_bench_parsing(const BenchArgs& args) {
    const TaskConfig config = load_task_config(args.config);
    const ResolvedTask task = resolve_task(config);

    struct Row {
        std::string label;
        double seconds = 0;
        double samples_per_s = 0;
        double mass_fidelity = 0;
    };
    std::vector<Row> rows;

    const auto run_variant = [&](const std::string& label,
                                 const std::vector<ConstraintSpec>& constraints) {
        SamplerConfig sc = config.sampler;
        sc.steps = args.steps;
        const auto t0 = std::chrono::steady_clock::now();
        FidelityAccumulator acc;
        for (std::size_t s = 0; s < args.seeds; ++s) {
            sc.seed = config.sampler.seed + s;
            const SampleResult r = sample(sc, task.prior_latents, config.latent_factor,
                                          task.native_dims, constraints);
            for (const ConstraintSpec& spec : constraints) {
                if (spec.geometric.empty()) continue;
                const ResolvedDomains doms = resolve_domains(spec, r.probabilities);
                const VParse parse = v_parse(r.probabilities, spec.selection, doms.domains);
                for (std::size_t k = 0; k < doms.domains.size(); ++k) {
                    if (!doms.valid[k]) continue;
                    acc.add(measure_global(parse.subs[k]),
                            spec.geometric[std::min(k, spec.geometric.size() - 1)]);
                }
            }
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        Row row;
        row.label = label;
        row.seconds = secs;
        row.samples_per_s = static_cast<double>(args.seeds) / std::max(secs, 1e-9);
        row.mass_fidelity = acc.report().mass;
        rows.push_back(row);
    };

    // Full-resolution V-parsing baseline.
    {
        std::vector<ConstraintSpec> v = task.constraints;
        for (ConstraintSpec& c : v) c.mode = ParsingMode::VFull;
        run_variant("v_full", v);
    }
    for (std::size_t res : args.resolutions) {
        std::vector<ConstraintSpec> l = task.constraints;
        for (ConstraintSpec& c : l) {
            c.mode = c.domain.kind == DomainSource::Kind::Global ? ParsingMode::LCoarse
                                                                 : ParsingMode::LLocal;
            c.grid = {res, res, res};
        }
        run_variant("l_" + std::to_string(res), l);
    }

    double slowest = 0;
    for (const Row& r : rows) slowest = std::max(slowest, r.seconds);

    Json report;
    report["schema_version"] = 1;
    report["steps"] = args.steps;
    report["seeds"] = args.seeds;
    Json table = Json::array();
    for (const Row& r : rows) {
        Json row;
        row["variant"] = r.label;
        row["seconds"] = r.seconds;
        row["samples_per_s"] = r.samples_per_s;
        row["speed_normalized"] = slowest / std::max(r.seconds, 1e-9);
        row["mass_fidelity"] = r.mass_fidelity;
        row["mass_fidelity_scaled"] = r.mass_fidelity * 1e5;
        table.push_back(row);
        std::printf("%-10s %8.3f s  x%6.2f  mass fidelity %.3e\n", r.label.c_str(), r.seconds,
                    slowest / std::max(r.seconds, 1e-9), r.mass_fidelity);
    }
    report["table"] = table;
    if (!args.out.empty()) write_json_file(args.out, report);
    return 0;
}

// ---------------------------------------------------------------------------
// domains
// ---------------------------------------------------------------------------

struct DomainsArgs {
    std::string config;
    std::string reference;
    std::string out;
};

int cmd_domains(const DomainsArgs& args) {
    const TaskConfig config = load_task_config(args.config);
    const ResolvedTask task = resolve_task(config);

    VoxelMap state;
    if (!args.reference.empty()) {
        state = gvox_read_map(args.reference);
    } else {
        const Dataset ds = open_dataset(config.dataset_dir);
        state = ds.load_map(0);
    }
    std::vector<ResolvedDomains> resolved;
    for (const ConstraintSpec& c : task.constraints)
        resolved.push_back(resolve_domains(c, state));
    const Json j = domain_wireframes(task.constraints, resolved);
    if (args.out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json_file(args.out, j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"localized geo-topological measurement and guided diffusion over voxel maps"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-dataset", "generate a phantom dataset");
    gen_cmd->add_option("--family", gen.family, "built-in phantom family");
    gen_cmd->add_option("--spec", gen.spec_file, "phantom spec JSON");
    gen_cmd->add_option("--count", gen.count, "number of volumes");
    gen_cmd->add_option("--seed", gen.seed, "family seed");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--jobs", gen.jobs, "worker threads");

    SampleArgs smp;
    auto* smp_cmd = app.add_subcommand("sample", "run guided sampling");
    smp_cmd->add_option("--config", smp.config, "task config JSON");
    smp_cmd->add_option("--preset", smp.preset, "bundled task preset");
    smp_cmd->add_option("--dataset", smp.dataset, "dataset directory (with --preset)");
    smp_cmd->add_option("--out", smp.out, "output directory override");
    smp_cmd->add_option("--seeds", smp.seeds, "number of seeds override");
    smp_cmd->add_option("--seed", smp.seed, "base seed override")
        ->each([&smp](const std::string&) { smp.seed_set = true; });
    smp_cmd->add_option("--jobs", smp.jobs, "worker threads");
    smp_cmd->add_option("--dump-preset", smp.dump_preset, "print a preset config and exit");

    MeasureArgs mea;
    auto* mea_cmd = app.add_subcommand("measure", "measure volumes against constraints");
    mea_cmd->add_option("--volumes", mea.volumes, "directory of .gvox volumes")->required();
    mea_cmd->add_option("--config", mea.config, "task config JSON")->required();
    mea_cmd->add_option("--out", mea.out, "report path (stdout if omitted)");

    EvaluateArgs eva;
    auto* eva_cmd =
        app.add_subcommand("evaluate", "compare synthetic volumes against a reference set");
    eva_cmd->add_option("--real", eva.real_dir, "reference volume directory")->required();
    eva_cmd->add_option("--synth", eva.synth_dir, "synthetic volume directory")->required();
    eva_cmd->add_option("--config", eva.config, "task config JSON")->required();
    eva_cmd->add_option("--out", eva.out, "report path (stdout if omitted)");
    eva_cmd->add_option("--points", eva.points, "farthest-point-sample count per cloud");
    eva_cmd->add_option("--seed", eva.seed, "FPS start seed");

    BenchArgs ben;
    auto* ben_cmd = app.add_subcommand("bench-parsing", "benchmark parsing strategies");
    ben_cmd->add_option("--config", ben.config, "task config JSON")->required();
    ben_cmd->add_option("--resolutions", ben.resolutions, "coarse grid resolutions");
    ben_cmd->add_option("--steps", ben.steps, "sampler steps per run");
    ben_cmd->add_option("--seeds", ben.seeds, "seeds per variant");
    ben_cmd->add_option("--out", ben.out, "report path");

    DomainsArgs dom;
    auto* dom_cmd = app.add_subcommand("domains", "export control-domain wireframes");
    dom_cmd->add_option("--config", dom.config, "task config JSON")->required();
    dom_cmd->add_option("--reference", dom.reference, "volume to resolve dynamic domains against");
    dom_cmd->add_option("--out", dom.out, "wireframe JSON path (stdout if omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_dataset(gen);
        if (smp_cmd->parsed()) return cmd_sample(smp);
        if (mea_cmd->parsed()) return cmd_measure(mea);
        if (eva_cmd->parsed()) return cmd_evaluate(eva);
        if (ben_cmd->parsed()) return cmd_bench_parsing(ben);
        if (dom_cmd->parsed()) return cmd_domains(dom);
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
