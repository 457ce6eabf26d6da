#pragma once

#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "geotopo/sampler.hpp"
#include "geotopo/surrogate.hpp"

// Single configuration surface for the CLI: one JSON format (schema_version 1)
// shared by every subcommand, with strict parsing — unknown keys are errors.

namespace geotopo {

using Json = nlohmann::ordered_json;

/// Config errors; the CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
  public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// --------------------------------------------------------------------------
// Serialization round trips
// --------------------------------------------------------------------------

Json affine_to_json(const AffineParams& a);
AffineParams affine_from_json(const Json& j, const std::string& where);

Json phantom_spec_to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const Json& j);

Json constraint_to_json(const ConstraintSpec& spec, const std::string& reference);
Json sampler_config_to_json(const SamplerConfig& c);

/// FNV-1a over the canonical dump; stable across runs.
std::string json_hash(const Json& j);

// --------------------------------------------------------------------------
// Task configuration
// --------------------------------------------------------------------------

struct ConstraintConfig {
    ConstraintSpec spec;
    std::string reference;  // volume for static constructor domains ("dataset:<i>" or a path)
    bool auto_target = false;  // measure the geometric target from the reference
};

struct TaskConfig {
    std::string dataset_dir;
    std::uint32_t latent_factor = 2;
    SamplerConfig sampler;
    std::vector<ConstraintConfig> constraints;
    std::size_t num_seeds = 1;
    std::string out_dir;
    bool write_probabilities = false;
    bool write_renders = false;
    bool write_wireframes = false;
    std::size_t nna_points = 64;
    Json raw;  // canonical parsed form, for hashing
};

struct LoadOptions {
    bool require_dataset = true;
    bool require_constraints = false;
};

TaskConfig task_config_from_json(const Json& j, const LoadOptions& opts = {});
TaskConfig load_task_config(const std::string& path, const LoadOptions& opts = {});

/// Bundled task presets carrying the published per-task weight defaults.
TaskConfig preset_task(const std::string& name, const std::string& dataset_dir,
                       const std::string& out_dir);
std::vector<std::string> preset_names();
Json preset_json(const std::string& name);

// --------------------------------------------------------------------------
// Dataset persistence
// --------------------------------------------------------------------------

struct DatasetEntry {
    std::string file;
    std::size_t variant_index = 0;
    std::vector<RealizedPart> parts;
};

struct Dataset {
    PhantomSpec spec;
    std::string spec_hash;
    std::vector<DatasetEntry> entries;
    std::string dir;

    VoxelMap load_map(std::size_t index) const;
    LabelGrid load_labels(std::size_t index) const;
};

/// Writes count GVOX label volumes plus manifest.json (spec, hash, analytic
/// ground truth per sample). Deterministic per (spec.seed, index).
Dataset write_dataset(const PhantomSpec& spec, std::size_t count, const std::string& out_dir,
                      unsigned jobs = 1);
Dataset open_dataset(const std::string& dir);

// --------------------------------------------------------------------------
// Task execution helpers
// --------------------------------------------------------------------------

struct ResolvedTask {
    std::vector<VoxelMap> prior_latents;  // encoded dataset
    std::vector<ConstraintSpec> constraints;  // static constructors baked to Explicit
    Dim3 native_dims;
    std::uint32_t channels = 0;
};

/// Loads the prior dataset, encodes it, resolves static constructor domains
/// against their references, and fills auto targets (mass threshold = 0.1 x
/// task-average measured mass over the dataset).
ResolvedTask resolve_task(const TaskConfig& config);

/// Writes a P6 PPM of the mid slice along the given axis with a fixed
/// per-class palette.
void write_slice_render(const LabelGrid& labels, int axis, const std::string& path);

/// Box wireframes (12 edges per domain) for every constraint, as JSON.
Json domain_wireframes(const std::vector<ConstraintSpec>& constraints,
                       const std::vector<ResolvedDomains>& resolved);

}  // namespace geotopo
