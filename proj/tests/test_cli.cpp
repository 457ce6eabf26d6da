// End-to-end coverage of the CLI surface: runs the built binary against
// temporary datasets and checks artifacts, determinism, and exit codes.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geotopo/gvox.hpp"
#include "geotopo/task.hpp"

namespace fs = std::filesystem;
using namespace geotopo;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(GEOTOPO_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("gen-dataset is deterministic and honors count") {
    TempDir tmp("geotopo_cli_gen");
    const std::string a = tmp.str() + "/a";
    const std::string b = tmp.str() + "/b";
    REQUIRE(run_cli("gen-dataset --family twoblob --count 6 --seed 3 --out " + a) == 0);
    REQUIRE(run_cli("gen-dataset --family twoblob --count 6 --seed 3 --out " + b) == 0);

    const Dataset ds = open_dataset(a);
    CHECK(ds.entries.size() == 6);
    for (const DatasetEntry& e : ds.entries)
        CHECK(read_file(fs::path(a) / e.file) == read_file(fs::path(b) / e.file));

    SUBCASE("count 0 gives an empty manifest and success") {
        const std::string c = tmp.str() + "/c";
        REQUIRE(run_cli("gen-dataset --family blobs --count 0 --out " + c) == 0);
        CHECK(open_dataset(c).entries.empty());
    }
}

TEST_CASE("sample produces bit-identical reruns") {
    TempDir tmp("geotopo_cli_sample");
    const std::string ds = tmp.str() + "/ds";
    REQUIRE(run_cli("gen-dataset --family blobs --count 8 --seed 2 --out " + ds) == 0);

    // Small config: 12 steps, 2 seeds, geometric preset weights.
    Json cfg = preset_json("right-ventricle-like");
    cfg["dataset"] = ds;
    cfg["sampler"]["steps"] = 12;
    cfg["seeds"] = {{"count", 2}, {"base", 0}};
    cfg["output"] = {{"dir", tmp.str() + "/r1"}};
    {
        std::ofstream os(tmp.path / "task.json");
        os << cfg.dump();
    }
    REQUIRE(run_cli("sample --config " + tmp.str() + "/task.json") == 0);
    REQUIRE(run_cli("sample --config " + tmp.str() + "/task.json --out " + tmp.str() + "/r2") == 0);

    for (const char* f : {"sample_00000.gvox", "sample_00001.gvox", "loss_00000.csv",
                          "loss_00001.csv"}) {
        CHECK(read_file(tmp.path / "r1" / f) == read_file(tmp.path / "r2" / f));
        CHECK(fs::file_size(tmp.path / "r1" / f) > 0);
    }
}

TEST_CASE("every bundled preset runs to completion on its family") {
    TempDir tmp("geotopo_cli_presets");
    const std::pair<const char*, const char*> pairs[] = {
        {"right-ventricle-like", "blobs"}, {"interface", "pair"},
        {"curvilinear", "tubes"},          {"spherical-wall", "shell"},
        {"atria-separation-like", "twoblob"}, {"branch-connectivity-like", "tubes"},
        {"vertebrae-like", "tori"},        {"calcium-count-like", "annulus"}};
    for (const auto& [preset, family] : pairs) {
        CAPTURE(preset);
        const std::string ds = tmp.str() + "/" + family;
        if (!fs::exists(ds))
            REQUIRE(run_cli(std::string("gen-dataset --family ") + family +
                            " --count 6 --seed 1 --out " + ds) == 0);
        const std::string out = tmp.str() + "/out_" + preset;
        // Trimmed step count keeps the full preset matrix quick.
        Json cfg = preset_json(preset);
        cfg["dataset"] = ds;
        cfg["sampler"]["steps"] = 10;
        cfg["seeds"] = {{"count", 1}, {"base", 0}};
        cfg["output"] = {{"dir", out}};
        const std::string cfg_path = tmp.str() + "/task_" + preset + ".json";
        {
            std::ofstream os(cfg_path);
            os << cfg.dump();
        }
        REQUIRE(run_cli("sample --config " + cfg_path) == 0);
        const GvoxPayload p = gvox_read(out + "/sample_00000.gvox");
        REQUIRE(std::holds_alternative<LabelGrid>(p));
        for (std::uint8_t v : std::get<LabelGrid>(p).labels.data())
            REQUIRE(v < open_dataset(ds).spec.channels);
    }
}

TEST_CASE("measure and evaluate produce stable reports") {
    TempDir tmp("geotopo_cli_measure");
    const std::string ds = tmp.str() + "/ds";
    REQUIRE(run_cli("gen-dataset --family blobs --count 8 --seed 9 --out " + ds) == 0);

    Json cfg = preset_json("right-ventricle-like");
    cfg["dataset"] = ds;
    cfg["sampler"]["steps"] = 10;
    cfg["seeds"] = {{"count", 3}, {"base", 0}};
    cfg["output"] = {{"dir", tmp.str() + "/out"}};
    const std::string cfg_path = tmp.str() + "/task.json";
    {
        std::ofstream os(cfg_path);
        os << cfg.dump();
    }
    REQUIRE(run_cli("sample --config " + cfg_path) == 0);

    REQUIRE(run_cli("measure --volumes " + tmp.str() + "/out --config " + cfg_path + " --out " +
                    tmp.str() + "/meas.json") == 0);
    Json meas;
    {
        std::ifstream is(tmp.path / "meas.json");
        is >> meas;
    }
    CHECK(meas["failed"] == 0);
    REQUIRE(meas["volumes"].size() == 3);
    const Json& c0 = meas["volumes"][0]["constraints"][0];
    CHECK(c0.contains("betti"));
    CHECK(c0.contains("fidelity"));
    CHECK(c0["fidelity"].contains("mass_scaled"));

    REQUIRE(run_cli("evaluate --real " + ds + " --synth " + tmp.str() + "/out --config " +
                    cfg_path + " --points 16 --out " + tmp.str() + "/eval.json") == 0);
    Json eval;
    {
        std::ifstream is(tmp.path / "eval.json");
        is >> eval;
    }
    // Schema stability: these keys are the report contract.
    for (const char* key : {"schema_version", "task", "real_count", "synth_count", "fmd",
                            "one_nna", "one_nna_per_tissue", "constraints"})
        CHECK(eval.contains(key));
    CHECK(eval["fmd"].get<double>() >= 0.0);
    const double nna = eval["one_nna"].get<double>();
    CHECK(nna >= 0.0);
    CHECK(nna <= 1.0);
}

TEST_CASE("domains exports wireframes") {
    TempDir tmp("geotopo_cli_domains");
    const std::string ds = tmp.str() + "/ds";
    REQUIRE(run_cli("gen-dataset --family shell --count 3 --seed 4 --out " + ds) == 0);
    Json cfg = preset_json("spherical-wall");
    cfg["dataset"] = ds;
    const std::string cfg_path = tmp.str() + "/task.json";
    {
        std::ofstream os(cfg_path);
        os << cfg.dump();
    }
    REQUIRE(run_cli("domains --config " + cfg_path + " --out " + tmp.str() + "/wf.json") == 0);
    Json wf;
    {
        std::ifstream is(tmp.path / "wf.json");
        is >> wf;
    }
    REQUIRE(wf.is_array());
    REQUIRE(wf.size() >= 1);
    CHECK(wf[0]["edges"].size() == 12);
    CHECK(wf[0].contains("affine"));
}

TEST_CASE("bench-parsing reports a normalized table") {
    TempDir tmp("geotopo_cli_bench");
    const std::string ds = tmp.str() + "/ds";
    REQUIRE(run_cli("gen-dataset --family blobs --count 6 --seed 5 --out " + ds) == 0);
    Json cfg = preset_json("right-ventricle-like");
    cfg["dataset"] = ds;
    const std::string cfg_path = tmp.str() + "/task.json";
    {
        std::ofstream os(cfg_path);
        os << cfg.dump();
    }
    REQUIRE(run_cli("bench-parsing --config " + cfg_path +
                    " --resolutions 16 --steps 5 --seeds 1 --out " + tmp.str() + "/bench.json") ==
            0);
    Json bench;
    {
        std::ifstream is(tmp.path / "bench.json");
        is >> bench;
    }
    REQUIRE(bench["table"].size() == 2);  // v_full + l_16
    bool saw_baseline = false;
    for (const auto& row : bench["table"])
        saw_baseline = saw_baseline || row["speed_normalized"].get<double>() == 1.0;
    CHECK(saw_baseline);
    for (const auto& row : bench["table"]) CHECK(row.contains("mass_fidelity"));
}

TEST_CASE("malformed configs are rejected with exit code 2") {
    const fs::path corpus = fs::path(GEOTOPO_TEST_DATA) / "bad_configs";
    std::size_t checked = 0;
    for (const auto& entry : fs::directory_iterator(corpus)) {
        if (entry.path().extension() != ".json") continue;
        CAPTURE(entry.path().filename().string());
        const int rc = run_cli("sample --config " + entry.path().string());
        CHECK(rc == 2);
        ++checked;

        // The message must say something actionable (non-empty stderr).
        const std::string cmd = std::string(GEOTOPO_CLI_PATH) + " sample --config " +
                                entry.path().string() + " 2>&1 >/dev/null";
        FILE* pipe = popen(cmd.c_str(), "r");
        REQUIRE(pipe != nullptr);
        char buf[512] = {};
        const size_t n = fread(buf, 1, sizeof(buf) - 1, pipe);
        pclose(pipe);
        CHECK(n > 10);
        CHECK(std::string(buf).find("validation error") != std::string::npos);
    }
    CHECK(checked >= 10);
}

TEST_CASE("config round trip keeps affine parameters bit-exact") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss;
    for (int trial = 0; trial < 25; ++trial) {
        Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
        q.normalize();
        const AffineParams a(q.toRotationMatrix(),
                             Vec3(0.1 + std::abs(gauss(rng)), 0.1 + std::abs(gauss(rng)),
                                  0.1 + std::abs(gauss(rng))),
                             Vec3(gauss(rng), gauss(rng), gauss(rng)) * 0.2);
        // Through text, as the CLI would write and read it.
        const std::string text = affine_to_json(a).dump();
        const AffineParams back = affine_from_json(Json::parse(text), "roundtrip");
        CHECK(back.rotation == a.rotation);
        CHECK(back.scale == a.scale);
        CHECK(back.translation == a.translation);
    }
}

TEST_CASE("exit codes distinguish validation from runtime failures") {
    TempDir tmp("geotopo_cli_exit");
    // Unknown subcommand / missing required flags -> 2.
    CHECK(run_cli("definitely-not-a-command") == 2);
    CHECK(run_cli("gen-dataset") == 2);
    CHECK(run_cli("gen-dataset --family nonesuch --out " + tmp.str() + "/x") == 2);
    // Valid config pointing at a missing dataset directory -> 2 (preflight).
    Json cfg = preset_json("right-ventricle-like");
    cfg["dataset"] = tmp.str() + "/missing";
    const std::string cfg_path = tmp.str() + "/task.json";
    {
        std::ofstream os(cfg_path);
        os << cfg.dump();
    }
    CHECK(run_cli("sample --config " + cfg_path) == 2);
}
