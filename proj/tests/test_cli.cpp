// Drives the installed binary end to end through std::system. The build
// exports the binary location via FREEMCG_CLI_PATH.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "freemcg/diffusion.hpp"
#include "freemcg/io.hpp"
#include "freemcg/models.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifdef _WIN32
#error "posix only"
#endif
#include <sys/wait.h>

using namespace freemcg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string cli() {
#ifdef FREEMCG_CLI_PATH
    return FREEMCG_CLI_PATH;
#else
    const char* p = std::getenv("FREEMCG_CLI_PATH");
    REQUIRE(p != nullptr);
    return p;
#endif
}

int run(const std::string& args, const fs::path& capture = {}) {
    std::string cmd = cli() + " " + args;
    cmd += capture.empty() ? " >/dev/null 2>&1"
                           : " >" + capture.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A fresh scratch directory stocked with a tiny two-class world: a linear
// model separating on the first coordinate and a matching two-blob prior.
struct Scratch {
    fs::path dir;

    explicit Scratch(const std::string& name) {
        dir = fs::temp_directory_path() / ("freemcg_cli_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir);

        // class 0 on the left half-plane, so the (-2, 0.1) input must cross
        // the boundary to reach class 1
        const LinearSoftmax model(Matrix{{-1.6, 0.0}, {1.6, 0.0}}, Vector::Zero(2));
        save_classifier(model, (dir / "model.json").string());

        PriorFile prior;
        GaussianMixturePrior gmm;
        gmm.weights = {0.5, 0.5};
        gmm.means = {Vector{{-2.0, 0.0}}, Vector{{2.0, 0.0}}};
        gmm.covs = {0.35 * Matrix::Identity(2, 2), 0.35 * Matrix::Identity(2, 2)};
        prior.prior = gmm;
        save_prior(prior, (dir / "prior.json").string());

        Eigen::ArrayXd x(2);
        x << -2.0, 0.1;
        write_array((dir / "input.f32").string(), x, {2});
    }

    ~Scratch() { fs::remove_all(dir); }

    std::string p(const std::string& name) const { return (dir / name).string(); }
    std::string io_flags() const {
        return "--input " + p("input.f32") + " --model " + p("model.json") + " --prior " +
               p("prior.json");
    }
};

}  // namespace

TEST_CASE("bare invocations and bogus subcommands fail with usage errors") {
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    CHECK(run("attribute --bogus-flag 1") == 1);
    CHECK(run("--version", fs::temp_directory_path() / "freemcg_version.txt") == 0);
}

TEST_CASE("attribute writes the map, sidecar, optional image, and manifest") {
    const Scratch s("attribute");
    const int rc = run("attribute " + s.io_flags() +
                       " --timesteps 100,300 --particles 10 --seed 3 --out " + s.p("map.f32") +
                       " --pgm " + s.p("map.pgm"));
    CHECK(rc == 0);

    const ArrayData map = read_array(s.p("map.f32"));
    CHECK(map.shape == std::vector<int>{2});
    CHECK(map.values.size() == 2);
    CHECK(map.values.minCoeff() >= 0.0);
    CHECK(fs::exists(s.p("map.pgm")));

    const json manifest = read_json_file(s.p("map.f32.manifest.json"));
    CHECK(manifest.at("config").at("seed") == 3);
    CHECK(manifest.at("config").at("particles") == 10);
    const json& outputs = manifest.at("outputs");
    CHECK(outputs.contains("map.f32"));
    CHECK(outputs.contains("map.f32.json"));
    CHECK(outputs.contains("map.pgm"));
    const std::string h = outputs.at("map.f32").get<std::string>();
    CHECK(h.rfind("fnv1a64:", 0) == 0);
}

TEST_CASE("command-line flags override config-file values") {
    const Scratch s("override");
    json cfg;
    cfg["seed"] = 3;
    cfg["particles"] = 12;
    cfg["timesteps"] = {100, 200};
    cfg["input"] = "input.f32";  // resolved against the config's directory
    cfg["model"] = "model.json";
    cfg["prior"] = "prior.json";
    cfg["out"] = "map.f32";
    write_json_file(s.p("run.json"), cfg);

    CHECK(run("attribute --config " + s.p("run.json") + " --seed 7") == 0);
    const json manifest = read_json_file(s.p("map.f32.manifest.json"));
    CHECK(manifest.at("config").at("seed") == 7);        // flag wins
    CHECK(manifest.at("config").at("particles") == 12);  // file fills the rest
}

TEST_CASE("unknown config keys are rejected by name") {
    const Scratch s("badkey");
    json cfg;
    cfg["sed"] = 1;  // typo for seed
    write_json_file(s.p("run.json"), cfg);
    const fs::path log = s.dir / "stderr.txt";
    CHECK(run("attribute --config " + s.p("run.json") + " " + s.io_flags() + " --out " +
                  s.p("map.f32"),
              log) == 1);
    CHECK(slurp(log).find("sed") != std::string::npos);
}

TEST_CASE("identical seeds produce byte-identical artifacts and manifests") {
    const Scratch a("det_a");
    const Scratch b("det_b");
    const std::string args =
        " --timesteps 100,300 --particles 10 --seed 11 --out ";
    CHECK(run("attribute " + a.io_flags() + args + a.p("map.f32")) == 0);
    CHECK(run("attribute " + b.io_flags() + args + b.p("map.f32")) == 0);
    CHECK(slurp(a.p("map.f32")) == slurp(b.p("map.f32")));
    CHECK(slurp(a.p("map.f32.manifest.json")) == slurp(b.p("map.f32.manifest.json")));

    // a different seed must change the hashes
    CHECK(run("attribute " + b.io_flags() + " --timesteps 100,300 --particles 10 --seed 12 "
                                            "--out " +
              b.p("map.f32")) == 0);
    CHECK(slurp(a.p("map.f32.manifest.json")) != slurp(b.p("map.f32.manifest.json")));
}

TEST_CASE("exit codes follow the error families") {
    const Scratch s("exits");
    // 1: configuration (missing required value)
    CHECK(run("attribute " + s.io_flags()) == 1);
    // 2: file i/o (input file does not exist)
    CHECK(run("attribute --input " + s.p("missing.f32") + " --model " + s.p("model.json") +
              " --prior " + s.p("prior.json") + " --out " + s.p("map.f32")) == 2);
    // 3: numerical validation (t_start outside the schedule)
    CHECK(run("counterfactual " + s.io_flags() +
              " --target-class 1 --t-start 5000 --particles 8 --out " + s.p("cf")) == 3);
    // 4: divergence (absurd unnormalized step size)
    CHECK(run("counterfactual " + s.io_flags() +
              " --mode ascent --target-class 1 --alpha 1e9 --grad-norm 0 --iters 40"
              " --particles 8 --out " +
              s.p("cf")) == 4);
}

TEST_CASE("counterfactual run writes the report bundle") {
    const Scratch s("cf");
    const int rc = run("counterfactual " + s.io_flags() +
                       " --target-class 1 --particles 20 --ddim-steps 20 --seed 5 --out " +
                       s.p("cf"));
    CHECK(rc == 0);
    const json report = read_json_file(s.p("cf") + "/report.json");
    CHECK(report.at("mode") == "reverse");
    CHECK(report.at("target_class") == 1);
    CHECK(report.at("flipped").is_boolean());
    CHECK(report.at("l2").get<double>() >= 0.0);
    const ArrayData x_cf = read_array(s.p("cf") + "/x_cf.f32");
    CHECK(x_cf.values.size() == 2);
    CHECK(fs::exists(s.p("cf") + "/manifest.json"));
    CHECK(report.at("trajectory_length").get<int>() >= 2);
    CHECK(fs::exists(s.p("cf") + "/trajectory_0000.f32"));
}

TEST_CASE("verify subcommand reports success") {
    const Scratch s("verify");
    CHECK(run("verify --trials 5 --out " + s.p("verify.json")) == 0);
    const json report = read_json_file(s.p("verify.json"));
    CHECK(report.at("pass").at("all") == true);
    CHECK(report.at("pass").at("span") == true);
    CHECK(report.at("span_check").get<double>() <= 1e-10);
}

TEST_CASE("road subcommand writes both report and curve") {
    const Scratch s("road");
    CHECK(run("attribute " + s.io_flags() +
              " --timesteps 100 --particles 10 --out " + s.p("map.f32")) == 0);
    CHECK(run("road --input " + s.p("input.f32") + " --model " + s.p("model.json") + " --map " +
              s.p("map.f32") + " --fractions 0,0.5 --noise-std 0.05 --seed 2 --out " +
              s.p("road.json")) == 0);
    const json report = read_json_file(s.p("road.json"));
    CHECK(report.at("auc").is_number());
    CHECK(report.at("fractions").size() == 2);
    const std::string csv = slurp(s.p("road.csv"));
    CHECK(csv.rfind("fraction,score", 0) == 0);
}

TEST_CASE("sweep aggregates a small grid into csv") {
    const Scratch s("sweep");
    json cfg;
    cfg["model"] = "model.json";
    cfg["prior"] = "prior.json";
    cfg["input"] = "input.f32";
    cfg["mode"] = "ascent";
    cfg["target_class"] = 1;
    cfg["seeds"] = {0, 1};
    cfg["counterfactual"] = {{"particles", 8}, {"iters", 10}, {"t_start", 300}, {"beta", 0.0}};
    cfg["attribution"] = {{"timesteps", {100, 300}}, {"particles", 10}};
    cfg["road"] = {{"fractions", {0.0, 0.5}}, {"noise_std", 0.05}};
    cfg["grid"] = {{"alpha", {0.0, 0.4}}};
    write_json_file(s.p("sweep.json"), cfg);

    CHECK(run("sweep --config " + s.p("sweep.json") + " --out " + s.p("grid.csv")) == 0);
    const std::string csv = slurp(s.p("grid.csv"));
    CHECK(csv.rfind("alpha,flip_rate,mean_l2,auc", 0) == 0);

    // two data rows; a zero step size cannot out-flip a positive one
    std::vector<std::vector<double>> rows;
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
        std::vector<double> row;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    REQUIRE(rows.size() == 2);
    CHECK(rows[0][0] == 0.0);
    CHECK(rows[1][0] == 0.4);
    CHECK(rows[0][1] <= rows[1][1]);
    CHECK(rows[0][3] == rows[1][3]);  // the attribution column is shared

    CHECK(run("sweep --config " + s.p("sweep.json") + " --out " + s.p("grid.csv") +
              " --max-cells 1") == 1);
}
