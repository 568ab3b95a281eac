// Command-line front end: attribution maps, counterfactuals, removal-curve
// scoring, self-verification, and parameter sweeps. Every run is seeded and
// leaves a manifest with content hashes of its artifacts.
#include "freemcg/attribution.hpp"
#include "freemcg/counterfactual.hpp"
#include "freemcg/diffusion.hpp"
#include "freemcg/enkf.hpp"
#include "freemcg/errors.hpp"
#include "freemcg/evaluation.hpp"
#include "freemcg/io.hpp"
#include "freemcg/models.hpp"
#include "freemcg/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace freemcg;

namespace {

json vec_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

json arr_json(const Eigen::ArrayXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

std::string base_name(const std::string& p) {
    return p.empty() ? p : fs::path(p).filename().string();
}

// Optional JSON config per subcommand: flags override file values, unknown
// keys are rejected by name, relative paths resolve against the config file.
struct ConfigBinder {
    CLI::App* sub = nullptr;
    std::string config_path;
    fs::path base_dir;
    std::map<std::string, std::function<void(const json&)>> setters;

    void attach(CLI::App* s) {
        sub = s;
        sub->add_option("--config", config_path, "JSON config file (flags override its values)");
    }

    template <typename T>
    CLI::Option* bind(const std::string& flag, const std::string& key, T& target,
                      const std::string& desc) {
        CLI::Option* opt = sub->add_option(flag, target, desc);
        setters[key] = [&target, key, opt](const json& v) {
            if (opt->count() > 0) return;
            try {
                target = v.get<T>();
            } catch (const json::exception& e) {
                throw ConfigError("config key '" + key + "': " + std::string(e.what()));
            }
        };
        return opt;
    }

    CLI::Option* bind_flag(const std::string& flag, const std::string& key, bool& target,
                           const std::string& desc) {
        CLI::Option* opt = sub->add_flag(flag, target, desc);
        setters[key] = [&target, key, opt](const json& v) {
            if (opt->count() > 0) return;
            try {
                target = v.get<bool>();
            } catch (const json::exception& e) {
                throw ConfigError("config key '" + key + "': " + std::string(e.what()));
            }
        };
        return opt;
    }

    CLI::Option* bind_path(const std::string& flag, const std::string& key, std::string& target,
                           const std::string& desc) {
        CLI::Option* opt = sub->add_option(flag, target, desc);
        setters[key] = [this, &target, key, opt](const json& v) {
            if (opt->count() > 0) return;
            try {
                const fs::path p = v.get<std::string>();
                target = (p.is_absolute() ? p : base_dir / p).string();
            } catch (const json::exception& e) {
                throw ConfigError("config key '" + key + "': " + std::string(e.what()));
            }
        };
        return opt;
    }

    void merge() {
        if (config_path.empty()) return;
        const json cfg = read_json_file(config_path);
        if (!cfg.is_object()) throw ConfigError("config file must hold a JSON object");
        base_dir = fs::path(config_path).parent_path();
        for (const auto& [key, value] : cfg.items()) {
            auto it = setters.find(key);
            if (it == setters.end())
                throw ConfigError("unknown config key '" + key + "' in " + config_path);
            it->second(value);
        }
    }
};

void require_set(const std::string& value, const char* what) {
    if (value.empty()) throw ConfigError(std::string("missing required ") + what);
}

struct ScheduleOpts {
    int T = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;
};

void add_schedule(ConfigBinder& b, ScheduleOpts& s) {
    b.bind("--T", "T", s.T, "diffusion chain length");
    b.bind("--beta-min", "beta_min", s.beta_min, "noise schedule start");
    b.bind("--beta-max", "beta_max", s.beta_max, "noise schedule end");
}

json schedule_json(const ScheduleOpts& s) {
    return json{{"T", s.T}, {"beta_min", s.beta_min}, {"beta_max", s.beta_max}};
}

// ---------------------------------------------------------------- attribute

struct AttributeOpts {
    std::string input, model, prior, out, image;
    std::vector<int> timesteps = {100, 200, 300, 400, 500, 600, 700};
    int particles = 100;
    int target_class = -1;  // -1 = predicted class
    bool random_t = false;
    bool normalize = false;
    std::uint64_t seed = 0;
    ScheduleOpts sched;
};

CLI::App* setup_attribute(CLI::App& app, AttributeOpts& o, ConfigBinder& b) {
    CLI::App* sub = app.add_subcommand("attribute", "feature attribution map for one input");
    b.attach(sub);
    b.bind_path("--input", "input", o.input, "input point (array file)");
    b.bind_path("--model", "model", o.model, "classifier parameters (json)");
    b.bind_path("--prior", "prior", o.prior, "denoiser prior (json)");
    b.bind("--timesteps", "timesteps", o.timesteps, "diffusion levels to average over")
        ->delimiter(',');
    b.bind("--particles", "particles", o.particles, "particles per timestep");
    b.bind("--target-class", "target_class", o.target_class,
           "class index (default: predicted class)");
    b.bind_flag("--random-t", "random_t", o.random_t,
                "draw one timestep per particle instead of the fixed grid");
    b.bind_flag("--normalize", "normalize", o.normalize,
                "rescale the stored map to max 1 (visualization only)");
    b.bind("--seed", "seed", o.seed, "rng seed");
    add_schedule(b, o.sched);
    b.bind_path("--out", "out", o.out, "output map (array file)");
    b.bind_path("--ppm,--pgm", "ppm", o.image, "grayscale image export (binary pgm)");
    return sub;
}

int run_attribute(const AttributeOpts& o) {
    require_set(o.input, "--input");
    require_set(o.model, "--model");
    require_set(o.prior, "--prior");
    require_set(o.out, "--out");

    const ArrayData in = read_array(o.input);
    const auto model = load_classifier(o.model);
    const PriorFile prior = load_prior(o.prior);
    const auto den = prior.make_denoiser();
    const NoiseSchedule s = make_schedule(o.sched.T, o.sched.beta_min, o.sched.beta_max);

    AttributionConfig cfg;
    cfg.timesteps = o.timesteps;
    cfg.particles_per_t = o.particles;
    cfg.seed = o.seed;
    cfg.random_t = o.random_t;
    cfg.layout = in.shape;
    if (o.target_class >= 0) cfg.target_class = o.target_class;

    const AttributionMap map = attribute(*model, *den, s, in.values.matrix(), cfg);
    if (map.degenerate)
        std::cerr << "warning: every particle ensemble collapsed; writing a zero map\n";

    Eigen::ArrayXd values = map.values;
    if (o.normalize && values.maxCoeff() > 0.0) values /= values.maxCoeff();
    write_array(o.out, values, map.shape);
    std::vector<fs::path> outputs = {o.out, o.out + ".json"};
    if (!o.image.empty()) {
        int h = 1;
        int w = static_cast<int>(values.size());
        if (map.shape.size() == 2) {
            h = map.shape[0];
            w = map.shape[1];
        }
        write_pgm(o.image, values, h, w);
        outputs.emplace_back(o.image);
    }

    json resolved;
    resolved["command"] = "attribute";
    resolved["input"] = base_name(o.input);
    resolved["model"] = base_name(o.model);
    resolved["prior"] = base_name(o.prior);
    resolved["timesteps"] = o.timesteps;
    resolved["particles"] = o.particles;
    resolved["target_class"] = o.target_class >= 0 ? json(o.target_class) : json();
    resolved["random_t"] = o.random_t;
    resolved["normalize"] = o.normalize;
    resolved["seed"] = o.seed;
    resolved["schedule"] = schedule_json(o.sched);
    resolved["out"] = base_name(o.out);
    resolved["ppm"] = o.image.empty() ? json() : json(base_name(o.image));
    write_manifest(o.out + ".manifest.json", resolved, outputs);
    return 0;
}

// ----------------------------------------------------------- counterfactual

struct CounterfactualOpts {
    std::string input, model, prior, out;
    std::string mode = "reverse";
    int target_class = -1;
    double alpha = 0.2;
    double beta = 0.01;
    double eta = 0.0;
    int t_start = 400;
    int particles = 100;
    int ddim_steps = 100;
    int iters = 18;
    int grad_norm = -1;  // -1 = mode default, 0 = off, 1 = on
    std::uint64_t seed = 0;
    ScheduleOpts sched;
};

CLI::App* setup_counterfactual(CLI::App& app, CounterfactualOpts& o, ConfigBinder& b) {
    CLI::App* sub =
        app.add_subcommand("counterfactual", "generate a counterfactual for a target class");
    b.attach(sub);
    b.bind_path("--input", "input", o.input, "input point (array file)");
    b.bind_path("--model", "model", o.model, "classifier parameters (json)");
    b.bind_path("--prior", "prior", o.prior, "denoiser prior (json)");
    b.bind("--mode", "mode", o.mode, "ascent | reverse");
    b.bind("--target-class", "target_class", o.target_class, "class to steer toward");
    b.bind("--alpha", "alpha", o.alpha, "ensemble-gradient step weight");
    b.bind("--beta", "beta", o.beta, "proximal pull toward the input");
    b.bind("--t-start", "t_start", o.t_start, "forward-diffusion depth");
    b.bind("--particles", "particles", o.particles, "ensemble size");
    b.bind("--ddim-steps", "ddim_steps", o.ddim_steps, "reverse-mode update count");
    b.bind("--eta", "eta", o.eta, "stochasticity of the reverse updates, in [0,1]");
    b.bind("--iters", "iters", o.iters, "ascent-mode iteration count");
    CLI::Option* gn = b.bind("--grad-norm", "grad_norm", o.grad_norm,
                             "normalize the ensemble gradient: 0|1 (default: on for "
                             "reverse, off for ascent)");
    gn->check(CLI::Range(0, 1));
    // accept a JSON bool for grad_norm too
    b.setters["grad_norm"] = [&o, gn](const json& v) {
        if (gn->count() > 0) return;
        if (v.is_boolean()) {
            o.grad_norm = v.get<bool>() ? 1 : 0;
            return;
        }
        try {
            o.grad_norm = v.get<int>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key 'grad_norm': ") + e.what());
        }
        if (o.grad_norm < 0 || o.grad_norm > 1)
            throw ConfigError("config key 'grad_norm': expected 0, 1, or a bool");
    };
    b.bind("--seed", "seed", o.seed, "rng seed");
    add_schedule(b, o.sched);
    b.bind_path("--out", "out", o.out, "output directory");
    return sub;
}

int run_counterfactual(const CounterfactualOpts& o) {
    require_set(o.input, "--input");
    require_set(o.model, "--model");
    require_set(o.prior, "--prior");
    require_set(o.out, "--out");
    if (o.target_class < 0) throw ConfigError("missing required --target-class");
    if (o.mode != "ascent" && o.mode != "reverse")
        throw ConfigError("--mode must be 'ascent' or 'reverse'");

    const ArrayData in = read_array(o.input);
    const auto model = load_classifier(o.model);
    const PriorFile prior = load_prior(o.prior);
    const auto den = prior.make_denoiser();
    const NoiseSchedule s = make_schedule(o.sched.T, o.sched.beta_min, o.sched.beta_max);

    CfConfig cfg;
    cfg.target_class = o.target_class;
    cfg.alpha = o.alpha;
    cfg.beta = o.beta;
    cfg.t_start = o.t_start;
    cfg.particles = o.particles;
    cfg.ddim.eta = o.eta;
    cfg.n_ddim_steps = o.ddim_steps;
    cfg.iters = o.iters;
    cfg.seed = o.seed;
    if (o.grad_norm >= 0) cfg.grad_norm = o.grad_norm == 1;

    const Vector x = in.values.matrix();
    const CounterfactualResult res =
        o.mode == "ascent" ? ascent_cf(*model, *den, s, x, cfg)
                           : reverse_diffusion_cf(*model, *den, s, x, cfg);

    fs::create_directories(o.out);
    std::vector<fs::path> outputs;
    const auto put_array = [&outputs](const fs::path& p, const Vector& v) {
        write_array(p, v.array(), {static_cast<int>(v.size())});
        outputs.push_back(p);
        outputs.emplace_back(p.string() + ".json");
    };
    put_array(fs::path(o.out) / "x_cf.f32", res.x_cf);
    for (std::size_t i = 0; i < res.trajectory.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "trajectory_%04zu.f32", i);
        put_array(fs::path(o.out) / name, res.trajectory[i]);
    }

    json report;
    report["mode"] = o.mode;
    report["target_class"] = o.target_class;
    report["flipped"] = res.flipped;
    report["l2"] = res.l2;
    json logits = json::array();
    for (const auto& v : res.logit_history) logits.push_back(vec_json(v));
    report["logits"] = logits;
    json probs = json::array();
    for (const auto& v : res.prob_history) probs.push_back(vec_json(v));
    report["probabilities"] = probs;
    json weights = json::array();
    for (const auto& v : res.weight_history) weights.push_back(vec_json(v));
    report["direction_weights"] = weights;
    report["trajectory_length"] = res.trajectory.size();
    write_json_file(fs::path(o.out) / "report.json", report);
    outputs.emplace_back(fs::path(o.out) / "report.json");

    json resolved;
    resolved["command"] = "counterfactual";
    resolved["input"] = base_name(o.input);
    resolved["model"] = base_name(o.model);
    resolved["prior"] = base_name(o.prior);
    resolved["mode"] = o.mode;
    resolved["target_class"] = o.target_class;
    resolved["alpha"] = o.alpha;
    resolved["beta"] = o.beta;
    resolved["t_start"] = o.t_start;
    resolved["particles"] = o.particles;
    resolved["ddim_steps"] = o.ddim_steps;
    resolved["eta"] = o.eta;
    resolved["iters"] = o.iters;
    resolved["grad_norm"] = o.grad_norm >= 0 ? o.grad_norm == 1 : o.mode == "reverse";
    resolved["seed"] = o.seed;
    resolved["schedule"] = schedule_json(o.sched);
    resolved["out"] = base_name(o.out);
    write_manifest(fs::path(o.out) / "manifest.json", resolved, outputs);
    return 0;
}

// ----------------------------------------------------------------- road

struct RoadOpts {
    std::string input, model, map, out;
    std::vector<double> fractions = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double noise_std = 0.05;
    std::uint64_t seed = 0;
};

CLI::App* setup_road(CLI::App& app, RoadOpts& o, ConfigBinder& b) {
    CLI::App* sub = app.add_subcommand("road", "removal curve for an attribution map");
    b.attach(sub);
    b.bind_path("--input", "input", o.input, "input point (array file)");
    b.bind_path("--model", "model", o.model, "classifier parameters (json)");
    b.bind_path("--map", "map", o.map, "attribution map (array file)");
    b.bind("--fractions", "fractions", o.fractions, "removal fractions in [0,1)")
        ->delimiter(',');
    b.bind("--noise-std", "noise_std", o.noise_std, "imputation noise level");
    b.bind("--seed", "seed", o.seed, "rng seed");
    b.bind_path("--out", "out", o.out, "report file (json); curve csv written alongside");
    return sub;
}

int run_road(const RoadOpts& o) {
    require_set(o.input, "--input");
    require_set(o.model, "--model");
    require_set(o.map, "--map");
    require_set(o.out, "--out");

    const ArrayData in = read_array(o.input);
    const ArrayData map_data = read_array(o.map);
    const auto model = load_classifier(o.model);
    AttributionMap map;
    map.values = map_data.values;
    map.shape = map_data.shape;

    const Eigen::ArrayXd fractions = Eigen::Map<const Eigen::ArrayXd>(
        o.fractions.data(), static_cast<Eigen::Index>(o.fractions.size()));
    const Vector x = in.values.matrix();
    const RoadCurve curve = road_curve(*model, x, map, fractions, o.noise_std, o.seed);

    json report;
    report["original_class"] = predict(*model, x);
    report["fractions"] = arr_json(curve.fractions);
    report["scores"] = arr_json(curve.scores);
    report["auc"] = curve.auc;
    report["noise_std"] = o.noise_std;
    report["seed"] = o.seed;
    write_json_file(o.out, report);

    fs::path csv_path(o.out);
    csv_path.replace_extension(".csv");
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < curve.fractions.size(); ++i)
        rows.push_back({curve.fractions[i], curve.scores[i]});
    write_csv(csv_path, {"fraction", "score"}, rows);

    json resolved;
    resolved["command"] = "road";
    resolved["input"] = base_name(o.input);
    resolved["model"] = base_name(o.model);
    resolved["map"] = base_name(o.map);
    resolved["fractions"] = o.fractions;
    resolved["noise_std"] = o.noise_std;
    resolved["seed"] = o.seed;
    resolved["out"] = base_name(o.out);
    write_manifest(o.out + ".manifest.json", resolved, {o.out, csv_path});
    return 0;
}

// ----------------------------------------------------------------- verify

struct VerifyOpts {
    std::string out = "verify_report.json";
    int trials = 200;
    std::uint64_t seed = 0;
};

CLI::App* setup_verify(CLI::App& app, VerifyOpts& o, ConfigBinder& b) {
    CLI::App* sub =
        app.add_subcommand("verify", "self-checks: span property, order scan, toy-arc report");
    b.attach(sub);
    b.bind("--trials", "trials", o.trials, "random ensembles for the span check");
    b.bind("--seed", "seed", o.seed, "rng seed");
    b.bind_path("--out", "out", o.out, "report file (json)");
    return sub;
}

int run_verify(const VerifyOpts& o) {
    if (o.trials < 1) throw ConfigError("--trials must be >= 1");

    // covariance action stays inside the particle-deviation span
    double worst_span = 0.0;
    for (int i = 0; i < o.trials; ++i) {
        RngStream rng = RngStream::derive(o.seed, "verify/span", static_cast<std::uint64_t>(i));
        const int d = static_cast<int>(rng.uniform_int(2, 12));
        const int K = static_cast<int>(rng.uniform_int(2, d + 3));
        ParticleEnsemble e;
        e.particles.resize(K, d);
        e.logits = Matrix::Zero(K, 2);
        for (int k = 0; k < K; ++k) e.particles.row(k) = rng.gaussian_vector(d).transpose();
        worst_span = std::max(worst_span, cov_action_span_check(e, rng.gaussian_vector(d)));
    }

    // residual decay of the covariance surrogate on the quadratic toy
    const ScalarToyWrapper toy = ScalarToyWrapper::neg_x_plus_y_squared();
    Eigen::ArrayXd deltas(4);
    deltas << 0.2, 0.1, 0.05, 0.025;
    const OrderScanReport scan =
        order_scan(toy, asymmetric_offsets(12, 2, o.seed), Vector{{0.3, 1.0}}, deltas);

    const Fig3Report fig = fig3_toy(o.seed);

    const bool span_ok = worst_span <= 1e-10;
    const bool order_ok = scan.slope_defined && scan.fitted_slope >= 2.5;
    const bool fig_ok = fig.gfree_closer_everywhere;

    json report;
    report["span_check"] = worst_span;
    report["span_trials"] = o.trials;
    report["order_scan"] = {
        {"deltas", arr_json(scan.deltas)},
        {"residuals", arr_json(scan.residuals)},
        {"slope", scan.slope_defined ? json(scan.fitted_slope) : json()},
        {"slope_defined", scan.slope_defined},
    };
    json points = json::array();
    for (const auto& pt : fig.points) {
        points.push_back({
            {"s", pt.s},
            {"point", vec_json(pt.point)},
            {"tangent", vec_json(pt.tangent)},
            {"g_free", vec_json(pt.g_free)},
            {"raw_gradient", vec_json(pt.raw_gradient)},
            {"angle_gfree_deg", pt.angle_gfree_deg},
            {"angle_raw_deg", pt.angle_raw_deg},
            {"off_tangent_ratio", pt.off_tangent_ratio},
        });
    }
    report["fig3"] = {{"points", points},
                      {"gfree_closer_everywhere", fig.gfree_closer_everywhere}};
    report["pass"] =
        {{"span", span_ok}, {"order", order_ok}, {"fig3", fig_ok},
         {"all", span_ok && order_ok && fig_ok}};
    write_json_file(o.out, report);

    json resolved;
    resolved["command"] = "verify";
    resolved["trials"] = o.trials;
    resolved["seed"] = o.seed;
    resolved["out"] = base_name(o.out);
    write_manifest(o.out + ".manifest.json", resolved, {o.out});

    if (!(span_ok && order_ok && fig_ok)) {
        std::cerr << "verification failed (see " << o.out << ")\n";
        return 3;
    }
    return 0;
}

// ----------------------------------------------------------------- sweep

struct SweepOpts {
    std::string config, out;
    int max_cells = 256;
};

CLI::App* setup_sweep(CLI::App& app, SweepOpts& o) {
    CLI::App* sub = app.add_subcommand("sweep", "grid of counterfactual runs, aggregated csv");
    sub->add_option("--config", o.config, "sweep description (json)")->required();
    sub->add_option("--out", o.out, "aggregated csv")->required();
    sub->add_option("--max-cells", o.max_cells, "refuse grids larger than this");
    return sub;
}

template <typename T>
T jget(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "': " + std::string(e.what()));
    }
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const char* where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::none_of(allowed.begin(), allowed.end(),
                         [&key](const char* a) { return key == a; }))
            throw ConfigError(std::string("unknown config key '") + key + "' in " + where);
    }
}

std::string resolve_against(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return (path.is_absolute() ? path : base / path).string();
}

int run_sweep(const SweepOpts& o) {
    const json cfg = read_json_file(o.config);
    if (!cfg.is_object()) throw ConfigError("sweep config must hold a JSON object");
    check_keys(cfg,
               {"model", "prior", "input", "mode", "target_class", "schedule", "counterfactual",
                "attribution", "road", "seeds", "grid"},
               "sweep config");
    const fs::path base = fs::path(o.config).parent_path();

    const std::string model_path = resolve_against(base, jget<std::string>(cfg, "model", ""));
    const std::string prior_path = resolve_against(base, jget<std::string>(cfg, "prior", ""));
    const std::string input_path = resolve_against(base, jget<std::string>(cfg, "input", ""));
    require_set(jget<std::string>(cfg, "model", ""), "config key 'model'");
    require_set(jget<std::string>(cfg, "prior", ""), "config key 'prior'");
    require_set(jget<std::string>(cfg, "input", ""), "config key 'input'");
    const std::string mode = jget<std::string>(cfg, "mode", "reverse");
    if (mode != "ascent" && mode != "reverse")
        throw ConfigError("config key 'mode' must be 'ascent' or 'reverse'");
    if (!cfg.contains("target_class")) throw ConfigError("missing config key 'target_class'");
    const int target_class = jget<int>(cfg, "target_class", 0);
    const auto seeds = jget<std::vector<std::uint64_t>>(cfg, "seeds", {0});
    if (seeds.empty()) throw ConfigError("config key 'seeds' must not be empty");

    const json sched = cfg.value("schedule", json::object());
    check_keys(sched, {"T", "beta_min", "beta_max"}, "'schedule'");
    const NoiseSchedule s = make_schedule(jget<int>(sched, "T", 1000),
                                          jget<double>(sched, "beta_min", 1e-4),
                                          jget<double>(sched, "beta_max", 0.02));

    const json cf = cfg.value("counterfactual", json::object());
    check_keys(cf,
               {"alpha", "beta", "t_start", "particles", "ddim_steps", "eta", "iters",
                "grad_norm"},
               "'counterfactual'");
    CfConfig base_cf;
    base_cf.target_class = target_class;
    base_cf.alpha = jget<double>(cf, "alpha", 0.2);
    base_cf.beta = jget<double>(cf, "beta", 0.01);
    base_cf.t_start = jget<int>(cf, "t_start", 400);
    base_cf.particles = jget<int>(cf, "particles", 100);
    base_cf.n_ddim_steps = jget<int>(cf, "ddim_steps", 100);
    base_cf.ddim.eta = jget<double>(cf, "eta", 0.0);
    base_cf.iters = jget<int>(cf, "iters", 18);
    if (cf.contains("grad_norm")) base_cf.grad_norm = jget<bool>(cf, "grad_norm", true);

    const json att = cfg.value("attribution", json::object());
    check_keys(att, {"timesteps", "particles"}, "'attribution'");
    const json road = cfg.value("road", json::object());
    check_keys(road, {"fractions", "noise_std"}, "'road'");

    if (!cfg.contains("grid") || !cfg.at("grid").is_object() || cfg.at("grid").empty())
        throw ConfigError("sweep config needs a nonempty 'grid' object");
    const json grid = cfg.at("grid");
    check_keys(grid, {"alpha", "beta", "t_start", "particles", "ddim_steps", "eta", "iters"},
               "'grid'");
    std::vector<std::string> keys;
    std::size_t cells = 1;
    for (const auto& [key, values] : grid.items()) {
        if (!values.is_array() || values.empty())
            throw ConfigError("grid key '" + key + "' must map to a nonempty array");
        keys.push_back(key);
        cells *= values.size();
    }
    if (cells > static_cast<std::size_t>(o.max_cells))
        throw ConfigError("sweep grid has " + std::to_string(cells) +
                          " cells, exceeding --max-cells " + std::to_string(o.max_cells));

    const ArrayData in = read_array(input_path);
    const auto model = load_classifier(model_path);
    const PriorFile prior = load_prior(prior_path);
    const auto den = prior.make_denoiser();
    const Vector x = in.values.matrix();

    // The attribution quality column does not depend on the swept
    // counterfactual parameters, so score it once.
    AttributionConfig acfg;
    acfg.timesteps = jget<std::vector<int>>(att, "timesteps", acfg.timesteps);
    acfg.particles_per_t = jget<int>(att, "particles", acfg.particles_per_t);
    acfg.seed = seeds.front();
    acfg.layout = in.shape;
    const AttributionMap map = attribute(*model, *den, s, x, acfg);
    const auto fr = jget<std::vector<double>>(
        road, "fractions", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
    const Eigen::ArrayXd fractions =
        Eigen::Map<const Eigen::ArrayXd>(fr.data(), static_cast<Eigen::Index>(fr.size()));
    const double noise_std = jget<double>(road, "noise_std", 0.05);
    const double auc =
        road_curve(*model, x, map, fractions, noise_std, seeds.front()).auc;

    std::vector<std::string> header = keys;
    header.insert(header.end(), {"flip_rate", "mean_l2", "auc"});
    std::vector<std::vector<double>> rows;

    std::vector<std::size_t> idx(keys.size(), 0);
    for (std::size_t cell = 0; cell < cells; ++cell) {
        CfConfig cc = base_cf;
        std::vector<double> row;
        for (std::size_t ki = 0; ki < keys.size(); ++ki) {
            const json& value = grid.at(keys[ki]).at(idx[ki]);
            double v;
            try {
                v = value.get<double>();
            } catch (const json::exception& e) {
                throw ConfigError("grid key '" + keys[ki] + "': " + std::string(e.what()));
            }
            row.push_back(v);
            const std::string& key = keys[ki];
            if (key == "alpha") cc.alpha = v;
            else if (key == "beta") cc.beta = v;
            else if (key == "eta") cc.ddim.eta = v;
            else if (key == "t_start") cc.t_start = static_cast<int>(v);
            else if (key == "particles") cc.particles = static_cast<int>(v);
            else if (key == "ddim_steps") cc.n_ddim_steps = static_cast<int>(v);
            else if (key == "iters") cc.iters = static_cast<int>(v);
        }

        std::vector<CounterfactualResult> results;
        for (const std::uint64_t seed : seeds) {
            cc.seed = seed;
            results.push_back(mode == "ascent" ? ascent_cf(*model, *den, s, x, cc)
                                               : reverse_diffusion_cf(*model, *den, s, x, cc));
        }
        row.push_back(flip_rate(results));
        row.push_back(mean_l2(results));
        row.push_back(auc);
        rows.push_back(std::move(row));

        for (std::size_t ki = keys.size(); ki-- > 0;) {
            if (++idx[ki] < grid.at(keys[ki]).size()) break;
            idx[ki] = 0;
        }
    }

    write_csv(o.out, header, rows);

    json resolved = cfg;
    resolved["command"] = "sweep";
    resolved["model"] = base_name(model_path);
    resolved["prior"] = base_name(prior_path);
    resolved["input"] = base_name(input_path);
    resolved["max_cells"] = o.max_cells;
    resolved["out"] = base_name(o.out);
    write_manifest(o.out + ".manifest.json", resolved, {o.out});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"derivative-free gradient estimation with diffusion-denoised particle "
                 "ensembles"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    AttributeOpts ao;
    ConfigBinder ab;
    CounterfactualOpts co;
    ConfigBinder cb;
    RoadOpts ro;
    ConfigBinder rb;
    VerifyOpts vo;
    ConfigBinder vb;
    SweepOpts so;

    CLI::App* attr = setup_attribute(app, ao, ab);
    CLI::App* cf = setup_counterfactual(app, co, cb);
    CLI::App* road = setup_road(app, ro, rb);
    CLI::App* verify = setup_verify(app, vo, vb);
    CLI::App* sweep = setup_sweep(app, so);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    try {
        if (*attr) {
            ab.merge();
            return run_attribute(ao);
        }
        if (*cf) {
            cb.merge();
            return run_counterfactual(co);
        }
        if (*road) {
            rb.merge();
            return run_road(ro);
        }
        if (*verify) {
            vb.merge();
            return run_verify(vo);
        }
        if (*sweep) return run_sweep(so);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
