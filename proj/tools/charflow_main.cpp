// charflow: build meshes, assemble upwind kernels, run the scheme, and run
// the Markov-chain verification studies.
//
// Exit codes: 0 pass, 2 usage, 3 mesh-invalid, 4 CFL, 5 study assertion.

#include "charflow/analysis.hpp"
#include "charflow/chain.hpp"
#include "charflow/field.hpp"
#include "charflow/kernel.hpp"
#include "charflow/mesh.hpp"
#include "charflow/solver.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace charflow;
using ojson = nlohmann::ordered_json;

constexpr int exit_ok = 0;
constexpr int exit_usage = 2;
constexpr int exit_mesh_invalid = 3;
constexpr int exit_cfl = 4;
constexpr int exit_study_failed = 5;

std::uint64_t effective_seed(std::uint64_t from_config) {
    if (const char* env = std::getenv("CHARFLOW_SEED"))
        return std::strtoull(env, nullptr, 10);
    return from_config;
}

void write_geometry_report(const GeometryReport& rep, const std::string& path) {
    ojson j;
    j["h_max"] = rep.h_max;
    j["min_volume"] = rep.min_volume;
    j["max_volume"] = rep.max_volume;
    j["alpha"] = rep.alpha;
    j["beta"] = rep.beta;
    j["cell_count"] = rep.cell_count;
    std::ofstream out(path);
    out << j.dump(1) << '\n';
}

nlohmann::json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return nlohmann::json::parse(in);
}

int cmd_mesh_gen_1d(int cells, double length, bool periodic, const std::string& out) {
    const Mesh m = build_uniform_1d(cells, length, periodic);
    const GeometryReport rep = validate(m);
    save_mesh(m, out);
    write_geometry_report(rep, out + ".report.json");
    std::cout << "wrote " << out << " (h=" << rep.h_max << ", cells=" << rep.cell_count << ")\n";
    return exit_ok;
}

int cmd_mesh_gen_torus(int n, const std::string& out) {
    const Mesh m = build_triangulated_torus_2d(n);
    const GeometryReport rep = validate(m);
    save_mesh(m, out);
    write_geometry_report(rep, out + ".report.json");
    std::cout << "wrote " << out << " (h=" << rep.h_max << ", cells=" << rep.cell_count << ")\n";
    return exit_ok;
}

int cmd_mesh_validate(const std::string& path) {
    try {
        const Mesh m = load_mesh(path);
        const GeometryReport rep = validate(m);
        std::cout << "mesh ok: " << rep.cell_count << " cells, h=" << rep.h_max
                  << ", alpha=" << rep.alpha << ", beta=" << rep.beta << '\n';
        return exit_ok;
    } catch (const MeshError& e) {
        std::cerr << "mesh invalid: " << e.what() << '\n';
        return exit_mesh_invalid;
    }
}

int cmd_run(const std::string& config_path, const std::string& out_dir, int threads) {
    auto j = load_config(config_path);
    StudyConfig cfg = StudyConfig::from_json(j);
    cfg.seed = effective_seed(cfg.seed);
    if (threads > 0) cfg.threads = threads;

    Instance ins;
    try {
        ins = make_instance(cfg);
    } catch (const CflError& e) {
        std::cerr << "CFL violation: " << e.what() << '\n';
        return exit_cfl;
    }
    std::filesystem::create_directories(out_dir);

    std::vector<int> checkpoints{ins.n_steps};
    if (j.contains("checkpoints")) checkpoints = j.at("checkpoints").get<std::vector<int>>();

    CellField u = project_initial(cfg.datum, ins.mesh);
    const std::uint64_t mh = ins.mesh.hash();
    int done = 0;
    for (int cp : checkpoints) {
        if (cp < done) continue;
        u = run(ins.forward, u, cp - done);
        done = cp;
        const std::string base = out_dir + "/field_n" + std::to_string(cp);
        dump_cellfield_csv(u, base + ".csv", base + ".json", mh);
    }
    ErrorNormOptions opts;
    opts.local_p = cfg.local_p;
    opts.entering = &ins.eb;
    const ErrorReport err = error_norms(u, cfg.datum, cfg.field, ins.mesh, done * ins.dt, opts);
    ojson je;
    je["L1"] = err.l1;
    je["Linf"] = err.linf;
    je["local_p"] = err.local_p;
    je["local_radius"] = err.local_radius;
    je["local_value"] = err.local_value;
    je["N"] = err.n;
    je["h"] = err.h;
    je["dt"] = err.dt;
    je["linf_samples"] = err.linf_samples;
    je["seed"] = cfg.seed;
    std::ofstream out(out_dir + "/error_report.json");
    out << je.dump(1) << '\n';
    std::cout << "run done: N=" << done << " L1=" << err.l1 << " Linf=" << err.linf << '\n';
    return exit_ok;
}

int cmd_study(const std::string& name, const std::string& config_path, const std::string& out_dir,
              std::uint64_t seed_flag, bool seed_given, int threads) {
    auto j = load_config(config_path);
    StudyConfig cfg = StudyConfig::from_json(j);
    if (seed_given) cfg.seed = seed_flag;
    cfg.seed = effective_seed(cfg.seed);
    if (threads > 0) cfg.threads = threads;

    StudyReport rep;
    try {
        if (name == "kolmogorov") rep = verify_kolmogorov(cfg);
        else if (name == "convergence") rep = convergence_study(cfg);
        else if (name == "diffusion") rep = diffusion_study(cfg);
        else if (name == "fluctuation") rep = fluctuation_study(cfg);
        else if (name == "reversal") rep = reversal_study(cfg);
        else if (name == "concentration") rep = concentration_study(cfg);
        else if (name == "local-lp") rep = local_lp_study(cfg);
        else {
            std::cerr << "unknown study: " << name << '\n';
            return exit_usage;
        }
    } catch (const CflError& e) {
        std::cerr << "CFL violation: " << e.what() << '\n';
        return exit_cfl;
    }

    write_study_outputs(rep, out_dir);
    const bool samples_chains = name == "kolmogorov" ? cfg.statistical_mode
                              : name != "convergence" && name != "diffusion";
    if (samples_chains && cfg.samples > 0)
        write_batch_manifest(out_dir + "/batch_manifest.json", cfg.seed, cfg.samples);
    for (const auto& a : rep.assertions)
        std::cout << (a.pass ? "[PASS] " : "[FAIL] ") << rep.study << ": " << a.name
                  << " (value=" << a.value << ", bound=" << a.bound << ")\n";
    std::cout << (rep.pass ? "study passed" : "study FAILED") << ", report in " << out_dir << '\n';
    return rep.pass ? exit_ok : exit_study_failed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"upwind transport scheme and its Markov-chain verification lab"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "cap worker parallelism (results are independent of it)");

    // mesh gen-1d / gen-torus / validate
    auto* mesh_cmd = app.add_subcommand("mesh", "build and validate meshes");
    mesh_cmd->require_subcommand(1);
    auto* gen1d = mesh_cmd->add_subcommand("gen-1d", "uniform 1-D mesh");
    int cells = 4;
    double length = 1.0;
    bool periodic = false;
    std::string out_path = "mesh.json";
    gen1d->add_option("--cells", cells)->required();
    gen1d->add_option("--length", length)->required();
    gen1d->add_flag("--periodic", periodic);
    gen1d->add_option("--out", out_path);
    auto* gentorus = mesh_cmd->add_subcommand("gen-torus", "triangulated unit torus");
    int torus_n = 4;
    std::string torus_out = "mesh.json";
    gentorus->add_option("--n", torus_n)->required();
    gentorus->add_option("--out", torus_out);
    auto* meshval = mesh_cmd->add_subcommand("validate", "validate a mesh file");
    std::string val_path;
    meshval->add_option("file", val_path)->required();

    // run
    auto* run_cmd = app.add_subcommand("run", "run the upwind scheme from a config");
    std::string run_config, run_out = "out";
    run_cmd->add_option("--config", run_config)->required();
    run_cmd->add_option("--out", run_out);

    // study
    auto* study_cmd = app.add_subcommand("study", "run a verification study");
    std::string study_name, study_config, study_out = "out";
    std::uint64_t seed_flag = 0;
    study_cmd->add_option("name", study_name,
                          "kolmogorov|convergence|diffusion|fluctuation|reversal|concentration|local-lp")
        ->required();
    study_cmd->add_option("--config", study_config)->required();
    auto* seed_opt = study_cmd->add_option("--seed", seed_flag);
    study_cmd->add_option("--out", study_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_usage;
    }

    try {
        if (gen1d->parsed()) return cmd_mesh_gen_1d(cells, length, periodic, out_path);
        if (gentorus->parsed()) return cmd_mesh_gen_torus(torus_n, torus_out);
        if (meshval->parsed()) return cmd_mesh_validate(val_path);
        if (run_cmd->parsed()) return cmd_run(run_config, run_out, threads);
        if (study_cmd->parsed())
            return cmd_study(study_name, study_config, study_out, seed_flag,
                             seed_opt->count() > 0, threads);
    } catch (const MeshError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_mesh_invalid;
    } catch (const CflError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_cfl;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    }
    return exit_usage;
}
