#pragma once

#include "charflow/chain.hpp"
#include "charflow/field.hpp"
#include "charflow/kernel.hpp"
#include "charflow/mesh.hpp"
#include "charflow/solver.hpp"
#include "charflow/stats.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace charflow {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StudyConfig {
    enum class MeshKind { uniform_1d, nonuniform_1d, torus };

    MeshKind mesh_kind = MeshKind::uniform_1d;
    int cells = 16;
    double length = 1.0;
    bool periodic = true;
    std::vector<double> widths;
    int torus_n = 4;

    VelocityField field = VelocityField::constant({1.0, 0.0}, 1);
    InitialDatum datum = InitialDatum::sine(1.0, 1.0);

    double lambda = 0.5;       // Courant ratio: dt = lambda * (CFL-max dt)
    double dt_override = 0.0;  // explicit dt (needed when the field is zero)
    double T = 1.0;
    int n_steps = -1;          // explicit N; otherwise round(T / dt)
    std::size_t samples = 10000;
    std::uint64_t seed = 1;
    std::vector<double> h_sweep;   // 1-D resolutions
    std::vector<int> n_sweep;      // torus resolutions
    std::vector<double> thresholds{1.0, 2.0, 4.0, 8.0};
    double local_p = 2.0;
    double eta = 0.1;
    int threads = 1;
    int stat_cells = 10;
    bool exact_mode = true;
    bool statistical_mode = true;

    static StudyConfig from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;  // fully resolved, defaults explicit
};

// One assembled problem: mesh + moments + kernel + entering barycenters.
struct Instance {
    Mesh mesh;
    GeometryReport geo;
    FieldMoments moments;
    double dt = 0.0;
    int n_steps = 0;
    TransitionKernel forward;
    EnteringBarycenters eb;
};

Instance make_instance(const StudyConfig& cfg, std::optional<double> h_override = {},
                       std::optional<int> torus_n_override = {});

struct Assertion {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double bound = 0.0;
    std::string detail;
};

struct StudyReport {
    std::string study;
    bool pass = true;
    std::vector<Assertion> assertions;
    nlohmann::ordered_json metrics;
    nlohmann::ordered_json config;
    std::vector<std::string> table_header;
    std::vector<std::vector<double>> table;

    void check(const std::string& name, bool ok, double value, double bound,
               const std::string& detail = "");
};

struct ConvergenceRow {
    double h = 0.0, dt = 0.0;
    int n = 0;
    double l1 = 0.0, linf = 0.0, local = 0.0;
};

struct ConvergenceTable {
    std::vector<ConvergenceRow> rows;
    stats::LineFit l1_fit, linf_fit, local_fit;  // log error vs log h
};

StudyReport verify_kolmogorov(const StudyConfig& cfg);
StudyReport convergence_study(const StudyConfig& cfg, ConvergenceTable* table = nullptr);
StudyReport diffusion_study(const StudyConfig& cfg);
StudyReport fluctuation_study(const StudyConfig& cfg);
StudyReport reversal_study(const StudyConfig& cfg);
StudyReport concentration_study(const StudyConfig& cfg);
StudyReport local_lp_study(const StudyConfig& cfg);

// Annex concentration bound: one-sided exp(-u^2 / (2(u + n v))) and the
// split two-sided per-coordinate comparison value 2 d [exp(-u^2/(4 n v)) +
// exp(-u/4)].
double freedman_one_sided(double u, double n, double v);
double concentration_bound(double u, double n, double v, int dim);

struct TailRow {
    double threshold = 0.0;
    double empirical = 0.0;  // worst coordinate
    double stderr_p = 0.0;
    double bound = 0.0;
    bool pass = false;
};

struct TailReport {
    std::vector<TailRow> rows;
    bool pass = true;
};

// Empirical exceedance of sup_k |h^{-1} M_k| per coordinate against the
// Annex bound; `sups` holds per-walk, per-coordinate suprema already scaled
// by h^{-1}.
TailReport concentration_check(const std::vector<Vec2>& sups, int dim, double n_steps, double v,
                               const std::vector<double>& thresholds);

struct BerryEsseenResult {
    double weighted_sup = 0.0;    // sup_z (1+|z|)^3 |F_n - Phi|
    double unweighted_sup = 0.0;  // sup_z |F_n - Phi|
    double bound_shape = 0.0;     // n^{-1/2} [(1-p)^2 + p^2] / sqrt(p(1-p))
};

BerryEsseenResult berry_esseen_check(int n, double jump_prob);

// Path-by-path reversal comparison on an enumerable instance: the ratio
// P_K[path]/Q_L[reversed path] must lie in [C^-1 (1-Ddt)^N, C (1+Ddt)^N]
// with C = beta^2 and D = ||div a||_inf. Also verifies the exact product
// identity ratio = prod(1 + delta dt) |J_0|/|J_N|.
struct PathRatioResult {
    bool pass = true;
    double tightest_c = 1.0;   // smallest C that would work across all paths
    double worst_identity_err = 0.0;
    std::size_t paths = 0;
};

PathRatioResult path_ratio_check(const Mesh& mesh, const VelocityField& field,
                                 const FieldMoments& moments, double dt, double eta, int n_steps);

void write_study_outputs(const StudyReport& rep, const std::string& out_dir);

} // namespace charflow
