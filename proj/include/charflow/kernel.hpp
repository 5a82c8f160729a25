#pragma once

#include "charflow/field.hpp"
#include "charflow/mesh.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace charflow {

struct CflError : std::runtime_error {
    int worst_cell;
    double admissible_dt;
    CflError(int cell, double dt_ok, const std::string& msg)
        : std::runtime_error(msg), worst_cell(cell), admissible_dt(dt_ok) {}
};

struct GammaError : std::runtime_error {
    double max_div_dt;
    GammaError(double m, const std::string& msg) : std::runtime_error(msg), max_div_dt(m) {}
};

// Off-diagonal transition entry. Kept per face record, not per neighbor:
// small meshes can join the same pair of cells through distinct faces, and
// the random characteristic needs to know which face was crossed.
struct KernelEntry {
    int face = -1;
    int cell = -1;
    double weight = 0.0;
};

struct TransitionKernel {
    enum class Kind { forward, co, reversed };

    Kind kind = Kind::forward;
    double dt = 0.0;
    std::vector<double> self_weight;
    std::vector<std::vector<KernelEntry>> rows;  // sorted by (cell, face)
    std::uint64_t mesh_hash = 0;

    std::size_t size() const { return rows.size(); }
    double row_sum(int cell) const;
    // Off-diagonal weight from K to L through face `face` (0 if absent).
    double weight_through(int cell, int face) const;
    std::size_t max_row_support() const;  // entries incl. the self weight
};

// Upwind weights p_{K,L} = -<a_{K,L}, n_{K,L}> dt |K cap L| / |K| on strict
// inflow faces. Throws CflError naming the worst cell if any row sum of the
// off-diagonal weights exceeds 1.
TransitionKernel build_forward(const Mesh& mesh, const FieldMoments& moments, double dt);

// Co-weights q_{K,J} on strict outflow faces; the self weight 1 - sum may be
// negative and is stored as-is.
TransitionKernel build_co(const Mesh& mesh, const FieldMoments& moments, double dt);

// Markovian reversal gamma_{K,J} = q_{K,J} / (1 + delta_K dt); requires
// max |delta_K| dt < 1 - eta.
TransitionKernel build_reversed(const Mesh& mesh, const FieldMoments& moments, double dt, double eta);

// Largest dt passing the CFL check (row sums exactly 1 for the worst cell).
double cfl_max_dt(const Mesh& mesh, const FieldMoments& moments);

struct EnteringBarycenters {
    std::vector<Vec2> point;      // e_K
    std::vector<bool> fallback;   // true where K+ was empty (cell barycenter)
};

Vec2 entering_barycenter(const Mesh& mesh, const FieldMoments& moments, double dt,
                         const VelocityField& field, int cell);
EnteringBarycenters compute_entering_barycenters(const Mesh& mesh, const FieldMoments& moments,
                                                 double dt, const VelocityField& field);

// a_K dt + sum_{L in K-} p (x_{K,L} - x0) - sum_{J in K+} q (x_{K,J} - x0);
// O(h dt) by the Green formula, exactly 0 for constant fields.
Vec2 green_residual(const Mesh& mesh, const FieldMoments& moments, double dt, int cell,
                    const Vec2& x0);

// |K| - sum_J |J| p_{J,K} per cell; zero for divergence-free fields.
std::vector<double> invariance_residual(const TransitionKernel& p, const Mesh& mesh);

// max over twin pairs of | q_{K,J} |K| - p_{J,K} |J| |  (definitional identity).
double reversal_identity_residual(const TransitionKernel& p, const TransitionKernel& q,
                                  const Mesh& mesh);

void dump_kernel_csv(const TransitionKernel& k, const std::string& csv_path,
                     const std::string& header_json_path);

} // namespace charflow
