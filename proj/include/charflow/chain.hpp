#pragma once

#include "charflow/field.hpp"
#include "charflow/kernel.hpp"
#include "charflow/mesh.hpp"
#include "charflow/solver.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace charflow {

struct ChainPath {
    std::vector<int> cells;    // K_0 .. K_N
    std::vector<int> faces;    // face crossed at step n (-1 when staying)
    std::uint64_t seed = 0;
    TransitionKernel::Kind kind = TransitionKernel::Kind::forward;
};

// Random characteristic along a path, lifted to R^d: consecutive periodic
// wraps accumulate into the per-step translation offsets.
struct Trajectory {
    ChainPath path;
    std::vector<Vec2> points;    // X_0 .. X_N
    std::vector<Vec2> offsets;   // translation applied to cell K_n's base coords
};

struct Decomposition {
    std::vector<Vec2> s;   // S_n = sum [X_{i+1} - e_{K_i} + dt a(X_i)]
    std::vector<Vec2> r;   // R_n = sum [e_{K_i} - X_i]
    std::vector<Vec2> m;   // M_n = sum [X_{i+1} - E^i X_{i+1}]
    std::vector<Vec2> xi;  // reversed-chain gap martingale (empty otherwise)
};

struct McEstimate {
    double mean = 0.0;
    double stderr_mean = 0.0;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
};

ChainPath sample_path(const TransitionKernel& kernel, int k0, int n_steps, std::uint64_t seed);

// Final cell only; same draws as sample_path.
int sample_final_cell(const TransitionKernel& kernel, int k0, int n_steps, std::uint64_t seed);

Trajectory trace_points(const ChainPath& path, const Mesh& mesh, const EnteringBarycenters& eb);

Decomposition decompose(const Trajectory& traj, const Mesh& mesh, const VelocityField& field,
                        const TransitionKernel& kernel, const EnteringBarycenters& eb);

McEstimate mc_expectation(const TransitionKernel& kernel, const CellField& u0, int k0,
                          int n_steps, std::size_t samples, std::uint64_t master_seed,
                          int threads = 1);

struct EnumerationResult {
    double value = 0.0;
    std::size_t path_count = 0;
};

struct GuardError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exhaustive sum over positive-weight paths; guard (max row support)^N <= 1e7.
EnumerationResult enumerate_expectation(const TransitionKernel& kernel, const CellField& u0,
                                        int k0, int n_steps);

// Visit every positive-probability path (cells, faces, probability).
void enumerate_paths(const TransitionKernel& kernel, int k0, int n_steps,
                     const std::function<void(const std::vector<int>&, const std::vector<int>&,
                                              double)>& visit);

double path_probability(const TransitionKernel& kernel, const std::vector<int>& cells,
                        const std::vector<int>& faces);

// Per-source-cell transition frequencies; `reversed` reads paths backwards
// (the twin face gives the backward transition's identity).
std::vector<std::vector<double>> empirical_transition(const std::vector<ChainPath>& paths,
                                                      std::size_t n_cells, bool reversed,
                                                      std::vector<double>* source_counts = nullptr);

int sample_lebesgue_start(const Mesh& mesh, std::uint64_t seed);

struct LebesgueSampler {
    explicit LebesgueSampler(const Mesh& mesh);
    int sample(std::uint64_t seed, std::uint64_t counter) const;

private:
    std::vector<double> cdf_;
};

// Streaming one-pass walk with the decomposition accumulated on the fly;
// what the verification studies sample in bulk.
struct WalkStats {
    int final_cell = -1;
    Vec2 x0, x_n;
    Vec2 m_n;                 // martingale fluctuation at N
    Vec2 r_n;                 // gap sum at N
    Vec2 drift_sum;           // dt * sum_{i<N} a(X_i)
    Vec2 sup_abs_m;           // per-coordinate sup_k |M_k|
    double sum_dm2 = 0.0;     // sum |Delta M_k|^2
    Vec2 first_displacement;  // X_1 - X_0
};

WalkStats walk_stats(const TransitionKernel& kernel, const Mesh& mesh,
                     const VelocityField& field, const EnteringBarycenters& eb, int k0,
                     int n_steps, std::uint64_t seed);

void dump_trajectory_csv(const Trajectory& traj, const Decomposition& dec, const Mesh& mesh,
                         const std::string& csv_path, const std::string& header_json_path,
                         std::uint64_t kernel_hash);

// JSON list of the per-chain seeds a batch derives from (master_seed, i).
void write_batch_manifest(const std::string& path, std::uint64_t master_seed, std::size_t count);

} // namespace charflow
