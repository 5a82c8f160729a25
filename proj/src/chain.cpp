#include "charflow/chain.hpp"

#include "charflow/rng.hpp"
#include "charflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace charflow {

namespace {

// Inverse-CDF step through a kernel row: off-diagonal entries in their stored
// (cell, face) order, the self weight last. Returns the entry index or -1.
int sample_row(const TransitionKernel& k, int cell, double u) {
    const auto& row = k.rows[static_cast<std::size_t>(cell)];
    double cum = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        cum += row[i].weight;
        if (u < cum) return static_cast<int>(i);
    }
    return -1;  // stay
}

// Incremental trace + decomposition state shared by the storing and the
// streaming interfaces, so both compute literally the same quantities.
struct WalkCore {
    const Mesh& mesh;
    const TransitionKernel& kernel;
    const EnteringBarycenters& eb;
    const VelocityField* field = nullptr;  // needed for S only

    int cell = -1;
    Vec2 tau;      // lift offset of the current cell's base coordinates
    Vec2 x;        // X_n (lifted)
    Vec2 s, r, m, xi;
    Vec2 sup_abs_m;
    double sum_dm2 = 0.0;

    WalkCore(const Mesh& me, const TransitionKernel& k, const EnteringBarycenters& e,
             const VelocityField* f)
        : mesh(me), kernel(k), eb(e), field(f) {}

    void start(int k0) {
        cell = k0;
        tau = {0.0, 0.0};
        x = eb.point[static_cast<std::size_t>(k0)];
    }

    Vec2 entering_lifted() const { return eb.point[static_cast<std::size_t>(cell)] + tau; }

    // Conditional mean of X_{n+1} given the current cell, in lifted coords.
    Vec2 conditional_next_mean() const {
        Vec2 mean = entering_lifted() * kernel.self_weight[static_cast<std::size_t>(cell)];
        for (const auto& e : kernel.rows[static_cast<std::size_t>(cell)])
            mean += (mesh.faces[static_cast<std::size_t>(e.face)].barycenter + tau) * e.weight;
        return mean;
    }

    // Advance along entry `idx` of the current row (-1 = stay).
    void advance(int idx) {
        const Vec2 e_cur = entering_lifted();
        const Vec2 mean = conditional_next_mean();
        r += e_cur - x;

        Vec2 x_next;
        if (idx < 0) {
            x_next = e_cur;  // X resets to the entering barycenter on a stay
        } else {
            const auto& entry = kernel.rows[static_cast<std::size_t>(cell)][static_cast<std::size_t>(idx)];
            const Face& f = mesh.faces[static_cast<std::size_t>(entry.face)];
            x_next = f.barycenter + tau;
            xi += e_cur - x_next;
            tau += f.barycenter - mesh.faces[static_cast<std::size_t>(f.twin)].barycenter;
            cell = entry.cell;
        }
        if (field != nullptr)
            s += x_next - e_cur + (*field)(x) * kernel.dt;
        const Vec2 dm = x_next - mean;
        m += dm;
        sum_dm2 += dm.norm2();
        sup_abs_m = {std::max(sup_abs_m.x, std::abs(m.x)), std::max(sup_abs_m.y, std::abs(m.y))};
        x = x_next;
    }
};

} // namespace

ChainPath sample_path(const TransitionKernel& kernel, int k0, int n_steps, std::uint64_t seed) {
    if (kernel.kind == TransitionKernel::Kind::co)
        throw std::invalid_argument("sample_path: co kernel is not Markovian");
    if (n_steps < 0) throw std::invalid_argument("sample_path: n_steps must be >= 0");
    ChainPath p;
    p.seed = seed;
    p.kind = kernel.kind;
    p.cells.reserve(static_cast<std::size_t>(n_steps) + 1);
    p.faces.reserve(static_cast<std::size_t>(n_steps));
    int cell = k0;
    p.cells.push_back(cell);
    for (int n = 0; n < n_steps; ++n) {
        const int idx = sample_row(kernel, cell, rng::uniform01(seed, static_cast<std::uint64_t>(n)));
        if (idx < 0) {
            p.faces.push_back(-1);
        } else {
            const auto& e = kernel.rows[static_cast<std::size_t>(cell)][static_cast<std::size_t>(idx)];
            p.faces.push_back(e.face);
            cell = e.cell;
        }
        p.cells.push_back(cell);
    }
    return p;
}

int sample_final_cell(const TransitionKernel& kernel, int k0, int n_steps, std::uint64_t seed) {
    int cell = k0;
    for (int n = 0; n < n_steps; ++n) {
        const int idx = sample_row(kernel, cell, rng::uniform01(seed, static_cast<std::uint64_t>(n)));
        if (idx >= 0)
            cell = kernel.rows[static_cast<std::size_t>(cell)][static_cast<std::size_t>(idx)].cell;
    }
    return cell;
}

Trajectory trace_points(const ChainPath& path, const Mesh& mesh, const EnteringBarycenters& eb) {
    Trajectory t;
    t.path = path;
    t.points.reserve(path.cells.size());
    t.offsets.reserve(path.cells.size());

    Vec2 tau;
    int cell = path.cells.front();
    t.points.push_back(eb.point[static_cast<std::size_t>(cell)]);
    t.offsets.push_back(tau);
    for (std::size_t n = 0; n < path.faces.size(); ++n) {
        const int fid = path.faces[n];
        if (fid < 0) {
            cell = path.cells[n + 1];
            t.points.push_back(eb.point[static_cast<std::size_t>(cell)] + tau);
        } else {
            const Face& f = mesh.faces[static_cast<std::size_t>(fid)];
            t.points.push_back(f.barycenter + tau);
            tau += f.barycenter - mesh.faces[static_cast<std::size_t>(f.twin)].barycenter;
            cell = f.cell_to;
        }
        t.offsets.push_back(tau);
    }
    return t;
}

Decomposition decompose(const Trajectory& traj, const Mesh& mesh, const VelocityField& field,
                        const TransitionKernel& kernel, const EnteringBarycenters& eb) {
    const auto& path = traj.path;
    Decomposition d;
    const std::size_t len = path.cells.size();
    d.s.assign(len, {});
    d.r.assign(len, {});
    d.m.assign(len, {});
    const bool reversed = kernel.kind == TransitionKernel::Kind::reversed;
    if (reversed) d.xi.assign(len, {});

    WalkCore core(mesh, kernel, eb, &field);
    core.start(path.cells.front());
    for (std::size_t n = 0; n + 1 < len; ++n) {
        int idx = -1;
        if (path.faces[n] >= 0) {
            const auto& row = kernel.rows[static_cast<std::size_t>(path.cells[n])];
            for (std::size_t i = 0; i < row.size(); ++i)
                if (row[i].face == path.faces[n]) idx = static_cast<int>(i);
            if (idx < 0) throw std::invalid_argument("decompose: path face not in kernel row");
        }
        core.advance(idx);
        d.s[n + 1] = core.s;
        d.r[n + 1] = core.r;
        d.m[n + 1] = core.m;
        if (reversed) d.xi[n + 1] = core.xi;
    }
    return d;
}

McEstimate mc_expectation(const TransitionKernel& kernel, const CellField& u0, int k0,
                          int n_steps, std::size_t samples, std::uint64_t master_seed,
                          int threads) {
    if (samples < 2) throw std::invalid_argument("mc_expectation: need M >= 2");
    std::vector<double> vals(samples);
    stats::parallel_for(samples, threads, [&](std::size_t i) {
        const int cell = sample_final_cell(kernel, k0, n_steps, rng::derive_seed(master_seed, i));
        vals[i] = u0[cell];
    });
    const auto m = stats::moments(vals);
    McEstimate est;
    est.mean = m.mean;
    est.stderr_mean = m.stderr_mean;
    est.samples = samples;
    est.seed = master_seed;
    return est;
}

namespace {

void enumeration_guard(const TransitionKernel& kernel, int n_steps) {
    const double support = static_cast<double>(kernel.max_row_support());
    if (std::pow(std::max(support, 1.0), n_steps) > 1e7)
        throw GuardError("enumeration guard exceeded (support^N > 1e7); use a smaller N");
}

} // namespace

EnumerationResult enumerate_expectation(const TransitionKernel& kernel, const CellField& u0,
                                        int k0, int n_steps) {
    enumeration_guard(kernel, n_steps);
    EnumerationResult res;
    // Depth-first over positive-weight continuations.
    std::function<void(int, int, double)> dfs = [&](int cell, int depth, double prob) {
        if (depth == n_steps) {
            res.value += prob * u0[cell];
            res.path_count += 1;
            return;
        }
        const double self = kernel.self_weight[static_cast<std::size_t>(cell)];
        for (const auto& e : kernel.rows[static_cast<std::size_t>(cell)])
            if (e.weight > 0.0) dfs(e.cell, depth + 1, prob * e.weight);
        if (self > 0.0) dfs(cell, depth + 1, prob * self);
    };
    dfs(k0, 0, 1.0);
    return res;
}

void enumerate_paths(const TransitionKernel& kernel, int k0, int n_steps,
                     const std::function<void(const std::vector<int>&, const std::vector<int>&,
                                              double)>& visit) {
    enumeration_guard(kernel, n_steps);
    std::vector<int> cells{k0};
    std::vector<int> faces;
    std::function<void(double)> dfs = [&](double prob) {
        if (static_cast<int>(faces.size()) == n_steps) {
            visit(cells, faces, prob);
            return;
        }
        const int cell = cells.back();
        for (const auto& e : kernel.rows[static_cast<std::size_t>(cell)]) {
            if (e.weight <= 0.0) continue;
            cells.push_back(e.cell);
            faces.push_back(e.face);
            dfs(prob * e.weight);
            cells.pop_back();
            faces.pop_back();
        }
        const double self = kernel.self_weight[static_cast<std::size_t>(cell)];
        if (self > 0.0) {
            cells.push_back(cell);
            faces.push_back(-1);
            dfs(prob * self);
            cells.pop_back();
            faces.pop_back();
        }
    };
    dfs(1.0);
}

double path_probability(const TransitionKernel& kernel, const std::vector<int>& cells,
                        const std::vector<int>& faces) {
    double p = 1.0;
    for (std::size_t n = 0; n < faces.size(); ++n) {
        if (faces[n] < 0)
            p *= kernel.self_weight[static_cast<std::size_t>(cells[n])];
        else
            p *= kernel.weight_through(cells[n], faces[n]);
    }
    return p;
}

std::vector<std::vector<double>> empirical_transition(const std::vector<ChainPath>& paths,
                                                      std::size_t n_cells, bool reversed,
                                                      std::vector<double>* source_counts) {
    if (paths.empty()) throw std::invalid_argument("empirical_transition: empty batch");
    std::vector<std::vector<double>> freq(n_cells, std::vector<double>(n_cells, 0.0));
    std::vector<double> total(n_cells, 0.0);
    for (const auto& p : paths) {
        for (std::size_t n = 0; n + 1 < p.cells.size(); ++n) {
            int from = p.cells[n], to = p.cells[n + 1];
            if (reversed) std::swap(from, to);
            freq[static_cast<std::size_t>(from)][static_cast<std::size_t>(to)] += 1.0;
            total[static_cast<std::size_t>(from)] += 1.0;
        }
    }
    for (std::size_t k = 0; k < n_cells; ++k)
        if (total[k] > 0.0)
            for (auto& v : freq[k]) v /= total[k];
    if (source_counts != nullptr) *source_counts = total;
    return freq;
}

LebesgueSampler::LebesgueSampler(const Mesh& mesh) {
    if (!mesh.periodic)
        throw std::invalid_argument("Lebesgue start needs a periodic mesh");
    cdf_.resize(mesh.cells.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < mesh.cells.size(); ++i) {
        acc += mesh.cells[i].volume;
        cdf_[i] = acc;
    }
    for (auto& v : cdf_) v /= acc;
}

int LebesgueSampler::sample(std::uint64_t seed, std::uint64_t counter) const {
    const double u = rng::uniform01(seed, counter);
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()),
                                                  cdf_.size() - 1));
}

int sample_lebesgue_start(const Mesh& mesh, std::uint64_t seed) {
    return LebesgueSampler(mesh).sample(seed, 0);
}

WalkStats walk_stats(const TransitionKernel& kernel, const Mesh& mesh,
                     const VelocityField& field, const EnteringBarycenters& eb, int k0,
                     int n_steps, std::uint64_t seed) {
    WalkCore core(mesh, kernel, eb, &field);
    core.start(k0);
    WalkStats w;
    w.x0 = core.x;
    Vec2 drift;
    for (int n = 0; n < n_steps; ++n) {
        drift += field(core.x) * kernel.dt;
        const int idx = sample_row(kernel, core.cell, rng::uniform01(seed, static_cast<std::uint64_t>(n)));
        const Vec2 x_prev = core.x;
        core.advance(idx);
        if (n == 0) w.first_displacement = core.x - x_prev;
    }
    w.final_cell = core.cell;
    w.x_n = core.x;
    w.m_n = core.m;
    w.r_n = core.r;
    w.drift_sum = drift;
    w.sup_abs_m = core.sup_abs_m;
    w.sum_dm2 = core.sum_dm2;
    return w;
}

void dump_trajectory_csv(const Trajectory& traj, const Decomposition& dec, const Mesh& mesh,
                         const std::string& csv_path, const std::string& header_json_path,
                         std::uint64_t kernel_hash) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("dump_trajectory_csv: cannot open " + csv_path);
    const bool two_d = mesh.dimension == 2;
    csv << (two_d ? "n,cell,x,y,S_x,S_y,R_x,R_y,M_x,M_y\n" : "n,cell,x,S,R,M\n");
    char buf[64];
    auto put = [&](double v, bool comma = true) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        csv << buf;
        if (comma) csv << ',';
    };
    for (std::size_t n = 0; n < traj.points.size(); ++n) {
        csv << n << ',' << traj.path.cells[n] << ',';
        put(traj.points[n].x, true);
        if (two_d) put(traj.points[n].y, true);
        put(dec.s[n].x, true);
        if (two_d) put(dec.s[n].y, true);
        put(dec.r[n].x, true);
        if (two_d) put(dec.r[n].y, true);
        put(dec.m[n].x, two_d);
        if (two_d) put(dec.m[n].y, false);
        csv << '\n';
    }
    nlohmann::ordered_json hdr;
    hdr["seed"] = traj.path.seed;
    hdr["kernel_hash"] = kernel_hash;
    std::ofstream h(header_json_path);
    if (!h) throw std::runtime_error("dump_trajectory_csv: cannot open " + header_json_path);
    h << hdr.dump(1) << '\n';
}

void write_batch_manifest(const std::string& path, std::uint64_t master_seed, std::size_t count) {
    nlohmann::ordered_json doc;
    doc["master_seed"] = master_seed;
    doc["derivation"] = "splitmix64(master ^ splitmix64(index))";
    auto seeds = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < count; ++i) seeds.push_back(rng::derive_seed(master_seed, i));
    doc["seeds"] = seeds;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_batch_manifest: cannot open " + path);
    out << doc.dump(1) << '\n';
}

} // namespace charflow
