#include "charflow/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace charflow {

namespace {

double face_flux(const Mesh& mesh, const FieldMoments& mom, int fid) {
    const Face& f = mesh.faces[static_cast<std::size_t>(fid)];
    return dot(mom.face_mean[static_cast<std::size_t>(fid)], f.normal);
}

void sort_row(std::vector<KernelEntry>& row) {
    std::sort(row.begin(), row.end(), [](const KernelEntry& a, const KernelEntry& b) {
        return a.cell != b.cell ? a.cell < b.cell : a.face < b.face;
    });
}

} // namespace

double TransitionKernel::row_sum(int cell) const {
    double s = self_weight[static_cast<std::size_t>(cell)];
    for (const auto& e : rows[static_cast<std::size_t>(cell)]) s += e.weight;
    return s;
}

double TransitionKernel::weight_through(int cell, int face) const {
    for (const auto& e : rows[static_cast<std::size_t>(cell)])
        if (e.face == face) return e.weight;
    return 0.0;
}

std::size_t TransitionKernel::max_row_support() const {
    std::size_t m = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        std::size_t s = rows[k].size() + (self_weight[k] != 0.0 ? 1 : 0);
        m = std::max(m, s);
    }
    return m;
}

TransitionKernel build_forward(const Mesh& mesh, const FieldMoments& moments, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("build_forward: dt must be positive");
    TransitionKernel k;
    k.kind = TransitionKernel::Kind::forward;
    k.dt = dt;
    k.mesh_hash = mesh.hash();
    k.rows.resize(mesh.cells.size());
    k.self_weight.resize(mesh.cells.size());

    int worst = -1;
    double worst_sum = 0.0;
    for (const auto& c : mesh.cells) {
        double sum = 0.0;
        auto& row = k.rows[static_cast<std::size_t>(c.id)];
        for (int fid : mesh.cell_faces[static_cast<std::size_t>(c.id)]) {
            const double flux = face_flux(mesh, moments, fid);
            if (flux < 0.0) {  // strict inflow defines K-
                const Face& f = mesh.faces[static_cast<std::size_t>(fid)];
                row.push_back({fid, f.cell_to, -flux * dt * f.area / c.volume});
                sum += row.back().weight;
            }
        }
        sort_row(row);
        if (sum > worst_sum) {
            worst_sum = sum;
            worst = c.id;
        }
        k.self_weight[static_cast<std::size_t>(c.id)] = 1.0 - sum;
    }
    if (worst_sum > 1.0 + 1e-12) {
        const double dt_ok = dt / worst_sum;
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "CFL violated in cell %d (weight sum %.6g > 1); admissible dt <= %.12g",
                      worst, worst_sum, dt_ok);
        throw CflError(worst, dt_ok, buf);
    }
    // The CFL boundary is accepted; clip rounding residue on the diagonal.
    for (auto& w : k.self_weight)
        if (w < 0.0) w = 0.0;
    return k;
}

TransitionKernel build_co(const Mesh& mesh, const FieldMoments& moments, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("build_co: dt must be positive");
    TransitionKernel k;
    k.kind = TransitionKernel::Kind::co;
    k.dt = dt;
    k.mesh_hash = mesh.hash();
    k.rows.resize(mesh.cells.size());
    k.self_weight.resize(mesh.cells.size());
    for (const auto& c : mesh.cells) {
        double sum = 0.0;
        auto& row = k.rows[static_cast<std::size_t>(c.id)];
        for (int fid : mesh.cell_faces[static_cast<std::size_t>(c.id)]) {
            const double flux = face_flux(mesh, moments, fid);
            if (flux > 0.0) {  // strict outflow defines K+
                const Face& f = mesh.faces[static_cast<std::size_t>(fid)];
                row.push_back({fid, f.cell_to, flux * dt * f.area / c.volume});
                sum += row.back().weight;
            }
        }
        sort_row(row);
        k.self_weight[static_cast<std::size_t>(c.id)] = 1.0 - sum;  // may be negative
    }
    return k;
}

TransitionKernel build_reversed(const Mesh& mesh, const FieldMoments& moments, double dt,
                                double eta) {
    if (!(eta > 0.0) || !(eta < 1.0))
        throw std::invalid_argument("build_reversed: eta must lie in (0,1)");
    double max_div_dt = 0.0;
    for (double d : moments.cell_div) max_div_dt = std::max(max_div_dt, std::abs(d) * dt);
    if (!(max_div_dt < 1.0 - eta)) {
        char buf[128];
        std::snprintf(buf, sizeof buf,
                      "reversed kernel needs max|delta_K| dt < 1 - eta: got %.6g >= %.6g",
                      max_div_dt, 1.0 - eta);
        throw GammaError(max_div_dt, buf);
    }

    const TransitionKernel p = build_forward(mesh, moments, dt);
    TransitionKernel g = build_co(mesh, moments, dt);
    g.kind = TransitionKernel::Kind::reversed;
    for (const auto& c : mesh.cells) {
        const double scale = 1.0 / (1.0 + moments.cell_div[static_cast<std::size_t>(c.id)] * dt);
        for (auto& e : g.rows[static_cast<std::size_t>(c.id)]) e.weight *= scale;
        g.self_weight[static_cast<std::size_t>(c.id)] =
            scale * p.self_weight[static_cast<std::size_t>(c.id)];
    }
    return g;
}

double cfl_max_dt(const Mesh& mesh, const FieldMoments& moments) {
    double rate = 0.0;  // max over cells of sum of inflow rates / |K|
    for (const auto& c : mesh.cells) {
        double s = 0.0;
        for (int fid : mesh.cell_faces[static_cast<std::size_t>(c.id)]) {
            const double flux = face_flux(mesh, moments, fid);
            if (flux < 0.0) s += -flux * mesh.faces[static_cast<std::size_t>(fid)].area / c.volume;
        }
        rate = std::max(rate, s);
    }
    if (rate == 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 / rate;
}

Vec2 entering_barycenter(const Mesh& mesh, const FieldMoments& moments, double dt,
                         const VelocityField& field, int cell) {
    const Cell& c = mesh.cells[static_cast<std::size_t>(cell)];
    if (mesh.dimension == 1) {
        // 1-D rule: the entering point for the reversed motion is the right
        // boundary when a > 0 throughout the cell, the left boundary when
        // a < 0 throughout, and the midpoint when a vanishes somewhere.
        const double x0 = c.vertices[0].x, x1 = c.vertices[1].x;
        bool all_pos = true, all_neg = true;
        const int samples = 32;
        for (int i = 0; i <= samples; ++i) {
            const double x = x0 + (x1 - x0) * static_cast<double>(i) / samples;
            const double a = field({x, 0.0}).x;
            all_pos = all_pos && a > 0.0;
            all_neg = all_neg && a < 0.0;
        }
        if (all_pos) return {x1, 0.0};
        if (all_neg) return {x0, 0.0};
        return c.barycenter;
    }
    double qsum = 0.0;
    Vec2 acc;
    for (int fid : mesh.cell_faces[static_cast<std::size_t>(cell)]) {
        const Face& f = mesh.faces[static_cast<std::size_t>(fid)];
        const double flux = dot(moments.face_mean[static_cast<std::size_t>(fid)], f.normal);
        if (flux > 0.0) {
            const double q = flux * dt * f.area / c.volume;
            qsum += q;
            acc += f.barycenter * q;
        }
    }
    if (qsum == 0.0) return c.barycenter;  // K+ empty: fallback
    return acc / qsum;
}

EnteringBarycenters compute_entering_barycenters(const Mesh& mesh, const FieldMoments& moments,
                                                 double dt, const VelocityField& field) {
    EnteringBarycenters eb;
    eb.point.resize(mesh.cells.size());
    eb.fallback.assign(mesh.cells.size(), false);
    for (const auto& c : mesh.cells) {
        eb.point[static_cast<std::size_t>(c.id)] =
            entering_barycenter(mesh, moments, dt, field, c.id);
        if (mesh.dimension >= 2) {
            bool has_out = false;
            for (int fid : mesh.cell_faces[static_cast<std::size_t>(c.id)])
                if (dot(moments.face_mean[static_cast<std::size_t>(fid)],
                        mesh.faces[static_cast<std::size_t>(fid)].normal) > 0.0)
                    has_out = true;
            eb.fallback[static_cast<std::size_t>(c.id)] = !has_out;
        }
    }
    return eb;
}

Vec2 green_residual(const Mesh& mesh, const FieldMoments& moments, double dt, int cell,
                    const Vec2& x0) {
    const Cell& c = mesh.cells[static_cast<std::size_t>(cell)];
    Vec2 r = moments.cell_mean[static_cast<std::size_t>(cell)] * dt;
    for (int fid : mesh.cell_faces[static_cast<std::size_t>(cell)]) {
        const Face& f = mesh.faces[static_cast<std::size_t>(fid)];
        const double flux = dot(moments.face_mean[static_cast<std::size_t>(fid)], f.normal);
        const double w = flux * dt * f.area / c.volume;
        if (flux < 0.0)
            r += (f.barycenter - x0) * (-w);  // p_{K,L} (x_{K,L} - x0)
        else if (flux > 0.0)
            r -= (f.barycenter - x0) * w;     // q_{K,J} (x_{K,J} - x0)
    }
    return r;
}

std::vector<double> invariance_residual(const TransitionKernel& p, const Mesh& mesh) {
    if (p.kind != TransitionKernel::Kind::forward)
        throw std::invalid_argument("invariance_residual: forward kernel required");
    std::vector<double> incoming(mesh.cells.size(), 0.0);
    for (std::size_t j = 0; j < p.rows.size(); ++j) {
        const double vol_j = mesh.cells[j].volume;
        incoming[j] += vol_j * p.self_weight[j];
        for (const auto& e : p.rows[j])
            incoming[static_cast<std::size_t>(e.cell)] += vol_j * e.weight;
    }
    std::vector<double> res(mesh.cells.size());
    for (std::size_t k = 0; k < res.size(); ++k)
        res[k] = mesh.cells[k].volume - incoming[k];
    return res;
}

double reversal_identity_residual(const TransitionKernel& p, const TransitionKernel& q,
                                  const Mesh& mesh) {
    double worst = 0.0;
    for (const auto& f : mesh.faces) {
        const double qk = q.weight_through(f.cell_from, f.id) *
                          mesh.cells[static_cast<std::size_t>(f.cell_from)].volume;
        const double pj = p.weight_through(f.cell_to, f.twin) *
                          mesh.cells[static_cast<std::size_t>(f.cell_to)].volume;
        worst = std::max(worst, std::abs(qk - pj));
    }
    return worst;
}

void dump_kernel_csv(const TransitionKernel& k, const std::string& csv_path,
                     const std::string& header_json_path) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("dump_kernel_csv: cannot open " + csv_path);
    csv << "K,L,weight\n";
    char buf[64];
    for (std::size_t row = 0; row < k.rows.size(); ++row) {
        std::snprintf(buf, sizeof buf, "%.17g", k.self_weight[row]);
        csv << row << ',' << row << ',' << buf << '\n';
        for (const auto& e : k.rows[row]) {
            std::snprintf(buf, sizeof buf, "%.17g", e.weight);
            csv << row << ',' << e.cell << ',' << buf << '\n';
        }
    }
    nlohmann::ordered_json hdr;
    hdr["dt"] = k.dt;
    hdr["kind"] = k.kind == TransitionKernel::Kind::forward ? "forward"
                : k.kind == TransitionKernel::Kind::co ? "co" : "reversed";
    hdr["mesh_hash"] = k.mesh_hash;
    std::ofstream h(header_json_path);
    if (!h) throw std::runtime_error("dump_kernel_csv: cannot open " + header_json_path);
    h << hdr.dump(1) << '\n';
}

} // namespace charflow
