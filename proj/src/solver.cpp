#include "charflow/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace charflow {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

constexpr double gl5_x[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                             0.5384693101056831, 0.9061798459386640};
constexpr double gl5_w[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                             0.4786286704993665, 0.2369268850561891};

struct TriNode { double l1, l2, l3, w; };
const TriNode tri7[7] = {
    {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.225},
    {0.0597158717897698, 0.4701420641051151, 0.4701420641051151, 0.1323941527885062},
    {0.4701420641051151, 0.0597158717897698, 0.4701420641051151, 0.1323941527885062},
    {0.4701420641051151, 0.4701420641051151, 0.0597158717897698, 0.1323941527885062},
    {0.7974269853530873, 0.1012865073234563, 0.1012865073234563, 0.1259391805448271},
    {0.1012865073234563, 0.7974269853530873, 0.1012865073234563, 0.1259391805448271},
    {0.1012865073234563, 0.1012865073234563, 0.7974269853530873, 0.1259391805448271},
};

template <class F>
double triangle_mean(const Vec2& a, const Vec2& b, const Vec2& c, const F& f, int depth) {
    if (depth == 0) {
        double s = 0.0;
        for (const auto& n : tri7) s += f(a * n.l1 + b * n.l2 + c * n.l3) * n.w;
        return s;
    }
    const Vec2 ab = (a + b) * 0.5, bc = (b + c) * 0.5, ca = (c + a) * 0.5;
    return 0.25 * (triangle_mean(a, ab, ca, f, depth - 1) + triangle_mean(ab, b, bc, f, depth - 1) +
                   triangle_mean(ca, bc, c, f, depth - 1) + triangle_mean(ab, bc, ca, f, depth - 1));
}

double wrap01(double x) { return x - std::floor(x); }

// Area of the part of triangle abc with x < threshold (half-plane clip).
double clipped_area(Vec2 a, Vec2 b, Vec2 c, double threshold) {
    std::vector<Vec2> poly{a, b, c}, out;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % poly.size()];
        const bool pin = p.x < threshold, qin = q.x < threshold;
        if (pin) out.push_back(p);
        if (pin != qin) {
            const double t = (threshold - p.x) / (q.x - p.x);
            out.push_back(p + (q - p) * t);
        }
    }
    if (out.size() < 3) return 0.0;
    double a2 = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
        a2 += cross(out[i], out[(i + 1) % out.size()]);
    return 0.5 * a2;
}

} // namespace

double InitialDatum::operator()(const Vec2& x) const {
    switch (kind) {
    case Kind::sine:
        // 1-D points carry y = 0, so the cos factor drops out there.
        return amp * std::sin(two_pi * freq * x.x) * std::cos(two_pi * freq * x.y);
    case Kind::lipschitz_hat: {
        Vec2 d = x - center;
        if (periodic) {
            d.x -= period.x * std::round(d.x / period.x);
            if (period.y > 0.0) d.y -= period.y * std::round(d.y / period.y);
        }
        return std::max(0.0, 1.0 - slope * d.norm());
    }
    case Kind::step:
        return wrap01(x.x / period.x) * period.x < threshold ? 1.0 : 0.0;
    case Kind::gaussian: {
        Vec2 d = x - center;
        if (periodic) {
            d.x -= period.x * std::round(d.x / period.x);
            if (period.y > 0.0) d.y -= period.y * std::round(d.y / period.y);
        }
        return amp * std::exp(-d.norm2() / (2.0 * width * width));
    }
    }
    return 0.0;
}

double InitialDatum::lipschitz() const {
    switch (kind) {
    case Kind::sine: return std::abs(amp) * two_pi * freq;
    case Kind::lipschitz_hat: return slope;
    case Kind::step: return 0.0;
    case Kind::gaussian: return amp * std::exp(-0.5) / width;
    }
    return 0.0;
}

double InitialDatum::bv_seminorm_1d() const {
    if (kind == Kind::step) return 2.0;  // two jumps per period
    return lipschitz();                  // |u'|_L1 <= kappa per unit length
}

std::vector<double> InitialDatum::breakpoints_1d() const {
    switch (kind) {
    case Kind::step: return {0.0, threshold};
    case Kind::lipschitz_hat: {
        const double r = 1.0 / slope;
        return {center.x - r, center.x, center.x + r};
    }
    default: return {};
    }
}

InitialDatum InitialDatum::sine(double freq, double amp, int dim) {
    InitialDatum d;
    d.kind = Kind::sine;
    d.freq = freq;
    d.amp = amp;
    (void)dim;
    return d;
}

InitialDatum InitialDatum::lipschitz_hat(const Vec2& center, double slope) {
    InitialDatum d;
    d.kind = Kind::lipschitz_hat;
    d.center = center;
    d.slope = slope;
    return d;
}

InitialDatum InitialDatum::step(double threshold) {
    InitialDatum d;
    d.kind = Kind::step;
    d.threshold = threshold;
    return d;
}

InitialDatum InitialDatum::gaussian(const Vec2& center, double width) {
    InitialDatum d;
    d.kind = Kind::gaussian;
    d.center = center;
    d.width = width;
    return d;
}

namespace {

double interval_average(const InitialDatum& datum, double x0, double x1) {
    // Split at periodic images of the datum's breakpoints so each piece is
    // smooth; GL-5 is then exact for the piecewise-affine catalog entries.
    std::vector<double> cuts{x0, x1};
    for (double b : datum.breakpoints_1d()) {
        const double p = datum.period.x;
        double img = b + p * std::ceil((x0 - b) / p);
        for (; img < x1; img += p)
            if (img > x0) cuts.push_back(img);
    }
    std::sort(cuts.begin(), cuts.end());
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double a = cuts[i], b = cuts[i + 1];
        if (!(b > a)) continue;
        double s = 0.0;
        for (int g = 0; g < 5; ++g)
            s += datum({0.5 * (a + b) + 0.5 * (b - a) * gl5_x[g], 0.0}) * (0.5 * gl5_w[g]);
        acc += s * (b - a);
    }
    return acc / (x1 - x0);
}

} // namespace

CellField project_initial(const InitialDatum& datum, const Mesh& mesh) {
    CellField u;
    u.values.resize(mesh.cells.size());
    u.n = 0;
    for (const auto& c : mesh.cells) {
        double v;
        if (mesh.dimension == 1) {
            v = interval_average(datum, c.vertices[0].x, c.vertices[1].x);
        } else if (datum.kind == InitialDatum::Kind::step) {
            v = clipped_area(c.vertices[0], c.vertices[1], c.vertices[2], datum.threshold) /
                c.volume;
        } else {
            v = triangle_mean(c.vertices[0], c.vertices[1], c.vertices[2],
                              [&](const Vec2& x) { return datum(x); }, 2);
        }
        u.values[static_cast<std::size_t>(c.id)] = v;
    }
    return u;
}

CellField apply_step(const TransitionKernel& p, const CellField& u) {
    if (p.kind != TransitionKernel::Kind::forward)
        throw std::invalid_argument("apply_step: forward kernel required");
    if (p.size() != u.values.size())
        throw std::invalid_argument("apply_step: size mismatch");
    CellField out;
    out.values.resize(u.values.size());
    out.n = u.n + 1;
    out.dt = p.dt;
    for (std::size_t k = 0; k < p.rows.size(); ++k) {
        double s = p.self_weight[k] * u.values[k];
        for (const auto& e : p.rows[k]) s += e.weight * u.values[static_cast<std::size_t>(e.cell)];
        out.values[k] = s;
    }
    return out;
}

CellField run(const TransitionKernel& p, const CellField& u0, int n_steps) {
    if (n_steps < 0) throw std::invalid_argument("run: n_steps must be >= 0");
    CellField u = u0;
    u.dt = p.dt;
    for (int i = 0; i < n_steps; ++i) u = apply_step(p, u);
    return u;
}

Vec2 exact_characteristic(const std::function<Vec2(const Vec2&)>& a, double t, const Vec2& x,
                          int substeps) {
    if (t == 0.0) return x;
    const int n = std::max(1, substeps);
    const double dt = t / n;
    Vec2 z = x;
    for (int i = 0; i < n; ++i) {
        const Vec2 k1 = -1.0 * a(z);
        const Vec2 k2 = -1.0 * a(z + k1 * (0.5 * dt));
        const Vec2 k3 = -1.0 * a(z + k2 * (0.5 * dt));
        const Vec2 k4 = -1.0 * a(z + k3 * dt);
        z += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    }
    return z;
}

Vec2 exact_characteristic(const VelocityField& field, double t, const Vec2& x, int substeps) {
    if (field.kind == VelocityField::Kind::constant)
        return x - field.v * t;  // RK4 reproduces this exactly; skip the loop
    return exact_characteristic([&](const Vec2& z) { return field(z); }, t, x, substeps);
}

double exact_solution(const InitialDatum& datum, const VelocityField& field, double t,
                      const Vec2& x, int substeps) {
    return datum(exact_characteristic(field, t, x, substeps));
}

double modified_solution(const InitialDatum& datum, double a, double h, double dt, double t,
                         double x) {
    if (!(a * dt <= h * (1.0 + 1e-12)))
        throw std::invalid_argument("modified_solution: needs a dt <= h");
    const double diffusion = a * (h - a * dt) / 2.0;
    const double xs = x - a * t;
    if (t == 0.0 || diffusion <= 0.0) return datum({xs, 0.0});
    if (datum.kind == InitialDatum::Kind::sine) {
        const double w = two_pi * datum.freq;
        return datum.amp * std::exp(-diffusion * w * w * t) * std::sin(w * xs);
    }
    // v(t,x) = (1/sqrt(pi)) int e^{-s^2} u0(xs - s sqrt(4 D t)) ds
    const double scale = std::sqrt(4.0 * diffusion * t);
    const int n = 3200;
    const double lim = 8.0, ds = 2.0 * lim / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {  // composite Simpson
        const double s = -lim + i * ds;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        acc += w * std::exp(-s * s) * datum({xs - s * scale, 0.0});
    }
    return acc * ds / 3.0 / std::sqrt(std::numbers::pi);
}

CellErrors per_cell_errors(const CellField& u_num, const InitialDatum& datum,
                           const VelocityField& field, const Mesh& mesh, double t, double p,
                           int substeps_per_step) {
    const int substeps = std::max(1, substeps_per_step * std::max(1, u_num.n));
    auto ref = [&](const Vec2& x) { return exact_solution(datum, field, t, x, substeps); };

    CellErrors out;
    out.lp_mass.assign(mesh.cells.size(), 0.0);
    for (const auto& c : mesh.cells) {
        const double uk = u_num[c.id];
        double cell_l1 = 0.0, cell_p = 0.0;
        if (mesh.dimension == 1) {
            const double x0 = c.vertices[0].x, x1 = c.vertices[1].x;
            for (int g = 0; g < 5; ++g) {
                const double x = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * gl5_x[g];
                const double d = std::abs(uk - ref({x, 0.0}));
                cell_l1 += 0.5 * gl5_w[g] * d;
                cell_p += 0.5 * gl5_w[g] * std::pow(d, p);
                out.linf = std::max(out.linf, d);
            }
        } else {
            auto absdiff = [&](const Vec2& x) { return std::abs(uk - ref(x)); };
            cell_l1 = triangle_mean(c.vertices[0], c.vertices[1], c.vertices[2], absdiff, 1);
            cell_p = triangle_mean(c.vertices[0], c.vertices[1], c.vertices[2],
                                   [&](const Vec2& x) { return std::pow(absdiff(x), p); }, 1);
            for (const auto& n : tri7)
                out.linf = std::max(out.linf, absdiff(c.vertices[0] * n.l1 + c.vertices[1] * n.l2 +
                                                      c.vertices[2] * n.l3));
        }
        out.linf = std::max(out.linf, std::abs(uk - ref(c.barycenter)));
        for (int fid : mesh.cell_faces[static_cast<std::size_t>(c.id)])
            out.linf = std::max(out.linf,
                                std::abs(uk - ref(mesh.faces[static_cast<std::size_t>(fid)].barycenter)));
        out.l1 += cell_l1 * c.volume;
        out.lp_mass[static_cast<std::size_t>(c.id)] = cell_p * c.volume;
    }
    return out;
}

double localized_lp(const CellErrors& errors, const Mesh& mesh, const EnteringBarycenters& eb,
                    const Vec2& center, double p) {
    const double radius = std::sqrt(mesh.h_max);
    double loc = 0.0;
    for (std::size_t k = 0; k < errors.lp_mass.size(); ++k)
        if (mesh.periodic_delta(center, eb.point[k]).norm() <= radius) loc += errors.lp_mass[k];
    return std::pow(std::pow(mesh.h_max, -mesh.dimension / 2.0) * loc, 1.0 / p);
}

ErrorReport error_norms(const CellField& u_num, const InitialDatum& datum,
                        const VelocityField& field, const Mesh& mesh, double t,
                        const ErrorNormOptions& opts) {
    ErrorReport rep;
    rep.n = u_num.n;
    rep.dt = u_num.dt;
    rep.h = mesh.h_max;
    rep.local_p = opts.local_p;
    rep.local_radius = std::sqrt(mesh.h_max);

    EnteringBarycenters local_eb;
    const EnteringBarycenters* eb = opts.entering;
    if (eb == nullptr) {
        const VelocityField* f = opts.field_for_entering ? opts.field_for_entering : &field;
        const FieldMoments mom = compute_moments(*f, mesh);
        local_eb = compute_entering_barycenters(mesh, mom, u_num.dt > 0 ? u_num.dt : 1.0, *f);
        eb = &local_eb;
    }

    const CellErrors errors =
        per_cell_errors(u_num, datum, field, mesh, t, opts.local_p, opts.substeps_per_step);
    rep.l1 = errors.l1;
    rep.linf = errors.linf;
    rep.local_value = localized_lp(errors, mesh, *eb, opts.local_center, opts.local_p);
    return rep;
}

void dump_cellfield_csv(const CellField& u, const std::string& csv_path,
                        const std::string& header_json_path, std::uint64_t mesh_hash) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("dump_cellfield_csv: cannot open " + csv_path);
    csv << "cell_id,value\n";
    char buf[64];
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", u.values[i]);
        csv << i << ',' << buf << '\n';
    }
    nlohmann::ordered_json hdr;
    hdr["n"] = u.n;
    hdr["dt"] = u.dt;
    hdr["mesh_hash"] = mesh_hash;
    std::ofstream h(header_json_path);
    if (!h) throw std::runtime_error("dump_cellfield_csv: cannot open " + header_json_path);
    h << hdr.dump(1) << '\n';
}

} // namespace charflow
