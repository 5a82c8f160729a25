#include "charflow/field.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace charflow {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

// Mean of sin(w0 + w1 t) over t in [0,1]; stable as w1 -> 0.
double mean_sin(double w0, double w1) {
    const double half = 0.5 * w1;
    const double sinc = std::abs(half) < 1e-8 ? 1.0 - half * half / 6.0 : std::sin(half) / half;
    return std::sin(w0 + half) * sinc;
}

// 5-point Gauss-Legendre on [-1,1].
constexpr double gl5_x[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                             0.5384693101056831, 0.9061798459386640};
constexpr double gl5_w[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                             0.4786286704993665, 0.2369268850561891};

constexpr double gl3_x[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
constexpr double gl3_w[3] = {0.5555555555555556, 0.8888888888888889, 0.5555555555555556};

// 7-point degree-5 symmetric triangle rule (Radon), weights sum to 1.
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
Vec2 triangle_rule(const Vec2& a, const Vec2& b, const Vec2& c, const F& f) {
    Vec2 s;
    for (const auto& n : tri7)
        s += f(a * n.l1 + b * n.l2 + c * n.l3) * n.w;
    return s;
}

// Composite rule over 4^depth congruent subtriangles.
template <class F>
Vec2 triangle_composite(const Vec2& a, const Vec2& b, const Vec2& c, const F& f, int depth) {
    if (depth == 0) return triangle_rule(a, b, c, f);
    const Vec2 ab = (a + b) * 0.5, bc = (b + c) * 0.5, ca = (c + a) * 0.5;
    return (triangle_composite(a, ab, ca, f, depth - 1) +
            triangle_composite(ab, b, bc, f, depth - 1) +
            triangle_composite(ca, bc, c, f, depth - 1) +
            triangle_composite(ab, bc, ca, f, depth - 1)) * 0.25;
}

void face_endpoints(const Face& f, Vec2& p, Vec2& q) {
    const Vec2 t = perp(f.normal);
    p = f.barycenter - t * (0.5 * f.area);
    q = f.barycenter + t * (0.5 * f.area);
}

} // namespace

int VelocityField::dimension() const { return dim_; }

Vec2 VelocityField::operator()(const Vec2& x) const {
    switch (kind) {
    case Kind::constant:
        return v;
    case Kind::sine_1d:
        return {base + amp * std::sin(two_pi * freq * x.x), 0.0};
    case Kind::stream_2d: {
        const double u = two_pi * freq * x.x, w = two_pi * freq * x.y;
        return {-amp * std::cos(u) * std::sin(w), amp * std::sin(u) * std::cos(w)};
    }
    case Kind::compressible_2d:
        return {v.x + amp * std::sin(two_pi * freq * x.x),
                v.y + amp * std::sin(two_pi * freq * x.y)};
    }
    return {};
}

double VelocityField::sup_norm() const {
    switch (kind) {
    case Kind::constant: return v.norm();
    case Kind::sine_1d: return std::abs(base) + std::abs(amp);
    case Kind::stream_2d: return std::abs(amp);
    case Kind::compressible_2d:
        return std::hypot(std::abs(v.x) + std::abs(amp), std::abs(v.y) + std::abs(amp));
    }
    return 0.0;
}

double VelocityField::lipschitz() const {
    switch (kind) {
    case Kind::constant: return 0.0;
    case Kind::sine_1d: return std::abs(amp) * two_pi * freq;
    case Kind::stream_2d: return std::abs(amp) * two_pi * freq;
    case Kind::compressible_2d: return std::abs(amp) * two_pi * freq;
    }
    return 0.0;
}

double VelocityField::div_sup_norm() const {
    switch (kind) {
    case Kind::constant: return 0.0;
    case Kind::sine_1d: return std::abs(amp) * two_pi * freq;
    case Kind::stream_2d: return 0.0;
    case Kind::compressible_2d: return 2.0 * std::abs(amp) * two_pi * freq;
    }
    return 0.0;
}

bool VelocityField::divergence_free() const {
    return kind == Kind::constant || kind == Kind::stream_2d;
}

std::string VelocityField::describe() const {
    switch (kind) {
    case Kind::constant: return "constant";
    case Kind::sine_1d: return "sine_1d";
    case Kind::stream_2d: return "stream_2d";
    case Kind::compressible_2d: return "compressible_2d";
    }
    return "?";
}

VelocityField VelocityField::constant(const Vec2& value, int dim) {
    VelocityField f;
    f.kind = Kind::constant;
    f.v = value;
    f.dim_ = dim;
    return f;
}

VelocityField VelocityField::sine_1d(double base, double amp, double freq) {
    VelocityField f;
    f.kind = Kind::sine_1d;
    f.base = base;
    f.amp = amp;
    f.freq = freq;
    f.dim_ = 1;
    return f;
}

VelocityField VelocityField::stream_2d(double amp, double freq) {
    VelocityField f;
    f.kind = Kind::stream_2d;
    f.amp = amp;
    f.freq = freq;
    f.dim_ = 2;
    return f;
}

VelocityField VelocityField::compressible_2d(const Vec2& drift, double amp, double freq) {
    VelocityField f;
    f.kind = Kind::compressible_2d;
    f.v = drift;
    f.amp = amp;
    f.freq = freq;
    f.dim_ = 2;
    return f;
}

Vec2 face_mean(const VelocityField& field, const Mesh& mesh, int face_id) {
    const Face& f = mesh.faces[static_cast<std::size_t>(face_id)];
    if (mesh.dimension == 1) {
        // 1-D convention: a_{K,L} = a(K cap L), the exact point value.
        return field(f.barycenter);
    }
    Vec2 p, q;
    face_endpoints(f, p, q);
    const Vec2 d = q - p;
    switch (field.kind) {
    case VelocityField::Kind::constant:
        return field.v;
    case VelocityField::Kind::stream_2d: {
        const double u0 = two_pi * field.freq * p.x, u1 = two_pi * field.freq * d.x;
        const double v0 = two_pi * field.freq * p.y, v1 = two_pi * field.freq * d.y;
        const double sp = mean_sin(u0 + v0, u1 + v1);   // mean sin(U+V)
        const double sm = mean_sin(u0 - v0, u1 - v1);   // mean sin(U-V)
        // cos U sin V = (sin(U+V) - sin(U-V))/2 ; sin U cos V = (sin(U+V)+sin(U-V))/2
        return {-field.amp * 0.5 * (sp - sm), field.amp * 0.5 * (sp + sm)};
    }
    case VelocityField::Kind::compressible_2d: {
        const double u0 = two_pi * field.freq * p.x, u1 = two_pi * field.freq * d.x;
        const double v0 = two_pi * field.freq * p.y, v1 = two_pi * field.freq * d.y;
        return {field.v.x + field.amp * mean_sin(u0, u1),
                field.v.y + field.amp * mean_sin(v0, v1)};
    }
    case VelocityField::Kind::sine_1d:
        throw std::invalid_argument("face_mean: sine_1d field on a 2-D mesh");
    }
    return {};
}

Vec2 face_mean_quadrature(const VelocityField& field, const Mesh& mesh, int face_id, int parts) {
    const Face& f = mesh.faces[static_cast<std::size_t>(face_id)];
    if (mesh.dimension == 1) return field(f.barycenter);
    Vec2 p, q;
    face_endpoints(f, p, q);
    Vec2 s;
    for (int k = 0; k < parts; ++k) {
        const Vec2 a = p + (q - p) * (static_cast<double>(k) / parts);
        const Vec2 b = p + (q - p) * (static_cast<double>(k + 1) / parts);
        for (int i = 0; i < 3; ++i) {
            const double t = 0.5 * (1.0 + gl3_x[i]);
            s += field(a + (b - a) * t) * (0.5 * gl3_w[i]);
        }
    }
    return s / parts;
}

Vec2 cell_mean(const VelocityField& field, const Mesh& mesh, int cell_id) {
    const Cell& c = mesh.cells[static_cast<std::size_t>(cell_id)];
    if (mesh.dimension == 1) {
        const double x0 = c.vertices[0].x, x1 = c.vertices[1].x;
        Vec2 s;
        for (int i = 0; i < 5; ++i) {
            const double t = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * gl5_x[i];
            s += field({t, 0.0}) * (0.5 * gl5_w[i]);
        }
        return s;
    }
    if (c.vertices.size() != 3)
        throw std::invalid_argument("cell_mean: 2-D cells must be triangles");
    return triangle_composite(c.vertices[0], c.vertices[1], c.vertices[2],
                              [&](const Vec2& x) { return field(x); }, 2);
}

double cell_divergence(const FieldMoments& moments, const Mesh&, int cell_id) {
    return moments.cell_div[static_cast<std::size_t>(cell_id)];
}

FieldMoments compute_moments(const VelocityField& field, const Mesh& mesh) {
    if (field.dimension() != mesh.dimension)
        throw std::invalid_argument("compute_moments: field/mesh dimension mismatch");
    FieldMoments mom;
    mom.face_mean.resize(mesh.faces.size());
    // Compute each geometric face once and mirror it onto the twin record, so
    // the p/q reversal identity holds to rounding even across periodic wraps.
    for (const auto& f : mesh.faces) {
        if (!mesh.is_primary_face(f.id)) continue;
        const Vec2 m = face_mean(field, mesh, f.id);
        mom.face_mean[static_cast<std::size_t>(f.id)] = m;
        mom.face_mean[static_cast<std::size_t>(f.twin)] = m;
    }
    mom.cell_mean.resize(mesh.cells.size());
    mom.cell_div.resize(mesh.cells.size());
    for (const auto& c : mesh.cells) {
        mom.cell_mean[static_cast<std::size_t>(c.id)] = cell_mean(field, mesh, c.id);
        double flux = 0.0;
        for (int fid : mesh.cell_faces[static_cast<std::size_t>(c.id)]) {
            const Face& f = mesh.faces[static_cast<std::size_t>(fid)];
            flux += f.area * dot(mom.face_mean[static_cast<std::size_t>(fid)], f.normal);
        }
        mom.cell_div[static_cast<std::size_t>(c.id)] = flux / c.volume;
    }
    mom.quadrature_order = mesh.dimension == 1 ? 9 : 5;  // cell means
    return mom;
}

} // namespace charflow
