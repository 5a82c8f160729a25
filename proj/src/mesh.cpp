#include "charflow/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace charflow {

namespace {

// Recompute volume, barycenter and diameter from the vertex list. Exact for
// intervals and triangles; the shoelace formula covers general polygons.
void finalize_cell(Cell& c, int dimension) {
    if (dimension == 1) {
        if (c.vertices.size() != 2)
            throw MeshError("cell " + std::to_string(c.id) + ": 1-D cell needs 2 endpoints");
        const double x0 = c.vertices[0].x, x1 = c.vertices[1].x;
        c.volume = x1 - x0;
        c.barycenter = {0.5 * (x0 + x1), 0.0};
        c.diameter = x1 - x0;
        return;
    }
    const auto& v = c.vertices;
    if (v.size() < 3)
        throw MeshError("cell " + std::to_string(c.id) + ": 2-D cell needs >= 3 vertices");
    double a2 = 0.0;
    Vec2 cent;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Vec2& p = v[i];
        const Vec2& q = v[(i + 1) % v.size()];
        const double w = cross(p, q);
        a2 += w;
        cent += (p + q) * w;
    }
    c.volume = 0.5 * a2;
    if (c.volume > 0.0) c.barycenter = cent / (3.0 * a2);
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = i + 1; j < v.size(); ++j)
            d = std::max(d, (v[i] - v[j]).norm());
    c.diameter = d;
}

void finalize_mesh(Mesh& m) {
    for (auto& c : m.cells) finalize_cell(c, m.dimension);
    m.h_max = 0.0;
    for (const auto& c : m.cells) m.h_max = std::max(m.h_max, c.diameter);
    m.cell_faces.assign(m.cells.size(), {});
    for (const auto& f : m.faces)
        m.cell_faces[static_cast<std::size_t>(f.cell_from)].push_back(f.id);
}

int add_face(Mesh& m, double area, Vec2 bary, Vec2 normal, int from, int to) {
    Face f;
    f.id = static_cast<int>(m.faces.size());
    f.area = area;
    f.barycenter = bary;
    f.normal = normal;
    f.cell_from = from;
    f.cell_to = to;
    m.faces.push_back(f);
    return f.id;
}

void link_twins(Mesh& m, int a, int b) {
    m.faces[static_cast<std::size_t>(a)].twin = b;
    m.faces[static_cast<std::size_t>(b)].twin = a;
}

Mesh build_1d(const std::vector<double>& widths, bool periodic) {
    if (widths.size() < 2)
        throw MeshError("1-D mesh needs at least 2 cells");
    for (double w : widths)
        if (!(w > 0.0)) throw MeshError("1-D mesh: non-positive cell width");

    Mesh m;
    m.dimension = 1;
    m.periodic = periodic;
    const int n = static_cast<int>(widths.size());
    std::vector<double> xs(widths.size() + 1, 0.0);
    for (std::size_t i = 0; i < widths.size(); ++i) xs[i + 1] = xs[i] + widths[i];
    const double length = xs.back();
    if (periodic) m.period = {length, 0.0};

    for (int i = 0; i < n; ++i) {
        Cell c;
        c.id = i;
        c.vertices = {{xs[static_cast<std::size_t>(i)], 0.0}, {xs[static_cast<std::size_t>(i) + 1], 0.0}};
        m.cells.push_back(std::move(c));
    }
    // Interior faces: right face of cell i pairs with left face of cell i+1.
    for (int i = 0; i + 1 < n; ++i) {
        const double x = xs[static_cast<std::size_t>(i) + 1];
        const int r = add_face(m, 1.0, {x, 0.0}, {1.0, 0.0}, i, i + 1);
        const int l = add_face(m, 1.0, {x, 0.0}, {-1.0, 0.0}, i + 1, i);
        link_twins(m, r, l);
    }
    if (periodic) {
        const int r = add_face(m, 1.0, {length, 0.0}, {1.0, 0.0}, n - 1, 0);
        const int l = add_face(m, 1.0, {0.0, 0.0}, {-1.0, 0.0}, 0, n - 1);
        link_twins(m, r, l);
    }
    finalize_mesh(m);
    return m;
}

} // namespace

double Mesh::domain_volume() const {
    double s = 0.0;
    for (const auto& c : cells) s += c.volume;
    return s;
}

Vec2 Mesh::periodic_delta(const Vec2& a, const Vec2& b) const {
    Vec2 d = b - a;
    if (!periodic) return d;
    if (period.x > 0.0) d.x -= period.x * std::round(d.x / period.x);
    if (dimension > 1 && period.y > 0.0) d.y -= period.y * std::round(d.y / period.y);
    return d;
}

std::uint64_t Mesh::hash() const {
    // FNV-1a over the defining geometry, for cross-referencing dumps.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    feed(&dimension, sizeof dimension);
    feed(&periodic, sizeof periodic);
    feed(&period, sizeof period);
    for (const auto& c : cells)
        for (const auto& v : c.vertices) feed(&v, sizeof v);
    for (const auto& f : faces) {
        feed(&f.barycenter, sizeof f.barycenter);
        feed(&f.normal, sizeof f.normal);
        feed(&f.cell_from, sizeof f.cell_from);
        feed(&f.cell_to, sizeof f.cell_to);
    }
    return h;
}

Mesh build_uniform_1d(int n_cells, double length, bool periodic) {
    if (n_cells < 2) throw MeshError("build_uniform_1d: n_cells must be >= 2");
    if (!(length > 0.0)) throw MeshError("build_uniform_1d: length must be positive");
    return build_1d(std::vector<double>(static_cast<std::size_t>(n_cells), length / n_cells), periodic);
}

Mesh build_nonuniform_1d(const std::vector<double>& widths, bool periodic) {
    return build_1d(widths, periodic);
}

Mesh build_triangulated_torus_2d(int n) {
    if (n < 2) throw MeshError("build_triangulated_torus_2d: n must be >= 2");
    Mesh m;
    m.dimension = 2;
    m.periodic = true;
    m.period = {1.0, 1.0};

    const double s = 1.0 / n;
    auto lower_id = [n](int i, int j) { return 2 * ((j % n) * n + (i % n)); };
    auto upper_id = [&lower_id](int i, int j) { return lower_id(i, j) + 1; };
    auto wrap = [n](int k) { return (k % n + n) % n; };

    m.cells.resize(static_cast<std::size_t>(2 * n * n));
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const Vec2 a{i * s, j * s}, b{(i + 1) * s, j * s};
            const Vec2 c{i * s, (j + 1) * s}, d{(i + 1) * s, (j + 1) * s};
            Cell& lo = m.cells[static_cast<std::size_t>(lower_id(i, j))];
            lo.id = lower_id(i, j);
            lo.vertices = {a, b, c};  // CCW, anti-diagonal b-c
            Cell& up = m.cells[static_cast<std::size_t>(upper_id(i, j))];
            up.id = upper_id(i, j);
            up.vertices = {b, d, c};
        }
    }

    const double rt2_inv = 1.0 / std::sqrt(2.0);
    const double diag_len = std::sqrt(2.0) * s;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const double x0 = i * s, y0 = j * s;
            const int lo = lower_id(i, j), up = upper_id(i, j);

            // lower triangle: bottom edge pairs with the top edge of the
            // upper triangle one row below (periodic wrap)
            const int up_below = upper_id(i, wrap(j - 1));
            const double yb = wrap(j - 1) == j - 1 ? y0 : 1.0;  // twin's own y
            const int fb = add_face(m, s, {x0 + 0.5 * s, y0}, {0.0, -1.0}, lo, up_below);
            const int ft = add_face(m, s, {x0 + 0.5 * s, yb}, {0.0, 1.0}, up_below, lo);
            link_twins(m, fb, ft);

            // lower triangle: left edge pairs with the right edge of the
            // upper triangle one column left
            const int up_left = upper_id(wrap(i - 1), j);
            const double xl = wrap(i - 1) == i - 1 ? x0 : 1.0;
            const int fl = add_face(m, s, {x0, y0 + 0.5 * s}, {-1.0, 0.0}, lo, up_left);
            const int fr = add_face(m, s, {xl, y0 + 0.5 * s}, {1.0, 0.0}, up_left, lo);
            link_twins(m, fl, fr);

            // shared anti-diagonal inside the square
            const Vec2 mid{x0 + 0.5 * s, y0 + 0.5 * s};
            const int fd1 = add_face(m, diag_len, mid, {rt2_inv, rt2_inv}, lo, up);
            const int fd2 = add_face(m, diag_len, mid, {-rt2_inv, -rt2_inv}, up, lo);
            link_twins(m, fd1, fd2);
        }
    }
    finalize_mesh(m);
    return m;
}

namespace {

bool point_on_cell_boundary(const Mesh& m, const Cell& c, const Vec2& p, double tol) {
    if (m.dimension == 1)
        return std::abs(p.x - c.vertices[0].x) <= tol || std::abs(p.x - c.vertices[1].x) <= tol;
    for (std::size_t i = 0; i < c.vertices.size(); ++i) {
        const Vec2& a = c.vertices[i];
        const Vec2& b = c.vertices[(i + 1) % c.vertices.size()];
        const Vec2 ab = b - a, ap = p - a;
        const double len2 = ab.norm2();
        const double t = dot(ap, ab) / len2;
        if (t < -tol || t > 1.0 + tol) continue;
        const Vec2 proj = a + ab * std::clamp(t, 0.0, 1.0);
        if ((p - proj).norm() <= tol * std::sqrt(len2) + 1e-14) return true;
    }
    return false;
}

} // namespace

GeometryReport validate(const Mesh& mesh) {
    if (mesh.cells.empty()) throw MeshError("validate: empty mesh");
    if (mesh.dimension != 1 && mesh.dimension != 2)
        throw MeshError("validate: dimension must be 1 or 2");

    GeometryReport r;
    r.cell_count = mesh.cells.size();
    r.h_max = mesh.h_max;
    r.min_volume = mesh.cells[0].volume;
    r.max_volume = mesh.cells[0].volume;

    for (const auto& c : mesh.cells) {
        if (!(c.volume > 0.0))
            throw MeshError("validate: cell " + std::to_string(c.id) + " has non-positive volume");
        if (c.diameter > mesh.h_max * (1.0 + 1e-12))
            throw MeshError("validate: cell " + std::to_string(c.id) + " exceeds h_max");
        r.min_volume = std::min(r.min_volume, c.volume);
        r.max_volume = std::max(r.max_volume, c.volume);
    }

    for (const auto& f : mesh.faces) {
        const std::string tag = "validate: face " + std::to_string(f.id);
        if (!(f.area > 0.0)) throw MeshError(tag + " has non-positive area");
        if (std::abs(f.normal.norm() - 1.0) > 1e-12) throw MeshError(tag + ": normal not unit");
        if (f.cell_from < 0 || f.cell_to < 0 ||
            f.cell_from >= static_cast<int>(mesh.cells.size()) ||
            f.cell_to >= static_cast<int>(mesh.cells.size()))
            throw MeshError(tag + ": dangling cell reference");
        if (f.twin < 0 || f.twin >= static_cast<int>(mesh.faces.size()))
            throw MeshError(tag + ": missing twin");
        const Face& t = mesh.faces[static_cast<std::size_t>(f.twin)];
        if (t.twin != f.id || t.cell_from != f.cell_to || t.cell_to != f.cell_from)
            throw MeshError(tag + ": inconsistent twin");
        if ((f.normal + t.normal).norm() != 0.0)
            throw MeshError(tag + ": normals not exactly antisymmetric");
        if (f.area != t.area) throw MeshError(tag + ": twin area mismatch");
        const Cell& own = mesh.cells[static_cast<std::size_t>(f.cell_from)];
        if (!point_on_cell_boundary(mesh, own, f.barycenter, 1e-9))
            throw MeshError(tag + ": barycenter not on owning cell boundary");
    }

    if (mesh.periodic) {
        double expect = mesh.period.x;
        if (mesh.dimension == 2) expect *= mesh.period.y;
        if (std::abs(mesh.domain_volume() - expect) > 1e-12 * expect)
            throw MeshError("validate: total volume does not match the period box");
    }

    const double d = mesh.dimension;
    double alpha = 0.0, beta_vol = 0.0, beta_face = 0.0;
    for (const auto& c : mesh.cells) {
        double face_sum = 0.0;
        for (int fid : mesh.cell_faces[static_cast<std::size_t>(c.id)])
            face_sum += mesh.faces[static_cast<std::size_t>(fid)].area;
        alpha = std::max(alpha, mesh.h_max * face_sum / c.volume);
        beta_vol = std::max(beta_vol, std::pow(mesh.h_max, d) / c.volume);
        beta_face = std::max(beta_face, face_sum / std::pow(mesh.h_max, d - 1.0));
    }
    r.alpha = alpha;
    r.beta = std::max(beta_vol, beta_face);
    if (!(r.alpha > 0.0) || !std::isfinite(r.alpha) || !std::isfinite(r.beta))
        throw MeshError("validate: degenerate regularity constants");
    return r;
}

namespace {

using json = nlohmann::ordered_json;

json coords_json(const Vec2& v, int dim) {
    json a = json::array();
    a.push_back(v.x);
    if (dim == 2) a.push_back(v.y);
    return a;
}

Vec2 coords_from_json(const json& a, int dim, const std::string& what) {
    if (!a.is_array() || static_cast<int>(a.size()) != dim)
        throw MeshError("mesh file: bad coordinate array in " + what);
    Vec2 v{a[0].get<double>(), 0.0};
    if (dim == 2) v.y = a[1].get<double>();
    return v;
}

} // namespace

void save_mesh(const Mesh& mesh, const std::string& path) {
    json doc;
    doc["version"] = 1;
    doc["dimension"] = mesh.dimension;
    if (mesh.periodic) {
        json p = json::array();
        p.push_back(mesh.period.x);
        if (mesh.dimension == 2) p.push_back(mesh.period.y);
        doc["periodic"] = p;
    } else {
        doc["periodic"] = nullptr;
    }

    std::map<std::pair<double, double>, int> index;
    json verts = json::array();
    json cells = json::array();
    for (const auto& c : mesh.cells) {
        json jc;
        jc["id"] = c.id;
        json vids = json::array();
        for (const auto& v : c.vertices) {
            auto key = std::make_pair(v.x, v.y);
            auto it = index.find(key);
            if (it == index.end()) {
                it = index.emplace(key, static_cast<int>(verts.size())).first;
                verts.push_back(coords_json(v, mesh.dimension));
            }
            vids.push_back(it->second);
        }
        jc["vertices"] = vids;
        cells.push_back(jc);
    }
    doc["vertices"] = verts;
    doc["cells"] = cells;

    json faces = json::array();
    for (const auto& f : mesh.faces) {
        json jf;
        jf["id"] = f.id;
        jf["cells"] = json::array({f.cell_from, f.cell_to});
        jf["normal"] = coords_json(f.normal, mesh.dimension);
        jf["barycenter"] = coords_json(f.barycenter, mesh.dimension);
        jf["area"] = f.area;
        faces.push_back(jf);
    }
    doc["faces"] = faces;

    std::ofstream out(path);
    if (!out) throw MeshError("save_mesh: cannot open " + path);
    out << doc.dump(1) << '\n';
}

Mesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MeshError("load_mesh: cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw MeshError("load_mesh: " + path + ": " + e.what());
    }

    Mesh m;
    try {
        if (doc.at("version").get<int>() != 1)
            throw MeshError("load_mesh: unsupported mesh file version");
        m.dimension = doc.at("dimension").get<int>();
        if (m.dimension != 1 && m.dimension != 2)
            throw MeshError("load_mesh: dimension must be 1 or 2");
        if (!doc.at("periodic").is_null()) {
            m.periodic = true;
            const auto& p = doc.at("periodic");
            m.period = coords_from_json(p, m.dimension, "periodic");
        }
        std::vector<Vec2> verts;
        for (const auto& jv : doc.at("vertices"))
            verts.push_back(coords_from_json(jv, m.dimension, "vertices"));
        for (const auto& jc : doc.at("cells")) {
            Cell c;
            c.id = jc.at("id").get<int>();
            for (const auto& vi : jc.at("vertices")) {
                const int k = vi.get<int>();
                if (k < 0 || k >= static_cast<int>(verts.size()))
                    throw MeshError("load_mesh: cell " + std::to_string(c.id) + ": vertex index out of range");
                c.vertices.push_back(verts[static_cast<std::size_t>(k)]);
            }
            m.cells.push_back(std::move(c));
        }
        for (std::size_t i = 0; i < m.cells.size(); ++i)
            if (m.cells[i].id != static_cast<int>(i))
                throw MeshError("load_mesh: cell ids must be dense and ordered");
        for (const auto& jf : doc.at("faces")) {
            Face f;
            f.id = jf.at("id").get<int>();
            f.cell_from = jf.at("cells").at(0).get<int>();
            f.cell_to = jf.at("cells").at(1).get<int>();
            f.normal = coords_from_json(jf.at("normal"), m.dimension, "face " + std::to_string(f.id));
            f.barycenter = coords_from_json(jf.at("barycenter"), m.dimension, "face " + std::to_string(f.id));
            f.area = jf.at("area").get<double>();
            m.faces.push_back(f);
        }
        for (std::size_t i = 0; i < m.faces.size(); ++i)
            if (m.faces[i].id != static_cast<int>(i))
                throw MeshError("load_mesh: face ids must be dense and ordered");
    } catch (const nlohmann::json::exception& e) {
        throw MeshError("load_mesh: " + path + ": " + e.what());
    }

    // Twin recovery: the unique record joining the same pair in reverse with
    // the exactly opposite normal and a period-equivalent barycenter.
    for (auto& f : m.faces) {
        if (f.twin >= 0) continue;
        int found = -1;
        for (auto& g : m.faces) {
            if (g.id == f.id || g.twin >= 0) continue;
            if (g.cell_from != f.cell_to || g.cell_to != f.cell_from) continue;
            if ((g.normal + f.normal).norm() != 0.0) continue;
            if (g.area != f.area) continue;
            const Vec2 d = m.periodic_delta(f.barycenter, g.barycenter);
            if (d.norm() > 1e-9) continue;
            found = g.id;
            break;
        }
        if (found < 0)
            throw MeshError("load_mesh: face " + std::to_string(f.id) + ": no matching twin record");
        f.twin = found;
        m.faces[static_cast<std::size_t>(found)].twin = f.id;
    }

    finalize_mesh(m);
    return m;
}

bool meshes_equal(const Mesh& a, const Mesh& b) {
    if (a.dimension != b.dimension || a.periodic != b.periodic) return false;
    if (a.periodic && !(a.period == b.period)) return false;
    if (a.cells.size() != b.cells.size() || a.faces.size() != b.faces.size()) return false;
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        const Cell& ca = a.cells[i];
        const Cell& cb = b.cells[i];
        if (ca.id != cb.id || ca.volume != cb.volume || !(ca.barycenter == cb.barycenter) ||
            ca.diameter != cb.diameter || ca.vertices != cb.vertices)
            return false;
    }
    for (std::size_t i = 0; i < a.faces.size(); ++i) {
        const Face& fa = a.faces[i];
        const Face& fb = b.faces[i];
        if (fa.id != fb.id || fa.area != fb.area || !(fa.barycenter == fb.barycenter) ||
            !(fa.normal == fb.normal) || fa.cell_from != fb.cell_from ||
            fa.cell_to != fb.cell_to || fa.twin != fb.twin)
            return false;
    }
    return true;
}

} // namespace charflow
