#pragma once

#include "charflow/vec.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace charflow {

struct MeshError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Cell {
    int id = -1;
    double volume = 0.0;     // length in 1-D, area in 2-D
    Vec2 barycenter;
    double diameter = 0.0;
    std::vector<Vec2> vertices;  // interval endpoints (1-D) or CCW polygon (2-D)
};

// Directed half-face record: one per (cell, neighbor, geometric face) triple.
// The barycenter is expressed in the owning cell's coordinates, so for a
// periodic wrap the two records of a twin pair carry translated barycenters.
struct Face {
    int id = -1;
    double area = 1.0;       // 1 by convention in 1-D
    Vec2 barycenter;         // x_{K,L} as seen from cell_from
    Vec2 normal;             // unit, outward from cell_from
    int cell_from = -1;
    int cell_to = -1;
    int twin = -1;
};

struct GeometryReport {
    double h_max = 0.0;
    double min_volume = 0.0;
    double max_volume = 0.0;
    double alpha = 0.0;      // max_K h * sum_L |K cap L| / |K|
    double beta = 0.0;       // max(h^d / min|K|, max_K sum|K cap L| / h^(d-1))
    std::size_t cell_count = 0;
};

struct Mesh {
    int dimension = 1;
    bool periodic = false;
    Vec2 period;             // period lengths; zero components unused
    std::vector<Cell> cells;
    std::vector<Face> faces;
    std::vector<std::vector<int>> cell_faces;  // face ids with cell_from == K
    double h_max = 0.0;

    double domain_volume() const;
    // Smallest periodic-image displacement from a to b (b - a mod period).
    Vec2 periodic_delta(const Vec2& a, const Vec2& b) const;
    bool is_primary_face(int f) const { return f < faces[static_cast<std::size_t>(f)].twin; }
    std::uint64_t hash() const;
};

Mesh build_uniform_1d(int n_cells, double length, bool periodic);
Mesh build_nonuniform_1d(const std::vector<double>& widths, bool periodic);
// Unit torus cut into an n x n grid of squares, each split along the
// anti-diagonal into two triangles; 2n^2 cells.
Mesh build_triangulated_torus_2d(int n);

GeometryReport validate(const Mesh& mesh);

void save_mesh(const Mesh& mesh, const std::string& path);
Mesh load_mesh(const std::string& path);

bool meshes_equal(const Mesh& a, const Mesh& b);

} // namespace charflow
