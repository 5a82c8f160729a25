#pragma once

#include "charflow/mesh.hpp"
#include "charflow/vec.hpp"

#include <string>
#include <vector>

namespace charflow {

// Analytic velocity catalog. Every entry carries its sup norm and Lipschitz
// constant in closed form; acceptance tests need both.
struct VelocityField {
    enum class Kind { constant, sine_1d, stream_2d, compressible_2d };

    Kind kind = Kind::constant;
    Vec2 v;                        // constant value / drift
    double base = 0.0;             // sine_1d offset
    double amp = 0.0;
    double freq = 1.0;

    int dimension() const;
    Vec2 operator()(const Vec2& x) const;
    double sup_norm() const;
    double lipschitz() const;
    double div_sup_norm() const;   // sup |div a|, analytic
    bool divergence_free() const;
    std::string describe() const;

    static VelocityField constant(const Vec2& value, int dim);
    static VelocityField sine_1d(double base, double amp, double freq);
    // a = amp * (-cos(2 pi f x) sin(2 pi f y), sin(2 pi f x) cos(2 pi f y)),
    // the perp-gradient of psi = amp/(2 pi f) cos(2 pi f x) cos(2 pi f y).
    static VelocityField stream_2d(double amp, double freq);
    // a = drift + amp * (sin(2 pi f x), sin(2 pi f y)); div != 0.
    static VelocityField compressible_2d(const Vec2& drift, double amp, double freq);

private:
    int dim_ = 1;
};

// Discrete moments: face means a_{K,L}, cell means a_K, and the per-cell
// divergence delta_K assembled from the same face fluxes the kernel uses.
struct FieldMoments {
    std::vector<Vec2> face_mean;   // indexed by face record
    std::vector<Vec2> cell_mean;   // a_K
    std::vector<double> cell_div;  // delta_K
    int quadrature_order = 0;      // 0 when every face mean is closed-form
};

Vec2 face_mean(const VelocityField& field, const Mesh& mesh, int face_id);
Vec2 cell_mean(const VelocityField& field, const Mesh& mesh, int cell_id);
double cell_divergence(const FieldMoments& moments, const Mesh& mesh, int cell_id);

FieldMoments compute_moments(const VelocityField& field, const Mesh& mesh);

// 3-point Gauss-Legendre mean over a face segment (quadrature fallback and
// test oracle for the closed forms); `parts` subdivides the segment.
Vec2 face_mean_quadrature(const VelocityField& field, const Mesh& mesh, int face_id, int parts = 1);

} // namespace charflow
