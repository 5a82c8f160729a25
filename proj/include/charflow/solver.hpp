#pragma once

#include "charflow/field.hpp"
#include "charflow/kernel.hpp"
#include "charflow/mesh.hpp"

#include <functional>
#include <string>
#include <vector>

namespace charflow {

struct CellField {
    std::vector<double> values;
    int n = 0;        // time index
    double dt = 0.0;

    double operator[](int cell) const { return values[static_cast<std::size_t>(cell)]; }
};

struct InitialDatum {
    enum class Kind { sine, lipschitz_hat, step, gaussian };

    Kind kind = Kind::sine;
    double freq = 1.0;
    double amp = 1.0;
    Vec2 center;
    double slope = 4.0;       // hat: u = max(0, 1 - slope * dist(x, center))
    double threshold = 0.5;   // step: 1_{frac(x) < threshold}
    double width = 0.1;       // gaussian
    Vec2 period{1.0, 1.0};
    bool periodic = true;

    double operator()(const Vec2& x) const;
    double lipschitz() const;     // kink data included; 0 means "not Lipschitz" (step)
    double bv_seminorm_1d() const;
    // Discontinuities / kinks within one period (1-D), for exact projection.
    std::vector<double> breakpoints_1d() const;

    static InitialDatum sine(double freq, double amp, int dim = 1);
    static InitialDatum lipschitz_hat(const Vec2& center, double slope);
    static InitialDatum step(double threshold);
    static InitialDatum gaussian(const Vec2& center, double width);
};

struct ErrorReport {
    double l1 = 0.0;
    double linf = 0.0;
    double local_p = 2.0;
    double local_radius = 0.0;
    double local_value = 0.0;   // h^{-d/2} scaled localized L^p norm
    int n = 0;
    double h = 0.0;
    double dt = 0.0;
    std::string linf_samples = "cell barycenter, face barycenters, quadrature nodes";
};

// u_K^0 = |K|^{-1} int_K u0: exact split quadrature in 1-D (kinks resolved),
// composite triangle rule in 2-D, exact half-plane clipping for 2-D steps.
CellField project_initial(const InitialDatum& datum, const Mesh& mesh);

CellField apply_step(const TransitionKernel& p, const CellField& u);
CellField run(const TransitionKernel& p, const CellField& u0, int n_steps);

// Backward characteristic dZ/dt = -a(Z), Z(0) = x, classical RK4 with
// `substeps` uniform steps over [0, t].
Vec2 exact_characteristic(const VelocityField& field, double t, const Vec2& x, int substeps);
Vec2 exact_characteristic(const std::function<Vec2(const Vec2&)>& a, double t, const Vec2& x,
                          int substeps);

double exact_solution(const InitialDatum& datum, const VelocityField& field, double t,
                      const Vec2& x, int substeps);

// Solution of  dv/dt + a dv/dx = D d2v/dx2,  D = a (h - a dt) / 2  (the 1-D
// constant-coefficient modified equation): closed form for sine data,
// Gaussian-kernel convolution quadrature otherwise.
double modified_solution(const InitialDatum& datum, double a, double h, double dt, double t,
                         double x);

struct ErrorNormOptions {
    double local_p = 2.0;
    Vec2 local_center;
    int substeps_per_step = 20;
    const EnteringBarycenters* entering = nullptr;  // for the localized norm
    const VelocityField* field_for_entering = nullptr;
};

// Per-cell quadrature of the difference against the characteristic-traced
// reference; the expensive part of error_norms, reusable across localization
// centers.
struct CellErrors {
    double l1 = 0.0;
    double linf = 0.0;
    std::vector<double> lp_mass;  // int_K |u_K - u(t,x)|^p dx per cell
};

CellErrors per_cell_errors(const CellField& u_num, const InitialDatum& datum,
                           const VelocityField& field, const Mesh& mesh, double t, double p,
                           int substeps_per_step = 20);

// [h^{-d/2} sum_{K : |e_K - center| <= sqrt(h)} int_K |diff|^p]^{1/p}
double localized_lp(const CellErrors& errors, const Mesh& mesh, const EnteringBarycenters& eb,
                    const Vec2& center, double p);

ErrorReport error_norms(const CellField& u_num, const InitialDatum& datum,
                        const VelocityField& field, const Mesh& mesh, double t,
                        const ErrorNormOptions& opts = {});

void dump_cellfield_csv(const CellField& u, const std::string& csv_path,
                        const std::string& header_json_path, std::uint64_t mesh_hash);

} // namespace charflow
