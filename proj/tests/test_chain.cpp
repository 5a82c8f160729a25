#include "charflow/chain.hpp"

#include "charflow/rng.hpp"
#include "charflow/stats.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace charflow;

namespace {

struct Setup {
    Mesh mesh;
    VelocityField field;
    FieldMoments moments;
    double dt;
    TransitionKernel p;
    EnteringBarycenters eb;
};

Setup make_1d_constant(int cells, double lambda) {
    Setup s{build_uniform_1d(cells, 1.0, true), VelocityField::constant({1.0, 0.0}, 1), {}, 0, {}, {}};
    s.moments = compute_moments(s.field, s.mesh);
    s.dt = lambda * s.mesh.h_max;
    s.p = build_forward(s.mesh, s.moments, s.dt);
    s.eb = compute_entering_barycenters(s.mesh, s.moments, s.dt, s.field);
    return s;
}

Setup make_torus_stream(int n, double lambda, double freq = 1.0) {
    Setup s{build_triangulated_torus_2d(n), VelocityField::stream_2d(1.0, freq), {}, 0, {}, {}};
    s.moments = compute_moments(s.field, s.mesh);
    s.dt = lambda * cfl_max_dt(s.mesh, s.moments);
    s.p = build_forward(s.mesh, s.moments, s.dt);
    s.eb = compute_entering_barycenters(s.mesh, s.moments, s.dt, s.field);
    return s;
}

} // namespace

TEST_SUITE_BEGIN("chain");

TEST_CASE("sample_path basics") {
    SUBCASE("identity kernel stays put") {
        const Mesh m = build_uniform_1d(4, 1.0, true);
        const auto mom = compute_moments(VelocityField::constant({0.0, 0.0}, 1), m);
        const auto p = build_forward(m, mom, 0.1);
        const ChainPath path = sample_path(p, 2, 10, 42);
        for (int c : path.cells) CHECK(c == 2);
        for (int f : path.faces) CHECK(f == -1);
    }
    SUBCASE("CFL=1 marches left deterministically") {
        const Setup s = make_1d_constant(4, 1.0);
        const ChainPath path = sample_path(s.p, 0, 8, 7);
        for (std::size_t n = 0; n < path.cells.size(); ++n)
            CHECK(path.cells[n] == ((0 - static_cast<int>(n)) % 4 + 4) % 4);
    }
    SUBCASE("identical inputs give identical paths; seeds differ") {
        const Setup s = make_torus_stream(4, 0.5);
        const ChainPath a = sample_path(s.p, 3, 32, 99);
        const ChainPath b = sample_path(s.p, 3, 32, 99);
        const ChainPath c = sample_path(s.p, 3, 32, 100);
        CHECK(a.cells == b.cells);
        CHECK(a.faces == b.faces);
        CHECK(a.cells != c.cells);
    }
    SUBCASE("jump frequency concentrates at a dt / h") {
        const Setup s = make_1d_constant(4, 0.5);
        int jumps = 0;
        const int n = 10000;
        const ChainPath path = sample_path(s.p, 0, n, 20240811);
        for (int f : path.faces)
            if (f >= 0) ++jumps;
        const double freq = jumps / static_cast<double>(n);
        CHECK(freq >= 0.49);
        CHECK(freq <= 0.51);
    }
}

TEST_CASE("trace_points") {
    SUBCASE("constant path pins to the entering barycenter") {
        const Mesh m = build_uniform_1d(4, 1.0, true);
        const auto f = VelocityField::constant({0.0, 0.0}, 1);
        const auto mom = compute_moments(f, m);
        const auto p = build_forward(m, mom, 0.1);
        const auto eb = compute_entering_barycenters(m, mom, 0.1, f);
        const Trajectory t = trace_points(sample_path(p, 1, 5, 3), m, eb);
        for (const auto& x : t.points) CHECK((x - eb.point[1]).norm() <= 1e-15);
    }
    SUBCASE("one jump lands on the shared boundary") {
        const Setup s = make_1d_constant(4, 0.5);
        // find a seed whose first step jumps
        for (std::uint64_t seed = 0;; ++seed) {
            const ChainPath path = sample_path(s.p, 1, 1, seed);
            if (path.faces[0] >= 0) {
                const Trajectory t = trace_points(path, s.mesh, s.eb);
                CHECK(t.points[0].x == doctest::Approx(0.5).epsilon(1e-15));  // right bd of cell 1
                CHECK(t.points[1].x == doctest::Approx(0.25).epsilon(1e-15)); // shared boundary
                break;
            }
            REQUIRE(seed < 64);
        }
    }
    SUBCASE("periodic lifting keeps steps small and leaves the unit box") {
        const Setup s = make_1d_constant(8, 1.0);  // deterministic left march
        const Trajectory t = trace_points(sample_path(s.p, 0, 20, 5), s.mesh, s.eb);
        for (std::size_t n = 0; n + 1 < t.points.size(); ++n) {
            const double step = (t.points[n + 1] - t.points[n]).norm();
            CHECK(step <= s.mesh.h_max + 1e-14);
        }
        CHECK(t.points.back().x < 0.0);  // lifted below the box after wrapping
        CHECK(t.points.back().x ==
              doctest::Approx(t.points.front().x - 20.0 * s.mesh.h_max).epsilon(1e-12));
    }
    SUBCASE("torus crossing is lifted monotonically") {
        // a drifting field: vortex-free, so paths do cross the period
        const Mesh m = build_triangulated_torus_2d(4);
        const auto f = VelocityField::constant({0.3, -1.0}, 2);
        const auto mom = compute_moments(f, m);
        const double dt = 0.5 * cfl_max_dt(m, mom);
        const auto p = build_forward(m, mom, dt);
        const auto eb = compute_entering_barycenters(m, mom, dt, f);
        bool saw_outside = false;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Trajectory t =
                trace_points(sample_path(p, 5, 64, rng::derive_seed(1, seed)), m, eb);
            for (std::size_t n = 0; n + 1 < t.points.size(); ++n)
                CHECK((t.points[n + 1] - t.points[n]).norm() <= m.h_max + 1e-12);
            const Vec2 x = t.points.back();
            if (x.x < 0.0 || x.x >= 1.0 || x.y < 0.0 || x.y >= 1.0) saw_outside = true;
        }
        CHECK(saw_outside);  // the chain moves against a, i.e. up and left
    }
}

TEST_CASE("decompose") {
    SUBCASE("identity kernel: S_n = n dt a(X_0), R = M = 0") {
        const Mesh m = build_uniform_1d(4, 1.0, true);
        const auto f = VelocityField::constant({0.0, 0.0}, 1);
        const auto mom = compute_moments(f, m);
        const auto p = build_forward(m, mom, 0.1);
        const auto eb = compute_entering_barycenters(m, mom, 0.1, f);
        const Trajectory t = trace_points(sample_path(p, 2, 6, 9), m, eb);
        const Decomposition d = decompose(t, m, f, p, eb);
        for (std::size_t n = 0; n < d.m.size(); ++n) {
            CHECK(d.m[n].norm() <= 1e-15);
            CHECK(d.r[n].norm() <= 1e-15);
            CHECK(d.s[n].norm() <= 1e-15);  // a = 0 here, so S vanishes too
        }
    }
    SUBCASE("CFL=1 deterministic path has M = 0") {
        const Setup s = make_1d_constant(4, 1.0);
        const Trajectory t = trace_points(sample_path(s.p, 0, 12, 4), s.mesh, s.eb);
        const Decomposition d = decompose(t, s.mesh, s.field, s.p, s.eb);
        for (const auto& m : d.m) CHECK(m.norm() <= 1e-14);
        CHECK(d.r[1].norm() <= 1e-15);  // R_1 = 0 by construction
        CHECK(d.m[0].norm() == 0.0);
    }
    SUBCASE("telescoping identity S_n + R_n = X_n - X_0 + dt sum a(X_i)") {
        const Setup s = make_torus_stream(8, 0.5, 2.0);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Trajectory t = trace_points(
                sample_path(s.p, static_cast<int>(seed) % 128, 48, rng::derive_seed(2, seed)),
                s.mesh, s.eb);
            const Decomposition d = decompose(t, s.mesh, s.field, s.p, s.eb);
            Vec2 drift;
            for (std::size_t n = 0; n + 1 < t.points.size(); ++n) {
                drift += s.field(t.points[n]) * s.dt;
                const Vec2 lhs = d.s[n + 1] + d.r[n + 1];
                const Vec2 rhs = t.points[n + 1] - t.points[0] + drift;
                CHECK((lhs - rhs).norm() <= 1e-12);
            }
        }
    }
    SUBCASE("per-step variance matches a dt (h - a dt) in the constant case") {
        const Setup s = make_1d_constant(4, 0.5);
        const int n = 100000;
        const Trajectory t = trace_points(sample_path(s.p, 0, n, 77), s.mesh, s.eb);
        const Decomposition d = decompose(t, s.mesh, s.field, s.p, s.eb);
        std::vector<double> incr(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k)
            incr[static_cast<std::size_t>(k)] =
                d.m[static_cast<std::size_t>(k) + 1].x - d.m[static_cast<std::size_t>(k)].x;
        const auto mom = stats::moments(incr);
        CHECK(std::abs(mom.var - 0.015625) <= 3.0 * stats::variance_stderr(mom));
    }
}

TEST_CASE("kernel-row conditional means are exact") {
    // E[X_{n+1}] under a gamma row equals e_K exactly (Prop-egamma algebra),
    // and under a forward row equals e_K - a_K dt + green residual.
    const Mesh m = build_triangulated_torus_2d(4);
    const auto f = VelocityField::compressible_2d({0.3, -0.5}, 0.4, 1.0);
    const auto mom = compute_moments(f, m);
    const double dt = 0.4 * cfl_max_dt(m, mom);
    const auto g = build_reversed(m, mom, dt, 0.1);
    const auto eb = compute_entering_barycenters(m, mom, dt, f);
    for (const auto& c : m.cells) {
        const auto k = static_cast<std::size_t>(c.id);
        Vec2 mean = eb.point[k] * g.self_weight[k];
        for (const auto& e : g.rows[k])
            mean += m.faces[static_cast<std::size_t>(e.face)].barycenter * e.weight;
        CHECK((mean - eb.point[k]).norm() <= 1e-12);
    }
}

TEST_CASE("mc_expectation") {
    const Setup s = make_1d_constant(4, 0.5);
    const CellField u0{{0.0, 1.0, 2.0, 3.0}, 0, s.dt};
    SUBCASE("identity kernel: zero stderr") {
        const Mesh m = build_uniform_1d(4, 1.0, true);
        const auto mom = compute_moments(VelocityField::constant({0.0, 0.0}, 1), m);
        const auto p = build_forward(m, mom, 0.1);
        const auto est = mc_expectation(p, u0, 3, 5, 100, 1);
        CHECK(est.mean == 3.0);
        CHECK(est.stderr_mean == 0.0);
    }
    SUBCASE("4-cell fixture matches the enumeration value 2.0") {
        const auto est = mc_expectation(s.p, u0, 0, 3, 100000, 20240811);
        CHECK(std::abs(est.mean - 2.0) <= 4.0 * est.stderr_mean);
    }
    SUBCASE("M=2 is legal") {
        const auto est = mc_expectation(s.p, u0, 0, 3, 2, 5);
        CHECK(std::isfinite(est.stderr_mean));
        CHECK_THROWS_AS(mc_expectation(s.p, u0, 0, 3, 1, 5), std::invalid_argument);
    }
    SUBCASE("threads do not change the estimate") {
        const auto a = mc_expectation(s.p, u0, 0, 3, 5000, 77, 1);
        const auto b = mc_expectation(s.p, u0, 0, 3, 5000, 77, 4);
        CHECK(a.mean == b.mean);
        CHECK(a.stderr_mean == b.stderr_mean);
    }
}

TEST_CASE("enumerate_expectation") {
    const Setup s = make_1d_constant(4, 0.5);
    const CellField u0{{0.0, 1.0, 2.0, 3.0}, 0, s.dt};
    SUBCASE("4-cell N=3 from cell 0: value 2, 8 paths") {
        const auto r = enumerate_expectation(s.p, u0, 0, 3);
        CHECK(r.value == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(r.path_count == 8);
    }
    SUBCASE("N=0") {
        const auto r = enumerate_expectation(s.p, u0, 2, 0);
        CHECK(r.value == 2.0);
        CHECK(r.path_count == 1);
    }
    SUBCASE("identity kernel: one positive path") {
        const Mesh m = build_uniform_1d(4, 1.0, true);
        const auto mom = compute_moments(VelocityField::constant({0.0, 0.0}, 1), m);
        const auto p = build_forward(m, mom, 0.1);
        const auto r = enumerate_expectation(p, u0, 1, 9);
        CHECK(r.value == 1.0);
        CHECK(r.path_count == 1);
    }
    SUBCASE("guard") {
        const Setup t = make_torus_stream(4, 0.5);
        CellField z;
        z.values.assign(32, 0.0);
        CHECK_THROWS_AS(enumerate_expectation(t.p, z, 0, 64), GuardError);
    }
    SUBCASE("path probabilities sum to 1") {
        double total = 0.0;
        enumerate_paths(s.p, 0, 6, [&](const auto&, const auto&, double prob) { total += prob; });
        CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("empirical transitions") {
    SUBCASE("single constant path: all mass on the diagonal") {
        const Mesh m = build_uniform_1d(4, 1.0, true);
        const auto mom = compute_moments(VelocityField::constant({0.0, 0.0}, 1), m);
        const auto p = build_forward(m, mom, 0.1);
        const std::vector<ChainPath> batch{sample_path(p, 2, 10, 3)};
        const auto freq = empirical_transition(batch, 4, false);
        CHECK(freq[2][2] == 1.0);
    }
    SUBCASE("CFL=1: all mass on K -> K-") {
        const Setup s = make_1d_constant(4, 1.0);
        const std::vector<ChainPath> batch{sample_path(s.p, 0, 12, 3)};
        const auto freq = empirical_transition(batch, 4, false);
        CHECK(freq[0][3] == 1.0);
        CHECK(freq[3][2] == 1.0);
    }
    CHECK_THROWS_AS(empirical_transition({}, 4, false), std::invalid_argument);
}

TEST_CASE("lebesgue start") {
    SUBCASE("uniform volumes: uniform draw") {
        const Mesh m = build_uniform_1d(4, 1.0, true);
        const LebesgueSampler ls(m);
        std::vector<int> counts(4, 0);
        for (int i = 0; i < 20000; ++i)
            counts[static_cast<std::size_t>(ls.sample(rng::derive_seed(3, static_cast<std::uint64_t>(i)), 0))]++;
        for (int c : counts) CHECK(std::abs(c / 20000.0 - 0.25) <= 0.02);
    }
    SUBCASE("volume-weighted draw") {
        const Mesh m = build_nonuniform_1d({0.25, 0.75}, true);
        const LebesgueSampler ls(m);
        int big = 0;
        const int n = 10000;
        for (int i = 0; i < n; ++i)
            if (ls.sample(rng::derive_seed(4, static_cast<std::uint64_t>(i)), 0) == 1) ++big;
        const double fr = big / static_cast<double>(n);
        CHECK(fr >= 0.72);
        CHECK(fr <= 0.78);
    }
    SUBCASE("non-periodic meshes are rejected") {
        const Mesh m = build_uniform_1d(4, 1.0, false);
        CHECK_THROWS_AS(sample_lebesgue_start(m, 1), std::invalid_argument);
    }
}

TEST_CASE("martingale properties over sampled batches") {
    const Setup s = make_torus_stream(8, 0.5, 2.0);
    const int n_steps = 32;
    const std::size_t m_samples = 20000;
    std::vector<double> mx(m_samples), my(m_samples), m2(m_samples), dm2(m_samples);
    const LebesgueSampler ls(s.mesh);
    for (std::size_t i = 0; i < m_samples; ++i) {
        const std::uint64_t cs = rng::derive_seed(20240811, i);
        const int k0 = ls.sample(cs, 1ULL << 40);
        const WalkStats w = walk_stats(s.p, s.mesh, s.field, s.eb, k0, n_steps, cs);
        mx[i] = w.m_n.x;
        my[i] = w.m_n.y;
        m2[i] = w.m_n.norm2();
        dm2[i] = w.sum_dm2;
    }
    SUBCASE("mean of M_N within 4 stderr of zero per coordinate") {
        const auto sx = stats::moments(mx);
        const auto sy = stats::moments(my);
        CHECK(std::abs(sx.mean) <= 4.0 * sx.stderr_mean);
        CHECK(std::abs(sy.mean) <= 4.0 * sy.stderr_mean);
    }
    SUBCASE("variance additivity within 10%") {
        const auto sm2 = stats::moments(m2);
        const auto sdm2 = stats::moments(dm2);
        CHECK(std::abs(sm2.mean - sdm2.mean) <= 0.1 * sdm2.mean);
    }
    SUBCASE("per-step variance bound alpha ||a|| h dt") {
        const auto rep = validate(s.mesh);
        const auto sdm2 = stats::moments(dm2);
        const double per_step = sdm2.mean / n_steps;
        CHECK(per_step <= rep.alpha * s.field.sup_norm() * s.mesh.h_max * s.dt * (1.0 + 1e-9));
    }
    SUBCASE("drift identity: row mean within (kappa + C_green) h dt of -a(X) dt") {
        double c_green = 0.0;
        for (const auto& c : s.mesh.cells)
            c_green = std::max(c_green, green_residual(s.mesh, s.moments, s.dt, c.id,
                                                       s.eb.point[static_cast<std::size_t>(c.id)])
                                            .norm());
        c_green /= s.mesh.h_max * s.dt;
        const double bound =
            (s.field.lipschitz() + c_green) * s.mesh.h_max * s.dt * (1.0 + 1e-9) + 1e-15;
        for (const auto& c : s.mesh.cells) {
            const auto k = static_cast<std::size_t>(c.id);
            Vec2 mean = s.eb.point[k] * s.p.self_weight[k];
            for (const auto& e : s.p.rows[k])
                mean += s.mesh.faces[static_cast<std::size_t>(e.face)].barycenter * e.weight;
            const Vec2 row_mean = mean - s.eb.point[k];  // E[X_{n+1} - e_K]
            CHECK((row_mean + s.field(s.eb.point[k]) * s.dt).norm() <= bound);
        }
    }
}

TEST_CASE("reversed-chain gap martingale") {
    // Constant fields on this triangulation give two-outflow cells whose
    // face barycenters share one coordinate, so one gap component is
    // identically zero; run two flows and require spread in the other one.
    struct Case {
        Vec2 a;
        bool expect_x;  // which coordinate carries genuine randomness
    };
    for (const Case& cs : {Case{{0.3, -1.0}, true}, Case{{1.0, -0.4}, false}}) {
        const Mesh m = build_triangulated_torus_2d(4);
        const auto f = VelocityField::constant(cs.a, 2);
        const auto mom = compute_moments(f, m);
        const double dt = 0.5 * cfl_max_dt(m, mom);
        const auto g = build_reversed(m, mom, dt, 0.1);
        const auto eb = compute_entering_barycenters(m, mom, dt, f);

        const std::size_t m_samples = 20000;
        std::vector<double> xs(m_samples), ys(m_samples);
        for (std::size_t i = 0; i < m_samples; ++i) {
            const std::uint64_t cs2 = rng::derive_seed(7, i);
            const ChainPath path = sample_path(g, static_cast<int>(i % 32), 16, cs2);
            const Trajectory t = trace_points(path, m, eb);
            const Decomposition d = decompose(t, m, f, g, eb);
            REQUIRE(!d.xi.empty());
            xs[i] = d.xi.back().x;
            ys[i] = d.xi.back().y;
        }
        const auto sx = stats::moments(xs);
        const auto sy = stats::moments(ys);
        CHECK((cs.expect_x ? sx : sy).stderr_mean > 1e-6);  // genuinely random
        CHECK(std::abs(sx.mean) <= std::max(4.0 * sx.stderr_mean, 1e-12));
        CHECK(std::abs(sy.mean) <= std::max(4.0 * sy.stderr_mean, 1e-12));
    }
}

TEST_CASE("dump formats") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "charflow_dump_test";
    fs::create_directories(dir);
    const Setup s = make_1d_constant(4, 0.5);

    SUBCASE("kernel CSV rows are K,L,weight") {
        dump_kernel_csv(s.p, (dir / "k.csv").string(), (dir / "k.json").string());
        std::ifstream csv(dir / "k.csv");
        std::string line;
        std::getline(csv, line);
        CHECK(line == "K,L,weight");
        std::getline(csv, line);
        CHECK(line == "0,0,0.5");
        std::ifstream hdr(dir / "k.json");
        const auto j = nlohmann::json::parse(hdr);
        CHECK(j.at("kind") == "forward");
        CHECK(j.at("dt").get<double>() == 0.125);
        CHECK(j.at("mesh_hash").get<std::uint64_t>() == s.mesh.hash());
    }
    SUBCASE("trajectory CSV carries the decomposition columns") {
        const ChainPath path = sample_path(s.p, 0, 6, 11);
        const Trajectory t = trace_points(path, s.mesh, s.eb);
        const Decomposition d = decompose(t, s.mesh, s.field, s.p, s.eb);
        dump_trajectory_csv(t, d, s.mesh, (dir / "t.csv").string(), (dir / "t.json").string(),
                            s.mesh.hash());
        std::ifstream csv(dir / "t.csv");
        std::string line;
        std::getline(csv, line);
        CHECK(line == "n,cell,x,S,R,M");
        int rows = 0;
        while (std::getline(csv, line)) ++rows;
        CHECK(rows == 7);
        std::ifstream hdr(dir / "t.json");
        CHECK(nlohmann::json::parse(hdr).at("seed").get<std::uint64_t>() == 11);
    }
    SUBCASE("batch manifest lists the derived seeds") {
        write_batch_manifest((dir / "b.json").string(), 42, 5);
        std::ifstream in(dir / "b.json");
        const auto j = nlohmann::json::parse(in);
        REQUIRE(j.at("seeds").size() == 5);
        CHECK(j.at("seeds")[3].get<std::uint64_t>() == rng::derive_seed(42, 3));
        CHECK(j.at("master_seed").get<std::uint64_t>() == 42);
    }
}

TEST_CASE("path-ratio bound on the enumerable compressible fixture") {
    const Mesh m = build_uniform_1d(4, 1.0, true);
    const auto f = VelocityField::sine_1d(1.0, 0.5, 1.0);
    const auto mom = compute_moments(f, m);
    const double dt = 0.5 * cfl_max_dt(m, mom);

    const auto p = build_forward(m, mom, dt);
    const auto g = build_reversed(m, mom, dt, 0.1);
    const auto geo = validate(m);
    const double div_dt = f.div_sup_norm() * dt;
    const double c = geo.beta * geo.beta;
    const int n = 4;

    std::size_t paths = 0;
    for (const auto& start : m.cells) {
        enumerate_paths(p, start.id, n, [&](const std::vector<int>& cells,
                                            const std::vector<int>& faces, double prob) {
            double qprob = 1.0;
            for (int i = n - 1; i >= 0; --i) {
                const int from = cells[static_cast<std::size_t>(i) + 1];
                if (faces[static_cast<std::size_t>(i)] < 0)
                    qprob *= g.self_weight[static_cast<std::size_t>(from)];
                else
                    qprob *= g.weight_through(
                        from,
                        m.faces[static_cast<std::size_t>(faces[static_cast<std::size_t>(i)])].twin);
            }
            REQUIRE(qprob > 0.0);
            const double ratio = prob / qprob;
            CHECK(ratio >= std::pow(1.0 - div_dt, n) / c);
            CHECK(ratio <= std::pow(1.0 + div_dt, n) * c);
            ++paths;
        });
    }
    CHECK(paths > 0);
}

TEST_SUITE_END();
