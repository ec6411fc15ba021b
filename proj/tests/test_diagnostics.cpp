#include "odeforge/diagnostics.hpp"
#include "odeforge/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace odeforge;

namespace {

const OdeModel& lorenz_fixture() {
    static const OdeModel model =
        load_model(std::filesystem::path(ODEFORGE_FIXTURE_DIR) / "lorenz-main-model.json");
    return model;
}

BasinOptions small_basin(int dim, int resolution, double lo, double hi) {
    BasinOptions o = default_basin_options(dim);
    o.a_lo = o.b_lo = lo;
    o.a_hi = o.b_hi = hi;
    o.resolution_a = o.resolution_b = resolution;
    return o;
}

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("density of identical values") {
    const std::vector<double> v(50, 2.5);
    const auto d = density_histogram(v, 10);
    CHECK(d.integral() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::count_if(d.probabilities.begin(), d.probabilities.end(), [](double p) { return p > 0; }) == 1);
}

TEST_CASE("density of uniform samples") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(1'000'000);
    for (auto& x : v) x = u(rng);
    const auto d = density_histogram(v, 10, std::make_pair(0.0, 1.0));
    CHECK(d.integral() == doctest::Approx(1.0).epsilon(1e-12));
    // Binomial noise per bin: sqrt(0.1 * 0.9 / 1e6) / 0.1 ~ 0.003.
    for (double p : d.probabilities) CHECK(std::abs(p - 1.0) <= 0.015);
    CHECK(d.bin_edges.size() == 11);
}

TEST_CASE("density integrates to one on random data") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(3.0, 2.0);
    for (int bins : {1, 7, 100, 333}) {
        std::vector<double> v(5000);
        for (auto& x : v) x = n(rng);
        CHECK(density_histogram(v, bins).integral() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS((void)density_histogram(std::vector<double>{}, 10), DataError);
    CHECK_THROWS_AS((void)density_histogram(std::vector<double>{1.0}, 0), ConfigError);
}

TEST_CASE("area difference bounds") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> a(2000), b(2000);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = 0.5 + 1.5 * n(rng);
    const auto range = common_range(a, b);
    const auto da = density_histogram(a, 40, range), db = density_histogram(b, 40, range);
    CHECK(density_area_diff(da, da) == 0.0);
    const double ab = density_area_diff(da, db);
    CHECK(ab > 0.0);
    CHECK(ab <= 2.0);
    CHECK(ab == doctest::Approx(density_area_diff(db, da)).epsilon(1e-15));

    const std::vector<double> lo{0.0, 0.1, 0.2}, hi{5.0, 5.1, 5.2};
    const auto r = common_range(lo, hi);
    CHECK(density_area_diff(density_histogram(lo, 20, r), density_histogram(hi, 20, r)) ==
          doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS((void)density_area_diff(density_histogram(lo, 20), density_histogram(hi, 20)), ConfigError);
}

TEST_CASE("exact delay embedding has zero residuals") {
    ScalarSeries s;
    s.dt = 0.01;
    for (int i = 0; i < 3000; ++i) s.values.push_back(std::sin(0.01 * i) * std::exp(std::cos(0.0137 * i)));
    for (int D : {2, 3, 5}) {
        const auto traj = delay_embed(s, D, 9);
        const auto res = delay_residuals(traj, 9, 50);
        REQUIRE(res.stds.size() == static_cast<std::size_t>(D - 1));
        for (std::size_t p = 0; p < res.stds.size(); ++p) {
            CHECK(res.stds[p] == 0.0);
            CHECK(res.means[p] == 0.0);
            for (double v : res.series[p]) CHECK(v == 0.0);
        }
        CHECK(res.mean_std() == 0.0);
    }
}

TEST_CASE("delay residuals of a shifted coordinate") {
    StateTrajectory traj;
    traj.dt = 1.0;
    traj.states.resize(20, 2);
    for (Eigen::Index i = 0; i < 20; ++i) {
        traj.states(i, 0) = static_cast<double>(i);
        traj.states(i, 1) = static_cast<double>(i) - 3.0 + (i % 2 ? 0.5 : -0.5);
    }
    // X1(t) - X2(t + 3) = 3 - (t + 3) + t -/+ 0.5, a +-0.5 alternation.
    const auto res = delay_residuals(traj, 3, 10);
    REQUIRE(res.series[0].size() == 17);
    CHECK(res.stds[0] == doctest::Approx(0.5).epsilon(0.05));
    CHECK_THROWS_AS((void)delay_residuals(traj, 25, 10), DataError);
}

TEST_CASE("lyapunov spectrum of a linear system") {
    const auto lin = ReferenceSystem::linear_test({-1.0, -2.0});
    LyapunovOptions opt;
    opt.T = 50.0;
    opt.transient = 0.0;
    const auto r = lyapunov_spectrum(lin, Eigen::Vector2d(0.3, -0.2), opt);
    REQUIRE(r.exponents.size() == 2);
    CHECK(r.exponents[0] == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(r.exponents[1] == doctest::Approx(-2.0).epsilon(1e-3 / 2));
    for (double every : {0.05, 0.5, 2.0}) {
        opt.renorm_interval = every;
        const auto s = lyapunov_spectrum(lin, Eigen::Vector2d(0.3, -0.2), opt);
        CHECK(s.exponents[0] == doctest::Approx(-1.0).epsilon(1e-3));
        CHECK(s.exponents[1] == doctest::Approx(-2.0).epsilon(1e-3 / 2));
        CHECK(s.renorm_interval == doctest::Approx(every));
    }
}

TEST_CASE("lorenz exponent sum equals the constant divergence") {
    LyapunovOptions opt;
    opt.T = 200.0;
    opt.transient = 10.0;
    const auto r = lyapunov_spectrum(ReferenceSystem::lorenz(), Eigen::Vector3d(1, 1, 1), opt);
    CHECK(r.sum() == doctest::Approx(-(10.0 + 1.0 + 8.0 / 3.0)).epsilon(0.05 / 13.667));
    CHECK(r.exponents[0] > 0.5);
    CHECK(r.T_used == doctest::Approx(200.0));
    opt.renorm_interval = 0.05;
    const auto s = lyapunov_spectrum(ReferenceSystem::lorenz(), Eigen::Vector3d(1, 1, 1), opt);
    CHECK(s.sum() == doctest::Approx(r.sum()).epsilon(1e-3));
}

TEST_CASE("lyapunov on an escaping orbit advises a different start") {
    LyapunovOptions opt;
    opt.T = 100.0;
    opt.transient = 0.0;
    opt.escape_radius = 1e3;
    try {
        (void)lyapunov_spectrum(ReferenceSystem::linear_test({1.0}), Eigen::VectorXd::Ones(1), opt);
        FAIL("expected EscapeError");
    } catch (const EscapeError& e) {
        // Escape is detected at the first renormalization after crossing the radius.
        CHECK(e.escape_time() >= std::log(1e3));
        CHECK(e.escape_time() <= std::log(1e3) + opt.renorm_interval + 1e-9);
        CHECK(std::string(e.what()).find("initial state") != std::string::npos);
    }
}

TEST_CASE("fixed point of dX/dt = -X") {
    const auto ds = test::linear_dataset(-Eigen::Matrix3d::Identity(), 300, 5);
    const auto model = test::linear_model(-Eigen::Matrix3d::Identity(), test::small_rbf_spec(ds, 1.0));
    const auto report = find_fixed_points(model, seed_grid(3, -5.0, 5.0, 3));
    REQUIRE(report.points.size() == 1);
    const auto& p = report.points[0];
    CHECK(p.location.norm() <= 1e-12);
    CHECK(p.unstable_count == 0);
    for (const auto& e : p.eigenvalues) {
        CHECK(e.real() == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(e.imag() == 0.0);
    }
    CHECK(report.seeds == 27);
}

TEST_CASE("fixed points of the original lorenz system") {
    const auto report = find_fixed_points(ReferenceSystem::lorenz(), seed_grid(3, -20.0, 30.0, 6));
    std::vector<Eigen::Vector3d> roots;
    for (const auto& p : report.points) roots.emplace_back(p.location);
    std::sort(roots.begin(), roots.end(), [](const auto& a, const auto& b) { return a[0] < b[0]; });
    REQUIRE(roots.size() == 3);
    const double r = std::sqrt(72.0);
    CHECK((roots[0] - Eigen::Vector3d(-r, -r, 27)).norm() <= 1e-9);
    CHECK(roots[1].norm() <= 1e-9);
    CHECK((roots[2] - Eigen::Vector3d(r, r, 27)).norm() <= 1e-9);
    CHECK(r == doctest::Approx(8.4853).epsilon(1e-5));
    // A constant series x = x* embeds at (x*, x*, x*).
    ScalarSeries c;
    c.values.assign(100, r);
    const auto traj = delay_embed(c, 3, 26);
    CHECK(traj.states.row(0) == Eigen::RowVector3d(r, r, r));
}

TEST_CASE("seed grid") {
    const auto g = seed_grid(2, -1.0, 1.0, 3);
    CHECK(g.rows() == 9);
    CHECK(g.minCoeff() == -1.0);
    CHECK(g.maxCoeff() == 1.0);
    CHECK(seed_grid(3, 0.0, 0.0, 1).rows() == 1);
    CHECK_THROWS_AS((void)seed_grid(2, 1.0, -1.0, 3), ConfigError);
}

TEST_CASE("basin of a contracting field is fully retained") {
    const auto ds = test::linear_dataset(-Eigen::Matrix3d::Identity(), 200, 6);
    const auto model = test::linear_model(-Eigen::Matrix3d::Identity(), test::small_rbf_spec(ds, 1.0));
    const auto map = basin_scan(model, small_basin(3, 12, -20, 20));
    CHECK(map.escaped_count() == 0);
    CHECK(map.cells.size() == 144);
}

TEST_CASE("basin of an expanding field is fully escaped away from the origin") {
    const auto grow = ReferenceSystem::linear_test({1.0, 1.0, 1.0});
    auto opt = small_basin(3, 10, 5, 20);
    const auto map = basin_scan(grow, opt);
    CHECK(map.escaped_count() == map.cells.size());
    for (int j = 0; j < map.nb; ++j)
        for (int i = 0; i < map.na; ++i) {
            CHECK(map.cell_escape_time(i, j) <= opt.escape_time);
            CHECK(map.cell_escape_time(i, j) >= 0.0);
        }
}

TEST_CASE("basin cell geometry") {
    const auto opt = small_basin(3, 4, -2, 2);
    const auto map = basin_scan(ReferenceSystem::linear_test({-1.0, -1.0, -1.0}), opt);
    CHECK(map.u.norm() == doctest::Approx(1.0));
    CHECK(std::abs(map.u.dot(map.v)) <= 1e-15);
    const auto x = map.cell_point(1, 2);
    const auto [a, b] = map.project(x);
    CHECK(a == doctest::Approx(-2.0 + 1.5 * 1.0));
    CHECK(b == doctest::Approx(-2.0 + 2.5 * 1.0));
    const auto cell = map.locate(x);
    REQUIRE(cell.has_value());
    CHECK(cell->first == 1);
    CHECK(cell->second == 2);
    CHECK_FALSE(map.locate(map.u * 100.0).has_value());
}

TEST_CASE("basin retained set shrinks as the escape horizon grows") {
    const auto& model = lorenz_fixture();
    auto opt = small_basin(3, 16, -20, 20);
    opt.escape_time = 1.0;
    const auto early = basin_scan(model, opt);
    opt.escape_time = 5.0;
    const auto late = basin_scan(model, opt);
    for (std::size_t c = 0; c < early.cells.size(); ++c)
        if (early.cells[c] >= 0.0) CHECK(late.cells[c] == early.cells[c]);
    CHECK(late.escaped_count() >= early.escaped_count());
    CHECK(late.escaped_count() > 0);
    CHECK(late.escaped_count() < late.cells.size());
}

TEST_CASE("basin window reproduces the full scan on its cells") {
    const auto& model = lorenz_fixture();
    const auto full_opt = small_basin(3, 20, -20, 20);
    const auto full = basin_scan(model, full_opt);
    const Eigen::Vector3d ghost(-1.269, -1.231, -1.350);
    const auto win = basin_scan(model, basin_window(full_opt, ghost, 2));
    CHECK(win.na == 5);
    CHECK(win.nb == 5);
    const auto [ci, cj] = *full.locate(ghost);
    const auto [wi, wj] = *win.locate(ghost);
    CHECK(wi == 2);
    CHECK(wj == 2);
    for (int j = 0; j < 5; ++j)
        for (int i = 0; i < 5; ++i)
            CHECK(win.cell_escape_time(i, j) == full.cell_escape_time(ci - 2 + i, cj - 2 + j));
    CHECK(win.near_boundary(wi, wj) == full.near_boundary(ci, cj));
    CHECK_THROWS_AS((void)basin_window(full_opt, Eigen::Vector3d(100, 100, 100), 2), ConfigError);
}

TEST_CASE("valid time of identical and diverging series") {
    ScalarSeries a;
    a.dt = 0.01;
    for (int i = 0; i < 500; ++i) a.values.push_back(std::sin(0.01 * i));
    CHECK(short_term_valid_time(a, a, 1.0) == doctest::Approx(4.99));
    ScalarSeries b = a;
    for (std::size_t i = 200; i < b.size(); ++i) b.values[i] += 1.0;
    CHECK(short_term_valid_time(a, b, 1.0, 0.4) == doctest::Approx(2.0));
    b.dt = 0.02;
    CHECK_THROWS_AS((void)short_term_valid_time(a, b, 1.0), ConfigError);
}

TEST_CASE("valid time follows the leading lyapunov exponent") {
    const auto& model = lorenz_fixture();
    const double sigma = model.scaling().std[0];
    const double eps = 1e-6;
    const double lambda1 = 0.898;
    const double predicted = std::log(0.4 * sigma / eps) / lambda1;
    const auto warm = integrate(model, Eigen::Vector3d(3.1, 3.2, 7.6), 50.0, 0.005);
    Eigen::VectorXd x = warm.trajectory.states.bottomRows(1).transpose();
    std::mt19937_64 rng(21);
    std::vector<double> times;
    for (int k = 0; k < 12; ++k) {
        Eigen::VectorXd dx = test::random_matrix(3, 1, rng);
        dx *= eps / dx.norm();
        const auto base = integrate(model, x, 60.0, 0.005);
        const auto pert = integrate(model, x + dx, 60.0, 0.005);
        ScalarSeries m, r;
        m.dt = r.dt = 0.005;
        m.values = pert.trajectory.component(0);
        r.values = base.trajectory.component(0);
        times.push_back(short_term_valid_time(m, r, sigma));
        x = base.trajectory.states.bottomRows(1).transpose();
    }
    std::sort(times.begin(), times.end());
    const double median = 0.5 * (times[5] + times[6]);
    CAPTURE(predicted);
    CHECK(median >= 0.7 * predicted);
    CHECK(median <= 1.3 * predicted);
}

TEST_CASE("lambda sweep isolates failing rows") {
    // dX/dt = +X: weak regularization keeps the growth and escapes, strong
    // regularization flattens the field.
    const Eigen::Matrix2d grow = Eigen::Matrix2d::Identity();
    const auto ds = test::linear_dataset(grow, 200, 8);
    const auto spec = BasisSpec::polynomial(2, 1);
    SweepValidation v;
    v.x0 = Eigen::Vector2d(0.3, 0.2);
    v.T = 20.0;
    v.dt = 0.01;
    v.tau_steps = 1;
    v.reference_x1 = {0.1, 0.2, 0.3, 0.2};
    v.bins = 10;
    v.escape_radius = 1e3;
    const std::vector<double> lambdas = {1e-6, 1e6, -1.0};
    const auto result = lambda_sweep(ds, spec, lambdas, v);
    REQUIRE(result.rows.size() == 3);
    CHECK_FALSE(result.rows[0].ok);
    CHECK(result.rows[0].error.find("escaped") != std::string::npos);
    CHECK(result.rows[1].ok);
    CHECK(result.rows[1].model.has_value());
    CHECK_FALSE(result.rows[2].ok);
    REQUIRE(result.best.has_value());
    CHECK(*result.best == 1);

    const std::vector<double> single = {1e6};
    const auto one = lambda_sweep(ds, spec, single, v);
    CHECK(one.rows.size() == 1);
    CHECK(one.best == std::optional<std::size_t>(0));
    CHECK_THROWS_AS((void)lambda_sweep(ds, spec, std::vector<double>{}, v), ConfigError);
}

}  // TEST_SUITE
