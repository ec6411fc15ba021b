#include "odeforge/errors.hpp"
#include "odeforge/model.hpp"
#include "odeforge/timeseries.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

using namespace odeforge;

namespace {

StateTrajectory trajectory_of(double dt, int dim, std::size_t n, double (*f)(double, int)) {
    StateTrajectory traj;
    traj.dt = dt;
    traj.states.resize(static_cast<Eigen::Index>(n), dim);
    for (std::size_t i = 0; i < n; ++i)
        for (int d = 0; d < dim; ++d) traj.states(static_cast<Eigen::Index>(i), d) = f(static_cast<double>(i) * dt, d);
    return traj;
}

ScalarSeries ramp(std::size_t n) {
    ScalarSeries s;
    s.values.resize(n);
    std::iota(s.values.begin(), s.values.end(), 0.0);
    return s;
}

/// Pearson correlation written out directly.
double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= n, mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_SUITE("timeseries") {

TEST_CASE("csv column of ten values reads back") {
    test::TempDir dir;
    const auto path = dir.path() / "x.csv";
    std::ofstream(path) << "t,x\n0,0.5\n1,1.5\n2,2.5\n3,3.5\n4,4.5\n5,5.5\n6,6.5\n7,7.5\n8,8.5\n9,9.5\n";
    const auto s = load_series(path, ColumnRef::parse("x"), 0.005);
    REQUIRE(s.size() == 10);
    CHECK(s.dt == 0.005);
    CHECK(s.values[3] == 3.5);
    CHECK(s.label == "x");
}

TEST_CASE("csv NaN names the row") {
    test::TempDir dir;
    const auto path = dir.path() / "bad.csv";
    std::ofstream(path) << "x\n1\n2\nNaN\n4\n";
    try {
        (void)load_series(path, ColumnRef::parse("x"), 0.005);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("row 4") != std::string::npos);
    }
}

TEST_CASE("two-column file selects column 2") {
    test::TempDir dir;
    const auto path = dir.path() / "e3.csv";
    std::ofstream(path) << "t,E3\n0,10\n0.05,11\n0.1,12.5\n";
    const auto s = load_series(path, ColumnRef::parse("2"), 0.05);
    CHECK(s.values == std::vector<double>{10, 11, 12.5});
    const auto headerless = dir.path() / "raw.csv";
    std::ofstream(headerless) << "0,10\n0.05,11\n";
    CHECK(load_series(headerless, ColumnRef::at(2), 0.05).values == std::vector<double>{10, 11});
}

TEST_CASE("missing column and unreadable file are data errors") {
    test::TempDir dir;
    const auto path = dir.path() / "a.csv";
    std::ofstream(path) << "a,b\n1,2\n";
    CHECK_THROWS_AS((void)load_series(path, ColumnRef::parse("c"), 1.0), DataError);
    CHECK_THROWS_AS((void)load_series(path, ColumnRef::at(3), 1.0), DataError);
    CHECK_THROWS_AS((void)load_series(dir.path() / "none.csv", ColumnRef::at(1), 1.0), DataError);
}

TEST_CASE("series csv round-trips bit-exactly") {
    test::TempDir dir;
    ScalarSeries s;
    s.dt = 0.005;
    s.values = {0.1, 1.0 / 3.0, -2.5e-300, 7.924397771203244};
    write_series_csv(dir.path() / "s.csv", s);
    const auto back = load_series(dir.path() / "s.csv", ColumnRef::at(2), 0.005);
    CHECK(back.values == s.values);
}

TEST_CASE("autocorrelation") {
    ScalarSeries s;
    for (int i = 0; i < 50; ++i) s.values.push_back(std::sin(0.3 * i) + 0.01 * i);
    CHECK(autocorrelation(s, 0) == doctest::Approx(1.0).epsilon(1e-14));

    ScalarSeries alt;
    for (int i = 0; i < 20; ++i) alt.values.push_back(i % 2 ? -1.0 : 1.0);
    CHECK(autocorrelation(alt, 1) == doctest::Approx(-1.0).epsilon(1e-14));

    const std::size_t lag = 7;
    const std::vector<double> now(s.values.begin() + lag, s.values.end());
    const std::vector<double> before(s.values.begin(), s.values.end() - lag);
    CHECK(autocorrelation(s, lag) == doctest::Approx(pearson(now, before)).epsilon(1e-12));
}

TEST_CASE("lorenz autocorrelation at the main delay") {
    const auto x = lorenz_observable(5000.0, 0.005, Eigen::Vector3d(1, 1, 1), 100.0);
    CHECK(autocorrelation(x, 26) == doctest::Approx(0.79).epsilon(0.02 / 0.79));
    CHECK(autocorrelation(x, 52) == doctest::Approx(0.46).epsilon(0.03 / 0.46));
}

TEST_CASE("delay embedding index arithmetic") {
    const auto traj = delay_embed(ramp(10), 3, 2);
    REQUIRE(traj.size() == 6);
    CHECK(traj.states.row(0) == Eigen::RowVector3d(4, 2, 0));
    CHECK(traj.states.row(5) == Eigen::RowVector3d(9, 7, 5));
    CHECK(traj.origin_index == 4);
    for (Eigen::Index n = 0; n < 6; ++n)
        for (int d = 0; d < 3; ++d) CHECK(traj.states(n, d) == static_cast<double>(n + 4 - 2 * d));
}

TEST_CASE("delay embedding with D=1 copies the series") {
    const auto s = ramp(7);
    for (int tau : {1, 3, 11}) {
        const auto traj = delay_embed(s, 1, tau);
        REQUIRE(traj.size() == 7);
        for (Eigen::Index i = 0; i < 7; ++i) CHECK(traj.states(i, 0) == s.values[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("delay embedding rejects short series and bad parameters") {
    CHECK_THROWS_AS((void)delay_embed(ramp(4), 3, 2), DataError);
    CHECK_THROWS_AS((void)delay_embed(ramp(10), 0, 2), ConfigError);
    CHECK_THROWS_AS((void)delay_embed(ramp(10), 2, 0), ConfigError);
}

TEST_CASE("tau must be a multiple of dt") {
    CHECK(tau_to_steps(0.13, 0.005) == 26);
    CHECK(tau_to_steps(0.09, 0.005) == 18);
    CHECK(tau_to_steps(1.5, 0.05) == 30);
    CHECK_THROWS_AS((void)tau_to_steps(0.1301, 0.005), ConfigError);
    CHECK_THROWS_AS((void)tau_to_steps(-0.1, 0.005), ConfigError);
}

TEST_CASE("stencil: constants give zero") {
    const auto traj = trajectory_of(0.01, 2, 40, [](double, int d) { return 3.0 + d; });
    const auto est = estimate_derivative(traj, 1);
    CHECK(est.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stencil is exact for polynomials up to degree 6") {
    // dt = 1/8 keeps every sample and stencil product exact in binary.
    const double dt = 0.125;
    for (int degree = 1; degree <= 6; ++degree) {
        CAPTURE(degree);
        StateTrajectory traj;
        traj.dt = dt;
        traj.states.resize(30, 1);
        for (Eigen::Index i = 0; i < 30; ++i) traj.states(i, 0) = std::pow(static_cast<double>(i) * dt - 1.0, degree);
        for (int stride : {1, 2}) {
            const auto est = estimate_derivative(traj, stride);
            REQUIRE(est.indices.size() == 30 - 6 * static_cast<std::size_t>(stride));
            for (std::size_t k = 0; k < est.indices.size(); ++k) {
                const double t = static_cast<double>(est.indices[k]) * dt - 1.0;
                const double exact = degree * std::pow(t, degree - 1);
                CHECK(est.values(static_cast<Eigen::Index>(k), 0) == doctest::Approx(exact).epsilon(1e-12).scale(1.0));
            }
        }
    }
    StateTrajectory lin = trajectory_of(dt, 3, 20, [](double t, int) { return t; });
    const auto est = estimate_derivative(lin, 1);
    for (Eigen::Index k = 0; k < est.values.rows(); ++k)
        for (int d = 0; d < 3; ++d) CHECK(est.values(k, d) == 1.0);
}

TEST_CASE("stencil on sin(t) with dt=0.01") {
    const auto traj = trajectory_of(0.01, 1, 2000, [](double t, int) { return std::sin(t); });
    const auto est = estimate_derivative(traj, 1);
    REQUIRE(est.indices.front() == 3);
    REQUIRE(est.indices.back() == 1996);
    double worst = 0.0;
    for (std::size_t k = 0; k < est.indices.size(); ++k)
        worst = std::max(worst, std::abs(est.values(static_cast<Eigen::Index>(k), 0) -
                                         std::cos(static_cast<double>(est.indices[k]) * 0.01)));
    CHECK(worst <= 1e-10);
}

TEST_CASE("stencil rejects trajectories shorter than its width") {
    const auto traj = trajectory_of(0.1, 1, 6, [](double t, int) { return t; });
    CHECK_THROWS_AS((void)estimate_derivative(traj, 1), DataError);
    CHECK_THROWS_AS((void)estimate_derivative(trajectory_of(0.1, 1, 50, [](double t, int) { return t; }), 0),
                    ConfigError);
}

TEST_CASE("sampling: fraction 1 keeps every interior point") {
    const auto s = [] {
        ScalarSeries out;
        out.dt = 0.01;
        for (int i = 0; i < 300; ++i) out.values.push_back(std::sin(0.01 * i) + 0.5 * std::cos(0.037 * i));
        return out;
    }();
    const auto traj = delay_embed(s, 2, 5);
    const auto der = estimate_derivative(traj, 1);
    for (auto policy : {SamplingPolicy::SeededRandom, SamplingPolicy::UniformStride}) {
        const auto ds = sample_points(traj, der, 1.0, policy, 3);
        CHECK(ds.size() == der.indices.size());
        CHECK(ds.source_indices == der.indices);
    }
}

TEST_CASE("sampling: seeds and standardization") {
    ScalarSeries s;
    s.dt = 0.01;
    for (int i = 0; i < 5000; ++i) s.values.push_back(3.0 + 2.0 * std::sin(0.01 * i) * std::cos(0.0031 * i));
    const auto traj = delay_embed(s, 3, 4);
    const auto der = estimate_derivative(traj, 1);
    const auto a = sample_points(traj, der, 0.05, SamplingPolicy::SeededRandom, 7);
    const auto b = sample_points(traj, der, 0.05, SamplingPolicy::SeededRandom, 7);
    const auto c = sample_points(traj, der, 0.05, SamplingPolicy::SeededRandom, 8);
    CHECK(a.size() == static_cast<std::size_t>(0.05 * static_cast<double>(der.indices.size())));
    CHECK(a.source_indices == b.source_indices);
    CHECK(a.inputs == b.inputs);
    CHECK(a.source_indices != c.source_indices);
    CHECK(std::is_sorted(a.source_indices.begin(), a.source_indices.end()));

    // One (mean, std) from component 0, applied to inputs and targets alike.
    const auto sc = observable_scaling(traj);
    const auto x1 = traj.component(0);
    const double mean = std::accumulate(x1.begin(), x1.end(), 0.0) / static_cast<double>(x1.size());
    double var = 0.0;
    for (double v : x1) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(x1.size()));
    CHECK(sc.mean[0] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(sc.std[0] == doctest::Approx(sd).epsilon(1e-12));
    CHECK(sc.mean[2] == sc.mean[0]);
    CHECK(sc.std[1] == sc.std[0]);
    for (std::size_t k = 0; k < a.size(); k += 17) {
        const auto row = static_cast<Eigen::Index>(std::find(der.indices.begin(), der.indices.end(), a.source_indices[k]) -
                                                  der.indices.begin());
        const auto idx = static_cast<Eigen::Index>(a.source_indices[k]);
        for (int d = 0; d < 3; ++d) {
            CHECK(a.inputs(static_cast<Eigen::Index>(k), d) ==
                  doctest::Approx((traj.states(idx, d) - sc.mean[d]) / sc.std[d]).epsilon(1e-14));
            CHECK(a.targets(static_cast<Eigen::Index>(k), d) ==
                  doctest::Approx(der.values(row, d) / sc.std[d]).epsilon(1e-14));
        }
    }
}

TEST_CASE("sampling: too small a fraction is an error") {
    ScalarSeries s;
    for (int i = 0; i < 100; ++i) s.values.push_back(std::sin(0.1 * i));
    const auto traj = delay_embed(s, 2, 3);
    const auto der = estimate_derivative(traj, 1);
    CHECK_THROWS_AS((void)sample_points(traj, der, 1e-6, SamplingPolicy::SeededRandom, 1), DataError);
    CHECK_THROWS_AS((void)sample_points(traj, der, 1.5, SamplingPolicy::SeededRandom, 1), ConfigError);
}

TEST_CASE("scaling round-trip") {
    const auto sc = ScalingParams::shared(0.0227, 7.92, 3);
    const Eigen::Vector3d x(1.5, -8.25, 19.0);
    CHECK((sc.unstandardize(sc.standardize(x)) - x).cwiseAbs().maxCoeff() <= 1e-14);
    StateMatrix m(2, 3);
    m << 1, 2, 3, -4, -5, -6;
    CHECK((sc.unstandardize_rows(sc.standardize_rows(m)) - m).cwiseAbs().maxCoeff() <= 1e-14);
    ScalingParams bad = ScalingParams::shared(0.0, 0.0, 2);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("lorenz training series size and spread") {
    const auto x = lorenz_observable(5000.0, 0.005, Eigen::Vector3d(1, 1, 1), 100.0);
    CHECK(x.size() == 1'000'001);
    StateTrajectory t;
    t.states = Eigen::Map<const StateMatrix>(x.values.data(), static_cast<Eigen::Index>(x.size()), 1);
    CHECK(observable_scaling(t).std[0] == doctest::Approx(7.93).epsilon(0.05 / 7.93));
    const auto traj = delay_embed(x, 3, 26);
    const auto der = estimate_derivative(traj, 1);
    const auto ds = sample_points(traj, der, 0.02, SamplingPolicy::SeededRandom, 1);
    CHECK(ds.size() == doctest::Approx(2e4).epsilon(0.01));
}

}  // TEST_SUITE
