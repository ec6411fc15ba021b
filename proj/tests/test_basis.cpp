#include "odeforge/basis.hpp"
#include "odeforge/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace odeforge;

namespace {

using Node = std::vector<long>;

/// Every lattice node within radius of some point, by exhaustive search over a
/// bounding box.
std::set<Node> brute_force_nodes(const StateMatrix& points, double delta, double radius) {
    const int D = static_cast<int>(points.cols());
    std::set<Node> out;
    const long reach = static_cast<long>(std::ceil(radius / delta)) + 1;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        Node base(static_cast<std::size_t>(D)), k(static_cast<std::size_t>(D));
        for (int d = 0; d < D; ++d) base[static_cast<std::size_t>(d)] = std::lround(points(i, d) / delta);
        long total = 1;
        for (int d = 0; d < D; ++d) total *= 2 * reach + 1;
        for (long c = 0; c < total; ++c) {
            long rest = c;
            double r2 = 0.0;
            for (int d = 0; d < D; ++d) {
                k[static_cast<std::size_t>(d)] = base[static_cast<std::size_t>(d)] + rest % (2 * reach + 1) - reach;
                rest /= 2 * reach + 1;
                const double diff = points(i, d) - delta * static_cast<double>(k[static_cast<std::size_t>(d)]);
                r2 += diff * diff;
            }
            if (r2 <= radius * radius) out.insert(k);
        }
    }
    return out;
}

std::set<Node> as_nodes(const RbfGrid& grid) {
    std::set<Node> out;
    for (Eigen::Index j = 0; j < grid.centers.rows(); ++j) {
        Node k;
        for (Eigen::Index d = 0; d < grid.centers.cols(); ++d) k.push_back(std::lround(grid.centers(j, d) / grid.delta_grid));
        out.insert(k);
    }
    return out;
}

/// Feature values computed straight from the definitions.
Eigen::VectorXd direct_features(const Eigen::VectorXd& x, const BasisSpec& spec) {
    const auto D = x.size();
    Eigen::VectorXd f(static_cast<Eigen::Index>(spec.feature_count()));
    f[0] = 1.0;
    f.segment(1, D) = x;
    for (Eigen::Index j = 0; j < spec.rbf->centers.rows(); ++j)
        f[1 + D + j] = std::exp(-(x - spec.rbf->centers.row(j).transpose()).squaredNorm() / spec.rbf->sigma2);
    return f;
}

}  // namespace

TEST_SUITE("basis") {

TEST_CASE("sigma^2 closed form") {
    CHECK(rbf_sigma2(0.25, 3, 0.1) == doctest::Approx(0.25 / std::log(10.0)).epsilon(1e-15));
    CHECK(rbf_sigma2(0.25, 3, 0.1) == doctest::Approx(1.7372 * 0.0625).epsilon(1e-4));
    CHECK(rbf_sigma2(0.25, 3, 0.1) == doctest::Approx(0.108574).epsilon(1e-5));
    CHECK(rbf_sigma2(1.0, 2, std::exp(-1.0)) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rbf_sigma2(0.5, 3, 0.1) == doctest::Approx(0.434294).epsilon(1e-6));
    CHECK_THROWS_AS((void)rbf_sigma2(0.0, 3, 0.1), ConfigError);
    CHECK_THROWS_AS((void)rbf_sigma2(0.25, 1, 0.1), ConfigError);
    CHECK_THROWS_AS((void)rbf_sigma2(0.25, 3, 1.0), ConfigError);
}

TEST_CASE("single point at the origin keeps nodes within 0.5") {
    StateMatrix p = StateMatrix::Zero(1, 3);
    const auto grid = build_rbf_centers(p, 0.25, 3, 0.1);
    CHECK(as_nodes(grid) == brute_force_nodes(p, 0.25, 0.5));
    // Lattice points of Z^3 with norm <= 2: 1 + 6 + 12 + 8 + 6.
    CHECK(grid.size() == 33);
    for (Eigen::Index j = 0; j < grid.centers.rows(); ++j) CHECK(grid.centers.row(j).norm() <= 0.5 + 1e-12);
}

TEST_CASE("pruning matches brute force on random clouds") {
    std::mt19937_64 rng(11);
    for (int D : {1, 2, 3, 4}) {
        for (int m : {2, 3, 4}) {
            CAPTURE(D);
            CAPTURE(m);
            const StateMatrix p = test::random_matrix(25, D, rng);
            const double delta = 0.3;
            const auto grid = build_rbf_centers(p, delta, m, 0.1);
            CHECK(as_nodes(grid) == brute_force_nodes(p, delta, (m - 1) * delta));
            CHECK(grid.size() == as_nodes(grid).size());
        }
    }
}

TEST_CASE("m=2 at a lattice node gives 1 + 2D centers") {
    for (int D : {1, 2, 3, 5}) {
        StateMatrix p = StateMatrix::Constant(1, D, 0.75);
        CHECK(build_rbf_centers(p, 0.25, 2, 0.1).size() == static_cast<std::size_t>(1 + 2 * D));
    }
}

TEST_CASE("one point and a coarse lattice keeps only the nearby nodes") {
    StateMatrix p(1, 3);
    p << 0.1, -0.2, 0.05;
    const auto grid = build_rbf_centers(p, 10.0, 2, 0.1);
    REQUIRE(grid.size() == 4);
    StateMatrix expected(4, 3);
    expected << 0, -10, 0, 0, 0, 0, 0, 0, 10, 10, 0, 0;
    CHECK(grid.centers == expected);
}

TEST_CASE("center ordering is lexicographic and deterministic") {
    std::mt19937_64 rng(5);
    const StateMatrix p = test::random_matrix(40, 3, rng);
    const auto a = build_rbf_centers(p, 0.4, 3, 0.1);
    const auto b = build_rbf_centers(p, 0.4, 3, 0.1);
    CHECK(a.centers == b.centers);
    for (Eigen::Index j = 1; j < a.centers.rows(); ++j) {
        const Eigen::RowVectorXd prev = a.centers.row(j - 1), cur = a.centers.row(j);
        CHECK(std::lexicographical_compare(prev.data(), prev.data() + 3, cur.data(), cur.data() + 3));
    }
}

TEST_CASE("center cap is enforced") {
    StateMatrix p = StateMatrix::Zero(1, 3);
    CHECK_THROWS_AS((void)build_rbf_centers(p, 0.25, 3, 0.1, 10), ConfigError);
    CHECK_THROWS_AS((void)build_rbf_centers(StateMatrix(0, 3), 0.25, 3, 0.1), DataError);
}

TEST_CASE("gaussian values at and away from a center") {
    RbfGrid grid;
    grid.delta_grid = 0.5;
    grid.m = 3;
    grid.p = 0.1;
    grid.sigma2 = rbf_sigma2(0.5, 3, 0.1);
    grid.centers.resize(2, 2);
    grid.centers << 0.5, -1.0, 1.0, 0.0;
    const auto spec = BasisSpec::linear_rbf(2, grid);
    const Eigen::Vector2d at(0.5, -1.0);
    const auto f = eval_features(at, spec);
    REQUIRE(f.size() == 5);
    CHECK(f[0] == 1.0);
    CHECK(f[1] == 0.5);
    CHECK(f[2] == -1.0);
    CHECK(f[3] == 1.0);
    const double s = std::sqrt(grid.sigma2);
    const Eigen::Vector2d one_sigma(0.5 + s * 0.6, -1.0 + s * 0.8);
    CHECK(eval_features(one_sigma, spec)[3] == doctest::Approx(std::exp(-1.0)).epsilon(1e-13));
    CHECK(std::exp(-1.0) == doctest::Approx(0.367879).epsilon(1e-6));
}

TEST_CASE("separable evaluation matches the direct formula") {
    std::mt19937_64 rng(17);
    RegressionDataset ds;
    ds.inputs = test::random_matrix(60, 3, rng);
    const auto spec = BasisSpec::linear_rbf(3, build_rbf_centers(ds, 0.25, 3, 0.1));
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd x = test::random_matrix(3, 1, rng, 1.3);
        const auto direct = direct_features(x, spec);
        const auto fast = eval_features(x, spec);
        CHECK((fast - direct).cwiseAbs().maxCoeff() <= 1e-13);
    }
}

TEST_CASE("polynomial features in graded lexicographic order") {
    const auto spec = BasisSpec::polynomial(2, 2);
    const auto f = eval_features(Eigen::Vector2d(2, 3), spec);
    CHECK(f.size() == 6);
    Eigen::VectorXd expected(6);
    expected << 1, 2, 3, 4, 6, 9;
    CHECK(f == expected);
}

TEST_CASE("polynomial feature count is C(D + degree, degree)") {
    const auto binom = [](int n, int k) {
        double r = 1;
        for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
        return static_cast<std::size_t>(std::lround(r));
    };
    for (int D : {1, 2, 3, 4})
        for (int deg : {1, 2, 5, 8}) {
            CHECK(BasisSpec::polynomial(D, deg).feature_count() == binom(D + deg, deg));
            CHECK(monomial_exponents(D, deg).size() == binom(D + deg, deg));
        }
    CHECK(BasisSpec::polynomial(3, 8).feature_count() == 165);
}

TEST_CASE("feature jacobian matches central differences") {
    std::mt19937_64 rng(23);
    RegressionDataset ds;
    ds.inputs = test::random_matrix(30, 3, rng);
    const std::vector<BasisSpec> specs = {BasisSpec::linear_rbf(3, build_rbf_centers(ds, 0.5, 3, 0.1)),
                                          BasisSpec::polynomial(3, 4)};
    const double h = 1e-6;
    for (const auto& spec : specs) {
        for (int trial = 0; trial < 10; ++trial) {
            const Eigen::VectorXd x = test::random_matrix(3, 1, rng, 0.8);
            const auto J = eval_feature_jacobian(x, spec);
            REQUIRE(J.rows() == static_cast<Eigen::Index>(spec.feature_count()));
            REQUIRE(J.cols() == 3);
            double worst = 0.0;
            for (int d = 0; d < 3; ++d) {
                Eigen::VectorXd xp = x, xm = x;
                xp[d] += h;
                xm[d] -= h;
                const Eigen::VectorXd fd = (eval_features(xp, spec) - eval_features(xm, spec)) / (2 * h);
                worst = std::max(worst, (J.col(d) - fd).cwiseAbs().maxCoeff());
            }
            CHECK(worst <= 1e-6);
            CHECK(J.row(0).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("rbf gradient vanishes at its center") {
    StateMatrix p = StateMatrix::Zero(1, 2);
    const auto spec = BasisSpec::linear_rbf(2, build_rbf_centers(p, 0.5, 2, 0.1));
    const auto& c = spec.rbf->centers;
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
        const auto J = eval_feature_jacobian(c.row(j).transpose(), spec);
        CHECK(J.row(3 + j).cwiseAbs().maxCoeff() == 0.0);
        CHECK(J.block(1, 0, 2, 2) == Eigen::Matrix2d::Identity());
    }
}

TEST_CASE("contract equals coefficients times features") {
    std::mt19937_64 rng(29);
    RegressionDataset ds;
    ds.inputs = test::random_matrix(40, 3, rng);
    for (const auto& spec :
         {BasisSpec::linear_rbf(3, build_rbf_centers(ds, 0.4, 3, 0.1)), BasisSpec::polynomial(3, 3)}) {
        const FeatureMap map(spec);
        const FeatureMap::RowMatrix B = test::random_matrix(3, static_cast<Eigen::Index>(map.size()), rng);
        const Eigen::VectorXd x = test::random_matrix(3, 1, rng);
        Eigen::Vector3d value;
        FeatureMap::RowMatrix jac(3, 3);
        map.contract(x.data(), B, value.data(), jac.data());
        CHECK((value - B * map.eval(x)).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((jac - B * map.jacobian(x)).cwiseAbs().maxCoeff() <= 1e-11);
    }
}

TEST_CASE("feature map rejects dimension mismatch and off-lattice centers") {
    StateMatrix p = StateMatrix::Zero(1, 2);
    auto grid = build_rbf_centers(p, 0.5, 2, 0.1);
    const FeatureMap map(BasisSpec::linear_rbf(2, grid));
    CHECK_THROWS_AS((void)map.eval(Eigen::Vector3d(0, 0, 0)), ConfigError);
    grid.centers(0, 0) += 0.1;
    CHECK_THROWS_AS(FeatureMap(BasisSpec::linear_rbf(2, grid)), ConfigError);
    CHECK_THROWS_AS((void)BasisSpec::polynomial(2, 0).validate(), ConfigError);
}

TEST_CASE("basis kind names") {
    CHECK(to_string(BasisKind::LinearRbf) == "linear+rbf");
    CHECK(basis_kind_from_string("polynomial") == BasisKind::Polynomial);
    CHECK_THROWS_AS((void)basis_kind_from_string("spline"), ConfigError);
}

}  // TEST_SUITE
