#pragma once

#include "odeforge/timeseries.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace odeforge {

/// Gaussian centers on the lattice delta_grid * Z^D, in standardized coordinates.
struct RbfGrid {
    StateMatrix centers;  ///< J x D
    double sigma2 = 1.0;
    double delta_grid = 1.0;
    int m = 3;
    double p = 0.1;

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(centers.rows()); }
};

enum class BasisKind { LinearRbf, Polynomial };

std::string to_string(BasisKind kind);
BasisKind basis_kind_from_string(const std::string& text);

struct BasisSpec {
    BasisKind kind = BasisKind::LinearRbf;
    int dim = 0;
    std::optional<RbfGrid> rbf;
    int poly_degree = 0;

    static BasisSpec linear_rbf(int dim, RbfGrid grid);
    static BasisSpec polynomial(int dim, int degree);

    /// 1 + D + J for linear+rbf; C(D + degree, degree) for polynomial.
    [[nodiscard]] std::size_t feature_count() const;
    void validate() const;
};

/// sigma^2 = ((m - 1) * delta)^2 / (-ln p)
double rbf_sigma2(double delta_grid, int m, double p);

inline constexpr std::size_t kDefaultMaxCenters = 1'000'000;

/// Keeps every lattice node within (m - 1) * delta (Euclidean) of some dataset
/// input. Centers are ordered lexicographically by lattice index.
RbfGrid build_rbf_centers(const StateMatrix& points, double delta_grid, int m = 3, double p = 0.1,
                          std::size_t max_centers = kDefaultMaxCenters);
RbfGrid build_rbf_centers(const RegressionDataset& dataset, double delta_grid, int m = 3, double p = 0.1,
                          std::size_t max_centers = kDefaultMaxCenters);

/// Exponent table of the polynomial basis, graded lexicographic: by total degree,
/// then by descending exponent of X1, X2, ... Row f is the exponent vector of feature f.
std::vector<std::vector<int>> monomial_exponents(int dim, int degree);

/// Evaluates a BasisSpec. Gaussians are computed as products of per-axis factors,
/// which is exact in real arithmetic because the centers lie on a lattice.
class FeatureMap {
public:
    explicit FeatureMap(BasisSpec spec);

    [[nodiscard]] const BasisSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] int dim() const noexcept { return spec_.dim; }
    [[nodiscard]] std::size_t size() const noexcept { return count_; }

    void eval(const double* x, double* out) const;
    [[nodiscard]] Eigen::VectorXd eval(const Eigen::Ref<const Eigen::VectorXd>& x) const;

    /// Row f, column d is d feature_f / d X_d. `out` must be size() x dim().
    void jacobian(const double* x, Eigen::Ref<Eigen::MatrixXd> out) const;
    [[nodiscard]] Eigen::MatrixXd jacobian(const Eigen::Ref<const Eigen::VectorXd>& x) const;

    /// Features of rows [first, first + out.rows()) of `inputs` into `out`.
    void eval_rows(const StateMatrix& inputs, Eigen::Index first, Eigen::MatrixXd& out) const;

    /// sum_f coeffs(k, f) * feature_f(x) for each row k, and optionally the
    /// K x D Jacobian of that map. Avoids materializing the feature vector
    /// for the Gaussian block.
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    void contract(const double* x, const RowMatrix& coeffs, double* value, double* jac_rowmajor) const;

private:
    void check_dim(Eigen::Index n) const;
    void rbf_axis_tables(const double* x, std::vector<double>& gauss, std::vector<double>* slope) const;
    void rbf_values(const std::vector<double>& gauss, double* phi) const;

    /// Consecutive centers sharing all but the last lattice index.
    struct Run {
        std::uint32_t first;
        std::uint32_t length;
        std::uint32_t last_axis;  ///< flat table offset of the first center's last coordinate
    };

    BasisSpec spec_;
    std::size_t count_ = 0;
    // linear+rbf: per-axis tables span the lattice index range [axis_lo_, axis_lo_ + n)
    std::vector<std::int64_t> axis_lo_;
    std::vector<std::size_t> axis_offset_;
    std::vector<std::uint32_t> center_axis_index_;  ///< J x D, offsets into the flat axis table
    std::vector<Run> runs_;
    double inv_sigma2_ = 1.0;
    double delta_ = 1.0;
    // polynomial
    std::vector<std::vector<int>> exponents_;
};

/// One-off evaluation helpers over a spec.
Eigen::VectorXd eval_features(const Eigen::Ref<const Eigen::VectorXd>& x, const BasisSpec& spec);
Eigen::MatrixXd eval_feature_jacobian(const Eigen::Ref<const Eigen::VectorXd>& x, const BasisSpec& spec);

}  // namespace odeforge
