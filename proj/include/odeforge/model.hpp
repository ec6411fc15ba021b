#pragma once

#include "odeforge/basis.hpp"
#include "odeforge/timeseries.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace odeforge {

/// Autonomous right-hand side dX/dt = F(X) in raw coordinates.
class VectorField {
public:
    virtual ~VectorField() = default;

    [[nodiscard]] virtual int dim() const = 0;
    virtual void rhs(const double* x, double* dxdt) const = 0;
    /// Row-major D x D Jacobian.
    virtual void jacobian(const double* x, double* jac) const = 0;
    virtual void rhs_and_jacobian(const double* x, double* dxdt, double* jac) const {
        rhs(x, dxdt);
        jacobian(x, jac);
    }

    [[nodiscard]] Eigen::VectorXd rhs(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    [[nodiscard]] Eigen::MatrixXd jacobian(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

/// Ground-truth systems used for data generation and tests.
class ReferenceSystem final : public VectorField {
public:
    enum class Kind { Lorenz, LinearTest, CustomCoefficients };

    /// dx/dt = s (y - x), dy/dt = r x - y - x z, dz/dt = x y - b z
    static ReferenceSystem lorenz(double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0);
    /// dX/dt = diag(rates) X
    static ReferenceSystem linear_test(std::vector<double> rates);
    /// dX/dt = A X with A given row-major (D*D parameters).
    static ReferenceSystem custom_coefficients(std::vector<double> row_major_matrix);

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] std::string name() const;
    [[nodiscard]] const std::vector<double>& parameters() const noexcept { return params_; }

    [[nodiscard]] int dim() const override { return dim_; }
    void rhs(const double* x, double* dxdt) const override;
    void jacobian(const double* x, double* jac) const override;
    using VectorField::jacobian;
    using VectorField::rhs;

private:
    ReferenceSystem(Kind kind, std::vector<double> params, int dim);

    Kind kind_;
    std::vector<double> params_;
    int dim_;
};

/// Fitted coefficients: row k holds the coefficient vector of component k.
struct CoefficientSet {
    Eigen::MatrixXd beta;  ///< D x F
    double lambda = 0.0;
    Eigen::VectorXd residual_norms;  ///< ||y_k - A beta_k|| per component
};

struct ModelMeta {
    double tau = 0.0;
    int tau_steps = 0;
    double dt = 0.0;
    double training_T = 0.0;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    int stride = 1;
    double sample_fraction = 0.0;
    std::size_t samples = 0;
    std::string source;
};

/// dX/dt = F(X) with F_k(X) = std_k * sum_f beta(k, f) feature_f((X - mean) / std).
class OdeModel final : public VectorField {
public:
    OdeModel(BasisSpec spec, CoefficientSet coeffs, ScalingParams scaling, ModelMeta meta = {});

    [[nodiscard]] int dim() const override { return spec().dim; }
    void rhs(const double* x, double* dxdt) const override;
    void jacobian(const double* x, double* jac) const override;
    void rhs_and_jacobian(const double* x, double* dxdt, double* jac) const override;
    using VectorField::jacobian;
    using VectorField::rhs;

    /// F in standardized coordinates, i.e. the quantity the regression targets.
    [[nodiscard]] Eigen::VectorXd eval_standardized(const Eigen::Ref<const Eigen::VectorXd>& z) const;

    [[nodiscard]] const BasisSpec& spec() const noexcept { return features_.spec(); }
    [[nodiscard]] const FeatureMap& features() const noexcept { return features_; }
    [[nodiscard]] const CoefficientSet& coefficients() const noexcept { return coeffs_; }
    [[nodiscard]] const ScalingParams& scaling() const noexcept { return scaling_; }
    [[nodiscard]] const ModelMeta& meta() const noexcept { return meta_; }

private:
    void eval_raw(const double* x, double* dxdt, double* jac) const;

    FeatureMap features_;
    CoefficientSet coeffs_;
    ScalingParams scaling_;
    ModelMeta meta_;
    Eigen::VectorXd inv_std_;
    FeatureMap::RowMatrix beta_rows_;
};

/// Model-level evaluation with finite-input checks.
Eigen::VectorXd eval_rhs(const OdeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_raw);
Eigen::MatrixXd eval_jacobian(const OdeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_raw);

// ---------------------------------------------------------------------------
// Integration

inline constexpr double kDefaultDivergenceBound = 1e6;

struct IntegrateOptions {
    double escape_radius = kDefaultDivergenceBound;
    double t0 = 0.0;
};

struct IntegrationResult {
    StateTrajectory trajectory;
    bool escaped = false;
    double escape_time = std::numeric_limits<double>::quiet_NaN();
};

/// Classical fixed-step RK4 with reusable buffers.
class Rk4Stepper {
public:
    explicit Rk4Stepper(const VectorField& field);
    void step(double* x, double dt);

private:
    const VectorField& field_;
    std::vector<double> k1_, k2_, k3_, k4_, tmp_;
};

/// ceil(T / dt) RK4 steps of size dt; stops early when ||X|| exceeds the bound
/// or becomes non-finite. The first out-of-bound state is kept if finite.
IntegrationResult integrate(const VectorField& field, const Eigen::Ref<const Eigen::VectorXd>& x0, double T, double dt,
                            const IntegrateOptions& options = {});

/// Number of RK4 steps used for a horizon T.
std::size_t step_count(double T, double dt);

/// Integrates the Lorenz system, discards `transient`, returns x(t) sampled at dt.
ScalarSeries lorenz_observable(double T, double dt, const Eigen::Vector3d& x0, double transient,
                               const ReferenceSystem& system = ReferenceSystem::lorenz());

// ---------------------------------------------------------------------------
// Model file

inline constexpr int kModelFormatVersion = 1;

void save_model(const OdeModel& model, const std::filesystem::path& path);
OdeModel load_model(const std::filesystem::path& path);

std::string model_to_json(const OdeModel& model);
OdeModel model_from_json(const std::string& text);

}  // namespace odeforge
