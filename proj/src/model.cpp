#include "odeforge/model.hpp"

#include "odeforge/errors.hpp"

#include <cmath>

namespace odeforge {

Eigen::VectorXd VectorField::rhs(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != dim()) throw ConfigError("state dimension mismatch");
    Eigen::VectorXd xs = x;
    Eigen::VectorXd out(dim());
    rhs(xs.data(), out.data());
    return out;
}

Eigen::MatrixXd VectorField::jacobian(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != dim()) throw ConfigError("state dimension mismatch");
    Eigen::VectorXd xs = x;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> jac(dim(), dim());
    jacobian(xs.data(), jac.data());
    return jac;
}

// ---------------------------------------------------------------------------

ReferenceSystem::ReferenceSystem(Kind kind, std::vector<double> params, int dim)
    : kind_(kind), params_(std::move(params)), dim_(dim) {}

ReferenceSystem ReferenceSystem::lorenz(double sigma, double rho, double beta) {
    return ReferenceSystem(Kind::Lorenz, {sigma, rho, beta}, 3);
}

ReferenceSystem ReferenceSystem::linear_test(std::vector<double> rates) {
    if (rates.empty()) throw ConfigError("linear-test system needs at least one rate");
    const int dim = static_cast<int>(rates.size());
    return ReferenceSystem(Kind::LinearTest, std::move(rates), dim);
}

ReferenceSystem ReferenceSystem::custom_coefficients(std::vector<double> row_major_matrix) {
    const auto n = row_major_matrix.size();
    const auto dim = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (n == 0 || static_cast<std::size_t>(dim * dim) != n)
        throw ConfigError("custom-coefficients system needs D*D matrix entries");
    return ReferenceSystem(Kind::CustomCoefficients, std::move(row_major_matrix), dim);
}

std::string ReferenceSystem::name() const {
    switch (kind_) {
        case Kind::Lorenz: return "lorenz";
        case Kind::LinearTest: return "linear-test";
        case Kind::CustomCoefficients: return "custom-coefficients";
    }
    return "unknown";
}

void ReferenceSystem::rhs(const double* x, double* dxdt) const {
    switch (kind_) {
        case Kind::Lorenz: {
            const double s = params_[0], r = params_[1], b = params_[2];
            dxdt[0] = s * (x[1] - x[0]);
            dxdt[1] = r * x[0] - x[1] - x[0] * x[2];
            dxdt[2] = x[0] * x[1] - b * x[2];
            return;
        }
        case Kind::LinearTest:
            for (int d = 0; d < dim_; ++d) dxdt[d] = params_[static_cast<std::size_t>(d)] * x[d];
            return;
        case Kind::CustomCoefficients:
            for (int i = 0; i < dim_; ++i) {
                double v = 0.0;
                for (int j = 0; j < dim_; ++j) v += params_[static_cast<std::size_t>(i * dim_ + j)] * x[j];
                dxdt[i] = v;
            }
            return;
    }
}

void ReferenceSystem::jacobian(const double* x, double* jac) const {
    switch (kind_) {
        case Kind::Lorenz: {
            const double s = params_[0], r = params_[1], b = params_[2];
            jac[0] = -s;        jac[1] = s;     jac[2] = 0.0;
            jac[3] = r - x[2];  jac[4] = -1.0;  jac[5] = -x[0];
            jac[6] = x[1];      jac[7] = x[0];  jac[8] = -b;
            return;
        }
        case Kind::LinearTest:
            for (int i = 0; i < dim_ * dim_; ++i) jac[i] = 0.0;
            for (int d = 0; d < dim_; ++d) jac[d * dim_ + d] = params_[static_cast<std::size_t>(d)];
            return;
        case Kind::CustomCoefficients:
            for (int i = 0; i < dim_ * dim_; ++i) jac[i] = params_[static_cast<std::size_t>(i)];
            return;
    }
}

// ---------------------------------------------------------------------------

OdeModel::OdeModel(BasisSpec spec, CoefficientSet coeffs, ScalingParams scaling, ModelMeta meta)
    : features_(std::move(spec)), coeffs_(std::move(coeffs)), scaling_(std::move(scaling)), meta_(std::move(meta)) {
    const auto D = features_.dim();
    if (coeffs_.beta.rows() != D || coeffs_.beta.cols() != static_cast<Eigen::Index>(features_.size()))
        throw ConfigError("coefficient matrix is " + std::to_string(coeffs_.beta.rows()) + "x" +
                          std::to_string(coeffs_.beta.cols()) + ", expected " + std::to_string(D) + "x" +
                          std::to_string(features_.size()));
    scaling_.validate();
    if (scaling_.dim() != D) throw ConfigError("scaling dimension does not match the basis");
    inv_std_ = scaling_.std.cwiseInverse();
    beta_rows_ = coeffs_.beta;
}

void OdeModel::eval_raw(const double* x, double* dxdt, double* jac) const {
    const int D = dim();
    double z[64];
    std::vector<double> zbuf;
    double* zp = z;
    if (D > 64) {
        zbuf.resize(static_cast<std::size_t>(D));
        zp = zbuf.data();
    }
    for (int d = 0; d < D; ++d) zp[d] = (x[d] - scaling_.mean[d]) / scaling_.std[d];
    features_.contract(zp, beta_rows_, dxdt, jac);
    // Chain rule: F_raw = std * F_std(z), dF_raw/dx = diag(std) J_std diag(1/std).
    for (int k = 0; k < D; ++k) {
        dxdt[k] *= scaling_.std[k];
        if (jac)
            for (int d = 0; d < D; ++d) jac[k * D + d] *= scaling_.std[k] * inv_std_[d];
    }
}

void OdeModel::rhs(const double* x, double* dxdt) const { eval_raw(x, dxdt, nullptr); }

void OdeModel::jacobian(const double* x, double* jac) const {
    std::vector<double> tmp(static_cast<std::size_t>(dim()));
    eval_raw(x, tmp.data(), jac);
}

void OdeModel::rhs_and_jacobian(const double* x, double* dxdt, double* jac) const { eval_raw(x, dxdt, jac); }

Eigen::VectorXd OdeModel::eval_standardized(const Eigen::Ref<const Eigen::VectorXd>& z) const {
    if (z.size() != dim()) throw ConfigError("state dimension mismatch");
    Eigen::VectorXd zs = z;
    Eigen::VectorXd out(dim());
    features_.contract(zs.data(), beta_rows_, out.data(), nullptr);
    return out;
}

namespace {

void require_finite(const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (!x.allFinite()) throw NumericalError("non-finite state passed to model evaluation");
}

}  // namespace

Eigen::VectorXd eval_rhs(const OdeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_raw) {
    require_finite(x_raw);
    return model.rhs(x_raw);
}

Eigen::MatrixXd eval_jacobian(const OdeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_raw) {
    require_finite(x_raw);
    return model.jacobian(x_raw);
}

// ---------------------------------------------------------------------------

Rk4Stepper::Rk4Stepper(const VectorField& field) : field_(field) {
    const auto n = static_cast<std::size_t>(field.dim());
    k1_.resize(n);
    k2_.resize(n);
    k3_.resize(n);
    k4_.resize(n);
    tmp_.resize(n);
}

void Rk4Stepper::step(double* x, double dt) {
    const auto n = k1_.size();
    field_.rhs(x, k1_.data());
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = x[i] + 0.5 * dt * k1_[i];
    field_.rhs(tmp_.data(), k2_.data());
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = x[i] + 0.5 * dt * k2_[i];
    field_.rhs(tmp_.data(), k3_.data());
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = x[i] + dt * k3_[i];
    field_.rhs(tmp_.data(), k4_.data());
    for (std::size_t i = 0; i < n; ++i) x[i] += dt / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
}

std::size_t step_count(double T, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("integration step dt must be positive");
    if (!(T >= 0.0) || !std::isfinite(T)) throw ConfigError("integration horizon T must be non-negative");
    // Tolerate T/dt landing a hair above an integer through rounding.
    return static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
}

IntegrationResult integrate(const VectorField& field, const Eigen::Ref<const Eigen::VectorXd>& x0, double T, double dt,
                            const IntegrateOptions& options) {
    const int D = field.dim();
    if (x0.size() != D) throw ConfigError("initial state has dimension " + std::to_string(x0.size()) +
                                          ", field has " + std::to_string(D));
    if (!x0.allFinite()) throw NumericalError("initial state is not finite");
    const auto steps = step_count(T, dt);

    IntegrationResult result;
    auto& traj = result.trajectory;
    traj.dt = dt;
    traj.t0 = options.t0;
    traj.states.resize(static_cast<Eigen::Index>(steps + 1), D);
    traj.states.row(0) = x0.transpose();

    Rk4Stepper stepper(field);
    Eigen::VectorXd x = x0;
    const double bound2 = options.escape_radius * options.escape_radius;
    std::size_t kept = steps + 1;
    if (x.squaredNorm() > bound2) {
        result.escaped = true;
        result.escape_time = options.t0;
        kept = 1;
    } else {
        for (std::size_t s = 1; s <= steps; ++s) {
            stepper.step(x.data(), dt);
            const bool finite = x.allFinite();
            if (finite) traj.states.row(static_cast<Eigen::Index>(s)) = x.transpose();
            if (!finite || x.squaredNorm() > bound2) {
                result.escaped = true;
                result.escape_time = options.t0 + static_cast<double>(s) * dt;
                kept = finite ? s + 1 : s;
                break;
            }
        }
    }
    if (kept != steps + 1) traj.states.conservativeResize(static_cast<Eigen::Index>(kept), D);
    return result;
}

ScalarSeries lorenz_observable(double T, double dt, const Eigen::Vector3d& x0, double transient,
                               const ReferenceSystem& system) {
    if (system.dim() != 3) throw ConfigError("lorenz_observable needs a 3-dimensional system");
    if (!(transient >= 0.0)) throw ConfigError("transient must be non-negative");
    Eigen::VectorXd x = x0;
    Rk4Stepper stepper(system);
    const auto warm = step_count(transient, dt);
    for (std::size_t s = 0; s < warm; ++s) stepper.step(x.data(), dt);
    if (!x.allFinite()) throw NumericalError("Lorenz transient diverged");

    const auto steps = step_count(T, dt);
    ScalarSeries out;
    out.dt = dt;
    out.t0 = 0.0;
    out.label = "x";
    out.values.reserve(steps + 1);
    out.values.push_back(x[0]);
    for (std::size_t s = 0; s < steps; ++s) {
        stepper.step(x.data(), dt);
        out.values.push_back(x[0]);
    }
    if (!x.allFinite()) throw NumericalError("Lorenz integration diverged");
    return out;
}

}  // namespace odeforge
