#include "odeforge/regress.hpp"

#include "odeforge/errors.hpp"

#include <cmath>

namespace odeforge {

namespace {

void check_lambda(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("ridge lambda must be finite and >= 0");
}

void symmetrize_lower(Eigen::MatrixXd& g) { g.triangularView<Eigen::StrictlyUpper>() = g.transpose(); }

}  // namespace

NormalEquations normal_equations(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Y) {
    if (A.rows() != Y.rows()) throw ConfigError("feature matrix and targets have different row counts");
    if (A.rows() < 1 || A.cols() < 1) throw ConfigError("ridge problem needs n >= 1 and F >= 1");
    if (!A.allFinite() || !Y.allFinite()) throw DataError("ridge problem has non-finite entries");
    NormalEquations eq;
    eq.n = static_cast<std::size_t>(A.rows());
    eq.gram = Eigen::MatrixXd::Zero(A.cols(), A.cols());
    eq.gram.selfadjointView<Eigen::Lower>().rankUpdate(A.transpose());
    symmetrize_lower(eq.gram);
    eq.rhs = A.transpose() * Y;
    return eq;
}

NormalEquations normal_equations(const RegressionDataset& dataset, const FeatureMap& features,
                                 Eigen::Index block_rows) {
    if (dataset.dim() != features.dim())
        throw ConfigError("dataset dimension " + std::to_string(dataset.dim()) + " does not match basis dimension " +
                          std::to_string(features.dim()));
    const auto n = static_cast<Eigen::Index>(dataset.size());
    if (n < 1) throw DataError("regression dataset is empty");
    const auto F = static_cast<Eigen::Index>(features.size());
    NormalEquations eq;
    eq.n = static_cast<std::size_t>(n);
    eq.gram = Eigen::MatrixXd::Zero(F, F);
    eq.rhs = Eigen::MatrixXd::Zero(F, dataset.dim());
    Eigen::MatrixXd block;
    for (Eigen::Index first = 0; first < n; first += block_rows) {
        const auto rows = std::min(block_rows, n - first);
        block.resize(rows, F);
        features.eval_rows(dataset.inputs, first, block);
        if (!block.allFinite()) throw NumericalError("non-finite feature values while assembling normal equations");
        eq.gram.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
        eq.rhs.noalias() += block.transpose() * dataset.targets.middleRows(first, rows);
    }
    symmetrize_lower(eq.gram);
    return eq;
}

Eigen::MatrixXd solve_ridge(const NormalEquations& eq, double lambda) {
    check_lambda(lambda);
    Eigen::MatrixXd reg = eq.gram;
    reg.diagonal().array() += static_cast<double>(eq.n) * lambda;

    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() == Eigen::Success) {
        Eigen::MatrixXd beta = llt.solve(eq.rhs);
        const Eigen::MatrixXd residual = eq.rhs - reg * beta;
        beta += llt.solve(residual);
        if (beta.allFinite()) return beta;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(reg);
    if (qr.rank() < reg.cols())
        throw SingularSystemError("regularized normal equations are singular (rank " + std::to_string(qr.rank()) +
                                  " of " + std::to_string(reg.cols()) + ") at lambda=" + format_real(lambda) +
                                  "; use lambda > 0");
    Eigen::MatrixXd beta = qr.solve(eq.rhs);
    if (!beta.allFinite()) throw SingularSystemError("ridge solve produced non-finite coefficients; use lambda > 0");
    return beta;
}

Eigen::VectorXd ridge_fit(const RidgeProblem& problem) {
    if (problem.y.size() != problem.A.rows()) throw ConfigError("ridge problem: y length does not match A rows");
    const auto eq = normal_equations(problem.A, problem.y);
    return solve_ridge(eq, problem.lambda).col(0);
}

OdeModel model_from_normal_equations(const NormalEquations& eq, const RegressionDataset& dataset,
                                     const BasisSpec& spec, double lambda, ModelMeta meta) {
    const int D = dataset.dim();
    Eigen::MatrixXd beta;
    try {
        beta = solve_ridge(eq, lambda);
    } catch (const SingularSystemError& e) {
        throw SingularSystemError(std::string("component fit: ") + e.what());
    }
    for (int k = 0; k < D; ++k)
        if (!beta.col(k).allFinite())
            throw NumericalError("component " + std::to_string(k + 1) + " fit produced non-finite coefficients");

    CoefficientSet coeffs;
    coeffs.beta = beta.transpose();
    coeffs.lambda = lambda;

    // Residual norms in a second pass over the feature rows.
    const FeatureMap features(spec);
    const auto n = static_cast<Eigen::Index>(dataset.size());
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(D);
    Eigen::MatrixXd block;
    constexpr Eigen::Index kBlock = 1024;
    for (Eigen::Index first = 0; first < n; first += kBlock) {
        const auto rows = std::min(kBlock, n - first);
        block.resize(rows, static_cast<Eigen::Index>(features.size()));
        features.eval_rows(dataset.inputs, first, block);
        const Eigen::MatrixXd r = dataset.targets.middleRows(first, rows) - block * beta;
        sq += r.colwise().squaredNorm().transpose();
    }
    coeffs.residual_norms = sq.cwiseSqrt();

    meta.lambda = lambda;
    meta.samples = dataset.size();
    return OdeModel(spec, std::move(coeffs), dataset.scaling, std::move(meta));
}

OdeModel fit_model(const RegressionDataset& dataset, const BasisSpec& spec, double lambda, ModelMeta meta) {
    spec.validate();
    if (spec.feature_count() == 0) throw ConfigError("basis has no features");
    check_lambda(lambda);
    const FeatureMap features(spec);
    const auto eq = normal_equations(dataset, features);
    return model_from_normal_equations(eq, dataset, spec, lambda, std::move(meta));
}

RegressionErrorReport regression_error(const OdeModel& model, const RegressionDataset& dataset) {
    if (!(model.scaling() == dataset.scaling))
        throw ConfigError("regression_error: model and dataset scalings differ");
    if (model.dim() != dataset.dim()) throw ConfigError("regression_error: dimension mismatch");
    RegressionErrorReport report;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < dataset.inputs.rows(); ++i) {
        const Eigen::VectorXd y = dataset.targets.row(i).transpose();
        const double ny = y.norm();
        if (ny < 1e-12) {
            ++report.excluded;
            continue;
        }
        const Eigen::VectorXd f = model.eval_standardized(dataset.inputs.row(i).transpose());
        const double e = (f - y).norm() / ny;
        report.errors.push_back(e);
        report.sample_rows.push_back(static_cast<std::size_t>(i));
        sum += e;
    }
    report.mean = report.errors.empty() ? 0.0 : sum / static_cast<double>(report.errors.size());
    return report;
}

}  // namespace odeforge
