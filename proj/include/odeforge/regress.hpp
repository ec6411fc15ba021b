#pragma once

#include "odeforge/basis.hpp"
#include "odeforge/model.hpp"
#include "odeforge/timeseries.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace odeforge {

/// Minimize (1/2n) ||y - A b||^2 + (lambda/2) ||b||^2.
struct RidgeProblem {
    Eigen::MatrixXd A;
    Eigen::VectorXd y;
    double lambda = 0.0;
};

/// beta = (A^T A + n lambda I)^{-1} A^T y. Throws SingularSystemError when the
/// regularized Gram matrix cannot be factorized (only possible at lambda = 0).
Eigen::VectorXd ridge_fit(const RidgeProblem& problem);

/// Gram matrix and right-hand sides shared by every component fit.
struct NormalEquations {
    Eigen::MatrixXd gram;  ///< A^T A, F x F
    Eigen::MatrixXd rhs;   ///< A^T Y, F x K
    std::size_t n = 0;
};

NormalEquations normal_equations(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Y);

/// Streams feature rows in blocks so A is never held in memory.
NormalEquations normal_equations(const RegressionDataset& dataset, const FeatureMap& features,
                                 Eigen::Index block_rows = 1024);

/// Solves (G + n lambda I) B = rhs for all K columns. Cholesky with one step of
/// iterative refinement; falls back to a rank-revealing QR when Cholesky fails.
Eigen::MatrixXd solve_ridge(const NormalEquations& eq, double lambda);

/// Fits one ridge problem per derivative component on a shared feature matrix.
OdeModel fit_model(const RegressionDataset& dataset, const BasisSpec& spec, double lambda, ModelMeta meta = {});

/// Packages coefficients solved from precomputed normal equations.
OdeModel model_from_normal_equations(const NormalEquations& eq, const RegressionDataset& dataset,
                                     const BasisSpec& spec, double lambda, ModelMeta meta = {});

struct RegressionErrorReport {
    std::vector<double> errors;  ///< per included sample, ||F(X_i) - y_i|| / ||y_i||
    std::vector<std::size_t> sample_rows;
    double mean = 0.0;
    std::size_t excluded = 0;  ///< samples with ||y_i|| < 1e-12
};

/// Relative regression error in standardized space.
RegressionErrorReport regression_error(const OdeModel& model, const RegressionDataset& dataset);

}  // namespace odeforge
