#pragma once

#include "odeforge/model.hpp"
#include "odeforge/regress.hpp"
#include "odeforge/timeseries.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

namespace odeforge::test {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("odeforge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

/// Regression dataset sampled from dX/dt = A X with standard normal inputs.
inline RegressionDataset linear_dataset(const Eigen::MatrixXd& A, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RegressionDataset ds;
    const auto D = A.rows();
    ds.inputs = random_matrix(static_cast<Eigen::Index>(n), D, rng);
    ds.targets = ds.inputs * A.transpose();
    ds.scaling = ScalingParams::identity(static_cast<int>(D));
    ds.parent_length = n;
    for (std::size_t i = 0; i < n; ++i) ds.source_indices.push_back(i);
    return ds;
}

/// Linear+RBF spec with centers on a small lattice covering the dataset.
inline BasisSpec small_rbf_spec(const RegressionDataset& ds, double delta = 1.0) {
    return BasisSpec::linear_rbf(ds.dim(), build_rbf_centers(ds, delta, 2, 0.1));
}

/// OdeModel with identity scaling whose only non-zero coefficients are the
/// linear block, i.e. dX/dt = A X.
inline OdeModel linear_model(const Eigen::MatrixXd& A, const BasisSpec& spec) {
    CoefficientSet c;
    const auto D = A.rows();
    c.beta = Eigen::MatrixXd::Zero(D, static_cast<Eigen::Index>(spec.feature_count()));
    c.beta.block(0, 1, D, D) = A;
    c.residual_norms = Eigen::VectorXd::Zero(D);
    return OdeModel(spec, c, ScalingParams::identity(static_cast<int>(D)));
}

}  // namespace odeforge::test
