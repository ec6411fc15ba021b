#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace odeforge {

/// Row-major so that one state is one contiguous row.
using StateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Uniformly sampled scalar observable.
struct ScalarSeries {
    std::vector<double> values;
    double dt = 1.0;
    double t0 = 0.0;
    std::string label;

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    [[nodiscard]] double duration() const noexcept {
        return values.empty() ? 0.0 : static_cast<double>(values.size() - 1) * dt;
    }
};

/// Per-component affine standardization z = (x - mean) / std.
struct ScalingParams {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;

    /// Same (mean, std) for all `dim` components.
    static ScalingParams shared(double mean, double std, int dim);
    static ScalingParams identity(int dim);

    [[nodiscard]] int dim() const noexcept { return static_cast<int>(mean.size()); }
    [[nodiscard]] Eigen::VectorXd standardize(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    [[nodiscard]] Eigen::VectorXd unstandardize(const Eigen::Ref<const Eigen::VectorXd>& z) const;
    [[nodiscard]] StateMatrix standardize_rows(const StateMatrix& x) const;
    [[nodiscard]] StateMatrix unstandardize_rows(const StateMatrix& z) const;
    void validate() const;

    bool operator==(const ScalingParams& other) const;
};

struct StateTrajectory {
    StateMatrix states;
    double dt = 1.0;
    double t0 = 0.0;
    int tau_steps = 1;
    /// Index into the source series of states.row(0) when built by delay_embed.
    std::size_t origin_index = 0;
    std::optional<ScalingParams> scaling;

    [[nodiscard]] int dim() const noexcept { return static_cast<int>(states.cols()); }
    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(states.rows()); }
    [[nodiscard]] std::vector<double> component(int d) const;
};

/// Time derivatives at interior trajectory indices.
struct DerivativeEstimate {
    std::vector<std::size_t> indices;
    StateMatrix values;
    int stride = 1;
};

enum class SamplingPolicy { SeededRandom, UniformStride };

struct RegressionDataset {
    StateMatrix inputs;   ///< standardized states
    StateMatrix targets;  ///< derivatives divided by scaling.std
    ScalingParams scaling;
    std::vector<std::size_t> source_indices;
    std::size_t parent_length = 0;
    int stride = 1;

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
    [[nodiscard]] int dim() const noexcept { return static_cast<int>(inputs.cols()); }
};

// ---------------------------------------------------------------------------
// CSV ingestion

enum class HeaderMode { Auto, Present, Absent };

struct CsvOptions {
    char delimiter = ',';
    HeaderMode header = HeaderMode::Auto;
};

/// Column selector: a header name, or a 1-based column number given as digits.
struct ColumnRef {
    std::string name;
    std::optional<std::size_t> index;  ///< 1-based

    static ColumnRef parse(const std::string& text);
    static ColumnRef at(std::size_t one_based) { return ColumnRef{{}, one_based}; }
    [[nodiscard]] std::string describe() const;
};

struct CsvColumns {
    std::vector<std::string> header;  ///< empty if the file had no header row
    std::vector<std::vector<double>> columns;
};

/// Reads the selected columns as finite reals. Errors carry file, row and column.
CsvColumns load_csv_columns(const std::filesystem::path& path, std::span<const ColumnRef> columns,
                            const CsvOptions& options = {});

ScalarSeries load_series(const std::filesystem::path& path, const ColumnRef& column, double dt,
                         const CsvOptions& options = {});

void write_series_csv(const std::filesystem::path& path, const ScalarSeries& series);

/// CSV with a time column followed by X1..XD.
void write_trajectory_csv(const std::filesystem::path& path, const StateTrajectory& traj);

/// Shortest round-trip decimal text for a double.
std::string format_real(double value);

// ---------------------------------------------------------------------------
// Embedding and derivative estimation

/// Pearson correlation of (w(t), w(t - lag)) over all valid t.
double autocorrelation(const ScalarSeries& series, std::size_t lag_steps);

/// states[n][d] = w[origin + n - d * tau_steps] with origin = (D - 1) * tau_steps.
StateTrajectory delay_embed(const ScalarSeries& series, int dim, int tau_steps);

/// Converts a delay time to a whole number of samples; rejects non-multiples of dt.
int tau_to_steps(double tau, double dt);

/// Sixth-order central difference with spacing stride * dt; the first and last
/// 3 * stride indices are excluded.
DerivativeEstimate estimate_derivative(const StateTrajectory& traj, int stride);

/// Selects floor(fraction * count) interior points and standardizes them with a
/// single (mean, std) taken from the observable component of `traj`.
RegressionDataset sample_points(const StateTrajectory& traj, const DerivativeEstimate& derivs,
                                double fraction, SamplingPolicy policy, std::uint64_t seed);

/// Observable statistics used for standardization (component 0 of the trajectory).
ScalingParams observable_scaling(const StateTrajectory& traj);

}  // namespace odeforge
