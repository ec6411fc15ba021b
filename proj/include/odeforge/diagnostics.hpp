#pragma once

#include "odeforge/basis.hpp"
#include "odeforge/model.hpp"
#include "odeforge/timeseries.hpp"

#include <Eigen/Dense>

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace odeforge {

/// Orbits leaving this radius are treated as having left the attractor for good.
inline constexpr double kDefaultEscapeRadius = 50.0;

// ---------------------------------------------------------------------------
// Densities

/// Normalized histogram: sum_i probabilities[i] * width_i == 1.
struct Density {
    std::vector<double> bin_edges;
    std::vector<double> probabilities;

    [[nodiscard]] std::size_t bins() const noexcept { return probabilities.size(); }
    [[nodiscard]] double integral() const;
};

inline constexpr int kDefaultBins = 100;

/// Histogram over `range` (default: the data range). Values outside the range
/// are ignored; the right edge belongs to the last bin. A degenerate range
/// [v, v] is widened to [v - 0.5, v + 0.5].
Density density_histogram(std::span<const double> values, int bins = kDefaultBins,
                          std::optional<std::pair<double, double>> range = std::nullopt);

/// Union of the ranges of two samples, for histograms on shared edges.
std::pair<double, double> common_range(std::span<const double> a, std::span<const double> b);

/// sum_i |p_a - p_b| * width_i, in [0, 2]. Edges must match exactly.
double density_area_diff(const Density& a, const Density& b);

// ---------------------------------------------------------------------------
// Delay structure

struct DelayResiduals {
    std::vector<std::vector<double>> series;  ///< pair d: X_d(t) - X_{d+1}(t + tau)
    std::vector<Density> densities;
    std::vector<double> means;
    std::vector<double> stds;

    [[nodiscard]] double mean_std() const;
};

DelayResiduals delay_residuals(const StateTrajectory& traj, int tau_steps, int bins = kDefaultBins);

// ---------------------------------------------------------------------------
// Lyapunov spectrum

struct LyapunovOptions {
    double T = 5000.0;
    double dt = 0.005;
    double renorm_interval = 0.1;
    double transient = 100.0;
    double escape_radius = kDefaultDivergenceBound;
};

struct LyapunovResult {
    std::vector<double> exponents;  ///< descending
    double T_used = 0.0;
    double renorm_interval = 0.0;

    [[nodiscard]] double sum() const;
};

/// Tangent-space evolution (RK4 on the variational equations) with modified
/// Gram-Schmidt re-orthonormalization every renorm_interval.
LyapunovResult lyapunov_spectrum(const VectorField& field, const Eigen::Ref<const Eigen::VectorXd>& x0,
                                 const LyapunovOptions& options = {});

// ---------------------------------------------------------------------------
// Fixed points

enum class FixedPointClass { Embedded, Ghost };

std::string to_string(FixedPointClass c);

struct FixedPoint {
    Eigen::VectorXd location;
    std::vector<std::complex<double>> eigenvalues;  ///< descending real part
    int unstable_count = 0;
    double residual = 0.0;  ///< ||F(location)||
    FixedPointClass classification = FixedPointClass::Ghost;
    double attractor_distance = 0.0;
};

enum class ClassificationRule {
    /// Ghost when a small push along an unstable direction escapes; stable
    /// roots fall back to the attractor-distance rule.
    UnstableManifold,
    /// Embedded when within embed_eps of a sampled attractor state.
    AttractorDistance,
};

std::string to_string(ClassificationRule rule);
ClassificationRule classification_rule_from_string(const std::string& text);

struct FixedPointOptions {
    double newton_tol = 1e-10;
    int max_iter = 100;
    double divergence_bound = 1e6;
    ClassificationRule rule = ClassificationRule::UnstableManifold;
    /// States sampled from a long trajectory on the attractor. Used by the
    /// distance rule and always reported as attractor_distance.
    StateMatrix attractor;
    double embed_eps = 0.5;
    // unstable-manifold probe
    double probe_step = 1e-3;
    double probe_time = 20.0;
    double probe_dt = 0.005;
    double escape_radius = kDefaultEscapeRadius;
};

struct FixedPointReport {
    std::vector<FixedPoint> points;
    std::size_t seeds = 0;
    std::size_t nonconverged = 0;
};

/// Regular grid of seeds: per_axis^dim points spanning [lo, hi]^dim.
StateMatrix seed_grid(int dim, double lo, double hi, int per_axis);

/// Damped Newton from every seed; roots deduplicated at 10 * newton_tol.
FixedPointReport find_fixed_points(const VectorField& field, const StateMatrix& seeds,
                                   const FixedPointOptions& options = {});

/// Sorted eigenvalues of the Jacobian at x.
std::vector<std::complex<double>> jacobian_eigenvalues(const VectorField& field,
                                                       const Eigen::Ref<const Eigen::VectorXd>& x);

// ---------------------------------------------------------------------------
// Basin of attraction

struct BasinOptions {
    Eigen::VectorXd plane_u;  ///< default (1, ..., 1)
    Eigen::VectorXd plane_v;  ///< default (1, -1, 0, ..., 0)
    /// Shift of the scanned slice off the plane through the origin; empty means none.
    Eigen::VectorXd offset;
    double a_lo = -20.0, a_hi = 20.0;
    double b_lo = -20.0, b_hi = 20.0;
    int resolution_a = 400;
    int resolution_b = 400;
    double escape_time = 5.0;
    double escape_radius = kDefaultEscapeRadius;
    double dt = 0.005;
};

/// Cell (i, j) sits at a_i = a_lo + (i + 0.5) * h_a along unit(u) and
/// b_j = b_lo + (j + 0.5) * h_b along the part of v orthogonal to u.
struct BasinMap {
    Eigen::VectorXd u, v;  ///< orthonormal plane basis
    Eigen::VectorXd offset;  ///< slice shift, orthogonal to u and v
    double a_lo = 0, a_hi = 0, b_lo = 0, b_hi = 0;
    int na = 0, nb = 0;
    double escape_time = 0.0;
    double escape_radius = 0.0;
    /// escape time per cell, row j (b index) major; negative means retained
    std::vector<double> cells;

    [[nodiscard]] bool escaped(int i, int j) const { return cells[static_cast<std::size_t>(j * na + i)] >= 0.0; }
    [[nodiscard]] double cell_escape_time(int i, int j) const { return cells[static_cast<std::size_t>(j * na + i)]; }
    [[nodiscard]] Eigen::VectorXd cell_point(int i, int j) const;
    /// Plane coordinates (a, b) of x.
    [[nodiscard]] std::pair<double, double> project(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    /// Cell containing the projection of x, if inside the region.
    [[nodiscard]] std::optional<std::pair<int, int>> locate(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    [[nodiscard]] std::size_t escaped_count() const;
    /// True when the 3x3 block of cells around (i, j) holds both states.
    [[nodiscard]] bool near_boundary(int i, int j) const;
};

BasinOptions default_basin_options(int dim);

/// Escape time of the orbit from x0 (||X|| > radius or non-finite), if any, within T.
std::optional<double> escape_time(const VectorField& field, const Eigen::Ref<const Eigen::VectorXd>& x0, double T,
                                  double dt, double radius);

BasinMap basin_scan(const VectorField& field, const BasinOptions& options);

/// Options covering the (2 * half + 1)^2 block of cells of `full` centred on the
/// cell containing the projection of x, with the same cell geometry and slice.
/// Cells outside the full region are clipped.
BasinOptions basin_window(const BasinOptions& full, const Eigen::Ref<const Eigen::VectorXd>& x, int half);

void write_basin_csv(const std::filesystem::path& path, const BasinMap& map);

// ---------------------------------------------------------------------------
// Short-term inference

inline constexpr double kDefaultValidThreshold = 0.4;

/// First time |model - ref| exceeds threshold * sigma; the common horizon if
/// never. Both series must share dt.
double short_term_valid_time(const ScalarSeries& model_x1, const ScalarSeries& ref_x1, double sigma,
                             double threshold = kDefaultValidThreshold);

// ---------------------------------------------------------------------------
// Regularization sweep

struct SweepValidation {
    Eigen::VectorXd x0;         ///< raw initial state for the validation run
    double T = 2000.0;
    double dt = 0.005;
    int tau_steps = 1;          ///< delay in units of dt
    std::vector<double> reference_x1;  ///< observable used for the density comparison
    int bins = kDefaultBins;
    double escape_radius = kDefaultDivergenceBound;
    ModelMeta meta;
};

struct SweepRow {
    double lambda = 0.0;
    bool ok = false;
    std::string error;
    std::vector<double> residual_stds;
    double mean_residual_std = 0.0;
    double area_diff = 0.0;
    std::optional<OdeModel> model;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::optional<std::size_t> best;  ///< row minimizing mean residual std
};

/// Fits (sharing one Gram matrix) and validates a model per lambda. Failures
/// are recorded per row.
SweepResult lambda_sweep(const RegressionDataset& dataset, const BasisSpec& spec, std::span<const double> lambdas,
                         const SweepValidation& validation);

}  // namespace odeforge
