#include "odeforge/diagnostics.hpp"

#include "odeforge/errors.hpp"
#include "odeforge/regress.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace odeforge {

// ---------------------------------------------------------------------------
// Densities

double Density::integral() const {
    double s = 0.0;
    for (std::size_t i = 0; i < probabilities.size(); ++i)
        s += probabilities[i] * (bin_edges[i + 1] - bin_edges[i]);
    return s;
}

Density density_histogram(std::span<const double> values, int bins, std::optional<std::pair<double, double>> range) {
    if (values.empty()) throw DataError("density_histogram: no values");
    if (bins < 1) throw ConfigError("density_histogram: bins must be >= 1");
    double lo = 0.0, hi = 0.0;
    if (range) {
        lo = range->first;
        hi = range->second;
    } else {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        lo = *mn;
        hi = *mx;
    }
    if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) throw DataError("density_histogram: invalid range");
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }

    Density d;
    d.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
    const double width = (hi - lo) / bins;
    for (int i = 0; i <= bins; ++i) d.bin_edges[static_cast<std::size_t>(i)] = lo + width * i;
    d.bin_edges.back() = hi;

    std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
    std::size_t used = 0;
    for (double v : values) {
        if (!std::isfinite(v) || v < lo || v > hi) continue;
        auto k = static_cast<std::ptrdiff_t>((v - lo) / width);
        k = std::clamp<std::ptrdiff_t>(k, 0, bins - 1);
        counts[static_cast<std::size_t>(k)] += 1.0;
        ++used;
    }
    if (used == 0) throw DataError("density_histogram: no values inside the histogram range");
    d.probabilities.resize(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        d.probabilities[i] = counts[i] / (static_cast<double>(used) * (d.bin_edges[i + 1] - d.bin_edges[i]));
    return d;
}

std::pair<double, double> common_range(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DataError("common_range: empty sample");
    const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
    const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
    return {std::min(*amin, *bmin), std::max(*amax, *bmax)};
}

double density_area_diff(const Density& a, const Density& b) {
    if (a.bin_edges != b.bin_edges) throw ConfigError("density_area_diff: bin edges differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.probabilities.size(); ++i)
        s += std::abs(a.probabilities[i] - b.probabilities[i]) * (a.bin_edges[i + 1] - a.bin_edges[i]);
    return s;
}

// ---------------------------------------------------------------------------
// Delay structure

double DelayResiduals::mean_std() const {
    if (stds.empty()) return 0.0;
    return std::accumulate(stds.begin(), stds.end(), 0.0) / static_cast<double>(stds.size());
}

DelayResiduals delay_residuals(const StateTrajectory& traj, int tau_steps, int bins) {
    if (tau_steps < 1) throw ConfigError("delay_residuals: tau_steps must be >= 1");
    const auto n = traj.size();
    const auto tau = static_cast<std::size_t>(tau_steps);
    if (n <= tau)
        throw DataError("delay_residuals: trajectory of length " + std::to_string(n) + " is not longer than tau (" +
                        std::to_string(tau_steps) + " steps)");
    if (traj.dim() < 2) throw DataError("delay_residuals: needs at least two components");
    DelayResiduals out;
    const auto m = n - tau;
    for (int d = 0; d + 1 < traj.dim(); ++d) {
        std::vector<double> r(m);
        for (std::size_t t = 0; t < m; ++t)
            r[t] = traj.states(static_cast<Eigen::Index>(t), d) - traj.states(static_cast<Eigen::Index>(t + tau), d + 1);
        const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(m);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(m);
        out.means.push_back(mean);
        out.stds.push_back(std::sqrt(var));
        out.densities.push_back(density_histogram(r, bins));
        out.series.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lyapunov spectrum

double LyapunovResult::sum() const { return std::accumulate(exponents.begin(), exponents.end(), 0.0); }

namespace {

/// RK4 on (x, Q) with dQ/dt = J(x) Q. Q is column-major D x D.
class TangentStepper {
public:
    explicit TangentStepper(const VectorField& field) : field_(field), D_(static_cast<std::size_t>(field.dim())) {
        const auto n = D_ + D_ * D_;
        for (auto* b : {&k1_, &k2_, &k3_, &k4_, &tmp_}) b->resize(n);
        jac_.resize(D_ * D_);
    }

    void step(double* s, double dt) {
        const auto n = D_ + D_ * D_;
        deriv(s, k1_.data());
        for (std::size_t i = 0; i < n; ++i) tmp_[i] = s[i] + 0.5 * dt * k1_[i];
        deriv(tmp_.data(), k2_.data());
        for (std::size_t i = 0; i < n; ++i) tmp_[i] = s[i] + 0.5 * dt * k2_[i];
        deriv(tmp_.data(), k3_.data());
        for (std::size_t i = 0; i < n; ++i) tmp_[i] = s[i] + dt * k3_[i];
        deriv(tmp_.data(), k4_.data());
        for (std::size_t i = 0; i < n; ++i) s[i] += dt / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
    }

private:
    void deriv(const double* s, double* out) {
        field_.rhs_and_jacobian(s, out, jac_.data());
        const double* Q = s + D_;
        double* dQ = out + D_;
        for (std::size_t c = 0; c < D_; ++c)
            for (std::size_t r = 0; r < D_; ++r) {
                double v = 0.0;
                for (std::size_t k = 0; k < D_; ++k) v += jac_[r * D_ + k] * Q[c * D_ + k];
                dQ[c * D_ + r] = v;
            }
    }

    const VectorField& field_;
    std::size_t D_;
    std::vector<double> k1_, k2_, k3_, k4_, tmp_, jac_;
};

void check_escape(const double* x, int D, double radius, double t) {
    double n2 = 0.0;
    for (int d = 0; d < D; ++d) n2 += x[d] * x[d];
    if (!std::isfinite(n2) || n2 > radius * radius)
        throw EscapeError("trajectory escaped at t=" + format_real(t) + "; choose an initial state on the attractor", t);
}

}  // namespace

LyapunovResult lyapunov_spectrum(const VectorField& field, const Eigen::Ref<const Eigen::VectorXd>& x0,
                                 const LyapunovOptions& options) {
    const int D = field.dim();
    if (x0.size() != D) throw ConfigError("lyapunov_spectrum: initial state dimension mismatch");
    if (!(options.renorm_interval > 0.0)) throw ConfigError("lyapunov_spectrum: renorm_interval must be positive");
    if (!(options.T > 0.0)) throw ConfigError("lyapunov_spectrum: T must be positive");

    Eigen::VectorXd x = x0;
    {
        Rk4Stepper warm(field);
        const auto steps = step_count(options.transient, options.dt);
        for (std::size_t s = 0; s < steps; ++s) {
            warm.step(x.data(), options.dt);
            if ((s & 63u) == 0) check_escape(x.data(), D, options.escape_radius, static_cast<double>(s + 1) * options.dt);
        }
        check_escape(x.data(), D, options.escape_radius, options.transient);
    }

    const auto Du = static_cast<std::size_t>(D);
    std::vector<double> state(Du + Du * Du, 0.0);
    std::copy(x.data(), x.data() + D, state.begin());
    for (std::size_t c = 0; c < Du; ++c) state[Du + c * Du + c] = 1.0;

    const auto per_block = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(options.renorm_interval / options.dt)));
    const auto blocks = std::max<std::size_t>(1, step_count(options.T, options.dt) / per_block);
    std::vector<double> sums(Du, 0.0);
    TangentStepper stepper(field);
    double* Q = state.data() + Du;

    for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t s = 0; s < per_block; ++s) stepper.step(state.data(), options.dt);
        check_escape(state.data(), D, options.escape_radius,
                     options.transient + static_cast<double>((b + 1) * per_block) * options.dt);
        // modified Gram-Schmidt on the columns of Q
        for (std::size_t i = 0; i < Du; ++i) {
            double* qi = Q + i * Du;
            for (std::size_t j = 0; j < i; ++j) {
                const double* qj = Q + j * Du;
                double dot = 0.0;
                for (std::size_t k = 0; k < Du; ++k) dot += qj[k] * qi[k];
                for (std::size_t k = 0; k < Du; ++k) qi[k] -= dot * qj[k];
            }
            double norm = 0.0;
            for (std::size_t k = 0; k < Du; ++k) norm += qi[k] * qi[k];
            norm = std::sqrt(norm);
            if (!(norm > 0.0) || !std::isfinite(norm))
                throw NumericalError("lyapunov_spectrum: tangent vectors degenerated; reduce renorm_interval");
            sums[i] += std::log(norm);
            for (std::size_t k = 0; k < Du; ++k) qi[k] /= norm;
        }
    }

    LyapunovResult result;
    result.renorm_interval = static_cast<double>(per_block) * options.dt;
    result.T_used = static_cast<double>(blocks * per_block) * options.dt;
    for (double s : sums) result.exponents.push_back(s / result.T_used);
    std::sort(result.exponents.begin(), result.exponents.end(), std::greater<>());
    return result;
}

// ---------------------------------------------------------------------------
// Fixed points

std::string to_string(FixedPointClass c) { return c == FixedPointClass::Embedded ? "embedded" : "ghost"; }

std::string to_string(ClassificationRule rule) {
    return rule == ClassificationRule::UnstableManifold ? "unstable-manifold" : "attractor-distance";
}

ClassificationRule classification_rule_from_string(const std::string& text) {
    if (text == "unstable-manifold") return ClassificationRule::UnstableManifold;
    if (text == "attractor-distance") return ClassificationRule::AttractorDistance;
    throw ConfigError("unknown fixed-point classification rule '" + text +
                      "' (expected unstable-manifold or attractor-distance)");
}

StateMatrix seed_grid(int dim, double lo, double hi, int per_axis) {
    if (dim < 1 || per_axis < 1) throw ConfigError("seed_grid: dim and per_axis must be >= 1");
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError("seed_grid: need finite lo <= hi");
    std::size_t total = 1;
    for (int d = 0; d < dim; ++d) total *= static_cast<std::size_t>(per_axis);
    StateMatrix seeds(static_cast<Eigen::Index>(total), dim);
    const double h = per_axis > 1 ? (hi - lo) / (per_axis - 1) : 0.0;
    for (std::size_t s = 0; s < total; ++s) {
        auto rem = s;
        for (int d = dim - 1; d >= 0; --d) {
            const auto k = rem % static_cast<std::size_t>(per_axis);
            rem /= static_cast<std::size_t>(per_axis);
            seeds(static_cast<Eigen::Index>(s), d) = per_axis > 1 ? lo + h * static_cast<double>(k) : 0.5 * (lo + hi);
        }
    }
    return seeds;
}

std::vector<std::complex<double>> jacobian_eigenvalues(const VectorField& field,
                                                       const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::MatrixXd J = field.jacobian(x);
    Eigen::EigenSolver<Eigen::MatrixXd> es(J, false);
    if (es.info() != Eigen::Success) throw NumericalError("eigenvalue computation failed");
    std::vector<std::complex<double>> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    std::sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) {
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    });
    return ev;
}

namespace {

std::optional<Eigen::VectorXd> newton_solve(const VectorField& field, Eigen::VectorXd x, const FixedPointOptions& opt) {
    const int D = field.dim();
    Eigen::VectorXd f(D), trial(D), ftrial(D);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> J(D, D);
    field.rhs(x.data(), f.data());
    double r = f.norm();
    for (int it = 0; it < opt.max_iter; ++it) {
        if (!std::isfinite(r)) return std::nullopt;
        if (r <= opt.newton_tol) break;
        field.jacobian(x.data(), J.data());
        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) return std::nullopt;
        const Eigen::VectorXd delta = lu.solve(-f);
        if (!delta.allFinite()) return std::nullopt;
        double alpha = 1.0;
        double rtrial = 0.0;
        while (true) {
            trial = x + alpha * delta;
            field.rhs(trial.data(), ftrial.data());
            rtrial = ftrial.norm();
            if ((std::isfinite(rtrial) && rtrial <= (1.0 - 1e-4 * alpha) * r) || alpha < 1.0 / 1024.0) break;
            alpha *= 0.5;
        }
        if (!std::isfinite(rtrial)) return std::nullopt;
        x = trial;
        f = ftrial;
        r = rtrial;
        if (x.norm() > opt.divergence_bound) return std::nullopt;
    }
    if (!(r <= opt.newton_tol)) return std::nullopt;
    // Polish with full steps while the residual keeps dropping.
    for (int polish = 0; polish < 3; ++polish) {
        field.jacobian(x.data(), J.data());
        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) break;
        trial = x + lu.solve(-f);
        field.rhs(trial.data(), ftrial.data());
        if (!(ftrial.norm() < r)) break;
        x = trial;
        f = ftrial;
        r = ftrial.norm();
    }
    return x;
}

// Pushes off the root along each unstable direction, both ways, and reports
// whether any push leaves the escape radius within probe_time.
bool unstable_manifold_escapes(const VectorField& field, const Eigen::VectorXd& x, const FixedPointOptions& opt) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(field.jacobian(x), true);
    if (es.info() != Eigen::Success) throw NumericalError("eigenvector computation failed");
    std::vector<Eigen::VectorXd> dirs;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const auto lambda = es.eigenvalues()[i];
        if (!(lambda.real() > 0.0) || lambda.imag() < 0.0) continue;
        const Eigen::VectorXcd v = es.eigenvectors().col(i);
        dirs.push_back(v.real());
        if (lambda.imag() > 0.0) dirs.push_back(v.imag());
    }
    IntegrateOptions io;
    io.escape_radius = opt.escape_radius;
    for (auto& v : dirs) {
        if (!(v.norm() > 0.0)) continue;
        v.normalize();
        for (const double sign : {1.0, -1.0}) {
            const Eigen::VectorXd start = x + sign * opt.probe_step * v;
            if (integrate(field, start, opt.probe_time, opt.probe_dt, io).escaped) return true;
        }
    }
    return false;
}

}  // namespace

FixedPointReport find_fixed_points(const VectorField& field, const StateMatrix& seeds, const FixedPointOptions& options) {
    if (seeds.cols() != field.dim()) throw ConfigError("find_fixed_points: seed dimension mismatch");
    if (!(options.newton_tol > 0.0)) throw ConfigError("find_fixed_points: newton_tol must be positive");
    FixedPointReport report;
    report.seeds = static_cast<std::size_t>(seeds.rows());
    const double dedupe = 10.0 * options.newton_tol;

    std::vector<Eigen::VectorXd> roots;
    for (Eigen::Index s = 0; s < seeds.rows(); ++s) {
        const auto root = newton_solve(field, seeds.row(s).transpose(), options);
        if (!root) {
            ++report.nonconverged;
            continue;
        }
        const bool duplicate = std::any_of(roots.begin(), roots.end(),
                                           [&](const Eigen::VectorXd& r) { return (r - *root).norm() < dedupe; });
        if (!duplicate) roots.push_back(*root);
    }

    for (const auto& x : roots) {
        FixedPoint fp;
        fp.location = x;
        fp.residual = field.rhs(x).norm();
        fp.eigenvalues = jacobian_eigenvalues(field, x);
        fp.unstable_count = static_cast<int>(
            std::count_if(fp.eigenvalues.begin(), fp.eigenvalues.end(), [](const auto& e) { return e.real() > 0.0; }));
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < options.attractor.rows(); ++i)
            best = std::min(best, (options.attractor.row(i).transpose() - x).squaredNorm());
        fp.attractor_distance = std::sqrt(best);
        const bool near_attractor = fp.attractor_distance <= options.embed_eps;
        bool embedded = near_attractor;
        if (options.rule == ClassificationRule::UnstableManifold && fp.unstable_count > 0)
            embedded = !unstable_manifold_escapes(field, x, options);
        fp.classification = embedded ? FixedPointClass::Embedded : FixedPointClass::Ghost;
        report.points.push_back(std::move(fp));
    }
    std::sort(report.points.begin(), report.points.end(), [](const FixedPoint& a, const FixedPoint& b) {
        if (a.classification != b.classification) return a.classification == FixedPointClass::Embedded;
        return a.location[0] < b.location[0];
    });
    return report;
}

// ---------------------------------------------------------------------------
// Basin of attraction

BasinOptions default_basin_options(int dim) {
    BasinOptions o;
    o.plane_u = Eigen::VectorXd::Ones(dim);
    o.plane_v = Eigen::VectorXd::Zero(dim);
    if (dim >= 2) {
        o.plane_v[0] = 1.0;
        o.plane_v[1] = -1.0;
    }
    return o;
}

Eigen::VectorXd BasinMap::cell_point(int i, int j) const {
    const double a = a_lo + (i + 0.5) * (a_hi - a_lo) / na;
    const double b = b_lo + (j + 0.5) * (b_hi - b_lo) / nb;
    return offset + a * u + b * v;
}

std::pair<double, double> BasinMap::project(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return {u.dot(x), v.dot(x)};
}

std::optional<std::pair<int, int>> BasinMap::locate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const auto [a, b] = project(x);
    const auto i = static_cast<int>(std::floor((a - a_lo) / (a_hi - a_lo) * na));
    const auto j = static_cast<int>(std::floor((b - b_lo) / (b_hi - b_lo) * nb));
    if (i < 0 || i >= na || j < 0 || j >= nb) return std::nullopt;
    return std::pair{i, j};
}

std::size_t BasinMap::escaped_count() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](double t) { return t >= 0.0; }));
}

bool BasinMap::near_boundary(int i, int j) const {
    bool any_escaped = false, any_retained = false;
    for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
            const int ii = i + di, jj = j + dj;
            if (ii < 0 || ii >= na || jj < 0 || jj >= nb) continue;
            (escaped(ii, jj) ? any_escaped : any_retained) = true;
        }
    return any_escaped && any_retained;
}

std::optional<double> escape_time(const VectorField& field, const Eigen::Ref<const Eigen::VectorXd>& x0, double T,
                                  double dt, double radius) {
    Eigen::VectorXd x = x0;
    const double r2 = radius * radius;
    if (!(x.squaredNorm() <= r2)) return 0.0;
    Rk4Stepper stepper(field);
    const auto steps = step_count(T, dt);
    for (std::size_t s = 1; s <= steps; ++s) {
        stepper.step(x.data(), dt);
        const double n2 = x.squaredNorm();
        if (!std::isfinite(n2) || n2 > r2) return static_cast<double>(s) * dt;
    }
    return std::nullopt;
}

BasinMap basin_scan(const VectorField& field, const BasinOptions& options) {
    const int D = field.dim();
    if (options.plane_u.size() != D || options.plane_v.size() != D)
        throw ConfigError("basin_scan: plane vectors must have dimension " + std::to_string(D));
    if (options.resolution_a < 1 || options.resolution_b < 1) throw ConfigError("basin_scan: resolution must be >= 1");
    if (!(options.a_hi > options.a_lo) || !(options.b_hi > options.b_lo)) throw ConfigError("basin_scan: empty region");
    if (!(options.escape_time > 0.0) || !(options.escape_radius > 0.0))
        throw ConfigError("basin_scan: escape_time and escape_radius must be positive");

    BasinMap map;
    const double nu = options.plane_u.norm();
    if (!(nu > 0.0)) throw ConfigError("basin_scan: degenerate plane (zero vector)");
    map.u = options.plane_u / nu;
    Eigen::VectorXd v = options.plane_v - map.u.dot(options.plane_v) * map.u;
    if (!(v.norm() > 1e-12 * std::max(1.0, options.plane_v.norm())))
        throw ConfigError("basin_scan: degenerate plane (spanning vectors are parallel)");
    map.v = v / v.norm();
    map.offset = Eigen::VectorXd::Zero(D);
    if (options.offset.size() != 0) {
        if (options.offset.size() != D) throw ConfigError("basin_scan: offset must have dimension " + std::to_string(D));
        map.offset = options.offset - map.u.dot(options.offset) * map.u - map.v.dot(options.offset) * map.v;
    }
    map.a_lo = options.a_lo;
    map.a_hi = options.a_hi;
    map.b_lo = options.b_lo;
    map.b_hi = options.b_hi;
    map.na = options.resolution_a;
    map.nb = options.resolution_b;
    map.escape_time = options.escape_time;
    map.escape_radius = options.escape_radius;
    map.cells.assign(static_cast<std::size_t>(map.na) * static_cast<std::size_t>(map.nb), -1.0);
    for (int j = 0; j < map.nb; ++j)
        for (int i = 0; i < map.na; ++i) {
            const auto t = escape_time(field, map.cell_point(i, j), options.escape_time, options.dt, options.escape_radius);
            if (t) map.cells[static_cast<std::size_t>(j * map.na + i)] = *t;
        }
    return map;
}

BasinOptions basin_window(const BasinOptions& full, const Eigen::Ref<const Eigen::VectorXd>& x, int half) {
    if (half < 0) throw ConfigError("basin_window: half width must be non-negative");
    if (x.size() != full.plane_u.size()) throw ConfigError("basin_window: point dimension mismatch");
    const Eigen::VectorXd u = full.plane_u.normalized();
    Eigen::VectorXd v = full.plane_v - u.dot(full.plane_v) * u;
    v.normalize();
    const double ha = (full.a_hi - full.a_lo) / full.resolution_a;
    const double hb = (full.b_hi - full.b_lo) / full.resolution_b;
    const int i = static_cast<int>(std::floor((u.dot(x) - full.a_lo) / ha));
    const int j = static_cast<int>(std::floor((v.dot(x) - full.b_lo) / hb));
    const int i0 = std::max(0, i - half), i1 = std::min(full.resolution_a - 1, i + half);
    const int j0 = std::max(0, j - half), j1 = std::min(full.resolution_b - 1, j + half);
    if (i0 > i1 || j0 > j1) throw ConfigError("basin_window: point projects outside the scan region");
    BasinOptions w = full;
    w.a_lo = full.a_lo + i0 * ha;
    w.a_hi = full.a_lo + (i1 + 1) * ha;
    w.b_lo = full.b_lo + j0 * hb;
    w.b_hi = full.b_lo + (j1 + 1) * hb;
    w.resolution_a = i1 - i0 + 1;
    w.resolution_b = j1 - j0 + 1;
    return w;
}

void write_basin_csv(const std::filesystem::path& path, const BasinMap& map) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    // First row: a-coordinates of cell centers; first column: b-coordinates.
    // Entries: escape time, or -1 for retained cells.
    out << "b\\a";
    for (int i = 0; i < map.na; ++i) out << ',' << format_real(map.a_lo + (i + 0.5) * (map.a_hi - map.a_lo) / map.na);
    out << '\n';
    for (int j = 0; j < map.nb; ++j) {
        out << format_real(map.b_lo + (j + 0.5) * (map.b_hi - map.b_lo) / map.nb);
        for (int i = 0; i < map.na; ++i) out << ',' << format_real(map.cell_escape_time(i, j));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Short-term inference

double short_term_valid_time(const ScalarSeries& model_x1, const ScalarSeries& ref_x1, double sigma, double threshold) {
    if (std::abs(model_x1.dt - ref_x1.dt) > 1e-12 * std::max(model_x1.dt, ref_x1.dt))
        throw ConfigError("short_term_valid_time: series have different sampling steps");
    if (!(sigma > 0.0) || !(threshold > 0.0)) throw ConfigError("short_term_valid_time: sigma and threshold must be positive");
    const auto n = std::min(model_x1.size(), ref_x1.size());
    if (n == 0) throw DataError("short_term_valid_time: empty series");
    const double bound = threshold * sigma;
    for (std::size_t i = 0; i < n; ++i)
        if (!(std::abs(model_x1.values[i] - ref_x1.values[i]) <= bound)) return static_cast<double>(i) * model_x1.dt;
    return static_cast<double>(n - 1) * model_x1.dt;
}

// ---------------------------------------------------------------------------
// Regularization sweep

SweepResult lambda_sweep(const RegressionDataset& dataset, const BasisSpec& spec, std::span<const double> lambdas,
                         const SweepValidation& validation) {
    if (lambdas.empty()) throw ConfigError("lambda_sweep: need at least one lambda");
    if (validation.reference_x1.empty()) throw ConfigError("lambda_sweep: reference observable is empty");
    const FeatureMap features(spec);
    const auto eq = normal_equations(dataset, features);

    SweepResult result;
    for (double lambda : lambdas) {
        SweepRow row;
        row.lambda = lambda;
        try {
            auto model = model_from_normal_equations(eq, dataset, spec, lambda, validation.meta);
            IntegrateOptions io;
            io.escape_radius = validation.escape_radius;
            const auto run = integrate(model, validation.x0, validation.T, validation.dt, io);
            if (run.escaped)
                throw EscapeError("validation trajectory escaped at t=" + format_real(run.escape_time), run.escape_time);
            const auto res = delay_residuals(run.trajectory, validation.tau_steps, validation.bins);
            row.residual_stds = res.stds;
            row.mean_residual_std = res.mean_std();
            const auto x1 = run.trajectory.component(0);
            const auto range = common_range(x1, validation.reference_x1);
            row.area_diff = density_area_diff(density_histogram(x1, validation.bins, range),
                                              density_histogram(validation.reference_x1, validation.bins, range));
            row.model.emplace(std::move(model));
            row.ok = true;
        } catch (const Error& e) {
            row.ok = false;
            row.error = e.what();
        }
        result.rows.push_back(std::move(row));
    }
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
        if (!result.rows[i].ok) continue;
        if (!result.best || result.rows[i].mean_residual_std < result.rows[*result.best].mean_residual_std) result.best = i;
    }
    return result;
}

}  // namespace odeforge
