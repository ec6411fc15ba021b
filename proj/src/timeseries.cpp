#include "odeforge/timeseries.hpp"

#include "odeforge/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace odeforge {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            break;
        }
        cells.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return cells;
}

std::optional<double> parse_double(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

bool looks_numeric(const std::vector<std::string_view>& cells) {
    return std::all_of(cells.begin(), cells.end(), [](std::string_view c) { return parse_double(c).has_value(); });
}

}  // namespace

// ---------------------------------------------------------------------------

ScalingParams ScalingParams::shared(double mean, double std, int dim) {
    return ScalingParams{Eigen::VectorXd::Constant(dim, mean), Eigen::VectorXd::Constant(dim, std)};
}

ScalingParams ScalingParams::identity(int dim) { return shared(0.0, 1.0, dim); }

Eigen::VectorXd ScalingParams::standardize(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return ((x - mean).array() / std.array()).matrix();
}

Eigen::VectorXd ScalingParams::unstandardize(const Eigen::Ref<const Eigen::VectorXd>& z) const {
    return (z.array() * std.array()).matrix() + mean;
}

StateMatrix ScalingParams::standardize_rows(const StateMatrix& x) const {
    StateMatrix z = x;
    for (Eigen::Index r = 0; r < z.rows(); ++r)
        z.row(r) = ((x.row(r) - mean.transpose()).array() / std.transpose().array()).matrix();
    return z;
}

StateMatrix ScalingParams::unstandardize_rows(const StateMatrix& z) const {
    StateMatrix x = z;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        x.row(r) = (z.row(r).array() * std.transpose().array()).matrix() + mean.transpose();
    return x;
}

void ScalingParams::validate() const {
    if (mean.size() != std.size() || mean.size() == 0)
        throw ConfigError("scaling: mean and std must be non-empty and of equal length");
    for (Eigen::Index i = 0; i < std.size(); ++i) {
        if (!(std[i] > 0.0) || !std::isfinite(std[i]) || !std::isfinite(mean[i]))
            throw ConfigError("scaling: std components must be finite and strictly positive");
    }
}

bool ScalingParams::operator==(const ScalingParams& other) const {
    return mean.size() == other.mean.size() && std.size() == other.std.size() && mean == other.mean &&
           std == other.std;
}

std::vector<double> StateTrajectory::component(int d) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = states(static_cast<Eigen::Index>(i), d);
    return out;
}

// ---------------------------------------------------------------------------

ColumnRef ColumnRef::parse(const std::string& text) {
    if (!text.empty() && std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); })) {
        const auto idx = std::stoul(text);
        if (idx == 0) throw ConfigError("column numbers are 1-based; got 0");
        return ColumnRef{{}, idx};
    }
    if (text.empty()) throw ConfigError("empty column selector");
    return ColumnRef{text, std::nullopt};
}

std::string ColumnRef::describe() const {
    return index ? "column " + std::to_string(*index) : "column '" + name + "'";
}

CsvColumns load_csv_columns(const std::filesystem::path& path, std::span<const ColumnRef> columns,
                            const CsvOptions& options) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");

    CsvColumns out;
    out.columns.resize(columns.size());
    std::vector<std::size_t> positions(columns.size());
    bool resolved = false;

    auto resolve = [&](std::size_t ncells, std::size_t line_no) {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const auto& ref = columns[c];
            if (ref.index) {
                if (*ref.index > ncells)
                    throw DataError(path.string() + ": " + ref.describe() + " not present (row " +
                                    std::to_string(line_no) + " has " + std::to_string(ncells) + " columns)");
                positions[c] = *ref.index - 1;
            } else {
                const auto it = std::find(out.header.begin(), out.header.end(), ref.name);
                if (it == out.header.end())
                    throw DataError(path.string() + ": " + ref.describe() + " not found in header");
                positions[c] = static_cast<std::size_t>(it - out.header.begin());
            }
        }
        resolved = true;
    };

    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto cells = split(body, options.delimiter);
        if (first) {
            first = false;
            const bool header = options.header == HeaderMode::Present ||
                                (options.header == HeaderMode::Auto && !looks_numeric(cells));
            if (header) {
                for (auto c : cells) out.header.emplace_back(c);
                resolve(cells.size(), line_no);
                continue;
            }
        }
        if (!resolved) resolve(cells.size(), line_no);
        for (std::size_t c = 0; c < columns.size(); ++c) {
            if (positions[c] >= cells.size())
                throw DataError(path.string() + ": row " + std::to_string(line_no) + " is missing " +
                                columns[c].describe());
            const auto cell = cells[positions[c]];
            const auto value = parse_double(cell);
            if (!value || !std::isfinite(*value))
                throw DataError(path.string() + ": row " + std::to_string(line_no) + ", " + columns[c].describe() +
                                ": '" + std::string(cell) + "' is not a finite real");
            out.columns[c].push_back(*value);
        }
    }
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (out.columns[c].empty()) throw DataError(path.string() + ": " + columns[c].describe() + " is empty");
    }
    return out;
}

ScalarSeries load_series(const std::filesystem::path& path, const ColumnRef& column, double dt,
                         const CsvOptions& options) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be a positive finite real");
    const std::array<ColumnRef, 1> cols{column};
    auto table = load_csv_columns(path, cols, options);
    ScalarSeries s;
    s.values = std::move(table.columns[0]);
    s.dt = dt;
    s.label = column.index ? (table.header.empty() ? column.describe() : table.header[*column.index - 1])
                           : column.name;
    return s;
}

std::string format_real(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ec == std::errc{} ? ptr : buf);
}

void write_series_csv(const std::filesystem::path& path, const ScalarSeries& series) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "t," << (series.label.empty() ? "x" : series.label) << '\n';
    for (std::size_t i = 0; i < series.size(); ++i) {
        out << format_real(series.t0 + static_cast<double>(i) * series.dt) << ',' << format_real(series.values[i])
            << '\n';
    }
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_trajectory_csv(const std::filesystem::path& path, const StateTrajectory& traj) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << 't';
    for (int d = 0; d < traj.dim(); ++d) out << ",X" << d + 1;
    out << '\n';
    for (Eigen::Index i = 0; i < traj.states.rows(); ++i) {
        out << format_real(traj.t0 + static_cast<double>(i) * traj.dt);
        for (int d = 0; d < traj.dim(); ++d) out << ',' << format_real(traj.states(i, d));
        out << '\n';
    }
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

double autocorrelation(const ScalarSeries& series, std::size_t lag_steps) {
    const auto n = series.size();
    if (n < lag_steps + 2)
        throw DataError("autocorrelation: series of length " + std::to_string(n) + " too short for lag " +
                        std::to_string(lag_steps));
    const std::size_t m = n - lag_steps;
    const double* lead = series.values.data() + lag_steps;
    const double* lagged = series.values.data();

    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        mean_a += lead[i];
        mean_b += lagged[i];
    }
    mean_a /= static_cast<double>(m);
    mean_b /= static_cast<double>(m);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double a = lead[i] - mean_a;
        const double b = lagged[i] - mean_b;
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    if (saa <= 0.0 || sbb <= 0.0)
        throw DataError("autocorrelation undefined: series segment has zero variance");
    if (lag_steps == 0) return 1.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

int tau_to_steps(double tau, double dt) {
    if (!(tau > 0.0) || !(dt > 0.0)) throw ConfigError("tau and dt must be positive");
    const double ratio = tau / dt;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-6 * std::max(1.0, ratio))
        throw ConfigError("tau = " + format_real(tau) + " is not a positive integer multiple of dt = " +
                          format_real(dt));
    return static_cast<int>(rounded);
}

StateTrajectory delay_embed(const ScalarSeries& series, int dim, int tau_steps) {
    if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
    if (tau_steps < 1) throw ConfigError("tau_steps must be >= 1");
    const std::size_t span = static_cast<std::size_t>(dim - 1) * static_cast<std::size_t>(tau_steps);
    if (series.size() <= span)
        throw DataError("series of length " + std::to_string(series.size()) + " too short for D=" +
                        std::to_string(dim) + ", tau_steps=" + std::to_string(tau_steps));
    const auto n = static_cast<Eigen::Index>(series.size() - span);

    StateTrajectory traj;
    traj.states.resize(n, dim);
    traj.dt = series.dt;
    traj.tau_steps = tau_steps;
    traj.origin_index = span;
    traj.t0 = series.t0 + static_cast<double>(span) * series.dt;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int d = 0; d < dim; ++d)
            traj.states(i, d) = series.values[static_cast<std::size_t>(i) + span -
                                              static_cast<std::size_t>(d) * static_cast<std::size_t>(tau_steps)];
    }
    return traj;
}

DerivativeEstimate estimate_derivative(const StateTrajectory& traj, int stride) {
    if (stride < 1) throw ConfigError("derivative stride must be >= 1");
    const auto l = static_cast<std::size_t>(stride);
    const auto n = traj.size();
    if (n < 6 * l + 1)
        throw DataError("trajectory of length " + std::to_string(n) + " too short for stride " +
                        std::to_string(stride) + " (needs " + std::to_string(6 * l + 1) + ")");

    DerivativeEstimate out;
    out.stride = stride;
    const std::size_t count = n - 6 * l;
    out.indices.resize(count);
    out.values.resize(static_cast<Eigen::Index>(count), traj.dim());
    const double scale = 1.0 / (60.0 * static_cast<double>(stride) * traj.dt);
    const auto& X = traj.states;
    for (std::size_t k = 0; k < count; ++k) {
        const auto i = static_cast<Eigen::Index>(k + 3 * l);
        const auto s = static_cast<Eigen::Index>(l);
        out.indices[k] = static_cast<std::size_t>(i);
        out.values.row(static_cast<Eigen::Index>(k)) =
            ((X.row(i + 3 * s) - X.row(i - 3 * s)) - 9.0 * (X.row(i + 2 * s) - X.row(i - 2 * s)) +
             45.0 * (X.row(i + s) - X.row(i - s))) *
            scale;
    }
    return out;
}

ScalingParams observable_scaling(const StateTrajectory& traj) {
    const auto n = traj.size();
    if (n < 2) throw DataError("need at least 2 states to compute scaling");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += traj.states(static_cast<Eigen::Index>(i), 0);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = traj.states(static_cast<Eigen::Index>(i), 0) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    if (!(var > 0.0)) throw DataError("observable has zero variance; cannot standardize");
    return ScalingParams::shared(mean, std::sqrt(var), traj.dim());
}

RegressionDataset sample_points(const StateTrajectory& traj, const DerivativeEstimate& derivs, double fraction,
                                SamplingPolicy policy, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("sample fraction must lie in (0, 1]");
    if (derivs.values.cols() != traj.dim() || derivs.indices.size() != static_cast<std::size_t>(derivs.values.rows()))
        throw ConfigError("derivative estimate does not match trajectory");
    const std::size_t valid = derivs.indices.size();
    const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(valid)));
    if (count < 1)
        throw DataError("sample selection is empty: fraction " + format_real(fraction) + " of " +
                        std::to_string(valid) + " valid points");

    std::vector<std::size_t> picks;
    picks.reserve(count);
    if (count == valid) {
        picks.resize(valid);
        std::iota(picks.begin(), picks.end(), std::size_t{0});
    } else if (policy == SamplingPolicy::UniformStride) {
        for (std::size_t k = 0; k < count; ++k) picks.push_back(k * valid / count);
    } else {
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> all(valid);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::sample(all.begin(), all.end(), std::back_inserter(picks), static_cast<std::ptrdiff_t>(count), rng);
    }

    RegressionDataset ds;
    ds.scaling = observable_scaling(traj);
    ds.parent_length = traj.size();
    ds.stride = derivs.stride;
    ds.inputs.resize(static_cast<Eigen::Index>(count), traj.dim());
    ds.targets.resize(static_cast<Eigen::Index>(count), traj.dim());
    ds.source_indices.reserve(count);
    const Eigen::RowVectorXd mean = ds.scaling.mean.transpose();
    const Eigen::RowVectorXd std = ds.scaling.std.transpose();
    for (std::size_t k = 0; k < count; ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        const auto src = derivs.indices[picks[k]];
        ds.source_indices.push_back(src);
        ds.inputs.row(row) = (traj.states.row(static_cast<Eigen::Index>(src)) - mean).cwiseQuotient(std);
        ds.targets.row(row) = derivs.values.row(static_cast<Eigen::Index>(picks[k])).cwiseQuotient(std);
    }
    return ds;
}

}  // namespace odeforge
