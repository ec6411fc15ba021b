#include "odeforge/cli.hpp"

#include "odeforge/diagnostics.hpp"
#include "odeforge/errors.hpp"
#include "odeforge/model.hpp"
#include "odeforge/regress.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <new>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace odeforge::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Plumbing

/// Re-throws a library error with the pipeline stage prefixed, keeping its category.
template <class F>
auto stage(const char* name, F&& body) -> decltype(body()) {
    const auto tag = [&](const std::exception& e) { return std::string(name) + " stage: " + e.what(); };
    try {
        return body();
    } catch (const ConfigError& e) {
        throw ConfigError(tag(e));
    } catch (const DataError& e) {
        throw DataError(tag(e));
    } catch (const NumericalError& e) {
        throw NumericalError(tag(e));
    }
}

class Clock {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct Env {
    const RunConfig& cfg;
    std::ostream& out;
    fs::path dir;

    fs::path file(const std::string& name) const { return dir / name; }
};

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

json complex_json(const std::complex<double>& z) { return json::array({z.real(), z.imag()}); }

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::string short_real(double v) {
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
}

std::string complex_text(const std::complex<double>& z, int digits) {
    std::string s = fixed(z.real(), digits);
    if (z.imag() != 0.0) s += (z.imag() > 0 ? "+" : "-") + fixed(std::abs(z.imag()), digits) + "i";
    return s;
}

// ---------------------------------------------------------------------------
// Pipeline stages

bool is_time_header(const std::string& name) { return name == "t" || name == "time"; }

std::vector<std::string> csv_header(const fs::path& path, const CsvOptions& options) {
    const std::array<ColumnRef, 1> first{ColumnRef::at(1)};
    return load_csv_columns(path, first, options).header;
}

ColumnRef resolve_column(const fs::path& path, const std::string& column, const CsvOptions& options) {
    if (column != "auto") return ColumnRef::parse(column);
    const auto header = csv_header(path, options);
    if (header.size() >= 2 && is_time_header(header[0])) return ColumnRef::at(2);
    return ColumnRef::at(1);
}

ScalarSeries acquire_series(const RunConfig& cfg) {
    return stage("data", [&] {
        const auto& d = cfg.data;
        if (d.source == "csv") return load_series(d.path, resolve_column(d.path, d.column, d.csv), d.dt, d.csv);
        return lorenz_observable(d.T, d.dt, d.x0, d.transient, ReferenceSystem::lorenz(d.sigma, d.rho, d.beta));
    });
}

std::string source_description(const RunConfig& cfg) {
    const auto& d = cfg.data;
    if (d.source == "csv") return "csv:" + d.path.string();
    return "generate-lorenz(T=" + format_real(d.T) + ",dt=" + format_real(d.dt) + ",transient=" +
           format_real(d.transient) + ",x0=" + format_real(d.x0[0]) + "," + format_real(d.x0[1]) + "," +
           format_real(d.x0[2]) + ")";
}

struct Prepared {
    ScalarSeries series;
    int tau_steps = 1;
    StateTrajectory trajectory;
    RegressionDataset dataset;
};

Prepared prepare(const RunConfig& cfg) {
    Prepared p;
    p.series = acquire_series(cfg);
    p.tau_steps = stage("embedding", [&] { return tau_to_steps(cfg.embedding.tau, p.series.dt); });
    p.trajectory = stage("embedding", [&] { return delay_embed(p.series, cfg.embedding.dim, p.tau_steps); });
    const auto derivs = stage("derivative", [&] { return estimate_derivative(p.trajectory, cfg.derivative_stride); });
    p.dataset = stage("sampling", [&] {
        return sample_points(p.trajectory, derivs, cfg.sampling.fraction, cfg.sampling.policy, cfg.sampling.seed);
    });
    return p;
}

BasisSpec make_basis(const RunConfig::Basis& b, const RegressionDataset& ds) {
    return stage("basis", [&] {
        if (b.kind == BasisKind::Polynomial) return BasisSpec::polynomial(ds.dim(), b.degree);
        return BasisSpec::linear_rbf(ds.dim(), build_rbf_centers(ds, b.delta_grid, b.m, b.p, b.max_centers));
    });
}

ModelMeta make_meta(const RunConfig& cfg, const Prepared& p, double lambda) {
    ModelMeta m;
    m.tau = cfg.embedding.tau;
    m.tau_steps = p.tau_steps;
    m.dt = p.series.dt;
    m.training_T = p.series.duration();
    m.lambda = lambda;
    m.seed = cfg.sampling.seed;
    m.stride = cfg.derivative_stride;
    m.sample_fraction = cfg.sampling.fraction;
    m.samples = p.dataset.size();
    m.source = source_description(cfg);
    return m;
}

fs::path model_file(const Env& env) { return env.cfg.model_path.empty() ? env.file("model.json") : env.cfg.model_path; }

OdeModel load_configured_model(const Env& env) {
    return stage("model", [&] { return load_model(model_file(env)); });
}

/// Initial state for simulations: an explicit vector, or the first/last delay
/// state of the configured data series embedded with the model's delay.
Eigen::VectorXd initial_state(const RunConfig& cfg, int dim, double tau) {
    const auto& spec = cfg.simulation.x0;
    if (spec != "first" && spec != "last") {
        const auto v = parse_real_list(spec);
        if (static_cast<int>(v.size()) != dim)
            throw ConfigError("simulation.x0 has " + std::to_string(v.size()) + " values, the model needs " +
                              std::to_string(dim));
        return Eigen::Map<const Eigen::VectorXd>(v.data(), dim);
    }
    const auto series = acquire_series(cfg);
    const auto traj = stage("embedding", [&] { return delay_embed(series, dim, tau_to_steps(tau, series.dt)); });
    const auto row = spec == "first" ? 0 : traj.states.rows() - 1;
    return traj.states.row(row).transpose();
}

/// Reference data: a trajectory CSV (t,X1..XD), a scalar series CSV, the
/// configured data series, or a long generated Lorenz run.
struct Reference {
    std::string description;
    ScalarSeries x1;
    std::optional<StateMatrix> states;
};

Reference load_reference(const RunConfig& cfg, int dim) {
    return stage("reference", [&] {
        Reference ref;
        const auto& d = cfg.diagnostics;
        if (!d.reference.empty()) {
            ref.description = "csv:" + d.reference.string();
            const auto header = csv_header(d.reference, cfg.data.csv);
            const bool timed = !header.empty() && is_time_header(header[0]);
            if (timed && static_cast<int>(header.size()) == dim + 1 && dim > 1) {
                std::vector<ColumnRef> cols;
                for (int c = 0; c <= dim; ++c) cols.push_back(ColumnRef::at(static_cast<std::size_t>(c + 1)));
                const auto table = load_csv_columns(d.reference, cols, cfg.data.csv);
                const auto& t = table.columns[0];
                if (t.size() < 2) throw DataError(d.reference.string() + ": trajectory needs at least 2 rows");
                ref.x1.dt = t[1] - t[0];
                ref.x1.values = table.columns[1];
                ref.x1.label = header[1];
                StateMatrix s(static_cast<Eigen::Index>(t.size()), dim);
                for (int c = 0; c < dim; ++c)
                    for (std::size_t r = 0; r < t.size(); ++r)
                        s(static_cast<Eigen::Index>(r), c) = table.columns[static_cast<std::size_t>(c + 1)][r];
                ref.states = std::move(s);
            } else {
                const auto col = resolve_column(d.reference, cfg.data.column, cfg.data.csv);
                const double dt = timed && header.size() >= 2 ? 0.0 : cfg.data.dt;
                if (timed) {
                    const std::array<ColumnRef, 2> tc{ColumnRef::at(1), col};
                    const auto table = load_csv_columns(d.reference, tc, cfg.data.csv);
                    if (table.columns[0].size() < 2) throw DataError(d.reference.string() + ": needs at least 2 rows");
                    ref.x1.dt = table.columns[0][1] - table.columns[0][0];
                    ref.x1.values = table.columns[1];
                } else {
                    ref.x1 = load_series(d.reference, col, dt, cfg.data.csv);
                }
            }
            return ref;
        }
        if (cfg.data.source == "csv") {
            ref.description = "data series";
            ref.x1 = acquire_series(cfg);
            return ref;
        }
        const auto& g = cfg.data;
        ref.description = "generate-lorenz(T=" + format_real(d.reference_T) + ",dt=" + format_real(cfg.simulation.dt) +
                          ")";
        ref.x1 = lorenz_observable(d.reference_T, cfg.simulation.dt, d.reference_x0, g.transient,
                                   ReferenceSystem::lorenz(g.sigma, g.rho, g.beta));
        return ref;
    });
}

IntegrationResult simulate(const RunConfig& cfg, const VectorField& field, const Eigen::VectorXd& x0, double T) {
    return stage("simulation", [&] {
        IntegrateOptions io;
        io.escape_radius = cfg.simulation.divergence_bound;
        return integrate(field, x0, T, cfg.simulation.dt, io);
    });
}

struct DensityComparison {
    Density model;
    Density reference;
    double area_diff = 0.0;
};

DensityComparison compare_densities(const std::vector<double>& model_x1, const std::vector<double>& ref_x1, int bins) {
    DensityComparison c;
    const auto range = common_range(model_x1, ref_x1);
    c.model = density_histogram(model_x1, bins, range);
    c.reference = density_histogram(ref_x1, bins, range);
    c.area_diff = density_area_diff(c.model, c.reference);
    return c;
}

void write_density_csv(const fs::path& path, const DensityComparison& c) {
    std::ostringstream s;
    s << "bin_lo,bin_hi,model,reference\n";
    for (std::size_t i = 0; i < c.model.bins(); ++i)
        s << format_real(c.model.bin_edges[i]) << ',' << format_real(c.model.bin_edges[i + 1]) << ','
          << format_real(c.model.probabilities[i]) << ',' << format_real(c.reference.probabilities[i]) << '\n';
    write_text(path, s.str());
}

void write_residual_csv(const fs::path& path, const DelayResiduals& r) {
    std::ostringstream s;
    s << "pair,bin_lo,bin_hi,density\n";
    for (std::size_t p = 0; p < r.densities.size(); ++p)
        for (std::size_t i = 0; i < r.densities[p].bins(); ++i)
            s << p + 1 << ',' << format_real(r.densities[p].bin_edges[i]) << ','
              << format_real(r.densities[p].bin_edges[i + 1]) << ',' << format_real(r.densities[p].probabilities[i])
              << '\n';
    write_text(path, s.str());
}

int model_tau_steps(const OdeModel& model, double dt) {
    return stage("simulation", [&] { return tau_to_steps(model.meta().tau, dt); });
}

json residual_json(const DelayResiduals& r) {
    json j;
    j["stds"] = r.stds;
    j["means"] = r.means;
    j["mean_std"] = r.mean_std();
    return j;
}

// ---------------------------------------------------------------------------
// Fixed points

FixedPointReport fixed_points_for(const RunConfig& cfg, const OdeModel& model) {
    const auto& f = cfg.fixed_points;
    const int D = model.dim();
    double total = 1.0;
    for (int d = 0; d < D; ++d) total *= f.seed_per_axis;
    if (total > 5e6)
        throw ConfigError("fixed_points.seed_per_axis=" + std::to_string(f.seed_per_axis) + " gives " +
                          format_real(total) + " seeds in D=" + std::to_string(D) + "; lower it");
    StateMatrix grid = seed_grid(D, f.seed_lo, f.seed_hi, f.seed_per_axis);

    const auto x0 = initial_state(cfg, D, model.meta().tau);
    const auto run = simulate(cfg, model, x0, f.attractor_T);
    const auto& states = run.trajectory.states;
    const Eigen::Index extra = std::min<Eigen::Index>(f.attractor_seeds, states.rows());
    StateMatrix seeds(grid.rows() + extra, D);
    seeds.topRows(grid.rows()) = grid;
    for (Eigen::Index k = 0; k < extra; ++k) seeds.row(grid.rows() + k) = states.row(k * states.rows() / std::max<Eigen::Index>(extra, 1));

    FixedPointOptions opt = f.options;
    const Eigen::Index stride = std::max<Eigen::Index>(1, states.rows() / 100000);
    opt.attractor.resize((states.rows() + stride - 1) / stride, D);
    for (Eigen::Index r = 0, k = 0; r < states.rows(); r += stride, ++k) opt.attractor.row(k) = states.row(r);
    return stage("fixed-points", [&] { return find_fixed_points(model, seeds, opt); });
}

json fixed_point_json(const FixedPoint& p) {
    json j;
    j["location"] = vec_json(p.location);
    json ev = json::array();
    for (const auto& e : p.eigenvalues) ev.push_back(complex_json(e));
    j["eigenvalues"] = ev;
    j["unstable_count"] = p.unstable_count;
    j["residual"] = p.residual;
    j["classification"] = to_string(p.classification);
    j["attractor_distance"] = p.attractor_distance;
    return j;
}

std::string fixed_point_table(const FixedPointReport& report, int dim) {
    std::vector<std::string> names;
    int e = 0, g = 0;
    for (const auto& p : report.points)
        names.push_back(p.classification == FixedPointClass::Embedded ? "E" + std::to_string(++e)
                                                                       : "G" + std::to_string(++g));
    constexpr int w = 16;
    std::ostringstream s;
    s << std::left << std::setw(10) << "";
    for (const auto& n : names) s << std::right << std::setw(w) << n;
    s << '\n';
    for (int d = 0; d < dim; ++d) {
        s << std::left << std::setw(10) << ("x" + std::to_string(d + 1) + "*");
        for (const auto& p : report.points) s << std::right << std::setw(w) << fixed(p.location[d], 4);
        s << '\n';
    }
    for (int d = 0; d < dim; ++d) {
        s << std::left << std::setw(10) << ("L" + std::to_string(d + 1) + "*");
        for (const auto& p : report.points)
            s << std::right << std::setw(w) << complex_text(p.eigenvalues[static_cast<std::size_t>(d)], 2);
        s << '\n';
    }
    s << std::left << std::setw(10) << "unstable";
    for (const auto& p : report.points) s << std::right << std::setw(w) << p.unstable_count;
    s << '\n' << std::left << std::setw(10) << "class";
    for (const auto& p : report.points) s << std::right << std::setw(w) << to_string(p.classification);
    s << '\n';
    return s.str();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const Env& env) {
    const auto& cfg = env.cfg;
    Clock clock;
    const auto series = acquire_series(cfg);
    write_series_csv(env.file("series.csv"), series);
    json meta;
    meta["source"] = cfg.data.source;
    if (cfg.data.source == "csv") meta["path"] = cfg.data.path.string();
    else {
        meta["system"] = "lorenz";
        meta["parameters"] = {{"sigma", cfg.data.sigma}, {"rho", cfg.data.rho}, {"beta", cfg.data.beta}};
        meta["x0"] = vec_json(Eigen::VectorXd(cfg.data.x0));
        meta["transient"] = cfg.data.transient;
        meta["integrator"] = "rk4";
    }
    meta["dt"] = series.dt;
    meta["T"] = series.duration();
    meta["rows"] = series.size();
    meta["seed"] = cfg.sampling.seed;
    write_json(env.file("series.meta.json"), meta);
    env.out << "wrote " << env.file("series.csv").string() << " (" << series.size() << " rows, dt=" << format_real(series.dt)
            << ") in " << fixed(clock.lap(), 2) << " s\n";
    return kExitOk;
}

int cmd_fit(const Env& env) {
    const auto& cfg = env.cfg;
    Clock clock;
    json timing;
    const auto p = prepare(cfg);
    timing["prepare_s"] = clock.lap();
    const auto spec = make_basis(cfg.basis, p.dataset);
    timing["basis_s"] = clock.lap();
    const auto meta = make_meta(cfg, p, cfg.regression.lambda);
    const auto model = stage("regression", [&] { return fit_model(p.dataset, spec, cfg.regression.lambda, meta); });
    timing["regression_s"] = clock.lap();
    const auto err = stage("regression", [&] { return regression_error(model, p.dataset); });
    timing["error_s"] = clock.lap();
    save_model(model, model_file(env));

    json rep;
    rep["model"] = model_file(env).string();
    rep["source"] = meta.source;
    rep["series_rows"] = p.series.size();
    rep["n"] = p.dataset.size();
    rep["basis"] = to_string(spec.kind);
    rep["J"] = spec.rbf ? spec.rbf->size() : 0;
    rep["features"] = spec.feature_count();
    rep["lambda"] = cfg.regression.lambda;
    rep["tau_steps"] = p.tau_steps;
    rep["scaling"] = {{"mean", p.dataset.scaling.mean[0]}, {"std", p.dataset.scaling.std[0]}};
    rep["mean_regression_error"] = err.mean;
    rep["excluded_samples"] = err.excluded;
    rep["residual_norms"] = vec_json(model.coefficients().residual_norms);
    rep["timing"] = timing;
    write_json(env.file("fit_report.json"), rep);
    env.out << "fit " << to_string(spec.kind) << ": n=" << p.dataset.size() << " J=" << (spec.rbf ? spec.rbf->size() : 0)
            << " features=" << spec.feature_count() << " lambda=" << format_real(cfg.regression.lambda)
            << " mean regression error=" << fixed(err.mean, 6) << "\n";
    env.out << "wrote " << model_file(env).string() << "\n";
    return kExitOk;
}

int cmd_simulate(const Env& env) {
    const auto& cfg = env.cfg;
    const auto model = load_configured_model(env);
    const auto x0 = initial_state(cfg, model.dim(), model.meta().tau);
    const auto run = simulate(cfg, model, x0, cfg.simulation.T);
    write_trajectory_csv(env.file("trajectory.csv"), run.trajectory);
    json j;
    j["model"] = model_file(env).string();
    j["x0"] = vec_json(x0);
    j["T"] = cfg.simulation.T;
    j["dt"] = cfg.simulation.dt;
    j["rows"] = run.trajectory.size();
    j["escaped"] = run.escaped;
    j["escape_time"] = run.escaped ? json(run.escape_time) : json(nullptr);
    j["divergence_bound"] = cfg.simulation.divergence_bound;
    write_json(env.file("simulate.json"), j);
    env.out << "simulated " << run.trajectory.size() << " rows";
    if (run.escaped) env.out << " (escaped at t=" << format_real(run.escape_time) << ")";
    env.out << "\nwrote " << env.file("trajectory.csv").string() << "\n";
    return kExitOk;
}

/// Median valid time over reference start states spaced valid_spacing apart.
/// The model runs at simulation.dt and is compared on the reference sampling grid.
json valid_time_report(const RunConfig& cfg, const OdeModel& model, const Reference& ref) {
    const auto& d = cfg.diagnostics;
    const double dt = cfg.simulation.dt;
    const double ref_dt = ref.x1.dt;
    const auto every = static_cast<Eigen::Index>(std::llround(ref_dt / dt));
    if (every < 1 || std::abs(static_cast<double>(every) * dt - ref_dt) > 1e-9 * ref_dt)
        throw ConfigError("valid time needs the reference dt (" + format_real(ref_dt) +
                          ") to be a multiple of simulation.dt (" + format_real(dt) + ")");
    StateMatrix states;
    std::size_t x1_offset = 0;
    if (ref.states) {
        states = *ref.states;
    } else {
        const auto traj = delay_embed(ref.x1, model.dim(), tau_to_steps(model.meta().tau, ref_dt));
        states = traj.states;
        x1_offset = traj.origin_index;
    }
    const auto spacing = std::max<Eigen::Index>(1, std::llround(d.valid_spacing / ref_dt));
    const auto horizon = static_cast<Eigen::Index>(std::llround(d.valid_horizon / ref_dt));
    const double sigma = model.scaling().std[0];
    std::vector<double> times, starts;
    for (int k = 0; k < d.valid_starts; ++k) {
        const Eigen::Index row = k * spacing;
        if (row + 1 >= states.rows()) break;
        const Eigen::Index len = std::min<Eigen::Index>(horizon, states.rows() - 1 - row);
        const auto run = simulate(cfg, model, states.row(row).transpose(), static_cast<double>(len) * ref_dt);
        ScalarSeries m, r;
        m.dt = r.dt = ref_dt;
        for (Eigen::Index i = 0; i < run.trajectory.states.rows(); i += every) m.values.push_back(run.trajectory.states(i, 0));
        const auto first = x1_offset + static_cast<std::size_t>(row);
        r.values.assign(ref.x1.values.begin() + static_cast<std::ptrdiff_t>(first),
                        ref.x1.values.begin() + static_cast<std::ptrdiff_t>(first + static_cast<std::size_t>(len) + 1));
        times.push_back(short_term_valid_time(m, r, sigma, d.valid_threshold));
        starts.push_back(static_cast<double>(row) * ref_dt);
    }
    json j;
    j["threshold_sigma"] = d.valid_threshold;
    j["sigma"] = sigma;
    j["horizon"] = d.valid_horizon;
    j["start_times"] = starts;
    j["valid_times"] = times;
    if (!times.empty()) {
        auto sorted = times;
        std::sort(sorted.begin(), sorted.end());
        const auto n = sorted.size();
        j["median"] = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    } else {
        j["median"] = nullptr;
    }
    return j;
}

int cmd_diagnose(const Env& env) {
    const auto& cfg = env.cfg;
    const auto& d = cfg.diagnostics;
    Clock clock;
    const auto model = load_configured_model(env);
    const auto x0 = initial_state(cfg, model.dim(), model.meta().tau);
    const auto run = simulate(cfg, model, x0, cfg.simulation.T);
    const auto ref = load_reference(cfg, model.dim());

    json rep;
    rep["model"] = model_file(env).string();
    rep["reference"] = ref.description;
    rep["simulation"] = {{"T", cfg.simulation.T},
                         {"dt", cfg.simulation.dt},
                         {"x0", vec_json(x0)},
                         {"rows", run.trajectory.size()},
                         {"escaped", run.escaped},
                         {"escape_time", run.escaped ? json(run.escape_time) : json(nullptr)}};
    int status = kExitOk;
    if (run.escaped) status = kExitNumerical;

    const int tau_steps = model_tau_steps(model, cfg.simulation.dt);
    if (run.trajectory.size() > static_cast<std::size_t>(tau_steps) * static_cast<std::size_t>(model.dim())) {
        const auto res = stage("delay-residuals", [&] { return delay_residuals(run.trajectory, tau_steps, d.bins); });
        auto rj = residual_json(res);
        const double ratio = res.mean_std() / model.scaling().std[0];
        rj["ratio_to_sigma"] = ratio;
        rj["delay_structure"] = ratio > d.degraded_ratio ? "degraded" : "ok";
        rep["delay_residuals"] = rj;
        write_residual_csv(env.file("delay_residuals.csv"), res);
    }

    const auto x1 = run.trajectory.component(0);
    const auto dens = stage("density", [&] { return compare_densities(x1, ref.x1.values, d.bins); });
    rep["density"] = {{"bins", d.bins}, {"area_diff", dens.area_diff}};
    write_density_csv(env.file("density_x1.csv"), dens);

    if (d.lyapunov) {
        try {
            const auto ly = lyapunov_spectrum(model, x0, d.lyapunov_options);
            rep["lyapunov"] = {{"exponents", ly.exponents},
                               {"sum", ly.sum()},
                               {"T_used", ly.T_used},
                               {"renorm_interval", ly.renorm_interval}};
        } catch (const NumericalError& e) {
            rep["lyapunov"] = {{"error", e.what()}};
            status = kExitNumerical;
        }
    }
    rep["valid_time"] = stage("valid-time", [&] { return valid_time_report(cfg, model, ref); });
    rep["timing_s"] = clock.lap();
    write_json(env.file("diagnose.json"), rep);

    env.out << "diagnose: rows=" << run.trajectory.size() << (run.escaped ? " (escaped)" : "") << "\n";
    if (rep.contains("delay_residuals")) {
        env.out << "  delay residual stds:";
        for (const auto& s : rep["delay_residuals"]["stds"]) env.out << ' ' << fixed(s.get<double>(), 5);
        env.out << "  [" << rep["delay_residuals"]["delay_structure"].get<std::string>() << "]\n";
    }
    env.out << "  X1 density area diff: " << fixed(dens.area_diff, 5) << "\n";
    if (rep.contains("lyapunov") && rep["lyapunov"].contains("exponents")) {
        env.out << "  Lyapunov exponents:";
        for (const auto& e : rep["lyapunov"]["exponents"]) env.out << ' ' << fixed(e.get<double>(), 4);
        env.out << "\n";
    }
    if (!rep["valid_time"]["median"].is_null())
        env.out << "  median valid time: " << fixed(rep["valid_time"]["median"].get<double>(), 3) << "\n";
    env.out << "wrote " << env.file("diagnose.json").string() << "\n";
    if (status != kExitOk) {
        env.out.flush();
        throw NumericalError(run.escaped ? "simulation escaped at t=" + format_real(run.escape_time) +
                                               "; report written with partial diagnostics"
                                         : "Lyapunov computation failed; see report");
    }
    return status;
}

int cmd_fixed_points(const Env& env) {
    const auto model = load_configured_model(env);
    const auto report = fixed_points_for(env.cfg, model);
    json j;
    j["model"] = model_file(env).string();
    j["rule"] = to_string(env.cfg.fixed_points.options.rule);
    j["seeds"] = report.seeds;
    j["nonconverged"] = report.nonconverged;
    json pts = json::array();
    for (const auto& p : report.points) pts.push_back(fixed_point_json(p));
    j["points"] = pts;
    write_json(env.file("fixed_points.json"), j);
    const auto table = fixed_point_table(report, model.dim());
    write_text(env.file("fixed_points.txt"), table);
    env.out << table << report.points.size() << " fixed points from " << report.seeds << " seeds ("
            << report.nonconverged << " did not converge)\n";
    return kExitOk;
}

BasinOptions basin_options_for(const RunConfig& cfg, int dim) {
    BasinOptions o = cfg.basin.options;
    const auto defaults = default_basin_options(dim);
    if (o.plane_u.size() == 0) o.plane_u = defaults.plane_u;
    if (o.plane_v.size() == 0) o.plane_v = defaults.plane_v;
    return o;
}

int cmd_basin(const Env& env) {
    const auto& cfg = env.cfg;
    Clock clock;
    const auto model = load_configured_model(env);
    const auto opts = basin_options_for(cfg, model.dim());
    const auto map = stage("basin", [&] { return basin_scan(model, opts); });
    write_basin_csv(env.file("basin.csv"), map);
    json j;
    j["model"] = model_file(env).string();
    j["plane_u"] = vec_json(map.u);
    j["plane_v"] = vec_json(map.v);
    j["region"] = {map.a_lo, map.a_hi, map.b_lo, map.b_hi};
    j["resolution"] = {map.na, map.nb};
    j["escape_time"] = map.escape_time;
    j["escape_radius"] = map.escape_radius;
    j["escaped_cells"] = map.escaped_count();
    j["retained_cells"] = map.cells.size() - map.escaped_count();
    if (cfg.basin.overlay_fixed_points) {
        const auto report = fixed_points_for(cfg, model);
        json pts = json::array();
        for (const auto& p : report.points) {
            auto pj = fixed_point_json(p);
            const auto [a, b] = map.project(p.location);
            pj["plane"] = {a, b};
            if (const auto cell = map.locate(p.location)) {
                pj["cell"] = {cell->first, cell->second};
                pj["near_boundary"] = map.near_boundary(cell->first, cell->second);
            }
            pts.push_back(pj);
        }
        j["fixed_points"] = pts;
    }
    j["timing_s"] = clock.lap();
    write_json(env.file("basin.json"), j);
    env.out << "basin " << map.na << "x" << map.nb << ": " << map.escaped_count() << " escaped, "
            << map.cells.size() - map.escaped_count() << " retained\n";
    if (j.contains("fixed_points"))
        for (const auto& p : j["fixed_points"])
            if (p.contains("near_boundary"))
                env.out << "  " << p["classification"].get<std::string>() << " at (" << fixed(p["plane"][0].get<double>(), 3)
                        << ", " << fixed(p["plane"][1].get<double>(), 3) << ")"
                        << (p["near_boundary"].get<bool>() ? " on the boundary" : "") << "\n";
    env.out << "wrote " << env.file("basin.csv").string() << "\n";
    return kExitOk;
}

SweepValidation sweep_validation(const RunConfig& cfg, const Prepared& p) {
    SweepValidation v;
    const auto last = p.trajectory.states.rows() - 1;
    v.x0 = p.trajectory.states.row(last).transpose();
    v.T = cfg.diagnostics.sweep_T;
    v.dt = cfg.simulation.dt;
    v.tau_steps = tau_to_steps(cfg.embedding.tau, cfg.simulation.dt);
    v.reference_x1 = load_reference(cfg, cfg.embedding.dim).x1.values;
    v.bins = cfg.diagnostics.bins;
    v.escape_radius = cfg.simulation.divergence_bound;
    v.meta = make_meta(cfg, p, 0.0);
    return v;
}

int cmd_sweep_lambda(const Env& env) {
    const auto& cfg = env.cfg;
    const auto p = prepare(cfg);
    const auto spec = make_basis(cfg.basis, p.dataset);
    const auto validation = stage("sweep", [&] { return sweep_validation(cfg, p); });
    const auto result = stage("sweep", [&] { return lambda_sweep(p.dataset, spec, cfg.regression.lambdas, validation); });

    std::ostringstream csv;
    csv << "lambda,log10_lambda,ok";
    for (int d = 0; d + 1 < cfg.embedding.dim; ++d) csv << ",residual_std_" << d + 1;
    csv << ",mean_residual_std,area_diff,error\n";
    json rows = json::array();
    std::ostringstream table;
    table << std::left << std::setw(14) << "lambda" << std::setw(8) << "status" << std::setw(16) << "mean res std"
          << "area diff\n";
    for (const auto& r : result.rows) {
        csv << format_real(r.lambda) << ',' << format_real(std::log10(r.lambda)) << ',' << (r.ok ? 1 : 0);
        for (int d = 0; d + 1 < cfg.embedding.dim; ++d)
            csv << ',' << (r.ok ? format_real(r.residual_stds[static_cast<std::size_t>(d)]) : "");
        csv << ',' << (r.ok ? format_real(r.mean_residual_std) : "") << ',' << (r.ok ? format_real(r.area_diff) : "")
            << ",\"" << r.error << "\"\n";
        json rj;
        rj["lambda"] = r.lambda;
        rj["ok"] = r.ok;
        if (r.ok) {
            rj["residual_stds"] = r.residual_stds;
            rj["mean_residual_std"] = r.mean_residual_std;
            rj["area_diff"] = r.area_diff;
        } else {
            rj["error"] = r.error;
        }
        rows.push_back(rj);
        table << std::left << std::setw(14) << short_real(r.lambda) << std::setw(8) << (r.ok ? "ok" : "failed")
              << std::setw(16) << (r.ok ? fixed(r.mean_residual_std, 6) : "-") << (r.ok ? fixed(r.area_diff, 5) : r.error)
              << "\n";
    }
    write_text(env.file("sweep.csv"), csv.str());
    json j;
    j["validation_T"] = validation.T;
    j["rows"] = rows;
    j["best_lambda"] = result.best ? json(result.rows[*result.best].lambda) : json(nullptr);
    write_json(env.file("sweep.json"), j);
    if (result.best && result.rows[*result.best].model) save_model(*result.rows[*result.best].model, env.file("sweep_best_model.json"));
    env.out << table.str();
    if (result.best) env.out << "selected lambda = " << short_real(result.rows[*result.best].lambda) << "\n";
    else env.out << "no lambda produced a valid model\n";
    env.out << "wrote " << env.file("sweep.csv").string() << "\n";
    if (!result.best) throw NumericalError("every sweep entry failed");
    return kExitOk;
}

int cmd_compare_basis(const Env& env) {
    const auto& cfg = env.cfg;
    const auto p = prepare(cfg);
    const auto ref = load_reference(cfg, cfg.embedding.dim);
    const int tau_steps = stage("simulation", [&] { return tau_to_steps(cfg.embedding.tau, cfg.simulation.dt); });
    const Eigen::VectorXd x0 = p.trajectory.states.row(p.trajectory.states.rows() - 1).transpose();

    RunConfig::Basis rbf = cfg.basis;
    rbf.kind = BasisKind::LinearRbf;
    RunConfig::Basis poly = cfg.basis;
    poly.kind = BasisKind::Polynomial;
    poly.degree = cfg.compare.degree;
    struct Entry {
        std::string name;
        RunConfig::Basis basis;
        double lambda;
    };
    const std::array<Entry, 2> entries{Entry{"linear+rbf", rbf, cfg.regression.lambda},
                                       Entry{"polynomial-" + std::to_string(cfg.compare.degree), poly, cfg.compare.lambda}};
    json rows = json::array();
    std::ostringstream csv, table;
    csv << "basis,lambda,features,mean_regression_error,mean_residual_std,area_diff,escaped\n";
    table << std::left << std::setw(16) << "basis" << std::setw(10) << "features" << std::setw(14) << "regr error"
          << std::setw(16) << "mean res std" << "area diff\n";
    std::vector<double> errors, areas;
    for (const auto& e : entries) {
        const auto spec = make_basis(e.basis, p.dataset);
        const auto model =
            stage("regression", [&] { return fit_model(p.dataset, spec, e.lambda, make_meta(cfg, p, e.lambda)); });
        const auto err = regression_error(model, p.dataset);
        const auto run = simulate(cfg, model, x0, cfg.simulation.T);
        json rj;
        rj["basis"] = e.name;
        rj["lambda"] = e.lambda;
        rj["features"] = spec.feature_count();
        rj["mean_regression_error"] = err.mean;
        rj["escaped"] = run.escaped;
        double mean_std = std::nan(""), area = std::nan("");
        if (run.trajectory.size() > static_cast<std::size_t>(tau_steps * model.dim())) {
            const auto res = delay_residuals(run.trajectory, tau_steps, cfg.diagnostics.bins);
            mean_std = res.mean_std();
            rj["residual_stds"] = res.stds;
            area = compare_densities(run.trajectory.component(0), ref.x1.values, cfg.diagnostics.bins).area_diff;
            rj["area_diff"] = area;
        }
        errors.push_back(err.mean);
        areas.push_back(area);
        rows.push_back(rj);
        csv << e.name << ',' << format_real(e.lambda) << ',' << spec.feature_count() << ',' << format_real(err.mean) << ','
            << format_real(mean_std) << ',' << format_real(area) << ',' << (run.escaped ? 1 : 0) << '\n';
        table << std::left << std::setw(16) << e.name << std::setw(10) << spec.feature_count() << std::setw(14)
              << fixed(err.mean, 5) << std::setw(16) << fixed(mean_std, 5) << fixed(area, 5)
              << (run.escaped ? " (escaped)" : "") << "\n";
    }
    json j;
    j["rows"] = rows;
    j["error_ratio"] = errors[1] / errors[0];
    j["area_diff_ratio"] = areas[1] / areas[0];
    write_json(env.file("compare_basis.json"), j);
    write_text(env.file("compare_basis.csv"), csv.str());
    env.out << table.str() << "polynomial / rbf: regression error x" << fixed(errors[1] / errors[0], 2)
            << ", area diff x" << fixed(areas[1] / areas[0], 2) << "\n";
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Data-driven ODE models from scalar time series via delay coordinates and RBF ridge regression",
                 "odeforge"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every configuration key");

    std::string config_path;
    app.add_option("-c,--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
    std::map<std::string, std::string> flags;
    for (const auto& key : config_schema())
        app.add_option("--" + key.name, flags[key.name], key.help + " [" + key.default_value + "]")
            ->group("Configuration overrides");
    std::string model_alias, out_alias;
    app.add_option("-m,--model", model_alias, "alias for --model.path");
    app.add_option("-o,--out", out_alias, "alias for --output.dir");

    std::string command;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"generate", "write a Lorenz observable series (or copy the configured CSV column)"},
        {"fit", "embed, estimate derivatives, sample, build the basis and fit the model"},
        {"simulate", "integrate a fitted model"},
        {"diagnose", "delay residuals, density comparison, Lyapunov spectrum and valid time"},
        {"fixed-points", "Newton search for fixed points, Table-I style report"},
        {"basin", "escape-time scan of a plane through state space"},
        {"sweep-lambda", "fit and validate one model per lambda"},
        {"compare-basis", "RBF against polynomial regression on the same data"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->fallthrough();
        sub->callback([&command, n = name] { command = n; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "odeforge: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        KeyValues values;
        if (!config_path.empty()) values = read_config_file(config_path);
        if (const char* env_dir = std::getenv(kOutputDirEnv); env_dir && *env_dir) values["output.dir"] = env_dir;
        for (const auto& key : config_schema())
            if (app.count("--" + key.name) > 0) values[key.name] = flags[key.name];
        if (!model_alias.empty()) values["model.path"] = model_alias;
        if (!out_alias.empty()) values["output.dir"] = out_alias;
        const auto cfg = resolve_config(values);
        ensure_dir(cfg.output_dir);
        const Env env{cfg, out, cfg.output_dir};
        if (command == "generate") return cmd_generate(env);
        if (command == "fit") return cmd_fit(env);
        if (command == "simulate") return cmd_simulate(env);
        if (command == "diagnose") return cmd_diagnose(env);
        if (command == "fixed-points") return cmd_fixed_points(env);
        if (command == "basin") return cmd_basin(env);
        if (command == "sweep-lambda") return cmd_sweep_lambda(env);
        if (command == "compare-basis") return cmd_compare_basis(env);
        err << "odeforge: unknown command '" << command << "'\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        err << "odeforge: configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "odeforge: data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericalError& e) {
        err << "odeforge: numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::bad_alloc&) {
        err << "odeforge: out of memory; lower basis.max_centers or coarsen basis.delta_grid\n";
        return kExitOther;
    } catch (const std::exception& e) {
        err << "odeforge: " << e.what() << "\n";
        return kExitOther;
    }
}

}  // namespace odeforge::cli
