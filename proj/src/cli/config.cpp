#include "odeforge/cli.hpp"

#include "odeforge/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

namespace odeforge::cli {

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = {
        {"data.source", "generate-lorenz", "generate-lorenz or csv"},
        {"data.path", "", "input CSV (source = csv)"},
        {"data.column", "auto", "header name or 1-based column number; auto skips a leading t/time column"},
        {"data.delimiter", ",", "CSV field delimiter"},
        {"data.header", "auto", "auto, present or absent"},
        {"data.dt", "0.005", "sampling interval"},
        {"data.T", "5000", "generated series length (time units)"},
        {"data.transient", "100", "discarded warm-up before the generated series"},
        {"data.x0", "1,1,1", "Lorenz initial state for generation"},
        {"data.sigma", "10", "Lorenz sigma"},
        {"data.rho", "28", "Lorenz rho"},
        {"data.beta", "2.6666666666666665", "Lorenz beta"},
        {"embedding.dim", "3", "delay embedding dimension D"},
        {"embedding.tau", "0.13", "delay time (multiple of data.dt)"},
        {"derivative.stride", "1", "stencil stride I"},
        {"sampling.fraction", "0.02", "fraction of interior points used for regression"},
        {"sampling.seed", "1", "sampling seed"},
        {"sampling.policy", "random", "random or stride"},
        {"basis.kind", "linear+rbf", "linear+rbf or polynomial"},
        {"basis.delta_grid", "0.25", "RBF lattice spacing (standardized units)"},
        {"basis.m", "3", "support radius in lattice steps plus one"},
        {"basis.p", "0.1", "Gaussian value at distance (m-1)*delta_grid"},
        {"basis.max_centers", "1000000", "upper bound on the number of RBF centers"},
        {"basis.degree", "8", "polynomial degree (kind = polynomial)"},
        {"regression.lambda", "10^-7", "ridge parameter"},
        {"regression.lambdas", "10^-8, 10^-7, 10^-6, 10^-5, 10^-3.9", "sweep-lambda values"},
        {"compare.degree", "8", "polynomial degree for compare-basis"},
        {"compare.lambda", "10^-6.2", "ridge parameter of the polynomial model in compare-basis"},
        {"model.path", "", "model file (default <output.dir>/model.json)"},
        {"simulation.T", "10000", "integration horizon"},
        {"simulation.dt", "0.005", "RK4 step"},
        {"simulation.x0", "last", "last or first delay state of the data, or an explicit list"},
        {"simulation.divergence_bound", "1e6", "stop when ||X|| exceeds this"},
        {"diagnostics.bins", "100", "histogram bins"},
        {"diagnostics.reference", "", "reference CSV: scalar series or trajectory (t,X1..XD)"},
        {"diagnostics.reference_T", "100000", "length of the generated Lorenz reference"},
        {"diagnostics.reference_x0", "2,3,20", "initial state of the generated Lorenz reference"},
        {"diagnostics.lyapunov", "true", "compute the Lyapunov spectrum"},
        {"diagnostics.lyapunov_T", "5000", "Lyapunov averaging time"},
        {"diagnostics.renorm_interval", "0.1", "Gram-Schmidt interval"},
        {"diagnostics.lyapunov_transient", "100", "discarded time before averaging"},
        {"diagnostics.valid_threshold", "0.4", "valid-time threshold in units of sigma_X1"},
        {"diagnostics.valid_horizon", "25", "maximum valid-time horizon"},
        {"diagnostics.valid_starts", "10", "number of reference start states"},
        {"diagnostics.valid_spacing", "50", "time between reference start states"},
        {"diagnostics.degraded_ratio", "1e-3", "flag delay structure when mean residual std / sigma_X1 exceeds this"},
        {"diagnostics.sweep_T", "2000", "validation horizon of sweep-lambda"},
        {"fixed_points.newton_tol", "1e-10", "Newton residual tolerance"},
        {"fixed_points.max_iter", "100", "Newton iteration limit"},
        {"fixed_points.seed_lo", "-20", "seed grid lower bound"},
        {"fixed_points.seed_hi", "20", "seed grid upper bound"},
        {"fixed_points.seed_per_axis", "11", "seed grid points per axis"},
        {"fixed_points.attractor_seeds", "200", "extra seeds taken from the attractor run"},
        {"fixed_points.attractor_T", "1000", "length of the attractor run"},
        {"fixed_points.rule", "unstable-manifold", "unstable-manifold or attractor-distance"},
        {"fixed_points.embed_eps", "0.5", "distance rule threshold"},
        {"fixed_points.probe_step", "1e-3", "unstable-direction push"},
        {"fixed_points.probe_time", "20", "unstable-direction probe horizon"},
        {"fixed_points.escape_radius", "50", "probe escape radius"},
        {"basin.plane_u", "", "first spanning vector (default 1,...,1)"},
        {"basin.plane_v", "", "second spanning vector (default 1,-1,0,...)"},
        {"basin.region", "-20,20,-20,20", "a_lo,a_hi,b_lo,b_hi"},
        {"basin.resolution", "400", "cells per axis"},
        {"basin.escape_time", "5", "escape horizon"},
        {"basin.escape_radius", "50", "escape radius"},
        {"basin.dt", "0.005", "RK4 step for escape tests"},
        {"basin.overlay_fixed_points", "true", "locate fixed points on the map"},
        {"output.dir", "odeforge-out", "output directory"},
    };
    return schema;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
    const auto& schema = config_schema();
    const auto it = std::find_if(schema.begin(), schema.end(), [&](const ConfigKey& k) { return k.name == name; });
    return it == schema.end() ? nullptr : &*it;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_real_strict(const std::string& text, const std::string& key) {
    const auto t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
        throw ConfigError(key + ": expected a real number, got '" + text + "'");
    return v;
}

long long parse_int_strict(const std::string& text, const std::string& key) {
    const auto t = trim(text);
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw ConfigError(key + ": expected an integer, got '" + text + "'");
    return v;
}

/// Items separated by commas and/or whitespace; an empty comma field is an error.
std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream fields(text);
    bool any_comma = text.find(',') != std::string::npos;
    for (std::string field; std::getline(fields, field, ',');) {
        std::istringstream in(field);
        std::size_t before = out.size();
        for (std::string item; in >> item;) out.push_back(item);
        if (any_comma && out.size() == before) throw ConfigError("empty entry in list '" + text + "'");
    }
    if (any_comma && text.find_last_not_of(" \t") == text.rfind(','))
        throw ConfigError("empty entry in list '" + text + "'");
    return out;
}

class Reader {
public:
    explicit Reader(const KeyValues& values) : values_(values) {}

    const std::string& text(const std::string& key) const { return values_.at(key); }

    double real(const std::string& key) const { return parse_real_strict(text(key), key); }
    double positive(const std::string& key) const {
        const double v = real(key);
        if (!(v > 0.0)) throw ConfigError(key + " must be positive, got " + text(key));
        return v;
    }
    double non_negative(const std::string& key) const {
        const double v = real(key);
        if (!(v >= 0.0)) throw ConfigError(key + " must be non-negative, got " + text(key));
        return v;
    }
    int integer(const std::string& key, long long lo, long long hi = 1'000'000'000) const {
        const auto v = parse_int_strict(text(key), key);
        if (v < lo || v > hi)
            throw ConfigError(key + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " +
                              text(key));
        return static_cast<int>(v);
    }
    bool boolean(const std::string& key) const {
        const auto t = trim(text(key));
        if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
        if (t == "false" || t == "no" || t == "off" || t == "0") return false;
        throw ConfigError(key + ": expected true or false, got '" + t + "'");
    }
    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& item : split_list(text(key))) out.push_back(parse_real_strict(item, key));
        return out;
    }
    Eigen::Vector3d vec3(const std::string& key) const {
        const auto v = reals(key);
        if (v.size() != 3) throw ConfigError(key + ": expected 3 values, got '" + text(key) + "'");
        return {v[0], v[1], v[2]};
    }
    Eigen::VectorXd vector(const std::string& key) const {
        const auto v = reals(key);
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

private:
    const KeyValues& values_;
};

}  // namespace

double parse_lambda(const std::string& text) {
    auto t = trim(text);
    t.erase(std::remove(t.begin(), t.end(), ' '), t.end());
    if (t.rfind("10^", 0) == 0) {
        auto e = t.substr(3);
        if (e.size() >= 2 && e.front() == '(' && e.back() == ')') e = e.substr(1, e.size() - 2);
        const double x = parse_real_strict(e, "lambda exponent");
        return std::pow(10.0, x);
    }
    const double v = parse_real_strict(t, "lambda");
    if (v < 0.0) throw ConfigError("lambda must be non-negative, got " + text);
    return v;
}

std::vector<double> parse_lambda_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) out.push_back(parse_lambda(item));
    return out;
}

std::vector<double> parse_real_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) out.push_back(parse_real_strict(item, "list"));
    return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
        throw ConfigError("config file '" + path.string() + "': " + e.message() + " (line " +
                          std::to_string(e.line()) + ")");
    }
    KeyValues values;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("config file '" + path.string() + "': key '" + section + "' must be inside a [section]");
        const auto prefix = section + ".";
        const auto& schema = config_schema();
        if (std::none_of(schema.begin(), schema.end(), [&](const ConfigKey& k) { return k.name.rfind(prefix, 0) == 0; }))
            throw ConfigError("config file '" + path.string() + "': unknown section [" + section + "]");
        for (const auto& [key, value] : body) {
            const auto name = section + "." + key;
            if (!find_key(name)) throw ConfigError("config file '" + path.string() + "': unknown key '" + name + "'");
            values[name] = value.data();
        }
    }
    return values;
}

RunConfig resolve_config(const KeyValues& overrides) {
    KeyValues merged;
    for (const auto& k : config_schema()) merged[k.name] = k.default_value;
    for (const auto& [name, value] : overrides) {
        if (!find_key(name)) throw ConfigError("unknown configuration key '" + name + "'");
        merged[name] = value;
    }
    const Reader r(merged);
    RunConfig c;
    c.resolved = merged;

    c.data.source = trim(r.text("data.source"));
    if (c.data.source != "generate-lorenz" && c.data.source != "csv")
        throw ConfigError("data.source must be generate-lorenz or csv, got '" + c.data.source + "'");
    c.data.path = trim(r.text("data.path"));
    if (c.data.source == "csv" && c.data.path.empty()) throw ConfigError("data.path is required when data.source = csv");
    c.data.column = trim(r.text("data.column"));
    const auto delim = r.text("data.delimiter");
    if (delim == "\\t" || delim == "tab") c.data.csv.delimiter = '\t';
    else if (delim.size() == 1) c.data.csv.delimiter = delim[0];
    else throw ConfigError("data.delimiter must be a single character, got '" + delim + "'");
    const auto header = trim(r.text("data.header"));
    if (header == "auto") c.data.csv.header = HeaderMode::Auto;
    else if (header == "present") c.data.csv.header = HeaderMode::Present;
    else if (header == "absent") c.data.csv.header = HeaderMode::Absent;
    else throw ConfigError("data.header must be auto, present or absent, got '" + header + "'");
    c.data.dt = r.positive("data.dt");
    c.data.T = r.non_negative("data.T");
    c.data.transient = r.non_negative("data.transient");
    c.data.x0 = r.vec3("data.x0");
    c.data.sigma = r.real("data.sigma");
    c.data.rho = r.real("data.rho");
    c.data.beta = r.real("data.beta");

    c.embedding.dim = r.integer("embedding.dim", 1, 64);
    c.embedding.tau = r.positive("embedding.tau");
    c.derivative_stride = r.integer("derivative.stride", 1);

    c.sampling.fraction = r.positive("sampling.fraction");
    if (c.sampling.fraction > 1.0) throw ConfigError("sampling.fraction must be in (0, 1]");
    const auto seed = parse_int_strict(r.text("sampling.seed"), "sampling.seed");
    if (seed < 0) throw ConfigError("sampling.seed must be non-negative");
    c.sampling.seed = static_cast<std::uint64_t>(seed);
    const auto policy = trim(r.text("sampling.policy"));
    if (policy == "random") c.sampling.policy = SamplingPolicy::SeededRandom;
    else if (policy == "stride") c.sampling.policy = SamplingPolicy::UniformStride;
    else throw ConfigError("sampling.policy must be random or stride, got '" + policy + "'");

    try {
        c.basis.kind = basis_kind_from_string(trim(r.text("basis.kind")));
    } catch (const Error& e) {
        throw ConfigError(std::string("basis.kind: ") + e.what());
    }
    c.basis.delta_grid = r.positive("basis.delta_grid");
    c.basis.m = r.integer("basis.m", 2, 1000);
    c.basis.p = r.positive("basis.p");
    if (!(c.basis.p < 1.0)) throw ConfigError("basis.p must be in (0, 1)");
    c.basis.max_centers = static_cast<std::size_t>(r.integer("basis.max_centers", 1));
    c.basis.degree = r.integer("basis.degree", 1, 64);

    c.regression.lambda = parse_lambda(r.text("regression.lambda"));
    c.regression.lambdas = parse_lambda_list(r.text("regression.lambdas"));
    if (c.regression.lambdas.empty()) throw ConfigError("regression.lambdas needs at least one value");
    c.compare.degree = r.integer("compare.degree", 1, 64);
    c.compare.lambda = parse_lambda(r.text("compare.lambda"));

    c.model_path = trim(r.text("model.path"));

    c.simulation.T = r.non_negative("simulation.T");
    c.simulation.dt = r.positive("simulation.dt");
    c.simulation.x0 = trim(r.text("simulation.x0"));
    if (c.simulation.x0 != "last" && c.simulation.x0 != "first") (void)r.reals("simulation.x0");
    c.simulation.divergence_bound = r.positive("simulation.divergence_bound");

    auto& d = c.diagnostics;
    d.bins = r.integer("diagnostics.bins", 1, 100'000'000);
    d.reference = trim(r.text("diagnostics.reference"));
    d.reference_T = r.positive("diagnostics.reference_T");
    d.reference_x0 = r.vec3("diagnostics.reference_x0");
    d.lyapunov = r.boolean("diagnostics.lyapunov");
    d.lyapunov_options.T = r.positive("diagnostics.lyapunov_T");
    d.lyapunov_options.dt = c.simulation.dt;
    d.lyapunov_options.renorm_interval = r.positive("diagnostics.renorm_interval");
    d.lyapunov_options.transient = r.non_negative("diagnostics.lyapunov_transient");
    d.lyapunov_options.escape_radius = c.simulation.divergence_bound;
    d.valid_threshold = r.positive("diagnostics.valid_threshold");
    d.valid_horizon = r.positive("diagnostics.valid_horizon");
    d.valid_starts = r.integer("diagnostics.valid_starts", 1, 100000);
    d.valid_spacing = r.positive("diagnostics.valid_spacing");
    d.degraded_ratio = r.positive("diagnostics.degraded_ratio");
    d.sweep_T = r.positive("diagnostics.sweep_T");

    auto& f = c.fixed_points;
    f.options.newton_tol = r.positive("fixed_points.newton_tol");
    f.options.max_iter = r.integer("fixed_points.max_iter", 1, 100000);
    f.seed_lo = r.real("fixed_points.seed_lo");
    f.seed_hi = r.real("fixed_points.seed_hi");
    if (!(f.seed_hi >= f.seed_lo)) throw ConfigError("fixed_points.seed_hi must be >= fixed_points.seed_lo");
    f.seed_per_axis = r.integer("fixed_points.seed_per_axis", 1, 100000);
    f.attractor_seeds = r.integer("fixed_points.attractor_seeds", 0, 10'000'000);
    f.attractor_T = r.positive("fixed_points.attractor_T");
    try {
        f.options.rule = classification_rule_from_string(trim(r.text("fixed_points.rule")));
    } catch (const Error& e) {
        throw ConfigError(std::string("fixed_points.rule: ") + e.what());
    }
    f.options.embed_eps = r.positive("fixed_points.embed_eps");
    f.options.probe_step = r.positive("fixed_points.probe_step");
    f.options.probe_time = r.positive("fixed_points.probe_time");
    f.options.probe_dt = c.simulation.dt;
    f.options.escape_radius = r.positive("fixed_points.escape_radius");

    auto& b = c.basin.options;
    b.plane_u = r.vector("basin.plane_u");
    b.plane_v = r.vector("basin.plane_v");
    const auto region = r.reals("basin.region");
    if (region.size() != 4) throw ConfigError("basin.region: expected a_lo,a_hi,b_lo,b_hi");
    b.a_lo = region[0];
    b.a_hi = region[1];
    b.b_lo = region[2];
    b.b_hi = region[3];
    if (!(b.a_hi > b.a_lo) || !(b.b_hi > b.b_lo)) throw ConfigError("basin.region: empty region");
    b.resolution_a = b.resolution_b = r.integer("basin.resolution", 1, 100000);
    b.escape_time = r.positive("basin.escape_time");
    b.escape_radius = r.positive("basin.escape_radius");
    b.dt = r.positive("basin.dt");
    c.basin.overlay_fixed_points = r.boolean("basin.overlay_fixed_points");

    c.output_dir = trim(r.text("output.dir"));
    if (c.output_dir.empty()) throw ConfigError("output.dir must not be empty");
    return c;
}

}  // namespace odeforge::cli
