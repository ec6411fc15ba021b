#pragma once

#include "odeforge/basis.hpp"
#include "odeforge/diagnostics.hpp"
#include "odeforge/timeseries.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace odeforge::cli {

/// Exit status of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitOther = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumerical = 4,
};

/// One recognised configuration key, addressed as "section.key".
struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string help;
};

const std::vector<ConfigKey>& config_schema();

/// Resolved "section.key" -> text.
using KeyValues = std::map<std::string, std::string>;

/// Reads an INI file. Unknown sections or keys raise ConfigError.
KeyValues read_config_file(const std::filesystem::path& path);

/// Environment variable overriding output.dir (a --output.dir flag still wins).
inline constexpr const char* kOutputDirEnv = "ODEFORGE_OUTPUT_DIR";

/// Accepts plain reals and powers of ten written "10^x" (e.g. 10^-3.9).
double parse_lambda(const std::string& text);
/// Comma- or whitespace-separated list of lambda values.
std::vector<double> parse_lambda_list(const std::string& text);
std::vector<double> parse_real_list(const std::string& text);

struct RunConfig {
    struct Data {
        std::string source = "generate-lorenz";  ///< generate-lorenz | csv
        std::filesystem::path path;
        std::string column = "auto";
        CsvOptions csv;
        double dt = 0.005;
        double T = 5000.0;
        double transient = 100.0;
        Eigen::Vector3d x0{1.0, 1.0, 1.0};
        double sigma = 10.0;
        double rho = 28.0;
        double beta = 8.0 / 3.0;
    } data;
    struct Embedding {
        int dim = 3;
        double tau = 0.13;
    } embedding;
    int derivative_stride = 1;
    struct Sampling {
        double fraction = 0.02;
        std::uint64_t seed = 1;
        SamplingPolicy policy = SamplingPolicy::SeededRandom;
    } sampling;
    struct Basis {
        BasisKind kind = BasisKind::LinearRbf;
        double delta_grid = 0.25;
        int m = 3;
        double p = 0.1;
        std::size_t max_centers = kDefaultMaxCenters;
        int degree = 8;
    } basis;
    struct Regression {
        double lambda = 1e-7;
        std::vector<double> lambdas;
    } regression;
    struct Compare {
        int degree = 8;
        double lambda = 0.0;
    } compare;
    std::filesystem::path model_path;  ///< empty: <output>/model.json
    struct Simulation {
        double T = 10000.0;
        double dt = 0.005;
        std::string x0 = "last";  ///< last | first | explicit list
        double divergence_bound = 1e6;
    } simulation;
    struct Diagnostics {
        int bins = kDefaultBins;
        std::filesystem::path reference;
        double reference_T = 100000.0;
        Eigen::Vector3d reference_x0{2.0, 3.0, 20.0};
        bool lyapunov = true;
        LyapunovOptions lyapunov_options;
        double valid_threshold = kDefaultValidThreshold;
        double valid_horizon = 25.0;
        int valid_starts = 10;
        double valid_spacing = 50.0;
        double degraded_ratio = 1e-3;
        double sweep_T = 2000.0;
    } diagnostics;
    struct FixedPoints {
        FixedPointOptions options;
        double seed_lo = -20.0;
        double seed_hi = 20.0;
        int seed_per_axis = 11;
        int attractor_seeds = 200;
        double attractor_T = 1000.0;
    } fixed_points;
    struct Basin {
        BasinOptions options;
        bool overlay_fixed_points = true;
    } basin;
    std::filesystem::path output_dir = "odeforge-out";

    KeyValues resolved;  ///< every key after merging, for reports
};

/// Merges schema defaults with `values` and validates every field.
RunConfig resolve_config(const KeyValues& values);

/// Runs the tool with argv-style arguments; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace odeforge::cli
