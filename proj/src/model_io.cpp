#include "odeforge/errors.hpp"
#include "odeforge/model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace odeforge {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "odeforge-model";
constexpr const char* kTargetScaling = "dX/dt divided by scaling.std (no mean shift)";
constexpr const char* kMonomialOrdering = "graded-lex";

json vector_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vector_from(const json& a, const char* what) {
    if (!a.is_array()) throw SchemaError(std::string("model file: '") + what + "' must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw SchemaError(std::string("model file: '") + what + "' has a non-numeric entry");
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

const json& field(const json& obj, const char* key) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(std::string("model file: missing field '") + key + "'");
    return *it;
}

}  // namespace

std::string model_to_json(const OdeModel& model) {
    const auto& spec = model.spec();
    const auto& meta = model.meta();
    json j;
    j["format"] = kFormatTag;
    j["version"] = kModelFormatVersion;
    j["D"] = spec.dim;
    j["tau"] = meta.tau;
    j["tau_steps"] = meta.tau_steps;
    j["dt"] = meta.dt;

    json basis;
    basis["kind"] = to_string(spec.kind);
    if (spec.kind == BasisKind::LinearRbf) {
        const auto& g = *spec.rbf;
        basis["delta_grid"] = g.delta_grid;
        basis["m"] = g.m;
        basis["p"] = g.p;
        basis["sigma2"] = g.sigma2;
        json centers = json::array();
        for (Eigen::Index r = 0; r < g.centers.rows(); ++r) {
            json c = json::array();
            for (Eigen::Index d = 0; d < g.centers.cols(); ++d) c.push_back(g.centers(r, d));
            centers.push_back(std::move(c));
        }
        basis["centers"] = std::move(centers);
    } else {
        basis["degree"] = spec.poly_degree;
        basis["ordering"] = kMonomialOrdering;
    }
    basis["feature_count"] = spec.feature_count();
    j["basis"] = std::move(basis);

    j["scaling"] = {{"mean", vector_json(model.scaling().mean)},
                    {"std", vector_json(model.scaling().std)},
                    {"targets", kTargetScaling}};

    const auto& beta = model.coefficients().beta;
    json coeffs = json::array();
    for (Eigen::Index k = 0; k < beta.rows(); ++k) coeffs.push_back(vector_json(beta.row(k).transpose()));
    j["coefficients"] = std::move(coeffs);
    j["lambda"] = model.coefficients().lambda;

    j["meta"] = {{"training_T", meta.training_T},
                 {"lambda", meta.lambda},
                 {"seed", meta.seed},
                 {"stride", meta.stride},
                 {"sample_fraction", meta.sample_fraction},
                 {"samples", meta.samples},
                 {"source", meta.source},
                 {"residual_norms", vector_json(model.coefficients().residual_norms)}};
    return j.dump(1);
}

OdeModel model_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("model file is corrupt: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("model file: top level must be an object");
    if (!j.contains("version")) throw SchemaError("model file: missing schema version");
    if (!j["version"].is_number_integer() || j["version"].get<int>() != kModelFormatVersion)
        throw SchemaError("model file: unsupported schema version " + j["version"].dump() + " (expected " +
                          std::to_string(kModelFormatVersion) + ")");
    if (j.contains("format") && j["format"] != kFormatTag) throw SchemaError("model file: unknown format tag");

    try {
        const int D = field(j, "D").get<int>();
        const auto& b = field(j, "basis");
        const auto kind = basis_kind_from_string(field(b, "kind").get<std::string>());
        BasisSpec spec;
        if (kind == BasisKind::LinearRbf) {
            RbfGrid g;
            g.delta_grid = field(b, "delta_grid").get<double>();
            g.m = field(b, "m").get<int>();
            g.p = field(b, "p").get<double>();
            g.sigma2 = field(b, "sigma2").get<double>();
            const auto& centers = field(b, "centers");
            if (!centers.is_array()) throw SchemaError("model file: 'centers' must be an array");
            g.centers.resize(static_cast<Eigen::Index>(centers.size()), D);
            for (std::size_t r = 0; r < centers.size(); ++r) {
                const auto c = vector_from(centers[r], "centers");
                if (c.size() != D) throw SchemaError("model file: center " + std::to_string(r) + " has wrong dimension");
                g.centers.row(static_cast<Eigen::Index>(r)) = c.transpose();
            }
            spec = BasisSpec::linear_rbf(D, std::move(g));
        } else {
            if (b.contains("ordering") && b["ordering"] != kMonomialOrdering)
                throw SchemaError("model file: unsupported monomial ordering " + b["ordering"].dump());
            spec = BasisSpec::polynomial(D, field(b, "degree").get<int>());
        }

        const auto& s = field(j, "scaling");
        ScalingParams scaling{vector_from(field(s, "mean"), "scaling.mean"), vector_from(field(s, "std"), "scaling.std")};

        const auto& c = field(j, "coefficients");
        if (!c.is_array() || c.size() != static_cast<std::size_t>(D))
            throw SchemaError("model file: 'coefficients' must hold D rows");
        CoefficientSet coeffs;
        coeffs.beta.resize(D, static_cast<Eigen::Index>(spec.feature_count()));
        for (int k = 0; k < D; ++k) {
            const auto row = vector_from(c[static_cast<std::size_t>(k)], "coefficients");
            if (row.size() != coeffs.beta.cols())
                throw SchemaError("model file: coefficient row " + std::to_string(k) + " has " +
                                  std::to_string(row.size()) + " entries, basis has " +
                                  std::to_string(coeffs.beta.cols()) + " features");
            coeffs.beta.row(k) = row.transpose();
        }
        coeffs.lambda = field(j, "lambda").get<double>();

        ModelMeta meta;
        meta.tau = field(j, "tau").get<double>();
        meta.tau_steps = field(j, "tau_steps").get<int>();
        meta.dt = field(j, "dt").get<double>();
        if (j.contains("meta")) {
            const auto& m = j["meta"];
            meta.training_T = m.value("training_T", 0.0);
            meta.lambda = m.value("lambda", coeffs.lambda);
            meta.seed = m.value("seed", std::uint64_t{0});
            meta.stride = m.value("stride", 1);
            meta.sample_fraction = m.value("sample_fraction", 0.0);
            meta.samples = m.value("samples", std::size_t{0});
            meta.source = m.value("source", std::string{});
            if (m.contains("residual_norms")) coeffs.residual_norms = vector_from(m["residual_norms"], "residual_norms");
        }
        return OdeModel(std::move(spec), std::move(coeffs), std::move(scaling), std::move(meta));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("model file: ") + e.what());
    } catch (const SchemaError&) {
        throw;
    } catch (const ConfigError& e) {
        throw SchemaError(std::string("model file: ") + e.what());
    }
}

void save_model(const OdeModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file '" + path.string() + "'");
    out << model_to_json(model) << '\n';
    if (!out) throw DataError("write failed for model file '" + path.string() + "'");
}

OdeModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

}  // namespace odeforge
