#include "odeforge/basis.hpp"

#include "odeforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <unordered_set>

namespace odeforge {

std::string to_string(BasisKind kind) { return kind == BasisKind::LinearRbf ? "linear+rbf" : "polynomial"; }

BasisKind basis_kind_from_string(const std::string& text) {
    if (text == "linear+rbf" || text == "rbf") return BasisKind::LinearRbf;
    if (text == "polynomial" || text == "poly") return BasisKind::Polynomial;
    throw ConfigError("unknown basis kind '" + text + "' (expected linear+rbf or polynomial)");
}

BasisSpec BasisSpec::linear_rbf(int dim, RbfGrid grid) {
    BasisSpec s;
    s.kind = BasisKind::LinearRbf;
    s.dim = dim;
    s.rbf = std::move(grid);
    s.validate();
    return s;
}

BasisSpec BasisSpec::polynomial(int dim, int degree) {
    BasisSpec s;
    s.kind = BasisKind::Polynomial;
    s.dim = dim;
    s.poly_degree = degree;
    s.validate();
    return s;
}

namespace {

std::size_t binomial(std::size_t n, std::size_t k) {
    k = std::min(k, n - k);
    std::size_t r = 1;
    for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

std::size_t BasisSpec::feature_count() const {
    if (kind == BasisKind::LinearRbf) return 1 + static_cast<std::size_t>(dim) + (rbf ? rbf->size() : 0);
    return binomial(static_cast<std::size_t>(dim + poly_degree), static_cast<std::size_t>(poly_degree));
}

void BasisSpec::validate() const {
    if (dim < 1) throw ConfigError("basis dimension must be >= 1");
    if (kind == BasisKind::LinearRbf) {
        if (!rbf) throw ConfigError("linear+rbf basis requires an RBF grid");
        if (rbf->centers.rows() > 0 && rbf->centers.cols() != dim)
            throw ConfigError("RBF centers have dimension " + std::to_string(rbf->centers.cols()) +
                              ", basis has " + std::to_string(dim));
        if (!(rbf->sigma2 > 0.0) || !std::isfinite(rbf->sigma2)) throw ConfigError("RBF sigma2 must be positive");
    } else {
        if (poly_degree < 1) throw ConfigError("polynomial degree must be >= 1");
    }
}

double rbf_sigma2(double delta_grid, int m, double p) {
    if (!(delta_grid > 0.0) || !std::isfinite(delta_grid)) throw ConfigError("delta_grid must be positive");
    if (m < 2) throw ConfigError("m must be >= 2");
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("p must lie strictly between 0 and 1");
    const double r = static_cast<double>(m - 1) * delta_grid;
    return r * r / (-std::log(p));
}

// ---------------------------------------------------------------------------

namespace {

struct IndexHash {
    std::size_t operator()(const std::vector<int>& k) const noexcept {
        std::size_t h = 1469598103934665603ull;
        for (int v : k) {
            h ^= static_cast<std::size_t>(static_cast<std::uint32_t>(v));
            h *= 1099511628211ull;
        }
        return h;
    }
};

}  // namespace

RbfGrid build_rbf_centers(const StateMatrix& points, double delta_grid, int m, double p, std::size_t max_centers) {
    RbfGrid grid;
    grid.sigma2 = rbf_sigma2(delta_grid, m, p);
    grid.delta_grid = delta_grid;
    grid.m = m;
    grid.p = p;
    if (points.rows() == 0) throw DataError("cannot build RBF centers from an empty dataset");
    const int dim = static_cast<int>(points.cols());
    const double radius = static_cast<double>(m - 1) * delta_grid;
    const double r2 = radius * radius;
    const int reach = m - 1;

    std::unordered_set<std::vector<int>, IndexHash> nodes;
    std::vector<int> key(static_cast<std::size_t>(dim));
    std::vector<int> lo(static_cast<std::size_t>(dim));
    std::vector<int> hi(static_cast<std::size_t>(dim));

    // Depth-first walk over the lattice box around one point, pruning on the
    // partial squared distance.
    std::function<void(const double*, int, double)> walk = [&](const double* x, int d, double partial) {
        if (d == dim) {
            nodes.insert(key);
            if (nodes.size() > max_centers) throw std::length_error("cap");
            return;
        }
        const auto du = static_cast<std::size_t>(d);
        for (int k = lo[du]; k <= hi[du]; ++k) {
            const double diff = x[d] - delta_grid * static_cast<double>(k);
            const double next = partial + diff * diff;
            if (next > r2) continue;
            key[du] = k;
            walk(x, d + 1, next);
        }
    };

    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double* x = points.row(i).data();
        for (int d = 0; d < dim; ++d) {
            if (!std::isfinite(x[d])) throw DataError("non-finite dataset input while building RBF centers");
            const double u = x[d] / delta_grid;
            lo[static_cast<std::size_t>(d)] = static_cast<int>(std::floor(u)) - reach;
            hi[static_cast<std::size_t>(d)] = static_cast<int>(std::ceil(u)) + reach;
        }
        try {
            walk(x, 0, 0.0);
        } catch (const std::length_error&) {
            throw ConfigError("RBF grid exceeds the center cap of " + std::to_string(max_centers) + " at delta_grid=" +
                              format_real(delta_grid) + " after " + std::to_string(i + 1) + " of " +
                              std::to_string(points.rows()) + " points; use a coarser delta_grid or raise the cap");
        }
    }

    std::vector<std::vector<int>> sorted(nodes.begin(), nodes.end());
    std::sort(sorted.begin(), sorted.end());
    grid.centers.resize(static_cast<Eigen::Index>(sorted.size()), dim);
    for (std::size_t j = 0; j < sorted.size(); ++j)
        for (int d = 0; d < dim; ++d)
            grid.centers(static_cast<Eigen::Index>(j), d) = delta_grid * static_cast<double>(sorted[j][static_cast<std::size_t>(d)]);
    return grid;
}

RbfGrid build_rbf_centers(const RegressionDataset& dataset, double delta_grid, int m, double p,
                          std::size_t max_centers) {
    return build_rbf_centers(dataset.inputs, delta_grid, m, p, max_centers);
}

std::vector<std::vector<int>> monomial_exponents(int dim, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> e(static_cast<std::size_t>(dim), 0);
    // Fill position d onward with total `left`, highest exponent first.
    std::function<void(int, int)> fill = [&](int d, int left) {
        if (d == dim - 1) {
            e[static_cast<std::size_t>(d)] = left;
            out.push_back(e);
            return;
        }
        for (int k = left; k >= 0; --k) {
            e[static_cast<std::size_t>(d)] = k;
            fill(d + 1, left - k);
        }
    };
    for (int g = 0; g <= degree; ++g) fill(0, g);
    return out;
}

// ---------------------------------------------------------------------------

FeatureMap::FeatureMap(BasisSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    count_ = spec_.feature_count();
    const auto dim = static_cast<std::size_t>(spec_.dim);
    if (spec_.kind == BasisKind::Polynomial) {
        exponents_ = monomial_exponents(spec_.dim, spec_.poly_degree);
        return;
    }
    const auto& grid = *spec_.rbf;
    inv_sigma2_ = 1.0 / grid.sigma2;
    delta_ = grid.delta_grid;
    const auto J = grid.size();

    std::vector<std::int64_t> lattice(J * dim);
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t d = 0; d < dim; ++d) {
            const double c = grid.centers(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d));
            const double u = c / delta_;
            const auto k = static_cast<std::int64_t>(std::llround(u));
            if (std::abs(u - static_cast<double>(k)) > 1e-6)
                throw ConfigError("RBF center " + std::to_string(j) + " is not on the delta_grid lattice");
            lattice[j * dim + d] = k;
        }

    axis_lo_.assign(dim, 0);
    axis_offset_.assign(dim + 1, 0);
    for (std::size_t d = 0; d < dim; ++d) {
        std::int64_t lo = 0, hi = -1;
        for (std::size_t j = 0; j < J; ++j) {
            const auto k = lattice[j * dim + d];
            if (j == 0 || k < lo) lo = k;
            if (j == 0 || k > hi) hi = k;
        }
        axis_lo_[d] = lo;
        axis_offset_[d + 1] = axis_offset_[d] + static_cast<std::size_t>(hi - lo + 1);
    }
    center_axis_index_.resize(J * dim);
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t d = 0; d < dim; ++d)
            center_axis_index_[j * dim + d] =
                static_cast<std::uint32_t>(axis_offset_[d] + static_cast<std::size_t>(lattice[j * dim + d] - axis_lo_[d]));

    // Group consecutive centers that differ only by +1 along the last axis.
    runs_.clear();
    for (std::size_t j = 0; j < J; ++j) {
        const std::uint32_t* cur = &center_axis_index_[j * dim];
        if (!runs_.empty()) {
            auto& r = runs_.back();
            const std::uint32_t* head = &center_axis_index_[r.first * dim];
            bool same_prefix = true;
            for (std::size_t d = 0; d + 1 < dim; ++d) same_prefix = same_prefix && head[d] == cur[d];
            if (same_prefix && cur[dim - 1] == r.last_axis + r.length) {
                ++r.length;
                continue;
            }
        }
        runs_.push_back({static_cast<std::uint32_t>(j), 1u, cur[dim - 1]});
    }
}

void FeatureMap::check_dim(Eigen::Index n) const {
    if (n != spec_.dim)
        throw ConfigError("state has dimension " + std::to_string(n) + ", basis expects " + std::to_string(spec_.dim));
}

void FeatureMap::rbf_axis_tables(const double* x, std::vector<double>& gauss, std::vector<double>* slope) const {
    const auto dim = static_cast<std::size_t>(spec_.dim);
    gauss.resize(axis_offset_[dim]);
    if (slope) slope->resize(axis_offset_[dim]);
    if (runs_.empty()) return;
    // exp(-(x - u_k)^2 / sigma^2) along an evenly spaced axis, by ratio recurrence
    // outward from the node nearest x so that values only shrink.
    const double step_decay = std::exp(-2.0 * delta_ * delta_ * inv_sigma2_);
    for (std::size_t d = 0; d < dim; ++d) {
        const auto n = static_cast<std::int64_t>(axis_offset_[d + 1] - axis_offset_[d]);
        double* g = gauss.data() + axis_offset_[d];
        const double lo = static_cast<double>(axis_lo_[d]);
        const double near = std::clamp(std::round(x[d] / delta_) - lo, 0.0, static_cast<double>(n - 1));
        const auto p = static_cast<std::int64_t>(near);
        const double e = x[d] - delta_ * (lo + near);
        g[p] = std::exp(-e * e * inv_sigma2_);
        double ratio = std::exp((2.0 * e * delta_ - delta_ * delta_) * inv_sigma2_);
        for (std::int64_t k = p + 1; k < n; ++k) {
            g[k] = g[k - 1] * ratio;
            ratio *= step_decay;
        }
        ratio = std::exp((-2.0 * e * delta_ - delta_ * delta_) * inv_sigma2_);
        for (std::int64_t k = p - 1; k >= 0; --k) {
            g[k] = g[k + 1] * ratio;
            ratio *= step_decay;
        }
        if (slope) {
            double* sl = slope->data() + axis_offset_[d];
            for (std::int64_t k = 0; k < n; ++k)
                sl[k] = -2.0 * (x[d] - delta_ * (lo + static_cast<double>(k))) * inv_sigma2_;
        }
    }
}

void FeatureMap::rbf_values(const std::vector<double>& gauss, double* phi) const {
    const auto dim = static_cast<std::size_t>(spec_.dim);
    const double* g = gauss.data();
    for (const auto& r : runs_) {
        const std::uint32_t* head = &center_axis_index_[static_cast<std::size_t>(r.first) * dim];
        double pre = 1.0;
        for (std::size_t d = 0; d + 1 < dim; ++d) pre *= g[head[d]];
        const double* src = g + r.last_axis;
        double* dst = phi + r.first;
        for (std::uint32_t t = 0; t < r.length; ++t) dst[t] = pre * src[t];
    }
}

void FeatureMap::eval(const double* x, double* out) const {
    const auto dim = static_cast<std::size_t>(spec_.dim);
    if (spec_.kind == BasisKind::Polynomial) {
        const auto deg = static_cast<std::size_t>(spec_.poly_degree);
        std::vector<double> powers(dim * (deg + 1));
        for (std::size_t d = 0; d < dim; ++d) {
            powers[d * (deg + 1)] = 1.0;
            for (std::size_t e = 1; e <= deg; ++e) powers[d * (deg + 1) + e] = powers[d * (deg + 1) + e - 1] * x[d];
        }
        for (std::size_t f = 0; f < exponents_.size(); ++f) {
            double v = 1.0;
            for (std::size_t d = 0; d < dim; ++d) v *= powers[d * (deg + 1) + static_cast<std::size_t>(exponents_[f][d])];
            out[f] = v;
        }
        return;
    }
    out[0] = 1.0;
    for (std::size_t d = 0; d < dim; ++d) out[1 + d] = x[d];
    thread_local std::vector<double> gauss;
    rbf_axis_tables(x, gauss, nullptr);
    rbf_values(gauss, out + 1 + dim);
}

Eigen::VectorXd FeatureMap::eval(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    check_dim(x.size());
    Eigen::VectorXd xs = x;
    Eigen::VectorXd out(static_cast<Eigen::Index>(count_));
    eval(xs.data(), out.data());
    return out;
}

void FeatureMap::jacobian(const double* x, Eigen::Ref<Eigen::MatrixXd> out) const {
    const auto dim = static_cast<std::size_t>(spec_.dim);
    out.setZero();
    if (spec_.kind == BasisKind::Polynomial) {
        const auto deg = static_cast<std::size_t>(spec_.poly_degree);
        std::vector<double> powers(dim * (deg + 1));
        for (std::size_t d = 0; d < dim; ++d) {
            powers[d * (deg + 1)] = 1.0;
            for (std::size_t e = 1; e <= deg; ++e) powers[d * (deg + 1) + e] = powers[d * (deg + 1) + e - 1] * x[d];
        }
        for (std::size_t f = 0; f < exponents_.size(); ++f) {
            const auto& ex = exponents_[f];
            for (std::size_t d = 0; d < dim; ++d) {
                if (ex[d] == 0) continue;
                double v = static_cast<double>(ex[d]) * powers[d * (deg + 1) + static_cast<std::size_t>(ex[d] - 1)];
                for (std::size_t o = 0; o < dim; ++o)
                    if (o != d) v *= powers[o * (deg + 1) + static_cast<std::size_t>(ex[o])];
                out(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(d)) = v;
            }
        }
        return;
    }
    for (std::size_t d = 0; d < dim; ++d) out(static_cast<Eigen::Index>(1 + d), static_cast<Eigen::Index>(d)) = 1.0;
    std::vector<double> gauss, slope;
    rbf_axis_tables(x, gauss, &slope);
    const auto J = spec_.rbf->size();
    std::vector<double> phi(J);
    rbf_values(gauss, phi.data());
    const std::uint32_t* idx = center_axis_index_.data();
    for (std::size_t j = 0; j < J; ++j, idx += dim) {
        const auto row = static_cast<Eigen::Index>(1 + dim + j);
        for (std::size_t d = 0; d < dim; ++d) out(row, static_cast<Eigen::Index>(d)) = phi[j] * slope[idx[d]];
    }
}

Eigen::MatrixXd FeatureMap::jacobian(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    check_dim(x.size());
    Eigen::VectorXd xs = x;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(count_), spec_.dim);
    jacobian(xs.data(), out);
    return out;
}

void FeatureMap::eval_rows(const StateMatrix& inputs, Eigen::Index first, Eigen::MatrixXd& out) const {
    check_dim(inputs.cols());
    if (out.cols() != static_cast<Eigen::Index>(count_) || first + out.rows() > inputs.rows())
        throw ConfigError("eval_rows: output block does not match inputs");
    std::vector<double> row(count_);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        eval(inputs.row(first + r).data(), row.data());
        for (std::size_t f = 0; f < count_; ++f) out(r, static_cast<Eigen::Index>(f)) = row[f];
    }
}

void FeatureMap::contract(const double* x, const RowMatrix& coeffs, double* value, double* jac) const {
    const auto dim = static_cast<std::size_t>(spec_.dim);
    const auto K = coeffs.rows();
    const auto D = static_cast<Eigen::Index>(dim);
    Eigen::Map<Eigen::VectorXd> val(value, K);
    if (spec_.kind == BasisKind::Polynomial) {
        Eigen::VectorXd feats(static_cast<Eigen::Index>(count_));
        eval(x, feats.data());
        val.noalias() = coeffs * feats;
        if (jac) {
            Eigen::MatrixXd fj(static_cast<Eigen::Index>(count_), spec_.dim);
            jacobian(x, fj);
            Eigen::Map<RowMatrix>(jac, K, D).noalias() = coeffs * fj;
        }
        return;
    }

    // Per-thread scratch keeps evaluation allocation-free and reentrant.
    thread_local std::vector<double> gauss, slope, phi, psi;
    rbf_axis_tables(x, gauss, jac ? &slope : nullptr);
    const auto J = spec_.rbf->size();
    const auto Jn = static_cast<Eigen::Index>(J);
    phi.resize(J);
    rbf_values(gauss, phi.data());
    const Eigen::Map<const Eigen::VectorXd> phi_v(phi.data(), Jn);
    const Eigen::Map<const Eigen::VectorXd> x_v(x, D);
    val.noalias() = coeffs.col(0);
    val.noalias() += coeffs.middleCols(1, D) * x_v;
    val.noalias() += coeffs.rightCols(Jn) * phi_v;
    if (!jac) return;

    // psi(j, d) = phi_j * slope_d(c_j), so dF/dX = B_lin + B_rbf * psi.
    psi.resize(J * dim);
    const double* sl = slope.data();
    for (const auto& r : runs_) {
        const std::uint32_t* head = &center_axis_index_[static_cast<std::size_t>(r.first) * dim];
        for (std::size_t d = 0; d < dim; ++d) {
            double* dst = psi.data() + d * J + r.first;
            const double* src = phi.data() + r.first;
            if (d + 1 < dim) {
                const double s = sl[head[d]];
                for (std::uint32_t t = 0; t < r.length; ++t) dst[t] = src[t] * s;
            } else {
                const double* ls = sl + r.last_axis;
                for (std::uint32_t t = 0; t < r.length; ++t) dst[t] = src[t] * ls[t];
            }
        }
    }
    Eigen::Map<RowMatrix> jac_m(jac, K, D);
    jac_m.noalias() = coeffs.middleCols(1, D);
    for (Eigen::Index d = 0; d < D; ++d) {
        const Eigen::Map<const Eigen::VectorXd> psi_d(psi.data() + static_cast<std::size_t>(d) * J, Jn);
        jac_m.col(d).noalias() += coeffs.rightCols(Jn) * psi_d;
    }
}

Eigen::VectorXd eval_features(const Eigen::Ref<const Eigen::VectorXd>& x, const BasisSpec& spec) {
    return FeatureMap(spec).eval(x);
}

Eigen::MatrixXd eval_feature_jacobian(const Eigen::Ref<const Eigen::VectorXd>& x, const BasisSpec& spec) {
    return FeatureMap(spec).jacobian(x);
}

}  // namespace odeforge
