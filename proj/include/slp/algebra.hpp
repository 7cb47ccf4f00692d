#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace slp {

using json = nlohmann::json;

/// Thrown when two elements that live on different algebras are combined,
/// or when a descriptor fails its structural checks.
struct AlgebraError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Finite-dimensional Lie algebra given by dense structure constants,
/// [e_i, e_j] = sum_k c_{ij}^k e_k.  The pairing between the algebra and
/// its dual is the coordinate dot product throughout.
class LieAlgebraDescriptor {
public:
    LieAlgebraDescriptor(int dim, std::vector<double> structure_constants,
                         std::string name)
        : dim_(dim), c_(std::move(structure_constants)), name_(std::move(name)) {
        if (dim_ <= 0) throw AlgebraError("algebra dimension must be positive");
        if (static_cast<int>(c_.size()) != dim_ * dim_ * dim_)
            throw AlgebraError("structure constant array has wrong size");
        validate();
    }

    int dim() const { return dim_; }
    const std::string& name() const { return name_; }

    double c(int i, int j, int k) const { return c_[(i * dim_ + j) * dim_ + k]; }

    /// Matrix of eta -> [xi, eta].
    Eigen::MatrixXd ad_matrix(const Eigen::VectorXd& xi) const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim_, dim_);
        for (int k = 0; k < dim_; ++k)
            for (int j = 0; j < dim_; ++j) {
                double s = 0;
                for (int i = 0; i < dim_; ++i) s += c(i, j, k) * xi[i];
                m(k, j) = s;
            }
        return m;
    }

    /// Matrix of mu -> ad*_xi mu, the dual of ad_xi under the dot-product
    /// pairing: <ad*_xi mu, eta> = <mu, [xi, eta]>.
    Eigen::MatrixXd ad_star_matrix(const Eigen::VectorXd& xi) const {
        return ad_matrix(xi).transpose();
    }

    bool structurally_equal(const LieAlgebraDescriptor& other) const {
        if (dim_ != other.dim_) return false;
        for (size_t i = 0; i < c_.size(); ++i)
            if (c_[i] != other.c_[i]) return false;
        return true;
    }

private:
    void validate() const {
        const double tol = 1e-12;
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j)
                for (int k = 0; k < dim_; ++k)
                    if (std::abs(c(i, j, k) + c(j, i, k)) > tol)
                        throw AlgebraError("structure constants are not antisymmetric");
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j)
                for (int k = 0; k < dim_; ++k)
                    for (int l = 0; l < dim_; ++l) {
                        double s = 0;
                        for (int m = 0; m < dim_; ++m)
                            s += c(i, j, m) * c(m, k, l) + c(j, k, m) * c(m, i, l) +
                                 c(k, i, m) * c(m, j, l);
                        if (std::abs(s) > tol)
                            throw AlgebraError("structure constants violate the Jacobi identity");
                    }
    }

    int dim_;
    std::vector<double> c_;
    std::string name_;
};

using AlgebraPtr = std::shared_ptr<const LieAlgebraDescriptor>;

inline bool same_algebra(const AlgebraPtr& a, const AlgebraPtr& b) {
    if (a == b) return true;
    if (!a || !b) return false;
    return a->structurally_equal(*b);
}

namespace detail {
inline void require_same(const AlgebraPtr& a, const AlgebraPtr& b) {
    if (!same_algebra(a, b))
        throw AlgebraError("elements belong to different algebras");
}
}  // namespace detail

/// Element of the algebra (velocity-like quantities: xi, sigma_k).
struct AlgebraElement {
    AlgebraPtr algebra;
    Eigen::VectorXd coords;

    AlgebraElement(AlgebraPtr alg, Eigen::VectorXd x)
        : algebra(std::move(alg)), coords(std::move(x)) {
        if (coords.size() != algebra->dim())
            throw AlgebraError("coordinate vector length does not match algebra dimension");
    }
};

/// Element of the dual (momentum-like quantities: mu, delta mu).
struct DualElement {
    AlgebraPtr algebra;
    Eigen::VectorXd coords;

    DualElement(AlgebraPtr alg, Eigen::VectorXd x)
        : algebra(std::move(alg)), coords(std::move(x)) {
        if (coords.size() != algebra->dim())
            throw AlgebraError("coordinate vector length does not match algebra dimension");
    }
};

inline AlgebraElement ad(const AlgebraElement& xi, const AlgebraElement& eta) {
    detail::require_same(xi.algebra, eta.algebra);
    return {xi.algebra, xi.algebra->ad_matrix(xi.coords) * eta.coords};
}

inline DualElement ad_star(const AlgebraElement& xi, const DualElement& mu) {
    detail::require_same(xi.algebra, mu.algebra);
    return {mu.algebra, xi.algebra->ad_star_matrix(xi.coords) * mu.coords};
}

inline double pairing(const DualElement& mu, const AlgebraElement& xi) {
    detail::require_same(mu.algebra, xi.algebra);
    return mu.coords.dot(xi.coords);
}

/// so(3) with c_{ij}^k = epsilon_{ijk}; the bracket is the cross product.
inline AlgebraPtr so3() {
    std::vector<double> c(27, 0.0);
    auto idx = [](int i, int j, int k) { return (i * 3 + j) * 3 + k; };
    c[idx(0, 1, 2)] = 1;  c[idx(1, 0, 2)] = -1;
    c[idx(1, 2, 0)] = 1;  c[idx(2, 1, 0)] = -1;
    c[idx(2, 0, 1)] = 1;  c[idx(0, 2, 1)] = -1;
    return std::make_shared<LieAlgebraDescriptor>(3, std::move(c), "so(3)");
}

inline Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

/// Semidirect product g (x) V built from a base algebra of dimension n and
/// matrices rho(e_i) acting on an m-dimensional vector space:
///   [(xi1, v1), (xi2, v2)] = ([xi1, xi2], rho(xi1) v2 - rho(xi2) v1).
class SemidirectDescriptor {
public:
    SemidirectDescriptor(AlgebraPtr base, std::vector<Eigen::MatrixXd> action)
        : base_(std::move(base)), action_(std::move(action)) {
        const int n = base_->dim();
        if (static_cast<int>(action_.size()) != n)
            throw AlgebraError("need one action matrix per base generator");
        rep_dim_ = static_cast<int>(action_[0].rows());
        for (const auto& a : action_)
            if (a.rows() != rep_dim_ || a.cols() != rep_dim_)
                throw AlgebraError("action matrices must be square and uniformly sized");
        validate_representation();
        derived_ = build_derived();
    }

    const AlgebraPtr& base() const { return base_; }
    int rep_dim() const { return rep_dim_; }
    const std::vector<Eigen::MatrixXd>& action() const { return action_; }

    /// Descriptor of the (n+m)-dimensional product algebra; the first n
    /// coordinates are the base, the trailing m the vector space.
    const AlgebraPtr& derived() const { return derived_; }

private:
    void validate_representation() const {
        const int n = base_->dim();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(rep_dim_, rep_dim_);
                for (int k = 0; k < n; ++k) lhs += base_->c(i, j, k) * action_[k];
                Eigen::MatrixXd rhs = action_[i] * action_[j] - action_[j] * action_[i];
                if ((lhs - rhs).cwiseAbs().maxCoeff() > 1e-12)
                    throw AlgebraError("action matrices do not form a representation");
            }
    }

    AlgebraPtr build_derived() const {
        const int n = base_->dim();
        const int d = n + rep_dim_;
        std::vector<double> c(static_cast<size_t>(d) * d * d, 0.0);
        auto idx = [d](int i, int j, int k) { return (i * d + j) * d + k; };
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k)
                    c[idx(i, j, k)] = base_->c(i, j, k);
        for (int i = 0; i < n; ++i)
            for (int a = 0; a < rep_dim_; ++a)
                for (int b = 0; b < rep_dim_; ++b) {
                    c[idx(i, n + a, n + b)] = action_[i](b, a);
                    c[idx(n + a, i, n + b)] = -action_[i](b, a);
                }
        return std::make_shared<LieAlgebraDescriptor>(
            d, std::move(c), base_->name() + " (x) R^" + std::to_string(rep_dim_));
    }

    AlgebraPtr base_;
    std::vector<Eigen::MatrixXd> action_;
    int rep_dim_ = 0;
    AlgebraPtr derived_;
};

inline SemidirectDescriptor semidirect_product(AlgebraPtr base,
                                               std::vector<Eigen::MatrixXd> action) {
    return SemidirectDescriptor(std::move(base), std::move(action));
}

/// so(3) acting on R^3 by the hat map; underlies the heavy top.
inline SemidirectDescriptor so3_semidirect_r3() {
    std::vector<Eigen::MatrixXd> rho;
    rho.emplace_back(hat(Eigen::Vector3d::UnitX()));
    rho.emplace_back(hat(Eigen::Vector3d::UnitY()));
    rho.emplace_back(hat(Eigen::Vector3d::UnitZ()));
    return semidirect_product(so3(), std::move(rho));
}

inline json descriptor_to_json(const LieAlgebraDescriptor& a) {
    const int n = a.dim();
    json sc = json::array();
    for (int i = 0; i < n; ++i) {
        json plane = json::array();
        for (int j = 0; j < n; ++j) {
            json row = json::array();
            for (int k = 0; k < n; ++k) row.push_back(a.c(i, j, k));
            plane.push_back(row);
        }
        sc.push_back(plane);
    }
    return json{{"dim", n}, {"structure_constants", sc}, {"name", a.name()}};
}

inline AlgebraPtr descriptor_from_json(const json& j) {
    const int n = j.at("dim").get<int>();
    const auto& sc = j.at("structure_constants");
    std::vector<double> c(static_cast<size_t>(n) * n * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int jj = 0; jj < n; ++jj)
            for (int k = 0; k < n; ++k)
                c[(i * n + jj) * n + k] = sc.at(i).at(jj).at(k).get<double>();
    return std::make_shared<LieAlgebraDescriptor>(
        n, std::move(c), j.value("name", std::string("custom")));
}

}  // namespace slp
