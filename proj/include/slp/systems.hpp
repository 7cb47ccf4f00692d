#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "slp/algebra.hpp"

namespace slp {

struct SystemError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A momentum-space Hamiltonian system on the dual of a Lie algebra with
/// multiplicative Stratonovich noise along fixed algebra directions.
///
/// The Hamiltonian is affine-quadratic, h(mu) = 1/2 mu^T A mu + b^T mu,
/// so its gradient A mu + b and Hessian A are exact.  Conserved quadratic
/// forms are stored as symmetric matrices Q_j with c_j(mu) = 1/2 mu^T Q_j mu.
///
/// Sign convention: the deterministic field is -ad*_{Dh(mu)} mu and the k-th
/// noise field is -ad*_{sigma_k} mu, which reproduces the free rigid body as
/// dPi + Pi x Omega dt + Pi x sigma o dW = 0.
struct StochasticLiePoissonSystem {
    AlgebraPtr algebra;
    Eigen::MatrixXd hamiltonian_quadratic;          // A, symmetric
    Eigen::VectorXd hamiltonian_linear;             // b
    std::vector<Eigen::VectorXd> noise_fields;      // sigma_k, algebra coords
    std::vector<Eigen::MatrixXd> invariants;        // Q_j
    std::string name;

    int dim() const { return algebra->dim(); }

    void validate() const {
        const int n = dim();
        if (hamiltonian_quadratic.rows() != n || hamiltonian_quadratic.cols() != n)
            throw SystemError("Hamiltonian quadratic term has wrong shape");
        if ((hamiltonian_quadratic - hamiltonian_quadratic.transpose())
                .cwiseAbs().maxCoeff() > 1e-12)
            throw SystemError("Hamiltonian quadratic term must be symmetric");
        if (hamiltonian_linear.size() != n)
            throw SystemError("Hamiltonian linear term has wrong length");
        for (const auto& s : noise_fields)
            if (s.size() != n) throw SystemError("noise field has wrong length");
        for (const auto& q : invariants) {
            if (q.rows() != n || q.cols() != n)
                throw SystemError("invariant form has wrong shape");
            if ((q - q.transpose()).cwiseAbs().maxCoeff() > 1e-12)
                throw SystemError("invariant form must be symmetric");
        }
    }
};

inline Eigen::VectorXd hamiltonian_gradient(const StochasticLiePoissonSystem& sys,
                                            const Eigen::VectorXd& mu) {
    return sys.hamiltonian_quadratic * mu + sys.hamiltonian_linear;
}

inline double hamiltonian(const StochasticLiePoissonSystem& sys,
                          const Eigen::VectorXd& mu) {
    return 0.5 * mu.dot(sys.hamiltonian_quadratic * mu) + sys.hamiltonian_linear.dot(mu);
}

inline double invariant_value(const StochasticLiePoissonSystem& sys, int j,
                              const Eigen::VectorXd& mu) {
    return 0.5 * mu.dot(sys.invariants[j] * mu);
}

namespace detail {
inline void require_finite(const Eigen::VectorXd& mu) {
    if (!mu.allFinite()) throw SystemError("state contains NaN or Inf");
}
}  // namespace detail

/// Deterministic vector field, -ad*_{Dh(mu)} mu.
inline Eigen::VectorXd drift(const StochasticLiePoissonSystem& sys,
                             const Eigen::VectorXd& mu) {
    detail::require_finite(mu);
    return -(sys.algebra->ad_star_matrix(hamiltonian_gradient(sys, mu)) * mu);
}

/// k-th Stratonovich diffusion field, -ad*_{sigma_k} mu; linear in mu.
inline Eigen::VectorXd noise_field(const StochasticLiePoissonSystem& sys, int k,
                                   const Eigen::VectorXd& mu) {
    if (k < 0 || k >= static_cast<int>(sys.noise_fields.size()))
        throw SystemError("noise field index out of range");
    return -(sys.algebra->ad_star_matrix(sys.noise_fields[k]) * mu);
}

/// Free rigid body on so(3)*: h = 1/2 Pi . I^-1 Pi, noise sigma e1,
/// conserved form 1/2 |Pi|^2.
inline StochasticLiePoissonSystem make_rigid_body(double i1, double i2, double i3,
                                                  double sigma) {
    if (i1 <= 0 || i2 <= 0 || i3 <= 0)
        throw SystemError("moments of inertia must be positive");
    StochasticLiePoissonSystem sys;
    sys.algebra = so3();
    sys.hamiltonian_quadratic =
        Eigen::Vector3d(1.0 / i1, 1.0 / i2, 1.0 / i3).asDiagonal();
    sys.hamiltonian_linear = Eigen::Vector3d::Zero();
    sys.noise_fields = {sigma * Eigen::Vector3d::UnitX()};
    sys.invariants = {Eigen::Matrix3d::Identity()};
    sys.name = "rigid_body";
    sys.validate();
    return sys;
}

/// Heavy top on (so(3) (x) R^3)*: state (Pi, Gamma),
/// h = 1/2 Pi . I^-1 Pi + mgl chi . Gamma, noise (sigma chi, 0).
/// Conserved forms: |Gamma|^2 and Pi . Gamma; for the symmetric top
/// (I1 == I2, chi = e3) additionally 1/2 (Pi . chi)^2, conserved by both the
/// deterministic field and the compatible noise, which is what makes the
/// gyroscopic stabilisation of the upright state expressible below.
inline StochasticLiePoissonSystem make_heavy_top(double i1, double i2, double i3,
                                                 double m, double g, double l,
                                                 const Eigen::Vector3d& chi,
                                                 double sigma) {
    if (i1 <= 0 || i2 <= 0 || i3 <= 0 || m <= 0 || g <= 0 || l <= 0)
        throw SystemError("heavy top parameters must be positive");
    if (std::abs(chi.norm() - 1.0) > 1e-12)
        throw SystemError("chi must be a unit vector");

    StochasticLiePoissonSystem sys;
    sys.algebra = so3_semidirect_r3().derived();

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6, 6);
    a.topLeftCorner<3, 3>() =
        Eigen::Vector3d(1.0 / i1, 1.0 / i2, 1.0 / i3).asDiagonal();
    sys.hamiltonian_quadratic = a;

    Eigen::VectorXd b = Eigen::VectorXd::Zero(6);
    b.tail<3>() = m * g * l * chi;
    sys.hamiltonian_linear = b;

    Eigen::VectorXd s = Eigen::VectorXd::Zero(6);
    s.head<3>() = sigma * chi;
    sys.noise_fields = {s};

    Eigen::MatrixXd q1 = Eigen::MatrixXd::Zero(6, 6);
    q1.bottomRightCorner<3, 3>() = 2.0 * Eigen::Matrix3d::Identity();
    Eigen::MatrixXd q2 = Eigen::MatrixXd::Zero(6, 6);
    q2.topRightCorner<3, 3>() = Eigen::Matrix3d::Identity();
    q2.bottomLeftCorner<3, 3>() = Eigen::Matrix3d::Identity();
    sys.invariants = {q1, q2};

    if (std::abs(i1 - i2) < 1e-12) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(6);
        v.head<3>() = chi;
        sys.invariants.push_back(v * v.transpose());  // 1/2 (Pi . chi)^2
    }

    sys.name = "heavy_top";
    sys.validate();
    return sys;
}

inline StochasticLiePoissonSystem make_heavy_top(double i1, double i2, double i3,
                                                 double m, double g, double l,
                                                 double sigma) {
    return make_heavy_top(i1, i2, i3, m, g, l, Eigen::Vector3d::UnitZ(), sigma);
}

/// Residuals of the fixed-point conditions: the deterministic field must
/// vanish at mu_e and every noise field must vanish there too.
struct EquilibriumReport {
    double drift_residual = 0;
    std::vector<double> noise_residuals;
    double tol = 0;
    bool pass = false;
};

inline EquilibriumReport check_equilibrium(const StochasticLiePoissonSystem& sys,
                                           const Eigen::VectorXd& mu_e,
                                           double tol = 1e-10) {
    EquilibriumReport rep;
    rep.tol = tol;
    rep.drift_residual = drift(sys, mu_e).norm();
    rep.pass = rep.drift_residual < tol;
    for (int k = 0; k < static_cast<int>(sys.noise_fields.size()); ++k) {
        double r = noise_field(sys, k, mu_e).norm();
        rep.noise_residuals.push_back(r);
        rep.pass = rep.pass && r < tol;
    }
    return rep;
}

inline json system_to_json(const StochasticLiePoissonSystem& sys) {
    json noise = json::array();
    for (const auto& s : sys.noise_fields)
        noise.push_back(std::vector<double>(s.data(), s.data() + s.size()));
    json j{{"type", "custom"}, {"noise", noise}};
    json& p = j["params"];
    p["algebra"] = descriptor_to_json(*sys.algebra);
    const int n = sys.dim();
    std::vector<std::vector<double>> a(n, std::vector<double>(n));
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) a[r][c] = sys.hamiltonian_quadratic(r, c);
    p["A"] = a;
    p["b"] = std::vector<double>(sys.hamiltonian_linear.data(),
                                 sys.hamiltonian_linear.data() + n);
    json qs = json::array();
    for (const auto& q : sys.invariants) {
        std::vector<std::vector<double>> qq(n, std::vector<double>(n));
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) qq[r][c] = q(r, c);
        qs.push_back(qq);
    }
    p["casimirs"] = qs;
    return j;
}

/// Parse {"type": "rigid_body"|"heavy_top"|"custom", "params": {...},
/// "noise": [[...], ...]}.  A top-level "noise" array overrides the
/// built-in noise directions.
inline StochasticLiePoissonSystem system_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    const json params = j.value("params", json::object());
    StochasticLiePoissonSystem sys;
    if (type == "rigid_body") {
        sys = make_rigid_body(params.at("I1").get<double>(), params.at("I2").get<double>(),
                              params.at("I3").get<double>(),
                              params.value("sigma", 0.0));
    } else if (type == "heavy_top") {
        Eigen::Vector3d chi = Eigen::Vector3d::UnitZ();
        if (params.contains("chi")) {
            auto v = params.at("chi").get<std::vector<double>>();
            if (v.size() != 3) throw SystemError("chi must have three components");
            chi = Eigen::Vector3d(v[0], v[1], v[2]);
        }
        sys = make_heavy_top(params.at("I1").get<double>(), params.at("I2").get<double>(),
                             params.at("I3").get<double>(), params.at("m").get<double>(),
                             params.at("g").get<double>(), params.at("l").get<double>(),
                             chi, params.value("sigma", 0.0));
    } else if (type == "custom") {
        sys.algebra = descriptor_from_json(params.at("algebra"));
        const int n = sys.dim();
        auto a = params.at("A").get<std::vector<std::vector<double>>>();
        sys.hamiltonian_quadratic.resize(n, n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) sys.hamiltonian_quadratic(r, c) = a.at(r).at(c);
        auto b = params.at("b").get<std::vector<double>>();
        sys.hamiltonian_linear = Eigen::Map<const Eigen::VectorXd>(b.data(), n);
        for (const auto& q : params.at("casimirs")) {
            auto qq = q.get<std::vector<std::vector<double>>>();
            Eigen::MatrixXd m(n, n);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < n; ++c) m(r, c) = qq.at(r).at(c);
            sys.invariants.push_back(m);
        }
        sys.name = j.value("name", std::string("custom"));
    } else {
        throw SystemError("unknown system type '" + type + "'");
    }
    if (j.contains("noise")) {
        sys.noise_fields.clear();
        for (const auto& row : j.at("noise")) {
            auto v = row.get<std::vector<double>>();
            if (static_cast<int>(v.size()) != sys.dim())
                throw SystemError("noise entry has wrong length");
            sys.noise_fields.push_back(
                Eigen::Map<const Eigen::VectorXd>(v.data(), sys.dim()));
        }
    }
    sys.validate();
    return sys;
}

}  // namespace slp
