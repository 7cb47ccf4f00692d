#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slp/sde.hpp"
#include "slp/systems.hpp"

namespace slp {

struct StabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Jet of the Casimir modifier Phi at the equilibrium: gradient values
/// lambda_j = Phi'_j and the Hessian phi over the invariant values.  Only
/// these two derivatives enter the analysis, so Phi itself is never stored.
struct CasimirJet {
    Eigen::VectorXd lambda;
    Eigen::MatrixXd phi;
};

/// Columns Q_j mu_e: gradients of the invariants at the equilibrium.
inline Eigen::MatrixXd invariant_gradients(const StochasticLiePoissonSystem& sys,
                                           const Eigen::VectorXd& mu_e) {
    const int n = sys.dim();
    const int nj = static_cast<int>(sys.invariants.size());
    Eigen::MatrixXd v(n, nj);
    for (int j = 0; j < nj; ++j) v.col(j) = sys.invariants[j] * mu_e;
    return v;
}

struct FirstVariationSolution {
    Eigen::VectorXd lambda;      // minimum-norm multiplier
    double residual = 0.0;
    Eigen::MatrixXd null_basis;  // directions leaving the solve invariant
};

/// Find multipliers with Dh(mu_e) + sum_j lambda_j Q_j mu_e = 0 in least
/// squares.  The minimum-norm solution is returned together with a basis of
/// the solution set's direction space; a large residual means no multiplier
/// exists for this equilibrium.
inline FirstVariationSolution solve_first_variation(const StochasticLiePoissonSystem& sys,
                                                    const Eigen::VectorXd& mu_e) {
    if (sys.invariants.empty()) throw StabilityError("system declares no invariants");
    const Eigen::MatrixXd v = invariant_gradients(sys, mu_e);
    const Eigen::VectorXd rhs = -hamiltonian_gradient(sys, mu_e);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeThinU | Eigen::ComputeFullV);
    FirstVariationSolution sol;
    sol.lambda = svd.solve(rhs);
    sol.residual = (v * sol.lambda - rhs).norm();

    const double tol = 1e-12 * std::max(1.0, svd.singularValues()[0]);
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] > tol) ++rank;
    sol.null_basis = svd.matrixV().rightCols(v.cols() - rank);
    return sol;
}

/// Second variation of the extended Hamiltonian h + Phi(c_1, ..., c_J):
///   N = A + sum_j lambda_j Q_j + V phi V^T,   V = [Q_j mu_e].
inline Eigen::MatrixXd second_variation(const StochasticLiePoissonSystem& sys,
                                        const Eigen::VectorXd& mu_e,
                                        const CasimirJet& jet) {
    const int nj = static_cast<int>(sys.invariants.size());
    if (jet.lambda.size() != nj || jet.phi.rows() != nj || jet.phi.cols() != nj)
        throw StabilityError("jet size does not match the number of invariants");
    Eigen::MatrixXd n = sys.hamiltonian_quadratic;
    for (int j = 0; j < nj; ++j) n += jet.lambda[j] * sys.invariants[j];
    const Eigen::MatrixXd v = invariant_gradients(sys, mu_e);
    n += v * jet.phi * v.transpose();
    return 0.5 * (n + n.transpose());
}

/// The squared norm +-<dmu, N dmu> induced by a sign-definite N.
inline double hc_norm_sq(const Eigen::MatrixXd& n, int sign, const Eigen::VectorXd& dmu) {
    if (sign != 1 && sign != -1) throw StabilityError("sign must be +1 or -1");
    return sign * dmu.dot(n * dmu);
}

/// Quadratic form of the generator acting on the squared norm along the
/// linearized dynamics: with S_k the linearized noise matrices,
///   Q_gen = sum_k Sym(S_k^T N S_k + N S_k^2),
/// so that d/dt E[dmu^T N dmu] = E[dmu^T Q_gen dmu] at time zero.
inline Eigen::MatrixXd generator_quadratic_form(const StochasticLiePoissonSystem& sys,
                                                const Eigen::MatrixXd& n) {
    const int d = sys.dim();
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d, d);
    for (const auto& sigma : sys.noise_fields) {
        const Eigen::MatrixXd s = -sys.algebra->ad_star_matrix(sigma);
        const Eigen::MatrixXd m = s.transpose() * n * s + n * s * s;
        q += 0.5 * (m + m.transpose());
    }
    return q;
}

/// Smallest constant with dmu^T Q_gen dmu <= Sigma^2 * (+-dmu^T N dmu) for
/// all dmu: the top eigenvalue of the pencil (+-Q_gen, +-N), clipped at 0.
inline double sigma_tight(const Eigen::MatrixXd& q_gen, const Eigen::MatrixXd& n,
                          int sign) {
    if (sign != 1 && sign != -1) throw StabilityError("sign must be +1 or -1");
    const Eigen::MatrixXd m = sign * n;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const auto& ev = es.eigenvalues();
    if (ev.minCoeff() <= 0 || ev.maxCoeff() / ev.minCoeff() > 1e12)
        throw StabilityError("second variation is numerically singular");
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    Eigen::MatrixXd l = llt.matrixL();
    // whiten: eigenvalues of L^-1 (sign Q_gen) L^-T
    Eigen::MatrixXd w = l.triangularView<Eigen::Lower>().solve(
        Eigen::MatrixXd(sign * q_gen));
    w = l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd(w.transpose()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(0.5 * (w + w.transpose()));
    const double top = es2.eigenvalues().maxCoeff();
    // snap pure roundoff (e.g. a structurally vanishing generator form) to 0
    const double floor = 1e-12 * std::max(1.0, es2.eigenvalues().cwiseAbs().maxCoeff());
    return top <= floor ? 0.0 : top;
}

/// Closed-form growth constant used as documentation cross-check: the sum
/// of the squared noise amplitudes.
inline double sigma_analytic(const StochasticLiePoissonSystem& sys) {
    double s = 0;
    for (const auto& sigma : sys.noise_fields) s += sigma.squaredNorm();
    return s;
}

/// Constant-coefficient linearization of the flow of the extended
/// Hamiltonian about mu_e:
///   d dmu = -ad*_{N dmu} mu_e dt - sum_k ad*_{sigma_k} dmu o dW_k.
/// Valid as stated when each ad*_{sigma_k} mu_e vanishes (noise aligned
/// with the equilibrium), which holds for the built-in examples.
inline LinearSde linearized_system(const StochasticLiePoissonSystem& sys,
                                   const Eigen::VectorXd& mu_e,
                                   const Eigen::MatrixXd& n) {
    const int d = sys.dim();
    LinearSde lin;
    lin.drift_matrix = Eigen::MatrixXd(d, d);
    for (int j = 0; j < d; ++j)
        lin.drift_matrix.col(j) =
            -sys.algebra->ad_star_matrix(n.col(j)) * mu_e;
    for (const auto& sigma : sys.noise_fields)
        lin.noise_matrices.push_back(-sys.algebra->ad_star_matrix(sigma));
    return lin;
}

inline double gronwall_bound(double norm0_sq, double sigma_sq, double t) {
    if (t < 0) throw StabilityError("time must be nonnegative");
    return norm0_sq * std::exp(sigma_sq * t);
}

inline double markov_bound(double norm0_sq, double sigma_sq, double eps, double t) {
    if (eps <= 0) throw StabilityError("eps must be positive");
    return std::min(1.0, gronwall_bound(norm0_sq, sigma_sq, t) / eps);
}

struct StoppingTime {
    bool unbounded = false;
    double t_max = std::numeric_limits<double>::infinity();
};

inline StoppingTime stopping_time(double eps, double delta, double sigma_sq) {
    if (!(eps > delta) || delta <= 0)
        throw StabilityError("need eps > delta > 0");
    StoppingTime st;
    if (sigma_sq <= 0) {
        st.unbounded = true;
        return st;
    }
    st.t_max = std::log(eps / delta) / sigma_sq;
    return st;
}

// --- certification pipeline -----------------------------------------------

struct AnalyzeOptions {
    double equilibrium_tol = 1e-10;
    double residual_tol = 1e-10;
    // grid over the multiplier direction space (when the first-variation
    // solve is underdetermined)
    double multiplier_range = 10.0;
    int multiplier_grid = 4001;
    // phi values scanned when reporting the feasible set (single invariant)
    std::vector<double> phi_grid = default_phi_grid();
    std::vector<std::pair<double, double>> eps_delta_pairs = {{1e-2, 1e-4}};

    static std::vector<double> default_phi_grid() {
        std::vector<double> g;
        for (int i = 0; i <= 16; ++i) {
            double v = std::pow(10.0, -2.0 + 4.0 * i / 16.0);
            g.push_back(v);
            g.push_back(-v);
        }
        return g;
    }
};

struct TMaxEntry {
    double eps = 0, delta = 0;
    StoppingTime t_max;
};

struct EquilibriumCertificate {
    bool valid = false;
    std::string failure_reason;
    Eigen::VectorXd mu_e;
    CasimirJet jet;
    Eigen::MatrixXd hessian;       // N = D^2 H_C(mu_e)
    int sign = 0;                  // +1, -1, or 0 when indefinite
    double first_variation_residual = 0;
    Eigen::VectorXd hessian_eigenvalues;
    double sigma_sq_tight = 0;
    double sigma_sq_analytic = 0;
    std::vector<double> feasible_phi;
    std::vector<TMaxEntry> t_max_table;
};

namespace detail {

/// Sign for which s * (U^T B U) is positive definite, with margin; 0 if
/// neither works.  An empty U (invariant gradients span everything) is
/// feasible for both signs, reported as +1 with infinite margin.
inline std::pair<int, double> complement_definite_sign(const Eigen::MatrixXd& b,
                                                       const Eigen::MatrixXd& u) {
    if (u.cols() == 0) return {+1, std::numeric_limits<double>::infinity()};
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        Eigen::MatrixXd(u.transpose() * b * u));
    const double thresh = 1e-10 * std::max(1.0, b.norm());
    if (es.eigenvalues().minCoeff() > thresh)
        return {+1, es.eigenvalues().minCoeff()};
    if (es.eigenvalues().maxCoeff() < -thresh)
        return {-1, -es.eigenvalues().maxCoeff()};
    return {0, 0.0};
}

}  // namespace detail

/// Full analysis: equilibrium check, multiplier solve (searching the
/// direction space of the solve when it is underdetermined), choice of the
/// Hessian parameters phi making N sign-definite, and the growth constants.
///
/// phi is constructed explicitly from a Schur-complement argument: with
/// U | W an orthonormal split into the complement and span of the invariant
/// gradients, the U-block of N does not depend on phi, so definiteness is
/// achievable exactly when some multiplier makes that block definite; the
/// W-block is then pushed far enough along the gradients' span.
inline EquilibriumCertificate analyze_equilibrium(const StochasticLiePoissonSystem& sys,
                                                  const Eigen::VectorXd& mu_e,
                                                  const AnalyzeOptions& opt = {}) {
    EquilibriumCertificate cert;
    cert.mu_e = mu_e;
    cert.sigma_sq_analytic = sigma_analytic(sys);

    const auto eq = check_equilibrium(sys, mu_e, opt.equilibrium_tol);
    if (!eq.pass) {
        double residual = eq.drift_residual;
        for (double r : eq.noise_residuals) residual = std::max(residual, r);
        cert.failure_reason = "mu_e is not an equilibrium (field residual " +
                              std::to_string(residual) + ")";
        return cert;
    }

    const auto fv = solve_first_variation(sys, mu_e);
    cert.first_variation_residual = fv.residual;
    if (fv.residual > opt.residual_tol) {
        cert.failure_reason = "no Casimir multiplier exists for this equilibrium";
        return cert;
    }

    const int nj = static_cast<int>(sys.invariants.size());
    const Eigen::MatrixXd v = invariant_gradients(sys, mu_e);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeFullU);
    const double sv_tol = 1e-12 * std::max(1.0, svd.singularValues()[0]);
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] > sv_tol) ++rank;
    const Eigen::MatrixXd w = svd.matrixU().leftCols(rank);
    const Eigen::MatrixXd u = svd.matrixU().rightCols(sys.dim() - rank);

    auto base_matrix = [&](const Eigen::VectorXd& lambda) {
        Eigen::MatrixXd b = sys.hamiltonian_quadratic;
        for (int j = 0; j < nj; ++j) b += lambda[j] * sys.invariants[j];
        return b;
    };

    // search the multiplier solution set for a complement-definite base
    Eigen::VectorXd best_lambda = fv.lambda;
    int best_sign = 0;
    double best_margin = -1;
    auto consider = [&](const Eigen::VectorXd& lambda) {
        auto [s, margin] = detail::complement_definite_sign(base_matrix(lambda), u);
        if (s != 0 && margin > best_margin) {
            best_lambda = lambda;
            best_sign = s;
            best_margin = margin;
        }
    };
    consider(fv.lambda);
    if (fv.null_basis.cols() > 0) {
        const Eigen::VectorXd dir = fv.null_basis.col(0);
        for (int i = 0; i < opt.multiplier_grid; ++i) {
            const double t = -opt.multiplier_range +
                             2 * opt.multiplier_range * i / (opt.multiplier_grid - 1);
            consider(fv.lambda + t * dir);
        }
    }
    if (best_sign == 0) {
        cert.failure_reason = "second variation indefinite for all phi in grid";
        return cert;
    }

    const int s = best_sign;
    const Eigen::MatrixXd b = base_matrix(best_lambda);

    // phi via the Schur complement: make s * W-block large enough to
    // dominate the coupling to the U-block
    const Eigen::MatrixXd g = w.transpose() * v;  // rank x nj, full row rank
    const Eigen::MatrixXd d_block = w.transpose() * b * w;
    double target;
    if (u.cols() == 0) {
        target = std::max(1.0, b.norm());
    } else {
        const Eigen::MatrixXd c_block = u.transpose() * b * w;
        const double mu_min =
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                Eigen::MatrixXd(s * u.transpose() * b * u))
                .eigenvalues()
                .minCoeff();
        target = c_block.squaredNorm() / mu_min + mu_min;
    }
    Eigen::MatrixXd g_pinv =
        g.completeOrthogonalDecomposition().pseudoInverse();
    Eigen::MatrixXd phi =
        g_pinv * (s * target * Eigen::MatrixXd::Identity(rank, rank) - d_block) *
        g_pinv.transpose();
    phi = 0.5 * (phi + phi.transpose());

    cert.jet = CasimirJet{best_lambda, phi};
    cert.hessian = second_variation(sys, mu_e, cert.jet);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cert.hessian);
    cert.hessian_eigenvalues = es.eigenvalues();
    const double thresh = 1e-10 * std::max(1.0, cert.hessian.norm());
    const bool pos = es.eigenvalues().minCoeff() > thresh;
    const bool neg = es.eigenvalues().maxCoeff() < -thresh;
    if (!pos && !neg) {
        cert.failure_reason = "second variation indefinite for all phi in grid";
        return cert;
    }
    cert.sign = pos ? +1 : -1;
    cert.valid = true;

    // feasible scalar phi values, reported for single-invariant systems
    if (nj == 1) {
        for (double p : opt.phi_grid) {
            CasimirJet jet{best_lambda, Eigen::MatrixXd::Constant(1, 1, p)};
            Eigen::MatrixXd n_p = second_variation(sys, mu_e, jet);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(n_p);
            const double th = 1e-10 * std::max(1.0, n_p.norm());
            if (ep.eigenvalues().minCoeff() > th || ep.eigenvalues().maxCoeff() < -th)
                cert.feasible_phi.push_back(p);
        }
    }

    const Eigen::MatrixXd q_gen = generator_quadratic_form(sys, cert.hessian);
    cert.sigma_sq_tight = sigma_tight(q_gen, cert.hessian, cert.sign);
    for (auto [eps, delta] : opt.eps_delta_pairs)
        cert.t_max_table.push_back({eps, delta, stopping_time(eps, delta, cert.sigma_sq_tight)});
    return cert;
}

inline json certificate_to_json(const EquilibriumCertificate& c) {
    json j;
    j["valid"] = c.valid;
    if (!c.valid) j["failure_reason"] = c.failure_reason;
    j["mu_e"] = std::vector<double>(c.mu_e.data(), c.mu_e.data() + c.mu_e.size());
    j["first_variation_residual"] = c.first_variation_residual;
    j["sigma_sq_analytic"] = c.sigma_sq_analytic;
    if (c.valid) {
        j["lambda"] = std::vector<double>(c.jet.lambda.data(),
                                          c.jet.lambda.data() + c.jet.lambda.size());
        json phi = json::array();
        for (int r = 0; r < c.jet.phi.rows(); ++r) {
            json row = json::array();
            for (int k = 0; k < c.jet.phi.cols(); ++k) row.push_back(c.jet.phi(r, k));
            phi.push_back(row);
        }
        j["phi"] = phi;
        j["sign"] = c.sign > 0 ? "positive" : "negative";
        j["hessian_eigenvalues"] = std::vector<double>(
            c.hessian_eigenvalues.data(),
            c.hessian_eigenvalues.data() + c.hessian_eigenvalues.size());
        j["sigma_sq_tight"] = c.sigma_sq_tight;
        j["feasible_phi"] = c.feasible_phi;
        json table = json::array();
        for (const auto& e : c.t_max_table) {
            json row{{"eps", e.eps}, {"delta", e.delta}, {"unbounded", e.t_max.unbounded}};
            if (!e.t_max.unbounded) row["t_max"] = e.t_max.t_max;
            table.push_back(row);
        }
        j["t_max_table"] = table;
    }
    return j;
}

}  // namespace slp
