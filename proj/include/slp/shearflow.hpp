#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "slp/stability.hpp"

namespace slp {

struct ShearFlowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Boundary { Periodic, Clamped };

/// Sampled planar shear flow u_e = (u(y), 0) with noise profiles
/// sigma_k = (eta_k(y), 0).
struct ShearFlowProfile {
    Eigen::VectorXd y;
    Eigen::VectorXd u;
    std::vector<Eigen::VectorXd> etas;
    Boundary boundary = Boundary::Clamped;

    void validate() const {
        const int m = static_cast<int>(y.size());
        if (m < 5) throw ShearFlowError("profile needs at least 5 grid points");
        for (int i = 1; i < m; ++i)
            if (!(y[i] > y[i - 1])) throw ShearFlowError("grid must be strictly increasing");
        if (u.size() != m) throw ShearFlowError("velocity samples do not match the grid");
        for (const auto& e : etas)
            if (e.size() != m) throw ShearFlowError("noise samples do not match the grid");
        if (boundary == Boundary::Periodic) {
            const double h = y[1] - y[0];
            for (int i = 1; i < m; ++i)
                if (std::abs((y[i] - y[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)))
                    throw ShearFlowError("periodic profiles require a uniform grid");
        }
    }
};

namespace detail {

/// Finite-difference weights for the der-th derivative at x0 from arbitrary
/// nodes (Fornberg's recursion).
inline std::vector<double> fd_weights(double x0, const std::vector<double>& x, int der) {
    const int n = static_cast<int>(x.size());
    std::vector<std::vector<double>> c(n, std::vector<double>(der + 1, 0.0));
    c[0][0] = 1.0;
    double c1 = 1.0;
    for (int i = 1; i < n; ++i) {
        double c2 = 1.0;
        const double xi = x[i] - x0;
        for (int j = 0; j < i; ++j) {
            const double xj = x[j] - x0;
            const double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = std::min(i, der); k >= 1; --k)
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - (x[i - 1] - x0) * c[i - 1][k]) / c2;
                c[i][0] = -c1 * (x[i - 1] - x0) * c[i - 1][0] / c2;
            }
            for (int k = std::min(i, der); k >= 1; --k)
                c[j][k] = (xi * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = xi * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = c[i][der];
    if (der > 0) {
        // fold the roundoff residual into the node nearest x0 so the stencil
        // annihilates constants exactly
        double sum = 0;
        for (double wi : w) sum += wi;
        int nearest = 0;
        for (int i = 1; i < n; ++i)
            if (std::abs(x[i] - x0) < std::abs(x[nearest] - x0)) nearest = i;
        w[nearest] -= sum;
    }
    return w;
}

/// der-th derivative of the samples f on the profile grid with a 5-point
/// stencil: 4th-order central, one-sided near clamped boundaries, wrapped
/// for periodic profiles.
inline Eigen::VectorXd derivative(const Eigen::VectorXd& y, const Eigen::VectorXd& f,
                                  Boundary boundary, int der) {
    const int m = static_cast<int>(y.size());
    const int s = 5;
    Eigen::VectorXd out(m);
    if (boundary == Boundary::Periodic) {
        const double h = y[1] - y[0];
        const double period = (y[m - 1] - y[0]) + h;
        for (int i = 0; i < m; ++i) {
            std::vector<double> nodes(s);
            std::vector<int> idx(s);
            for (int k = 0; k < s; ++k) {
                int j = i + k - 2;
                int wrapped = ((j % m) + m) % m;
                idx[k] = wrapped;
                nodes[k] = y[wrapped] + period * std::floor(double(j) / m);
            }
            auto w = fd_weights(y[i], nodes, der);
            double v = 0;
            for (int k = 0; k < s; ++k) v += w[k] * f[idx[k]];
            out[i] = v;
        }
    } else {
        for (int i = 0; i < m; ++i) {
            const int first = std::max(0, std::min(i - 2, m - s));
            std::vector<double> nodes(s);
            for (int k = 0; k < s; ++k) nodes[k] = y[first + k];
            auto w = fd_weights(y[i], nodes, der);
            double v = 0;
            for (int k = 0; k < s; ++k) v += w[k] * f[first + k];
            out[i] = v;
        }
    }
    return out;
}

}  // namespace detail

/// Smallest constant with sum_k eta_k'(y)^2 <= Sigma_1^2 on the grid.
inline double sigma1(const ShearFlowProfile& p) {
    p.validate();
    const int m = static_cast<int>(p.y.size());
    Eigen::VectorXd total = Eigen::VectorXd::Zero(m);
    for (const auto& eta : p.etas) {
        Eigen::VectorXd d = detail::derivative(p.y, eta, p.boundary, 1);
        total += d.cwiseProduct(d);
    }
    return std::sqrt(total.size() ? total.maxCoeff() : 0.0);
}

enum class ShearVerdict { StableSign, Indefinite, Degenerate };

inline std::string to_string(ShearVerdict v) {
    switch (v) {
        case ShearVerdict::StableSign: return "stable_sign";
        case ShearVerdict::Indefinite: return "indefinite";
        default: return "degenerate";
    }
}

struct BernoulliReport {
    ShearVerdict verdict = ShearVerdict::Degenerate;
    Eigen::VectorXd omega;  // vorticity -u'
    Eigen::VectorXd ratio;  // u / u'' = K'(omega_e) / omega_e
};

/// Sign test on u/u'' (the derivative of the Bernoulli function along the
/// vorticity): one strict sign everywhere means the deterministic flow
/// passes the stability precondition; a vanishing u'' (inflection point or
/// linear profile) is reported as degenerate rather than adjudicated.
inline BernoulliReport bernoulli_sign_test(const ShearFlowProfile& p) {
    p.validate();
    BernoulliReport rep;
    Eigen::VectorXd du = detail::derivative(p.y, p.u, p.boundary, 1);
    Eigen::VectorXd ddu = detail::derivative(p.y, p.u, p.boundary, 2);
    rep.omega = -du;
    const double ddu_max = ddu.cwiseAbs().maxCoeff();
    if (ddu_max <= 0 || ddu.cwiseAbs().minCoeff() < 1e-10 * ddu_max) {
        rep.verdict = ShearVerdict::Degenerate;
        return rep;
    }
    rep.ratio = p.u.cwiseQuotient(ddu);
    const double margin = 1e-10;
    const bool all_pos = (rep.ratio.array() > margin).all();
    const bool all_neg = (rep.ratio.array() < -margin).all();
    rep.verdict = (all_pos || all_neg) ? ShearVerdict::StableSign
                                       : ShearVerdict::Indefinite;
    return rep;
}

struct ShearCertificate {
    bool valid = false;
    std::string failure_reason;
    ShearVerdict verdict = ShearVerdict::Degenerate;
    double sigma1_sq = 0;
    StoppingTime t_max;
    double sup_noise_sq = 0;       // max_y sum_k eta_k^2
    double sup_noise_grad_sq = 0;  // max_y sum_k eta_k'^2
};

inline ShearCertificate shear_certificate(const ShearFlowProfile& p, double eps,
                                          double delta) {
    ShearCertificate cert;
    auto rep = bernoulli_sign_test(p);
    cert.verdict = rep.verdict;
    if (rep.verdict != ShearVerdict::StableSign) {
        cert.failure_reason = "Bernoulli sign test failed (" + to_string(rep.verdict) + ")";
        return cert;
    }
    const double s1 = sigma1(p);
    cert.sigma1_sq = s1 * s1;
    cert.t_max = stopping_time(eps, delta, cert.sigma1_sq);
    const int m = static_cast<int>(p.y.size());
    Eigen::VectorXd amp = Eigen::VectorXd::Zero(m);
    for (const auto& eta : p.etas) amp += eta.cwiseProduct(eta);
    cert.sup_noise_sq = m && !p.etas.empty() ? amp.maxCoeff() : 0.0;
    cert.sup_noise_grad_sq = cert.sigma1_sq;
    cert.valid = true;
    return cert;
}

inline json shear_certificate_to_json(const ShearCertificate& c) {
    json j;
    j["valid"] = c.valid;
    j["verdict"] = to_string(c.verdict);
    if (!c.valid) {
        j["failure_reason"] = c.failure_reason;
        return j;
    }
    j["sigma1_sq"] = c.sigma1_sq;
    j["t_max_unbounded"] = c.t_max.unbounded;
    if (!c.t_max.unbounded) j["t_max"] = c.t_max.t_max;
    j["sup_noise_sq"] = c.sup_noise_sq;
    j["sup_noise_grad_sq"] = c.sup_noise_grad_sq;
    return j;
}

/// Read a profile from CSV with header `y,u,eta_1,...,eta_K`.
inline ShearFlowProfile read_profile_csv(const std::string& path,
                                         Boundary boundary = Boundary::Clamped) {
    std::ifstream in(path);
    if (!in) throw ShearFlowError("cannot open '" + path + "'");
    std::string line;
    int line_no = 0;

    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(item);
        return out;
    };

    if (!std::getline(in, line)) throw ShearFlowError("empty profile file");
    ++line_no;
    auto header = split(line);
    if (header.size() < 2 || header[0] != "y" || header[1] != "u")
        throw ShearFlowError("line 1: header must start with 'y,u'");
    const int n_eta = static_cast<int>(header.size()) - 2;
    for (int k = 0; k < n_eta; ++k)
        if (header[2 + k] != "eta_" + std::to_string(k + 1))
            throw ShearFlowError("line 1: expected column 'eta_" +
                                 std::to_string(k + 1) + "'");

    std::vector<double> ys, us;
    std::vector<std::vector<double>> etas(n_eta);
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = split(line);
        if (static_cast<int>(cells.size()) != 2 + n_eta)
            throw ShearFlowError("line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(2 + n_eta) + " columns, got " +
                                 std::to_string(cells.size()));
        std::vector<double> vals;
        for (const auto& cell : cells) {
            try {
                size_t pos = 0;
                double v = std::stod(cell, &pos);
                if (pos != cell.size()) throw std::invalid_argument(cell);
                vals.push_back(v);
            } catch (const std::exception&) {
                throw ShearFlowError("line " + std::to_string(line_no) +
                                     ": cannot parse '" + cell + "' as a number");
            }
        }
        ys.push_back(vals[0]);
        us.push_back(vals[1]);
        for (int k = 0; k < n_eta; ++k) etas[k].push_back(vals[2 + k]);
    }

    ShearFlowProfile p;
    p.boundary = boundary;
    p.y = Eigen::Map<Eigen::VectorXd>(ys.data(), ys.size());
    p.u = Eigen::Map<Eigen::VectorXd>(us.data(), us.size());
    for (auto& e : etas)
        p.etas.push_back(Eigen::Map<Eigen::VectorXd>(e.data(), e.size()));
    p.validate();
    return p;
}

}  // namespace slp
