#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "slp/shearflow.hpp"

namespace slp::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// exit codes shared by every command
constexpr int kOk = 0;        // success / certified
constexpr int kNegative = 1;  // analysis came back negative (a result)
constexpr int kInputError = 2;
constexpr int kRuntimeError = 3;

/// One schema for every command; commands read the keys they need and all
/// unknown keys are rejected up front.
inline void validate_config(const json& cfg) {
    static const std::set<std::string> known = {
        "system",   "mu_e",     "mu0",        "offset",     "paths",
        "dt",       "t_final",  "seed",       "scheme",     "save_every",
        "observables", "histogram", "eps",    "delta",      "sigma_sq_scale",
        "profile",  "boundary", "dt_levels",  "out"};
    if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : cfg.items())
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    if (cfg.contains("histogram")) {
        static const std::set<std::string> hist_keys = {"observable", "lo", "hi", "bins"};
        for (const auto& [key, _] : cfg.at("histogram").items())
            if (!hist_keys.count(key))
                throw ConfigError("unknown histogram key '" + key + "'");
    }
    if (cfg.contains("system")) {
        static const std::set<std::string> sys_keys = {"type", "params", "noise", "name",
                                                       "file"};
        for (const auto& [key, _] : cfg.at("system").items())
            if (!sys_keys.count(key))
                throw ConfigError("unknown system key '" + key + "'");
    }
}

namespace detail {

inline Eigen::VectorXd vec_from(const json& j, const std::string& what) {
    auto v = j.get<std::vector<double>>();
    if (v.empty()) throw ConfigError(what + " must be a nonempty array");
    return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

inline StochasticLiePoissonSystem load_system(const json& cfg) {
    if (!cfg.contains("system")) throw ConfigError("config needs a 'system'");
    json sys_json = cfg.at("system");
    if (sys_json.contains("file")) {
        std::ifstream in(sys_json.at("file").get<std::string>());
        if (!in) throw ConfigError("cannot open system file");
        in >> sys_json;
    }
    return system_from_json(sys_json);
}

inline IntegratorConfig integrator_from(const json& cfg) {
    IntegratorConfig ic;
    ic.dt = cfg.value("dt", 1e-3);
    ic.scheme = scheme_from_string(cfg.value("scheme", std::string("implicit_midpoint")));
    ic.validate();
    return ic;
}

/// Deterministic default perturbation: 1e-2 along the isotropic direction.
inline Eigen::VectorXd default_offset(int n) {
    return 1e-2 * Eigen::VectorXd::Ones(n) / std::sqrt(double(n));
}

inline void write_json(const std::filesystem::path& path, const json& j,
                       std::ostream& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "'");
    out << j.dump(2) << "\n";
    log << j.dump(2) << "\n";
}

inline std::filesystem::path out_dir(const json& cfg) {
    std::filesystem::path dir = cfg.value("out", std::string("."));
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace detail

/// analyze: equilibrium certification pipeline, certificate written as JSON.
inline int run_analyze(const json& cfg, std::ostream& log = std::cout) {
    const auto sys = detail::load_system(cfg);
    if (!cfg.contains("mu_e")) throw ConfigError("analyze needs 'mu_e'");
    const Eigen::VectorXd mu_e = detail::vec_from(cfg.at("mu_e"), "mu_e");
    if (mu_e.size() != sys.dim()) throw ConfigError("mu_e has wrong length");

    AnalyzeOptions opt;
    opt.eps_delta_pairs = {{cfg.value("eps", 1e-2), cfg.value("delta", 1e-4)}};
    const auto cert = analyze_equilibrium(sys, mu_e, opt);
    detail::write_json(detail::out_dir(cfg) / "certificate.json",
                       certificate_to_json(cert), log);
    return cert.valid ? kOk : kNegative;
}

/// simulate: full nonlinear ensemble with observable means, histograms and
/// (when a reference equilibrium is given) norm statistics.
inline int run_simulate(const json& cfg, std::ostream& log = std::cout) {
    const auto sys = detail::load_system(cfg);
    LiePoissonSde model(sys);

    Eigen::VectorXd mu0;
    if (cfg.contains("mu0")) {
        mu0 = detail::vec_from(cfg.at("mu0"), "mu0");
    } else if (cfg.contains("mu_e")) {
        mu0 = detail::vec_from(cfg.at("mu_e"), "mu_e");
        mu0 += cfg.contains("offset") ? detail::vec_from(cfg.at("offset"), "offset")
                                      : detail::default_offset(sys.dim());
    } else {
        throw ConfigError("simulate needs 'mu0' or 'mu_e'");
    }
    if (mu0.size() != sys.dim()) throw ConfigError("initial state has wrong length");

    EnsembleSpec spec;
    spec.n_paths = cfg.value("paths", 100);
    spec.t_final = cfg.value("t_final", 10.0);
    spec.save_every = cfg.value("save_every", 10);
    spec.master_seed = cfg.value("seed", std::uint64_t{0});
    spec.observables = cfg.value("observables", std::vector<int>{0});

    HistogramSpec hist;
    if (cfg.contains("histogram")) {
        const auto& h = cfg.at("histogram");
        hist.observable = h.value("observable", 0);
        hist.lo = h.value("lo", -2.0);
        hist.hi = h.value("hi", 2.0);
        hist.bins = h.value("bins", 200);
    }
    spec.histogram = hist;

    if (cfg.contains("mu_e")) {
        const Eigen::VectorXd mu_e = detail::vec_from(cfg.at("mu_e"), "mu_e");
        const auto cert = analyze_equilibrium(sys, mu_e);
        if (cert.valid) {
            DeviationForm dev;
            dev.reference = mu_e;
            dev.weight = cert.sign * cert.hessian;
            dev.sign = +1;  // sign already folded into the weight
            if (cfg.contains("eps")) dev.exit_threshold = cfg.at("eps").get<double>();
            spec.deviation = dev;
        }
    }

    const auto ic = detail::integrator_from(cfg);
    const auto result = simulate_ensemble(model, mu0, spec, ic);

    const auto dir = detail::out_dir(cfg);
    result.write_csv((dir / "ensemble.csv").string());
    json meta = result.metadata();
    meta["config"] = cfg;
    meta["system_hash"] = std::hash<std::string>{}(system_to_json(sys).dump());
    detail::write_json(dir / "ensemble_meta.json", meta, log);
    if (result.n_failed > 0) {
        log << "failed paths: " << result.n_failed << "\n";
        return kRuntimeError;
    }
    return kOk;
}

/// verify-bounds: simulate the linearized ensemble and check the expected
/// norm against the exponential bound and the exit frequency against the
/// Markov bound, within three standard errors.
inline int run_verify_bounds(const json& cfg, std::ostream& log = std::cout) {
    const auto sys = detail::load_system(cfg);
    if (!cfg.contains("mu_e")) throw ConfigError("verify-bounds needs 'mu_e'");
    const Eigen::VectorXd mu_e = detail::vec_from(cfg.at("mu_e"), "mu_e");
    const double eps = cfg.value("eps", 1e-2);
    const double delta = cfg.value("delta", 1e-4);
    const double scale = cfg.value("sigma_sq_scale", 1.0);

    AnalyzeOptions opt;
    opt.eps_delta_pairs = {{eps, delta}};
    const auto cert = analyze_equilibrium(sys, mu_e, opt);
    if (!cert.valid) {
        json j{{"pass", false}, {"reason", "certification failed: " + cert.failure_reason}};
        detail::write_json(detail::out_dir(cfg) / "bounds_report.json", j, log);
        return kNegative;
    }

    Eigen::VectorXd dir0 = cfg.contains("offset")
                               ? detail::vec_from(cfg.at("offset"), "offset")
                               : detail::default_offset(sys.dim());
    // scale the offset so the initial squared norm is exactly delta
    const double raw = hc_norm_sq(cert.hessian, cert.sign, dir0);
    if (raw <= 0) throw ConfigError("offset has zero norm");
    dir0 *= std::sqrt(delta / raw);

    const auto lin = linearized_system(sys, mu_e, cert.hessian);
    DeviationForm dev;
    dev.reference = Eigen::VectorXd::Zero(sys.dim());
    dev.weight = cert.sign * cert.hessian;
    dev.sign = +1;
    dev.exit_threshold = eps;

    EnsembleSpec spec;
    spec.n_paths = cfg.value("paths", 10000);
    spec.t_final = cfg.value("t_final", 5.0);
    spec.save_every = cfg.value("save_every", 50);
    spec.master_seed = cfg.value("seed", std::uint64_t{0});
    spec.deviation = dev;

    const auto ic = detail::integrator_from(cfg);
    const auto result = simulate_ensemble(lin, dir0, spec, ic);

    const double sigma_sq = cert.sigma_sq_tight * scale;
    const double t_max = stopping_time(eps, delta, std::max(sigma_sq, 1e-300)).t_max;

    bool pass = true;
    json violations = json::array();
    const auto dirp = detail::out_dir(cfg);
    std::ofstream csv((dirp / "bounds.csv").string());
    csv.precision(17);
    csv << "t,mean_HCnorm,stderr_HCnorm,gronwall,exit_freq,markov\n";
    for (size_t t = 0; t < result.times.size(); ++t) {
        const double tt = result.times[t];
        const double gw = gronwall_bound(delta, sigma_sq, tt);
        const double mk = markov_bound(delta, sigma_sq, eps, tt);
        const double se = result.stderr_dev[t];
        const double ef_se = std::sqrt(
            std::max(0.0, result.exit_freq[t] * (1 - result.exit_freq[t]) /
                              std::max(1, result.n_paths - result.n_failed)));
        csv << tt << "," << result.mean_dev[t] << "," << se << "," << gw << ","
            << result.exit_freq[t] << "," << mk << "\n";
        if (tt > t_max) continue;
        // small relative slack absorbs integrator tolerance when the
        // statistic is exactly conserved (zero variance, zero stderr)
        if (result.mean_dev[t] > gw * (1 + 1e-8) + 3 * se) {
            pass = false;
            violations.push_back(json{{"t", tt},
                                      {"kind", "gronwall"},
                                      {"margin", result.mean_dev[t] - gw - 3 * se}});
        }
        if (result.exit_freq[t] > mk + 3 * ef_se) {
            pass = false;
            violations.push_back(json{{"t", tt},
                                      {"kind", "markov"},
                                      {"margin", result.exit_freq[t] - mk - 3 * ef_se}});
        }
    }
    json j{{"pass", pass},
           {"sigma_sq", sigma_sq},
           {"t_max", t_max},
           {"eps", eps},
           {"delta", delta},
           {"violations", violations},
           {"n_failed", result.n_failed}};
    detail::write_json(dirp / "bounds_report.json", j, log);
    return pass ? kOk : kNegative;
}

/// shear: profile analysis, certificate JSON.
inline int run_shear(const json& cfg, std::ostream& log = std::cout) {
    if (!cfg.contains("profile")) throw ConfigError("shear needs 'profile'");
    const std::string boundary = cfg.value("boundary", std::string("clamped"));
    Boundary b;
    if (boundary == "clamped") b = Boundary::Clamped;
    else if (boundary == "periodic") b = Boundary::Periodic;
    else throw ConfigError("boundary must be 'clamped' or 'periodic'");

    ShearFlowProfile profile;
    try {
        profile = read_profile_csv(cfg.at("profile").get<std::string>(), b);
    } catch (const ShearFlowError& e) {
        throw ConfigError(e.what());
    }
    const auto cert =
        shear_certificate(profile, cfg.value("eps", 1e-2), cfg.value("delta", 1e-4));
    detail::write_json(detail::out_dir(cfg) / "shear_report.json",
                       shear_certificate_to_json(cert), log);
    return cert.valid ? kOk : kNegative;
}

/// convergence: empirical strong order of the configured scheme.
inline int run_convergence(const json& cfg, std::ostream& log = std::cout) {
    const auto sys = detail::load_system(cfg);
    LiePoissonSde model(sys);
    if (!cfg.contains("mu0")) throw ConfigError("convergence needs 'mu0'");
    const Eigen::VectorXd mu0 = detail::vec_from(cfg.at("mu0"), "mu0");
    if (mu0.size() != sys.dim()) throw ConfigError("mu0 has wrong length");
    std::vector<double> levels =
        cfg.value("dt_levels", std::vector<double>{1.0 / 64, 1.0 / 128, 1.0 / 256,
                                                   1.0 / 512, 1.0 / 1024});
    IntegratorConfig ic;
    ic.scheme = scheme_from_string(cfg.value("scheme", std::string("heun")));

    const auto rep = strong_convergence_order(model, mu0, levels,
                                              cfg.value("paths", 200),
                                              cfg.value("t_final", 1.0),
                                              cfg.value("seed", std::uint64_t{0}), ic);
    json j{{"degenerate", rep.degenerate},
           {"dt_levels", rep.dt_levels},
           {"errors", rep.errors}};
    if (rep.degenerate)
        j["notice"] = "errors at machine zero; order fit skipped";
    else
        j["order"] = rep.order;
    detail::write_json(detail::out_dir(cfg) / "convergence.json", j, log);
    return kOk;
}

/// Dispatch with the shared exit-code policy.
inline int run_command(const std::string& command, const json& cfg,
                       std::ostream& log = std::cout) {
    try {
        validate_config(cfg);
        if (command == "analyze") return run_analyze(cfg, log);
        if (command == "simulate") return run_simulate(cfg, log);
        if (command == "verify-bounds") return run_verify_bounds(cfg, log);
        if (command == "shear") return run_shear(cfg, log);
        if (command == "convergence") return run_convergence(cfg, log);
        log << "unknown command '" << command << "'\n";
        return kInputError;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kInputError;
    } catch (const json::exception& e) {
        log << "config error: " << e.what() << "\n";
        return kInputError;
    } catch (const AlgebraError& e) {
        log << "config error: " << e.what() << "\n";
        return kInputError;
    } catch (const SystemError& e) {
        log << "config error: " << e.what() << "\n";
        return kInputError;
    } catch (const ShearFlowError& e) {
        log << "config error: " << e.what() << "\n";
        return kInputError;
    } catch (const std::invalid_argument& e) {
        log << "config error: " << e.what() << "\n";
        return kInputError;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}

}  // namespace slp::cli
