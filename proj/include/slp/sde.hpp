#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slp/systems.hpp"

namespace slp {

struct StepError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Scheme { Heun, ImplicitMidpoint };

inline std::string to_string(Scheme s) {
    return s == Scheme::Heun ? "heun" : "implicit_midpoint";
}

inline Scheme scheme_from_string(const std::string& s) {
    if (s == "heun") return Scheme::Heun;
    if (s == "implicit_midpoint") return Scheme::ImplicitMidpoint;
    throw std::invalid_argument("unknown scheme '" + s + "'");
}

struct IntegratorConfig {
    Scheme scheme = Scheme::ImplicitMidpoint;
    double dt = 1e-3;
    double fixed_point_tol = 1e-12;
    int fixed_point_max_iters = 50;

    void validate() const {
        if (dt <= 0) throw std::invalid_argument("dt must be positive");
        if (fixed_point_tol <= 0) throw std::invalid_argument("tolerance must be positive");
    }
};

/// Anything with a deterministic field, a family of noise fields and a
/// dimension can be integrated: the nonlinear systems above and the
/// constant-coefficient linearisations both model this.
template <class S>
concept SdeModel = requires(const S& s, const Eigen::VectorXd& x, int k) {
    { s.dim() } -> std::convertible_to<int>;
    { s.n_noise() } -> std::convertible_to<int>;
    { s.drift_at(x) } -> std::convertible_to<Eigen::VectorXd>;
    { s.noise_at(k, x) } -> std::convertible_to<Eigen::VectorXd>;
};

/// Adapter presenting a StochasticLiePoissonSystem to the integrator.
struct LiePoissonSde {
    const StochasticLiePoissonSystem* sys;

    explicit LiePoissonSde(const StochasticLiePoissonSystem& s) : sys(&s) {}
    int dim() const { return sys->dim(); }
    int n_noise() const { return static_cast<int>(sys->noise_fields.size()); }
    Eigen::VectorXd drift_at(const Eigen::VectorXd& x) const { return drift(*sys, x); }
    Eigen::VectorXd noise_at(int k, const Eigen::VectorXd& x) const {
        return noise_field(*sys, k, x);
    }
};

/// Constant-coefficient linear Stratonovich SDE dx = L x dt + sum S_k x o dW_k.
struct LinearSde {
    Eigen::MatrixXd drift_matrix;
    std::vector<Eigen::MatrixXd> noise_matrices;

    int dim() const { return static_cast<int>(drift_matrix.rows()); }
    int n_noise() const { return static_cast<int>(noise_matrices.size()); }
    Eigen::VectorXd drift_at(const Eigen::VectorXd& x) const { return drift_matrix * x; }
    Eigen::VectorXd noise_at(int k, const Eigen::VectorXd& x) const {
        return noise_matrices[k] * x;
    }
};

namespace detail {

template <SdeModel S>
Eigen::VectorXd combined_increment(const S& sys, const Eigen::VectorXd& x, double dt,
                                   const Eigen::VectorXd& dw) {
    Eigen::VectorXd f = sys.drift_at(x) * dt;
    for (int k = 0; k < sys.n_noise(); ++k) f += sys.noise_at(k, x) * dw[k];
    return f;
}

}  // namespace detail

/// One Stratonovich step.  Heun is an explicit predictor-corrector on the
/// combined field; the implicit midpoint rule solves
///   x1 = x0 + F((x0 + x1)/2)
/// by fixed-point iteration and therefore conserves every quadratic form
/// annihilated by all the fields, which is what keeps the motion on the
/// level sets of the conserved forms.
template <SdeModel S>
Eigen::VectorXd step(const S& sys, const Eigen::VectorXd& x, double dt,
                     const Eigen::VectorXd& dw, const IntegratorConfig& cfg) {
    if (dw.size() != sys.n_noise())
        throw StepError("need one Brownian increment per noise field");
    if (!x.allFinite()) throw StepError("non-finite state");

    if (cfg.scheme == Scheme::Heun) {
        Eigen::VectorXd f0 = detail::combined_increment(sys, x, dt, dw);
        Eigen::VectorXd f1 = detail::combined_increment(sys, x + f0, dt, dw);
        return x + 0.5 * (f0 + f1);
    }

    const double scale = std::max(1.0, x.norm());
    Eigen::VectorXd x1 = x + detail::combined_increment(sys, x, dt, dw);
    int polish = 2;
    for (int it = 0; it < cfg.fixed_point_max_iters; ++it) {
        Eigen::VectorXd mid = 0.5 * (x + x1);
        Eigen::VectorXd next = x + detail::combined_increment(sys, mid, dt, dw);
        double delta = (next - x1).norm();
        x1 = next;
        if (!x1.allFinite()) throw StepError("fixed-point iteration diverged");
        if (delta < cfg.fixed_point_tol * scale && polish-- <= 0) return x1;
    }
    if (polish <= 0) return x1;
    throw StepError("implicit midpoint fixed point did not converge in " +
                    std::to_string(cfg.fixed_point_max_iters) +
                    " iterations; reduce dt");
}

// --- reproducible per-path random streams ---------------------------------

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Stream seed for one path, independent of scheduling order.
inline std::uint64_t path_seed(std::uint64_t master_seed, std::uint64_t path_index) {
    return splitmix64(splitmix64(master_seed) ^ splitmix64(path_index + 1));
}

struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;
};

/// Integrate a single path on a uniform grid.  Identical inputs give
/// bitwise identical output.
template <SdeModel S>
Trajectory simulate_path(const S& sys, const Eigen::VectorXd& x0,
                         const IntegratorConfig& cfg, double t_final,
                         std::uint64_t seed, int save_every = 1) {
    cfg.validate();
    if (t_final <= 0) throw std::invalid_argument("t_final must be positive");
    const int n_steps = static_cast<int>(std::llround(t_final / cfg.dt));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(cfg.dt));

    Trajectory traj;
    traj.times.push_back(0.0);
    traj.states.push_back(x0);
    Eigen::VectorXd x = x0;
    Eigen::VectorXd dw(sys.n_noise());
    for (int i = 0; i < n_steps; ++i) {
        for (int k = 0; k < sys.n_noise(); ++k) dw[k] = normal(rng);
        try {
            x = step(sys, x, cfg.dt, dw, cfg);
        } catch (const StepError& e) {
            throw StepError(std::string(e.what()) + " at t = " +
                            std::to_string((i + 1) * cfg.dt));
        }
        if ((i + 1) % save_every == 0 || i + 1 == n_steps) {
            traj.times.push_back((i + 1) * cfg.dt);
            traj.states.push_back(x);
        }
    }
    return traj;
}

// --- ensembles ------------------------------------------------------------

/// Quadratic form measuring the deviation from a reference point; used to
/// track norm statistics and threshold exits along the ensemble.
struct DeviationForm {
    Eigen::VectorXd reference;    // mu_e
    Eigen::MatrixXd weight;       // symmetric, sign-definite
    int sign = +1;
    double exit_threshold = std::numeric_limits<double>::infinity();

    double value(const Eigen::VectorXd& x) const {
        Eigen::VectorXd d = x - reference;
        return sign * d.dot(weight * d);
    }
};

struct HistogramSpec {
    int observable = 0;   // index into EnsembleSpec::observables
    double lo = -2.0;
    double hi = 2.0;
    int bins = 200;       // plus one underflow and one overflow bin
};

struct EnsembleSpec {
    int n_paths = 1;
    double t_final = 1.0;
    int save_every = 1;
    std::uint64_t master_seed = 0;
    std::vector<int> observables;           // state component indices
    std::optional<DeviationForm> deviation;
    std::optional<HistogramSpec> histogram;

    void validate(int dim) const {
        if (n_paths < 1) throw std::invalid_argument("n_paths must be at least 1");
        if (t_final <= 0) throw std::invalid_argument("t_final must be positive");
        if (save_every < 1) throw std::invalid_argument("save_every must be at least 1");
        for (int c : observables)
            if (c < 0 || c >= dim) throw std::invalid_argument("observable index out of range");
        if (histogram && (histogram->bins < 1 || !(histogram->hi > histogram->lo)))
            throw std::invalid_argument("invalid histogram specification");
        if (histogram && observables.empty())
            throw std::invalid_argument("histogram needs an observable");
    }
};

struct EnsembleResult {
    std::vector<double> times;
    // row = saved time, col = observable
    Eigen::MatrixXd mean_obs, var_obs;
    Eigen::VectorXd mean_dev, var_dev, stderr_dev, exit_freq;
    std::vector<std::vector<std::int64_t>> histogram;  // per time, bins + 2
    int n_paths = 0;
    int n_failed = 0;
    std::vector<int> failed_paths;
    std::uint64_t master_seed = 0;

    void write_csv(const std::string& path) const;
    json metadata() const;
};

namespace detail {

struct ChunkStats {
    // per saved time: running sums in path-index order
    Eigen::MatrixXd sum_obs, sumsq_obs;
    Eigen::VectorXd sum_dev, sumsq_dev;
    std::vector<std::int64_t> exits;
};

constexpr int kChunkPaths = 64;

}  // namespace detail

/// Run n_paths independent paths and reduce streamed statistics.
///
/// Paths are distributed over hardware threads in fixed chunks; floating
/// point partial sums are kept per chunk and merged in chunk order, so the
/// result is bitwise identical for any worker count.  A path that fails to
/// integrate is recorded and excluded from the statistics.
template <SdeModel S>
EnsembleResult simulate_ensemble(const S& sys, const Eigen::VectorXd& x0,
                                 const EnsembleSpec& spec, const IntegratorConfig& cfg,
                                 int n_threads = 0) {
    cfg.validate();
    spec.validate(sys.dim());

    const int n_steps = static_cast<int>(std::llround(spec.t_final / cfg.dt));
    std::vector<int> save_steps;  // indices (in steps) of saved times, incl. 0
    save_steps.push_back(0);
    for (int i = 1; i <= n_steps; ++i)
        if (i % spec.save_every == 0 || i == n_steps) save_steps.push_back(i);
    const int n_times = static_cast<int>(save_steps.size());
    const int n_obs = static_cast<int>(spec.observables.size());

    const int n_chunks = (spec.n_paths + detail::kChunkPaths - 1) / detail::kChunkPaths;
    std::vector<detail::ChunkStats> chunks(n_chunks);
    std::vector<std::vector<int>> chunk_failed(n_chunks);

    const bool want_hist = spec.histogram.has_value();
    const int n_bins = want_hist ? spec.histogram->bins + 2 : 0;
    std::vector<std::vector<std::int64_t>> hist(
        want_hist ? n_times : 0, std::vector<std::int64_t>(n_bins, 0));
    std::mutex hist_mutex;

    std::atomic<int> next_chunk{0};
    if (n_threads <= 0)
        n_threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min(n_threads, n_chunks);

    auto worker = [&]() {
        std::vector<std::vector<std::int64_t>> local_hist(
            want_hist ? n_times : 0, std::vector<std::int64_t>(n_bins, 0));
        for (;;) {
            const int chunk = next_chunk.fetch_add(1);
            if (chunk >= n_chunks) break;
            auto& cs = chunks[chunk];
            cs.sum_obs = Eigen::MatrixXd::Zero(n_times, n_obs);
            cs.sumsq_obs = Eigen::MatrixXd::Zero(n_times, n_obs);
            cs.sum_dev = Eigen::VectorXd::Zero(n_times);
            cs.sumsq_dev = Eigen::VectorXd::Zero(n_times);
            cs.exits.assign(n_times, 0);

            const int first = chunk * detail::kChunkPaths;
            const int last = std::min(first + detail::kChunkPaths, spec.n_paths);
            Eigen::VectorXd dw(sys.n_noise());
            // Per-path buffers, committed only if the whole path succeeds,
            // so a failed path contributes nothing at any time.
            Eigen::MatrixXd pobs(n_times, n_obs);
            Eigen::VectorXd pdev(n_times);
            std::vector<int> pbin(want_hist ? n_times : 0);
            for (int p = first; p < last; ++p) {
                std::mt19937_64 rng(path_seed(spec.master_seed, p));
                std::normal_distribution<double> normal(0.0, std::sqrt(cfg.dt));
                Eigen::VectorXd x = x0;
                int save_slot = 0;
                bool failed = false;
                auto record = [&](int slot) {
                    for (int c = 0; c < n_obs; ++c) pobs(slot, c) = x[spec.observables[c]];
                    if (spec.deviation) pdev[slot] = spec.deviation->value(x);
                    if (want_hist) {
                        const auto& h = *spec.histogram;
                        double v = x[spec.observables[h.observable]];
                        int b;
                        if (v < h.lo) b = 0;
                        else if (v >= h.hi) b = h.bins + 1;
                        else b = 1 + static_cast<int>((v - h.lo) / (h.hi - h.lo) * h.bins);
                        pbin[slot] = b;
                    }
                };
                record(save_slot++);
                for (int i = 1; i <= n_steps && !failed; ++i) {
                    for (int k = 0; k < sys.n_noise(); ++k) dw[k] = normal(rng);
                    try {
                        x = step(sys, x, cfg.dt, dw, cfg);
                    } catch (const StepError&) {
                        failed = true;
                        chunk_failed[chunk].push_back(p);
                        break;
                    }
                    if (save_slot < n_times && i == save_steps[save_slot])
                        record(save_slot++);
                }
                if (failed) continue;
                cs.sum_obs += pobs;
                cs.sumsq_obs += pobs.cwiseProduct(pobs);
                if (spec.deviation) {
                    cs.sum_dev += pdev;
                    cs.sumsq_dev += pdev.cwiseProduct(pdev);
                    for (int t = 0; t < n_times; ++t)
                        if (pdev[t] > spec.deviation->exit_threshold) ++cs.exits[t];
                }
                if (want_hist)
                    for (int t = 0; t < n_times; ++t) ++local_hist[t][pbin[t]];
            }
        }
        if (want_hist) {
            std::lock_guard<std::mutex> lock(hist_mutex);
            for (int t = 0; t < n_times; ++t)
                for (int b = 0; b < n_bins; ++b) hist[t][b] += local_hist[t][b];
        }
    };

    std::vector<std::thread> pool;
    for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    EnsembleResult res;
    res.master_seed = spec.master_seed;
    res.n_paths = spec.n_paths;
    for (int i : save_steps) res.times.push_back(i * cfg.dt);
    res.mean_obs = Eigen::MatrixXd::Zero(n_times, n_obs);
    res.var_obs = Eigen::MatrixXd::Zero(n_times, n_obs);
    res.mean_dev = Eigen::VectorXd::Zero(n_times);
    res.var_dev = Eigen::VectorXd::Zero(n_times);
    res.stderr_dev = Eigen::VectorXd::Zero(n_times);
    res.exit_freq = Eigen::VectorXd::Zero(n_times);

    Eigen::MatrixXd sum_obs = Eigen::MatrixXd::Zero(n_times, n_obs);
    Eigen::MatrixXd sumsq_obs = Eigen::MatrixXd::Zero(n_times, n_obs);
    Eigen::VectorXd sum_dev = Eigen::VectorXd::Zero(n_times);
    Eigen::VectorXd sumsq_dev = Eigen::VectorXd::Zero(n_times);
    std::vector<std::int64_t> exits(n_times, 0);
    for (int chunkIdx = 0; chunkIdx < n_chunks; ++chunkIdx) {
        const auto& cs = chunks[chunkIdx];
        sum_obs += cs.sum_obs;
        sumsq_obs += cs.sumsq_obs;
        sum_dev += cs.sum_dev;
        sumsq_dev += cs.sumsq_dev;
        for (int t = 0; t < n_times; ++t) exits[t] += cs.exits[t];
        for (int p : chunk_failed[chunkIdx]) res.failed_paths.push_back(p);
    }
    std::sort(res.failed_paths.begin(), res.failed_paths.end());
    res.n_failed = static_cast<int>(res.failed_paths.size());
    const double n_ok = spec.n_paths - res.n_failed;
    if (n_ok < 1) throw SystemError("every path in the ensemble failed");
    for (int t = 0; t < n_times; ++t) {
        for (int c = 0; c < n_obs; ++c) {
            double m = sum_obs(t, c) / n_ok;
            res.mean_obs(t, c) = m;
            res.var_obs(t, c) = std::max(0.0, sumsq_obs(t, c) / n_ok - m * m);
        }
        double m = sum_dev[t] / n_ok;
        res.mean_dev[t] = m;
        res.var_dev[t] = std::max(0.0, sumsq_dev[t] / n_ok - m * m);
        res.stderr_dev[t] = std::sqrt(res.var_dev[t] / n_ok);
        res.exit_freq[t] = exits[t] / n_ok;
    }
    if (want_hist) res.histogram = std::move(hist);
    return res;
}

inline void EnsembleResult::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "t";
    for (int c = 0; c < mean_obs.cols(); ++c) out << ",mean_obs" << c;
    for (int c = 0; c < var_obs.cols(); ++c) out << ",var_obs" << c;
    out << ",mean_HCnorm,stderr_HCnorm,exit_freq";
    const int n_bins = histogram.empty() ? 0 : static_cast<int>(histogram[0].size());
    for (int b = 0; b < n_bins; ++b) out << ",hist_" << b;
    out << "\n";
    for (size_t t = 0; t < times.size(); ++t) {
        out << times[t];
        for (int c = 0; c < mean_obs.cols(); ++c) out << "," << mean_obs(t, c);
        for (int c = 0; c < var_obs.cols(); ++c) out << "," << var_obs(t, c);
        out << "," << mean_dev[t] << "," << stderr_dev[t] << "," << exit_freq[t];
        for (int b = 0; b < n_bins; ++b) out << "," << histogram[t][b];
        out << "\n";
    }
}

inline json EnsembleResult::metadata() const {
    return json{{"n_paths", n_paths},
                {"n_failed", n_failed},
                {"failed_paths", failed_paths},
                {"master_seed", master_seed}};
}

// --- strong convergence ---------------------------------------------------

struct ConvergenceReport {
    bool degenerate = false;       // all errors at machine zero
    double order = 0.0;
    std::vector<double> dt_levels;
    std::vector<double> errors;    // mean strong error per level (vs finest)
};

/// Empirical strong order: the same Brownian paths are integrated at every
/// dt level (coarse increments are sums of the finest increments) and the
/// terminal error against the finest level is fitted in log-log.
template <SdeModel S>
ConvergenceReport strong_convergence_order(const S& sys, const Eigen::VectorXd& x0,
                                           std::vector<double> dt_levels, int n_paths,
                                           double t_final, std::uint64_t seed,
                                           const IntegratorConfig& base_cfg) {
    if (dt_levels.size() < 3)
        throw std::invalid_argument("need at least three dt levels");
    std::sort(dt_levels.begin(), dt_levels.end(), std::greater<double>());
    const double dt_fine = dt_levels.back();
    const int fine_steps = static_cast<int>(std::llround(t_final / dt_fine));
    std::vector<int> ratios;
    for (double dt : dt_levels) {
        double r = dt / dt_fine;
        if (std::abs(r - std::llround(r)) > 1e-9)
            throw std::invalid_argument("dt levels must be integer multiples of the finest");
        ratios.push_back(static_cast<int>(std::llround(r)));
        if (fine_steps % ratios.back() != 0)
            throw std::invalid_argument("t_final must be divisible by every dt level");
    }

    const int n_noise = sys.n_noise();
    const int n_levels = static_cast<int>(dt_levels.size());
    std::vector<double> err_sum(n_levels, 0.0);

    for (int p = 0; p < n_paths; ++p) {
        std::mt19937_64 rng(path_seed(seed, p));
        std::normal_distribution<double> normal(0.0, std::sqrt(dt_fine));
        Eigen::MatrixXd dw_fine(n_noise, fine_steps);
        for (int i = 0; i < fine_steps; ++i)
            for (int k = 0; k < n_noise; ++k) dw_fine(k, i) = normal(rng);

        std::vector<Eigen::VectorXd> terminal(n_levels);
        for (int lev = 0; lev < n_levels; ++lev) {
            IntegratorConfig cfg = base_cfg;
            cfg.dt = dt_levels[lev];
            const int r = ratios[lev];
            Eigen::VectorXd x = x0;
            for (int i = 0; i < fine_steps; i += r) {
                Eigen::VectorXd dw = dw_fine.middleCols(i, r).rowwise().sum();
                x = step(sys, x, cfg.dt, dw, cfg);
            }
            terminal[lev] = x;
        }
        for (int lev = 0; lev < n_levels - 1; ++lev)
            err_sum[lev] += (terminal[lev] - terminal.back()).norm();
    }

    ConvergenceReport rep;
    rep.dt_levels = dt_levels;
    for (int lev = 0; lev < n_levels - 1; ++lev) rep.errors.push_back(err_sum[lev] / n_paths);
    rep.errors.push_back(0.0);  // finest vs itself

    double max_err = 0;
    for (int lev = 0; lev < n_levels - 1; ++lev) max_err = std::max(max_err, rep.errors[lev]);
    if (max_err < 1e-14) {
        rep.degenerate = true;
        return rep;
    }

    // least squares slope of log(err) vs log(dt) over the coarse levels
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int lev = 0; lev < n_levels - 1; ++lev) {
        if (rep.errors[lev] <= 0) continue;
        double lx = std::log(dt_levels[lev]), ly = std::log(rep.errors[lev]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly; ++n;
    }
    const double denom = n * sxx - sx * sx;
    if (n < 2 || std::abs(denom) < 1e-14)
        throw std::runtime_error("degenerate convergence fit");
    rep.order = (n * sxy - sx * sy) / denom;
    return rep;
}

}  // namespace slp
