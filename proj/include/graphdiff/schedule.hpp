#pragma once

#include "graphdiff/common.hpp"

#include <ostream>
#include <vector>

namespace graphdiff {

enum class ScheduleKind { linear, cosine };

inline const char* to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "cosine";
}

/// Precomputed diffusion quantities for T steps. Arrays are indexed by
/// t in [1, T]; alpha_bar_at(0) is the clean-data reference point 1.
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::cosine;
    int total_steps = 0;
    double offset_s = 0.0;   // cosine only
    double beta_start = 0.0; // linear only
    double beta_end = 0.0;   // linear only

    std::vector<double> beta;               // beta_t
    std::vector<double> alpha;              // 1 - beta_t
    std::vector<double> alpha_bar;          // prod_{s<=t} alpha_s
    std::vector<double> alpha_bar_prev;     // alpha_bar_{t-1}, = 1 at t = 1
    std::vector<double> posterior_variance; // beta~_t, = 0 at t = 1

    double beta_at(int t) const { return beta[check(t)]; }
    double alpha_at(int t) const { return alpha[check(t)]; }
    double alpha_bar_at(int t) const {
        if (t == 0) return 1.0;
        return alpha_bar[check(t)];
    }
    double alpha_bar_prev_at(int t) const { return alpha_bar_prev[check(t)]; }
    double posterior_variance_at(int t) const { return posterior_variance[check(t)]; }

private:
    std::size_t check(int t) const {
        if (t < 1 || t > total_steps) throw std::out_of_range("schedule: t out of range");
        return static_cast<std::size_t>(t - 1);
    }
};

namespace detail {

inline NoiseSchedule finalize_from_betas(NoiseSchedule s) {
    const int T = s.total_steps;
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.alpha_bar_prev.resize(T);
    s.posterior_variance.resize(T);
    double cum = 1.0;
    for (int i = 0; i < T; ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        s.alpha_bar_prev[i] = cum;
        cum *= s.alpha[i];
        s.alpha_bar[i] = cum;
        s.posterior_variance[i] = (1.0 - s.alpha_bar_prev[i]) / (1.0 - s.alpha_bar[i]) * s.beta[i];
    }
    return s;
}

} // namespace detail

inline NoiseSchedule linear_schedule(int total_steps, double beta_start = 1e-4,
                                     double beta_end = 0.02) {
    if (total_steps < 1) throw std::invalid_argument("linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::invalid_argument("linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.kind = ScheduleKind::linear;
    s.total_steps = total_steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(total_steps);
    for (int i = 0; i < total_steps; ++i) {
        const double frac = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
        s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    }
    return detail::finalize_from_betas(std::move(s));
}

/// alpha_bar_t = f(t)/f(0), f(t) = cos(((t/T + s)/(1 + s)) * pi/2)^2.
/// Betas are recovered as 1 - f(t)/f(t-1) and clipped at 0.999 so
/// alpha_bar never collapses to exactly zero; the stored alpha_bar is
/// the cumulative product of the clipped alphas.
inline NoiseSchedule cosine_schedule(int total_steps, double offset_s = 0.008,
                                     double max_beta = 0.999) {
    if (total_steps < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
    if (!(offset_s > 0.0)) throw std::invalid_argument("cosine_schedule: s must be positive");
    NoiseSchedule s;
    s.kind = ScheduleKind::cosine;
    s.total_steps = total_steps;
    s.offset_s = offset_s;
    auto f = [&](double t) {
        const double x = (t / total_steps + offset_s) / (1.0 + offset_s) * (kPi / 2.0);
        const double c = std::cos(x);
        return c * c;
    };
    s.beta.resize(total_steps);
    for (int t = 1; t <= total_steps; ++t)
        s.beta[t - 1] = std::min(1.0 - f(t) / f(t - 1.0), max_beta);
    return detail::finalize_from_betas(std::move(s));
}

/// Coefficients (c0, ct) of the posterior mean
/// mu~_t = c0 * x_0 + ct * x_t.
inline std::pair<double, double> posterior_mean_coeffs(const NoiseSchedule& s, int t) {
    const double beta = s.beta_at(t);
    const double abar = s.alpha_bar_at(t);
    const double abar_prev = s.alpha_bar_prev_at(t);
    const double coef_x0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
    const double coef_xt = std::sqrt(s.alpha_at(t)) * (1.0 - abar_prev) / (1.0 - abar);
    return {coef_x0, coef_xt};
}

/// CSV dump: one reference row at t = 0 (alpha_bar = 1), then one row
/// per diffusion step.
inline void write_schedule_csv(const NoiseSchedule& s, std::ostream& out) {
    out << "t,beta,alpha_bar,posterior_variance\n";
    out.precision(17);
    out << "0,0," << 1.0 << ",0\n";
    for (int t = 1; t <= s.total_steps; ++t) {
        out << t << ',' << s.beta_at(t) << ',' << s.alpha_bar_at(t) << ','
            << s.posterior_variance_at(t) << '\n';
    }
}

} // namespace graphdiff
