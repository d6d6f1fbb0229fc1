#pragma once

#include "graphdiff/common.hpp"
#include "graphdiff/schedule.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace graphdiff {

enum class SamplerMode { ddpm, ddim };

inline const char* to_string(SamplerMode m) { return m == SamplerMode::ddpm ? "ddpm" : "ddim"; }

struct SamplerConfig {
    SamplerMode mode = SamplerMode::ddpm;
    int num_hypotheses = 10;
    int ddim_steps = 100;
    double ddim_eta = 0.0;
    std::uint64_t seed = 0;
    /// Bound on the estimated clean pose inside reverse steps, in
    /// normalized units. Stabilizes early steps; set <= 0 to disable.
    double x0_clip = 3.0;
};

inline void validate(const SamplerConfig& c, int total_steps) {
    if (c.num_hypotheses < 1) throw std::invalid_argument("sampler: num_hypotheses must be >= 1");
    if (c.mode == SamplerMode::ddim) {
        if (c.ddim_steps < 1 || c.ddim_steps > total_steps)
            throw std::invalid_argument("sampler: ddim_steps must be in [1, T]");
        if (c.ddim_eta < 0.0 || c.ddim_eta > 1.0)
            throw std::invalid_argument("sampler: ddim_eta must be in [0, 1]");
    }
}

/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) noise. The caller supplies
/// the noise draw, which keeps corruption deterministic and testable.
inline Pose3D forward_sample(const Pose3D& x0, int t, const NoiseSchedule& s,
                             const Pose3D& noise) {
    if (noise.rows() != x0.rows()) throw std::invalid_argument("forward_sample: shape mismatch");
    const double abar = s.alpha_bar_at(t); // throws on t out of [1, T]
    return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * noise;
}

namespace detail {

inline Pose3D predict_x0(const Pose3D& x_t, int t, const Pose3D& eps_pred,
                         const NoiseSchedule& s, double x0_clip) {
    const double abar = s.alpha_bar_at(t);
    Pose3D x0 = (x_t - std::sqrt(1.0 - abar) * eps_pred) / std::sqrt(abar);
    if (x0_clip > 0.0) x0 = x0.cwiseMax(-x0_clip).cwiseMin(x0_clip);
    return x0;
}

} // namespace detail

/// One ancestral step x_t -> x_{t-1}: reconstruct x^_0 from the noise
/// estimate, take the posterior mean, add sqrt(beta~_t) noise. The
/// first step is deterministic (beta~_1 = 0).
inline Pose3D ddpm_reverse_step(const Pose3D& x_t, int t, const Pose3D& eps_pred,
                                const NoiseSchedule& s, const Pose3D& noise,
                                double x0_clip = 3.0) {
    const Pose3D x0 = detail::predict_x0(x_t, t, eps_pred, s, x0_clip);
    const auto [coef_x0, coef_xt] = posterior_mean_coeffs(s, t);
    Pose3D mean = coef_x0 * x0 + coef_xt * x_t;
    if (t == 1) return mean;
    return mean + std::sqrt(s.posterior_variance_at(t)) * noise;
}

/// Non-Markovian step x_t -> x_{t_next} for any t_next < t. eta = 0 is
/// fully deterministic; eta = 1 matches the DDPM posterior variance on
/// consecutive steps.
inline Pose3D ddim_step(const Pose3D& x_t, int t, int t_next, const Pose3D& eps_pred,
                        const NoiseSchedule& s, double eta, const Pose3D& noise,
                        double x0_clip = 3.0) {
    if (t_next >= t) throw std::invalid_argument("ddim_step: t_next must be < t");
    if (t_next < 0) throw std::invalid_argument("ddim_step: t_next must be >= 0");
    const double abar = s.alpha_bar_at(t);
    const double abar_next = s.alpha_bar_at(t_next);
    const Pose3D x0 = detail::predict_x0(x_t, t, eps_pred, s, x0_clip);

    const double sigma = eta * std::sqrt((1.0 - abar_next) / (1.0 - abar)) *
                         std::sqrt(1.0 - abar / abar_next);
    const double dir_coef = std::sqrt(std::max(1.0 - abar_next - sigma * sigma, 0.0));
    Pose3D out = std::sqrt(abar_next) * x0 + dir_coef * eps_pred;
    if (sigma > 0.0) out += sigma * noise;
    return out;
}

/// Uniform-stride DDIM timestep subsequence of [0, T], descending and
/// including both endpoints.
inline std::vector<int> ddim_timesteps(int total_steps, int num_steps) {
    if (num_steps < 1 || num_steps > total_steps)
        throw std::invalid_argument("ddim_timesteps: num_steps must be in [1, T]");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(num_steps) + 1);
    for (int i = num_steps; i >= 0; --i) {
        const int t = static_cast<int>(std::llround(static_cast<double>(i) * total_steps / num_steps));
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;
}

/// Runs the configured reverse process from pure Gaussian noise down to
/// a clean pose, conditioning the denoiser on the 2D detection at every
/// step. `net(x_t, t, y)` must return the J x 3 noise estimate.
template <typename Net>
Pose3D sample(const Net& net, const Detection2D& y, const NoiseSchedule& s,
              const SamplerConfig& cfg, Rng rng) {
    validate(cfg, s.total_steps);
    const Eigen::Index J = y.rows();
    Pose3D x = rng.normal_matrix(J, 3);
    if (cfg.mode == SamplerMode::ddpm) {
        for (int t = s.total_steps; t >= 1; --t) {
            const Pose3D eps = net(x, t, y);
            Pose3D noise = Pose3D::Zero(J, 3);
            if (t > 1) noise = rng.normal_matrix(J, 3);
            x = ddpm_reverse_step(x, t, eps, s, noise, cfg.x0_clip);
        }
    } else {
        const auto ts = ddim_timesteps(s.total_steps, cfg.ddim_steps);
        for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
            const int t = ts[i];
            const int t_next = ts[i + 1];
            const Pose3D eps = net(x, t, y);
            Pose3D noise = Pose3D::Zero(J, 3);
            if (cfg.ddim_eta > 0.0 && t_next > 0) noise = rng.normal_matrix(J, 3);
            x = ddim_step(x, t, t_next, eps, s, cfg.ddim_eta, noise, cfg.x0_clip);
        }
    }
    return x;
}

struct HypothesisSet {
    std::vector<Pose3D> hypotheses;
    Pose3D mean;
};

/// Draws N independent hypotheses plus their per-joint mean. Hypothesis
/// i uses the stream derived from (cfg.seed, item_stream, i), so the
/// set is reproducible and hypotheses may be drawn concurrently.
template <typename Net>
HypothesisSet sample_hypotheses(const Net& net, const Detection2D& y, const NoiseSchedule& s,
                                const SamplerConfig& cfg, std::uint64_t item_stream = 0) {
    validate(cfg, s.total_steps);
    HypothesisSet out;
    out.hypotheses.reserve(static_cast<std::size_t>(cfg.num_hypotheses));
    out.mean = Pose3D::Zero(y.rows(), 3);
    for (int i = 0; i < cfg.num_hypotheses; ++i) {
        Rng rng = Rng::substream(cfg.seed, item_stream, static_cast<std::uint64_t>(i));
        out.hypotheses.push_back(sample(net, y, s, cfg, rng));
        out.mean += out.hypotheses.back();
    }
    out.mean /= static_cast<double>(cfg.num_hypotheses);
    return out;
}

} // namespace graphdiff
