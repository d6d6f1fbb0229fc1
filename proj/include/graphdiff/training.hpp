#pragma once

#include "graphdiff/common.hpp"
#include "graphdiff/denoiser.hpp"
#include "graphdiff/diffusion.hpp"
#include "graphdiff/schedule.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace graphdiff {

/// Declarative schedule choice, carried in configs and checkpoints.
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::cosine;
    int steps = 100;
    double offset_s = 0.008;    // cosine only
    double beta_start = 1e-4;   // linear only
    double beta_end = 0.02;     // linear only

    NoiseSchedule build() const {
        if (kind == ScheduleKind::cosine) return cosine_schedule(steps, offset_s);
        return linear_schedule(steps, beta_start, beta_end);
    }
};

enum class LossNorm { l2, l2_squared };

inline const char* to_string(LossNorm n) {
    return n == LossNorm::l2 ? "l2" : "l2_squared";
}

inline LossNorm loss_norm_from_string(const std::string& s) {
    if (s == "l2") return LossNorm::l2;
    if (s == "l2_squared") return LossNorm::l2_squared;
    throw std::invalid_argument("unknown loss norm '" + s + "'");
}

struct LossConfig {
    double lambda = 1.0;          // weight of the detection-reconstruction term
    LossNorm norm = LossNorm::l2; // unsquared Frobenius by default
    Vec joint_weights;            // empty means uniform weights of 1
};

struct LossBreakdown {
    double eps_term = 0.0;
    double recon_term = 0.0;
    double total = 0.0;
};

namespace detail {

inline Vec resolve_weights(const LossConfig& cfg, Eigen::Index j) {
    if (cfg.joint_weights.size() == 0) return Vec::Ones(j);
    if (cfg.joint_weights.size() != j)
        throw std::invalid_argument("loss: joint_weights length mismatch");
    if ((cfg.joint_weights.array() <= 0.0).any())
        throw std::invalid_argument("loss: joint_weights must be positive");
    return cfg.joint_weights;
}

/// Weighted residual norm and, if requested, its gradient with respect
/// to the prediction. For the unsquared norm at zero residual the
/// gradient is defined as zero.
inline double weighted_norm(const Mat& target, const Mat& pred, const Vec& w, LossNorm norm,
                            Mat* grad_pred) {
    Mat r = target - pred;
    Mat wr = w.asDiagonal() * r;
    const double sq = wr.squaredNorm();
    if (norm == LossNorm::l2_squared) {
        if (grad_pred) *grad_pred = -2.0 * (w.array().square().matrix().asDiagonal() * r);
        return sq;
    }
    const double l = std::sqrt(sq);
    if (grad_pred) {
        if (l > 0.0)
            *grad_pred = -(w.array().square().matrix().asDiagonal() * r) / l;
        else
            *grad_pred = Mat::Zero(r.rows(), r.cols());
    }
    return l;
}

} // namespace detail

/// Per-sample loss: weighted norm of the noise residual plus lambda
/// times the weighted norm of the detection reconstruction residual.
inline LossBreakdown diffusion_loss(const Pose3D& eps_pred, const Pose3D& eps_true,
                                    const Detection2D& y_recon, const Detection2D& y_true,
                                    const LossConfig& cfg) {
    if (eps_pred.rows() != eps_true.rows() || y_recon.rows() != y_true.rows() ||
        eps_pred.rows() != y_recon.rows())
        throw std::invalid_argument("loss: joint count mismatch");
    if (cfg.lambda < 0.0) throw std::invalid_argument("loss: lambda must be >= 0");
    const Vec w = detail::resolve_weights(cfg, eps_pred.rows());
    LossBreakdown out;
    out.eps_term = detail::weighted_norm(eps_true, eps_pred, w, cfg.norm, nullptr);
    out.recon_term = detail::weighted_norm(y_true, y_recon, w, cfg.norm, nullptr);
    out.total = out.eps_term + cfg.lambda * out.recon_term;
    return out;
}

/// Same, also returning dtotal/d eps_pred and dtotal/d y_recon.
inline LossBreakdown diffusion_loss_with_grad(const Pose3D& eps_pred, const Pose3D& eps_true,
                                              const Detection2D& y_recon, const Detection2D& y_true,
                                              const LossConfig& cfg, Mat& g_eps, Mat& g_y) {
    if (eps_pred.rows() != eps_true.rows() || y_recon.rows() != y_true.rows() ||
        eps_pred.rows() != y_recon.rows())
        throw std::invalid_argument("loss: joint count mismatch");
    if (cfg.lambda < 0.0) throw std::invalid_argument("loss: lambda must be >= 0");
    const Vec w = detail::resolve_weights(cfg, eps_pred.rows());
    LossBreakdown out;
    out.eps_term = detail::weighted_norm(eps_true, eps_pred, w, cfg.norm, &g_eps);
    out.recon_term = detail::weighted_norm(y_true, y_recon, w, cfg.norm, &g_y);
    out.total = out.eps_term + cfg.lambda * out.recon_term;
    g_y *= cfg.lambda;
    return out;
}

struct TrainingPair {
    Pose3D x0;      // normalized root-relative pose
    Detection2D y;  // normalized detection
};

/// Horizontal flip of a pose/detection pair: negate the x axis and swap
/// left/right joints. Valid on normalized coordinates, which are
/// centered around zero along x.
inline void augment_flip(Pose3D& x0, Detection2D& y, const SkeletonSpec& spec) {
    x0.col(0) = -x0.col(0);
    y.col(0) = -y.col(0);
    for (const auto& [a, b] : spec.flip_pairs) {
        x0.row(a).swap(x0.row(b));
        y.row(a).swap(y.row(b));
    }
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over the tensors of a DenoiserParams, in visitation order.
class Adam {
public:
    Adam() = default;
    Adam(DenoiserParams& params, AdamConfig cfg = {}) : cfg_(cfg) {
        for_each_tensor(params, [&](const std::string&, Mat& m) {
            m_.push_back(Mat::Zero(m.rows(), m.cols()));
            v_.push_back(Mat::Zero(m.rows(), m.cols()));
        });
    }

    int step_count() const { return step_; }

    void step(DenoiserParams& params, const DenoiserParams& grads, double lr) {
        if (lr <= 0.0) throw std::invalid_argument("adam: lr must be > 0");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
        std::vector<const Mat*> gs;
        for_each_tensor(const_cast<DenoiserParams&>(grads),
                        [&](const std::string&, Mat& m) { gs.push_back(&m); });
        std::size_t i = 0;
        for_each_tensor(params, [&](const std::string&, Mat& p) {
            const Mat& g = *gs[i];
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            p.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
            ++i;
        });
    }

private:
    AdamConfig cfg_;
    std::vector<Mat> m_, v_;
    int step_ = 0;
};

struct TrainConfig {
    int epochs = 200;
    int batch_size = 1024;
    double lr0 = 4e-5;
    double lr_shrink = 0.995;
    double flip_probability = 0.5;
    std::uint64_t seed = 0;
    LossConfig loss;
    ScheduleSpec schedule;
    AdamConfig adam;
};

inline void validate(const TrainConfig& c) {
    if (c.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (c.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (c.lr0 <= 0.0) throw std::invalid_argument("train: lr0 must be > 0");
    if (c.lr_shrink <= 0.0 || c.lr_shrink > 1.0)
        throw std::invalid_argument("train: lr_shrink must be in (0, 1]");
    if (c.flip_probability < 0.0 || c.flip_probability > 1.0)
        throw std::invalid_argument("train: flip_probability must be in [0, 1]");
    if (c.loss.lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
    if (c.schedule.steps < 1) throw std::invalid_argument("train: schedule steps must be >= 1");
}

/// Exponential decay, epoch index 0-based: lr_k = lr0 * shrink^k.
inline double lr_for_epoch(const TrainConfig& cfg, int epoch) {
    return cfg.lr0 * std::pow(cfg.lr_shrink, epoch);
}

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    double mean_eps_term = 0.0;
    double mean_recon_term = 0.0;
    int num_batches = 0;
    int num_flips = 0;
};

namespace detail {

constexpr std::uint64_t kStreamShuffle = 0x73687566ULL; // "shuf"
constexpr std::uint64_t kStreamItem = 0x6974656dULL;    // "item"

/// Per-item randomness is keyed by (seed, epoch, draw index) so results
/// do not depend on batch parallelism.
inline Rng item_rng(std::uint64_t seed, int epoch, std::uint64_t index) {
    return Rng::substream(seed, kStreamItem,
                          (static_cast<std::uint64_t>(epoch) << 40) ^ index);
}

} // namespace detail

/// One optimizer step over one mini-batch. Returns the batch-mean loss.
/// Exposed separately so callers can drive custom loops.
inline LossBreakdown train_step(DenoiserModel& model, Adam& adam,
                                const std::vector<TrainingPair>& batch,
                                const std::vector<Rng>& item_rngs, const NoiseSchedule& schedule,
                                const TrainConfig& cfg, double lr, int* flip_count = nullptr) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    if (item_rngs.size() != batch.size())
        throw std::invalid_argument("train_step: rng count mismatch");
    const Eigen::Index j = model.config().skeleton.num_joints;
    const int b_n = static_cast<int>(batch.size());

    std::vector<BatchItem> items(batch.size());
    std::vector<Pose3D> eps_true(batch.size());
    std::vector<Detection2D> y_true(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Rng rng = item_rngs[b];
        Pose3D x0 = batch[b].x0;
        Detection2D y = batch[b].y;
        if (rng.uniform() < cfg.flip_probability) {
            augment_flip(x0, y, model.config().skeleton);
            if (flip_count) ++*flip_count;
        }
        const int t = rng.uniform_int(1, schedule.total_steps);
        Pose3D noise = rng.normal_matrix(j, 3);
        items[b].x_t = forward_sample(x0, t, schedule, noise);
        items[b].t = t;
        items[b].y = y;
        eps_true[b] = std::move(noise);
        y_true[b] = std::move(y);
    }

    ForwardTrace trace;
    Mat eps_raw, y_raw;
    model.forward_batch_raw(items, eps_raw, y_raw, &trace);

    Mat g_eps_raw = Mat::Zero(3, b_n * j);
    Mat g_y_raw = Mat::Zero(2, b_n * j);
    LossBreakdown mean;
    for (int b = 0; b < b_n; ++b) {
        Pose3D eps_pred = eps_raw.middleCols(b * j, j).transpose();
        Detection2D y_recon = y_raw.middleCols(b * j, j).transpose();
        Mat g_eps, g_y;
        LossBreakdown l = diffusion_loss_with_grad(eps_pred, eps_true[static_cast<std::size_t>(b)],
                                                   y_recon, y_true[static_cast<std::size_t>(b)],
                                                   cfg.loss, g_eps, g_y);
        mean.eps_term += l.eps_term;
        mean.recon_term += l.recon_term;
        mean.total += l.total;
        g_eps_raw.middleCols(b * j, j) = g_eps.transpose() / b_n;
        g_y_raw.middleCols(b * j, j) = g_y.transpose() / b_n;
    }
    mean.eps_term /= b_n;
    mean.recon_term /= b_n;
    mean.total /= b_n;

    DenoiserParams grads = model.zero_grads();
    model.backward(trace, g_eps_raw, g_y_raw, grads);
    adam.step(model.params(), grads, lr);
    return mean;
}

/// Full training loop. The callback, when set, runs after every epoch;
/// returning false stops training early.
inline std::vector<EpochMetrics> train(DenoiserModel& model, const std::vector<TrainingPair>& data,
                                       const TrainConfig& cfg,
                                       const std::function<bool(const EpochMetrics&)>& on_epoch = {}) {
    validate(cfg);
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    const NoiseSchedule schedule = cfg.schedule.build();
    Adam adam(model.params(), cfg.adam);

    std::vector<EpochMetrics> history;
    history.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = Rng::substream(cfg.seed, detail::kStreamShuffle,
                                         static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr_for_epoch(cfg, epoch);
        double sum_loss = 0.0, sum_eps = 0.0, sum_recon = 0.0;
        std::uint64_t draw_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<TrainingPair> batch;
            std::vector<Rng> rngs;
            batch.reserve(end - start);
            rngs.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(data[order[k]]);
                rngs.push_back(detail::item_rng(cfg.seed, epoch, draw_index++));
            }
            LossBreakdown l = train_step(model, adam, batch, rngs, schedule, cfg, m.lr, &m.num_flips);
            const double n = static_cast<double>(batch.size());
            sum_loss += l.total * n;
            sum_eps += l.eps_term * n;
            sum_recon += l.recon_term * n;
            ++m.num_batches;
        }
        m.mean_loss = sum_loss / static_cast<double>(data.size());
        m.mean_eps_term = sum_eps / static_cast<double>(data.size());
        m.mean_recon_term = sum_recon / static_cast<double>(data.size());
        history.push_back(m);
        if (on_epoch && !on_epoch(m)) break;
    }
    return history;
}

} // namespace graphdiff
