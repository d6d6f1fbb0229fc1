#pragma once

#include "graphdiff/common.hpp"
#include "graphdiff/diffusion.hpp"

#include <Eigen/SVD>

#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace graphdiff {

inline Pose3D root_relative(const Pose3D& pose, int root_index) {
    if (root_index < 0 || root_index >= pose.rows())
        throw std::invalid_argument("root_relative: root index out of range");
    return pose.rowwise() - pose.row(root_index);
}

/// Mean per-joint position error: average Euclidean distance between
/// corresponding rows. Units follow the inputs.
inline double mpjpe(const Pose3D& pred, const Pose3D& gt) {
    if (pred.rows() != gt.rows()) throw std::invalid_argument("mpjpe: joint count mismatch");
    if (pred.rows() == 0) throw std::invalid_argument("mpjpe: empty pose");
    return (pred - gt).rowwise().norm().mean();
}

struct ProcrustesResult {
    double scale = 1.0;
    Mat rotation = Mat::Identity(3, 3);
    Vec translation = Vec::Zero(3);
    bool degenerate = false;

    Pose3D apply(const Pose3D& pose) const {
        return (scale * (pose * rotation.transpose())).rowwise() + translation.transpose();
    }
};

/// Similarity transform (rotation, optional scale, translation) mapping
/// `pred` onto `gt` in the least-squares sense. A collapsed prediction
/// (all points coincident) degrades to a translation-only fit.
inline ProcrustesResult procrustes_align(const Pose3D& pred, const Pose3D& gt,
                                         bool with_scale = true) {
    if (pred.rows() != gt.rows()) throw std::invalid_argument("procrustes: joint count mismatch");
    if (pred.rows() < 1) throw std::invalid_argument("procrustes: empty pose");
    ProcrustesResult res;
    const Eigen::RowVector3d mu_p = pred.colwise().mean();
    const Eigen::RowVector3d mu_g = gt.colwise().mean();
    Mat xc = pred.rowwise() - mu_p;
    Mat yc = gt.rowwise() - mu_g;
    const double x_norm2 = xc.squaredNorm();
    if (x_norm2 < 1e-18 || pred.rows() < 3) {
        res.degenerate = true;
        res.translation = (mu_g - mu_p).transpose();
        return res;
    }
    Mat c = xc.transpose() * yc;
    Eigen::JacobiSVD<Mat> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat u = svd.matrixU();
    Mat v = svd.matrixV();
    Vec sv = svd.singularValues();
    const double d = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    Vec diag = Vec::Ones(3);
    diag[2] = d;
    res.rotation = v * diag.asDiagonal() * u.transpose();
    if (with_scale) res.scale = sv.dot(diag) / x_norm2;
    res.translation = mu_g.transpose() - res.scale * (res.rotation * mu_p.transpose());
    return res;
}

/// MPJPE after Procrustes alignment of the prediction onto the ground
/// truth.
inline double p_mpjpe(const Pose3D& pred, const Pose3D& gt, bool with_scale = true) {
    return mpjpe(procrustes_align(pred, gt, with_scale).apply(pred), gt);
}

enum class HypothesisAggregation { mean, best_of_n };

inline const char* to_string(HypothesisAggregation a) {
    return a == HypothesisAggregation::mean ? "mean" : "best_of_n";
}

inline HypothesisAggregation aggregation_from_string(const std::string& s) {
    if (s == "mean") return HypothesisAggregation::mean;
    if (s == "best_of_n") return HypothesisAggregation::best_of_n;
    throw std::invalid_argument("unknown aggregation '" + s + "'");
}

struct EvalItem {
    Detection2D y;   // normalized detection fed to the sampler
    Pose3D gt_mm;    // ground-truth joints in millimetres (absolute)
    int action = 0;
    int subject = 0;
};

struct EvalOptions {
    SamplerConfig sampler;
    HypothesisAggregation aggregation = HypothesisAggregation::mean;
    double pose_scale_mm = 1000.0; // multiplier from normalized pose to mm
    int root_index = 0;
    bool procrustes_scale = true;
    int num_workers = 0; // 0 = serial; results are identical either way
};

struct ItemEval {
    double mpjpe = 0.0;
    double p_mpjpe = 0.0;
    int action = 0;
};

struct EvalReport {
    std::vector<std::string> action_names;
    std::vector<double> mpjpe_by_action;
    std::vector<double> p_mpjpe_by_action;
    std::vector<int> items_by_action;
    double mpjpe = 0.0;
    double p_mpjpe = 0.0;
    int num_items = 0;
};

/// Evaluates one item: samples hypotheses, aggregates, scores in mm
/// against the root-relative ground truth.
template <typename Net>
ItemEval evaluate_item(const Net& net, const EvalItem& item, const NoiseSchedule& schedule,
                       const EvalOptions& opt, std::uint64_t item_stream) {
    HypothesisSet hs = sample_hypotheses(net, item.y, schedule, opt.sampler, item_stream);
    const Pose3D gt_rel = root_relative(item.gt_mm, opt.root_index);
    ItemEval out;
    out.action = item.action;
    if (opt.aggregation == HypothesisAggregation::mean) {
        Pose3D pred_mm = hs.mean * opt.pose_scale_mm;
        out.mpjpe = mpjpe(pred_mm, gt_rel);
        out.p_mpjpe = p_mpjpe(pred_mm, gt_rel, opt.procrustes_scale);
    } else {
        double best = std::numeric_limits<double>::infinity();
        Pose3D best_pose;
        for (const auto& h : hs.hypotheses) {
            Pose3D pred_mm = h * opt.pose_scale_mm;
            const double e = mpjpe(pred_mm, gt_rel);
            if (e < best) {
                best = e;
                best_pose = std::move(pred_mm);
            }
        }
        out.mpjpe = best;
        out.p_mpjpe = p_mpjpe(best_pose, gt_rel, opt.procrustes_scale);
    }
    return out;
}

template <typename Net>
std::vector<ItemEval> evaluate_items(const Net& net, const std::vector<EvalItem>& items,
                                     const NoiseSchedule& schedule, const EvalOptions& opt) {
    std::vector<ItemEval> evals(items.size());
    auto run_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            evals[i] = evaluate_item(net, items[i], schedule, opt, static_cast<std::uint64_t>(i));
    };
    if (opt.num_workers <= 1) {
        run_range(0, items.size());
    } else {
        const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(opt.num_workers), items.size());
        std::vector<std::thread> pool;
        pool.reserve(w);
        for (std::size_t k = 0; k < w; ++k) {
            const std::size_t lo = items.size() * k / w;
            const std::size_t hi = items.size() * (k + 1) / w;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    return evals;
}

/// Folds per-item scores into per-action means plus the overall mean
/// over items. Actions missing from the name map get a numeric label.
inline EvalReport build_report(const std::vector<ItemEval>& evals,
                               const std::map<int, std::string>& action_names) {
    EvalReport rep;
    rep.num_items = static_cast<int>(evals.size());
    std::map<int, std::pair<double, double>> sums;
    std::map<int, int> counts;
    for (const auto& e : evals) {
        sums[e.action].first += e.mpjpe;
        sums[e.action].second += e.p_mpjpe;
        counts[e.action] += 1;
        rep.mpjpe += e.mpjpe;
        rep.p_mpjpe += e.p_mpjpe;
    }
    if (!evals.empty()) {
        rep.mpjpe /= static_cast<double>(evals.size());
        rep.p_mpjpe /= static_cast<double>(evals.size());
    }
    for (const auto& [action, sum] : sums) {
        auto it = action_names.find(action);
        rep.action_names.push_back(it != action_names.end() ? it->second
                                                            : "action" + std::to_string(action));
        rep.mpjpe_by_action.push_back(sum.first / counts[action]);
        rep.p_mpjpe_by_action.push_back(sum.second / counts[action]);
        rep.items_by_action.push_back(counts[action]);
    }
    return rep;
}

template <typename Net>
EvalReport evaluate(const Net& net, const std::vector<EvalItem>& items,
                    const NoiseSchedule& schedule, const EvalOptions& opt,
                    const std::map<int, std::string>& action_names = {}) {
    return build_report(evaluate_items(net, items, schedule, opt), action_names);
}

/// CSV layout: one column per action plus a trailing Avg column, one
/// row per metric.
inline void write_eval_csv(const EvalReport& rep, std::ostream& os) {
    os << "metric";
    for (const auto& name : rep.action_names) os << ',' << name;
    os << ",Avg\n";
    os << std::setprecision(10);
    os << "MPJPE";
    for (double v : rep.mpjpe_by_action) os << ',' << v;
    os << ',' << rep.mpjpe << "\n";
    os << "P-MPJPE";
    for (double v : rep.p_mpjpe_by_action) os << ',' << v;
    os << ',' << rep.p_mpjpe << "\n";
}

inline void write_eval_table(const EvalReport& rep, std::ostream& os) {
    os << std::fixed << std::setprecision(2);
    os << std::left << std::setw(10) << "metric";
    for (const auto& name : rep.action_names) os << std::right << std::setw(12) << name;
    os << std::right << std::setw(12) << "Avg" << "\n";
    os << std::left << std::setw(10) << "MPJPE";
    for (double v : rep.mpjpe_by_action) os << std::right << std::setw(12) << v;
    os << std::right << std::setw(12) << rep.mpjpe << "\n";
    os << std::left << std::setw(10) << "P-MPJPE";
    for (double v : rep.p_mpjpe_by_action) os << std::right << std::setw(12) << v;
    os << std::right << std::setw(12) << rep.p_mpjpe << "\n";
    os << "items: " << rep.num_items << "\n";
}

} // namespace graphdiff
