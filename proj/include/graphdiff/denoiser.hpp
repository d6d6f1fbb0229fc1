#pragma once

#include "graphdiff/common.hpp"
#include "graphdiff/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace graphdiff {

enum class Activation { relu, silu, tanh };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::silu: return "silu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "silu") return Activation::silu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

inline Mat apply_activation(Activation a, const Mat& x) {
    switch (a) {
        case Activation::relu: return x.cwiseMax(0.0);
        case Activation::silu: return x.array() / (1.0 + (-x.array()).exp());
        case Activation::tanh: return x.array().tanh();
    }
    return x;
}

/// Derivative evaluated at the pre-activation input.
inline Mat activation_grad(Activation a, const Mat& x) {
    switch (a) {
        case Activation::relu: return (x.array() > 0.0).cast<double>();
        case Activation::silu: {
            Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
            return s * (1.0 + x.array() * (1.0 - s));
        }
        case Activation::tanh: {
            Eigen::ArrayXXd t = x.array().tanh();
            return 1.0 - t * t;
        }
    }
    return Mat::Ones(x.rows(), x.cols());
}

struct DenoiserConfig {
    int model_dim = 384;
    int num_blocks = 4;
    int time_embed_dim = 384;
    Activation activation = Activation::relu;
    SkeletonSpec skeleton;
};

inline void validate(const DenoiserConfig& c) {
    if (c.model_dim < 1) throw std::invalid_argument("denoiser: model_dim must be >= 1");
    if (c.num_blocks < 1) throw std::invalid_argument("denoiser: num_blocks must be >= 1");
    if (c.time_embed_dim < 2 || c.time_embed_dim % 2 != 0)
        throw std::invalid_argument("denoiser: time_embed_dim must be even and >= 2");
    if (c.skeleton.num_joints < 1) throw std::invalid_argument("denoiser: missing skeleton");
}

struct DenoiserOutput {
    Pose3D eps_pred;     // J x 3
    Detection2D y_recon; // J x 2
};

/// Raw sinusoidal embedding: first half sin, second half cos, with
/// geometrically spaced frequencies (max period 10000).
inline Vec sinusoidal_time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time embedding dim must be even >= 2");
    if (t < 0) throw std::invalid_argument("time embedding: t must be >= 0");
    const int half = dim / 2;
    Vec out(dim);
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / half);
        out[k] = std::sin(freq * t);
        out[half + k] = std::cos(freq * t);
    }
    return out;
}

/// Per-node affine map: out = W * H + b broadcast over columns.
struct Linear {
    Mat W;
    Mat b; // column vector, rows x 1

    Mat forward(const Mat& h) const { return (W * h).colwise() + Eigen::VectorXd(b.col(0)); }
};

/// One modulated graph-convolution layer. The affinity mask P is stored
/// symmetric and the additive mask Q is symmetrized on use, so the
/// effective modulated affinity stays symmetric. Feature mapping is the
/// factorized form: shared weight first, then a per-joint scaling
/// vector, equivalent to per-joint weight matrices diag(m_j) * W.
struct ModulatedGcnLayer {
    Mat shared_weight;    // d_out x d_in
    Mat joint_modulation; // J x d_out
    Mat mask_p;           // J x J
    Mat mask_q_raw;       // J x J
};

struct GcnBlock {
    ModulatedGcnLayer gcn1, gcn2;
};

struct TimeResBlock {
    Linear lin1;     // d_m x d_m
    Linear emb_proj; // d_m x d_e
    Linear lin2;     // d_m x d_m
};

struct TimeEmbedMlp {
    Linear l1, l2; // d_e x d_e each
};

struct DenoiserParams {
    Linear input_embed; // d_m x 5
    std::vector<GcnBlock> blocks;
    std::vector<TimeResBlock> time_blocks; // num_blocks - 1, between GCN blocks
    TimeEmbedMlp time_mlp;
    Linear head_eps; // 3 x d_m
    Linear head_y;   // 2 x d_m
};

/// Visits every trainable tensor with a stable name and order; Adam
/// state, checkpoints and gradient checks all rely on this order.
template <typename Params, typename F>
void for_each_tensor(Params& p, F&& f) {
    auto visit_linear = [&](const std::string& prefix, auto& lin) {
        f(prefix + ".W", lin.W);
        f(prefix + ".b", lin.b);
    };
    auto visit_gcn = [&](const std::string& prefix, auto& g) {
        f(prefix + ".shared_weight", g.shared_weight);
        f(prefix + ".joint_modulation", g.joint_modulation);
        f(prefix + ".mask_p", g.mask_p);
        f(prefix + ".mask_q_raw", g.mask_q_raw);
    };
    visit_linear("input_embed", p.input_embed);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        visit_gcn("block" + std::to_string(i) + ".gcn1", p.blocks[i].gcn1);
        visit_gcn("block" + std::to_string(i) + ".gcn2", p.blocks[i].gcn2);
    }
    for (std::size_t i = 0; i < p.time_blocks.size(); ++i) {
        const std::string prefix = "time" + std::to_string(i);
        visit_linear(prefix + ".lin1", p.time_blocks[i].lin1);
        visit_linear(prefix + ".emb_proj", p.time_blocks[i].emb_proj);
        visit_linear(prefix + ".lin2", p.time_blocks[i].lin2);
    }
    visit_linear("time_mlp.l1", p.time_mlp.l1);
    visit_linear("time_mlp.l2", p.time_mlp.l2);
    visit_linear("head_eps", p.head_eps);
    visit_linear("head_y", p.head_y);
}

inline std::size_t count_parameters(const DenoiserParams& p) {
    std::size_t n = 0;
    for_each_tensor(const_cast<DenoiserParams&>(p),
                    [&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

namespace detail {

struct AffinityTrace {
    Mat n;   // normalized modulated affinity, J x J
    Vec deg; // row sums of A_mod + I (after the positivity floor)
};

/// Builds the normalized modulated affinity
///   N = D^(-1/2) (A .* P_eff + Q_eff + I) D^(-1/2)
/// with P_eff, Q_eff the symmetrized masks.
inline AffinityTrace modulated_affinity_trace(const ModulatedGcnLayer& layer, const Mat& a_binary) {
    const Eigen::Index j = a_binary.rows();
    Mat p_eff = 0.5 * (layer.mask_p + layer.mask_p.transpose());
    Mat q_eff = 0.5 * (layer.mask_q_raw + layer.mask_q_raw.transpose());
    Mat s = a_binary.cwiseProduct(p_eff) + q_eff + Mat::Identity(j, j);
    AffinityTrace tr;
    tr.deg = s.rowwise().sum().cwiseMax(1e-8);
    Vec dinv = tr.deg.array().rsqrt();
    tr.n = dinv.asDiagonal() * s * dinv.asDiagonal();
    return tr;
}

/// Backward through the normalization: given dL/dN, produces dL/dS and
/// from it the mask gradients (symmetrized, matching the storage).
inline void modulated_affinity_backward(const AffinityTrace& tr, const Mat& g_n,
                                        const Mat& a_binary, Mat& grad_p, Mat& grad_q) {
    Vec dinv = tr.deg.array().rsqrt();
    Vec row_dot = (g_n.cwiseProduct(tr.n)).rowwise().sum();
    Vec col_dot = (g_n.cwiseProduct(tr.n)).colwise().sum().transpose();
    Vec u = row_dot.cwiseQuotient(tr.deg);
    Vec v = col_dot.cwiseQuotient(tr.deg);
    Mat g_s = (dinv * dinv.transpose()).cwiseProduct(g_n);
    g_s.noalias() -= 0.5 * (u.replicate(1, g_n.cols()) + v.transpose().replicate(g_n.rows(), 1));
    Mat g_p_eff = g_s.cwiseProduct(a_binary);
    grad_p += 0.5 * (g_p_eff + g_p_eff.transpose());
    grad_q += 0.5 * (g_s + g_s.transpose());
}

struct LayerTrace {
    Mat h_in; // d_in x BJ
    Mat z;    // d_out x BJ, shared-weight output
    Mat zm;   // d_out x BJ, after joint modulation
    Mat u;    // d_out x BJ, after graph aggregation (pre-activation)
    AffinityTrace aff;
};

} // namespace detail

/// Vanilla GCN layer: act(W * H * A_tilde). Columns of H are per-node
/// features. Set `activation` to nullopt for the final (linear) layer.
inline Mat gcn_layer_forward(const Mat& h, const Mat& a_tilde, const Mat& w,
                             std::optional<Activation> activation = Activation::relu) {
    if (w.cols() != h.rows()) throw std::invalid_argument("gcn_layer_forward: W/H shape mismatch");
    if (h.cols() != a_tilde.rows() || a_tilde.rows() != a_tilde.cols())
        throw std::invalid_argument("gcn_layer_forward: H/A shape mismatch");
    Mat out = w * h * a_tilde;
    if (activation) out = apply_activation(*activation, out);
    return out;
}

namespace detail {

/// Batched modulated GCN layer forward. Columns of h are node features
/// for `batch` stacked samples of `j` nodes each; the affinity is
/// shared across samples within the forward pass.
inline Mat modulated_gcn_batched(const Mat& h, const ModulatedGcnLayer& layer, const Mat& a_binary,
                                 int batch, std::optional<Activation> activation,
                                 LayerTrace* trace) {
    const Eigen::Index j = a_binary.rows();
    if (layer.shared_weight.cols() != h.rows())
        throw std::invalid_argument("modulated_gcn: W/H shape mismatch");
    if (h.cols() != batch * j) throw std::invalid_argument("modulated_gcn: H column count mismatch");
    const Eigen::Index d_out = layer.shared_weight.rows();

    AffinityTrace aff = modulated_affinity_trace(layer, a_binary);
    Mat z = layer.shared_weight * h;
    Mat zm(d_out, h.cols());
    for (int b = 0; b < batch; ++b)
        for (Eigen::Index node = 0; node < j; ++node)
            zm.col(b * j + node) =
                z.col(b * j + node).cwiseProduct(layer.joint_modulation.row(node).transpose());
    Mat u(d_out, h.cols());
    for (int b = 0; b < batch; ++b)
        u.middleCols(b * j, j).noalias() = zm.middleCols(b * j, j) * aff.n;

    Mat out = activation ? apply_activation(*activation, u) : u;
    if (trace) {
        trace->h_in = h;
        trace->z = std::move(z);
        trace->zm = std::move(zm);
        trace->u = std::move(u);
        trace->aff = std::move(aff);
    }
    return out;
}

/// Backward mate of modulated_gcn_batched. Returns dL/dH and adds the
/// parameter gradients into `grad`.
inline Mat modulated_gcn_backward(const Mat& g_out, const ModulatedGcnLayer& layer,
                                  ModulatedGcnLayer& grad, const Mat& a_binary, int batch,
                                  std::optional<Activation> activation, const LayerTrace& tr) {
    const Eigen::Index j = a_binary.rows();
    Mat g_u = activation ? Mat(g_out.cwiseProduct(activation_grad(*activation, tr.u))) : g_out;

    Mat g_zm(g_u.rows(), g_u.cols());
    Mat g_n = Mat::Zero(j, j);
    for (int b = 0; b < batch; ++b) {
        g_zm.middleCols(b * j, j).noalias() = g_u.middleCols(b * j, j) * tr.aff.n.transpose();
        g_n.noalias() += tr.zm.middleCols(b * j, j).transpose() * g_u.middleCols(b * j, j);
    }
    modulated_affinity_backward(tr.aff, g_n, a_binary, grad.mask_p, grad.mask_q_raw);

    Mat g_z(g_zm.rows(), g_zm.cols());
    for (int b = 0; b < batch; ++b) {
        for (Eigen::Index node = 0; node < j; ++node) {
            const Eigen::Index c = b * j + node;
            g_z.col(c) = g_zm.col(c).cwiseProduct(layer.joint_modulation.row(node).transpose());
            grad.joint_modulation.row(node) += g_zm.col(c).cwiseProduct(tr.z.col(c)).transpose();
        }
    }
    grad.shared_weight.noalias() += g_z * tr.h_in.transpose();
    return layer.shared_weight.transpose() * g_z;
}

} // namespace detail

/// Single-sample modulated GCN layer (the factorized joint-specific
/// form). H columns are node features.
inline Mat modulated_gcn_forward(const Mat& h, const ModulatedGcnLayer& layer, const Mat& a_binary,
                                 std::optional<Activation> activation = Activation::relu) {
    return detail::modulated_gcn_batched(h, layer, a_binary, 1, activation, nullptr);
}

/// Effective modulated affinity of a layer, for inspection. Normalized
/// by default (what the layer aggregates with); raw A .* P + Q otherwise.
inline AffinityMatrix modulated_affinity(const ModulatedGcnLayer& layer, const Mat& a_binary,
                                         bool normalized = true) {
    if (normalized)
        return AffinityMatrix{detail::modulated_affinity_trace(layer, a_binary).n,
                              AffinityKind::modulated};
    Mat p_eff = 0.5 * (layer.mask_p + layer.mask_p.transpose());
    Mat q_eff = 0.5 * (layer.mask_q_raw + layer.mask_q_raw.transpose());
    return AffinityMatrix{a_binary.cwiseProduct(p_eff) + q_eff, AffinityKind::modulated};
}

struct BatchItem {
    Pose3D x_t;
    int t = 0;
    Detection2D y;
};

struct ForwardTrace {
    int batch = 0;
    Mat x_in; // 5 x BJ
    Mat p_sin, q_mlp, r_mlp, e_mlp; // time-embedding MLP stages, d_e x B
    std::vector<detail::LayerTrace> gcn1, gcn2; // per block
    std::vector<Mat> block_in;                  // H entering each GCN block
    struct TimeTrace {
        Mat h_in, u1, a1e, a2;
    };
    std::vector<TimeTrace> time;
    Mat h_final;
};

/// The denoising network: per-joint fusion of the noisy 3D pose with the
/// 2D detection, a stack of residual modulated-GCN blocks with timestep
/// residual blocks between them, and linear heads for the noise estimate
/// and the reconstructed detection.
class DenoiserModel {
public:
    DenoiserModel() = default;
    explicit DenoiserModel(DenoiserConfig config) : config_(std::move(config)) {
        validate(config_);
        affinity_ = binary_affinity(config_.skeleton).values;
        allocate();
    }

    const DenoiserConfig& config() const { return config_; }
    const Mat& affinity() const { return affinity_; }
    DenoiserParams& params() { return params_; }
    const DenoiserParams& params() const { return params_; }

    void init_params(std::uint64_t seed) {
        Rng rng = Rng::substream(seed, 0x6d6f64656cULL); // "model"
        auto he = [&](Mat& m, double fan_in, double scale = 1.0) {
            const double std = scale * std::sqrt(2.0 / fan_in);
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = std * rng.normal();
        };
        const int d = config_.model_dim;
        const int de = config_.time_embed_dim;
        he(params_.input_embed.W, 5.0);
        for (auto& blk : params_.blocks) {
            for (auto* g : {&blk.gcn1, &blk.gcn2}) {
                he(g->shared_weight, d);
                g->joint_modulation.setOnes();
                g->mask_p.setOnes();
                g->mask_q_raw.setZero();
            }
        }
        for (auto& tb : params_.time_blocks) {
            he(tb.lin1.W, d);
            he(tb.emb_proj.W, de);
            he(tb.lin2.W, d);
        }
        he(params_.time_mlp.l1.W, de);
        he(params_.time_mlp.l2.W, de);
        he(params_.head_eps.W, d, 0.1);
        he(params_.head_y.W, d, 0.1);
    }

    /// Time embedding as consumed by the network: sinusoidal features
    /// passed through the two-layer nonlinear projection.
    Vec time_embedding(int t) const {
        const Vec raw = sinusoidal_time_embedding(t, config_.time_embed_dim);
        const Vec q = params_.time_mlp.l1.W * raw + params_.time_mlp.l1.b.col(0);
        const Mat r = apply_activation(config_.activation, q);
        return params_.time_mlp.l2.W * r + params_.time_mlp.l2.b.col(0);
    }

    DenoiserOutput forward(const Pose3D& x_t, int t, const Detection2D& y) const {
        auto outs = forward_batch({BatchItem{x_t, t, y}});
        return std::move(outs.front());
    }

    /// Noise estimate only, the interface samplers need.
    Pose3D operator()(const Pose3D& x_t, int t, const Detection2D& y) const {
        return forward(x_t, t, y).eps_pred;
    }

    std::vector<DenoiserOutput> forward_batch(const std::vector<BatchItem>& items,
                                              ForwardTrace* trace = nullptr) const {
        Mat eps, y_rec;
        forward_batch_raw(items, eps, y_rec, trace);
        const Eigen::Index j = config_.skeleton.num_joints;
        std::vector<DenoiserOutput> outs(items.size());
        for (std::size_t b = 0; b < items.size(); ++b) {
            outs[b].eps_pred = eps.middleCols(static_cast<Eigen::Index>(b) * j, j).transpose();
            outs[b].y_recon = y_rec.middleCols(static_cast<Eigen::Index>(b) * j, j).transpose();
        }
        return outs;
    }

    /// Batched forward in the internal column-major layout: outputs are
    /// 3 x BJ and 2 x BJ. Fills `trace` when given, for backward().
    void forward_batch_raw(const std::vector<BatchItem>& items, Mat& eps_out, Mat& y_out,
                           ForwardTrace* trace = nullptr) const {
        if (items.empty()) throw std::invalid_argument("denoiser: empty batch");
        const Eigen::Index j = config_.skeleton.num_joints;
        const int batch = static_cast<int>(items.size());

        Mat x(5, batch * j);
        Mat p_sin(config_.time_embed_dim, batch);
        for (int b = 0; b < batch; ++b) {
            const auto& it = items[static_cast<std::size_t>(b)];
            if (it.x_t.rows() != j || it.y.rows() != j)
                throw std::invalid_argument("denoiser: pose/detection joint count mismatch");
            if (it.t < 0) throw std::invalid_argument("denoiser: t out of range");
            x.block(0, b * j, 3, j) = it.x_t.transpose();
            x.block(3, b * j, 2, j) = it.y.transpose();
            p_sin.col(b) = sinusoidal_time_embedding(it.t, config_.time_embed_dim);
        }

        // shared time-embedding MLP
        Mat q_mlp = (params_.time_mlp.l1.W * p_sin).colwise() + Eigen::VectorXd(params_.time_mlp.l1.b.col(0));
        Mat r_mlp = apply_activation(config_.activation, q_mlp);
        Mat e_mlp = (params_.time_mlp.l2.W * r_mlp).colwise() + Eigen::VectorXd(params_.time_mlp.l2.b.col(0));

        if (trace) {
            trace->batch = batch;
            trace->x_in = x;
            trace->p_sin = p_sin;
            trace->q_mlp = q_mlp;
            trace->r_mlp = r_mlp;
            trace->e_mlp = e_mlp;
            trace->gcn1.resize(params_.blocks.size());
            trace->gcn2.resize(params_.blocks.size());
            trace->block_in.resize(params_.blocks.size());
            trace->time.resize(params_.time_blocks.size());
        }

        Mat h = params_.input_embed.forward(x);
        for (std::size_t i = 0; i < params_.blocks.size(); ++i) {
            if (trace) trace->block_in[i] = h;
            Mat h1 = detail::modulated_gcn_batched(h, params_.blocks[i].gcn1, affinity_, batch,
                                                   config_.activation, trace ? &trace->gcn1[i] : nullptr);
            Mat h2 = detail::modulated_gcn_batched(h1, params_.blocks[i].gcn2, affinity_, batch,
                                                   std::nullopt, trace ? &trace->gcn2[i] : nullptr);
            h += h2;
            if (i + 1 < params_.blocks.size()) {
                const auto& tb = params_.time_blocks[i];
                Mat u1 = tb.lin1.forward(h);
                Mat a1 = apply_activation(config_.activation, u1);
                Mat emb_out = (tb.emb_proj.W * e_mlp).colwise() + Eigen::VectorXd(tb.emb_proj.b.col(0));
                Mat a1e = a1;
                for (int b = 0; b < batch; ++b)
                    a1e.middleCols(b * j, j).colwise() += Eigen::VectorXd(emb_out.col(b));
                Mat a2 = apply_activation(config_.activation, a1e);
                if (trace) {
                    auto& tt = trace->time[i];
                    tt.h_in = h;
                    tt.u1 = std::move(u1);
                    tt.a1e = a1e;
                    tt.a2 = a2;
                }
                h += tb.lin2.forward(a2);
            }
        }
        if (trace) trace->h_final = h;
        eps_out = params_.head_eps.forward(h);
        y_out = params_.head_y.forward(h);
    }

    /// Accumulates dL/dparams into `grad` given upstream gradients in
    /// the internal layout (3 x BJ, 2 x BJ). `grad` must be zeroed or
    /// hold gradients to accumulate onto.
    void backward(const ForwardTrace& tr, const Mat& g_eps, const Mat& g_y,
                  DenoiserParams& grad) const {
        const Eigen::Index j = config_.skeleton.num_joints;
        const int batch = tr.batch;

        grad.head_eps.W.noalias() += g_eps * tr.h_final.transpose();
        grad.head_eps.b.col(0) += g_eps.rowwise().sum();
        grad.head_y.W.noalias() += g_y * tr.h_final.transpose();
        grad.head_y.b.col(0) += g_y.rowwise().sum();

        Mat g_h = params_.head_eps.W.transpose() * g_eps + params_.head_y.W.transpose() * g_y;
        Mat g_e = Mat::Zero(config_.time_embed_dim, batch);

        for (std::size_t ri = params_.blocks.size(); ri-- > 0;) {
            if (ri + 1 < params_.blocks.size()) {
                const auto& tb = params_.time_blocks[ri];
                auto& gtb = grad.time_blocks[ri];
                const auto& tt = tr.time[ri];

                grad_linear(gtb.lin2, g_h, tt.a2);
                Mat g_a2 = tb.lin2.W.transpose() * g_h;
                Mat g_a1e = g_a2.cwiseProduct(activation_grad(config_.activation, tt.a1e));
                Mat g_emb_out(g_a1e.rows(), batch);
                for (int b = 0; b < batch; ++b)
                    g_emb_out.col(b) = g_a1e.middleCols(b * j, j).rowwise().sum();
                gtb.emb_proj.W.noalias() += g_emb_out * tr.e_mlp.transpose();
                gtb.emb_proj.b.col(0) += g_emb_out.rowwise().sum();
                g_e.noalias() += tb.emb_proj.W.transpose() * g_emb_out;
                Mat g_u1 = g_a1e.cwiseProduct(activation_grad(config_.activation, tt.u1));
                grad_linear(gtb.lin1, g_u1, tt.h_in);
                g_h.noalias() += tb.lin1.W.transpose() * g_u1; // residual path
            }
            Mat g_h1 = detail::modulated_gcn_backward(g_h, params_.blocks[ri].gcn2,
                                                      grad.blocks[ri].gcn2, affinity_, batch,
                                                      std::nullopt, tr.gcn2[ri]);
            Mat g_in = detail::modulated_gcn_backward(g_h1, params_.blocks[ri].gcn1,
                                                      grad.blocks[ri].gcn1, affinity_, batch,
                                                      config_.activation, tr.gcn1[ri]);
            g_h += g_in; // residual path
        }

        grad_linear(grad.input_embed, g_h, tr.x_in);

        // shared time MLP
        grad.time_mlp.l2.W.noalias() += g_e * tr.r_mlp.transpose();
        grad.time_mlp.l2.b.col(0) += g_e.rowwise().sum();
        Mat g_r = params_.time_mlp.l2.W.transpose() * g_e;
        Mat g_q = g_r.cwiseProduct(activation_grad(config_.activation, tr.q_mlp));
        grad.time_mlp.l1.W.noalias() += g_q * tr.p_sin.transpose();
        grad.time_mlp.l1.b.col(0) += g_q.rowwise().sum();
    }

    DenoiserParams zero_grads() const {
        DenoiserParams g;
        copy_shapes(params_, g);
        for_each_tensor(g, [](const std::string&, Mat& m) { m.setZero(); });
        return g;
    }

private:
    static void grad_linear(Linear& g, const Mat& g_out, const Mat& input) {
        g.W.noalias() += g_out * input.transpose();
        g.b.col(0) += g_out.rowwise().sum();
    }

    static void copy_shapes(const DenoiserParams& src, DenoiserParams& dst) {
        dst = src; // shapes via copy, values overwritten by caller
    }

    void allocate() {
        const int d = config_.model_dim;
        const int de = config_.time_embed_dim;
        const int j = config_.skeleton.num_joints;
        auto lin = [](int rows, int cols) {
            Linear l;
            l.W = Mat::Zero(rows, cols);
            l.b = Mat::Zero(rows, 1);
            return l;
        };
        params_.input_embed = lin(d, 5);
        params_.blocks.resize(static_cast<std::size_t>(config_.num_blocks));
        for (auto& blk : params_.blocks) {
            for (auto* g : {&blk.gcn1, &blk.gcn2}) {
                g->shared_weight = Mat::Zero(d, d);
                g->joint_modulation = Mat::Ones(j, d);
                g->mask_p = Mat::Ones(j, j);
                g->mask_q_raw = Mat::Zero(j, j);
            }
        }
        params_.time_blocks.resize(static_cast<std::size_t>(std::max(config_.num_blocks - 1, 0)));
        for (auto& tb : params_.time_blocks) {
            tb.lin1 = lin(d, d);
            tb.emb_proj = lin(d, de);
            tb.lin2 = lin(d, d);
        }
        params_.time_mlp.l1 = lin(de, de);
        params_.time_mlp.l2 = lin(de, de);
        params_.head_eps = lin(3, d);
        params_.head_y = lin(2, d);
    }

    DenoiserConfig config_;
    Mat affinity_;
    DenoiserParams params_;
};

/// Spec-level convenience: full forward pass of the denoiser.
inline DenoiserOutput denoiser_forward(const DenoiserModel& model, const Pose3D& x_t, int t,
                                       const Detection2D& y) {
    return model.forward(x_t, t, y);
}

} // namespace graphdiff
