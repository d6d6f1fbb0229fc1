#pragma once

#include "graphdiff/common.hpp"
#include "graphdiff/data.hpp"
#include "graphdiff/denoiser.hpp"
#include "graphdiff/evaluation.hpp"
#include "graphdiff/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace graphdiff {

/// Everything a run needs, resolved from defaults, an optional config
/// file and --set overrides, in that order.
struct RunConfig {
    std::uint64_t seed = 0;
    DenoiserConfig model;
    ScheduleSpec schedule;
    TrainConfig train;
    SamplerConfig sampler;
    HypothesisAggregation aggregation = HypothesisAggregation::mean;
    bool procrustes_scale = true;
    SynthConfig synth;
    nlohmann::json resolved;
};

inline nlohmann::json default_config_json() {
    return {
        {"seed", 0},
        {"model",
         {{"model_dim", 384},
          {"num_blocks", 4},
          {"time_embed_dim", 384},
          {"activation", "relu"},
          {"skeleton", "h36m17"}}},
        {"schedule",
         {{"kind", "cosine"},
          {"steps", 100},
          {"offset_s", 0.008},
          {"beta_start", 1e-4},
          {"beta_end", 0.02}}},
        {"train",
         {{"epochs", 200},
          {"batch_size", 1024},
          {"lr0", 4e-5},
          {"lr_shrink", 0.995},
          {"flip_probability", 0.5},
          {"lambda", 1.0},
          {"loss_norm", "l2"},
          {"joint_weights", nlohmann::json::array()}}},
        {"sampler",
         {{"mode", "ddpm"},
          {"num_hypotheses", 10},
          {"ddim_steps", 100},
          {"ddim_eta", 0.0},
          {"x0_clip", 3.0}}},
        {"eval", {{"aggregation", "mean"}, {"procrustes_scale", true}}},
        {"synth",
         {{"num_items", 256},
          {"noise_std_px", 0.0},
          {"max_rotation_rad", 0.35},
          {"focal_px", 1100.0},
          {"image_width", 1000.0},
          {"image_height", 1000.0},
          {"actions", {"Swing", "Reach", "Crouch", "Wave"}},
          {"subjects", {"S1", "S2", "S3", "S4"}},
          {"test_subjects", {"S4"}}}},
    };
}

namespace detail {

/// Deep-merges overlay into base. Keys absent from base are rejected,
/// which catches typos in config files early.
inline void merge_config(nlohmann::json& base, const nlohmann::json& overlay,
                         const std::string& path) {
    if (!overlay.is_object()) throw std::invalid_argument("config: '" + path + "' must be an object");
    for (const auto& [key, value] : overlay.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw std::invalid_argument("config: unknown key '" + here + "'");
        if (base[key].is_object() && value.is_object())
            merge_config(base[key], value, here);
        else
            base[key] = value;
    }
}

} // namespace detail

/// Applies one "dotted.path=value" override. The path must name an
/// existing key; the value is parsed as JSON when possible and falls
/// back to a plain string.
inline void apply_set_override(nlohmann::json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("--set expects key=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json* node = &cfg;
    std::size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
        const auto dot = path.find('.', start);
        parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object() || !node->contains(parts[i]))
            throw std::invalid_argument("--set: unknown key '" + path + "'");
        node = &(*node)[parts[i]];
    }
    if (!node->is_object() || !node->contains(parts.back()))
        throw std::invalid_argument("--set: unknown key '" + path + "'");

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    (*node)[parts.back()] = value;
}

namespace detail {

inline SkeletonSpec resolve_skeleton_value(const nlohmann::json& v) {
    if (v.is_object()) return skeleton_from_json(v);
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s.find('/') != std::string::npos ||
            (s.size() > 5 && s.substr(s.size() - 5) == ".json"))
            return load_skeleton_file(s);
        return resolve_skeleton_name(s);
    }
    throw std::invalid_argument("config: model.skeleton must be a name, a file path or an object");
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw std::invalid_argument("config: unknown schedule kind '" + s + "'");
}

inline SamplerMode sampler_mode_from_string(const std::string& s) {
    if (s == "ddpm") return SamplerMode::ddpm;
    if (s == "ddim") return SamplerMode::ddim;
    throw std::invalid_argument("config: unknown sampler mode '" + s + "'");
}

} // namespace detail

/// Turns the resolved JSON tree into validated runtime structs.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig rc;
    rc.resolved = j;
    try {
        rc.seed = j.at("seed").get<std::uint64_t>();

        const auto& jm = j.at("model");
        rc.model.model_dim = jm.at("model_dim").get<int>();
        rc.model.num_blocks = jm.at("num_blocks").get<int>();
        rc.model.time_embed_dim = jm.at("time_embed_dim").get<int>();
        rc.model.activation = activation_from_string(jm.at("activation").get<std::string>());
        rc.model.skeleton = detail::resolve_skeleton_value(jm.at("skeleton"));
        validate(rc.model);

        const auto& js = j.at("schedule");
        rc.schedule.kind = detail::schedule_kind_from_string(js.at("kind").get<std::string>());
        rc.schedule.steps = js.at("steps").get<int>();
        rc.schedule.offset_s = js.at("offset_s").get<double>();
        rc.schedule.beta_start = js.at("beta_start").get<double>();
        rc.schedule.beta_end = js.at("beta_end").get<double>();
        rc.schedule.build(); // validates parameters

        const auto& jt = j.at("train");
        rc.train.epochs = jt.at("epochs").get<int>();
        rc.train.batch_size = jt.at("batch_size").get<int>();
        rc.train.lr0 = jt.at("lr0").get<double>();
        rc.train.lr_shrink = jt.at("lr_shrink").get<double>();
        rc.train.flip_probability = jt.at("flip_probability").get<double>();
        rc.train.loss.lambda = jt.at("lambda").get<double>();
        rc.train.loss.norm = loss_norm_from_string(jt.at("loss_norm").get<std::string>());
        const auto& jw = jt.at("joint_weights");
        if (!jw.empty()) {
            rc.train.loss.joint_weights.resize(static_cast<Eigen::Index>(jw.size()));
            for (std::size_t i = 0; i < jw.size(); ++i)
                rc.train.loss.joint_weights[static_cast<Eigen::Index>(i)] = jw[i].get<double>();
        }
        rc.train.schedule = rc.schedule;
        rc.train.seed = rc.seed;
        validate(rc.train);

        const auto& jp = j.at("sampler");
        rc.sampler.mode = detail::sampler_mode_from_string(jp.at("mode").get<std::string>());
        rc.sampler.num_hypotheses = jp.at("num_hypotheses").get<int>();
        rc.sampler.ddim_steps = jp.at("ddim_steps").get<int>();
        rc.sampler.ddim_eta = jp.at("ddim_eta").get<double>();
        rc.sampler.x0_clip = jp.at("x0_clip").get<double>();
        rc.sampler.seed = rc.seed;
        validate(rc.sampler, rc.schedule.steps);

        const auto& je = j.at("eval");
        rc.aggregation = aggregation_from_string(je.at("aggregation").get<std::string>());
        rc.procrustes_scale = je.at("procrustes_scale").get<bool>();

        const auto& jy = j.at("synth");
        rc.synth.skeleton = rc.model.skeleton;
        rc.synth.seed = rc.seed;
        rc.synth.num_items = jy.at("num_items").get<int>();
        rc.synth.noise_std_px = jy.at("noise_std_px").get<double>();
        rc.synth.max_rotation_rad = jy.at("max_rotation_rad").get<double>();
        rc.synth.focal_px = jy.at("focal_px").get<double>();
        rc.synth.image_width = jy.at("image_width").get<double>();
        rc.synth.image_height = jy.at("image_height").get<double>();
        rc.synth.actions = jy.at("actions").get<std::vector<std::string>>();
        rc.synth.subjects = jy.at("subjects").get<std::vector<std::string>>();
        rc.synth.test_subjects = jy.at("test_subjects").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    return rc;
}

/// Defaults, then the config file, then --set overrides, then the
/// explicit seed flag.
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& config_file,
                                 const std::vector<std::string>& set_overrides,
                                 const std::optional<std::uint64_t>& seed_flag) {
    nlohmann::json cfg = default_config_json();
    if (config_file) {
        nlohmann::json user;
        try {
            user = nlohmann::json::parse(read_file(*config_file));
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("config: cannot parse " + config_file->string() + ": " +
                                        e.what());
        }
        detail::merge_config(cfg, user, "");
    }
    for (const auto& s : set_overrides) apply_set_override(cfg, s);
    if (seed_flag) cfg["seed"] = *seed_flag;
    return parse_run_config(cfg);
}

} // namespace graphdiff
