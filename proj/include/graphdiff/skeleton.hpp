#pragma once

#include "graphdiff/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>
#include <utility>
#include <vector>

namespace graphdiff {

/// Undirected human-skeleton graph. Immutable once built; all affinity
/// matrices consumed by the denoiser derive from it.
struct SkeletonSpec {
    int num_joints = 0;
    std::vector<std::pair<int, int>> edges;
    std::vector<std::pair<int, int>> flip_pairs; // (left, right)
    int root_index = 0;
    std::string name; // optional, e.g. "h36m17"
};

enum class AffinityKind { binary, normalized, modulated };

struct AffinityMatrix {
    Mat values;
    AffinityKind kind = AffinityKind::binary;
};

inline SkeletonSpec build_skeleton(int num_joints,
                                   std::vector<std::pair<int, int>> edges,
                                   std::vector<std::pair<int, int>> flip_pairs,
                                   int root_index,
                                   std::string name = {}) {
    if (num_joints <= 0) throw std::invalid_argument("skeleton: num_joints must be positive");
    if (root_index < 0 || root_index >= num_joints)
        throw std::invalid_argument("skeleton: root_index out of range");

    std::set<std::pair<int, int>> seen;
    for (auto& [a, b] : edges) {
        if (a < 0 || a >= num_joints || b < 0 || b >= num_joints)
            throw std::invalid_argument("skeleton: edge endpoint out of range");
        if (a == b) throw std::invalid_argument("skeleton: self-loop edge");
        auto key = std::minmax(a, b);
        if (!seen.insert(key).second) throw std::invalid_argument("skeleton: duplicate edge");
    }

    std::set<int> flip_seen;
    for (auto& [l, r] : flip_pairs) {
        if (l < 0 || l >= num_joints || r < 0 || r >= num_joints)
            throw std::invalid_argument("skeleton: flip index out of range");
        if (l == r) throw std::invalid_argument("skeleton: flip pair maps joint to itself");
        if (!flip_seen.insert(l).second || !flip_seen.insert(r).second)
            throw std::invalid_argument("skeleton: joint appears in more than one flip pair");
    }

    return SkeletonSpec{num_joints, std::move(edges), std::move(flip_pairs), root_index, std::move(name)};
}

/// 17-joint Human3.6M convention: 0 pelvis (root), right leg 1-3,
/// left leg 4-6, spine 7, thorax 8, neck/nose 9, head 10,
/// left arm 11-13, right arm 14-16.
inline SkeletonSpec h36m17_skeleton() {
    std::vector<std::pair<int, int>> edges = {
        {0, 1},  {1, 2},  {2, 3},  {0, 4},   {4, 5},   {5, 6},
        {0, 7},  {7, 8},  {8, 9},  {9, 10},  {8, 11},  {11, 12},
        {12, 13}, {8, 14}, {14, 15}, {15, 16}};
    std::vector<std::pair<int, int>> flips = {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}};
    return build_skeleton(17, std::move(edges), std::move(flips), 0, "h36m17");
}

inline AffinityMatrix binary_affinity(const SkeletonSpec& spec) {
    Mat a = Mat::Zero(spec.num_joints, spec.num_joints);
    for (auto& [i, j] : spec.edges) {
        a(i, j) = 1.0;
        a(j, i) = 1.0;
    }
    return AffinityMatrix{std::move(a), AffinityKind::binary};
}

/// D^(-1/2) (M + I) D^(-1/2) with D the degree matrix of M + I.
/// Shared between the binary skeleton affinity and the learnable
/// modulated affinity, so both follow the same normalization semantics.
inline Mat normalize_affinity_values(const Mat& m) {
    const Eigen::Index n = m.rows();
    Mat s = m + Mat::Identity(n, n);
    Vec deg = s.rowwise().sum();
    Vec dinv = deg.array().max(1e-8).rsqrt();
    return dinv.asDiagonal() * s * dinv.asDiagonal();
}

inline AffinityMatrix normalized_affinity(const SkeletonSpec& spec) {
    return AffinityMatrix{normalize_affinity_values(binary_affinity(spec).values),
                          AffinityKind::normalized};
}

/// Mirrors a pose: negates the given coordinate axis and swaps each
/// left/right joint pair. Involution for every spec and axis.
inline Mat flip_pose(const Mat& pose, const SkeletonSpec& spec, int axis = 0) {
    if (pose.rows() != spec.num_joints)
        throw std::invalid_argument("flip_pose: row count does not match skeleton");
    if (axis < 0 || axis >= pose.cols()) throw std::invalid_argument("flip_pose: axis out of range");
    Mat out = pose;
    out.col(axis) = -out.col(axis).eval();
    for (auto& [l, r] : spec.flip_pairs) out.row(l).swap(out.row(r));
    return out;
}

inline SkeletonSpec skeleton_from_json(const nlohmann::json& j) {
    for (auto& [key, _] : j.items()) {
        if (key != "num_joints" && key != "edges" && key != "flip_pairs" && key != "root_index" &&
            key != "name")
            throw std::invalid_argument("skeleton: unknown key '" + key + "'");
    }
    auto read_pairs = [](const nlohmann::json& arr) {
        std::vector<std::pair<int, int>> out;
        for (auto& e : arr) {
            if (!e.is_array() || e.size() != 2) throw std::invalid_argument("skeleton: pair must have 2 indices");
            out.emplace_back(e[0].get<int>(), e[1].get<int>());
        }
        return out;
    };
    return build_skeleton(j.at("num_joints").get<int>(),
                          read_pairs(j.at("edges")),
                          j.contains("flip_pairs") ? read_pairs(j.at("flip_pairs"))
                                                   : std::vector<std::pair<int, int>>{},
                          j.at("root_index").get<int>(),
                          j.value("name", std::string{}));
}

inline nlohmann::json skeleton_to_json(const SkeletonSpec& spec) {
    nlohmann::json j;
    j["num_joints"] = spec.num_joints;
    j["edges"] = nlohmann::json::array();
    for (auto& [a, b] : spec.edges) j["edges"].push_back({a, b});
    j["flip_pairs"] = nlohmann::json::array();
    for (auto& [l, r] : spec.flip_pairs) j["flip_pairs"].push_back({l, r});
    j["root_index"] = spec.root_index;
    if (!spec.name.empty()) j["name"] = spec.name;
    return j;
}

inline SkeletonSpec load_skeleton_file(const std::filesystem::path& path) {
    return skeleton_from_json(nlohmann::json::parse(read_file(path)));
}

/// Resolves a builtin skeleton name. Only "h36m17" is builtin; anything
/// else must come from a skeleton file.
inline SkeletonSpec resolve_skeleton_name(const std::string& name) {
    if (name == "h36m17") return h36m17_skeleton();
    throw std::invalid_argument("unknown builtin skeleton '" + name + "'");
}

} // namespace graphdiff
