#pragma once

#include "graphdiff/common.hpp"
#include "graphdiff/evaluation.hpp"
#include "graphdiff/skeleton.hpp"
#include "graphdiff/training.hpp"

#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace graphdiff {

struct NormalizationSpec {
    double image_width = 1000.0;
    double image_height = 1000.0;
    double pose_scale_mm = 1000.0;
    int root_index = 0;
};

inline void validate(const NormalizationSpec& n) {
    if (n.image_width <= 0.0 || n.image_height <= 0.0)
        throw std::invalid_argument("normalization: image size must be positive");
    if (n.pose_scale_mm <= 0.0)
        throw std::invalid_argument("normalization: pose_scale_mm must be positive");
    if (n.root_index < 0) throw std::invalid_argument("normalization: root_index must be >= 0");
}

/// Pixel coordinates to width-normalized coordinates: x spans [-1, 1]
/// across the image width and y uses the same scale, preserving aspect.
inline Detection2D normalize_2d(const Detection2D& kp_px, const NormalizationSpec& n) {
    validate(n);
    Detection2D out(kp_px.rows(), 2);
    out.col(0) = 2.0 * kp_px.col(0) / n.image_width - Vec::Ones(kp_px.rows());
    out.col(1) = (2.0 * kp_px.col(1) - Vec::Constant(kp_px.rows(), n.image_height)) / n.image_width;
    return out;
}

inline Detection2D denormalize_2d(const Detection2D& kp_norm, const NormalizationSpec& n) {
    validate(n);
    Detection2D out(kp_norm.rows(), 2);
    out.col(0) = (kp_norm.col(0) + Vec::Ones(kp_norm.rows())) * (n.image_width / 2.0);
    out.col(1) = (kp_norm.col(1) * n.image_width + Vec::Constant(kp_norm.rows(), n.image_height)) / 2.0;
    return out;
}

/// Millimetre joints to the root-relative, unit-scaled frame the model
/// works in.
inline Pose3D normalize_3d(const Pose3D& joints_mm, const NormalizationSpec& n) {
    validate(n);
    if (n.root_index >= joints_mm.rows())
        throw std::invalid_argument("normalize_3d: root index out of range");
    return (joints_mm.rowwise() - joints_mm.row(n.root_index)) / n.pose_scale_mm;
}

/// Back to millimetres. The result is root-relative; the absolute root
/// position is not recoverable.
inline Pose3D denormalize_3d(const Pose3D& pose_norm, const NormalizationSpec& n) {
    validate(n);
    return pose_norm * n.pose_scale_mm;
}

struct PoseItem {
    Detection2D kp;  // pixel coordinates, J x 2
    Pose3D joints_mm; // absolute camera-frame joints, J x 3; NaN rows when absent
    bool has_gt = true;
    int action = 0;
    int subject = 0;
};

struct PoseDataset {
    int num_joints = 0;
    NormalizationSpec norm;
    std::map<std::string, std::vector<PoseItem>> splits;
    std::map<int, std::string> actions;
    std::map<int, std::string> subjects;
};

namespace detail {

constexpr char kPoseMagic[4] = {'P', '3', 'D', 'S'};
constexpr std::uint32_t kPoseVersion = 1;

inline void put_u32(std::string& buf, std::uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xff);
    b[1] = static_cast<char>((v >> 8) & 0xff);
    b[2] = static_cast<char>((v >> 16) & 0xff);
    b[3] = static_cast<char>((v >> 24) & 0xff);
    buf.append(b, 4);
}

inline void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct ByteReader {
    const std::string& data;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > data.size()) throw MismatchError("pose file truncated");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]);
        pos += 4;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

} // namespace detail

/// Serializes one split to the binary pose format: a fixed header
/// (magic, version, item count, joint count) followed by per-item
/// little-endian f32 records of keypoints, joints (NaN when no ground
/// truth), action id and subject id.
inline std::string serialize_split(const std::vector<PoseItem>& items, int num_joints) {
    std::string buf;
    buf.append(detail::kPoseMagic, 4);
    detail::put_u32(buf, detail::kPoseVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(items.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(num_joints));
    const float nan = std::numeric_limits<float>::quiet_NaN();
    for (const auto& it : items) {
        if (it.kp.rows() != num_joints || (it.has_gt && it.joints_mm.rows() != num_joints))
            throw std::invalid_argument("serialize_split: joint count mismatch");
        for (int j = 0; j < num_joints; ++j)
            for (int c = 0; c < 2; ++c) detail::put_f32(buf, static_cast<float>(it.kp(j, c)));
        for (int j = 0; j < num_joints; ++j)
            for (int c = 0; c < 3; ++c)
                detail::put_f32(buf, it.has_gt ? static_cast<float>(it.joints_mm(j, c)) : nan);
        detail::put_f32(buf, static_cast<float>(it.action));
        detail::put_f32(buf, static_cast<float>(it.subject));
    }
    return buf;
}

inline std::vector<PoseItem> parse_split(const std::string& data, int expect_joints = -1) {
    detail::ByteReader r{data};
    if (data.size() < 16 || std::memcmp(data.data(), detail::kPoseMagic, 4) != 0)
        throw MismatchError("pose file: bad magic");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != detail::kPoseVersion)
        throw MismatchError("pose file: unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    const std::uint32_t j = r.u32();
    if (j == 0) throw MismatchError("pose file: zero joints");
    if (expect_joints >= 0 && static_cast<std::uint32_t>(expect_joints) != j)
        throw MismatchError("pose file: joint count mismatch");
    const std::size_t record = (static_cast<std::size_t>(j) * 5 + 2) * 4;
    if (data.size() - r.pos != record * count)
        throw MismatchError("pose file: size does not match item count");
    std::vector<PoseItem> items(count);
    for (auto& it : items) {
        it.kp.resize(j, 2);
        it.joints_mm.resize(j, 3);
        for (std::uint32_t k = 0; k < j; ++k)
            for (int c = 0; c < 2; ++c) it.kp(k, c) = r.f32();
        for (std::uint32_t k = 0; k < j; ++k)
            for (int c = 0; c < 3; ++c) it.joints_mm(k, c) = r.f32();
        it.has_gt = !std::isnan(it.joints_mm(0, 0));
        it.action = static_cast<int>(r.f32());
        it.subject = static_cast<int>(r.f32());
    }
    return items;
}

namespace detail {

inline std::string id_map_to_text(const std::map<int, std::string>& m) {
    std::ostringstream os;
    for (const auto& [id, name] : m) os << id << '\t' << name << '\n';
    return os.str();
}

inline std::map<int, std::string> id_map_from_text(const std::string& text) {
    std::map<int, std::string> m;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw MismatchError("id map: missing tab separator");
        m[std::stoi(line.substr(0, tab))] = line.substr(tab + 1);
    }
    return m;
}

} // namespace detail

/// Writes a dataset directory: `meta` (key/value text), `actions` and
/// `subjects` (tab-separated id maps) and one `<split>.p3ds` binary per
/// split. Every file is written atomically.
inline void save_dataset(const std::filesystem::path& dir, const PoseDataset& ds) {
    std::ostringstream meta;
    meta << "format p3ds\n";
    meta << "version " << detail::kPoseVersion << "\n";
    meta << "joints " << ds.num_joints << "\n";
    meta << "image_width " << ds.norm.image_width << "\n";
    meta << "image_height " << ds.norm.image_height << "\n";
    meta << "pose_scale_mm " << ds.norm.pose_scale_mm << "\n";
    meta << "root_index " << ds.norm.root_index << "\n";
    atomic_write_file(dir / "meta", meta.str());
    atomic_write_file(dir / "actions", detail::id_map_to_text(ds.actions));
    atomic_write_file(dir / "subjects", detail::id_map_to_text(ds.subjects));
    for (const auto& [name, items] : ds.splits) {
        if (name.empty() || name.find('/') != std::string::npos)
            throw std::invalid_argument("save_dataset: bad split name '" + name + "'");
        atomic_write_file(dir / (name + ".p3ds"), serialize_split(items, ds.num_joints));
    }
}

inline PoseDataset load_dataset(const std::filesystem::path& dir) {
    PoseDataset ds;
    std::istringstream meta(read_file(dir / "meta"));
    std::string line;
    std::map<std::string, std::string> kv;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw MismatchError("meta: malformed line '" + line + "'");
        kv[line.substr(0, sp)] = line.substr(sp + 1);
    }
    if (kv["format"] != "p3ds") throw MismatchError("meta: not a pose dataset");
    ds.num_joints = std::stoi(kv.at("joints"));
    ds.norm.image_width = std::stod(kv.at("image_width"));
    ds.norm.image_height = std::stod(kv.at("image_height"));
    ds.norm.pose_scale_mm = std::stod(kv.at("pose_scale_mm"));
    ds.norm.root_index = std::stoi(kv.at("root_index"));
    ds.actions = detail::id_map_from_text(read_file(dir / "actions"));
    if (std::filesystem::exists(dir / "subjects"))
        ds.subjects = detail::id_map_from_text(read_file(dir / "subjects"));
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".p3ds") continue;
        ds.splits[entry.path().stem().string()] =
            parse_split(read_file(entry.path()), ds.num_joints);
    }
    if (ds.splits.empty()) throw MismatchError("load_dataset: no splits in " + dir.string());
    return ds;
}

/// CSV rows: action, subject, 2J keypoint values, then either 3J joint
/// values in millimetres or nothing (no ground truth). A non-numeric
/// first line is treated as a header and skipped.
inline std::vector<PoseItem> import_pose_csv(std::istream& is, int num_joints) {
    if (num_joints < 1) throw std::invalid_argument("import_pose_csv: bad joint count");
    std::vector<PoseItem> items;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (first) {
            first = false;
            char* end = nullptr;
            std::strtod(fields[0].c_str(), &end);
            if (end == fields[0].c_str()) continue; // header
        }
        const std::size_t base = 2 + static_cast<std::size_t>(num_joints) * 2;
        const std::size_t full = base + static_cast<std::size_t>(num_joints) * 3;
        if (fields.size() != base && fields.size() != full)
            throw MismatchError("csv: expected " + std::to_string(base) + " or " +
                                     std::to_string(full) + " fields, got " +
                                     std::to_string(fields.size()));
        PoseItem it;
        it.action = std::stoi(fields[0]);
        it.subject = std::stoi(fields[1]);
        it.kp.resize(num_joints, 2);
        for (int j = 0; j < num_joints; ++j)
            for (int c = 0; c < 2; ++c)
                it.kp(j, c) = std::stod(fields[2 + static_cast<std::size_t>(j) * 2 + static_cast<std::size_t>(c)]);
        it.joints_mm = Pose3D::Constant(num_joints, 3, std::numeric_limits<double>::quiet_NaN());
        it.has_gt = fields.size() == full;
        if (it.has_gt)
            for (int j = 0; j < num_joints; ++j)
                for (int c = 0; c < 3; ++c)
                    it.joints_mm(j, c) =
                        std::stod(fields[base + static_cast<std::size_t>(j) * 3 + static_cast<std::size_t>(c)]);
        items.push_back(std::move(it));
    }
    return items;
}

/// Fixed bone lengths and rest directions for pose synthesis, indexed
/// like the skeleton's edge list.
struct BonePlan {
    std::vector<double> length_mm;
    std::vector<Eigen::Vector3d> rest_dir;
};

inline BonePlan default_bone_plan(const SkeletonSpec& spec) {
    BonePlan plan;
    const std::size_t e = spec.edges.size();
    plan.length_mm.resize(e);
    plan.rest_dir.resize(e);
    if (spec.name == "h36m17") {
        const double len[] = {132, 442, 454, 132, 442, 454, 233, 257,
                              121, 115, 151, 279, 252, 151, 279, 252};
        const double dir[][3] = {{1, 0, 0},  {0, 1, 0},  {0, 1, 0},  {-1, 0, 0},
                                 {0, 1, 0},  {0, 1, 0},  {0, -1, 0}, {0, -1, 0},
                                 {0, -1, 0}, {0, -1, 0}, {-1, 0, 0}, {-1, 0, 0},
                                 {-1, 0, 0}, {1, 0, 0},  {1, 0, 0},  {1, 0, 0}};
        for (std::size_t i = 0; i < e; ++i) {
            plan.length_mm[i] = len[i];
            plan.rest_dir[i] = Eigen::Vector3d(dir[i][0], dir[i][1], dir[i][2]);
        }
        return plan;
    }
    for (std::size_t i = 0; i < e; ++i) {
        plan.length_mm[i] = 250.0;
        Rng rng = Rng::substream(0x626f6e65ULL, static_cast<std::uint64_t>(i)); // "bone"
        Eigen::Vector3d d;
        do {
            d = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        } while (d.norm() < 1e-3);
        plan.rest_dir[i] = d.normalized();
    }
    return plan;
}

struct SynthConfig {
    SkeletonSpec skeleton;
    int num_items = 256;
    std::uint64_t seed = 0;
    double noise_std_px = 0.0;
    double focal_px = 1100.0;
    double image_width = 1000.0;
    double image_height = 1000.0;
    double pose_scale_mm = 1000.0;
    Eigen::Vector3d root_position_mm = Eigen::Vector3d(0.0, 0.0, 4500.0);
    double max_rotation_rad = 0.35;
    std::vector<std::string> actions = {"Swing", "Reach", "Crouch", "Wave"};
    std::vector<std::string> subjects = {"S1", "S2", "S3", "S4"};
    std::vector<std::string> test_subjects = {"S4"};
};

namespace detail {

constexpr std::uint64_t kStreamSynth = 0x73796e74ULL; // "synt"

struct TreeEdge {
    int parent, child;
    std::size_t edge_index;
};

/// BFS edge order from the root; errors if the edge set does not reach
/// every joint.
inline std::vector<TreeEdge> bfs_edges(const SkeletonSpec& spec) {
    std::vector<std::vector<std::pair<int, std::size_t>>> adj(static_cast<std::size_t>(spec.num_joints));
    for (std::size_t i = 0; i < spec.edges.size(); ++i) {
        adj[static_cast<std::size_t>(spec.edges[i].first)].push_back({spec.edges[i].second, i});
        adj[static_cast<std::size_t>(spec.edges[i].second)].push_back({spec.edges[i].first, i});
    }
    std::vector<TreeEdge> order;
    std::vector<bool> seen(static_cast<std::size_t>(spec.num_joints), false);
    std::deque<int> queue{spec.root_index};
    seen[static_cast<std::size_t>(spec.root_index)] = true;
    while (!queue.empty()) {
        const int node = queue.front();
        queue.pop_front();
        for (const auto& [next, ei] : adj[static_cast<std::size_t>(node)]) {
            if (seen[static_cast<std::size_t>(next)]) continue;
            seen[static_cast<std::size_t>(next)] = true;
            order.push_back({node, next, ei});
            queue.push_back(next);
        }
    }
    if (order.size() + 1 != static_cast<std::size_t>(spec.num_joints))
        throw std::invalid_argument("synth: skeleton is not connected");
    return order;
}

inline Mat rodrigues(const Eigen::Vector3d& axis, double angle) {
    Mat k = Mat::Zero(3, 3);
    k(0, 1) = -axis.z();
    k(0, 2) = axis.y();
    k(1, 0) = axis.z();
    k(1, 2) = -axis.x();
    k(2, 0) = -axis.y();
    k(2, 1) = axis.x();
    return Mat::Identity(3, 3) + std::sin(angle) * k + (1.0 - std::cos(angle)) * (k * k);
}

} // namespace detail

/// Perspective projection with the principal point at the image center.
inline Detection2D project_points(const Pose3D& joints_mm, double focal_px, double width,
                                  double height) {
    Detection2D out(joints_mm.rows(), 2);
    for (Eigen::Index j = 0; j < joints_mm.rows(); ++j) {
        const double z = joints_mm(j, 2);
        if (z <= 1e-6) throw std::invalid_argument("project_points: point behind camera");
        out(j, 0) = focal_px * joints_mm(j, 0) / z + width / 2.0;
        out(j, 1) = focal_px * joints_mm(j, 1) / z + height / 2.0;
    }
    return out;
}

/// Deterministic synthetic dataset: poses grown from a rest skeleton by
/// bounded per-bone rotations composed along the tree, placed at a
/// fixed root in front of a pinhole camera. With zero keypoint noise
/// the detections are exact projections of the 3D joints.
inline PoseDataset synth_toy_dataset(const SynthConfig& cfg) {
    if (cfg.num_items < 1) throw std::invalid_argument("synth: num_items must be >= 1");
    if (cfg.actions.empty() || cfg.subjects.empty())
        throw std::invalid_argument("synth: need at least one action and subject");
    if (cfg.max_rotation_rad < 0.0 || cfg.max_rotation_rad > kPi)
        throw std::invalid_argument("synth: max_rotation_rad out of range");
    const auto tree = detail::bfs_edges(cfg.skeleton);
    const BonePlan plan = default_bone_plan(cfg.skeleton);
    const int j = cfg.skeleton.num_joints;

    PoseDataset ds;
    ds.num_joints = j;
    ds.norm.image_width = cfg.image_width;
    ds.norm.image_height = cfg.image_height;
    ds.norm.pose_scale_mm = cfg.pose_scale_mm;
    ds.norm.root_index = cfg.skeleton.root_index;
    for (std::size_t a = 0; a < cfg.actions.size(); ++a) ds.actions[static_cast<int>(a)] = cfg.actions[a];
    for (std::size_t s = 0; s < cfg.subjects.size(); ++s) ds.subjects[static_cast<int>(s)] = cfg.subjects[s];

    std::set<int> test_ids;
    for (const auto& name : cfg.test_subjects)
        for (const auto& [id, sname] : ds.subjects)
            if (sname == name) test_ids.insert(id);

    for (int i = 0; i < cfg.num_items; ++i) {
        Rng rng = Rng::substream(cfg.seed, detail::kStreamSynth, static_cast<std::uint64_t>(i));
        PoseItem item;
        item.action = static_cast<int>(i % static_cast<int>(cfg.actions.size()));
        item.subject = static_cast<int>((i / static_cast<int>(cfg.actions.size())) %
                                        static_cast<int>(cfg.subjects.size()));
        item.joints_mm.resize(j, 3);
        item.joints_mm.row(cfg.skeleton.root_index) = cfg.root_position_mm.transpose();
        std::vector<Mat> frame(static_cast<std::size_t>(j));
        frame[static_cast<std::size_t>(cfg.skeleton.root_index)] = Mat::Identity(3, 3);
        for (const auto& edge : tree) {
            Eigen::Vector3d axis;
            do {
                axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
            } while (axis.norm() < 1e-3);
            axis.normalize();
            const double angle = rng.uniform(-cfg.max_rotation_rad, cfg.max_rotation_rad);
            const Mat rot = frame[static_cast<std::size_t>(edge.parent)] * detail::rodrigues(axis, angle);
            frame[static_cast<std::size_t>(edge.child)] = rot;
            item.joints_mm.row(edge.child) =
                item.joints_mm.row(edge.parent) +
                (rot * (plan.length_mm[edge.edge_index] * plan.rest_dir[edge.edge_index])).transpose();
        }
        item.kp = project_points(item.joints_mm, cfg.focal_px, cfg.image_width, cfg.image_height);
        if (cfg.noise_std_px > 0.0)
            item.kp += cfg.noise_std_px * rng.normal_matrix(j, 2);
        item.has_gt = true;
        const bool is_test = test_ids.count(item.subject) > 0;
        ds.splits[is_test ? "test" : "train"].push_back(std::move(item));
    }
    return ds;
}

/// Splits items by subject id; subjects in `test_subjects` go to the
/// test split, everything else to train.
inline std::map<std::string, std::vector<PoseItem>> split_by_subject(
    const std::vector<PoseItem>& items, const std::set<int>& test_subjects) {
    std::map<std::string, std::vector<PoseItem>> splits;
    for (const auto& it : items)
        splits[test_subjects.count(it.subject) ? "test" : "train"].push_back(it);
    return splits;
}

/// Normalized (pose, detection) pairs for training. Items without
/// ground truth are skipped.
inline std::vector<TrainingPair> make_training_pairs(const std::vector<PoseItem>& items,
                                                     const NormalizationSpec& norm) {
    std::vector<TrainingPair> pairs;
    pairs.reserve(items.size());
    for (const auto& it : items) {
        if (!it.has_gt) continue;
        pairs.push_back({normalize_3d(it.joints_mm, norm), normalize_2d(it.kp, norm)});
    }
    return pairs;
}

/// Evaluation items: normalized detections plus millimetre ground
/// truth. Items without ground truth are skipped.
inline std::vector<EvalItem> make_eval_items(const std::vector<PoseItem>& items,
                                             const NormalizationSpec& norm) {
    std::vector<EvalItem> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        if (!it.has_gt) continue;
        out.push_back({normalize_2d(it.kp, norm), it.joints_mm, it.action, it.subject});
    }
    return out;
}

} // namespace graphdiff
