#include <graphdiff/data.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace graphdiff;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("graphdiff_data_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<PoseItem> sample_items(int n, int joints, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PoseItem> items;
    for (int i = 0; i < n; ++i) {
        PoseItem it;
        it.kp = 500.0 * rng.normal_matrix(joints, 2);
        it.joints_mm = 1000.0 * rng.normal_matrix(joints, 3);
        it.joints_mm.col(2).array() += 4000.0;
        it.has_gt = i % 3 != 2;
        it.action = i % 2;
        it.subject = i % 4;
        items.push_back(std::move(it));
    }
    return items;
}

} // namespace

TEST(Data, Normalize2dHandValues) {
    NormalizationSpec n;
    n.image_width = 1000.0;
    n.image_height = 1000.0;
    Detection2D px(3, 2);
    px << 0, 0, 500, 500, 1000, 1000;
    Detection2D norm = normalize_2d(px, n);
    EXPECT_DOUBLE_EQ(norm(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(norm(0, 1), -1.0);
    EXPECT_DOUBLE_EQ(norm(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(norm(1, 1), 0.0);
    EXPECT_DOUBLE_EQ(norm(2, 0), 1.0);
    EXPECT_DOUBLE_EQ(norm(2, 1), 1.0);

    // non-square image: both axes divide by width, preserving aspect
    NormalizationSpec wide;
    wide.image_width = 2000.0;
    wide.image_height = 1000.0;
    Detection2D corner(1, 2);
    corner << 2000, 1000;
    Detection2D w = normalize_2d(corner, wide);
    EXPECT_DOUBLE_EQ(w(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(w(0, 1), 0.5);

    Detection2D back = denormalize_2d(w, wide);
    EXPECT_TRUE(back.isApprox(corner, 1e-12));
}

TEST(Data, Normalize3dRootRelativeScaled) {
    NormalizationSpec n;
    n.pose_scale_mm = 1000.0;
    n.root_index = 1;
    Pose3D joints(3, 3);
    joints << 100, 0, 4000, 0, 0, 4500, -250, 500, 5000;
    Pose3D norm = normalize_3d(joints, n);
    EXPECT_TRUE(norm.row(1).isZero(0.0));
    EXPECT_DOUBLE_EQ(norm(0, 0), 0.1);
    EXPECT_DOUBLE_EQ(norm(2, 1), 0.5);
    EXPECT_DOUBLE_EQ(norm(2, 2), 0.5);

    Pose3D back = denormalize_3d(norm, n);
    Pose3D expected = joints.rowwise() - joints.row(1);
    EXPECT_TRUE(back.isApprox(expected, 1e-12));

    n.root_index = 5;
    EXPECT_THROW(normalize_3d(joints, n), std::invalid_argument);
    NormalizationSpec bad;
    bad.pose_scale_mm = 0.0;
    EXPECT_THROW(normalize_3d(joints, bad), std::invalid_argument);
}

TEST(Data, SplitRoundTrip) {
    auto items = sample_items(7, 5, 1);
    std::string blob = serialize_split(items, 5);
    auto parsed = parse_split(blob, 5);
    ASSERT_EQ(parsed.size(), items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        EXPECT_TRUE(parsed[i].kp.isApprox(items[i].kp, 1e-5));
        EXPECT_EQ(parsed[i].has_gt, items[i].has_gt);
        if (items[i].has_gt) EXPECT_TRUE(parsed[i].joints_mm.isApprox(items[i].joints_mm, 1e-5));
        EXPECT_EQ(parsed[i].action, items[i].action);
        EXPECT_EQ(parsed[i].subject, items[i].subject);
    }
}

TEST(Data, SplitParseRejectsCorruption) {
    auto items = sample_items(3, 4, 2);
    std::string good = serialize_split(items, 4);

    std::string bad_magic = good;
    bad_magic[0] = 'Q';
    EXPECT_THROW(parse_split(bad_magic), MismatchError);

    std::string bad_version = good;
    bad_version[4] = 3;
    EXPECT_THROW(parse_split(bad_version), MismatchError);

    EXPECT_THROW(parse_split(good.substr(0, good.size() - 4)), MismatchError);
    EXPECT_THROW(parse_split(good + "xx"), MismatchError);
    EXPECT_THROW(parse_split(good.substr(0, 10)), MismatchError);
    EXPECT_THROW(parse_split(good, 9), MismatchError);
    EXPECT_NO_THROW(parse_split(good, 4));
    EXPECT_NO_THROW(parse_split(good, -1));

    PoseItem wrong;
    wrong.kp = Detection2D::Zero(3, 2);
    wrong.joints_mm = Pose3D::Zero(3, 3);
    EXPECT_THROW(serialize_split({wrong}, 4), std::invalid_argument);
}

TEST(Data, DatasetDirectoryRoundTrip) {
    fs::path dir = temp_dir("roundtrip");
    PoseDataset ds;
    ds.num_joints = 5;
    ds.norm.image_width = 640.0;
    ds.norm.image_height = 480.0;
    ds.norm.pose_scale_mm = 900.0;
    ds.norm.root_index = 2;
    ds.splits["train"] = sample_items(6, 5, 3);
    ds.splits["test"] = sample_items(2, 5, 4);
    ds.actions = {{0, "Walk"}, {1, "Sit"}};
    ds.subjects = {{0, "S1"}, {1, "S2"}};

    save_dataset(dir, ds);
    PoseDataset back = load_dataset(dir);
    EXPECT_EQ(back.num_joints, 5);
    EXPECT_DOUBLE_EQ(back.norm.image_width, 640.0);
    EXPECT_DOUBLE_EQ(back.norm.image_height, 480.0);
    EXPECT_DOUBLE_EQ(back.norm.pose_scale_mm, 900.0);
    EXPECT_EQ(back.norm.root_index, 2);
    ASSERT_EQ(back.splits.size(), 2u);
    EXPECT_EQ(back.splits.at("train").size(), 6u);
    EXPECT_EQ(back.splits.at("test").size(), 2u);
    EXPECT_EQ(back.actions.at(1), "Sit");
    EXPECT_EQ(back.subjects.at(0), "S1");
    EXPECT_TRUE(back.splits.at("train")[0].kp.isApprox(ds.splits.at("train")[0].kp, 1e-5));

    EXPECT_THROW(load_dataset(dir / "missing"), IoError);

    PoseDataset bad = ds;
    bad.splits["a/b"] = {};
    EXPECT_THROW(save_dataset(dir, bad), std::invalid_argument);
    fs::remove_all(dir);
}

TEST(Data, LoadRejectsMalformedMeta) {
    fs::path dir = temp_dir("badmeta");
    atomic_write_file(dir / "meta", "format notpose\njoints 4\n");
    atomic_write_file(dir / "actions", "");
    EXPECT_THROW(load_dataset(dir), MismatchError);
    fs::remove_all(dir);
}

TEST(Data, CsvImport) {
    const std::string csv =
        "action,subject,u0,v0,u1,v1,x0,y0,z0,x1,y1,z1\n"
        "0,1,10,20,30,40,1,2,3,4,5,6\n"
        "1,0,50,60,70,80\n";
    std::istringstream is(csv);
    auto items = import_pose_csv(is, 2);
    ASSERT_EQ(items.size(), 2u);
    EXPECT_TRUE(items[0].has_gt);
    EXPECT_EQ(items[0].action, 0);
    EXPECT_EQ(items[0].subject, 1);
    EXPECT_DOUBLE_EQ(items[0].kp(1, 0), 30.0);
    EXPECT_DOUBLE_EQ(items[0].joints_mm(1, 2), 6.0);
    EXPECT_FALSE(items[1].has_gt);
    EXPECT_DOUBLE_EQ(items[1].kp(0, 1), 60.0);
    EXPECT_TRUE(std::isnan(items[1].joints_mm(0, 0)));

    // a no-header file whose first row starts with a number
    std::istringstream noheader("3,2,1,2,3,4\n");
    auto nh = import_pose_csv(noheader, 2);
    ASSERT_EQ(nh.size(), 1u);
    EXPECT_EQ(nh[0].action, 3);

    std::istringstream bad("0,1,10,20\n");
    EXPECT_THROW(import_pose_csv(bad, 2), MismatchError);
    std::istringstream empty_ok("");
    EXPECT_TRUE(import_pose_csv(empty_ok, 2).empty());
    std::istringstream any("0,1,1,2\n");
    EXPECT_THROW(import_pose_csv(any, 0), std::invalid_argument);
}

TEST(Data, ProjectPointsPinhole) {
    Pose3D joints(2, 3);
    joints << 0, 0, 1000, 100, -50, 2000;
    Detection2D kp = project_points(joints, 1100.0, 1000.0, 800.0);
    EXPECT_DOUBLE_EQ(kp(0, 0), 500.0); // optical axis hits the image center
    EXPECT_DOUBLE_EQ(kp(0, 1), 400.0);
    EXPECT_DOUBLE_EQ(kp(1, 0), 1100.0 * 100.0 / 2000.0 + 500.0);
    EXPECT_DOUBLE_EQ(kp(1, 1), 1100.0 * -50.0 / 2000.0 + 400.0);

    Pose3D behind(1, 3);
    behind << 0, 0, -10;
    EXPECT_THROW(project_points(behind, 1100.0, 1000.0, 800.0), std::invalid_argument);
}

TEST(Data, SynthItemsRespectBonePlanAndCamera) {
    SynthConfig cfg;
    cfg.skeleton = h36m17_skeleton();
    cfg.num_items = 12;
    cfg.seed = 5;
    PoseDataset ds = synth_toy_dataset(cfg);
    EXPECT_EQ(ds.num_joints, 17);

    const BonePlan plan = default_bone_plan(cfg.skeleton);
    int total = 0;
    for (const auto& [split, items] : ds.splits) {
        for (const auto& it : items) {
            ++total;
            ASSERT_TRUE(it.has_gt);
            EXPECT_TRUE(it.joints_mm.row(0).transpose().isApprox(cfg.root_position_mm, 1e-9));
            for (std::size_t e = 0; e < cfg.skeleton.edges.size(); ++e) {
                const auto& [a, b] = cfg.skeleton.edges[e];
                const double len = (it.joints_mm.row(a) - it.joints_mm.row(b)).norm();
                EXPECT_NEAR(len, plan.length_mm[e], 1e-9);
            }
            // zero detector noise: keypoints are exact projections
            Detection2D proj =
                project_points(it.joints_mm, cfg.focal_px, cfg.image_width, cfg.image_height);
            EXPECT_TRUE(it.kp.isApprox(proj, 1e-12));
        }
    }
    EXPECT_EQ(total, 12);
}

TEST(Data, SynthDeterministicAndNoiseSensitive) {
    SynthConfig cfg;
    cfg.skeleton = h36m17_skeleton();
    cfg.num_items = 6;
    cfg.seed = 9;
    PoseDataset a = synth_toy_dataset(cfg);
    PoseDataset b = synth_toy_dataset(cfg);
    ASSERT_EQ(a.splits.at("train").size(), b.splits.at("train").size());
    for (std::size_t i = 0; i < a.splits.at("train").size(); ++i)
        EXPECT_TRUE(
            a.splits.at("train")[i].joints_mm.isApprox(b.splits.at("train")[i].joints_mm, 0.0));

    cfg.noise_std_px = 2.0;
    PoseDataset noisy = synth_toy_dataset(cfg);
    const auto& clean0 = a.splits.at("train")[0];
    const auto& noisy0 = noisy.splits.at("train")[0];
    EXPECT_TRUE(noisy0.joints_mm.isApprox(clean0.joints_mm, 0.0)); // noise is on detections only
    EXPECT_FALSE(noisy0.kp.isApprox(clean0.kp, 1e-9));
    Detection2D proj =
        project_points(noisy0.joints_mm, cfg.focal_px, cfg.image_width, cfg.image_height);
    EXPECT_FALSE(noisy0.kp.isApprox(proj, 1e-9));
}

TEST(Data, SynthActionSubjectAssignment) {
    SynthConfig cfg;
    cfg.skeleton = h36m17_skeleton();
    cfg.num_items = 32;
    PoseDataset ds = synth_toy_dataset(cfg);
    // subjects cycle every actions.size() items; S4 (id 3) is the test split
    int train_count = 0, test_count = 0;
    for (const auto& it : ds.splits.at("train")) {
        EXPECT_NE(it.subject, 3);
        ++train_count;
    }
    for (const auto& it : ds.splits.at("test")) {
        EXPECT_EQ(it.subject, 3);
        ++test_count;
    }
    EXPECT_EQ(train_count + test_count, 32);
    EXPECT_EQ(test_count, 8);
    EXPECT_EQ(ds.actions.size(), 4u);
    EXPECT_EQ(ds.subjects.size(), 4u);
    EXPECT_EQ(ds.splits.at("train")[0].action, 0);
    EXPECT_EQ(ds.splits.at("train")[1].action, 1);
}

TEST(Data, SynthRejectsDisconnectedSkeleton) {
    SynthConfig cfg;
    cfg.skeleton = build_skeleton(3, {{0, 1}}, {}, 0);
    EXPECT_THROW(synth_toy_dataset(cfg), std::invalid_argument);
    cfg.skeleton = h36m17_skeleton();
    cfg.num_items = 0;
    EXPECT_THROW(synth_toy_dataset(cfg), std::invalid_argument);
}

TEST(Data, SplitBySubjectAndPairBuilders) {
    auto items = sample_items(8, 4, 11); // subjects cycle 0..3, has_gt false on i%3==2
    auto splits = split_by_subject(items, {1, 3});
    ASSERT_EQ(splits.at("train").size(), 4u);
    ASSERT_EQ(splits.at("test").size(), 4u);
    for (const auto& it : splits.at("test")) EXPECT_TRUE(it.subject == 1 || it.subject == 3);

    NormalizationSpec n;
    auto pairs = make_training_pairs(items, n);
    auto evals = make_eval_items(items, n);
    std::size_t with_gt = 0;
    for (const auto& it : items)
        if (it.has_gt) ++with_gt;
    EXPECT_EQ(pairs.size(), with_gt);
    EXPECT_EQ(evals.size(), with_gt);
    EXPECT_LT(with_gt, items.size());

    // pairs are normalized: root row of the pose is zero
    for (const auto& p : pairs) EXPECT_TRUE(p.x0.row(0).isZero(1e-12));
    // eval items keep the millimetre ground truth
    EXPECT_TRUE(evals[0].gt_mm.isApprox(items[0].joints_mm, 0.0));
}
