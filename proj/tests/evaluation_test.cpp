#include <graphdiff/evaluation.hpp>

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <map>
#include <sstream>
#include <string>

using namespace graphdiff;

namespace {

Mat random_rotation(Rng& rng) {
    Vec axis(3);
    axis << rng.normal(), rng.normal(), rng.normal();
    axis.normalize();
    const double angle = rng.uniform() * 2.0 * kPi - kPi;
    return Eigen::AngleAxisd(angle, Eigen::Vector3d(axis)).toRotationMatrix();
}

Pose3D random_pose_mm(Rng& rng, int joints = 17) {
    return 400.0 * rng.normal_matrix(joints, 3);
}

struct ZeroNet {
    Pose3D operator()(const Pose3D& x, int, const Detection2D&) const {
        return Pose3D::Zero(x.rows(), 3);
    }
};

} // namespace

TEST(Evaluation, RootRelative) {
    Pose3D p(3, 3);
    p << 1, 2, 3, 4, 5, 6, 7, 8, 9;
    Pose3D rel = root_relative(p, 1);
    EXPECT_TRUE(rel.row(1).isZero(0.0));
    EXPECT_DOUBLE_EQ(rel(0, 0), -3.0);
    EXPECT_DOUBLE_EQ(rel(2, 2), 3.0);
    EXPECT_THROW(root_relative(p, 3), std::invalid_argument);
    EXPECT_THROW(root_relative(p, -1), std::invalid_argument);
}

TEST(Evaluation, MpjpeHandValues) {
    Pose3D gt = Pose3D::Zero(2, 3);
    Pose3D pred(2, 3);
    pred << 3, 0, 0, 0, 4, 0;
    EXPECT_DOUBLE_EQ(mpjpe(pred, gt), 3.5);
    EXPECT_DOUBLE_EQ(mpjpe(gt, gt), 0.0);
    EXPECT_THROW(mpjpe(pred, Pose3D::Zero(3, 3)), std::invalid_argument);
    EXPECT_THROW(mpjpe(Pose3D(0, 3), Pose3D(0, 3)), std::invalid_argument);
}

TEST(Evaluation, ProcrustesRecoversSimilarityTransform) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Pose3D gt = random_pose_mm(rng);
        const double s = 0.5 + 1.5 * rng.uniform();
        Mat r = random_rotation(rng);
        Eigen::RowVector3d tau(rng.uniform() * 1000.0 - 500.0, rng.uniform() * 1000.0 - 500.0,
                               rng.uniform() * 1000.0 - 500.0);
        Pose3D pred = (s * (gt * r.transpose())).rowwise() + tau;

        ProcrustesResult res = procrustes_align(pred, gt);
        EXPECT_FALSE(res.degenerate);
        EXPECT_NEAR(res.scale, 1.0 / s, 1e-9);
        EXPECT_NEAR(res.rotation.determinant(), 1.0, 1e-9);
        EXPECT_LT(mpjpe(res.apply(pred), gt), 1e-6);
        EXPECT_LT(p_mpjpe(pred, gt), 1e-6);
    }
}

TEST(Evaluation, ProcrustesWithoutScale) {
    Rng rng(8);
    Pose3D gt = random_pose_mm(rng);
    Mat r = random_rotation(rng);
    Pose3D pred = 2.0 * (gt * r.transpose());

    ProcrustesResult rigid = procrustes_align(pred, gt, false);
    EXPECT_DOUBLE_EQ(rigid.scale, 1.0);
    // rotation-only can't undo the doubling
    EXPECT_GT(mpjpe(rigid.apply(pred), gt), 1.0);
    EXPECT_LT(p_mpjpe(pred, gt, true), p_mpjpe(pred, gt, false));

    // without the scale mismatch the rigid fit is exact
    Pose3D pred_rigid = (gt * r.transpose()).rowwise() + Eigen::RowVector3d(10, -5, 3);
    EXPECT_LT(p_mpjpe(pred_rigid, gt, false), 1e-6);
}

TEST(Evaluation, ProcrustesHandlesReflection) {
    Rng rng(9);
    Pose3D gt = random_pose_mm(rng);
    Pose3D pred = gt;
    pred.col(0) = -pred.col(0); // mirrored prediction
    ProcrustesResult res = procrustes_align(pred, gt);
    EXPECT_NEAR(res.rotation.determinant(), 1.0, 1e-9); // proper rotation enforced
    // a mirror is not reachable, so residual error stays
    EXPECT_GT(mpjpe(res.apply(pred), gt), 1.0);
}

TEST(Evaluation, ProcrustesDegenerateCases) {
    Pose3D gt(4, 3);
    gt << 0, 0, 0, 100, 0, 0, 0, 100, 0, 0, 0, 100;
    Pose3D collapsed = Pose3D::Ones(4, 3) * 7.0;
    ProcrustesResult res = procrustes_align(collapsed, gt);
    EXPECT_TRUE(res.degenerate);
    EXPECT_DOUBLE_EQ(res.scale, 1.0);
    Pose3D mapped = res.apply(collapsed);
    EXPECT_TRUE(mapped.allFinite());
    // translation-only fit moves the centroid onto the target centroid
    EXPECT_TRUE(Mat(mapped.colwise().mean()).isApprox(Mat(gt.colwise().mean()), 1e-12));

    Pose3D two(2, 3);
    two << 0, 0, 0, 1, 1, 1;
    EXPECT_TRUE(procrustes_align(two, two).degenerate);
}

TEST(Evaluation, AggregationModes) {
    auto schedule = cosine_schedule(10);
    ZeroNet net;
    EvalOptions opt;
    opt.sampler.num_hypotheses = 1;
    opt.sampler.seed = 4;

    EvalItem item;
    Rng rng(5);
    item.y = rng.normal_matrix(4, 2);
    item.gt_mm = random_pose_mm(rng, 4);
    item.gt_mm.row(0).setZero();
    item.action = 2;

    // a single hypothesis makes both aggregations identical
    ItemEval mean_eval = evaluate_item(net, item, schedule, opt, 0);
    opt.aggregation = HypothesisAggregation::best_of_n;
    ItemEval best_eval = evaluate_item(net, item, schedule, opt, 0);
    EXPECT_DOUBLE_EQ(mean_eval.mpjpe, best_eval.mpjpe);
    EXPECT_DOUBLE_EQ(mean_eval.p_mpjpe, best_eval.p_mpjpe);
    EXPECT_EQ(mean_eval.action, 2);

    // with several hypotheses, best-of picks the minimum per-hypothesis error
    opt.sampler.num_hypotheses = 5;
    HypothesisSet hs = sample_hypotheses(net, item.y, schedule, opt.sampler, 0);
    double best = std::numeric_limits<double>::infinity();
    const Pose3D gt_rel = root_relative(item.gt_mm, 0);
    for (const auto& h : hs.hypotheses)
        best = std::min(best, mpjpe(h * opt.pose_scale_mm, gt_rel));
    ItemEval best5 = evaluate_item(net, item, schedule, opt, 0);
    EXPECT_DOUBLE_EQ(best5.mpjpe, best);

    opt.aggregation = HypothesisAggregation::mean;
    ItemEval mean5 = evaluate_item(net, item, schedule, opt, 0);
    EXPECT_DOUBLE_EQ(mean5.mpjpe, mpjpe(hs.mean * opt.pose_scale_mm, gt_rel));
}

TEST(Evaluation, WorkerCountDoesNotChangeResults) {
    auto schedule = cosine_schedule(10);
    ZeroNet net;
    Rng rng(6);
    std::vector<EvalItem> items;
    for (int i = 0; i < 7; ++i) {
        EvalItem it;
        it.y = rng.normal_matrix(4, 2);
        it.gt_mm = random_pose_mm(rng, 4);
        it.action = i % 3;
        items.push_back(std::move(it));
    }
    EvalOptions serial;
    serial.sampler.num_hypotheses = 2;
    EvalOptions threaded = serial;
    threaded.num_workers = 3;

    auto a = evaluate_items(net, items, schedule, serial);
    auto b = evaluate_items(net, items, schedule, threaded);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].mpjpe, b[i].mpjpe) << i;
        EXPECT_EQ(a[i].p_mpjpe, b[i].p_mpjpe) << i;
    }
}

TEST(Evaluation, ReportAggregation) {
    std::vector<ItemEval> evals = {
        {10.0, 8.0, 1}, {20.0, 16.0, 1}, {30.0, 24.0, 2}};
    std::map<int, std::string> names = {{1, "Walk"}};
    EvalReport rep = build_report(evals, names);
    ASSERT_EQ(rep.action_names.size(), 2u);
    EXPECT_EQ(rep.action_names[0], "Walk");
    EXPECT_EQ(rep.action_names[1], "action2"); // unnamed action gets a numeric label
    EXPECT_DOUBLE_EQ(rep.mpjpe_by_action[0], 15.0);
    EXPECT_DOUBLE_EQ(rep.mpjpe_by_action[1], 30.0);
    EXPECT_DOUBLE_EQ(rep.mpjpe, 20.0); // item-weighted, not action-weighted
    EXPECT_DOUBLE_EQ(rep.p_mpjpe, 16.0);
    EXPECT_EQ(rep.items_by_action[0], 2);
    EXPECT_EQ(rep.num_items, 3);
}

TEST(Evaluation, CsvAndTableLayout) {
    std::vector<ItemEval> evals = {{10.0, 8.0, 0}, {30.0, 20.0, 1}};
    EvalReport rep = build_report(evals, {{0, "Sit"}, {1, "Run"}});
    std::ostringstream csv;
    write_eval_csv(rep, csv);
    EXPECT_EQ(csv.str(),
              "metric,Sit,Run,Avg\n"
              "MPJPE,10,30,20\n"
              "P-MPJPE,8,20,14\n");
    std::ostringstream table;
    write_eval_table(rep, table);
    EXPECT_NE(table.str().find("MPJPE"), std::string::npos);
    EXPECT_NE(table.str().find("Sit"), std::string::npos);
    EXPECT_NE(table.str().find("items: 2"), std::string::npos);
}
