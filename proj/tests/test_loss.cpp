#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "relpose/loss.hpp"
#include "relpose/oracle.hpp"
#include "support.hpp"

using namespace relpose;
using namespace relpose::testing;

namespace {

PoseEdge make_edge(FrameId i, FrameId j, const Pose& rel, double cr = 1.0, double ct = 1.0) {
  PoseEdge e;
  e.src = i;
  e.dst = j;
  e.rel_rotation = rel.rotation;
  e.rel_translation = rel.translation;
  e.conf_rot = cr;
  e.conf_trans = ct;
  return e;
}

Trajectory random_trajectory(std::mt19937_64& g, std::size_t n) {
  Trajectory t;
  for (FrameId k = 1; k <= n; ++k) t[k] = random_pose(g);
  return t;
}

}  // namespace

TEST(PairResidual, TranslationIsL1) {
  const Pose gt{UnitQuaternion::identity(), Vec3(1, 2, 3)};
  const PoseEdge e = make_edge(1, 2, {UnitQuaternion::identity(), Vec3(1.1, 1.8, 3.3)});
  const PairResidual r = pair_residual(e, gt);
  EXPECT_NEAR(r.trans, 0.1 + 0.2 + 0.3, 1e-12);
  EXPECT_EQ(r.rot, 0.0);
}

TEST(PairResidual, QuaternionSignDoesNotMatter) {
  std::mt19937_64 g(1);
  const UnitQuaternion q = random_quat(g);
  const Pose gt{q, Vec3::Zero()};
  const PoseEdge same = make_edge(1, 2, gt);
  const PoseEdge flipped = make_edge(1, 2, {q.negated(), Vec3::Zero()});
  EXPECT_EQ(pair_residual(same, gt).rot, 0.0);
  EXPECT_EQ(pair_residual(flipped, gt).rot, 0.0);
  EXPECT_NEAR(pair_residual(flipped, gt, RotationMetric::Geodesic).rot, 0.0, 1e-7);
}

TEST(PairResidual, QuaternionL1Example) {
  // 90 degrees about z: (cos 45, 0, 0, sin 45) vs identity.
  const double h = std::sqrt(0.5);
  const PoseEdge e = make_edge(1, 2, {UnitQuaternion::from_axis_angle(Vec3::UnitZ(), std::numbers::pi / 2), Vec3::Zero()});
  const PairResidual r = pair_residual(e, Pose::identity());
  EXPECT_NEAR(r.rot, (1.0 - h) + h, 1e-12);
  EXPECT_NEAR(pair_residual(e, Pose::identity(), RotationMetric::Geodesic).rot, std::numbers::pi / 2, 1e-12);
}

TEST(ConfLoss, Examples) {
  // 0.2 * 1 - 0.2 * log 1
  EXPECT_DOUBLE_EQ(conf_loss(0.2, 1.0, 0.2), 0.2);
  EXPECT_NEAR(conf_loss(0.1, 2.0, 0.2), 0.2 - 0.2 * std::log(2.0), 1e-15);
  EXPECT_THROW(conf_loss(0.1, 0.0, 0.2), Error);
  EXPECT_THROW(conf_loss(0.1, 1.0, -0.2), Error);
}

TEST(ConfLoss, ClosedFormMatchesNumericMinimizer) {
  for (double r : {1e-3, 0.01, 0.1, 0.5, 2.0}) {
    for (double alpha : {0.05, 0.2, 1.0}) {
      const double c = optimal_confidence(r, alpha);
      const double numeric = golden_section([&](double x) { return conf_loss(r, x, alpha); }, 1e-6, 2.0 * c + 10.0);
      EXPECT_NEAR(numeric / c, 1.0, 1e-6) << r << " " << alpha;
      EXPECT_LE(conf_loss(r, c, alpha), conf_loss(r, 1.01 * c, alpha));
      EXPECT_LE(conf_loss(r, c, alpha), conf_loss(r, 0.99 * c, alpha));
    }
  }
}

TEST(ConfLoss, PlugInValue) {
  // At c = alpha / eps the loss is alpha - alpha * log(alpha / eps).
  const double alpha = 0.2, eps = 0.05;
  EXPECT_NEAR(conf_loss(eps, optimal_confidence(eps, alpha), alpha), alpha - alpha * std::log(alpha / eps), 1e-15);
}

TEST(ConfLoss, OverconfidenceOnLargeErrorIsExpensive) {
  EXPECT_GT(conf_loss(1.0, 1e9, 0.2), 1e8);
  // Tiny confidence pays through the log barrier instead.
  EXPECT_GT(conf_loss(1.0, 1e-9, 0.2), 4.0);
}

TEST(BatchLoss, PairCounts) {
  std::mt19937_64 g(2);
  const std::size_t n = 6;
  const Trajectory gt = random_trajectory(g, n);
  std::vector<LabeledEdge> edges;
  for (FrameId i = 1; i <= n; ++i) {
    for (FrameId j = 1; j <= n; ++j) {
      if (i == j) continue;
      const Pose rel = pose_relative(gt.at(i), gt.at(j));
      edges.push_back({make_edge(i, j, {rel.rotation, rel.translation + Vec3(0.01, 0, 0)}), rel});
    }
  }
  const CameraLoss causal = batch_camera_loss(edges, PairSet::Causal, 0.2);
  const CameraLoss all = batch_camera_loss(edges, PairSet::AllPairs, 0.2);
  EXPECT_EQ(causal.terms, n * (n - 1) / 2);
  EXPECT_EQ(all.terms, n * (n - 1));
  // Unit confidences: rotation term 0, translation term 0.01.
  EXPECT_NEAR(causal.value, 0.01, 1e-12);
  EXPECT_NEAR(all.value, 0.01, 1e-12);
}

TEST(BatchLoss, EmptyPairSetRejected) {
  std::vector<LabeledEdge> edges = {{make_edge(3, 1, Pose::identity()), Pose::identity()}};
  EXPECT_THROW(batch_camera_loss(edges, PairSet::Causal, 0.2), Error);
  EXPECT_NO_THROW(batch_camera_loss(edges, PairSet::AllPairs, 0.2));
  EXPECT_THROW(batch_camera_loss(std::vector<LabeledEdge>{}, PairSet::AllPairs, 0.2), Error);
}

TEST(BatchLoss, CalibratedConfidenceBeatsUniformInExpectation) {
  OracleConfig c;
  c.family = TrajectoryFamily::RandomWalk;
  c.frames = 40;
  const SyntheticScene s = generate_scene(c, 3);
  std::vector<LabeledEdge> calibrated, flat;
  double mean_conf_r = 0.0, mean_conf_t = 0.0;
  std::size_t n = 0;
  for (FrameId i = 1; i <= 40; ++i) {
    for (FrameId j = i + 1; j <= 40; ++j) {
      const PoseEdge e = s.edge(i, j);
      mean_conf_r += e.conf_rot;
      mean_conf_t += e.conf_trans;
      ++n;
      calibrated.push_back({e, s.true_relative(i, j)});
    }
  }
  mean_conf_r /= static_cast<double>(n);
  mean_conf_t /= static_cast<double>(n);
  flat = calibrated;
  for (LabeledEdge& le : flat) {
    le.predicted.conf_rot = mean_conf_r;
    le.predicted.conf_trans = mean_conf_t;
  }
  EXPECT_LT(batch_camera_loss(calibrated, PairSet::Causal, c.alpha).value,
            batch_camera_loss(flat, PairSet::Causal, c.alpha).value);
}

TEST(ReferenceLoss, ZeroOnGroundTruth) {
  std::mt19937_64 g(4);
  const Trajectory t = random_trajectory(g, 5);
  EXPECT_NEAR(reference_abs_loss(t, t), 0.0, 1e-6);
  EXPECT_NEAR(reference_pi3_loss(t, t), 0.0, 1e-6);
}

TEST(ReferenceLoss, AllPairLossIsGaugeInvariant) {
  std::mt19937_64 g(5);
  for (int t = 0; t < 20; ++t) {
    const Trajectory gt = random_trajectory(g, 5);
    Trajectory pred;
    for (const auto& [id, p] : gt) pred[id] = {p.rotation * UnitQuaternion::exp(random_vec(g, 0.1)), p.translation + random_vec(g, 0.1)};
    const Pose gauge = random_pose(g, 3.0);
    Trajectory moved;
    for (const auto& [id, p] : pred) moved[id] = pose_compose(gauge, p);
    EXPECT_NEAR(reference_pi3_loss(moved, gt), reference_pi3_loss(pred, gt), 1e-9);
    // The absolute loss is not.
    EXPECT_GT(std::abs(reference_abs_loss(moved, gt) - reference_abs_loss(pred, gt)), 1e-3);
  }
}

TEST(ReferenceLoss, TwoFramesCountEachPairTwice) {
  Trajectory gt, pred;
  gt[1] = pred[1] = Pose::identity();
  gt[2] = {UnitQuaternion::identity(), Vec3(1, 0, 0)};
  pred[2] = {UnitQuaternion::identity(), Vec3(1.5, 0, 0)};
  EXPECT_NEAR(reference_pi3_loss(pred, gt), 2 * 0.5, 1e-12);
  EXPECT_NEAR(reference_abs_loss(pred, gt), 0.5, 1e-12);
}

TEST(ReferenceLoss, MismatchedIdsRejected) {
  Trajectory a, b;
  a[1] = a[2] = b[1] = b[3] = Pose::identity();
  EXPECT_THROW(reference_abs_loss(a, b), Error);
  b.erase(3);
  EXPECT_THROW(reference_pi3_loss(a, b), Error);
}
