#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <numbers>
#include <random>
#include <vector>

#include "relpose/geom.hpp"
#include "support.hpp"

using namespace relpose;
using namespace relpose::testing;

namespace {

constexpr double kPi = std::numbers::pi;

UnitQuaternion about_z(double deg) { return UnitQuaternion::from_axis_angle(Vec3::UnitZ(), deg * kDegToRad); }

// Horn's closed form: rotation is the top eigenvector of the 4x4 matrix built
// from the cross-covariance; scale from the rotated-source projection.
Sim3Alignment horn_sim3(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    ms += src[i];
    md += dst[i];
  }
  ms /= static_cast<double>(src.size());
  md /= static_cast<double>(src.size());
  Mat3 m = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) m += (src[i] - ms) * (dst[i] - md).transpose();
  const double sxx = m(0, 0), sxy = m(0, 1), sxz = m(0, 2);
  const double syx = m(1, 0), syy = m(1, 1), syz = m(1, 2);
  const double szx = m(2, 0), szy = m(2, 1), szz = m(2, 2);
  Eigen::Matrix4d n;
  n << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
      syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
      szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
      sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(n);
  const Eigen::Vector4d v = es.eigenvectors().col(3);
  Sim3Alignment out;
  out.rotation = UnitQuaternion::from_wxyz(v(0), v(1), v(2), v(3));
  const Mat3 r = matrix_ref(out.rotation);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    num += (dst[i] - md).dot(r * (src[i] - ms));
    den += (src[i] - ms).squaredNorm();
  }
  out.scale = num / den;
  out.translation = md - out.scale * r * ms;
  return out;
}

}  // namespace

TEST(Quaternion, IdentityTimesIdentity) {
  const UnitQuaternion q = quat_multiply(UnitQuaternion::identity(), UnitQuaternion::identity());
  EXPECT_EQ(q, UnitQuaternion::identity());
}

TEST(Quaternion, TimesInverseIsIdentity) {
  std::mt19937_64 g(1);
  for (int k = 0; k < 100; ++k) {
    const UnitQuaternion q = random_quat(g);
    EXPECT_LT(quat_gap(q * q.inverse(), UnitQuaternion::identity()), 1e-12);
  }
}

TEST(Quaternion, QuarterTurnsComposeToHalfTurn) {
  const UnitQuaternion q = quat_multiply(about_z(90), about_z(90));
  const Mat3 expected = rodrigues(Vec3::UnitZ(), kPi / 2) * rodrigues(Vec3::UnitZ(), kPi / 2);
  EXPECT_LT((matrix_ref(q) - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(quat_geodesic_deg(q, about_z(180)), 0.0, 1e-9);
}

TEST(Quaternion, ProductMatchesMatrixProduct) {
  std::mt19937_64 g(2);
  for (int k = 0; k < 500; ++k) {
    const UnitQuaternion a = random_quat(g), b = random_quat(g);
    EXPECT_LT((matrix_ref(a * b) - matrix_ref(a) * matrix_ref(b)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Quaternion, RotateExamples) {
  EXPECT_LT((quat_rotate(UnitQuaternion::identity(), Vec3(1, 2, 3)) - Vec3(1, 2, 3)).norm(), 1e-15);
  EXPECT_LT((quat_rotate(about_z(180), Vec3(1, 0, 0)) - Vec3(-1, 0, 0)).norm(), 1e-12);
}

TEST(Quaternion, RotateMatchesMatrix) {
  std::mt19937_64 g(3);
  for (int k = 0; k < 500; ++k) {
    const UnitQuaternion q = random_quat(g);
    const Vec3 v = random_vec(g, 3.0);
    EXPECT_LT((quat_rotate(q, v) - matrix_ref(q) * v).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((q.matrix() - matrix_ref(q)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Quaternion, AxisAngleMatchesRodrigues) {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  for (int k = 0; k < 200; ++k) {
    const Vec3 axis = random_vec(g);
    const double a = ang(g);
    EXPECT_LT((matrix_ref(UnitQuaternion::from_axis_angle(axis, a)) - rodrigues(axis, a)).cwiseAbs().maxCoeff(),
              1e-12);
    EXPECT_LT((matrix_ref(UnitQuaternion::exp(axis.normalized() * a)) - rodrigues(axis, a)).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST(Quaternion, LogInvertsExp) {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> ang(0.0, kPi * 0.999);
  for (int k = 0; k < 200; ++k) {
    const Vec3 w = random_vec(g).normalized() * ang(g);
    EXPECT_LT((UnitQuaternion::exp(w).log() - w).norm(), 1e-9);
    EXPECT_LT((UnitQuaternion::exp(w).negated().log() - w).norm(), 1e-9);
  }
  EXPECT_EQ(UnitQuaternion::identity().log(), Vec3::Zero());
}

TEST(Quaternion, NormalizationIsIdempotent) {
  std::mt19937_64 g(6);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int k = 0; k < 1000; ++k) {
    const UnitQuaternion q = UnitQuaternion::from_wxyz(n(g), n(g), n(g), n(g));
    const UnitQuaternion r = UnitQuaternion::from_wxyz(q.w(), q.x(), q.y(), q.z());
    EXPECT_LT(quat_gap(q, r), 1e-12);
    EXPECT_NEAR(q.norm(), 1.0, 1e-12);
  }
}

TEST(Quaternion, ZeroVectorRejected) {
  EXPECT_THROW(UnitQuaternion::from_wxyz(0, 0, 0, 0), Error);
  EXPECT_THROW(UnitQuaternion::from_wxyz(std::nan(""), 0, 0, 1), Error);
  EXPECT_THROW(UnitQuaternion::from_axis_angle(Vec3::Zero(), 1.0), Error);
}

TEST(Geodesic, Examples) {
  std::mt19937_64 g(7);
  const UnitQuaternion q = random_quat(g);
  EXPECT_NEAR(quat_geodesic_deg(q, q), 0.0, 1e-12);
  EXPECT_NEAR(quat_geodesic_deg(q, q.negated()), 0.0, 1e-12);
  EXPECT_NEAR(quat_geodesic_deg(UnitQuaternion::identity(), UnitQuaternion::from_axis_angle(Vec3::UnitX(), kPi / 2)),
              90.0, 1e-9);
}

TEST(Geodesic, MatchesMatrixAngle) {
  std::mt19937_64 g(8);
  for (int k = 0; k < 500; ++k) {
    const UnitQuaternion a = random_quat(g), b = random_quat(g);
    EXPECT_NEAR(quat_geodesic_deg(a, b), matrix_angle_deg(matrix_ref(a), matrix_ref(b)), 1e-6);
  }
}

TEST(Geodesic, SmallAnglesStayAccurate) {
  for (double deg : {1e-9, 1e-6, 1e-3}) {
    EXPECT_NEAR(quat_geodesic_deg(UnitQuaternion::identity(), about_z(deg)), deg, deg * 1e-6);
  }
}

TEST(Geodesic, IsAMetricModuloSign) {
  std::mt19937_64 g(9);
  for (int k = 0; k < 1000; ++k) {
    const UnitQuaternion a = random_quat(g), b = random_quat(g), c = random_quat(g);
    EXPECT_NEAR(quat_geodesic_deg(a, b), quat_geodesic_deg(b, a), 1e-7);
    EXPECT_LE(quat_geodesic_deg(a, c), quat_geodesic_deg(a, b) + quat_geodesic_deg(b, c) + 1e-7);
    EXPECT_GE(quat_geodesic_deg(a, b), 0.0);
    EXPECT_LE(quat_geodesic_deg(a, b), 180.0 + 1e-9);
  }
}

TEST(PoseOps, Examples) {
  std::mt19937_64 g(10);
  const Pose p = random_pose(g);
  const Pose rel = pose_relative(p, p);
  EXPECT_LT(quat_gap(rel.rotation, UnitQuaternion::identity()), 1e-12);
  EXPECT_LT(rel.translation.norm(), 1e-12);
  const Pose c = pose_compose(Pose::identity(), p);
  EXPECT_LT(quat_gap(c.rotation, p.rotation), 1e-15);
  EXPECT_LT((c.translation - p.translation).norm(), 1e-15);
}

TEST(PoseOps, MatchMatrixOracle) {
  std::mt19937_64 g(11);
  for (int k = 0; k < 300; ++k) {
    const Pose a = random_pose(g, 3.0), b = random_pose(g, 3.0);
    EXPECT_LT(pose_gap(pose_compose(a, b), ref_compose(to_ref(a), to_ref(b))), 1e-9);
    EXPECT_LT(pose_gap(pose_inverse(a), ref_inverse(to_ref(a))), 1e-9);
    EXPECT_LT(pose_gap(pose_relative(a, b), ref_compose(ref_inverse(to_ref(a)), to_ref(b))), 1e-9);
  }
}

TEST(PoseOps, RelativeRoundTrip) {
  std::mt19937_64 g(12);
  for (int k = 0; k < 100; ++k) {
    const Pose a = random_pose(g, 5.0), b = random_pose(g, 5.0);
    const Pose back = pose_compose(a, pose_relative(a, b));
    EXPECT_LT(quat_gap(back.rotation, b.rotation), 1e-8);
    EXPECT_LT((back.translation - b.translation).norm(), 1e-8);
  }
}

TEST(PoseOps, ComposeIsAssociative) {
  std::mt19937_64 g(13);
  for (int k = 0; k < 300; ++k) {
    const Pose a = random_pose(g), b = random_pose(g), c = random_pose(g);
    const Pose l = pose_compose(pose_compose(a, b), c);
    const Pose r = pose_compose(a, pose_compose(b, c));
    EXPECT_LT(quat_gap(l.rotation, r.rotation), 1e-8);
    EXPECT_LT((l.translation - r.translation).norm(), 1e-8);
  }
}

TEST(Umeyama, IdentityOnEqualClouds) {
  std::mt19937_64 g(14);
  std::vector<Vec3> pts;
  for (int k = 0; k < 10; ++k) pts.push_back(random_vec(g));
  const Sim3Alignment a = umeyama_sim3(pts, pts);
  EXPECT_NEAR(a.scale, 1.0, 1e-12);
  EXPECT_LT(quat_gap(a.rotation, UnitQuaternion::identity()), 1e-9);
  EXPECT_LT(a.translation.norm(), 1e-12);
}

TEST(Umeyama, PureScale) {
  std::mt19937_64 g(15);
  std::vector<Vec3> src, dst;
  for (int k = 0; k < 10; ++k) {
    src.push_back(random_vec(g));
    dst.push_back(2.0 * src.back());
  }
  const Sim3Alignment a = umeyama_sim3(src, dst);
  EXPECT_NEAR(a.scale, 2.0, 1e-12);
  EXPECT_LT(quat_gap(a.rotation, UnitQuaternion::identity()), 1e-9);
}

TEST(Umeyama, RecoversPlantedSim3) {
  std::mt19937_64 g(16);
  std::uniform_real_distribution<double> s(0.2, 5.0);
  for (int k = 0; k < 100; ++k) {
    Sim3Alignment truth{s(g), random_quat(g), random_vec(g, 10.0)};
    std::vector<Vec3> src, dst;
    for (int p = 0; p < 20; ++p) {
      src.push_back(random_vec(g, 2.0));
      dst.push_back(truth.apply(src.back()));
    }
    const Sim3Alignment a = umeyama_sim3(src, dst);
    EXPECT_NEAR(a.scale, truth.scale, 1e-6);
    EXPECT_LT(quat_gap(a.rotation, truth.rotation), 1e-6);
    EXPECT_LT((a.translation - truth.translation).norm(), 1e-6);
  }
}

TEST(Umeyama, AgreesWithHornOnNoisyClouds) {
  std::mt19937_64 g(17);
  for (int k = 0; k < 100; ++k) {
    Sim3Alignment truth{1.5, random_quat(g), random_vec(g)};
    std::vector<Vec3> src, dst;
    for (int p = 0; p < 15; ++p) {
      src.push_back(random_vec(g));
      dst.push_back(truth.apply(src.back()) + random_vec(g, 0.1));
    }
    const Sim3Alignment u = umeyama_sim3(src, dst);
    const Sim3Alignment h = horn_sim3(src, dst);
    EXPECT_NEAR(u.scale, h.scale, 1e-8);
    EXPECT_LT(quat_gap(u.rotation, h.rotation), 1e-8);
    EXPECT_LT((u.translation - h.translation).norm(), 1e-8);
  }
}

TEST(Umeyama, HandlesReflectedCloud) {
  std::mt19937_64 g(18);
  std::vector<Vec3> src, dst;
  for (int p = 0; p < 12; ++p) {
    src.push_back(random_vec(g));
    dst.push_back(Vec3(-src.back().x(), src.back().y(), src.back().z()));
  }
  const Sim3Alignment a = umeyama_sim3(src, dst);
  EXPECT_NEAR(a.rotation.matrix().determinant(), 1.0, 1e-9);
  EXPECT_GT(a.scale, 0.0);
}

TEST(Umeyama, NeverWorseThanIdentity) {
  std::mt19937_64 g(19);
  const Sim3Alignment id;
  for (int k = 0; k < 200; ++k) {
    std::vector<Vec3> src, dst;
    for (int p = 0; p < 8; ++p) {
      src.push_back(random_vec(g));
      dst.push_back(random_vec(g, 3.0));
    }
    EXPECT_LE(alignment_cost(umeyama_sim3(src, dst), src, dst), alignment_cost(id, src, dst) + 1e-12);
    EXPECT_LE(alignment_cost(umeyama_se3(src, dst), src, dst), alignment_cost(id, src, dst) + 1e-12);
  }
}

TEST(Umeyama, Se3KeepsUnitScale) {
  std::mt19937_64 g(20);
  std::vector<Vec3> src, dst;
  for (int p = 0; p < 10; ++p) {
    src.push_back(random_vec(g));
    dst.push_back(3.0 * src.back());
  }
  EXPECT_EQ(umeyama_se3(src, dst).scale, 1.0);
}

TEST(Umeyama, RejectsDegenerateInput) {
  const std::vector<Vec3> two = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  EXPECT_THROW(umeyama_sim3(two, two), Error);
  const std::vector<Vec3> same(5, Vec3(1, 2, 3));
  EXPECT_THROW(umeyama_sim3(same, same), Error);
  const std::vector<Vec3> three(3, Vec3::Zero());
  EXPECT_THROW(umeyama_sim3(three, same), Error);
}
