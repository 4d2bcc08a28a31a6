#include <doctest.h>

#include <set>

#include "eqvs/geom.hpp"
#include "test_util.hpp"

using namespace eqvs;

namespace {

double matrix_angle(const Mat3& r) {
  return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0));
}

}  // namespace

TEST_CASE("geodesic angle matches the trace formula") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const Quat a = random_rotation(rng), b = random_rotation(rng);
    const double oracle = matrix_angle(a.toRotationMatrix().transpose() * b.toRotationMatrix());
    CHECK(geodesic_angle(a, b) == doctest::Approx(oracle).epsilon(1e-6));
    CHECK(geodesic_angle(a.toRotationMatrix(), b.toRotationMatrix()) == doctest::Approx(oracle).epsilon(1e-6));
    // double cover
    CHECK(geodesic_angle(a, Quat(-b.coeffs())) == doctest::Approx(geodesic_angle(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("geodesic angle rejects non-unit quaternions") {
  CHECK_THROWS_AS(geodesic_angle(Quat(2, 0, 0, 0), Quat::Identity()), std::invalid_argument);
}

TEST_CASE("canonical quaternion has w >= 0 and unit norm") {
  const Quat q = canonical(Quat(-2, 0, 0, 0));
  CHECK(q.w() == 1.0);
  CHECK_THROWS_AS(canonical(Quat(0, 0, 0, 0)), std::invalid_argument);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const Quat c = canonical(Quat(random_rotation(rng).coeffs() * 3.0));
    CHECK(c.w() >= 0);
    CHECK(c.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("random rotations are Haar distributed") {
  // E[R] = 0 and the angle density is (1 - cos t) / pi, so E[angle] = pi/2 + 2/pi.
  std::mt19937_64 rng(3);
  Mat3 sum = Mat3::Zero();
  double angle = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const Quat q = random_rotation(rng);
    sum += q.toRotationMatrix();
    angle += rotation_angle(q);
  }
  CHECK((sum / n).cwiseAbs().maxCoeff() < 0.03);
  CHECK(angle / n == doctest::Approx(kPi / 2 + 2 / kPi).epsilon(0.01));
}

TEST_CASE("scale_rotation walks the geodesic") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const Quat q = random_rotation(rng);
    CHECK(rotation_angle(scale_rotation(q, 0.25)) == doctest::Approx(0.25 * rotation_angle(q)).epsilon(1e-9));
    CHECK(geodesic_angle(scale_rotation(q, 1.0), q) < 1e-7);
  }
}

TEST_CASE("relative_pose maps camera a to camera b") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const Pose a = test::random_pose(rng), b = test::random_pose(rng);
    const Pose p = relative_pose(a, b).isometry();
    CHECK(((p * a).matrix() - b.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("compose applies first then second") {
  std::mt19937_64 rng(6);
  const Pose a = test::random_pose(rng), b = test::random_pose(rng);
  const Pose oracle = b * a;
  const Pose got = compose(RelTransform::from_isometry(a), RelTransform::from_isometry(b)).isometry();
  CHECK((got.matrix() - oracle.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  const RelTransform p = RelTransform::from_isometry(a);
  CHECK((compose(p, p.inverse()).isometry().matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("transform_norm") {
  CHECK(transform_norm(RelTransform::identity()) == 0.0);
  const Quat q(Eigen::AngleAxisd(0.7, Vec3::UnitY()));
  CHECK(transform_norm(RelTransform::rotation(q)) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(transform_norm(RelTransform::rigid(Vec3(0, 3, 4), q), 0.5) == doctest::Approx(0.7 + 2.5).epsilon(1e-12));
}

TEST_CASE("pose byte encoding round trips exactly") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const RelTransform p = RelTransform::from_isometry(test::random_pose(rng));
    const std::string bytes = encode_pose_le64(p);
    REQUIRE(bytes.size() == 56);
    CHECK(encode_pose_le64(decode_pose_le64(bytes, false)) == bytes);
  }
  // identity: qw = 1.0 at byte offset 24, little endian
  const std::string id = encode_pose_le64(RelTransform::identity(false));
  CHECK(static_cast<unsigned char>(id[31]) == 0x3f);
  CHECK(static_cast<unsigned char>(id[30]) == 0xf0);
  CHECK_THROWS(decode_pose_le64(id.substr(1), false));
}

TEST_CASE("hemisphere cameras look at the centre") {
  std::mt19937_64 rng(8);
  const Vec3 center(0.1, -0.2, 0.05);
  for (int i = 0; i < 100; ++i) {
    const HemispherePose h = sample_hemisphere(rng, {0.5, 0.7}, {0.2, 1.4});
    const Pose cam = h.camera_pose(center);
    const Vec3 c = cam * center;
    CHECK(c.head<2>().norm() < 1e-12);
    CHECK(c.z() == doctest::Approx(h.radius).epsilon(1e-12));
    CHECK(is_rotation(cam.linear()));
    const HemispherePose back = HemispherePose::from_camera(cam, center);
    CHECK(back.elevation == doctest::Approx(h.elevation).epsilon(1e-9));
    CHECK(back.radius == doctest::Approx(h.radius).epsilon(1e-9));
    CHECK((back.camera_pose(center).matrix() - cam.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("hemisphere sampling stays in range") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 500; ++i) {
    const HemispherePose h = sample_hemisphere(rng, {0.5, 0.7}, {0.2, 1.4});
    CHECK(h.radius >= 0.5);
    CHECK(h.radius <= 0.7);
    CHECK(h.elevation >= 0.2);
    CHECK(h.elevation <= 1.4);
  }
}

TEST_CASE("centering homography of the identity is the identity") {
  const CameraIntrinsics k = CameraIntrinsics::centered(64, 64, 110);
  CHECK((centering_homography(k, Mat3::Identity(), 1.0).H - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("centering sends the object centre to the principal point") {
  const CameraIntrinsics k = CameraIntrinsics::centered(64, 64, 110);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-0.15, 0.15);
  for (int i = 0; i < 100; ++i) {
    const Vec3 c(u(rng), u(rng), 0.6 + u(rng));
    const CenteringParams p = centering_params(k, c, 30.0, 40.0);
    CHECK(is_rotation(p.R));
    CHECK(p.s == doctest::Approx(40.0 / 30.0));
    const CenteringTransform t = centering_homography(k, p.R, p.s);
    const Vec3 x = t.H * k.matrix() * c;
    CHECK(std::abs(x.x() / x.z() - k.cx) < 1e-9);
    CHECK(std::abs(x.y() / x.z() - k.cy) < 1e-9);
    // R is the minimal rotation: its axis is orthogonal to the optical axis
    const Eigen::AngleAxisd aa(p.R);
    if (aa.angle() > 1e-9) CHECK(std::abs(aa.axis().z()) < 1e-9);
  }
}

TEST_CASE("depth_change reproduces the image scale") {
  const CameraIntrinsics k = CameraIntrinsics::centered(64, 64, 110);
  for (double s : {0.5, 0.8, 1.0, 1.25, 2.0}) {
    const double z = 0.6;
    const double dz = depth_change(s, z);
    CHECK(apparent_size_px(k, 0.2, z + dz) == doctest::Approx(s * apparent_size_px(k, 0.2, z)).epsilon(1e-12));
  }
}

TEST_CASE("derive_seed gives distinct streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("se3_exp matches a small-step integration") {
  Eigen::Matrix<double, 6, 1> twist;
  twist << 0.1, -0.2, 0.05, 0.3, -0.1, 0.2;
  Pose integrated = Pose::Identity();
  const int steps = 20000;
  for (int i = 0; i < steps; ++i) {
    Pose step = Pose::Identity();
    const Vec3 w = twist.tail<3>() / steps;
    step.linear() = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
    step.translation() = twist.head<3>() / steps;
    integrated = integrated * step;
  }
  CHECK((se3_exp(twist, 1.0).matrix() - integrated.matrix()).cwiseAbs().maxCoeff() < 1e-4);
  CHECK((se3_exp(twist, 0.0).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-15);
}
