#include <doctest.h>

#include "eqvs/servo.hpp"

using namespace eqvs;

namespace {

ViewConfig small_view() {
  ViewConfig v;
  v.image_size = 32;
  v.focal = 55;
  v.target_size_px = 20;
  v.aim_jitter = 0.0;
  return v;
}

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.image_size = 32;
  c.pool = 1;
  c.conv_channels = {4, 8};
  c.head_widths = {16};
  c.feature_dim = 8;
  c.transformer_widths = {16};
  return c;
}

// Fresh model with a random (non-zero) last transformer layer.
Model<float> random_model(std::uint64_t seed) {
  Model<float> m = init_model(small_encoder(), seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.2f);
  for (grad::Index i = 0; i < m.params.size(); ++i) {
    if (m.params.name(i).rfind("h.", 0) != 0) continue;
    auto& d = m.params.data(i);
    for (Eigen::Index j = 0; j < d.size(); ++j) d[j] += n(rng);
  }
  return m;
}

Eigen::VectorXf random_feature(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Eigen::VectorXf f(8);
  for (int i = 0; i < 8; ++i) f[i] = n(rng);
  return f;
}

}  // namespace

TEST_CASE("project_pose gives valid pose vectors") {
  Eigen::Matrix<double, kPoseDim, 1> v;
  v << 1, 2, 3, -2, 0.5, 0, 1;
  const auto r = project_pose(v, true);
  CHECK(r.head<3>().isZero());
  CHECK(r[3] >= 0);
  CHECK(r.tail<4>().norm() == doctest::Approx(1.0).epsilon(1e-12));
  const auto full = project_pose(v, false);
  CHECK(full.head<3>() == Vec3(1, 2, 3));
  CHECK(project_pose(r, true) == r);
}

TEST_CASE("residuals are pose independent for an untrained transformer") {
  const Model<float> m = init_model(small_encoder(), 1);
  const Eigen::VectorXf a = random_feature(1), b = random_feature(2);
  std::mt19937_64 rng(3);
  Eigen::MatrixXd poses(5, kPoseDim);
  for (int i = 0; i < 5; ++i) poses.row(i) = pose_to_vec(RelTransform::rotation(random_rotation(rng))).transpose();
  const Eigen::VectorXd e = inference_residuals(m, a, b, poses);
  for (int i = 0; i < 5; ++i) CHECK(e[i] == doctest::Approx((b - a).squaredNorm()).epsilon(1e-5));
}

TEST_CASE("inference residual equals the feature distance at the returned pose") {
  const Model<float> m = random_model(2);
  const Eigen::VectorXf a = random_feature(3), b = random_feature(4);
  InferenceConfig c;
  c.max_iterations = 40;
  c.restarts = 3;
  const InferenceResult r = infer_from_features(m, a, b, c);
  const double oracle = (b - transform_feature(m, a, r.p)).squaredNorm();
  CHECK(r.residual == doctest::Approx(oracle).epsilon(1e-4));
}

TEST_CASE("inference traces never increase") {
  const Model<float> m = random_model(3);
  InferenceConfig c;
  c.max_iterations = 30;
  c.restarts = 4;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const InferenceResult r = infer_from_features(m, random_feature(10 + s), random_feature(20 + s), c);
    REQUIRE(r.traces.size() == 4);
    for (const auto& t : r.traces) {
      for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] <= t[i - 1]);
    }
    CHECK(r.trace == r.traces[static_cast<std::size_t>(r.restart)]);
  }
}

TEST_CASE("restarts never do worse than a single start") {
  const Model<float> m = random_model(4);
  InferenceConfig one, many;
  one.restarts = 1;
  many.restarts = 6;
  one.max_iterations = many.max_iterations = 30;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Eigen::VectorXf a = random_feature(30 + s), b = random_feature(40 + s);
    const InferenceResult r1 = infer_from_features(m, a, b, one);
    const InferenceResult r6 = infer_from_features(m, a, b, many);
    CHECK(r6.residual <= r1.residual * (1 + 1e-6));
    for (const auto& t : r6.traces) CHECK(r6.residual <= t.back() * (1 + 1e-6));
  }
}

TEST_CASE("inference is deterministic for a seed") {
  const Model<float> m = random_model(5);
  InferenceConfig c;
  c.max_iterations = 20;
  c.seed = 7;
  const Eigen::VectorXf a = random_feature(1), b = random_feature(2);
  const InferenceResult x = infer_from_features(m, a, b, c), y = infer_from_features(m, a, b, c);
  CHECK(x.residual == y.residual);
  CHECK(x.p.q.coeffs() == y.p.q.coeffs());
}

TEST_CASE("look_at_camera and view_angle") {
  const Vec3 center(0.1, 0.2, -0.1);
  const Mat3 r = Eigen::AngleAxisd(0.4, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Pose cam = look_at_camera(r, center, 0.6);
  CHECK((cam * center - Vec3(0, 0, 0.6)).norm() < 1e-12);
  CHECK(view_angle(cam, cam, center) == doctest::Approx(0.0).epsilon(1e-12));
  // an aim offset does not change the viewing direction
  Pose aim = Pose::Identity();
  aim.linear() = Eigen::AngleAxisd(0.05, Vec3::UnitX()).toRotationMatrix();
  CHECK(view_angle(aim * cam, cam, center) < 1e-9);
  const Pose other = look_at_camera(Eigen::AngleAxisd(0.3, Vec3::UnitZ()).toRotationMatrix() * r, center, 0.6);
  CHECK(view_angle(cam, other, center) == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("starting at the goal converges immediately") {
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  const ViewConfig v = small_view();
  HemispherePose h;
  h.azimuth = 1.0;
  h.elevation = 0.8;
  h.radius = 0.6;
  const Pose goal = h.camera_pose(obj.center);
  const ServoTarget target = make_target(obj, goal, v);
  ServoConfig sc;
  InferenceConfig ic;
  ic.restarts = 1;
  const ServoResult r = closed_loop_servo(init_model(small_encoder(), 6), obj, goal, target, v, sc, ic);
  CHECK(r.converged);
  CHECK(r.success);
  CHECK(r.final_angle < 1e-6);
  CHECK(r.final_add < 1e-6);
}

TEST_CASE("beta = 0 never moves the camera") {
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  const ViewConfig v = small_view();
  HemispherePose g, s;
  g.elevation = 0.8;
  g.radius = 0.6;
  s = g;
  s.azimuth = 0.7;
  const ServoTarget target = make_target(obj, g.camera_pose(obj.center), v);
  ServoConfig sc;
  sc.beta = 0.0;
  sc.max_iterations = 3;
  InferenceConfig ic;
  ic.restarts = 1;
  ic.max_iterations = 10;
  const ServoResult r = closed_loop_servo(random_model(7), obj, s.camera_pose(obj.center), target, v, sc, ic);
  CHECK(r.final_angle == doctest::Approx(r.trajectory.front().angle_to_goal).epsilon(1e-9));
  CHECK(!r.success);
  const std::string csv = trajectory_csv(r);
  CHECK(csv.rfind("iteration,azimuth,elevation,roll,residual,angle_to_goal\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(r.trajectory.size()) + 1);
}

TEST_CASE("servo loop follows an exact estimator to the goal") {
  // Oracle estimator: the true relative transform between the current and goal frames.
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  const ViewConfig v = small_view();
  HemispherePose g, s;
  g.azimuth = 0.2;
  g.elevation = 0.9;
  g.radius = 0.6;
  g.roll = 0.3;
  s = g;
  s.azimuth = 1.4;
  s.elevation = 0.5;
  s.roll = -0.8;
  const Pose goal = g.camera_pose(obj.center);
  const ServoTarget target = make_target(obj, goal, v);
  const View goal_view = make_view(obj, goal, v);
  ServoConfig sc;
  sc.beta = 0.5;
  const ServoResult r = run_servo_loop(obj, s.camera_pose(obj.center), target, v, sc,
                                       [&](const View& current, int, double* residual) {
                                         *residual = 0.0;
                                         return relative_pose(current.frame, goal_view.frame).reduce();
                                       });
  CHECK(r.converged);
  CHECK(r.success);
  CHECK(r.final_angle < sc.stop_angle);
  for (std::size_t i = 1; i < r.trajectory.size(); ++i) {
    CHECK(r.trajectory[i].angle_to_goal <= r.trajectory[i - 1].angle_to_goal + 1e-9);
  }
}

TEST_CASE("cost map is zero at the snapped source cell") {
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  const ViewConfig v = small_view();
  HemispherePose src;
  src.azimuth = 0.9;
  src.elevation = 0.6;
  src.radius = 0.6;
  const CostMap c = cost_map(random_model(8), src, obj, v, 6, 2);
  CHECK(c.values.rows() == 6);
  CHECK(c.values.cols() == 6);
  CHECK(c.values(c.source_row, c.source_col) == 0.0);
  CHECK(c.angles(c.source_row, c.source_col) < 1e-9);
  CHECK(c.values.minCoeff() >= 0.0);
  CHECK(c.elevations.minCoeff() >= v.elevation.lo);
  CHECK(c.elevations.maxCoeff() <= v.elevation.hi);
  CHECK_THROWS_AS(cost_map(random_model(8), src, obj, v, 2), std::invalid_argument);
  const std::string csv = matrix_csv(c.values);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  CHECK(std::count(csv.begin(), csv.end(), ',') == 6 * 5);
}
