#include <doctest.h>

#include <Eigen/QR>

#include "eqvs/baselines.hpp"
#include "eqvs/eval.hpp"

using namespace eqvs;

namespace {

ViewConfig small_view() {
  ViewConfig v;
  v.image_size = 32;
  v.focal = 55;
  v.target_size_px = 20;
  return v;
}

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.image_size = 16;
  c.pool = 1;
  c.conv_channels = {4, 4};
  c.head_widths = {8};
  c.feature_dim = 8;
  c.transformer_widths = {8};
  return c;
}

Image random_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(16, 16);
  for (Eigen::Index i = 0; i < img.data().size(); ++i) img.data()[i] = u(rng);
  return img;
}

// Normalized image point of a camera-frame point after the camera moves with
// twist (v, w) for a short time: the point moves as -v - w x X.
Vec2 moved_point(const Vec3& X, const Twist& twist, double dt) {
  const Vec3 Xd = X + dt * (-twist.head<3>() - twist.tail<3>().cross(X));
  return Xd.head<2>() / Xd.z();
}

}  // namespace

TEST_CASE("interaction matrix matches the point kinematics") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int i = 0; i < 20; ++i) {
    const Vec3 X(u(rng), u(rng), 0.6 + u(rng));
    const Eigen::Matrix<double, 2, 6> L = interaction_matrix(X.x() / X.z(), X.y() / X.z(), X.z());
    for (int k = 0; k < 6; ++k) {
      const Twist e = Twist::Unit(k);
      const double h = 1e-6;
      const Vec2 numeric = (moved_point(X, e, h) - moved_point(X, e, -h)) / (2 * h);
      CHECK((L.col(k) - numeric).norm() < 1e-6);
    }
  }
}

TEST_CASE("ibvs step is the damped pseudo-inverse law") {
  Eigen::Matrix2Xd cur(2, 4), tar(2, 4);
  cur << 0.1, -0.1, 0.12, -0.08, 0.1, 0.09, -0.1, -0.11;
  tar << 0.11, -0.1, 0.1, -0.1, 0.1, 0.1, -0.1, -0.1;
  IBVSConfig c;
  c.depth = 0.6;
  c.damping = 0.0;
  Eigen::MatrixXd L(8, 6);
  Eigen::VectorXd e(8);
  for (int i = 0; i < 4; ++i) {
    L.block<2, 6>(2 * i, 0) = interaction_matrix(cur(0, i), cur(1, i), 0.6);
    e.segment<2>(2 * i) = cur.col(i) - tar.col(i);
  }
  const Eigen::VectorXd oracle = -c.gain * L.completeOrthogonalDecomposition().pseudoInverse() * e;
  const IBVSCommand cmd = ibvs_step(cur, tar, c);
  CHECK(!cmd.rank_deficient);
  CHECK((cmd.twist - oracle).norm() < 1e-9);
  // coincident points cannot constrain six degrees of freedom
  Eigen::Matrix2Xd same(2, 3);
  same.colwise() = cur.col(0);
  CHECK(ibvs_step(same, tar.leftCols(3), c).rank_deficient);
  CHECK_THROWS_AS(ibvs_step(cur.leftCols(2), tar.leftCols(2), c), std::invalid_argument);
}

TEST_CASE("project_points rejects points behind or outside the camera") {
  const CameraIntrinsics k = CameraIntrinsics::centered(32, 32, 55);
  Eigen::Matrix3Xd pts(3, 2);
  pts << 0, 0.01, 0, 0.02, 0.6, 0.6;
  Eigen::Matrix2Xd n;
  CHECK(project_points(pts, Pose::Identity(), k, 32, 32, &n));
  CHECK(n(0, 1) == doctest::Approx(0.01 / 0.6));
  pts(2, 1) = -0.6;
  CHECK(!project_points(pts, Pose::Identity(), k, 32, 32, &n));
  pts(2, 1) = 0.6;
  pts(0, 1) = 5.0;
  CHECK(!project_points(pts, Pose::Identity(), k, 32, 32, &n));
}

TEST_CASE("ibvs converges from a small offset") {
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  HemispherePose g, s;
  g.azimuth = 0.5;
  g.elevation = 0.8;
  g.radius = 0.6;
  s = g;
  s.azimuth += 0.15;
  s.roll = 0.1;
  const IBVSResult r = ibvs_servo(obj, s.camera_pose(obj.center), g.camera_pose(obj.center), small_view(), {});
  CHECK(r.outcome == IBVSOutcome::kConverged);
  CHECK(r.servo.success);
  CHECK(r.servo.final_angle < 1e-2);
  CHECK(to_string(r.outcome) == "converged");
}

TEST_CASE("ibvs fails from most large offsets") {
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  const ViewConfig v = small_view();
  const auto trials = sample_trials(obj, v, 20, {150.0 * kPi / 180.0, 150.0 * kPi / 180.0}, 11);
  int failed = 0;
  for (const Trial& t : trials) {
    const IBVSResult r = ibvs_servo(obj, t.start, t.goal, v, {});
    if (!r.servo.success) ++failed;
    if (r.outcome == IBVSOutcome::kConverged) CHECK(r.servo.final_angle < 1e-2);
  }
  CHECK(failed >= 10);
}

TEST_CASE("ibvs converges from a five degree offset") {
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  const ViewConfig v = small_view();
  for (const Trial& t : sample_trials(obj, v, 5, {5.0 * kPi / 180.0, 5.0 * kPi / 180.0}, 12)) {
    const IBVSResult r = ibvs_servo(obj, t.start, t.goal, v, {});
    CHECK(r.outcome == IBVSOutcome::kConverged);
    CHECK(r.servo.final_angle < 1.0 * kPi / 180.0);
  }
}

TEST_CASE("interaction matrix at the optical axis") {
  Eigen::Matrix<double, 2, 6> expected;
  expected << -1, 0, 0, 0, -1, 0, 0, -1, 0, 1, 0, 0;
  CHECK(interaction_matrix(0, 0, 1) == expected);
  const Eigen::Matrix<double, 2, 6> a = interaction_matrix(0.1, -0.2, 0.5), b = interaction_matrix(0.1, -0.2, 1.0);
  CHECK((a.leftCols<3>() - 2 * b.leftCols<3>()).norm() < 1e-15);
  CHECK(a.rightCols<3>() == b.rightCols<3>());
}

TEST_CASE("ibvs step scaling and permutation") {
  Eigen::Matrix2Xd cur(2, 4), tar(2, 4);
  cur << 0.1, -0.1, 0.12, -0.08, 0.1, 0.09, -0.1, -0.11;
  tar << 0.11, -0.1, 0.1, -0.1, 0.1, 0.1, -0.1, -0.1;
  IBVSConfig c;
  c.depth = 0.6;
  CHECK(ibvs_step(tar, tar, c).twist.isZero());
  const Twist base = ibvs_step(cur, tar, c).twist;
  IBVSConfig twice = c;
  twice.gain = 2 * c.gain;
  CHECK((ibvs_step(cur, tar, twice).twist - 2 * base).norm() < 1e-12);
  const Eigen::PermutationMatrix<Eigen::Dynamic> perm(Eigen::Vector4i(2, 0, 3, 1));
  const Eigen::Matrix2Xd pc = cur * perm, pt = tar * perm;
  CHECK((ibvs_step(pc, pt, c).twist - base).norm() < 1e-9);
}

TEST_CASE("rpr loss ignores the quaternion sign of the label") {
  const RPRModel m = init_rpr(small_encoder(), {8}, 1);
  const std::vector<Image> images{random_image(1), random_image(2)};
  std::mt19937_64 rng(2);
  const Quat q = random_rotation(rng);
  Quat neg = q;
  neg.coeffs() = -q.coeffs();
  const TrainBatch a = make_batch(images, {{0, 1, RelTransform::rotation(q)}}, {0});
  TrainBatch b = a;
  b.p[0].q = neg;
  CHECK(rpr_loss(m, a) == doctest::Approx(rpr_loss(m, b)).epsilon(1e-7));
  CHECK(rpr_loss(m, a) >= 0.0);
}

TEST_CASE("rpr loss gradient of the output bias") {
  const RPRModel m = init_rpr(small_encoder(), {8}, 3);
  const std::vector<Image> images{random_image(3), random_image(4), random_image(5)};
  std::mt19937_64 rng(4);
  std::vector<TrainingPair> pairs{{0, 1, RelTransform::rotation(random_rotation(rng))},
                                  {1, 2, RelTransform::rotation(random_rotation(rng))}};
  const TrainBatch b = make_batch(images, pairs, {0, 1});
  grad::ParamSet<float> grads;
  rpr_loss(m, b, &grads);
  const std::string name = "r.fc1.b";
  for (int k = 0; k < kPoseDim; ++k) {
    RPRModel plus = m, minus = m;
    const float h = 1e-2f;
    plus.params.data(name)[k] += h;
    minus.params.data(name)[k] -= h;
    const double numeric = (rpr_loss(plus, b) - rpr_loss(minus, b)) / (2 * h);
    CHECK(grads.value(name).data()[k] == doctest::Approx(numeric).epsilon(1e-2).scale(1e-3));
  }
}

TEST_CASE("rpr predictions are valid poses") {
  const RPRModel m = init_rpr(small_encoder(), {8}, 5);
  const RelTransform p = rpr_predict(m, random_image(6), random_image(7));
  CHECK(p.reduced);
  CHECK(p.t.isZero());
  CHECK(p.q.norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.q.w() >= 0);
}

TEST_CASE("rpr training is seeded and respects a zero learning rate") {
  std::vector<Image> images;
  for (int i = 0; i < 6; ++i) images.push_back(random_image(10 + static_cast<std::uint64_t>(i)));
  std::mt19937_64 rng(6);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < 10; ++i) pairs.push_back({i % 6, (i + 2) % 6, RelTransform::rotation(random_rotation(rng))});
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  RPRModel a = init_rpr(small_encoder(), {8}, 7), b = init_rpr(small_encoder(), {8}, 7);
  const TrainResult ra = rpr_train(a, images, pairs, c);
  rpr_train(b, images, pairs, c);
  CHECK(a.params == b.params);
  CHECK(ra.epochs.size() == 3);
  c.optimizer.lr = 0.0;
  const RPRModel before = a;
  rpr_train(a, images, pairs, c);
  CHECK(a.params == before.params);
  CHECK_THROWS_AS(rpr_train(a, images, {}, c), std::invalid_argument);
}
