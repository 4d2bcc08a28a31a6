#include <doctest.h>

#include "eqvs/eval.hpp"
#include "test_util.hpp"

using namespace eqvs;

namespace {

Eigen::Matrix3Xd random_cloud(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  Eigen::Matrix3Xd p(3, n);
  for (int i = 0; i < n; ++i) p.col(i) = Vec3(u(rng), u(rng), u(rng));
  return p;
}

ViewConfig small_view() {
  ViewConfig v;
  v.image_size = 32;
  v.focal = 55;
  v.target_size_px = 20;
  return v;
}

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.image_size = 32;
  c.pool = 1;
  c.conv_channels = {4, 4};
  c.head_widths = {8};
  c.feature_dim = 8;
  c.transformer_widths = {8};
  return c;
}

struct Fixture {
  SceneObject scene = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  Model<float> ours = init_model(small_encoder(), 1);
  RPRModel rpr = init_rpr(small_encoder(), {8}, 2);
  Methods methods;
  EvalConfig config;

  Fixture() {
    methods.ours = &ours;
    methods.rpr = &rpr;
    methods.inference.restarts = 1;
    methods.inference.max_iterations = 5;
    methods.servo.max_iterations = 2;
    methods.ibvs.max_steps = 10;
    config.trials = 3;
    config.seed = 5;
  }
};

}  // namespace

TEST_CASE("add metric examples") {
  std::mt19937_64 rng(1);
  const Eigen::Matrix3Xd pts = random_cloud(rng, 10);
  const PoseGT gt = PoseGT::from(test::random_pose(rng));
  CHECK(add_metric(pts, gt, gt) == 0.0);
  const Vec3 t(0.3, -0.4, 0.0);
  CHECK(add_metric(pts, gt, PoseGT{gt.R, gt.T + t}) == doctest::Approx(0.5).epsilon(1e-12));
  // from a pose with zero translation the result is exact
  const PoseGT origin{gt.R, Vec3::Zero()};
  CHECK(add_metric(pts, origin, PoseGT{gt.R, t}) == t.norm());
  CHECK_THROWS_AS(add_metric(Eigen::Matrix3Xd(3, 0), gt, gt), std::invalid_argument);
}

TEST_CASE("add metric matches a per-point loop") {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 50; ++k) {
    const Eigen::Matrix3Xd pts = random_cloud(rng, 10);
    const PoseGT a = PoseGT::from(test::random_pose(rng)), b = PoseGT::from(test::random_pose(rng));
    double sum = 0.0;
    for (int i = 0; i < 10; ++i) {
      const Vec3 x = pts.col(i);
      sum += ((a.R * x + a.T) - (b.R * x + b.T)).norm();
    }
    CHECK(std::abs(add_metric(pts, a, b) - sum / 10) < 1e-12);
  }
}

TEST_CASE("add metric is invariant to a common rigid transform") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    const Eigen::Matrix3Xd pts = random_cloud(rng, 12);
    const Pose a = test::random_pose(rng), b = test::random_pose(rng), g = test::random_pose(rng);
    const double base = add_metric(pts, PoseGT::from(a), PoseGT::from(b));
    CHECK(std::abs(add_metric(pts, PoseGT::from(g * a), PoseGT::from(g * b)) - base) < 1e-9);
  }
}

TEST_CASE("pcs examples") {
  CHECK(pcs({0.01, 0.02}, 0.1) == 1.0);
  CHECK(pcs({0.01, 0.02, 0.04, 0.05}, 0.03) == 0.5);
  CHECK(pcs({0.03}, 0.03) == 0.0);
  CHECK_THROWS_AS(pcs({}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(pcs({0.1}, 0.0), std::invalid_argument);
}

TEST_CASE("pcs is monotone in epsilon") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 0.1);
  std::vector<double> v(40);
  for (double& x : v) x = u(rng);
  double prev = 0.0;
  for (int i = 1; i <= 100; ++i) {
    const double p = pcs(v, 0.0012 * i);
    CHECK(p >= prev);
    CHECK(p <= 1.0);
    prev = p;
  }
}

TEST_CASE("eval config and method names") {
  EvalConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(mid_epsilon(c.epsilons) == 0.05);
  c.trials = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_NOTHROW(check_methods({"ours", "rpr"}));
  try {
    check_methods({"ours", "orb"});
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("orb") != std::string::npos);
    CHECK(msg.find("ours, ibvs, rpr") != std::string::npos);
  }
}

TEST_CASE("trial sampling") {
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  const ViewConfig v = small_view();
  const Range angle{60.0 * kPi / 180.0, 150.0 * kPi / 180.0};
  const auto a = sample_trials(obj, v, 20, angle, 3);
  const auto b = sample_trials(obj, v, 5, angle, 3);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a[i].seed == b[i].seed);
    CHECK(a[i].start.matrix() == b[i].start.matrix());
  }
  for (const Trial& t : a) {
    CHECK(angle.contains(t.start_angle));
    CHECK(view_angle(t.start, t.goal, obj.center) == doctest::Approx(t.start_angle).epsilon(1e-6));
    const HemispherePose s = HemispherePose::from_camera(t.start, obj.center);
    CHECK(v.elevation.contains(s.elevation));
    CHECK(v.radius.contains(s.radius));
  }
}

TEST_CASE("benchmark checks models before running") {
  Fixture f;
  Methods m = f.methods;
  m.rpr = nullptr;
  f.config.methods = {"ibvs", "rpr"};
  CHECK_THROWS_AS(run_benchmark(m, f.scene, "toy", small_view(), f.config), std::runtime_error);
  f.config.methods = {"ibvs", "sift"};
  CHECK_THROWS_AS(run_benchmark(f.methods, f.scene, "toy", small_view(), f.config), std::invalid_argument);
}

TEST_CASE("benchmark is deterministic and methods are independent") {
  Fixture f;
  const ViewConfig v = small_view();
  const auto all = run_benchmark(f.methods, f.scene, "toy", v, f.config, 2);
  REQUIRE(all.size() == 3);
  const auto again = run_benchmark(f.methods, f.scene, "toy", v, f.config, 1);
  const std::vector<double> fr = f.config.epsilons;
  CHECK(benchmark_csv(all, fr) == benchmark_csv(again, fr));

  f.config.methods = {"ibvs"};
  const auto only = run_benchmark(f.methods, f.scene, "toy", v, f.config, 1);
  REQUIRE(only.size() == 1);
  CHECK(only[0].add == all[1].add);

  for (const EvalResult& r : all) {
    CHECK(r.n() == 3);
    CHECK(r.trials.size() == 3);
    for (double p : r.pcs) CHECK((p >= 0.0 && p <= 1.0));
  }
  const std::string csv = benchmark_csv(all, fr);
  CHECK(csv.rfind("object,method,trials,mean_add,pcs@0.02,pcs@0.05,pcs@0.1,pcs@0.2\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  const std::string curve = pcs_curve_csv(all, f.scene.diameter, 0.2, 10);
  CHECK(curve.rfind("method,epsilon,pcs\n", 0) == 0);
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 1 + 3 * 10);
}

TEST_CASE("summaries") {
  std::vector<TrialOutcome> t(4);
  const double adds[] = {0.01, 0.02, 0.04, 0.05};
  for (int i = 0; i < 4; ++i) t[static_cast<std::size_t>(i)].add = adds[i];
  const EvalResult r = summarize("ours", "toy", t, {0.03, 0.1});
  CHECK(r.n() == 4);
  CHECK(r.mean_add() == doctest::Approx(0.03));
  CHECK(r.pcs == std::vector<double>{0.5, 1.0});
}

TEST_CASE("identical arms give zero ablation reduction") {
  Fixture f;
  f.config.trials = 2;
  const AblationRow row =
      ablation_compare({&f.ours, true}, {&f.ours, true}, f.scene, "toy", small_view(), f.methods, f.config, 2);
  CHECK(row.with_centering == row.without_centering);
  CHECK(row.reduction_percent() == 0.0);
  CHECK(row.trials == 2);
  const std::string csv = ablation_csv({row, row});
  CHECK(csv.rfind("object,trials,mean_add_with_centering,mean_add_without_centering,reduction_percent\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  AblationRow half;
  half.with_centering = 1.0;
  half.without_centering = 4.0;
  CHECK(half.reduction_percent() == 75.0);
}
