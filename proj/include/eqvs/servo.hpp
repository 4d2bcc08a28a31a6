#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eqvs/data.hpp"
#include "eqvs/geom.hpp"
#include "eqvs/imaging.hpp"
#include "eqvs/repr.hpp"

namespace eqvs {

struct InferenceConfig {
  double step = 0.05;
  int max_iterations = 200;
  int restarts = 8;
  double backtrack = 0.5;
  int max_halvings = 8;
  /// A restart stops once an accepted step changes the residual by less.
  double tolerance = 1e-7;
  /// Rotation-only inference (translation held at zero).
  bool reduced = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct InferenceResult {
  RelTransform p;
  double residual = 0.0;
  /// Residual after each iteration of the chosen restart, starting with the
  /// initial value.
  std::vector<double> trace;
  int restart = 0;
  /// One trace per restart.
  std::vector<std::vector<double>> traces;
};

/// Projection onto valid pose vectors: unit quaternion with w >= 0 and, in
/// reduced mode, zero translation.
Eigen::Matrix<double, kPoseDim, 1> project_pose(const Eigen::Matrix<double, kPoseDim, 1>& v, bool reduced);

/// e(p) = |f_tar - h(f_src, p)|^2 for each row of `poses`.
Eigen::VectorXd inference_residuals(const Model<float>& model, const Eigen::VectorXf& f_src,
                                    const Eigen::VectorXf& f_tar, const Eigen::MatrixXd& poses);

/// Projected gradient descent on the pose vector with backtracking and
/// restarts (identity first, then random rotations).
InferenceResult infer_from_features(const Model<float>& model, const Eigen::VectorXf& f_src,
                                    const Eigen::VectorXf& f_tar, const InferenceConfig& config);
InferenceResult infer_relative_pose(const Model<float>& model, const Image& src, const Image& tar,
                                    const InferenceConfig& config);

struct ServoConfig {
  int max_iterations = 50;
  /// Success thresholds on the true final error.
  double angle_threshold = 10.0 * kPi / 180.0;
  double add_threshold = 0.05;  // fraction of the object diameter
  /// The loop stops once the inferred correction is smaller than this.
  double stop_angle = 2.0 * kPi / 180.0;
  double stop_translation = 0.005;
  double beta = 1.0;

  void validate() const;
};

struct ServoTarget {
  Image image;
  /// Centering scale of the goal view (1 when centering is disabled).
  double s = 1.0;
  /// Centering rotation of the goal view. The commanded camera keeps this aim
  /// offset so that it coincides with the goal once the centred views match.
  Mat3 R = Mat3::Identity();
  /// Ground-truth goal camera, used only for reporting.
  Pose camera = Pose::Identity();
};

ServoTarget make_target(const SceneObject& scene, const Pose& goal_camera, const ViewConfig& view);

struct ServoStep {
  int iteration = 0;
  HemispherePose hemisphere;
  Pose camera = Pose::Identity();
  double residual = 0.0;
  double angle_to_goal = 0.0;
  double add = 0.0;
};

struct ServoResult {
  std::vector<ServoStep> trajectory;  // the last entry is the final pose
  bool converged = false;             // stop rule fired before the cap
  bool success = false;               // true error within the thresholds
  double final_angle = 0.0;
  double final_add = 0.0;
  int iterations = 0;
  Pose final_camera = Pose::Identity();
};

/// Camera that looks at `center` from distance `depth` with orientation R.
Pose look_at_camera(const Mat3& R, const Vec3& center, double depth);

/// Rotation error between the viewing frames of two cameras looking at the
/// object (centred frames, so aim offsets do not count).
double view_angle(const Pose& a, const Pose& b, const Vec3& center);

/// Source of relative transforms for the loop.
using PoseEstimator = std::function<RelTransform(const View& current, int iteration, double* residual)>;

/// The loop shared by ours and the RPR baseline.
ServoResult run_servo_loop(const SceneObject& scene, const Pose& start_camera, const ServoTarget& target,
                           const ViewConfig& view, const ServoConfig& config, const PoseEstimator& estimate);

ServoResult closed_loop_servo(const Model<float>& model, const SceneObject& scene, const Pose& start_camera,
                              const ServoTarget& target, const ViewConfig& view, const ServoConfig& servo_config,
                              const InferenceConfig& infer_config);

/// "iteration,azimuth,elevation,roll,residual,angle_to_goal" rows; angles in radians.
std::string trajectory_csv(const ServoResult& result);

struct CostMap {
  int resolution = 0;
  Eigen::VectorXd azimuths;    // column centres
  Eigen::VectorXd elevations;  // row centres
  double roll = 0.0;
  double radius = 0.0;
  Eigen::MatrixXd values;      // feature distance to the source view
  Eigen::MatrixXd angles;      // rotation angle to the source view
  int source_row = 0;
  int source_col = 0;
};

/// Feature distance over an (elevation x azimuth) grid with roll fixed to the
/// source roll. The source pose is snapped to its nearest cell, whose value
/// is therefore exactly zero.
CostMap cost_map(const Model<float>& model, const HemispherePose& source, const SceneObject& scene,
                 const ViewConfig& view, int grid_res, int threads = 1);

std::string matrix_csv(const Eigen::MatrixXd& m);

}  // namespace eqvs
