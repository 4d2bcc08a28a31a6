#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eqvs/data.hpp"
#include "eqvs/geom.hpp"
#include "eqvs/repr.hpp"
#include "eqvs/servo.hpp"

namespace eqvs {

// ---------------------------------------------------------------------------
// IBVS with oracle correspondences
// ---------------------------------------------------------------------------

using Twist = Eigen::Matrix<double, 6, 1>;  // (v, w) in the camera frame

/// Point-feature interaction matrix in normalized image coordinates.
Eigen::Matrix<double, 2, 6> interaction_matrix(double x, double y, double Z);

struct IBVSConfig {
  double gain = 0.5;
  /// Constant depth used in every interaction matrix; <= 0 makes ibvs_servo
  /// hold each point at its depth in the goal view instead.
  double depth = 0.0;
  double dt = 1.0;
  /// RMS feature error (normalized coordinates) that counts as converged.
  double threshold = 1e-4;
  int max_steps = 200;
  double damping = 1e-8;
  double rank_threshold = 1e-8;

  void validate() const;
};

struct IBVSCommand {
  Twist twist = Twist::Zero();
  bool rank_deficient = false;
};

/// v = -gain * pinv(L) * (current - target), with columns of the 2xN inputs
/// matched by index. L uses `depths` per feature when given, else config.depth.
IBVSCommand ibvs_step(const Eigen::Matrix2Xd& current, const Eigen::Matrix2Xd& target, const IBVSConfig& config,
                      const Eigen::VectorXd* depths = nullptr);

/// Normalized coordinates of world points; false if any point is behind the
/// camera or projects outside the image.
bool project_points(const Eigen::Matrix3Xd& world, const Pose& camera, const CameraIntrinsics& k, int width,
                    int height, Eigen::Matrix2Xd* normalized);

enum class IBVSOutcome { kConverged, kDiverged, kStepCap, kSingular };
std::string to_string(IBVSOutcome o);

struct IBVSResult {
  ServoResult servo;  // trajectory residual column holds the RMS feature error
  IBVSOutcome outcome = IBVSOutcome::kStepCap;
};

IBVSResult ibvs_servo(const SceneObject& scene, const Pose& start_camera, const Pose& goal_camera,
                      const ViewConfig& view, const IBVSConfig& config, const ServoConfig& servo_config = {});

// ---------------------------------------------------------------------------
// Relative pose regression
// ---------------------------------------------------------------------------

/// Siamese encoder with a regression head on the concatenated features.
struct RPRModel {
  EncoderConfig config;
  std::vector<int> head_widths{256, 256};
  grad::ParamSet<float> params;
};

RPRModel init_rpr(const EncoderConfig& config, const std::vector<int>& head_widths, std::uint64_t seed);

/// Raw 7-vector head output for a batch of image pairs.
template <class Scalar>
grad::Var build_rpr(grad::Graph<Scalar>& g, const RPRModel& model, grad::Var src, grad::Var tar);

/// Squared chordal distance min(|q - q'|^2, |q + q'|^2) with q' the
/// normalized prediction; plus the squared translation error for unreduced
/// labels. Mean over the batch.
double rpr_loss(const RPRModel& model, const TrainBatch& batch, grad::ParamSet<float>* grads = nullptr);

TrainResult rpr_train(RPRModel& model, const std::vector<Image>& images, const std::vector<TrainingPair>& pairs,
                      const TrainConfig& config, const EpochCallback& on_epoch = {});

RelTransform rpr_predict(const RPRModel& model, const Image& src, const Image& tar, bool reduced = true);

ServoResult rpr_servo(const RPRModel& model, const SceneObject& scene, const Pose& start_camera,
                      const ServoTarget& target, const ViewConfig& view, const ServoConfig& config);

}  // namespace eqvs
