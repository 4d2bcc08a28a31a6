#include "eqvs/baselines.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/SVD>

#include "eqvs/eval.hpp"

namespace eqvs {

Eigen::Matrix<double, 2, 6> interaction_matrix(double x, double y, double Z) {
  if (!(Z > 0)) throw std::invalid_argument("interaction_matrix: depth must be positive");
  Eigen::Matrix<double, 2, 6> L;
  L << -1 / Z, 0, x / Z, x * y, -(1 + x * x), y,  //
      0, -1 / Z, y / Z, 1 + y * y, -x * y, -x;
  return L;
}

void IBVSConfig::validate() const {
  if (!(gain > 0)) throw std::invalid_argument("IBVSConfig: gain must be positive");
  if (!(dt > 0)) throw std::invalid_argument("IBVSConfig: dt must be positive");
  if (!(threshold > 0)) throw std::invalid_argument("IBVSConfig: threshold must be positive");
  if (max_steps < 0) throw std::invalid_argument("IBVSConfig: max_steps must be >= 0");
  if (damping < 0 || rank_threshold < 0) throw std::invalid_argument("IBVSConfig: negative damping");
}

IBVSCommand ibvs_step(const Eigen::Matrix2Xd& current, const Eigen::Matrix2Xd& target, const IBVSConfig& config,
                      const Eigen::VectorXd* depths) {
  config.validate();
  if (current.cols() != target.cols()) throw std::invalid_argument("ibvs_step: feature count mismatch");
  if (current.cols() < 3) throw std::invalid_argument("ibvs_step: need at least 3 point features");
  if (depths) {
    if (depths->size() != current.cols() || !(depths->minCoeff() > 0)) {
      throw std::invalid_argument("ibvs_step: need one positive depth per feature");
    }
  } else if (!(config.depth > 0)) {
    throw std::invalid_argument("ibvs_step: constant depth must be positive");
  }
  const Eigen::Index n = current.cols();
  Eigen::MatrixXd L(2 * n, 6);
  Eigen::VectorXd e(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    L.middleRows<2>(2 * i) = interaction_matrix(current(0, i), current(1, i), depths ? (*depths)[i] : config.depth);
    e.segment<2>(2 * i) = current.col(i) - target.col(i);
  }
  IBVSCommand cmd;
  if (e.isZero(0.0)) return cmd;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(L, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  cmd.rank_deficient = sv.minCoeff() < config.rank_threshold;
  const Eigen::VectorXd inv = sv.array() / (sv.array().square() + config.damping);
  cmd.twist = -config.gain * (svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * e);
  return cmd;
}

bool project_points(const Eigen::Matrix3Xd& world, const Pose& camera, const CameraIntrinsics& k, int width,
                    int height, Eigen::Matrix2Xd* normalized) {
  normalized->resize(2, world.cols());
  for (Eigen::Index i = 0; i < world.cols(); ++i) {
    const Vec3 p = camera * Vec3(world.col(i));
    if (!(p.z() > 0)) return false;
    const Vec2 px = k.project(p);
    if (px.x() < 0 || px.y() < 0 || px.x() > width - 1 || px.y() > height - 1) return false;
    normalized->col(i) = p.head<2>() / p.z();
  }
  return true;
}

std::string to_string(IBVSOutcome o) {
  switch (o) {
    case IBVSOutcome::kConverged: return "converged";
    case IBVSOutcome::kDiverged: return "diverged";
    case IBVSOutcome::kStepCap: return "step-cap";
    case IBVSOutcome::kSingular: return "singular";
  }
  return "?";
}

IBVSResult ibvs_servo(const SceneObject& scene, const Pose& start_camera, const Pose& goal_camera,
                      const ViewConfig& view, const IBVSConfig& config, const ServoConfig& servo_config) {
  const IBVSConfig& cfg = config;
  cfg.validate();
  Eigen::VectorXd goal_depths;
  if (!(cfg.depth > 0)) {
    goal_depths = ((goal_camera.linear() * scene.vertices).colwise() + goal_camera.translation()).row(2).transpose();
  }
  const CameraIntrinsics k = view.intrinsics();
  Eigen::Matrix2Xd goal;
  if (!project_points(scene.vertices, goal_camera, k, view.image_size, view.image_size, &goal)) {
    throw std::invalid_argument("ibvs_servo: oracle points not visible from the goal camera");
  }
  const PoseGT gt = PoseGT::from(goal_camera);
  IBVSResult out;
  Pose cam = start_camera;
  for (int it = 0;; ++it) {
    ServoStep step;
    step.iteration = it;
    step.camera = cam;
    step.hemisphere = HemispherePose::from_camera(cam, scene.center);
    step.angle_to_goal = view_angle(cam, goal_camera, scene.center);
    step.add = add_metric(scene.vertices, gt, PoseGT::from(cam));
    Eigen::Matrix2Xd cur;
    const bool visible = project_points(scene.vertices, cam, k, view.image_size, view.image_size, &cur);
    step.residual = visible ? std::sqrt((cur - goal).squaredNorm() / static_cast<double>(goal.cols())) : 0.0;
    out.servo.trajectory.push_back(step);
    if (!visible) {
      out.outcome = IBVSOutcome::kDiverged;
      break;
    }
    if (step.residual < cfg.threshold) {
      out.outcome = IBVSOutcome::kConverged;
      out.servo.converged = true;
      break;
    }
    if (it == cfg.max_steps) {
      out.outcome = IBVSOutcome::kStepCap;
      break;
    }
    const IBVSCommand cmd = ibvs_step(cur, goal, cfg, cfg.depth > 0 ? nullptr : &goal_depths);
    if (cmd.rank_deficient) {
      out.outcome = IBVSOutcome::kSingular;
      break;
    }
    cam = se3_exp(cmd.twist, cfg.dt).inverse() * cam;
    ++out.servo.iterations;
  }
  const ServoStep& last = out.servo.trajectory.back();
  out.servo.final_camera = last.camera;
  out.servo.final_angle = last.angle_to_goal;
  out.servo.final_add = last.add;
  out.servo.success = out.servo.final_angle < servo_config.angle_threshold &&
                      out.servo.final_add < servo_config.add_threshold * scene.diameter;
  return out;
}

// ---------------------------------------------------------------------------
// RPR
// ---------------------------------------------------------------------------

RPRModel init_rpr(const EncoderConfig& config, const std::vector<int>& head_widths, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  RPRModel m;
  m.config = config;
  m.head_widths = head_widths;
  init_encoder_params(m.params, config, "f", rng);
  std::vector<int> widths{2 * config.feature_dim};
  widths.insert(widths.end(), head_widths.begin(), head_widths.end());
  widths.push_back(kPoseDim);
  init_mlp_params(m.params, "r", widths, rng);
  // Start near the identity rotation.
  const std::string last = "r.fc" + std::to_string(head_widths.size()) + ".b";
  m.params.data(last)[3] = 1.0f;
  return m;
}

template <class Scalar>
grad::Var build_rpr(grad::Graph<Scalar>& g, const RPRModel& model, grad::Var src, grad::Var tar) {
  const grad::Var fs = build_encoder(g, model.config, src, "f");
  const grad::Var ft = build_encoder(g, model.config, tar, "f");
  return build_mlp(g, g.concat(fs, ft), "r", model.head_widths.size() + 1);
}

template grad::Var build_rpr<float>(grad::Graph<float>&, const RPRModel&, grad::Var, grad::Var);

double rpr_loss(const RPRModel& model, const TrainBatch& batch, grad::ParamSet<float>* grads) {
  batch.validate();
  const bool reduced = batch.p.front().reduced;
  const grad::Index b = static_cast<grad::Index>(batch.size());
  const int size = model.config.image_size;
  grad::Graph<float> g(&model.params);
  const grad::Var out = build_rpr(g, model, g.constant(images_to_tensor<float>(batch.src, size)),
                                  g.constant(images_to_tensor<float>(batch.tar, size)));
  const grad::Var q = g.normalize_rows(g.slice_cols(out, 3, 4));
  grad::Tensor<float> qlabel({b, 4}), tlabel({b, 3});
  for (grad::Index i = 0; i < b; ++i) {
    const RelTransform& p = batch.p[static_cast<std::size_t>(i)];
    if (p.reduced != reduced) throw std::invalid_argument("rpr_loss: mixed reduced and full labels");
    const auto v = pose_to_vec(p).cast<float>();
    Eigen::RowVector4f lq = v.tail<4>().transpose();
    if (g.value(q).matrix().row(i).dot(lq) < 0) lq = -lq;
    qlabel.matrix().row(i) = lq;
    tlabel.matrix().row(i) = v.head<3>().transpose();
  }
  grad::Var loss = g.mse(q, g.constant(std::move(qlabel)));
  if (!reduced) loss = g.add(loss, g.mse(g.slice_cols(out, 0, 3), g.constant(std::move(tlabel))));
  if (grads) {
    g.backward(loss);
    *grads = g.param_grads();
  }
  return static_cast<double>(g.value(loss).item());
}

TrainResult rpr_train(RPRModel& model, const std::vector<Image>& images, const std::vector<TrainingPair>& pairs,
                      const TrainConfig& config, const EpochCallback& on_epoch) {
  if (pairs.empty()) throw std::invalid_argument("rpr_train: empty dataset");
  TrainResult result;
  double sum = 0.0;
  for (std::size_t begin = 0; begin < pairs.size(); begin += 64) {
    std::vector<std::size_t> idx(std::min<std::size_t>(64, pairs.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    sum += static_cast<double>(idx.size()) * rpr_loss(model, make_batch(images, pairs, idx));
  }
  result.initial.total = sum / static_cast<double>(pairs.size());
  std::mt19937_64 roll_rng(derive_seed(config.seed, 1));
  std::vector<Image> storage;
  result.epochs = train_loop(
      model.params, pairs.size(), config,
      [&](const std::vector<std::size_t>& idx, grad::ParamSet<float>& grads) {
        const TrainBatch b = config.roll_augment
                                 ? make_rolled_batch(images, pairs, idx, *config.roll_augment, roll_rng, storage)
                                 : make_batch(images, pairs, idx);
        LossTerms l;
        l.total = rpr_loss(model, b, &grads);
        return l;
      },
      on_epoch);
  return result;
}

RelTransform rpr_predict(const RPRModel& model, const Image& src, const Image& tar, bool reduced) {
  grad::Graph<float> g(&model.params);
  const int size = model.config.image_size;
  const grad::Var out = build_rpr(g, model, g.constant(images_to_tensor<float>({&src}, size)),
                                  g.constant(images_to_tensor<float>({&tar}, size)));
  const Eigen::VectorXf v = g.value(out).data();
  Quat q(v[3], v[4], v[5], v[6]);
  if (!(q.norm() > 0)) q = Quat::Identity();
  if (reduced) return RelTransform::rotation(q);
  return RelTransform::rigid(v.head<3>().cast<double>(), q);
}

ServoResult rpr_servo(const RPRModel& model, const SceneObject& scene, const Pose& start_camera,
                      const ServoTarget& target, const ViewConfig& view, const ServoConfig& config) {
  return run_servo_loop(scene, start_camera, target, view, config, [&](const View& current, int, double* residual) {
    *residual = 0.0;
    return rpr_predict(model, current.image, target.image, view.centered);
  });
}

}  // namespace eqvs
