#include "eqvs/servo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "eqvs/eval.hpp"

namespace eqvs {

using PoseVec = Eigen::Matrix<double, kPoseDim, 1>;

void InferenceConfig::validate() const {
  if (!(step > 0)) throw std::invalid_argument("InferenceConfig: step must be positive");
  if (restarts < 1) throw std::invalid_argument("InferenceConfig: restarts must be >= 1");
  if (max_iterations < 0) throw std::invalid_argument("InferenceConfig: max_iterations must be >= 0");
  if (!(backtrack > 0 && backtrack < 1)) throw std::invalid_argument("InferenceConfig: backtrack must lie in (0,1)");
  if (max_halvings < 0) throw std::invalid_argument("InferenceConfig: max_halvings must be >= 0");
}

void ServoConfig::validate() const {
  if (max_iterations < 0) throw std::invalid_argument("ServoConfig: max_iterations must be >= 0");
  if (!(angle_threshold > 0) || !(add_threshold > 0)) throw std::invalid_argument("ServoConfig: thresholds must be positive");
  if (!(stop_angle > 0) || !(stop_translation > 0)) throw std::invalid_argument("ServoConfig: stop tolerances must be positive");
  if (!(beta >= 0 && beta <= 1)) throw std::invalid_argument("ServoConfig: beta must lie in [0,1]");
}

PoseVec project_pose(const PoseVec& v, bool reduced) {
  PoseVec out = v;
  Eigen::Vector4d q = v.tail<4>();
  const double n = q.norm();
  if (!(n > 0) || !std::isfinite(n)) throw std::invalid_argument("project_pose: degenerate quaternion");
  q /= n;
  if (q[0] < 0) q = -q;
  out.tail<4>() = q;
  if (reduced) out.head<3>().setZero();
  return out;
}

namespace {

// Batched residual graph: one row per candidate pose.
class ResidualGraph {
 public:
  ResidualGraph(const Model<float>& model, const Eigen::VectorXf& f_src, const Eigen::VectorXf& f_tar, Eigen::Index rows)
      : g_(&model.params) {
    const Eigen::Index n = model.config.feature_dim;
    if (f_src.size() != n || f_tar.size() != n) throw std::invalid_argument("inference: feature size mismatch");
    grad::Tensor<float> src({rows, n}), tar({rows, n});
    src.matrix().rowwise() = f_src.transpose();
    tar.matrix().rowwise() = f_tar.transpose();
    pose_ = g_.variable(grad::Tensor<float>({rows, kPoseDim}));
    const grad::Var h = build_transformer(g_, model.config, g_.constant(std::move(src)), pose_);
    diff_ = g_.sub(h, g_.constant(std::move(tar)));
    loss_ = g_.reduce_sum(g_.mul(diff_, diff_));
  }

  Eigen::VectorXd residuals(const Eigen::MatrixXd& poses) {
    g_.set_value(pose_, grad::Tensor<float>::from_matrix(poses.cast<float>()));
    g_.forward();
    return g_.value(diff_).matrix().rowwise().squaredNorm().cast<double>();
  }

  // Gradient of each row's residual with respect to its pose (after residuals()).
  Eigen::MatrixXd gradients() {
    g_.backward(loss_);
    return g_.grad(pose_).matrix().cast<double>();
  }

 private:
  grad::Graph<float> g_;
  grad::Var pose_, diff_, loss_;
};

}  // namespace

Eigen::VectorXd inference_residuals(const Model<float>& model, const Eigen::VectorXf& f_src,
                                    const Eigen::VectorXf& f_tar, const Eigen::MatrixXd& poses) {
  ResidualGraph rg(model, f_src, f_tar, poses.rows());
  return rg.residuals(poses);
}

InferenceResult infer_from_features(const Model<float>& model, const Eigen::VectorXf& f_src,
                                    const Eigen::VectorXf& f_tar, const InferenceConfig& config) {
  config.validate();
  const int m = config.restarts;
  Eigen::MatrixXd poses(m, kPoseDim);
  std::mt19937_64 rng(config.seed);
  for (int r = 0; r < m; ++r) {
    PoseVec v = PoseVec::Zero();
    const Quat q = r == 0 ? Quat::Identity() : random_rotation(rng);
    v.tail<4>() << q.w(), q.x(), q.y(), q.z();
    poses.row(r) = project_pose(v, config.reduced).transpose();
  }

  ResidualGraph rg(model, f_src, f_tar, m);
  Eigen::VectorXd e = rg.residuals(poses);
  if (!e.allFinite()) throw std::runtime_error("inference: non-finite residual at iteration 0");
  std::vector<std::vector<double>> traces(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) traces[static_cast<std::size_t>(r)].push_back(e[r]);
  std::vector<char> active(static_cast<std::size_t>(m), 1);

  for (int it = 1; it <= config.max_iterations; ++it) {
    if (std::none_of(active.begin(), active.end(), [](char a) { return a; })) break;
    rg.residuals(poses);
    Eigen::MatrixXd grads = rg.gradients();
    if (config.reduced) grads.leftCols(3).setZero();

    std::vector<char> pending = active;
    Eigen::MatrixXd accepted = poses;
    Eigen::VectorXd accepted_e = e;
    double step = config.step;
    for (int h = 0; h <= config.max_halvings; ++h, step *= config.backtrack) {
      Eigen::MatrixXd candidates = poses;
      for (int r = 0; r < m; ++r) {
        if (!pending[static_cast<std::size_t>(r)]) continue;
        const PoseVec v = poses.row(r).transpose() - step * grads.row(r).transpose();
        candidates.row(r) = project_pose(v, config.reduced).transpose();
      }
      const Eigen::VectorXd ce = rg.residuals(candidates);
      bool any = false;
      for (int r = 0; r < m; ++r) {
        if (!pending[static_cast<std::size_t>(r)]) continue;
        if (!std::isfinite(ce[r])) {
          throw std::runtime_error("inference: non-finite residual at iteration " + std::to_string(it));
        }
        if (ce[r] <= e[r]) {
          accepted.row(r) = candidates.row(r);
          accepted_e[r] = ce[r];
          pending[static_cast<std::size_t>(r)] = 0;
        } else {
          any = true;
        }
      }
      if (!any) break;
    }
    for (int r = 0; r < m; ++r) {
      const auto ri = static_cast<std::size_t>(r);
      if (!active[ri]) continue;
      if (pending[ri]) {
        active[ri] = 0;  // no acceptable step left
        continue;
      }
      const double change = e[r] - accepted_e[r];
      poses.row(r) = accepted.row(r);
      e[r] = accepted_e[r];
      traces[ri].push_back(e[r]);
      if (change <= config.tolerance) active[ri] = 0;
    }
  }

  int best = 0;
  for (int r = 1; r < m; ++r) {
    if (e[r] < e[best]) best = r;
  }
  InferenceResult out;
  out.p = vec_to_pose(poses.row(best).transpose(), config.reduced);
  out.residual = e[best];
  out.restart = best;
  out.trace = traces[static_cast<std::size_t>(best)];
  out.traces = std::move(traces);
  return out;
}

InferenceResult infer_relative_pose(const Model<float>& model, const Image& src, const Image& tar,
                                    const InferenceConfig& config) {
  const Eigen::MatrixXf f = extract_batch(model, {&src, &tar});
  return infer_from_features(model, f.row(0).transpose(), f.row(1).transpose(), config);
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

ServoTarget make_target(const SceneObject& scene, const Pose& goal_camera, const ViewConfig& view) {
  View v = make_view(scene, goal_camera, view);
  ServoTarget t;
  t.image = std::move(v.image);
  t.s = view.centered ? v.centering.s : 1.0;
  t.R = view.centered ? v.centering.R : Mat3::Identity();
  t.camera = goal_camera;
  return t;
}

Pose look_at_camera(const Mat3& R, const Vec3& center, double depth) {
  Pose cam = Pose::Identity();
  cam.linear() = R;
  cam.translation() = -R * center + depth * Vec3::UnitZ();
  return cam;
}

namespace {

Mat3 centered_rotation(const Pose& cam, const Vec3& center) {
  const Vec3 c = cam * center;
  return Quat::FromTwoVectors(c.normalized(), Vec3::UnitZ()).toRotationMatrix() * cam.linear();
}

}  // namespace

double view_angle(const Pose& a, const Pose& b, const Vec3& center) {
  return geodesic_angle(centered_rotation(a, center), centered_rotation(b, center));
}

ServoResult run_servo_loop(const SceneObject& scene, const Pose& start_camera, const ServoTarget& target,
                           const ViewConfig& view, const ServoConfig& config, const PoseEstimator& estimate) {
  config.validate();
  const PoseGT goal = PoseGT::from(target.camera);
  ServoResult out;
  Pose cam = start_camera;
  for (int it = 0;; ++it) {
    const View v = make_view(scene, cam, view);
    ServoStep step;
    step.iteration = it;
    step.camera = cam;
    step.hemisphere = HemispherePose::from_camera(v.frame, scene.center);
    step.angle_to_goal = view_angle(cam, target.camera, scene.center);
    step.add = add_metric(scene.vertices, goal, PoseGT::from(cam));
    double residual = 0.0;
    const RelTransform p = estimate(v, it, &residual);
    step.residual = residual;
    out.trajectory.push_back(step);

    const double angle = rotation_angle(canonical(p.q));
    double translation = p.t.norm();
    if (view.centered) translation = std::abs(depth_change(v.centering.s / target.s, v.distance));
    if (angle < config.stop_angle && translation < config.stop_translation) {
      out.converged = true;
      break;
    }
    if (it == config.max_iterations) break;

    const Quat q = Quat::Identity().slerp(config.beta, canonical(p.q));
    if (view.centered) {
      const double depth = v.distance + config.beta * depth_change(v.centering.s / target.s, v.distance);
      Pose aim = Pose::Identity();
      aim.linear() = target.R.transpose();
      cam = aim * look_at_camera(q.toRotationMatrix() * v.frame.linear(), scene.center, depth);
    } else {
      cam = RelTransform::rigid(config.beta * p.t, q).isometry() * cam;
    }
    ++out.iterations;
  }
  const ServoStep& last = out.trajectory.back();
  out.final_camera = last.camera;
  out.final_angle = last.angle_to_goal;
  out.final_add = last.add;
  out.success = out.final_angle < config.angle_threshold && out.final_add < config.add_threshold * scene.diameter;
  return out;
}

ServoResult closed_loop_servo(const Model<float>& model, const SceneObject& scene, const Pose& start_camera,
                              const ServoTarget& target, const ViewConfig& view, const ServoConfig& servo_config,
                              const InferenceConfig& infer_config) {
  const Eigen::VectorXf f_tar = extract(model, target.image);
  InferenceConfig ic = infer_config;
  ic.reduced = view.centered;
  return run_servo_loop(scene, start_camera, target, view, servo_config,
                        [&](const View& current, int it, double* residual) {
                          InferenceConfig step_cfg = ic;
                          step_cfg.seed = derive_seed(infer_config.seed, static_cast<std::uint64_t>(it));
                          const InferenceResult r =
                              infer_from_features(model, extract(model, current.image), f_tar, step_cfg);
                          *residual = r.residual;
                          return r.p;
                        });
}

std::string trajectory_csv(const ServoResult& result) {
  std::ostringstream os;
  os.precision(9);
  os << "iteration,azimuth,elevation,roll,residual,angle_to_goal\n";
  for (const auto& s : result.trajectory) {
    os << s.iteration << ',' << s.hemisphere.azimuth << ',' << s.hemisphere.elevation << ',' << s.hemisphere.roll
       << ',' << s.residual << ',' << s.angle_to_goal << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Cost map
// ---------------------------------------------------------------------------

CostMap cost_map(const Model<float>& model, const HemispherePose& source, const SceneObject& scene,
                 const ViewConfig& view, int grid_res, int threads) {
  if (grid_res < 4) throw std::invalid_argument("cost_map: grid_res must be >= 4");
  CostMap map;
  map.resolution = grid_res;
  map.roll = source.roll;
  map.radius = source.radius;
  map.azimuths.resize(grid_res);
  map.elevations.resize(grid_res);
  const double el_lo = view.elevation.lo, el_span = view.elevation.hi - view.elevation.lo;
  for (int i = 0; i < grid_res; ++i) {
    map.azimuths[i] = (i + 0.5) * 2 * kPi / grid_res;
    map.elevations[i] = el_lo + (i + 0.5) * el_span / grid_res;
  }
  double az = std::fmod(source.azimuth, 2 * kPi);
  if (az < 0) az += 2 * kPi;
  map.source_col = std::clamp(static_cast<int>(az / (2 * kPi) * grid_res), 0, grid_res - 1);
  map.source_row = el_span > 0 ? std::clamp(static_cast<int>((source.elevation - el_lo) / el_span * grid_res), 0,
                                            grid_res - 1)
                               : 0;

  auto cell_pose = [&](int row, int col) {
    HemispherePose h;
    h.azimuth = map.azimuths[col];
    h.elevation = map.elevations[row];
    h.roll = map.roll;
    h.radius = map.radius;
    return h;
  };
  const int cells = grid_res * grid_res;
  std::vector<Image> images(static_cast<std::size_t>(cells));
  std::vector<Pose> frames(static_cast<std::size_t>(cells));
  auto render_cell = [&](int c) {
    View v = make_view(scene, cell_pose(c / grid_res, c % grid_res).camera_pose(scene.center), view);
    images[static_cast<std::size_t>(c)] = std::move(v.image);
    frames[static_cast<std::size_t>(c)] = v.frame;
  };
  const int workers = std::max(1, std::min(threads, cells));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int c = w; c < cells; c += workers) render_cell(c);
    });
  }
  for (int c = 0; c < cells; c += workers) render_cell(c);
  for (auto& t : pool) t.join();

  std::vector<const Image*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  const Eigen::MatrixXf feats = extract_batch(model, ptrs);
  const int src = map.source_row * grid_res + map.source_col;
  const Mat3 src_r = frames[static_cast<std::size_t>(src)].linear();
  map.values.resize(grid_res, grid_res);
  map.angles.resize(grid_res, grid_res);
  for (int c = 0; c < cells; ++c) {
    map.values(c / grid_res, c % grid_res) = static_cast<double>((feats.row(c) - feats.row(src)).norm());
    map.angles(c / grid_res, c % grid_res) = geodesic_angle(frames[static_cast<std::size_t>(c)].linear(), src_r);
  }
  return map;
}

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::ostringstream os;
  os.precision(9);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << m(r, c);
    os << '\n';
  }
  return os.str();
}

}  // namespace eqvs
