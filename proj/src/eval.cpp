#include "eqvs/eval.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "parallel.hpp"

namespace eqvs {

double add_metric(const Eigen::Matrix3Xd& points, const PoseGT& gt, const PoseGT& est) {
  if (points.cols() == 0) throw std::invalid_argument("add_metric: empty point set");
  // Differencing the poses first keeps a pure translation exact: every
  // column is then the same vector, its norm is taken as a Vec3 like any
  // other, and the shifted mean returns it unchanged.
  const Mat3 dR = gt.R - est.R;
  const Vec3 dT = gt.T - est.T;
  Eigen::ArrayXd d(points.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) d[i] = Vec3(dR * points.col(i) + dT).norm();
  return d[0] + (d - d[0]).mean();
}

double pcs(const std::vector<double>& add_values, double epsilon) {
  if (add_values.empty()) throw std::invalid_argument("pcs: empty ADD list");
  if (!(epsilon > 0)) throw std::invalid_argument("pcs: epsilon must be positive");
  std::size_t hits = 0;
  for (double v : add_values) hits += v < epsilon;
  return static_cast<double>(hits) / static_cast<double>(add_values.size());
}

void EvalConfig::validate() const {
  if (trials < 1) throw std::invalid_argument("EvalConfig: trials must be >= 1");
  if (!(start_angle.lo >= 0 && start_angle.lo <= start_angle.hi && start_angle.hi <= kPi)) {
    throw std::invalid_argument("EvalConfig: start angle range must lie in [0, pi]");
  }
  if (epsilons.empty()) throw std::invalid_argument("EvalConfig: empty epsilon list");
  for (double e : epsilons) {
    if (!(e > 0)) throw std::invalid_argument("EvalConfig: epsilons must be positive");
  }
  check_methods(methods);
}

double mid_epsilon(const std::vector<double>& epsilons) {
  if (epsilons.empty()) throw std::invalid_argument("mid_epsilon: empty list");
  std::vector<double> e = epsilons;
  std::sort(e.begin(), e.end());
  return e[(e.size() - 1) / 2];
}

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"ours", "ibvs", "rpr"};
  return m;
}

void check_methods(const std::vector<std::string>& methods) {
  if (methods.empty()) throw std::invalid_argument("no methods given (valid: ours, ibvs, rpr)");
  for (const auto& m : methods) {
    const auto& k = known_methods();
    if (std::find(k.begin(), k.end(), m) == k.end()) {
      throw std::invalid_argument("unknown method '" + m + "' (valid: ours, ibvs, rpr)");
    }
  }
}

std::vector<Trial> sample_trials(const SceneObject& scene, const ViewConfig& view, int count, Range angle,
                                 std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_trials: trials must be >= 1");
  view.validate();
  std::vector<Trial> trials;
  for (int i = 0; i < count; ++i) {
    Trial t;
    t.index = i;
    t.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(t.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) throw std::runtime_error("sample_trials: cannot place a start view in range");
      const HemispherePose goal = sample_hemisphere(rng, view.radius, view.elevation);
      const Mat3 goal_frame = goal.camera_pose(scene.center).linear();
      const double theta = angle.lo + (angle.hi - angle.lo) * u(rng);
      const Vec3 axis = random_rotation(rng) * Vec3::UnitZ();
      const Mat3 start_frame = Eigen::AngleAxisd(theta, axis).toRotationMatrix() * goal_frame;
      const double depth = view.radius.lo + (view.radius.hi - view.radius.lo) * u(rng);
      const HemispherePose start =
          HemispherePose::from_camera(look_at_camera(start_frame, scene.center, depth), scene.center);
      if (!view.elevation.contains(start.elevation)) continue;
      t.goal = jittered_camera(goal, scene.center, view.aim_jitter, rng);
      t.start = jittered_camera(start, scene.center, view.aim_jitter, rng);
      t.start_angle = view_angle(t.start, t.goal, scene.center);
      break;
    }
    trials.push_back(t);
  }
  return trials;
}

TrialOutcome run_trial(const std::string& method, const Methods& methods, const SceneObject& scene,
                       const ViewConfig& view, const Trial& trial) {
  ServoResult r;
  if (method == "ours") {
    if (!methods.ours) throw std::runtime_error("method 'ours' needs a trained model");
    InferenceConfig ic = methods.inference;
    ic.seed = derive_seed(trial.seed, 1);
    r = closed_loop_servo(*methods.ours, scene, trial.start, make_target(scene, trial.goal, view), view,
                          methods.servo, ic);
  } else if (method == "rpr") {
    if (!methods.rpr) throw std::runtime_error("method 'rpr' needs a trained model");
    r = rpr_servo(*methods.rpr, scene, trial.start, make_target(scene, trial.goal, view), view, methods.servo);
  } else if (method == "ibvs") {
    r = ibvs_servo(scene, trial.start, trial.goal, view, methods.ibvs, methods.servo).servo;
  } else {
    check_methods({method});
  }
  return {r.final_add, r.final_angle, r.iterations, r.converged};
}

double EvalResult::mean_add() const {
  if (add.empty()) return 0.0;
  return std::accumulate(add.begin(), add.end(), 0.0) / static_cast<double>(add.size());
}

EvalResult summarize(const std::string& method, const std::string& object, std::vector<TrialOutcome> outcomes,
                     const std::vector<double>& epsilons_m) {
  EvalResult r;
  r.method = method;
  r.object = object;
  r.trials = std::move(outcomes);
  for (const auto& t : r.trials) r.add.push_back(t.add);
  r.epsilons = epsilons_m;
  for (double e : epsilons_m) r.pcs.push_back(pcs(r.add, e));
  return r;
}

namespace {

void require_models(const std::vector<std::string>& names, const Methods& methods) {
  for (const auto& m : names) {
    if (m == "ours" && !methods.ours) throw std::runtime_error("method 'ours' needs a trained model checkpoint");
    if (m == "rpr" && !methods.rpr) throw std::runtime_error("method 'rpr' needs a trained RPR checkpoint");
  }
}

std::vector<double> scaled(const std::vector<double>& fractions, double diameter) {
  std::vector<double> out;
  for (double f : fractions) out.push_back(f * diameter);
  return out;
}

}  // namespace

std::vector<EvalResult> run_benchmark(const Methods& methods, const SceneObject& scene, const std::string& object,
                                      const ViewConfig& view, const EvalConfig& config, int threads) {
  config.validate();
  require_models(config.methods, methods);
  const std::vector<Trial> trials = sample_trials(scene, view, config.trials, config.start_angle, config.seed);
  const int n = static_cast<int>(trials.size());
  const int m = static_cast<int>(config.methods.size());
  std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(n * m));
  detail::parallel_for(n * m, threads, [&](int job) {
    const auto& method = config.methods[static_cast<std::size_t>(job / n)];
    outcomes[static_cast<std::size_t>(job)] =
        run_trial(method, methods, scene, view, trials[static_cast<std::size_t>(job % n)]);
  });
  std::vector<EvalResult> results;
  for (int k = 0; k < m; ++k) {
    std::vector<TrialOutcome> mine(outcomes.begin() + k * n, outcomes.begin() + (k + 1) * n);
    results.push_back(summarize(config.methods[static_cast<std::size_t>(k)], object, std::move(mine),
                                scaled(config.epsilons, scene.diameter)));
  }
  return results;
}

std::string benchmark_csv(const std::vector<EvalResult>& results, const std::vector<double>& fractions) {
  std::ostringstream os;
  os.precision(9);
  os << "object,method,trials,mean_add";
  for (double f : fractions) os << ",pcs@" << f;
  os << '\n';
  for (const auto& r : results) {
    if (r.pcs.size() != fractions.size()) throw std::invalid_argument("benchmark_csv: epsilon count mismatch");
    os << r.object << ',' << r.method << ',' << r.n() << ',' << r.mean_add();
    for (double p : r.pcs) os << ',' << p;
    os << '\n';
  }
  return os.str();
}

std::string pcs_curve_csv(const std::vector<EvalResult>& results, double diameter, double max_fraction, int steps) {
  if (steps < 1 || !(max_fraction > 0) || !(diameter > 0)) throw std::invalid_argument("pcs_curve_csv: bad grid");
  std::ostringstream os;
  os.precision(9);
  os << "method,epsilon,pcs\n";
  for (const auto& r : results) {
    for (int i = 1; i <= steps; ++i) {
      const double f = max_fraction * i / steps;
      os << r.method << ',' << f << ',' << pcs(r.add, f * diameter) << '\n';
    }
  }
  return os.str();
}

double AblationRow::reduction_percent() const {
  if (!(without_centering > 0)) return 0.0;
  return 100.0 * (1.0 - with_centering / without_centering);
}

AblationRow ablation_compare(const AblationArm& with, const AblationArm& without, const SceneObject& scene,
                             const std::string& object, const ViewConfig& view, const Methods& settings,
                             const EvalConfig& config, int threads) {
  config.validate();
  if (!with.model || !without.model) throw std::runtime_error("ablation: both models are required");
  const std::vector<Trial> trials = sample_trials(scene, view, config.trials, config.start_angle, config.seed);
  const int n = static_cast<int>(trials.size());
  ViewConfig view_with = view, view_without = view;
  view_with.centered = with.centered;
  view_without.centered = without.centered;
  std::vector<double> add(static_cast<std::size_t>(2 * n));
  detail::parallel_for(2 * n, threads, [&](int job) {
    Methods m = settings;
    const bool first = job < n;
    m.ours = first ? with.model : without.model;
    add[static_cast<std::size_t>(job)] =
        run_trial("ours", m, scene, first ? view_with : view_without, trials[static_cast<std::size_t>(job % n)]).add;
  });
  AblationRow row;
  row.object = object;
  row.trials = n;
  row.with_centering = std::accumulate(add.begin(), add.begin() + n, 0.0) / n;
  row.without_centering = std::accumulate(add.begin() + n, add.end(), 0.0) / n;
  return row;
}

AblationRow ablation_centering(const Model<float>& with_centering, const Model<float>& without_centering,
                               const SceneObject& scene, const std::string& object, const ViewConfig& view,
                               const Methods& settings, const EvalConfig& config, int threads) {
  return ablation_compare({&with_centering, true}, {&without_centering, false}, scene, object, view, settings, config,
                          threads);
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "object,trials,mean_add_with_centering,mean_add_without_centering,reduction_percent\n";
  for (const auto& r : rows) {
    os << r.object << ',' << r.trials << ',' << r.with_centering << ',' << r.without_centering << ','
       << r.reduction_percent() << '\n';
  }
  return os.str();
}

}  // namespace eqvs
