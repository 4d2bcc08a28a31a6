#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eqvs/baselines.hpp"
#include "eqvs/data.hpp"
#include "eqvs/geom.hpp"
#include "eqvs/servo.hpp"

namespace eqvs {

struct PoseGT {
  Mat3 R = Mat3::Identity();
  Vec3 T = Vec3::Zero();

  static PoseGT from(const Pose& pose) { return {pose.linear(), pose.translation()}; }
};

/// Mean distance between the model points under the two poses.
double add_metric(const Eigen::Matrix3Xd& points, const PoseGT& gt, const PoseGT& est);
/// Fraction of values strictly below epsilon.
double pcs(const std::vector<double>& add_values, double epsilon);

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

struct EvalConfig {
  int trials = 50;
  /// Angle between the start and goal viewing frames.
  Range start_angle{60.0 * kPi / 180.0, 150.0 * kPi / 180.0};
  /// Fractions of the object diameter.
  std::vector<double> epsilons{0.02, 0.05, 0.1, 0.2};
  std::vector<std::string> methods{"ours", "ibvs", "rpr"};
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

/// The ε used when a single tolerance is needed.
double mid_epsilon(const std::vector<double>& epsilons);

const std::vector<std::string>& known_methods();
/// Throws std::invalid_argument naming the valid methods.
void check_methods(const std::vector<std::string>& methods);

struct Trial {
  int index = 0;
  std::uint64_t seed = 0;
  Pose goal = Pose::Identity();
  Pose start = Pose::Identity();
  double start_angle = 0.0;
};

/// Goal on the viewing hemisphere; the start frame is the goal frame rotated
/// about a random axis through the object by an angle drawn from `angle`,
/// redrawn until its elevation lies in range. Both cameras carry the view's
/// aim jitter.
std::vector<Trial> sample_trials(const SceneObject& scene, const ViewConfig& view, int count, Range angle,
                                 std::uint64_t seed);

struct Methods {
  const Model<float>* ours = nullptr;
  const RPRModel* rpr = nullptr;
  InferenceConfig inference;
  ServoConfig servo;
  IBVSConfig ibvs;
};

/// Final-pose errors of one trial.
struct TrialOutcome {
  double add = 0.0;
  double angle = 0.0;
  int iterations = 0;
  bool converged = false;
};

TrialOutcome run_trial(const std::string& method, const Methods& methods, const SceneObject& scene,
                       const ViewConfig& view, const Trial& trial);

struct EvalResult {
  std::string method;
  std::string object;
  std::vector<TrialOutcome> trials;
  std::vector<double> add;
  std::vector<double> epsilons;  // meters
  std::vector<double> pcs;

  int n() const { return static_cast<int>(add.size()); }
  double mean_add() const;
};

EvalResult summarize(const std::string& method, const std::string& object, std::vector<TrialOutcome> outcomes,
                     const std::vector<double>& epsilons_m);

/// Runs every method on the same trials. Models needed by the requested
/// methods must be present; this is checked before any trial runs.
std::vector<EvalResult> run_benchmark(const Methods& methods, const SceneObject& scene, const std::string& object,
                                      const ViewConfig& view, const EvalConfig& config, int threads = 1);

/// "object,method,trials,mean_add,pcs@<eps>..." with eps as diameter fractions.
std::string benchmark_csv(const std::vector<EvalResult>& results, const std::vector<double>& fractions);
/// "method,epsilon,pcs" on a fine grid up to the largest configured fraction.
std::string pcs_curve_csv(const std::vector<EvalResult>& results, double diameter, double max_fraction,
                          int steps = 50);

struct AblationRow {
  std::string object;
  int trials = 0;
  double with_centering = 0.0;
  double without_centering = 0.0;

  /// Percentage of the without-centering mean ADD removed by centering.
  double reduction_percent() const;
};

struct AblationArm {
  const Model<float>* model = nullptr;
  bool centered = true;
};

/// Two variants of our method on the same trials; the first fills
/// with_centering.
AblationRow ablation_compare(const AblationArm& with, const AblationArm& without, const SceneObject& scene,
                             const std::string& object, const ViewConfig& view, const Methods& settings,
                             const EvalConfig& config, int threads = 1);

/// Our method with and without centering on the same trials.
AblationRow ablation_centering(const Model<float>& with_centering, const Model<float>& without_centering,
                               const SceneObject& scene, const std::string& object, const ViewConfig& view,
                               const Methods& settings, const EvalConfig& config, int threads = 1);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace eqvs
