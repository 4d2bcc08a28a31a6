#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eqvs/digest.hpp"
#include "eqvs/image_io.hpp"
#include "eqvs/pipeline.hpp"

namespace fs = std::filesystem;
using namespace eqvs;

namespace {

constexpr double kDeg = kPi / 180.0;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flags shared by every subcommand.
struct Common {
  std::string config_path;
  std::string out;
  int threads = 1;

  void add(CLI::App* app, bool out_required = false) {
    app->add_option("--config", config_path, "JSON file overriding the defaults; flags override the file")
        ->check(CLI::ExistingFile);
    auto* o = app->add_option("--out", out, "Output directory (default: a timestamped run directory)");
    if (out_required) o->required();
    app->add_option("--threads", threads, "Worker threads; 1 gives bit-identical reruns")
        ->check(CLI::PositiveNumber);
  }

  RunConfig base() const {
    RunConfig c = default_run_config();
    if (!config_path.empty()) c = merge_json(c, read_file(config_path));
    return c;
  }

  std::string output_dir(const std::string& command) const {
    if (out.empty()) return make_run_dir(command);
    fs::create_directories(out);
    return out;
  }
};

template <class T>
void override_with(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

std::string stamped(const std::string& digest, const std::string& csv) {
  return "# config_digest " + digest + "\n" + csv;
}

void save_config(const std::string& dir, RunConfig c) {
  c.output_dir = dir;
  write_file((fs::path(dir) / "config.json").string(), to_json(c));
}

// Evaluation settings come from this invocation; object, view and model
// settings from the checkpoint.
RunConfig with_eval_settings(RunConfig model_config, const RunConfig& invocation) {
  model_config.inference = invocation.inference;
  model_config.servo = invocation.servo;
  model_config.ibvs = invocation.ibvs;
  model_config.eval = invocation.eval;
  return model_config;
}

// ---------------------------------------------------------------------------

struct GenData {
  Common common;
  std::optional<std::string> object;
  std::optional<std::uint64_t> object_seed, seed;
  std::optional<int> views, pairs;
  std::optional<double> max_angle;
  bool uncentered = false;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("gen-data", "Render views and sample training pairs");
    common.add(sub, true);
    sub->add_option("--object", object, "textured-cube, cylinder or asymmetric-composite");
    sub->add_option("--object-seed", object_seed);
    sub->add_option("--views", views)->check(CLI::PositiveNumber);
    sub->add_option("--pairs", pairs)->check(CLI::PositiveNumber);
    sub->add_option("--max-angle", max_angle, "Largest pair rotation in degrees");
    sub->add_option("--seed", seed);
    sub->add_flag("--uncentered", uncentered, "Skip centering (full 6-DoF pairs for the ablation)");
    sub->callback([this] { run(); });
  }

  void run() {
    RunConfig c = common.base();
    override_with(object, c.object_kind);
    override_with(object_seed, c.object_seed);
    override_with(views, c.data.views);
    override_with(pairs, c.data.pairs);
    if (max_angle) c.data.max_angle = *max_angle * kDeg;
    override_with(seed, c.data.seed);
    if (uncentered) c.view.centered = false;
    Dataset d = build_dataset(c, common.threads);
    const std::string dir = common.output_dir("gen-data");
    write_dataset(d, dir);
    save_config(dir, c);
    int counts[3] = {0, 0, 0};
    for (const auto& p : d.manifest.pairs) ++counts[static_cast<int>(p.split)];
    std::printf("samples %zu pairs %zu (train %d, val %d, test %d)\nconfig_digest %s\nwrote %s\n",
                d.manifest.samples.size(), d.manifest.pairs.size(), counts[0], counts[1], counts[2],
                d.manifest.config_digest.c_str(), dir.c_str());
  }
};

struct Train {
  Common common;
  std::string data;
  std::string model = "ours";
  std::optional<int> epochs, batch;
  std::optional<double> lambda, c, lr;
  std::optional<std::uint64_t> seed;
  bool no_augment = false;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("train", "Train our model or the RPR baseline");
    common.add(sub);
    sub->add_option("--data", data, "Dataset directory from gen-data")->required();
    sub->add_option("--model", model, "ours or rpr")->check(CLI::IsMember({"ours", "rpr"}));
    sub->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
    sub->add_option("--batch", batch)->check(CLI::PositiveNumber);
    sub->add_option("--lambda", lambda, "Geodesic loss weight");
    sub->add_option("--c", c, "Geodesic scale");
    sub->add_option("--lr", lr, "Learning rate");
    sub->add_option("--seed", seed);
    sub->add_flag("--no-roll-augment", no_augment, "Train on the stored views only");
    sub->callback([this] { run(); });
  }

  void run() {
    RunConfig cfg = common.base();
    override_with(epochs, cfg.train.epochs);
    override_with(batch, cfg.train.batch_size);
    override_with(lambda, cfg.train.weights.lambda);
    override_with(c, cfg.train.weights.c);
    override_with(lr, cfg.train.optimizer.lr);
    override_with(seed, cfg.train.seed);
    if (no_augment) cfg.roll_augment = false;
    const Dataset d = read_dataset(data);
    cfg = adopt_dataset(cfg, data, d);
    const std::vector<TrainingPair> pairs = d.training_pairs(Split::kTrain);
    const TrainConfig tc = cfg.resolved_train();
    auto progress = [](const EpochStats& s) {
      std::fprintf(stderr, "epoch %d L_equi %.6f L_geo %.6f L %.6f\n", s.epoch, s.loss.equi, s.loss.geo, s.loss.total);
    };
    TrainResult result;
    Checkpoint ckpt;
    if (model == "ours") {
      Model<float> m = initial_model(cfg);
      result = eqvs::train(m, d.images, pairs, tc, progress);
      ckpt = to_checkpoint(m, cfg);
    } else {
      RPRModel m = initial_rpr(cfg);
      result = rpr_train(m, d.images, pairs, tc, progress);
      ckpt = to_checkpoint(m, cfg);
    }
    const std::string dir = common.output_dir("train");
    save_checkpoint((fs::path(dir) / "model.ckpt").string(), ckpt);
    write_file((fs::path(dir) / "stats.csv").string(), stamped(ckpt.digest, stats_csv(result)));
    save_config(dir, cfg);
    const LossTerms last = result.epochs.empty() ? result.initial : result.epochs.back().loss;
    std::printf("initial loss %.6f\nfinal loss %.6f\nconfig_digest %s\nwrote %s\n", result.initial.total, last.total,
                ckpt.digest.c_str(), dir.c_str());
  }
};

struct Servo {
  Common common;
  std::string checkpoint;
  double start_angle = 120.0;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<double> beta;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("servo", "Closed-loop servoing from one sampled start");
    common.add(sub);
    sub->add_option("--checkpoint", checkpoint)->required();
    sub->add_option("--start-angle", start_angle, "Degrees between start and goal")->check(CLI::Range(0.0, 180.0));
    sub->add_option("--seed", seed, "Trial seed");
    sub->add_option("--iterations", iterations)->check(CLI::NonNegativeNumber);
    sub->add_option("--beta", beta)->check(CLI::Range(0.0, 1.0));
    sub->callback([this] { run(); });
  }

  void run() {
    RunConfig inv = common.base();
    override_with(seed, inv.eval.seed);
    override_with(iterations, inv.servo.max_iterations);
    override_with(beta, inv.servo.beta);
    const LoadedModel loaded = load_model(checkpoint);
    const RunConfig cfg = with_eval_settings(loaded.config, inv);
    const SceneObject scene = make_scene(cfg);
    const Range a{start_angle * kDeg, start_angle * kDeg};
    const Trial trial = sample_trials(scene, cfg.view, 1, a, cfg.eval.seed).front();
    InferenceConfig ic = cfg.inference;
    ic.seed = derive_seed(trial.seed, 1);
    const ServoResult r = closed_loop_servo(loaded.model, scene, trial.start, make_target(scene, trial.goal, cfg.view),
                                            cfg.view, cfg.servo, ic);
    const std::string dir = common.output_dir("servo");
    write_file((fs::path(dir) / "trajectory.csv").string(), stamped(config_digest(cfg), trajectory_csv(r)));
    save_config(dir, cfg);
    std::printf("%s after %d iterations\nfinal angle error %.3f deg\nfinal ADD %.6f m\nwrote %s\n",
                r.converged ? "converged" : "not-converged", r.iterations, r.final_angle / kDeg, r.final_add,
                dir.c_str());
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Eval {
  Common common;
  std::string checkpoint, rpr;
  std::optional<std::string> methods;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> eps;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("eval", "Benchmark ours, IBVS and RPR on wide-baseline starts");
    common.add(sub);
    sub->add_option("--checkpoint", checkpoint, "Our model (also fixes object and view settings)")->required();
    sub->add_option("--rpr", rpr, "RPR checkpoint");
    sub->add_option("--methods", methods, "Comma-separated subset of ours,ibvs,rpr");
    sub->add_option("--trials", trials);
    sub->add_option("--seed", seed);
    sub->add_option("--eps", eps, "Tolerances as fractions of the object diameter")->delimiter(',');
    sub->callback([this] { run(); });
  }

  void run() {
    RunConfig inv = common.base();
    if (methods) inv.eval.methods = split_list(*methods);
    try {
      check_methods(inv.eval.methods);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    override_with(trials, inv.eval.trials);
    if (inv.eval.trials < 1) throw UsageError("--trials must be >= 1");
    override_with(seed, inv.eval.seed);
    override_with(eps, inv.eval.epsilons);
    const bool wants_rpr =
        std::find(inv.eval.methods.begin(), inv.eval.methods.end(), "rpr") != inv.eval.methods.end();
    if (wants_rpr && rpr.empty()) throw ConfigError("method 'rpr' needs --rpr <checkpoint>");
    const LoadedModel ours = load_model(checkpoint);
    std::optional<LoadedRPR> baseline;
    if (wants_rpr) {
      baseline = load_rpr(rpr);
      if (baseline->config.data_digest != ours.config.data_digest) {
        throw ConfigError("config digest mismatch: " + rpr + " was trained on dataset " + baseline->config.data_digest +
                          ", " + checkpoint + " on " + ours.config.data_digest);
      }
    }
    const RunConfig cfg = with_eval_settings(ours.config, inv);
    const SceneObject scene = make_scene(cfg);
    Methods m = cfg.methods();
    m.ours = &ours.model;
    if (baseline) m.rpr = &baseline->model;
    const auto results = run_benchmark(m, scene, cfg.object_kind, cfg.view, cfg.eval, common.threads);
    const std::string digest = config_digest(cfg);
    const std::string table = benchmark_csv(results, cfg.eval.epsilons);
    const double max_eps = *std::max_element(cfg.eval.epsilons.begin(), cfg.eval.epsilons.end());
    const std::string dir = common.output_dir("eval");
    write_file((fs::path(dir) / "table.csv").string(), stamped(digest, table));
    write_file((fs::path(dir) / "pcs_curve.csv").string(),
               stamped(digest, pcs_curve_csv(results, scene.diameter, max_eps)));
    save_config(dir, cfg);
    std::printf("%swrote %s\n", table.c_str(), dir.c_str());
  }
};

struct Ablate {
  Common common;
  std::string with, without;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("ablate", "Mean ADD of our method with and without centering");
    common.add(sub);
    sub->add_option("--with", with, "Checkpoint trained on centered views")->required();
    sub->add_option("--without", without, "Checkpoint trained on uncentered views")->required();
    sub->add_option("--trials", trials);
    sub->add_option("--seed", seed);
    sub->callback([this] { run(); });
  }

  void run() {
    RunConfig inv = common.base();
    override_with(trials, inv.eval.trials);
    if (inv.eval.trials < 1) throw UsageError("--trials must be >= 1");
    override_with(seed, inv.eval.seed);
    const LoadedModel a = load_model(with);
    const LoadedModel b = load_model(without);
    if (!a.config.view.centered || b.config.view.centered) {
      throw ConfigError("--with needs a centered model and --without an uncentered one");
    }
    if (a.config.object_kind != b.config.object_kind || a.config.object_seed != b.config.object_seed) {
      throw ConfigError("the two checkpoints were trained on different objects");
    }
    const RunConfig cfg = with_eval_settings(a.config, inv);
    const SceneObject scene = make_scene(cfg);
    const AblationRow row = ablation_centering(a.model, b.model, scene, cfg.object_kind, cfg.view, cfg.methods(),
                                               cfg.eval, common.threads);
    const std::string csv = ablation_csv({row});
    const std::string dir = common.output_dir("ablate");
    write_file((fs::path(dir) / "ablation.csv").string(), stamped(config_digest(cfg), csv));
    save_config(dir, cfg);
    std::printf("%swrote %s\n", csv.c_str(), dir.c_str());
  }
};

struct Costmap {
  Common common;
  std::string checkpoint;
  int grid = 16;
  double azimuth = 45.0, elevation = 45.0, roll = 0.0;
  std::optional<double> radius;
  bool png = false;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("costmap", "Feature distance to a source view over the viewing hemisphere");
    common.add(sub);
    sub->add_option("--checkpoint", checkpoint)->required();
    sub->add_option("--grid", grid, "Cells per side")->check(CLI::Range(4, 512));
    sub->add_option("--azimuth", azimuth, "Source azimuth in degrees");
    sub->add_option("--elevation", elevation, "Source elevation in degrees");
    sub->add_option("--roll", roll, "Source roll in degrees");
    sub->add_option("--radius", radius, "Source distance (default: mid range)");
    sub->add_flag("--png", png, "Also write a grayscale PNG");
    sub->callback([this] { run(); });
  }

  void run() {
    const RunConfig inv = common.base();
    const LoadedModel loaded = load_model(checkpoint);
    const RunConfig cfg = with_eval_settings(loaded.config, inv);
    const SceneObject scene = make_scene(cfg);
    HemispherePose source;
    source.azimuth = azimuth * kDeg;
    source.elevation = elevation * kDeg;
    source.roll = roll * kDeg;
    source.radius = radius ? *radius : 0.5 * (cfg.view.radius.lo + cfg.view.radius.hi);
    const CostMap map = cost_map(loaded.model, source, scene, cfg.view, grid, common.threads);
    const std::string digest = config_digest(cfg);
    const std::string dir = common.output_dir("costmap");
    write_file((fs::path(dir) / "costmap.csv").string(), stamped(digest, matrix_csv(map.values)));
    write_file((fs::path(dir) / "angles.csv").string(), stamped(digest, matrix_csv(map.angles)));
    if (png) write_gray_png((fs::path(dir) / "costmap.png").string(), map.values, map.values.minCoeff(), map.values.maxCoeff());
    save_config(dir, cfg);
    std::printf("grid %dx%d source cell (%d, %d)\nwrote %s\n", grid, grid, map.source_row, map.source_col, dir.c_str());
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equivariant-feature visual servoing"};
  app.require_subcommand(1);
  GenData gen;
  Train train;
  Servo servo;
  Eval eval;
  Ablate ablate;
  Costmap costmap;
  gen.add(app);
  train.add(app);
  servo.add(app);
  eval.add(app);
  ablate.add(app);
  costmap.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
