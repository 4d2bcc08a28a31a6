#include "eqvs/run_config.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>

#include <json.hpp>

#include "eqvs/digest.hpp"

namespace eqvs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDeg = kPi / 180.0;

// Degrees rounded to 1e-9 so that 60 degrees prints as 60.
double to_deg(double rad) { return std::round(rad / kDeg * 1e9) / 1e9; }

json range_deg(const Range& r) { return json::array({to_deg(r.lo), to_deg(r.hi)}); }
Range range_from_deg(const json& j) { return {j.at(0).get<double>() * kDeg, j.at(1).get<double>() * kDeg}; }

json to_json_value(const RunConfig& c) {
  json j;
  j["object"] = {{"kind", c.object_kind}, {"seed", c.object_seed}};
  j["view"] = {{"image_size", c.view.image_size},
               {"focal", c.view.focal},
               {"target_size_px", c.view.target_size_px},
               {"radius", json::array({c.view.radius.lo, c.view.radius.hi})},
               {"elevation_deg", range_deg(c.view.elevation)},
               {"aim_jitter", c.view.aim_jitter},
               {"centered", c.view.centered}};
  j["data"] = {{"views", c.data.views},
               {"pairs", c.data.pairs},
               {"max_angle_deg", to_deg(c.data.max_angle)},
               {"seed", c.data.seed}};
  j["data_digest"] = c.data_digest;
  j["encoder"] = {{"image_size", c.encoder.image_size},
                  {"pool", c.encoder.pool},
                  {"conv_channels", c.encoder.conv_channels},
                  {"head_widths", c.encoder.head_widths},
                  {"feature_dim", c.encoder.feature_dim},
                  {"transformer_widths", c.encoder.transformer_widths}};
  const auto& o = c.train.optimizer;
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lambda", c.train.weights.lambda},
                {"c", c.train.weights.c},
                {"translation_weight", c.train.weights.translation_weight},
                {"seed", c.train.seed},
                {"roll_augment", c.roll_augment},
                {"cosine_decay", c.train.cosine_decay},
                {"optimizer",
                 {{"kind", o.kind == grad::OptimizerKind::kAdam ? "adam" : "sgd"},
                  {"lr", o.lr},
                  {"momentum", o.momentum},
                  {"beta1", o.beta1},
                  {"beta2", o.beta2},
                  {"eps", o.eps}}}};
  j["rpr"] = {{"head_widths", c.rpr_head_widths}};
  const auto& in = c.inference;
  j["inference"] = {{"step", in.step},
                    {"max_iterations", in.max_iterations},
                    {"restarts", in.restarts},
                    {"backtrack", in.backtrack},
                    {"max_halvings", in.max_halvings},
                    {"tolerance", in.tolerance},
                    {"seed", in.seed}};
  const auto& s = c.servo;
  j["servo"] = {{"max_iterations", s.max_iterations},
                {"angle_threshold_deg", to_deg(s.angle_threshold)},
                {"add_threshold", s.add_threshold},
                {"stop_angle_deg", to_deg(s.stop_angle)},
                {"stop_translation", s.stop_translation},
                {"beta", s.beta}};
  const auto& b = c.ibvs;
  j["ibvs"] = {{"gain", b.gain},
               {"depth", b.depth},
               {"dt", b.dt},
               {"threshold", b.threshold},
               {"max_steps", b.max_steps},
               {"damping", b.damping},
               {"rank_threshold", b.rank_threshold}};
  j["eval"] = {{"trials", c.eval.trials},
               {"start_angle_deg", range_deg(c.eval.start_angle)},
               {"epsilons", c.eval.epsilons},
               {"methods", c.eval.methods},
               {"seed", c.eval.seed}};
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig from_json_value(const json& j) {
  RunConfig c;
  c.object_kind = j.at("object").at("kind").get<std::string>();
  c.object_seed = j.at("object").at("seed").get<std::uint64_t>();
  const json& v = j.at("view");
  c.view.image_size = v.at("image_size").get<int>();
  c.view.focal = v.at("focal").get<double>();
  c.view.target_size_px = v.at("target_size_px").get<double>();
  c.view.radius = {v.at("radius").at(0).get<double>(), v.at("radius").at(1).get<double>()};
  c.view.elevation = range_from_deg(v.at("elevation_deg"));
  c.view.aim_jitter = v.at("aim_jitter").get<double>();
  c.view.centered = v.at("centered").get<bool>();
  const json& d = j.at("data");
  c.data.views = d.at("views").get<int>();
  c.data.pairs = d.at("pairs").get<int>();
  c.data.max_angle = d.at("max_angle_deg").get<double>() * kDeg;
  c.data.seed = d.at("seed").get<std::uint64_t>();
  c.data_digest = j.at("data_digest").get<std::string>();
  const json& e = j.at("encoder");
  c.encoder.image_size = e.at("image_size").get<int>();
  c.encoder.pool = e.at("pool").get<int>();
  c.encoder.conv_channels = e.at("conv_channels").get<std::vector<int>>();
  c.encoder.head_widths = e.at("head_widths").get<std::vector<int>>();
  c.encoder.feature_dim = e.at("feature_dim").get<int>();
  c.encoder.transformer_widths = e.at("transformer_widths").get<std::vector<int>>();
  const json& t = j.at("train");
  c.train.epochs = t.at("epochs").get<int>();
  c.train.batch_size = t.at("batch_size").get<int>();
  c.train.weights.lambda = t.at("lambda").get<double>();
  c.train.weights.c = t.at("c").get<double>();
  c.train.weights.translation_weight = t.at("translation_weight").get<double>();
  c.train.seed = t.at("seed").get<std::uint64_t>();
  c.roll_augment = t.at("roll_augment").get<bool>();
  c.train.cosine_decay = t.at("cosine_decay").get<bool>();
  const json& o = t.at("optimizer");
  const std::string kind = o.at("kind").get<std::string>();
  if (kind != "adam" && kind != "sgd") throw ConfigError("train.optimizer.kind must be adam or sgd");
  c.train.optimizer.kind = kind == "adam" ? grad::OptimizerKind::kAdam : grad::OptimizerKind::kSgd;
  c.train.optimizer.lr = o.at("lr").get<double>();
  c.train.optimizer.momentum = o.at("momentum").get<double>();
  c.train.optimizer.beta1 = o.at("beta1").get<double>();
  c.train.optimizer.beta2 = o.at("beta2").get<double>();
  c.train.optimizer.eps = o.at("eps").get<double>();
  c.rpr_head_widths = j.at("rpr").at("head_widths").get<std::vector<int>>();
  const json& in = j.at("inference");
  c.inference.step = in.at("step").get<double>();
  c.inference.max_iterations = in.at("max_iterations").get<int>();
  c.inference.restarts = in.at("restarts").get<int>();
  c.inference.backtrack = in.at("backtrack").get<double>();
  c.inference.max_halvings = in.at("max_halvings").get<int>();
  c.inference.tolerance = in.at("tolerance").get<double>();
  c.inference.seed = in.at("seed").get<std::uint64_t>();
  const json& s = j.at("servo");
  c.servo.max_iterations = s.at("max_iterations").get<int>();
  c.servo.angle_threshold = s.at("angle_threshold_deg").get<double>() * kDeg;
  c.servo.add_threshold = s.at("add_threshold").get<double>();
  c.servo.stop_angle = s.at("stop_angle_deg").get<double>() * kDeg;
  c.servo.stop_translation = s.at("stop_translation").get<double>();
  c.servo.beta = s.at("beta").get<double>();
  const json& b = j.at("ibvs");
  c.ibvs.gain = b.at("gain").get<double>();
  c.ibvs.depth = b.at("depth").get<double>();
  c.ibvs.dt = b.at("dt").get<double>();
  c.ibvs.threshold = b.at("threshold").get<double>();
  c.ibvs.max_steps = b.at("max_steps").get<int>();
  c.ibvs.damping = b.at("damping").get<double>();
  c.ibvs.rank_threshold = b.at("rank_threshold").get<double>();
  const json& ev = j.at("eval");
  c.eval.trials = ev.at("trials").get<int>();
  c.eval.start_angle = range_from_deg(ev.at("start_angle_deg"));
  c.eval.epsilons = ev.at("epsilons").get<std::vector<double>>();
  c.eval.methods = ev.at("methods").get<std::vector<std::string>>();
  c.eval.seed = ev.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();
  return c;
}

void check_known_keys(const json& patch, const json& schema, const std::string& path) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    if (it->is_object() && schema.at(it.key()).is_object()) check_known_keys(*it, schema.at(it.key()), key);
  }
}

}  // namespace

TrainConfig RunConfig::resolved_train() const {
  TrainConfig t = train;
  t.roll_augment.reset();
  if (roll_augment) t.roll_augment = view.intrinsics();
  return t;
}

Methods RunConfig::methods() const {
  Methods m;
  m.inference = inference;
  m.servo = servo;
  m.ibvs = ibvs;
  return m;
}

RunConfig default_run_config() {
  RunConfig c;
  c.train.weights.lambda = 3.0;
  c.train.epochs = 90;
  c.encoder.transformer_widths = {1024, 1024};
  return c;
}

std::string to_json(const RunConfig& config) { return to_json_value(config).dump(1) + "\n"; }

std::string to_json_line(const RunConfig& config) { return to_json_value(config).dump(); }

RunConfig merge_json(const RunConfig& base, const std::string& text) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!patch.is_object()) throw ConfigError("config must be a JSON object");
  json merged = to_json_value(base);
  check_known_keys(patch, merged, "");
  merged.merge_patch(patch);
  try {
    return from_json_value(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

RunConfig run_config_from_json(const std::string& text) {
  try {
    return from_json_value(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

std::string config_digest(const RunConfig& config) {
  json j = to_json_value(config);
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

std::string make_run_dir(const std::string& command) {
  const char* env = std::getenv("EQVS_OUTPUT_ROOT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  fs::path dir = root / (std::string(stamp) + "-" + command);
  for (int i = 1; fs::exists(dir); ++i) dir = root / (std::string(stamp) + "-" + command + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace eqvs
