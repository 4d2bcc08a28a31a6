#include "eqvs/pipeline.hpp"

#include <filesystem>

#include "eqvs/digest.hpp"

namespace eqvs {

namespace fs = std::filesystem;

SceneObject make_scene(const RunConfig& config) { return procedural_object(config.object_kind, config.object_seed); }

Dataset build_dataset(const RunConfig& config, int threads) {
  const SceneObject scene = make_scene(config);
  Dataset d;
  d.manifest.object_kind = config.object_kind;
  d.manifest.object_seed = config.object_seed;
  d.manifest.seed = config.data.seed;
  d.manifest.view = config.view;
  d.manifest.config_digest = config_digest(config);
  d.manifest.samples = generate_views(scene, config.data.views, config.view, derive_seed(config.data.seed, 0),
                                      &d.images, threads);
  PairOptions po;
  po.pair_count = config.data.pairs;
  po.max_angle = config.data.max_angle;
  po.seed = derive_seed(config.data.seed, 1);
  d.manifest.pairs = make_pairs(d.manifest.samples, config.view.centered, po);
  return d;
}

RunConfig adopt_dataset(const RunConfig& config, const std::string& dataset_dir, const Dataset& dataset) {
  const fs::path stored = fs::path(dataset_dir) / "config.json";
  if (!fs::exists(stored)) throw ConfigError("dataset has no config.json: " + stored.string());
  const RunConfig origin = run_config_from_json(read_file(stored.string()));
  const std::string digest = config_digest(origin);
  if (digest != dataset.manifest.config_digest) {
    throw ConfigError("config digest mismatch: " + stored.string() + " hashes to " + digest + " but the manifest is stamped " +
                      dataset.manifest.config_digest);
  }
  RunConfig c = config;
  c.object_kind = origin.object_kind;
  c.object_seed = origin.object_seed;
  c.view = origin.view;
  c.data = origin.data;
  c.data_digest = digest;
  c.encoder.image_size = origin.view.image_size;
  return c;
}

Model<float> initial_model(const RunConfig& config) {
  return init_model(config.encoder, derive_seed(config.train.seed, 2));
}

RPRModel initial_rpr(const RunConfig& config) {
  return init_rpr(config.encoder, config.rpr_head_widths, derive_seed(config.train.seed, 2));
}

namespace {

Checkpoint make(const std::string& kind, const grad::ParamSet<float>& params, const RunConfig& config) {
  Checkpoint c;
  c.kind = kind;
  c.digest = config_digest(config);
  c.meta = to_json_line(config);
  c.params = params;
  return c;
}

RunConfig checked_config(const Checkpoint& c, const std::string& kind, const std::string& path) {
  if (c.kind != kind) throw ConfigError(path + ": expected a '" + kind + "' checkpoint, found '" + c.kind + "'");
  const RunConfig config = run_config_from_json(c.meta);
  if (config_digest(config) != c.digest) {
    throw ConfigError(path + ": config digest mismatch (header " + c.digest + ", embedded config " +
                      config_digest(config) + ")");
  }
  return config;
}

void check_layout(const grad::ParamSet<float>& expected, const grad::ParamSet<float>& got, const std::string& path) {
  if (expected.size() != got.size()) throw ConfigError(path + ": parameter count does not match the config");
  for (grad::Index i = 0; i < expected.size(); ++i) {
    if (expected.name(i) != got.name(i) || expected.value(i).shape() != got.value(i).shape()) {
      throw ConfigError(path + ": parameter " + expected.name(i) + " does not match the config");
    }
  }
}

}  // namespace

Checkpoint to_checkpoint(const Model<float>& model, const RunConfig& config) {
  return make("ours", model.params, config);
}

Checkpoint to_checkpoint(const RPRModel& model, const RunConfig& config) { return make("rpr", model.params, config); }

LoadedModel load_model(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  LoadedModel out;
  out.config = checked_config(c, "ours", path);
  out.model = init_model(out.config.encoder, 0);
  check_layout(out.model.params, c.params, path);
  out.model.params = std::move(c.params);
  return out;
}

LoadedRPR load_rpr(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  LoadedRPR out;
  out.config = checked_config(c, "rpr", path);
  out.model = init_rpr(out.config.encoder, out.config.rpr_head_widths, 0);
  check_layout(out.model.params, c.params, path);
  out.model.params = std::move(c.params);
  return out;
}

}  // namespace eqvs
