#pragma once

#include <string>

#include "eqvs/checkpoint.hpp"
#include "eqvs/run_config.hpp"

namespace eqvs {

SceneObject make_scene(const RunConfig& config);

/// Views and pairs for `config`, stamped with its digest.
Dataset build_dataset(const RunConfig& config, int threads = 1);

/// Training config inheriting object, view and data settings from a dataset.
/// Throws ConfigError when the dataset's stored config does not hash to the
/// digest stamped into its manifest.
RunConfig adopt_dataset(const RunConfig& config, const std::string& dataset_dir, const Dataset& dataset);

/// Seeded initial parameters; `train --epochs 0` saves exactly these.
Model<float> initial_model(const RunConfig& config);
RPRModel initial_rpr(const RunConfig& config);

/// Checkpoints embed the resolved config in their meta line and its digest in
/// the header.
Checkpoint to_checkpoint(const Model<float>& model, const RunConfig& config);
Checkpoint to_checkpoint(const RPRModel& model, const RunConfig& config);

struct LoadedModel {
  RunConfig config;
  Model<float> model;
};
struct LoadedRPR {
  RunConfig config;
  RPRModel model;
};

/// Rejects a wrong kind, a digest that does not match the embedded config and
/// parameters that do not match the encoder layout.
LoadedModel load_model(const std::string& path);
LoadedRPR load_rpr(const std::string& path);

}  // namespace eqvs
