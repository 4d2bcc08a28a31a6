#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqvs/baselines.hpp"
#include "eqvs/data.hpp"
#include "eqvs/eval.hpp"
#include "eqvs/repr.hpp"
#include "eqvs/servo.hpp"

namespace eqvs {

/// Invalid or inconsistent configuration (exit code 1 in the CLI).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  int views = 800;
  int pairs = 8000;
  double max_angle = kPi;
  std::uint64_t seed = 0;
  bool operator==(const DataConfig&) const = default;
};

/// Everything a run depends on. Serialized to JSON; the digest covers all
/// fields except the output directory.
struct RunConfig {
  std::string object_kind = "asymmetric-composite";
  std::uint64_t object_seed = 1;
  ViewConfig view;
  DataConfig data;
  /// Digest of the dataset a model was trained on (empty before training).
  std::string data_digest;
  EncoderConfig encoder;
  TrainConfig train;
  bool roll_augment = true;
  std::vector<int> rpr_head_widths{256, 256};
  InferenceConfig inference;
  ServoConfig servo;
  IBVSConfig ibvs;
  EvalConfig eval;
  std::string output_dir;

  /// Training settings with the augmentation intrinsics filled in.
  TrainConfig resolved_train() const;
  Methods methods() const;
};

/// Defaults with training tuned for the toy setting (see README).
RunConfig default_run_config();

std::string to_json(const RunConfig& config);
/// Compact single-line form.
std::string to_json_line(const RunConfig& config);
/// Fields present in `text` override those of `base`; unknown keys are errors.
RunConfig merge_json(const RunConfig& base, const std::string& text);
RunConfig run_config_from_json(const std::string& text);
std::string config_digest(const RunConfig& config);

/// Output root from EQVS_OUTPUT_ROOT (default "runs") plus a UTC timestamped
/// directory for `command`; created on disk.
std::string make_run_dir(const std::string& command);

}  // namespace eqvs
