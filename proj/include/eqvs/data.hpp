#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqvs/geom.hpp"
#include "eqvs/imaging.hpp"
#include "eqvs/repr.hpp"

namespace eqvs {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ManifestVersionError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class MissingFileError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class ChecksumError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class ValidationError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

/// Viewpoint and camera settings shared by data generation, servoing and
/// evaluation.
struct ViewConfig {
  int image_size = 64;
  double focal = 110.0;
  double target_size_px = 40.0;
  Range radius{0.5, 0.7};
  Range elevation{10.0 * kPi / 180.0, 85.0 * kPi / 180.0};
  /// Maximum off-centre aim of the real camera (radians).
  double aim_jitter = 0.05;
  /// false stores raw renders and full 6-DoF relative transforms.
  bool centered = true;

  CameraIntrinsics intrinsics() const { return CameraIntrinsics::centered(image_size, image_size, focal); }
  void validate() const;
  bool operator==(const ViewConfig&) const = default;
};

/// Real camera for a hemisphere pose, perturbed by an aim offset of at most
/// `aim_jitter` drawn from `rng`.
Pose jittered_camera(const HemispherePose& hemi, const Vec3& center, double aim_jitter, std::mt19937_64& rng);

/// The view the model sees from `camera`: the centred render, or the raw one
/// when centering is disabled.
struct View {
  Image image;
  Pose camera = Pose::Identity();
  /// Frame used for relative transforms (centred camera or the camera itself).
  Pose frame = Pose::Identity();
  CenteringTransform centering;
  double distance = 0.0;
};

View make_view(const SceneObject& scene, const Pose& camera, const ViewConfig& config,
               const RenderOptions& options = {});

struct SampleRecord {
  int id = 0;
  std::string image;  // path relative to the dataset directory
  std::string sha256;
  HemispherePose hemisphere;
  /// World->camera transform of the real camera, kept as (t, q) so the
  /// stored value round-trips exactly.
  RelTransform camera = RelTransform::identity(false);
  Mat3 R = Mat3::Identity();
  double s = 1.0;

  /// Frame relative transforms are measured in.
  Pose frame(bool centered) const;
  bool operator==(const SampleRecord& o) const;
};

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct PairRecord {
  int src = 0;
  int tar = 0;
  RelTransform p;
  Split split = Split::kTrain;

  bool operator==(const PairRecord& o) const;
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  std::string object_kind;
  std::uint64_t object_seed = 0;
  std::uint64_t seed = 0;
  ViewConfig view;
  std::string config_digest = "none";
  std::vector<SampleRecord> samples;
  std::vector<PairRecord> pairs;

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Image> images;  // indexed by sample id

  std::vector<TrainingPair> training_pairs(Split split) const;
};

/// Renders `count` views, in parallel over samples when threads > 1; images
/// are quantized to 8 bits so they survive a PNG round trip unchanged.
std::vector<SampleRecord> generate_views(const SceneObject& scene, int count, const ViewConfig& config,
                                         std::uint64_t seed, std::vector<Image>* images, int threads = 1,
                                         const RenderOptions& options = {});

struct PairOptions {
  int pair_count = 8000;
  double max_angle = kPi;
  std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
  /// Partition sample ids so no sample appears in two splits.
  bool strict = false;
  std::uint64_t seed = 0;
};

/// Uniform draw without replacement from the ordered pairs whose rotation
/// angle is at most max_angle.
std::vector<PairRecord> make_pairs(const std::vector<SampleRecord>& samples, bool centered,
                                   const PairOptions& options);

/// Checks ids, pair consistency with the stored poses and split disjointness.
void validate_manifest(const DatasetManifest& manifest);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

/// Writes manifest.json and images/<id>.png under `dir`; fills image paths
/// and checksums in the stored manifest.
void write_dataset(Dataset& dataset, const std::string& dir);
/// Reads and verifies a dataset directory.
Dataset read_dataset(const std::string& dir);

}  // namespace eqvs
