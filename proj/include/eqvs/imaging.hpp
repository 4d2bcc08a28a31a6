#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eqvs/geom.hpp"

namespace eqvs {

/// RGB image with values in [0, 1], stored row-major, channels interleaved.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int width, int height, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  float& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data_[index(x, y, c)]; }

  Eigen::ArrayXf& data() { return data_; }
  const Eigen::ArrayXf& data() const { return data_; }

  friend bool operator==(const Image& a, const Image& b);

 private:
  Eigen::Index index(int x, int y, int c) const {
    return (static_cast<Eigen::Index>(y) * width_ + x) * kChannels + c;
  }

  int width_ = 0;
  int height_ = 0;
  Eigen::ArrayXf data_;
};

/// Mean absolute per-channel difference.
double mean_abs_diff(const Image& a, const Image& b);

struct Triangle {
  std::array<int, 3> v{};
  Eigen::Vector3f albedo = Eigen::Vector3f::Constant(0.8f);
};

/// Triangle mesh in object coordinates (meters). The vertex set doubles as
/// the model point cloud for the ADD metric.
struct SceneObject {
  std::string name;
  Eigen::Matrix3Xd vertices;
  std::vector<Triangle> triangles;
  Vec3 center = Vec3::Zero();
  double diameter = 0.0;

  /// Throws std::invalid_argument on an empty vertex set, bad indices,
  /// degenerate triangles or a non-positive diameter.
  void validate() const;
};

/// Largest pairwise distance between vertices, by brute force.
double max_pairwise_distance(const Eigen::Matrix3Xd& points);

enum class ObjectKind { kTexturedCube, kCylinder, kAsymmetricComposite };

ObjectKind parse_object_kind(const std::string& name);
std::string to_string(ObjectKind kind);

/// Seeded procedural stand-ins for real object meshes, centred on the
/// vertex centroid.
SceneObject procedural_object(ObjectKind kind, std::uint64_t seed);
SceneObject procedural_object(const std::string& kind, std::uint64_t seed);

/// Reads the minimal triangle-list text format: one triangle per line,
/// "x1 y1 z1 x2 y2 z2 x3 y3 z3 r g b". Blank lines and '#' comments skipped.
SceneObject load_triangle_list(const std::string& path);

struct Camera {
  CameraIntrinsics intrinsics;
  Pose pose = Pose::Identity();
};

struct RenderOptions {
  float background = 0.5f;
  Eigen::Vector3d light_dir = Eigen::Vector3d(0.3, 0.5, 1.0).normalized();  // towards the light
  float ambient = 0.35f;
  float diffuse = 0.65f;
  int supersample = 3;
  double near_plane = 1e-3;
};

/// Z-buffered flat-shaded rasterization with one world-fixed directional light.
Image render(const SceneObject& scene, const Camera& camera, int width, int height,
             const RenderOptions& options = {});

/// Inverse warping: out(x) = img(H^-1 x), bilinear, background outside.
Image warp(const Image& img, const Mat3& H, float background = 0.5f);

struct CenteredView {
  Image image;
  CenteringTransform centering;
  Pose camera = Pose::Identity();           // real camera
  Pose centered_camera = Pose::Identity();  // after the virtual centering rotation
  double distance = 0.0;                    // camera to object centre
};

/// Render from `camera_pose` and warp so the object centre lands on the
/// principal point with apparent size `target_size_px`.
CenteredView render_centered(const SceneObject& scene, const Pose& camera_pose,
                             const CameraIntrinsics& k, int width, int height,
                             double target_size_px, const RenderOptions& options = {});

CenteredView render_centered(const SceneObject& scene, const HemispherePose& pose,
                             const CameraIntrinsics& k, int width, int height,
                             double target_size_px, const RenderOptions& options = {});

}  // namespace eqvs
