#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace eqvs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Rigid world->camera transform: X_cam = pose * X_world.
using Pose = Eigen::Isometry3d;

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

template <class Scalar>
bool is_unit(const Eigen::Quaternion<Scalar>& q, Scalar tol = Scalar(1e-6)) {
  return std::abs(q.norm() - Scalar(1)) <= tol;
}

/// Normalized quaternion with w >= 0 (removes the double cover).
template <class Scalar>
Eigen::Quaternion<Scalar> canonical(const Eigen::Quaternion<Scalar>& q) {
  const Scalar n = q.norm();
  if (!(n > Scalar(0)) || !std::isfinite(n)) {
    throw std::invalid_argument("canonical: quaternion has zero or non-finite norm");
  }
  // Already-unit inputs keep their bits so that canonical is idempotent.
  const bool unit = std::abs(n - Scalar(1)) <= 4 * std::numeric_limits<Scalar>::epsilon();
  Eigen::Quaternion<Scalar> out(unit ? q.coeffs() : (q.coeffs() / n).eval());
  if (out.w() < Scalar(0)) out.coeffs() = -out.coeffs();
  return out;
}

/// Angle in [0, pi] of the rotation taking `a` to `b`.
template <class Scalar>
Scalar geodesic_angle(const Eigen::Quaternion<Scalar>& a, const Eigen::Quaternion<Scalar>& b) {
  if (!is_unit(a) || !is_unit(b)) {
    throw std::invalid_argument("geodesic_angle: non-unit quaternion");
  }
  const Eigen::Quaternion<Scalar> d = a.conjugate() * b;
  return Scalar(2) * std::atan2(d.vec().norm(), std::abs(d.w()));
}

template <class Scalar>
Scalar rotation_angle(const Eigen::Quaternion<Scalar>& q) {
  return geodesic_angle(Eigen::Quaternion<Scalar>::Identity(), q);
}

/// Angle of R1^T R2 computed in matrix form.
double geodesic_angle(const Mat3& r1, const Mat3& r2);

bool is_rotation(const Mat3& r, double tol = 1e-9);

/// Uniformly distributed rotation (Shoemake).
Quat random_rotation(std::mt19937_64& rng);

/// Rotation by `fraction` of the way from identity to q along the geodesic.
Quat scale_rotation(const Quat& q, double fraction);

// ---------------------------------------------------------------------------
// Camera model
// ---------------------------------------------------------------------------

/// Pinhole intrinsics, zero skew. Pixel centres sit at integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  /// Principal point at the image centre.
  static CameraIntrinsics centered(int width, int height, double focal);

  Mat3 matrix() const;
  Mat3 inverse() const;
  Vec2 project(const Vec3& p_cam) const;
  Vec3 bearing(const Vec2& pixel) const;
  void validate() const;
};

/// Apparent size (pixels) of an object of `diameter` at `distance` under
/// weak perspective.
double apparent_size_px(const CameraIntrinsics& k, double diameter, double distance);

// ---------------------------------------------------------------------------
// Relative transforms
// ---------------------------------------------------------------------------

/// Relative rigid transform p mapping frame a coordinates to frame b:
/// X_b = q * X_a + t. Reduced transforms are rotation-only (t == 0).
struct RelTransform {
  Vec3 t = Vec3::Zero();
  Quat q = Quat::Identity();
  bool reduced = false;

  static RelTransform identity(bool reduced = true);
  static RelTransform rotation(const Quat& q);
  static RelTransform rigid(const Vec3& t, const Quat& q);
  static RelTransform from_isometry(const Pose& iso);

  Pose isometry() const;
  Mat3 rotation_matrix() const { return q.toRotationMatrix(); }
  RelTransform reduce() const { return rotation(q); }
  RelTransform inverse() const;

  /// Layout (tx, ty, tz, qw, qx, qy, qz) with w >= 0.
  std::array<double, 7> to_array() const;
  static RelTransform from_array(const std::array<double, 7>& v, bool reduced);
};

/// Apply `first`, then `second`.
RelTransform compose(const RelTransform& first, const RelTransform& second);

/// Transform from camera a's frame to camera b's frame (both world->camera).
RelTransform relative_pose(const Pose& cam_a, const Pose& cam_b);

/// Rotation angle for reduced transforms; angle + w_t * |t| otherwise.
double transform_norm(const RelTransform& p, double translation_weight = 1.0);

/// 56 bytes: tx,ty,tz,qw,qx,qy,qz as little-endian float64.
std::string encode_pose_le64(const RelTransform& p);
RelTransform decode_pose_le64(const std::string& bytes, bool reduced);

// ---------------------------------------------------------------------------
// Hemisphere viewpoints
// ---------------------------------------------------------------------------

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
  bool operator==(const Range&) const = default;
};

/// Camera on a sphere around `center`, optical axis through the centre,
/// rolled about the optical axis. Elevation is measured from the z = 0 plane.
struct HemispherePose {
  double azimuth = 0.0;
  double elevation = kPi / 2;
  double roll = 0.0;
  double radius = 1.0;

  Pose camera_pose(const Vec3& center = Vec3::Zero()) const;

  /// Inverse of camera_pose for a camera looking at `center`.
  static HemispherePose from_camera(const Pose& cam, const Vec3& center = Vec3::Zero());
};

/// Area-uniform position on the spherical cap, uniform roll.
HemispherePose sample_hemisphere(std::mt19937_64& rng, Range radius, Range elevation);

// ---------------------------------------------------------------------------
// Object centering
// ---------------------------------------------------------------------------

struct CenteringParams {
  Mat3 R = Mat3::Identity();
  double s = 1.0;
};

/// R is the minimal rotation taking the bearing of the object centre onto
/// the optical axis; s rescales the apparent size to the target size.
CenteringParams centering_params(const CameraIntrinsics& k, const Vec3& object_center_cam,
                                 double apparent_size_px, double target_size_px);

/// Pixel-space centering homography H = K diag(s,s,1) R K^-1 with its factors.
/// H maps pixels of the original view to pixels of the centred view.
struct CenteringTransform {
  Mat3 H = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  double s = 1.0;
};

CenteringTransform centering_homography(const CameraIntrinsics& k, const Mat3& R, double s);

/// Depth change that reproduces an image scale change s: (1/s - 1) z.
double depth_change(double s, double z);

/// Camera frame after applying the virtual centering rotation.
Pose centered_camera_pose(const Pose& cam, const Mat3& R);

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// splitmix64 step; used to derive independent per-item seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// SE(3) exponential of a twist (v, w) integrated over dt. Returns the pose
/// of the moved frame expressed in the original frame.
Pose se3_exp(const Eigen::Matrix<double, 6, 1>& twist, double dt);

}  // namespace eqvs
