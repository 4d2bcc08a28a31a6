#include "eqvs/geom.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace eqvs {

double geodesic_angle(const Mat3& r1, const Mat3& r2) {
  const double c = std::clamp(((r1.transpose() * r2).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

bool is_rotation(const Mat3& r, double tol) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

Quat random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  Quat q(b * std::cos(2 * kPi * u3), a * std::sin(2 * kPi * u2), a * std::cos(2 * kPi * u2),
         b * std::sin(2 * kPi * u3));
  return canonical(q);
}

Quat scale_rotation(const Quat& q, double fraction) {
  const Eigen::AngleAxisd aa(canonical(q));
  return canonical(Quat(Eigen::AngleAxisd(aa.angle() * fraction, aa.axis())));
}

CameraIntrinsics CameraIntrinsics::centered(int width, int height, double focal) {
  return {focal, focal, (width - 1) / 2.0, (height - 1) / 2.0};
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Mat3 CameraIntrinsics::inverse() const {
  Mat3 k;
  k << 1 / fx, 0, -cx / fx, 0, 1 / fy, -cy / fy, 0, 0, 1;
  return k;
}

Vec2 CameraIntrinsics::project(const Vec3& p) const {
  return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
}

Vec3 CameraIntrinsics::bearing(const Vec2& px) const {
  return Vec3((px.x() - cx) / fx, (px.y() - cy) / fy, 1.0).normalized();
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0) || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
  }
}

double apparent_size_px(const CameraIntrinsics& k, double diameter, double distance) {
  if (!(distance > 0)) throw std::invalid_argument("apparent_size_px: distance must be positive");
  return 0.5 * (k.fx + k.fy) * diameter / distance;
}

// ---------------------------------------------------------------------------

RelTransform RelTransform::identity(bool reduced) {
  RelTransform p;
  p.reduced = reduced;
  return p;
}

RelTransform RelTransform::rotation(const Quat& q) {
  RelTransform p;
  p.q = canonical(q);
  p.reduced = true;
  return p;
}

RelTransform RelTransform::rigid(const Vec3& t, const Quat& q) {
  RelTransform p;
  p.t = t;
  p.q = canonical(q);
  p.reduced = false;
  return p;
}

RelTransform RelTransform::from_isometry(const Pose& iso) {
  return rigid(iso.translation(), Quat(iso.linear()));
}

Pose RelTransform::isometry() const {
  Pose iso = Pose::Identity();
  iso.linear() = q.toRotationMatrix();
  iso.translation() = reduced ? Vec3::Zero() : t;
  return iso;
}

RelTransform RelTransform::inverse() const {
  if (reduced) return rotation(q.conjugate());
  return from_isometry(isometry().inverse());
}

std::array<double, 7> RelTransform::to_array() const {
  const Quat c = canonical(q);
  const Vec3 tt = reduced ? Vec3::Zero() : t;
  return {tt.x(), tt.y(), tt.z(), c.w(), c.x(), c.y(), c.z()};
}

RelTransform RelTransform::from_array(const std::array<double, 7>& v, bool reduced) {
  const Quat q(v[3], v[4], v[5], v[6]);
  if (reduced) return rotation(q);
  return rigid(Vec3(v[0], v[1], v[2]), q);
}

RelTransform compose(const RelTransform& first, const RelTransform& second) {
  if (first.reduced && second.reduced) return RelTransform::rotation(second.q * first.q);
  return RelTransform::from_isometry(second.isometry() * first.isometry());
}

RelTransform relative_pose(const Pose& cam_a, const Pose& cam_b) {
  return RelTransform::from_isometry(cam_b * cam_a.inverse());
}

double transform_norm(const RelTransform& p, double translation_weight) {
  const double theta = rotation_angle(canonical(p.q));
  if (p.reduced) return theta;
  return theta + translation_weight * p.t.norm();
}

std::string encode_pose_le64(const RelTransform& p) {
  const auto v = p.to_array();
  std::string out(56, '\0');
  for (int i = 0; i < 7; ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int b = 0; b < 8; ++b) out[8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

RelTransform decode_pose_le64(const std::string& bytes, bool reduced) {
  if (bytes.size() != 56) throw std::invalid_argument("decode_pose_le64: expected 56 bytes");
  std::array<double, 7> v{};
  for (int i = 0; i < 7; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 * i + b])) << (8 * b);
    }
    v[i] = std::bit_cast<double>(bits);
  }
  RelTransform p;
  p.t = Vec3(v[0], v[1], v[2]);
  p.q = Quat(v[3], v[4], v[5], v[6]);
  p.reduced = reduced;
  if (reduced && !p.t.isZero(0.0)) {
    throw std::invalid_argument("decode_pose_le64: reduced transform with nonzero translation");
  }
  if (!is_unit(p.q, 1e-9)) throw std::invalid_argument("decode_pose_le64: non-unit quaternion");
  return p;
}

// ---------------------------------------------------------------------------

Pose HemispherePose::camera_pose(const Vec3& center) const {
  const double ca = std::cos(azimuth), sa = std::sin(azimuth);
  const double ce = std::cos(elevation), se = std::sin(elevation);
  const Vec3 dir(ce * ca, ce * sa, se);
  const Vec3 position = center + radius * dir;
  const Vec3 z = -dir;
  const Vec3 x0(-sa, ca, 0.0);
  const Vec3 y0 = z.cross(x0);
  const double cr = std::cos(roll), sr = std::sin(roll);
  Mat3 r_wc;
  r_wc.col(0) = cr * x0 + sr * y0;
  r_wc.col(1) = -sr * x0 + cr * y0;
  r_wc.col(2) = z;
  Pose cam = Pose::Identity();
  cam.linear() = r_wc.transpose();
  cam.translation() = -r_wc.transpose() * position;
  return cam;
}

HemispherePose HemispherePose::from_camera(const Pose& cam, const Vec3& center) {
  const Vec3 position = -cam.linear().transpose() * cam.translation();
  const Vec3 offset = position - center;
  const Vec3 dir = offset.normalized();
  HemispherePose h;
  h.radius = offset.norm();
  h.elevation = std::asin(std::clamp(dir.z(), -1.0, 1.0));
  h.azimuth = std::atan2(dir.y(), dir.x());
  if (h.azimuth < 0) h.azimuth += 2 * kPi;
  const Vec3 x0(-std::sin(h.azimuth), std::cos(h.azimuth), 0.0);
  const Vec3 y0 = (-dir).cross(x0);
  const Vec3 x_w = cam.linear().row(0).transpose();
  h.roll = std::atan2(x_w.dot(y0), x_w.dot(x0));
  return h;
}

HemispherePose sample_hemisphere(std::mt19937_64& rng, Range radius, Range elevation) {
  if (radius.lo > radius.hi || elevation.lo > elevation.hi) {
    throw std::invalid_argument("sample_hemisphere: empty range");
  }
  if (!(radius.lo > 0)) throw std::invalid_argument("sample_hemisphere: radius must be positive");
  if (!(elevation.lo > 0) || elevation.hi > kPi / 2) {
    throw std::invalid_argument("sample_hemisphere: elevation must lie in (0, pi/2]");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  HemispherePose h;
  h.azimuth = 2 * kPi * u(rng);
  const double z_lo = std::sin(elevation.lo), z_hi = std::sin(elevation.hi);
  h.elevation = std::clamp(std::asin(z_lo + (z_hi - z_lo) * u(rng)), elevation.lo, elevation.hi);
  h.roll = -kPi + 2 * kPi * u(rng);
  h.radius = radius.lo + (radius.hi - radius.lo) * u(rng);
  return h;
}

// ---------------------------------------------------------------------------

CenteringParams centering_params(const CameraIntrinsics& k, const Vec3& object_center_cam,
                                 double apparent_size_px, double target_size_px) {
  k.validate();
  if (!(object_center_cam.z() > 0)) {
    throw std::invalid_argument("centering_params: object is not in front of the camera");
  }
  if (!(apparent_size_px > 0) || !(target_size_px > 0)) {
    throw std::invalid_argument("centering_params: sizes must be positive");
  }
  CenteringParams out;
  out.R = Quat::FromTwoVectors(object_center_cam.normalized(), Vec3::UnitZ()).toRotationMatrix();
  out.s = target_size_px / apparent_size_px;
  return out;
}

CenteringTransform centering_homography(const CameraIntrinsics& k, const Mat3& R, double s) {
  if (!(s > 0)) throw std::invalid_argument("centering_homography: scale must be positive");
  k.validate();
  const Eigen::DiagonalMatrix<double, 3> scale(s, s, 1.0);
  CenteringTransform out;
  out.R = R;
  out.s = s;
  out.H = k.matrix() * scale * R * k.inverse();
  return out;
}

double depth_change(double s, double z) {
  if (!(s > 0)) throw std::invalid_argument("depth_change: scale must be positive");
  return (1.0 / s - 1.0) * z;
}

Pose centered_camera_pose(const Pose& cam, const Mat3& R) {
  Pose rot = Pose::Identity();
  rot.linear() = R;
  return rot * cam;
}

// ---------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Pose se3_exp(const Eigen::Matrix<double, 6, 1>& twist, double dt) {
  const Vec3 v = twist.head<3>() * dt;
  const Vec3 w = twist.tail<3>() * dt;
  const double theta = w.norm();
  Mat3 wx;
  wx << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  Mat3 rot = Mat3::Identity();
  Mat3 vmat = Mat3::Identity();
  if (theta > 1e-12) {
    rot = Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
    vmat += (1 - std::cos(theta)) / (theta * theta) * wx +
            (theta - std::sin(theta)) / (theta * theta * theta) * wx * wx;
  } else {
    rot += wx;
    vmat += 0.5 * wx;
  }
  Pose out = Pose::Identity();
  out.linear() = rot;
  out.translation() = vmat * v;
  return out;
}

}  // namespace eqvs
