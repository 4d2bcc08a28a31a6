#include "eqvs/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace eqvs {

Image::Image(int width, int height, float fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("Image: dimensions must be positive");
  data_ = Eigen::ArrayXf::Constant(static_cast<Eigen::Index>(width) * height * kChannels, fill);
}

bool operator==(const Image& a, const Image& b) {
  return a.width_ == b.width_ && a.height_ == b.height_ &&
         (a.data_.size() == 0 || (a.data_ == b.data_).all());
}

double mean_abs_diff(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument("mean_abs_diff: size mismatch");
  }
  return static_cast<double>((a.data() - b.data()).abs().mean());
}

// ---------------------------------------------------------------------------
// Scene objects
// ---------------------------------------------------------------------------

double max_pairwise_distance(const Eigen::Matrix3Xd& points) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < points.cols(); ++j) {
      best = std::max(best, (points.col(i) - points.col(j)).squaredNorm());
    }
  }
  return std::sqrt(best);
}

void SceneObject::validate() const {
  if (vertices.cols() == 0) throw std::invalid_argument("SceneObject: empty vertex set");
  if (!(diameter > 0)) throw std::invalid_argument("SceneObject: diameter must be positive");
  for (const auto& tri : triangles) {
    for (int idx : tri.v) {
      if (idx < 0 || idx >= vertices.cols()) {
        throw std::invalid_argument("SceneObject: triangle index out of range");
      }
    }
    const Vec3 a = vertices.col(tri.v[0]), b = vertices.col(tri.v[1]), c = vertices.col(tri.v[2]);
    if ((b - a).cross(c - a).norm() < 1e-12) {
      throw std::invalid_argument("SceneObject: degenerate triangle");
    }
  }
}

namespace {

class MeshBuilder {
 public:
  int add_vertex(const Vec3& p) {
    points_.push_back(p);
    return static_cast<int>(points_.size()) - 1;
  }

  void add_triangle(int a, int b, int c, const Eigen::Vector3f& color) {
    tris_.push_back({{a, b, c}, color});
  }

  void add_quad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
                const Eigen::Vector3f& color) {
    const int ia = add_vertex(a), ib = add_vertex(b), ic = add_vertex(c), id = add_vertex(d);
    add_triangle(ia, ib, ic, color);
    add_triangle(ia, ic, id, color);
  }

  // Axis-aligned box, one colour per face (+x, -x, +y, -y, +z, -z).
  void add_box(const Vec3& center, const Vec3& half, const std::array<Eigen::Vector3f, 6>& colors) {
    for (int axis = 0; axis < 3; ++axis) {
      for (int sign = 0; sign < 2; ++sign) {
        const double sgn = sign == 0 ? 1.0 : -1.0;
        Vec3 n = Vec3::Zero();
        n[axis] = sgn;
        Vec3 u = Vec3::Zero(), v = Vec3::Zero();
        u[(axis + 1) % 3] = half[(axis + 1) % 3];
        v[(axis + 2) % 3] = half[(axis + 2) % 3];
        if (sgn < 0) std::swap(u, v);
        const Vec3 fc = center + sgn * half[axis] * n.cwiseAbs();
        add_quad(fc - u - v, fc + u - v, fc + u + v, fc - u + v, colors[2 * axis + sign]);
      }
    }
  }

  SceneObject finish(std::string name) && {
    SceneObject obj;
    obj.name = std::move(name);
    obj.vertices.resize(3, static_cast<Eigen::Index>(points_.size()));
    for (std::size_t i = 0; i < points_.size(); ++i) obj.vertices.col(static_cast<Eigen::Index>(i)) = points_[i];
    const Vec3 centroid = obj.vertices.rowwise().mean();
    obj.vertices.colwise() -= centroid;
    obj.center = Vec3::Zero();
    obj.triangles = std::move(tris_);
    obj.diameter = max_pairwise_distance(obj.vertices);
    obj.validate();
    return obj;
  }

 private:
  std::vector<Vec3> points_;
  std::vector<Triangle> tris_;
};

Eigen::Vector3f random_color(std::mt19937_64& rng, float lo = 0.1f, float hi = 0.95f) {
  std::uniform_real_distribution<float> u(lo, hi);
  const float r = u(rng), g = u(rng), b = u(rng);
  return {r, g, b};
}

SceneObject textured_cube(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MeshBuilder mb;
  const double h = 0.06;
  const int grid = 3;
  const double step = 2 * h / grid;
  for (int axis = 0; axis < 3; ++axis) {
    for (double sgn : {1.0, -1.0}) {
      Vec3 n = Vec3::Zero();
      n[axis] = sgn;
      Vec3 u = Vec3::Zero(), v = Vec3::Zero();
      u[(axis + 1) % 3] = 1.0;
      v[(axis + 2) % 3] = 1.0;
      if (sgn < 0) std::swap(u, v);
      const Vec3 fc = h * n;
      for (int i = 0; i < grid; ++i) {
        for (int j = 0; j < grid; ++j) {
          const Vec3 o = fc + (-h + i * step) * u + (-h + j * step) * v;
          mb.add_quad(o, o + step * u, o + step * u + step * v, o + step * v, random_color(rng));
        }
      }
    }
  }
  return std::move(mb).finish("textured-cube");
}

SceneObject cylinder(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MeshBuilder mb;
  const double radius = 0.05, half_height = 0.07;
  const int segments = 24, bands = 6;
  std::vector<Eigen::Vector3f> palette;
  for (int b = 0; b < bands; ++b) palette.push_back(random_color(rng));
  const Eigen::Vector3f top = random_color(rng), bottom = random_color(rng);
  const int top_c = mb.add_vertex(Vec3(0, 0, half_height));
  const int bot_c = mb.add_vertex(Vec3(0, 0, -half_height));
  for (int k = 0; k < segments; ++k) {
    const double a0 = 2 * kPi * k / segments, a1 = 2 * kPi * (k + 1) / segments;
    const Vec3 p0(radius * std::cos(a0), radius * std::sin(a0), 0.0);
    const Vec3 p1(radius * std::cos(a1), radius * std::sin(a1), 0.0);
    const Vec3 dz(0, 0, half_height);
    mb.add_quad(p0 - dz, p1 - dz, p1 + dz, p0 + dz, palette[(k * bands) / segments]);
    mb.add_triangle(top_c, mb.add_vertex(p0 + dz), mb.add_vertex(p1 + dz), top);
    mb.add_triangle(bot_c, mb.add_vertex(p1 - dz), mb.add_vertex(p0 - dz), bottom);
  }
  return std::move(mb).finish("cylinder");
}

SceneObject asymmetric_composite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MeshBuilder mb;
  auto face_colors = [&] {
    std::array<Eigen::Vector3f, 6> c;
    for (auto& x : c) x = random_color(rng);
    return c;
  };
  auto tinted = [&](const Eigen::Vector3f& base) {
    std::array<Eigen::Vector3f, 6> c;
    for (int i = 0; i < 6; ++i) c[i] = (base * (0.75f + 0.05f * i)).cwiseMin(1.0f);
    return c;
  };
  // Base slab with distinct face colours.
  const Vec3 base_half(0.06, 0.04, 0.025);
  mb.add_box(Vec3::Zero(), base_half, face_colors());
  // Tower on top, off-centre towards +x +y.
  const Vec3 tower_half(0.012 + 0.006 * u(rng), 0.012 + 0.006 * u(rng), 0.03 + 0.01 * u(rng));
  mb.add_box(Vec3(0.03 + 0.01 * u(rng), 0.015 + 0.008 * u(rng), base_half.z() + tower_half.z()),
             tower_half, tinted({0.9f, 0.2f, 0.15f}));
  // Arm sticking out of +x, low.
  const Vec3 arm_half(0.025 + 0.01 * u(rng), 0.01, 0.01);
  mb.add_box(Vec3(base_half.x() + arm_half.x(), -0.02 + 0.01 * u(rng), -0.01), arm_half,
             tinted({0.15f, 0.35f, 0.9f}));
  // Knob on -y face towards -x.
  const Vec3 knob_half(0.012, 0.012 + 0.006 * u(rng), 0.012);
  mb.add_box(Vec3(-0.035 + 0.01 * u(rng), -base_half.y() - knob_half.y(), 0.005), knob_half,
             tinted({0.2f, 0.85f, 0.25f}));
  return std::move(mb).finish("asymmetric-composite");
}

}  // namespace

ObjectKind parse_object_kind(const std::string& name) {
  if (name == "textured-cube") return ObjectKind::kTexturedCube;
  if (name == "cylinder") return ObjectKind::kCylinder;
  if (name == "asymmetric-composite") return ObjectKind::kAsymmetricComposite;
  throw std::invalid_argument("unknown object kind '" + name +
                              "' (expected textured-cube, cylinder or asymmetric-composite)");
}

std::string to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::kTexturedCube: return "textured-cube";
    case ObjectKind::kCylinder: return "cylinder";
    case ObjectKind::kAsymmetricComposite: return "asymmetric-composite";
  }
  return "unknown";
}

SceneObject procedural_object(ObjectKind kind, std::uint64_t seed) {
  switch (kind) {
    case ObjectKind::kTexturedCube: return textured_cube(seed);
    case ObjectKind::kCylinder: return cylinder(seed);
    case ObjectKind::kAsymmetricComposite: return asymmetric_composite(seed);
  }
  throw std::invalid_argument("procedural_object: unknown kind");
}

SceneObject procedural_object(const std::string& kind, std::uint64_t seed) {
  return procedural_object(parse_object_kind(kind), seed);
}

SceneObject load_triangle_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_triangle_list: cannot open " + path);
  MeshBuilder mb;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::array<double, 12> v{};
    int n = 0;
    while (n < 12 && ls >> v[n]) ++n;
    if (n == 0) continue;
    if (n != 12) {
      throw std::invalid_argument("load_triangle_list: " + path + ":" + std::to_string(lineno) +
                                  ": expected 12 numbers");
    }
    const int a = mb.add_vertex(Vec3(v[0], v[1], v[2]));
    const int b = mb.add_vertex(Vec3(v[3], v[4], v[5]));
    const int c = mb.add_vertex(Vec3(v[6], v[7], v[8]));
    mb.add_triangle(a, b, c, Eigen::Vector3f(v[9], v[10], v[11]).cwiseMax(0.0f).cwiseMin(1.0f));
  }
  return std::move(mb).finish(path);
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

namespace {

struct ScreenVertex {
  double x, y, inv_z;
};

std::vector<Vec3> clip_near(const std::array<Vec3, 3>& tri, double near_plane) {
  std::vector<Vec3> out;
  out.reserve(4);
  for (int i = 0; i < 3; ++i) {
    const Vec3& a = tri[i];
    const Vec3& b = tri[(i + 1) % 3];
    const bool ina = a.z() >= near_plane, inb = b.z() >= near_plane;
    if (ina) out.push_back(a);
    if (ina != inb) {
      const double t = (near_plane - a.z()) / (b.z() - a.z());
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

}  // namespace

Image render(const SceneObject& scene, const Camera& camera, int width, int height,
             const RenderOptions& options) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("render: size must be positive");
  camera.intrinsics.validate();
  const int ss = std::max(1, options.supersample);
  const int hw = width * ss, hh = height * ss;
  std::vector<float> color(static_cast<std::size_t>(hw) * hh * 3, options.background);
  std::vector<double> depth(static_cast<std::size_t>(hw) * hh, 0.0);  // inverse depth

  const CameraIntrinsics& k = camera.intrinsics;
  const Mat3 r_cw = camera.pose.linear();
  const Vec3 cam_pos = -r_cw.transpose() * camera.pose.translation();
  const Vec3 light = options.light_dir.normalized();

  for (const auto& tri : scene.triangles) {
    const Vec3 w0 = scene.vertices.col(tri.v[0]);
    const Vec3 w1 = scene.vertices.col(tri.v[1]);
    const Vec3 w2 = scene.vertices.col(tri.v[2]);
    Vec3 n = (w1 - w0).cross(w2 - w0);
    const double nn = n.norm();
    if (nn < 1e-15) continue;
    n /= nn;
    if (n.dot(cam_pos - w0) < 0) n = -n;
    const float shade = options.ambient + options.diffuse * static_cast<float>(std::max(0.0, n.dot(light)));
    const Eigen::Vector3f rgb = (tri.albedo * shade).cwiseMax(0.0f).cwiseMin(1.0f);

    const std::array<Vec3, 3> cam_tri{camera.pose * w0, camera.pose * w1, camera.pose * w2};
    const auto poly = clip_near(cam_tri, options.near_plane);
    if (poly.size() < 3) continue;
    std::vector<ScreenVertex> sv;
    sv.reserve(poly.size());
    for (const auto& p : poly) {
      const Vec2 px = k.project(p);
      sv.push_back({(px.x() + 0.5) * ss - 0.5, (px.y() + 0.5) * ss - 0.5, 1.0 / p.z()});
    }
    for (std::size_t f = 1; f + 1 < sv.size(); ++f) {
      const ScreenVertex& a = sv[0];
      const ScreenVertex& b = sv[f];
      const ScreenVertex& c = sv[f + 1];
      const double area = edge(a, b, c.x, c.y);
      if (std::abs(area) < 1e-12) continue;
      const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x, b.x, c.x}))));
      const int x1 = std::min(hw - 1, static_cast<int>(std::floor(std::max({a.x, b.x, c.x}))));
      const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y, b.y, c.y}))));
      const int y1 = std::min(hh - 1, static_cast<int>(std::floor(std::max({a.y, b.y, c.y}))));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          double e0 = edge(b, c, x, y) / area;
          double e1 = edge(c, a, x, y) / area;
          double e2 = edge(a, b, x, y) / area;
          if (e0 < 0 || e1 < 0 || e2 < 0) continue;
          const double inv_z = e0 * a.inv_z + e1 * b.inv_z + e2 * c.inv_z;
          const std::size_t idx = static_cast<std::size_t>(y) * hw + x;
          if (inv_z <= depth[idx]) continue;
          depth[idx] = inv_z;
          color[3 * idx + 0] = rgb[0];
          color[3 * idx + 1] = rgb[1];
          color[3 * idx + 2] = rgb[2];
        }
      }
    }
  }

  Image out(width, height);
  const float norm = 1.0f / static_cast<float>(ss * ss);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        float acc = 0.0f;
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            acc += color[3 * (static_cast<std::size_t>(y * ss + sy) * hw + (x * ss + sx)) + ch];
          }
        }
        out.at(x, y, ch) = std::clamp(acc * norm, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

Image warp(const Image& img, const Mat3& H, float background) {
  if (std::abs(H.determinant()) < 1e-12) throw std::invalid_argument("warp: singular homography");
  const Mat3 inv = H.inverse();
  const int w = img.width(), h = img.height();
  Image out(w, h, background);
  auto sample = [&](int x, int y, int c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return background;
    return img.at(x, y, c);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec3 p = inv * Vec3(x, y, 1.0);
      if (std::abs(p.z()) < 1e-12) continue;
      const double u = p.x() / p.z(), v = p.y() / p.z();
      if (u <= -1.0 || v <= -1.0 || u >= w || v >= h) continue;
      const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
      const float ax = static_cast<float>(u - x0), ay = static_cast<float>(v - y0);
      for (int c = 0; c < 3; ++c) {
        const float top = (1 - ax) * sample(x0, y0, c) + ax * sample(x0 + 1, y0, c);
        const float bot = (1 - ax) * sample(x0, y0 + 1, c) + ax * sample(x0 + 1, y0 + 1, c);
        out.at(x, y, c) = std::clamp((1 - ay) * top + ay * bot, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

CenteredView render_centered(const SceneObject& scene, const Pose& camera_pose,
                             const CameraIntrinsics& k, int width, int height,
                             double target_size_px, const RenderOptions& options) {
  const Vec3 center_cam = camera_pose * scene.center;
  CenteredView view;
  view.camera = camera_pose;
  view.distance = center_cam.norm();
  const double apparent = apparent_size_px(k, scene.diameter, view.distance);
  const CenteringParams cp = centering_params(k, center_cam, apparent, target_size_px);
  view.centering = centering_homography(k, cp.R, cp.s);
  view.centered_camera = centered_camera_pose(camera_pose, cp.R);
  const Image raw = render(scene, Camera{k, camera_pose}, width, height, options);
  view.image = warp(raw, view.centering.H, options.background);
  return view;
}

CenteredView render_centered(const SceneObject& scene, const HemispherePose& pose,
                             const CameraIntrinsics& k, int width, int height,
                             double target_size_px, const RenderOptions& options) {
  return render_centered(scene, pose.camera_pose(scene.center), k, width, height, target_size_px,
                         options);
}

}  // namespace eqvs
