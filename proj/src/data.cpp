#include "eqvs/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "eqvs/digest.hpp"
#include "eqvs/image_io.hpp"
#include "parallel.hpp"

namespace eqvs {

namespace fs = std::filesystem;
using nlohmann::json;

void ViewConfig::validate() const {
  if (image_size < 8) throw std::invalid_argument("ViewConfig: image_size must be >= 8");
  if (!(focal > 0)) throw std::invalid_argument("ViewConfig: focal must be positive");
  if (!(target_size_px > 0)) throw std::invalid_argument("ViewConfig: target_size_px must be positive");
  if (!(radius.lo > 0) || radius.lo > radius.hi) throw std::invalid_argument("ViewConfig: bad radius range");
  if (!(elevation.lo > 0) || elevation.lo > elevation.hi || elevation.hi > kPi / 2) {
    throw std::invalid_argument("ViewConfig: elevation must lie in (0, pi/2]");
  }
  if (!(aim_jitter >= 0) || aim_jitter >= kPi / 4) throw std::invalid_argument("ViewConfig: bad aim_jitter");
}

Pose jittered_camera(const HemispherePose& hemi, const Vec3& center, double aim_jitter, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double phi = 2 * kPi * u(rng);
  const double angle = aim_jitter * std::sqrt(u(rng));
  Pose jitter = Pose::Identity();
  jitter.linear() = Eigen::AngleAxisd(angle, Vec3(std::cos(phi), std::sin(phi), 0.0)).toRotationMatrix();
  return jitter * hemi.camera_pose(center);
}

View make_view(const SceneObject& scene, const Pose& camera, const ViewConfig& config, const RenderOptions& options) {
  const CameraIntrinsics k = config.intrinsics();
  View v;
  v.camera = camera;
  if (config.centered) {
    CenteredView cv = render_centered(scene, camera, k, config.image_size, config.image_size, config.target_size_px,
                                      options);
    v.image = std::move(cv.image);
    v.frame = cv.centered_camera;
    v.centering = cv.centering;
    v.distance = cv.distance;
  } else {
    v.image = render(scene, Camera{k, camera}, config.image_size, config.image_size, options);
    v.frame = camera;
    v.distance = (camera * scene.center).norm();
  }
  return v;
}

Pose SampleRecord::frame(bool centered) const {
  const Pose cam = camera.isometry();
  return centered ? centered_camera_pose(cam, R) : cam;
}

bool SampleRecord::operator==(const SampleRecord& o) const {
  auto same = [](const RelTransform& a, const RelTransform& b) {
    return a.t == b.t && a.q.coeffs() == b.q.coeffs() && a.reduced == b.reduced;
  };
  return id == o.id && image == o.image && sha256 == o.sha256 && hemisphere.azimuth == o.hemisphere.azimuth &&
         hemisphere.elevation == o.hemisphere.elevation && hemisphere.roll == o.hemisphere.roll &&
         hemisphere.radius == o.hemisphere.radius && same(camera, o.camera) && R == o.R && s == o.s;
}

bool PairRecord::operator==(const PairRecord& o) const {
  return src == o.src && tar == o.tar && p.t == o.p.t && p.q.coeffs() == o.p.q.coeffs() &&
         p.reduced == o.p.reduced && split == o.split;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<TrainingPair> Dataset::training_pairs(Split split) const {
  std::vector<TrainingPair> out;
  for (const auto& pr : manifest.pairs) {
    if (pr.split == split) out.push_back({pr.src, pr.tar, pr.p});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

using detail::parallel_for;

std::vector<SampleRecord> generate_views(const SceneObject& scene, int count, const ViewConfig& config,
                                         std::uint64_t seed, std::vector<Image>* images, int threads,
                                         const RenderOptions& options) {
  if (count < 1) throw std::invalid_argument("generate_views: count must be >= 1");
  config.validate();
  scene.validate();
  std::vector<SampleRecord> records(static_cast<std::size_t>(count));
  std::vector<Image> rendered(static_cast<std::size_t>(count));
  parallel_for(count, threads, [&](int i) {
    try {
      std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      SampleRecord& r = records[static_cast<std::size_t>(i)];
      r.id = i;
      r.hemisphere = sample_hemisphere(rng, config.radius, config.elevation);
      // Round-trip through (t, q) so the stored pose is the rendered pose.
      r.camera = RelTransform::from_isometry(jittered_camera(r.hemisphere, scene.center, config.aim_jitter, rng));
      View v = make_view(scene, r.camera.isometry(), config, options);
      r.R = v.centering.R;
      r.s = v.centering.s;
      rendered[static_cast<std::size_t>(i)] = quantize_8bit(v.image);
    } catch (const std::exception& e) {
      throw std::runtime_error("generate_views: sample " + std::to_string(i) + ": " + e.what());
    }
  });
  if (images) *images = std::move(rendered);
  return records;
}

namespace {

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& f) {
  const std::size_t a = static_cast<std::size_t>(std::llround(f[0] * static_cast<double>(n)));
  const std::size_t b = static_cast<std::size_t>(std::llround(f[1] * static_cast<double>(n)));
  if (a + b > n) throw std::invalid_argument("split fractions exceed the total");
  return {a, b, n - a - b};
}

struct OrderedPair {
  int src, tar;
};

std::vector<OrderedPair> valid_pairs(const std::vector<SampleRecord>& samples, const std::vector<int>& ids,
                                     bool centered, double max_angle) {
  std::vector<Quat> q;
  q.reserve(ids.size());
  for (int id : ids) q.emplace_back(samples[static_cast<std::size_t>(id)].frame(centered).linear());
  std::vector<OrderedPair> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (i != j && geodesic_angle(q[i], q[j]) <= max_angle) out.push_back({ids[i], ids[j]});
    }
  }
  return out;
}

// First `count` entries of a partial Fisher-Yates shuffle.
std::vector<OrderedPair> draw(std::vector<OrderedPair> pool, std::size_t count, std::mt19937_64& rng) {
  if (count > pool.size()) {
    throw DatasetError("make_pairs: requested " + std::to_string(count) + " pairs but only " +
                       std::to_string(pool.size()) + " satisfy the angle limit");
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

PairRecord make_record(const std::vector<SampleRecord>& samples, OrderedPair op, bool centered, Split split) {
  PairRecord r;
  r.src = op.src;
  r.tar = op.tar;
  r.p = relative_pose(samples[static_cast<std::size_t>(op.src)].frame(centered),
                      samples[static_cast<std::size_t>(op.tar)].frame(centered));
  if (centered) r.p = r.p.reduce();
  r.split = split;
  return r;
}

}  // namespace

std::vector<PairRecord> make_pairs(const std::vector<SampleRecord>& samples, bool centered,
                                   const PairOptions& options) {
  if (samples.size() < 2) throw std::invalid_argument("make_pairs: need at least two samples");
  if (options.pair_count < 0) throw std::invalid_argument("make_pairs: pair_count must be non-negative");
  if (!(options.max_angle > 0) || options.max_angle > kPi) {
    throw std::invalid_argument("make_pairs: max_angle must lie in (0, pi]");
  }
  const auto& f = options.split_fractions;
  if (f[0] < 0 || f[1] < 0 || f[2] < 0 || std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("make_pairs: split fractions must be non-negative and sum to 1");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].id != static_cast<int>(i)) throw std::invalid_argument("make_pairs: sample ids must be 0..n-1");
  }
  std::mt19937_64 rng(options.seed);
  const std::array<Split, 3> splits{Split::kTrain, Split::kVal, Split::kTest};
  const auto pair_counts = split_counts(static_cast<std::size_t>(options.pair_count), f);
  std::vector<PairRecord> out;

  if (!options.strict) {
    std::vector<int> ids(samples.size());
    std::iota(ids.begin(), ids.end(), 0);
    auto pool = valid_pairs(samples, ids, centered, options.max_angle);
    if (pool.empty()) throw DatasetError("make_pairs: no pair satisfies the angle limit");
    const auto drawn = draw(std::move(pool), static_cast<std::size_t>(options.pair_count), rng);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t i = 0; i < pair_counts[static_cast<std::size_t>(s)]; ++i, ++k) {
        out.push_back(make_record(samples, drawn[k], centered, splits[static_cast<std::size_t>(s)]));
      }
    }
    return out;
  }

  std::vector<int> ids(samples.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto sample_counts = split_counts(samples.size(), f);
  std::size_t offset = 0;
  for (int s = 0; s < 3; ++s) {
    std::vector<int> part(ids.begin() + static_cast<std::ptrdiff_t>(offset),
                          ids.begin() + static_cast<std::ptrdiff_t>(offset + sample_counts[static_cast<std::size_t>(s)]));
    offset += part.size();
    std::sort(part.begin(), part.end());
    const std::size_t want = pair_counts[static_cast<std::size_t>(s)];
    if (want == 0) continue;
    const auto drawn = draw(valid_pairs(samples, part, centered, options.max_angle), want, rng);
    for (const auto& op : drawn) out.push_back(make_record(samples, op, centered, splits[static_cast<std::size_t>(s)]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation and persistence
// ---------------------------------------------------------------------------

void validate_manifest(const DatasetManifest& m) {
  const bool centered = m.view.centered;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    if (m.samples[i].id != static_cast<int>(i)) {
      throw ValidationError("sample at position " + std::to_string(i) + " has id " + std::to_string(m.samples[i].id));
    }
  }
  const int n = static_cast<int>(m.samples.size());
  std::set<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    const PairRecord& pr = m.pairs[i];
    for (int id : {pr.src, pr.tar}) {
      if (id < 0 || id >= n) {
        throw ValidationError("pair " + std::to_string(i) + " references unknown sample id " + std::to_string(id));
      }
    }
    if (pr.src == pr.tar) throw ValidationError("pair " + std::to_string(i) + " has src == tar");
    if (pr.p.reduced != centered) {
      throw ValidationError("pair " + std::to_string(i) + " has the wrong transform mode for this dataset");
    }
    if (!seen.insert({pr.src, pr.tar}).second) {
      throw ValidationError("pair " + std::to_string(i) + " duplicates (" + std::to_string(pr.src) + ", " +
                            std::to_string(pr.tar) + ")");
    }
    RelTransform expect = relative_pose(m.samples[static_cast<std::size_t>(pr.src)].frame(centered),
                                        m.samples[static_cast<std::size_t>(pr.tar)].frame(centered));
    if (centered) expect = expect.reduce();
    if (geodesic_angle(canonical(expect.q), canonical(pr.p.q)) > 1e-9 ||
        (!centered && (expect.t - pr.p.t).norm() > 1e-9)) {
      throw ValidationError("pair " + std::to_string(i) + " transform disagrees with the stored sample poses");
    }
  }
}

namespace {

std::string to_hex(const std::string& bytes) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : bytes) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 15]);
  }
  return out;
}

std::string from_hex(const std::string& s) {
  if (s.size() % 2) throw ValidationError("odd-length hex string");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw ValidationError("invalid hex digit");
  };
  std::string out(s.size() / 2, '\0');
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<char>(nibble(s[2 * i]) * 16 + nibble(s[2 * i + 1]));
  return out;
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }
Range range_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format_version"] = DatasetManifest::kFormatVersion;
  j["config_digest"] = m.config_digest;
  j["object"] = {{"kind", m.object_kind}, {"seed", m.object_seed}};
  j["seed"] = m.seed;
  j["view"] = {{"image_size", m.view.image_size},
               {"focal", m.view.focal},
               {"target_size_px", m.view.target_size_px},
               {"radius", range_json(m.view.radius)},
               {"elevation", range_json(m.view.elevation)},
               {"aim_jitter", m.view.aim_jitter},
               {"centered", m.view.centered}};
  json samples = json::array();
  for (const auto& s : m.samples) {
    json r = json::array();
    for (int i = 0; i < 9; ++i) r.push_back(s.R(i / 3, i % 3));
    samples.push_back({{"id", s.id},
                       {"image", s.image},
                       {"sha256", s.sha256},
                       {"hemisphere",
                        {{"azimuth", s.hemisphere.azimuth},
                         {"elevation", s.hemisphere.elevation},
                         {"roll", s.hemisphere.roll},
                         {"radius", s.hemisphere.radius}}},
                       {"camera", to_hex(encode_pose_le64(s.camera))},
                       {"centering", {{"R", r}, {"s", s.s}}}});
  }
  j["samples"] = std::move(samples);
  json pairs = json::array();
  for (const auto& p : m.pairs) {
    pairs.push_back({{"src", p.src}, {"tar", p.tar}, {"p", to_hex(encode_pose_le64(p.p))}, {"split", to_string(p.split)}});
  }
  j["pairs"] = std::move(pairs);
  return j.dump(1) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version")) throw ManifestVersionError("manifest has no format_version");
  const json& version = j["format_version"];
  if (!version.is_number_integer() || version.get<int>() != DatasetManifest::kFormatVersion) {
    throw ManifestVersionError("unsupported manifest format_version " + version.dump() + " (expected " +
                               std::to_string(DatasetManifest::kFormatVersion) + ")");
  }
  DatasetManifest m;
  try {
    m.config_digest = j.at("config_digest").get<std::string>();
    m.object_kind = j.at("object").at("kind").get<std::string>();
    m.object_seed = j.at("object").at("seed").get<std::uint64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const json& v = j.at("view");
    m.view.image_size = v.at("image_size").get<int>();
    m.view.focal = v.at("focal").get<double>();
    m.view.target_size_px = v.at("target_size_px").get<double>();
    m.view.radius = range_from(v.at("radius"));
    m.view.elevation = range_from(v.at("elevation"));
    m.view.aim_jitter = v.at("aim_jitter").get<double>();
    m.view.centered = v.at("centered").get<bool>();
    for (const json& s : j.at("samples")) {
      SampleRecord r;
      r.id = s.at("id").get<int>();
      r.image = s.at("image").get<std::string>();
      r.sha256 = s.at("sha256").get<std::string>();
      const json& h = s.at("hemisphere");
      r.hemisphere = {h.at("azimuth").get<double>(), h.at("elevation").get<double>(), h.at("roll").get<double>(),
                      h.at("radius").get<double>()};
      r.camera = decode_pose_le64(from_hex(s.at("camera").get<std::string>()), false);
      const json& rj = s.at("centering").at("R");
      if (rj.size() != 9) throw ValidationError("sample " + std::to_string(r.id) + ": centering R needs 9 values");
      for (int i = 0; i < 9; ++i) r.R(i / 3, i % 3) = rj.at(static_cast<std::size_t>(i)).get<double>();
      r.s = s.at("centering").at("s").get<double>();
      m.samples.push_back(std::move(r));
    }
    for (const json& p : j.at("pairs")) {
      PairRecord r;
      r.src = p.at("src").get<int>();
      r.tar = p.at("tar").get<int>();
      r.p = decode_pose_le64(from_hex(p.at("p").get<std::string>()), m.view.centered);
      r.split = parse_split(p.at("split").get<std::string>());
      m.pairs.push_back(r);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_dataset(Dataset& dataset, const std::string& dir) {
  DatasetManifest& m = dataset.manifest;
  if (dataset.images.size() != m.samples.size()) throw std::invalid_argument("write_dataset: image count mismatch");
  validate_manifest(m);
  fs::create_directories(fs::path(dir) / "images");
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%06d.png", m.samples[i].id);
    const std::string path = (fs::path(dir) / name).string();
    write_png(path, dataset.images[i]);
    m.samples[i].image = name;
    m.samples[i].sha256 = sha256_file(path);
  }
  write_file((fs::path(dir) / "manifest.json").string(), manifest_to_json(m));
}

Dataset read_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  if (!fs::exists(manifest_path)) throw MissingFileError("missing file " + manifest_path.string());
  Dataset d;
  d.manifest = manifest_from_json(read_file(manifest_path.string()));
  validate_manifest(d.manifest);
  for (const auto& s : d.manifest.samples) {
    const fs::path path = fs::path(dir) / s.image;
    if (!fs::exists(path)) throw MissingFileError("missing file " + path.string());
    const std::string bytes = read_file(path.string());
    if (sha256_hex(bytes) != s.sha256) throw ChecksumError("checksum mismatch for " + path.string());
    Image img = read_image(path.string());
    if (img.width() != d.manifest.view.image_size || img.height() != d.manifest.view.image_size) {
      throw ValidationError("image " + path.string() + " does not match the configured size");
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

}  // namespace eqvs
