#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <algorithm>
#include <map>
#include <set>

#include "eqvs/data.hpp"
#include "eqvs/digest.hpp"

using namespace eqvs;
namespace fs = std::filesystem;

namespace {

ViewConfig small_view() {
  ViewConfig v;
  v.image_size = 24;
  v.focal = 40;
  v.target_size_px = 14;
  return v;
}

Dataset small_dataset(int views, int pairs, bool centered = true, std::uint64_t seed = 1) {
  ViewConfig v = small_view();
  v.centered = centered;
  const SceneObject obj = procedural_object(ObjectKind::kAsymmetricComposite, 1);
  Dataset d;
  d.manifest.object_kind = "asymmetric-composite";
  d.manifest.object_seed = 1;
  d.manifest.seed = seed;
  d.manifest.view = v;
  d.manifest.samples = generate_views(obj, views, v, seed, &d.images, 2);
  PairOptions o;
  o.pair_count = pairs;
  o.seed = seed + 1;
  d.manifest.pairs = make_pairs(d.manifest.samples, centered, o);
  return d;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("generation yields the requested counts") {
  const Dataset d = small_dataset(12, 30);
  CHECK(d.manifest.samples.size() == 12);
  CHECK(d.images.size() == 12);
  CHECK(d.manifest.pairs.size() == 30);
  CHECK_NOTHROW(validate_manifest(d.manifest));
}

TEST_CASE("generation is deterministic and thread independent") {
  const ViewConfig v = small_view();
  const SceneObject obj = procedural_object(ObjectKind::kTexturedCube, 2);
  std::vector<Image> a, b;
  const auto sa = generate_views(obj, 6, v, 9, &a, 1);
  const auto sb = generate_views(obj, 6, v, 9, &b, 3);
  CHECK(sa == sb);
  CHECK(a == b);
  const auto sc = generate_views(obj, 6, v, 10, nullptr, 1);
  CHECK(!(sa[0] == sc[0]));
}

TEST_CASE("samples respect the viewpoint ranges") {
  const Dataset d = small_dataset(40, 10);
  const ViewConfig& v = d.manifest.view;
  for (const SampleRecord& s : d.manifest.samples) {
    CHECK(v.radius.contains(s.hemisphere.radius));
    CHECK(v.elevation.contains(s.hemisphere.elevation));
    CHECK(is_rotation(s.R));
  }
}

TEST_CASE("pair labels are relative poses of the stored frames") {
  for (bool centered : {true, false}) {
    const Dataset d = small_dataset(10, 20, centered);
    for (const PairRecord& p : d.manifest.pairs) {
      const RelTransform oracle = relative_pose(d.manifest.samples[static_cast<std::size_t>(p.src)].frame(centered),
                                                d.manifest.samples[static_cast<std::size_t>(p.tar)].frame(centered));
      CHECK(p.p.reduced == centered);
      CHECK(geodesic_angle(p.p.q, oracle.q) < 1e-9);
      if (!centered) CHECK((p.p.t - oracle.t).norm() < 1e-9);
    }
  }
}

TEST_CASE("pairs are distinct, angle limited and split by fraction") {
  const Dataset d = small_dataset(30, 10);
  PairOptions o;
  o.pair_count = 50;
  o.max_angle = 1.5;
  const auto pairs = make_pairs(d.manifest.samples, true, o);
  std::set<std::pair<int, int>> seen;
  int train = 0;
  for (const PairRecord& p : pairs) {
    CHECK(seen.insert({p.src, p.tar}).second);
    CHECK(p.src != p.tar);
    CHECK(rotation_angle(p.p.q) <= 1.5 + 1e-12);
    train += p.split == Split::kTrain;
  }
  CHECK(train == 40);
  o.pair_count = 30 * 29 + 1;
  o.max_angle = kPi;
  CHECK_THROWS_AS(make_pairs(d.manifest.samples, true, o), DatasetError);
}

TEST_CASE("strict splits keep sample ids disjoint") {
  const Dataset d = small_dataset(30, 10);
  PairOptions o;
  o.pair_count = 60;
  o.strict = true;
  const auto pairs = make_pairs(d.manifest.samples, true, o);
  std::map<int, Split> owner;
  for (const PairRecord& p : pairs) {
    for (int id : {p.src, p.tar}) {
      const auto [it, inserted] = owner.emplace(id, p.split);
      CHECK(it->second == p.split);
    }
  }
}

TEST_CASE("manifest json round trip") {
  const Dataset d = small_dataset(6, 8, false);
  const std::string text = manifest_to_json(d.manifest);
  CHECK(manifest_from_json(text) == d.manifest);
  CHECK(manifest_to_json(manifest_from_json(text)) == text);
  CHECK_THROWS_AS(manifest_from_json("{}"), ManifestVersionError);
  CHECK_THROWS_AS(manifest_from_json(R"({"format_version": 2})"), ManifestVersionError);
  CHECK_THROWS_AS(manifest_from_json("not json"), ValidationError);
}

TEST_CASE("dataset write and read") {
  Dataset d = small_dataset(6, 8);
  const fs::path dir = fresh_dir("eqvs_data_test");
  write_dataset(d, dir.string());
  const Dataset back = read_dataset(dir.string());
  CHECK(back.manifest == d.manifest);
  CHECK(back.images == d.images);
  CHECK(back.training_pairs(Split::kTrain).size() ==
        static_cast<std::size_t>(std::count_if(d.manifest.pairs.begin(), d.manifest.pairs.end(),
                                               [](const PairRecord& p) { return p.split == Split::kTrain; })));

  // rewriting gives identical bytes
  const std::string manifest = slurp(dir / "manifest.json");
  Dataset again = small_dataset(6, 8);
  const fs::path dir2 = fresh_dir("eqvs_data_test2");
  write_dataset(again, dir2.string());
  CHECK(slurp(dir2 / "manifest.json") == manifest);

  {
    std::ofstream out(dir / d.manifest.samples[2].image, std::ios::binary | std::ios::app);
    out << "x";
  }
  CHECK_THROWS_AS(read_dataset(dir.string()), ChecksumError);
  fs::remove(dir / d.manifest.samples[2].image);
  CHECK_THROWS_AS(read_dataset(dir.string()), MissingFileError);
  CHECK_THROWS_AS(read_dataset((dir / "nope").string()), MissingFileError);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("validation catches inconsistent pairs") {
  Dataset d = small_dataset(6, 4);
  DatasetManifest m = d.manifest;
  m.pairs[0].tar = 99;
  CHECK_THROWS_AS(validate_manifest(m), ValidationError);
  m = d.manifest;
  m.pairs[0].p = RelTransform::rotation(Quat(Eigen::AngleAxisd(0.3, Vec3::UnitX())) * m.pairs[0].p.q);
  CHECK_THROWS_AS(validate_manifest(m), ValidationError);
  m = d.manifest;
  m.pairs[1] = m.pairs[0];
  CHECK_THROWS_AS(validate_manifest(m), ValidationError);
}

TEST_CASE("split names") {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) CHECK(parse_split(to_string(s)) == s);
  CHECK_THROWS_AS(parse_split("holdout"), std::invalid_argument);
}

TEST_CASE("view config validation") {
  ViewConfig v;
  CHECK_NOTHROW(v.validate());
  v.elevation.hi = 2.0;
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
}
