#include <doctest.h>

#include <filesystem>

#include "eqvs/checkpoint.hpp"
#include "eqvs/digest.hpp"

using namespace eqvs;
namespace fs = std::filesystem;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.kind = "ours";
  c.digest = sha256_hex("config");
  c.meta = R"({"a":1})";
  c.params.add("f.w", grad::Tensor<float>({2, 3}, Eigen::VectorXf::LinSpaced(6, -1.0f, 1.5f)));
  c.params.add("f.b", grad::Tensor<float>({3}, Eigen::Vector3f(0.25f, -0.0f, 1e-30f)));
  return c;
}

}  // namespace

TEST_CASE("sha256 of known strings") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round trip is bit exact") {
  const Checkpoint c = sample();
  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.kind == c.kind);
  CHECK(back.digest == c.digest);
  CHECK(back.meta == c.meta);
  CHECK(back.params == c.params);
  CHECK(serialize_checkpoint(back) == bytes);

  const fs::path p = fs::temp_directory_path() / "eqvs_ckpt_test.ckpt";
  save_checkpoint(p.string(), c);
  CHECK(load_checkpoint(p.string()).params == c.params);
  fs::remove(p);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string bytes = serialize_checkpoint(sample());
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), CheckpointError);
  std::string wrong = bytes;
  wrong.replace(wrong.find("EQVS-CHECKPOINT 1"), 17, "EQVS-CHECKPOINT 9");
  CHECK_THROWS_AS(parse_checkpoint(wrong), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint("garbage"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ckpt"), std::runtime_error);
}
