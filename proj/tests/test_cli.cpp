#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "eqvs/pipeline.hpp"
#include "eqvs/run_config.hpp"

using namespace eqvs;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(EQVS_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  Run r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

// Tiny images and networks so each command takes well under a second.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "eqvs_cli_test";
  fs::path config = root / "tiny.json";

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(config) << R"({
      "view": {"image_size": 16, "focal": 28, "target_size_px": 10},
      "encoder": {"image_size": 16, "pool": 1, "conv_channels": [4, 4], "head_widths": [8],
                  "feature_dim": 8, "transformer_widths": [8]},
      "rpr": {"head_widths": [8]},
      "train": {"epochs": 2, "batch_size": 16},
      "inference": {"restarts": 1, "max_iterations": 5},
      "servo": {"max_iterations": 2},
      "ibvs": {"max_steps": 5},
      "eval": {"trials": 2}
    })";
  }
  ~Workspace() { fs::remove_all(root); }

  std::string p(const std::string& name) const { return (root / name).string(); }
  std::string cfg() const { return "--config " + config.string(); }
};

}  // namespace

TEST_CASE("cli usage errors exit with 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("gen-data --views 10").code == 2);
  CHECK(cli("train").code == 2);
  CHECK(cli("costmap --checkpoint x --grid 2").code == 2);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("cli pipeline") {
  Workspace w;
  const std::string data = w.p("data");
  Run r = cli("gen-data " + w.cfg() + " --views 100 --pairs 500 --out " + data);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("samples 100 pairs 500") != std::string::npos);
  const Dataset d = read_dataset(data);
  CHECK(d.manifest.samples.size() == 100);
  CHECK(d.manifest.pairs.size() == 500);

  SUBCASE("gen-data is reproducible") {
    REQUIRE(cli("gen-data " + w.cfg() + " --views 100 --pairs 500 --out " + w.p("data2")).code == 0);
    CHECK(slurp(fs::path(data) / "manifest.json") == slurp(w.root / "data2" / "manifest.json"));
  }

  SUBCASE("zero epochs saves the initial model") {
    REQUIRE(cli("train " + w.cfg() + " --data " + data + " --epochs 0 --out " + w.p("t0")).code == 0);
    const LoadedModel m = load_model(w.p("t0/model.ckpt"));
    CHECK(m.model.params == initial_model(m.config).params);
  }

  SUBCASE("training writes one stats row per epoch and is seeded") {
    r = cli("train " + w.cfg() + " --data " + data + " --epochs 3 --seed 4 --out " + w.p("ta"));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("final loss") != std::string::npos);
    REQUIRE(cli("train " + w.cfg() + " --data " + data + " --epochs 3 --seed 4 --out " + w.p("tb")).code == 0);
    CHECK(slurp(w.root / "ta" / "model.ckpt") == slurp(w.root / "tb" / "model.ckpt"));
    const std::string stats = slurp(w.root / "ta" / "stats.csv");
    CHECK(stats.rfind("# config_digest ", 0) == 0);
    CHECK(lines(stats) == 1 + 1 + 3);
  }

  SUBCASE("servo, eval, costmap and ablate") {
    REQUIRE(cli("train " + w.cfg() + " --data " + data + " --out " + w.p("ours")).code == 0);
    REQUIRE(cli("train " + w.cfg() + " --data " + data + " --model rpr --out " + w.p("rpr")).code == 0);
    const std::string ckpt = w.p("ours/model.ckpt"), rpr = w.p("rpr/model.ckpt");

    r = cli("servo " + w.cfg() + " --checkpoint " + ckpt + " --out " + w.p("servo"));
    REQUIRE(r.code == 0);
    CHECK((r.out.rfind("converged", 0) == 0 || r.out.rfind("not-converged", 0) == 0));
    CHECK(r.out.find("final angle error") != std::string::npos);
    CHECK(fs::exists(w.root / "servo" / "trajectory.csv"));

    r = cli("eval " + w.cfg() + " --checkpoint " + ckpt + " --rpr " + rpr + " --out " + w.p("eval"));
    REQUIRE(r.code == 0);
    const std::string table = slurp(w.root / "eval" / "table.csv");
    CHECK(table.find("object,method,trials,mean_add,pcs@0.02,pcs@0.05,pcs@0.1,pcs@0.2\n") != std::string::npos);
    CHECK(lines(table) == 1 + 1 + 3);
    REQUIRE(cli("eval " + w.cfg() + " --checkpoint " + ckpt + " --rpr " + rpr + " --out " + w.p("eval2")).code ==
            0);
    CHECK(slurp(w.root / "eval2" / "table.csv") == table);
    CHECK(fs::exists(w.root / "eval" / "pcs_curve.csv"));

    CHECK(cli("eval " + w.cfg() + " --checkpoint " + ckpt + " --methods ours,orb --out " + w.p("e3")).code == 2);
    CHECK(cli("eval " + w.cfg() + " --checkpoint " + ckpt + " --trials 0 --out " + w.p("e4")).code == 2);
    // rpr requested without a checkpoint, or a missing checkpoint: configuration errors, no outputs
    CHECK(cli("eval " + w.cfg() + " --checkpoint " + ckpt + " --out " + w.p("e5")).code == 1);
    CHECK(cli("eval " + w.cfg() + " --checkpoint " + w.p("missing.ckpt") + " --methods ibvs --out " + w.p("e6"))
              .code == 1);
    CHECK(!fs::exists(w.root / "e5"));
    CHECK(!fs::exists(w.root / "e6"));
    // checkpoints have to agree on the dataset
    REQUIRE(cli("gen-data " + w.cfg() + " --views 20 --pairs 40 --seed 9 --out " + w.p("other")).code == 0);
    REQUIRE(cli("train " + w.cfg() + " --data " + w.p("other") + " --model rpr --epochs 0 --out " + w.p("rpr2"))
                .code == 0);
    CHECK(cli("eval " + w.cfg() + " --checkpoint " + ckpt + " --rpr " + w.p("rpr2/model.ckpt") + " --out " +
              w.p("e7"))
              .code == 1);

    r = cli("costmap " + w.cfg() + " --checkpoint " + ckpt + " --grid 16 --out " + w.p("cost"));
    REQUIRE(r.code == 0);
    const std::string cost = slurp(w.root / "cost" / "costmap.csv");
    std::istringstream rows(cost);
    int data_rows = 0;
    for (std::string line; std::getline(rows, line);) {
      if (line.empty() || line[0] == '#') continue;
      ++data_rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 15);
    }
    CHECK(data_rows == 16);

    REQUIRE(cli("gen-data " + w.cfg() + " --views 100 --pairs 500 --uncentered --out " + w.p("raw")).code == 0);
    REQUIRE(cli("train " + w.cfg() + " --data " + w.p("raw") + " --out " + w.p("ours_raw")).code == 0);
    r = cli("ablate " + w.cfg() + " --with " + ckpt + " --without " + w.p("ours_raw/model.ckpt") + " --out " +
            w.p("ablate"));
    REQUIRE(r.code == 0);
    CHECK(lines(slurp(w.root / "ablate" / "ablation.csv")) == 1 + 1 + 1);
  }

  SUBCASE("a tampered dataset config is rejected") {
    std::string text = slurp(fs::path(data) / "config.json");
    const std::size_t pos = text.find("\"epochs\": 2");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 11, "\"epochs\": 9");
    std::ofstream(fs::path(data) / "config.json") << text;
    CHECK(cli("train " + w.cfg() + " --data " + data + " --out " + w.p("tx")).code == 1);
    CHECK(!fs::exists(w.root / "tx"));
  }
}

TEST_CASE("runs default to a timestamped directory under the output root") {
  Workspace w;
  const std::string root = w.p("runs");
  const Run r = cli("gen-data " + w.cfg() + " --views 10 --pairs 20 --out " + w.p("d"));
  REQUIRE(r.code == 0);
  const std::string env = "EQVS_OUTPUT_ROOT=" + root + " ";
  const std::string cmd = env + EQVS_CLI_PATH + " train " + w.cfg() + " --data " + w.p("d") +
                          " --epochs 0 >/dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(root)) {
    ++dirs;
    CHECK(e.path().filename().string().find("-train") != std::string::npos);
    CHECK(fs::exists(e.path() / "config.json"));
    CHECK(fs::exists(e.path() / "model.ckpt"));
  }
  CHECK(dirs == 1);
}
