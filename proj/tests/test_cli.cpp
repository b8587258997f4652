#include "mmfuse/checkpoint.hpp"
#include "mmfuse/dataset.hpp"
#include "support.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

using namespace mmfuse;
using mmfuse::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MMFUSE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<unsigned char> bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Workspace {
  fs::path dir;
  fs::path config;
};

// Generated data plus a trained checkpoint, built once.
const Workspace& workspace() {
  static const Workspace ws = [] {
    Workspace w{scratch_dir("cli"), {}};
    w.config = w.dir / "config.json";
    write_json(w.config, {{"output_dir", (w.dir / "run").string()},
                          {"data",
                           {{"path", (w.dir / "data").string()},
                            {"n_train", 4},
                            {"n_val", 2},
                            {"n_test", 3},
                            {"height", 16},
                            {"width", 16}}},
                          {"model", {{"base_channels", 2}, {"depth", 2}, {"tap_points", {1, 2}}}},
                          {"train", {{"epochs", 2}, {"batch_size", 2}, {"learning_rate", 1e-3}}},
                          {"multi_seed", {{"seeds", {0, 1}}}}});
    REQUIRE(run("generate-data -c " + w.config.string()) == 0);
    REQUIRE(run("train -c " + w.config.string()) == 0);
    return w;
  }();
  return ws;
}

}  // namespace

TEST_CASE("generate-data and train write their artifacts") {
  const auto& w = workspace();
  CHECK(fs::exists(w.dir / "data" / "manifest.json"));
  CHECK(fs::exists(w.dir / "data" / "resolved_config.json"));
  CHECK(fs::exists(w.dir / "run" / "checkpoint.bin"));
  CHECK(fs::exists(w.dir / "run" / "history.jsonl"));
  const auto resolved = read_json(w.dir / "run" / "resolved_config.json");
  CHECK(resolved["train"]["epochs"] == 2);
  CHECK(resolved["train"]["weight_decay"] == 0.01);
}

TEST_CASE("overrides change the resolved configuration") {
  const auto& w = workspace();
  const auto out = w.dir / "run_override";
  CHECK(run("train -c " + w.config.string() + " --set train.epochs=1 --set output_dir=" + out.string()) == 0);
  CHECK(read_json(out / "resolved_config.json")["train"]["epochs"] == 1);
}

TEST_CASE("evaluate writes metrics for every output") {
  const auto& w = workspace();
  const std::string base =
      "evaluate --checkpoint " + (w.dir / "run" / "checkpoint.bin").string() + " --dataset " + (w.dir / "data").string();
  for (const std::string mode : {"sar", "opt", "fusion", "cutoff_to_sar", "cutoff_to_opt"}) {
    const auto out = w.dir / ("metrics_" + mode + ".json");
    REQUIRE(run(base + " --mode " + mode + " --out " + out.string()) == 0);
    const auto j = read_json(out);
    CHECK(j["mode"] == mode);
    CHECK(j["split"] == "test");
    const auto& c = j["counts"];
    CHECK(c["tp"].get<int>() + c["fp"].get<int>() + c["fn"].get<int>() + c["tn"].get<int>() == 3 * 16 * 16);
  }
  CHECK(run(base + " --mode bogus") == 1);
  CHECK(run(base + " --split holdout") == 1);
}

TEST_CASE("cut-off evaluation without a train split or statistics fails cleanly") {
  const auto& w = workspace();
  const auto data = w.dir / "data_no_train";
  fs::remove_all(data);
  fs::copy(w.dir / "data", data, fs::copy_options::recursive);
  auto manifest = read_json(data / "manifest.json");
  manifest["splits"]["train"] = nlohmann::json::array();
  write_json(data / "manifest.json", manifest);
  const std::string base =
      "evaluate --checkpoint " + (w.dir / "run" / "checkpoint.bin").string() + " --dataset " + data.string();
  CHECK(run(base + " --mode cutoff_to_sar") == 1);
  CHECK(run(base + " --mode fusion") == 0);

  const auto stats = w.dir / "stats.json";
  REQUIRE(run("estimate-stats --checkpoint " + (w.dir / "run" / "checkpoint.bin").string() + " --dataset " +
              (w.dir / "data").string() + " --out " + stats.string()) == 0);
  CHECK(run(base + " --mode cutoff_to_sar --stats " + stats.string()) == 0);
}

TEST_CASE("analyze-cur writes a consistent report") {
  const auto& w = workspace();
  const auto out = w.dir / "cur.json";
  const int rc = run("analyze-cur --checkpoint " + (w.dir / "run" / "checkpoint.bin").string() + " --dataset " +
                     (w.dir / "data").string() + " --metric recall --out " + out.string());
  REQUIRE(rc == 0);
  const auto j = read_json(out);
  CHECK(j["accuracy_metric_name"] == "recall");
  CHECK(j["provenance"]["split"] == "test");
  CHECK(j["d_util"].get<double>() ==
        doctest::Approx(j["u_sar_given_opt"].get<double>() - j["u_opt_given_sar"].get<double>()));
}

TEST_CASE("predict writes probability, mask and agreement rasters") {
  const auto& w = workspace();
  const auto out = w.dir / "pred";
  REQUIRE(run("predict --checkpoint " + (w.dir / "run" / "checkpoint.bin").string() + " --dataset " +
              (w.dir / "data").string() + " --tile test_00001 --out " + out.string()) == 0);
  const auto ps = read_f32(out / "test_00001.p_sar.prob.bin", 1, 256);
  const auto po = read_f32(out / "test_00001.p_opt.prob.bin", 1, 256);
  const auto p = read_f32(out / "test_00001.p.prob.bin", 1, 256);
  CHECK((p - (ps + po) / 2.0f).cwiseAbs().maxCoeff() <= 1e-7f);

  const auto mask = read_u8(out / "test_00001.p.mask.bin", 1, 256);
  const auto agree = bytes(out / "test_00001.p.agreement.bin");
  const Tile tile = Dataset::open(w.dir / "data").load_tile("test_00001");
  REQUIRE(agree.size() == 256);
  for (Index i = 0; i < 256; ++i) {
    CHECK(mask(0, i) == (p(0, i) > 0.5f ? 1.0f : 0.0f));
    const bool pr = mask(0, i) == 1, tr = tile.y.data(0, i) == 1;
    CHECK(agree[static_cast<size_t>(i)] == (pr && tr ? 3 : pr ? 2 : tr ? 1 : 0));
  }
  CHECK(run("predict --checkpoint " + (w.dir / "run" / "checkpoint.bin").string() + " --dataset " +
            (w.dir / "data").string() + " --tile test_00001 --mode cutoff_to_opt --out " + out.string()) == 0);
  CHECK(fs::exists(out / "test_00001.p_opt_cut.prob.bin"));
  CHECK(run("predict --checkpoint " + (w.dir / "run" / "checkpoint.bin").string() + " --dataset " +
            (w.dir / "data").string() + " --tile nope --out " + out.string()) == 1);
}

TEST_CASE("multi-seed writes an aggregate") {
  const auto& w = workspace();
  const auto out = w.dir / "multi";
  REQUIRE(run("multi-seed -c " + w.config.string() + " --set output_dir=" + out.string() +
              " --set analysis.metric=recall") == 0);
  const auto j = read_json(out / "multi_seed.json");
  CHECK(j["runs"].size() == 2);
  CHECK(j["aggregate"].contains("d_util"));
  CHECK(fs::exists(out / "seed_1" / "cur_report.json"));
}

TEST_CASE("invalid invocations exit with status 1") {
  const auto& w = workspace();
  CHECK(run("train -c " + w.config.string() + " --set train.epochs=-1") == 1);
  CHECK(run("train -c " + w.config.string() + " --set data.n_train=-5") == 1);
  CHECK(run("train -c " + w.config.string() + " --set data.path=" + (w.dir / "missing").string()) == 1);
  CHECK(run("train -c " + w.config.string() + " --set train.bogus=1") == 1);
  CHECK(run("evaluate --checkpoint " + (w.dir / "missing.bin").string() + " --dataset " + (w.dir / "data").string()) ==
        1);
  CHECK(run("train") == 1);
  CHECK(run("no-such-command") == 1);
}

TEST_CASE("a checkpoint for other channel counts is rejected") {
  const auto& w = workspace();
  const auto data = w.dir / "data_wide";
  REQUIRE(run("generate-data -c " + w.config.string() + " --set data.opt_channels=5 --set data.path=" + data.string()) ==
          0);
  CHECK(run("evaluate --checkpoint " + (w.dir / "run" / "checkpoint.bin").string() + " --dataset " + data.string()) ==
        1);
}

TEST_CASE("repeating a command with the same inputs reproduces its outputs") {
  const auto& w = workspace();
  const auto a = w.dir / "repeat_a", b = w.dir / "repeat_b";
  for (const auto& d : {a, b}) {
    REQUIRE(run("generate-data -c " + w.config.string() + " --set data.path=" + (d / "data").string()) == 0);
    REQUIRE(run("train -c " + w.config.string() + " --set data.path=" + (d / "data").string() +
                " --set output_dir=" + (d / "run").string()) == 0);
    REQUIRE(run("evaluate --checkpoint " + (d / "run" / "checkpoint.bin").string() + " --dataset " +
                (d / "data").string() + " --out " + (d / "metrics.json").string()) == 0);
  }
  for (const auto& entry : fs::recursive_directory_iterator(a / "data")) {
    if (!entry.is_regular_file() || entry.path().filename() == "resolved_config.json") continue;
    const auto rel = fs::relative(entry.path(), a);
    CHECK_MESSAGE(bytes(a / rel) == bytes(b / rel), rel.string());
  }
  CHECK(bytes(a / "run" / "checkpoint.bin") == bytes(b / "run" / "checkpoint.bin"));
  CHECK(bytes(a / "run" / "history.jsonl") == bytes(b / "run" / "history.jsonl"));
  CHECK(bytes(a / "metrics.json") == bytes(b / "metrics.json"));
}
