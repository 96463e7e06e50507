#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>

#include "support.hpp"

namespace toon3d {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int status = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CliRun run(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "toon3d_cli_io";
  fs::create_directories(dir);
  const fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
  const fs::path err = dir / ("err" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(TOON3D_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

// Small synthetic scene written once through the synth subcommand.
const fs::path& scene_dir() {
  static const fs::path dir = [] {
    const fs::path d = testing::temp_dir("cli_scene");
    const CliRun r = run("synth --out " + d.string() +
                      " --seed 3 --cameras 3 --points 30 --width 160 --height 120 --focal 120");
    if (r.status != 0) throw std::runtime_error("synth failed: " + r.err);
    return d;
  }();
  return dir;
}

const std::string kFast = " --camera-iters 60 --deform-iters 40 --threads 2";

TEST(Cli, UnknownFlagIsUsageError) {
  const CliRun r = run("align --scene x --out y --no-such-flag");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("no-such-flag"), std::string::npos) << r.err;
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("frobnicate").status, 2);
}

TEST(Cli, MissingSceneNamesTheDirectory) {
  const CliRun r = run("align --scene /nonexistent/missing_scene --out " + testing::temp_dir("cli_missing").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("/nonexistent/missing_scene"), std::string::npos) << r.err;
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}

TEST(Cli, SynthOutputValidates) {
  const CliRun r = run("validate --scene " + scene_dir().string());
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out.rfind("ok: 3 images", 0), 0u) << r.out;
  EXPECT_TRUE(fs::exists(scene_dir() / "ground_truth.json"));
}

TEST(Cli, ValidateRejectsBrokenAnnotations) {
  const fs::path d = testing::temp_dir("cli_broken");
  fs::copy(scene_dir(), d, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  nlohmann::json j = nlohmann::json::parse(slurp(d / "points.json"));
  j["points"][0]["obs"][0]["image"] = 99;
  std::ofstream(d / "points.json") << j.dump();
  const CliRun r = run("validate --scene " + d.string());
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
}

TEST(Cli, AlignWritesArtifactsDeterministically) {
  const fs::path a = testing::temp_dir("cli_align_a"), b = testing::temp_dir("cli_align_b");
  const CliRun ra = run("align --scene " + scene_dir().string() + " --out " + a.string() + kFast + " --seed 4");
  ASSERT_EQ(ra.status, 0) << ra.err;
  const CliRun rb = run("align --scene " + scene_dir().string() + " --out " + b.string() + kFast + " --seed 4");
  ASSERT_EQ(rb.status, 0) << rb.err;
  for (const char* f : {"cameras.json", "pointcloud.ply", "state.json", "report.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_TRUE(fs::exists(a / "images" / "000_warped.png"));
  EXPECT_TRUE(fs::exists(a / "diff" / "002.png"));
  const nlohmann::json report = nlohmann::json::parse(slurp(a / "report.json"));
  EXPECT_EQ(report["camera_trace"]["total"].size(), 60u);
  EXPECT_EQ(report["deform_trace"]["l3d"].size(), 40u);
  EXPECT_TRUE(report["final_loss"].contains("arap2d"));
}

TEST(Cli, FlagsOverrideConfigFile) {
  const fs::path d = testing::temp_dir("cli_config");
  std::ofstream(d / "run.toml") << "[optimizer]\ncamera_iterations = 7\ndeform_iterations = 3\nseed = 9\n"
                                   "[weights]\nflip = 4.5\n[output]\nstride = 3\n";
  const CliRun r = run("align --scene " + scene_dir().string() + " --out " + (d / "out").string() + " --config " +
                    (d / "run.toml").string() + " --camera-iters 5 --w-flip 2.5");
  ASSERT_EQ(r.status, 0) << r.err;
  const nlohmann::json cfg = nlohmann::json::parse(slurp(d / "out" / "report.json"))["config"];
  EXPECT_EQ(cfg["optimizer"]["camera_iterations"], 5);
  EXPECT_EQ(cfg["optimizer"]["deform_iterations"], 3);
  EXPECT_EQ(cfg["optimizer"]["seed"], 9);
  EXPECT_EQ(cfg["weights"]["flip"], 2.5);
  EXPECT_EQ(cfg["output"]["stride"], 3);
}

TEST(Cli, ShippedConfigMatchesBuiltInDefaults) {
  const fs::path d = testing::temp_dir("cli_default_config");
  const std::string base = "align --scene " + scene_dir().string() + " --camera-iters 2 --deform-iters 2";
  ASSERT_EQ(run(base + " --out " + (d / "a").string()).status, 0);
  const CliRun r = run(base + " --out " + (d / "b").string() + " --config " + TOON3D_SOURCE_DIR "/config/default.toml");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(d / "a" / "report.json"))["config"],
            nlohmann::json::parse(slurp(d / "b" / "report.json"))["config"]);
}

TEST(Cli, BadConfigIsReported) {
  const fs::path d = testing::temp_dir("cli_badconfig");
  std::ofstream(d / "bad.toml") << "[optimizer]\nlearning_rate = 1\n";
  const CliRun r = run("align --scene " + scene_dir().string() + " --out " + (d / "out").string() + " --config " +
                    (d / "bad.toml").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST(Cli, EvalWritesPccAtRequestedAlpha) {
  const fs::path d = testing::temp_dir("cli_eval");
  const CliRun r = run("eval --scene " + scene_dir().string() + " --out " + d.string() +
                    " --holdout 5 --alpha 0.03 --methods full,camera-only --ba-iters 50" + kFast);
  ASSERT_EQ(r.status, 0) << r.err;
  const nlohmann::json j = nlohmann::json::parse(slurp(d / "eval.json"));
  EXPECT_EQ(j["holdout"], 5);
  EXPECT_EQ(j["holdout_ids"].size(), 5u);
  for (const char* m : {"full", "camera-only"}) {
    ASSERT_TRUE(j["methods"].contains(m)) << m;
    const auto& pcc = j["methods"][m]["pcc"];
    ASSERT_EQ(pcc.size(), 1u);
    EXPECT_EQ(pcc[0]["alpha"], 0.03);
    EXPECT_GE(pcc[0]["pcc"].get<double>(), 0.0);
    EXPECT_LE(pcc[0]["pcc"].get<double>(), 1.0);
    EXPECT_TRUE(j["methods"][m].contains("rotation_error_deg"));
  }
}

TEST(Cli, ExportReproducesAlignArtifacts) {
  const fs::path a = testing::temp_dir("cli_export_a"), b = testing::temp_dir("cli_export_b");
  ASSERT_EQ(run("align --scene " + scene_dir().string() + " --out " + a.string() + kFast).status, 0);
  const CliRun r = run("export --scene " + scene_dir().string() + " --state " + (a / "state.json").string() + " --out " +
                    b.string());
  ASSERT_EQ(r.status, 0) << r.err;
  for (const char* f : {"cameras.json", "pointcloud.ply", "state.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

}  // namespace
}  // namespace toon3d
