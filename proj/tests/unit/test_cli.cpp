#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "maskfield/dataio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MASKFIELD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("maskfield_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

json manifest(const fs::path& out, const std::string& cmd) { return json::parse(slurp(out / ("run_" + cmd + ".json"))); }

std::string first_line(const fs::path& p) {
  std::ifstream f(p);
  std::string l;
  std::getline(f, l);
  return l;
}

const std::string kModel = " --dm 4 --nk 8 --grid-res 20 --samples 24 --ray-batch 384 --seed 2";

}  // namespace

TEST(Cli, FullPipelineOnTinyScene) {
  const fs::path out = fresh_dir("pipe");
  const std::string o = " --out " + out.string();
  ASSERT_EQ(run("gen" + o + " --seed 1 --objects 2 --size 24 --num-views 8"), 0);
  EXPECT_TRUE(fs::exists(out / "dataset" / "manifest.json"));
  const json g = manifest(out, "gen");
  EXPECT_EQ(g["exit_code"], 0);
  EXPECT_EQ(g["command"], "gen");
  EXPECT_EQ(g["outputs"]["views"], 8);
  EXPECT_TRUE(g["versions"].contains("eigen"));
  EXPECT_EQ(g["flags"]["size"], "24");

  ASSERT_EQ(run("train-geo" + o + kModel + " --steps 300"), 0);
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "geometry.ckpt"));
  EXPECT_EQ(first_line(out / "logs" / "geometry_loss.csv"), "step,l_photometric,wall_ms");
  EXPECT_EQ(manifest(out, "train-geo")["config"]["d_m"], 4);

  // the run shape is fixed by the checkpoint
  EXPECT_EQ(run("train-mask" + o + " --steps 5 --dm 8"), 1);
  EXPECT_NE(manifest(out, "train-mask")["error"].get<std::string>().find("does not match --dm 8"), std::string::npos);

  ASSERT_EQ(run("train-mask" + o + " --steps 150"), 0);
  EXPECT_EQ(first_line(out / "logs" / "mask_loss.csv"), "step,l_focal,l_dice,l_feature,l_extra,l_total,wall_ms");
  const auto ck = maskfield::load_checkpoint(out / "checkpoints" / "maskfield.ckpt");
  EXPECT_EQ(ck.state.stage2_step, 150);
  EXPECT_EQ(ck.config.d_m, 4);

  ASSERT_EQ(run("eval" + o), 0);
  const json rep = json::parse(slurp(out / "eval" / "report.json"));
  EXPECT_EQ(rep["n_views"], 2);
  EXPECT_GE(rep["miou"].get<double>(), 0.0);
  EXPECT_LE(rep["miou"].get<double>(), 1.0);
  EXPECT_EQ(first_line(out / "eval" / "report.csv"), "scene,miou,mbiou,acc,n_views");

  ASSERT_EQ(run("segment" + o + " --views 3"), 0);
  const std::string pgm = slurp(out / "segment" / "view_003_labels.pgm");
  EXPECT_EQ(pgm.rfind("P5\n24 24\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n24 24\n255\n").size() + 24 * 24);

  ASSERT_EQ(run("query" + o + " --class object_0 --views 3"), 0);
  const std::string pbm = slurp(out / "query" / "object_0_view_003.pbm");
  EXPECT_EQ(pbm.rfind("P4\n24 24\n", 0), 0u);
  EXPECT_EQ(pbm.size(), std::string("P4\n24 24\n").size() + 24 * 3);

  ASSERT_EQ(run("query" + o + " --orthogonal 9"), 0);
  EXPECT_EQ(slurp(out / "query" / "orthogonal.csv"), "view,pixels_on,survivors\n3,0,0\n7,0,0\n");

  EXPECT_EQ(run("query" + o + " --class object_0 --orthogonal 9"), 1);
  EXPECT_EQ(run("query" + o + " --class nonexistent"), 1);
  fs::remove_all(out);
}

TEST(Cli, GradcheckWritesReport) {
  const fs::path out = fresh_dir("gc");
  for (const char* b : {"grid", "splat"}) {
    ASSERT_EQ(run("gradcheck --out " + out.string() + " --backend " + b + " --coords 20"), 0) << b;
    const json j = json::parse(slurp(out / "gradcheck.json"));
    EXPECT_EQ(j["backend"], b);
    EXPECT_LT(j["max_rel_error"].get<double>(), 1e-4);
    EXPECT_TRUE(j["pass"].get<bool>());
  }
  fs::remove_all(out);
}

TEST(Cli, BadArgumentsExitOne) {
  const fs::path out = fresh_dir("args");
  const std::string o = " --out " + out.string();
  EXPECT_EQ(run("gen" + o + " --objects 9"), 1);
  EXPECT_EQ(manifest(out, "gen")["exit_code"], 1);
  EXPECT_EQ(run("gen" + o + " --num-views 4"), 1);
  EXPECT_EQ(run("train-geo" + o + " --backend voxels"), 1);
  EXPECT_EQ(run("gen"), 1);  // --out is required
  EXPECT_EQ(run("frobnicate" + o), 1);
  EXPECT_EQ(run("--version"), 0);
  fs::remove_all(out);
}

TEST(Cli, UnwritableOutputExitsTwo) { EXPECT_EQ(run("gen --out /dev/null/sub --size 24 --objects 1 --num-views 8"), 2); }

TEST(Cli, InvalidOrMissingInputExitsOne) {
  const fs::path out = fresh_dir("data");
  const std::string o = " --out " + out.string();
  ASSERT_EQ(run("gen" + o + " --size 16 --num-views 8 --objects 1"), 0);
  {
    const fs::path m = out / "dataset" / "manifest.json";
    json j = json::parse(slurp(m));
    j["format_version"] = 7;
    std::ofstream(m) << j.dump();
  }
  EXPECT_EQ(run("train-geo" + o + " --steps 1"), 1);
  EXPECT_NE(manifest(out, "train-geo")["error"].get<std::string>().find("unknown format_version 7"), std::string::npos);
  EXPECT_EQ(run("train-geo --out " + (out / "nowhere").string() + " --steps 1"), 1);  // missing input
  EXPECT_EQ(run("segment" + o), 1);
  EXPECT_EQ(run("eval" + o), 1);  // no checkpoint yet
  fs::remove_all(out);
}
