#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>

#include "activesplat/serialization.hpp"
#include "test_util.hpp"

using namespace activesplat;
namespace fs = std::filesystem;

namespace {

// Per process, since ctest may run the tests in parallel.
const fs::path kRoot = fs::temp_directory_path() / ("activesplat_cli_tests_" + std::to_string(getpid()));

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ACTIVESPLAT_CLI_PATH) + " " + args + " > " + (kRoot / "stdout.txt").string() +
                          " 2> " + (kRoot / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_stdout() { return read_text(kRoot / "stdout.txt"); }
std::string last_stderr() { return read_text(kRoot / "stderr.txt"); }

// A small simulated dataset shared by the tests; built once.
class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write_text(kRoot / "sim.json", R"({"n_views": 2, "n_candidates": 3, "n_heldout": 2})");
    status_ = run_cli("simulate --scene bunny-proxy --seed 3 --quiet --config " + (kRoot / "sim.json").string() +
                      " --out " + (kRoot / "data").string());
  }
  static fs::path data(const std::string& f) { return kRoot / "data" / f; }
  static inline int status_ = -1;
};

}  // namespace

TEST_F(Cli, SimulateWritesDatasetAndManifest) {
  ASSERT_EQ(status_, 0);
  for (const char* f : {"cameras.json", "candidates.json", "heldout.json", "init_scene.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(data(f))) << f;
  EXPECT_EQ(load_cameras(data("cameras.json")).size(), 2u);
  EXPECT_EQ(load_candidates(data("candidates.json")).size(), 3u);
  const Json m = Json::parse(read_text(data("manifest.json")));
  EXPECT_EQ(m["format"], "activesplat-manifest");
  EXPECT_EQ(m["subcommand"], "simulate");
  EXPECT_EQ(m["seed"], 3);
  EXPECT_EQ(m["outputs"].size(), 4u);
  EXPECT_EQ(m["config"]["n_heldout"], 2);
}

TEST_F(Cli, SimulateIsDeterministic) {
  ASSERT_EQ(status_, 0);
  ASSERT_EQ(run_cli("simulate --scene bunny-proxy --seed 3 --quiet --config " + (kRoot / "sim.json").string() +
                    " --out " + (kRoot / "data2").string()),
            0);
  for (const char* f : {"init_scene.json", "view0_sensor.depth", "manifest.json"})
    EXPECT_EQ(read_text(data(f)), read_text(kRoot / "data2" / f)) << f;
}

TEST_F(Cli, RenderMatchesLibrary) {
  ASSERT_EQ(status_, 0);
  const fs::path out = kRoot / "render";
  ASSERT_EQ(run_cli("render --quiet --scene " + data("init_scene.json").string() + " --camera " +
                    data("heldout.json").string() + " --out " + out.string()),
            0)
      << last_stderr();
  const SceneModel scene = load_scene(data("init_scene.json"));
  const auto cams = load_cameras(data("heldout.json"));
  const std::string suffix = "_" + std::to_string(cams[0].id);
  const Image depth = read_depth(out / ("depth" + suffix + ".depth"));
  const RenderOutput r = render(scene, cams[0]);
  for (std::size_t i = 0; i < depth.size(); i += 7) {
    if (std::isnan(r.depth[i])) continue;
    EXPECT_EQ(depth[i], static_cast<float>(r.depth[i]));
  }
  EXPECT_TRUE(fs::exists(out / ("color" + suffix + ".ppm")));
  EXPECT_EQ(Json::parse(read_text(out / "manifest.json"))["outputs"].size(), 8u);
}

TEST_F(Cli, SelectViewPrintsScoresAndChoice) {
  ASSERT_EQ(status_, 0);
  const fs::path out = kRoot / "select";
  ASSERT_EQ(run_cli("select-view --quiet --scene " + data("init_scene.json").string() + " --camera " +
                    data("cameras.json").string() + " --candidates " + data("candidates.json").string() +
                    " --mode depth --out " + out.string()),
            0)
      << last_stderr();
  const std::string text = last_stdout();
  EXPECT_EQ(text.rfind("# activesplat-scores v1\nid,color,depth,combined,feasible\n", 0), 0u);
  EXPECT_NE(text.find("chosen,"), std::string::npos);
  EXPECT_EQ(read_text(out / "scores.csv") + text.substr(text.find("chosen,")), text);

  // The CLI choice agrees with the library.
  const SceneModel scene = load_scene(data("init_scene.json"));
  const auto train = load_cameras(data("cameras.json"));
  const auto cands = load_candidates(data("candidates.json"));
  SelectionParams p;
  p.mode = SelectionMode::depth;
  const Selection sel = select_next_view(cands, scene, accumulate_train_hessian(scene, train, FisherChannel::color),
                                         accumulate_train_hessian(scene, train, FisherChannel::depth), p);
  EXPECT_NE(text.find("chosen," + std::to_string(sel.chosen.id) + "\n"), std::string::npos);
}

TEST_F(Cli, TrainAndEval) {
  ASSERT_EQ(status_, 0);
  const fs::path out = kRoot / "train";
  ASSERT_EQ(run_cli("train --quiet --steps 30 --seed 2 --scene " + data("init_scene.json").string() + " --camera " +
                    data("cameras.json").string() + " --out " + out.string()),
            0)
      << last_stderr();
  const SceneModel trained = load_scene(out / "scene.json");
  EXPECT_GT(trained.size(), 0u);
  const std::string log = read_text(out / "events.jsonl");
  EXPECT_NE(log.find("\"event\":\"end\""), std::string::npos);
  EXPECT_EQ(Json::parse(read_text(out / "manifest.json"))["config"]["total_steps"], 30);

  ASSERT_EQ(run_cli("eval --quiet --scene " + (out / "scene.json").string() + " --camera " +
                    data("heldout.json").string() + " --out " + out.string()),
            0)
      << last_stderr();
  const Json m = Json::parse(last_stdout());
  for (const char* k : {"psnr", "ssim", "d_abs", "d_abs_o"}) EXPECT_TRUE(m.at(k).is_number()) << k;
  EXPECT_GT(m["psnr"].get<double>(), 5.0);
}

TEST_F(Cli, BadInputExitsWithOne) {
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("fly"), 1);
  EXPECT_EQ(run_cli("render --scene missing.json --camera missing.json --out " + kRoot.string()), 1);
  EXPECT_NE(last_stderr().find("missing.json"), std::string::npos);
  EXPECT_EQ(run_cli("simulate --scene teapot --out " + kRoot.string()), 1);
  write_text(kRoot / "broken.json", "{\"format\": \"activesplat-scene\"");
  EXPECT_EQ(run_cli("render --scene " + (kRoot / "broken.json").string() + " --camera " +
                    (kRoot / "broken.json").string() + " --out " + kRoot.string()),
            1);
  ASSERT_EQ(status_, 0);
  EXPECT_EQ(run_cli("select-view --scene " + data("init_scene.json").string() + " --candidates " +
                    data("candidates.json").string() + " --mode sideways --out " + kRoot.string()),
            1);
  EXPECT_EQ(run_cli("--help"), 0);
}
