#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" MNET_CLI "' " + args + " >>log.txt 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  std::string read(const fs::path& rel) const {
    std::ifstream in(dir_ / rel, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  fs::path dir_;
};

const char* kGanConfig =
    "base_channels = 4\n"
    "max_channels = 16\n"
    "targets = 2\n"
    "checkpoint_every = 2\n";

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("synth --help"), 0);
  EXPECT_EQ(run("synth"), 2);  // --out is required
  EXPECT_EQ(run("synth --out c --frobnicate"), 2);
  EXPECT_EQ(run("synth --out c --identities three"), 2);
  EXPECT_EQ(run("frobnicate --out c"), 2);
  EXPECT_EQ(run("fit-basis --corpus missing --out b"), 1);
  write("bad.cfg", "frames_per_clip = 0\n");
  EXPECT_EQ(run("synth --config bad.cfg --out c"), 1);
  write("unknown.cfg", "no_such_key = 1\n");
  EXPECT_EQ(run("synth --config unknown.cfg --out c"), 1);
  EXPECT_EQ(run("eval --reference nowhere --generated nowhere --out e"), 1);

  ASSERT_EQ(run("synth --identities 2 --clips 1 --frames 4 --out c"), 0);
  write("gan.cfg", kGanConfig);
  ASSERT_EQ(run("train-gan --corpus c --config gan.cfg --steps 1 --out g"), 0);
  // The landmark transformer needs a disentangler and a basis.
  EXPECT_EQ(run("reenact --corpus c --generator g/checkpoint.mnet --driver-clip id000_clip00 "
                "--target-clip id001_clip00 --targets 2 --landmark-transformer --out r"),
            2);
  EXPECT_EQ(run("reenact --corpus c --generator g/checkpoint.mnet --driver-clip nope "
                "--target-clip id001_clip00 --targets 2 --out r"),
            1);
  EXPECT_EQ(run("inspect-checkpoint --checkpoint g/checkpoint.mnet --out i"), 0);
  EXPECT_NE(read("i/checkpoint.txt").find("training step 1"), std::string::npos);
}

TEST_F(Cli, SynthConfigOverrides) {
  write("synth.cfg", "# small corpus\nidentities = 3\nframes_per_clip = 5\nimage_size = 32\nexpression = false\n");
  ASSERT_EQ(run("synth --config synth.cfg --frames 6 --out c"), 0);
  const std::string manifest = read("c/manifest.json");
  EXPECT_TRUE(fs::exists(dir_ / "c/frames/id002_clip01_005.ppm"));
  EXPECT_FALSE(fs::exists(dir_ / "c/frames/id003_clip00_000.ppm"));
  EXPECT_FALSE(fs::exists(dir_ / "c/frames/id002_clip01_006.ppm"));
  EXPECT_NE(manifest.find("\"expression\": false"), std::string::npos);
}

TEST_F(Cli, ResumeMatchesContinuousRun) {
  ASSERT_EQ(run("synth --identities 3 --clips 1 --frames 5 --out c"), 0);
  write("gan.cfg", kGanConfig);
  ASSERT_EQ(run("train-gan --corpus c --config gan.cfg --steps 4 --out full"), 0);
  ASSERT_TRUE(fs::exists(dir_ / "full/checkpoint_000002.mnet"));
  ASSERT_EQ(run("train-gan --corpus c --config gan.cfg --steps 4 --resume full/checkpoint_000002.mnet --out resumed"), 0);
  EXPECT_EQ(read("full/checkpoint.mnet"), read("resumed/checkpoint.mnet"));
  // The resumed log holds steps 3 and 4 only; they match the continuous log line for line.
  const std::string full = read("full/metrics.csv");
  const std::string resumed = read("resumed/metrics.csv");
  const auto header_end = resumed.find('\n') + 1;
  const auto third = full.find("\n3,") + 1;
  EXPECT_EQ(resumed.substr(header_end), full.substr(third));
}

TEST_F(Cli, PipelineIsDeterministic) {
  write("gan.cfg", kGanConfig);
  for (const std::string run_dir : {"a", "b"}) {
    const std::string p = run_dir + "/";
    ASSERT_EQ(run("synth --identities 6 --clips 1 --frames 6 --out " + p + "corpus"), 0);
    ASSERT_EQ(run("fit-basis --corpus " + p + "corpus --train-fraction 0.67 --out " + p + "basis"), 0);
    ASSERT_EQ(run("train-disentangler --corpus " + p + "corpus --basis " + p + "basis --steps 30 --out " + p + "dis"), 0);
    ASSERT_EQ(run("train-gan --corpus " + p + "corpus --split " + p + "basis/split.json --config gan.cfg --steps 2 --out " +
                  p + "gan"),
              0);
    ASSERT_EQ(run("reenact --corpus " + p + "corpus --generator " + p + "gan/checkpoint.mnet --driver-clip id000_clip00 " +
                  "--target-clip id003_clip00 --targets 2 --landmark-transformer --disentangler " + p +
                  "dis/disentangler.mnet --basis " + p + "basis --out " + p + "re"),
              0);
    ASSERT_EQ(run("eval --reference " + p + "re/reference --generated " + p + "re --out " + p + "eval"), 0);
  }
  for (const char* file : {"basis/split.json", "basis/basis.mnet", "dis/disentangler.mnet", "dis/disentangler_loss.csv",
                           "gan/metrics.csv", "gan/checkpoint.mnet", "re/landmarks.jsonl", "re/frames/005.ppm",
                           "eval/metrics.csv"}) {
    const std::string a = read(fs::path("a") / file);
    EXPECT_FALSE(a.empty()) << file;
    EXPECT_EQ(a, read(fs::path("b") / file)) << file;
  }
  const std::string csv = read("a/eval/metrics.csv");
  EXPECT_EQ(csv.rfind("frame,ssim,psnr,m_ssim,m_psnr,pose_error_deg\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
}

}  // namespace
