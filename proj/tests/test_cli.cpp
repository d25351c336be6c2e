#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gseunet/png_io.hpp"

// End-to-end runs of the command-line binary (path injected by the build).

using namespace gseunet;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(GSEUNET_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    EXPECT_NE(pipe, nullptr) << cmd;
    RunResult result;
    char buf[512];
    while (std::fgets(buf, sizeof buf, pipe) != nullptr) result.output += buf;
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

class TmpDir {
  public:
    TmpDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root_ = fs::temp_directory_path() /
                (std::string("gseunet_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    ~TmpDir() { fs::remove_all(root_); }
    std::string operator/(const std::string& name) const { return (root_ / name).string(); }

  private:
    fs::path root_;
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    EXPECT_TRUE(f.good()) << path;
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::size_t count_files(const std::string& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file() ? 1 : 0;
    return n;
}

// small synthetic dataset plus a short training run most cases build on
void make_dataset(const TmpDir& tmp, int n = 6) {
    const auto r = run_cli("synth --n " + std::to_string(n) + " --size 32 --seed 3 --out " +
                           (tmp / "data"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
}

void make_checkpoint(const TmpDir& tmp) {
    const auto r = run_cli("train --images " + (tmp / "data/images") + " --masks " +
                           (tmp / "data/masks") +
                           " --variant improved --epochs 2 --size 32 --depth 2 --base 4"
                           " --groups 2 --seed 7 --out " +
                           (tmp / "m.ckpt") + " --metrics " + (tmp / "m.csv"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
}

}  // namespace

TEST(CliSynth, WritesPairedTree) {
    TmpDir tmp;
    const auto r = run_cli("synth --n 5 --size 32 --seed 1 --out " + (tmp / "data"));
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("wrote 5"), std::string::npos) << r.output;
    EXPECT_EQ(count_files(tmp / "data/images"), 5u);
    EXPECT_EQ(count_files(tmp / "data/masks"), 5u);
}

TEST(CliSynth, DeterministicPerSeed) {
    TmpDir tmp;
    ASSERT_EQ(run_cli("synth --n 3 --size 32 --seed 9 --out " + (tmp / "a")).exit_code, 0);
    ASSERT_EQ(run_cli("synth --n 3 --size 32 --seed 9 --out " + (tmp / "b")).exit_code, 0);
    EXPECT_EQ(read_file(tmp / "a/images/0000.png"), read_file(tmp / "b/images/0000.png"));
    EXPECT_EQ(read_file(tmp / "a/masks/0002.png"), read_file(tmp / "b/masks/0002.png"));
}

TEST(CliPreprocess, ProcessesEveryImage) {
    TmpDir tmp;
    make_dataset(tmp, 3);
    const auto r = run_cli("preprocess --in " + (tmp / "data/images") + " --out " + (tmp / "prep"));
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("processed 3 images"), std::string::npos) << r.output;
    EXPECT_EQ(count_files(tmp / "prep"), 3u);
}

TEST(CliPreprocess, EmptyDirectoryFails) {
    TmpDir tmp;
    fs::create_directories(tmp / "empty");
    const auto r = run_cli("preprocess --in " + (tmp / "empty") + " --out " + (tmp / "out"));
    EXPECT_EQ(r.exit_code, 2) << r.output;
    EXPECT_NE(r.output.find("no images found"), std::string::npos) << r.output;
    EXPECT_FALSE(fs::exists(tmp / "out"));
}

TEST(CliTrain, EmitsProgressAndArtifacts) {
    TmpDir tmp;
    make_dataset(tmp);
    make_checkpoint(tmp);
    EXPECT_TRUE(fs::exists(tmp / "m.ckpt"));
    const std::string csv = read_file(tmp / "m.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);  // header + 2 epochs
    EXPECT_EQ(csv.rfind("epoch,train_loss,val_loss,val_miou\n", 0), 0u);
    // run again to inspect the progress lines
    const auto r = run_cli("train --images " + (tmp / "data/images") + " --masks " +
                           (tmp / "data/masks") +
                           " --variant improved --epochs 2 --size 32 --depth 2 --base 4"
                           " --groups 2 --seed 7 --out " +
                           (tmp / "m2.ckpt") + " --metrics " + (tmp / "m2.csv"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("epoch 1 train_loss "), std::string::npos) << r.output;
    EXPECT_NE(r.output.find(" val_loss "), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("epoch 2 "), std::string::npos) << r.output;
}

TEST(CliTrain, SameSeedSameOutputs) {
    TmpDir tmp;
    make_dataset(tmp);
    for (const char* run : {"r1", "r2"}) {
        const auto r = run_cli("train --images " + (tmp / "data/images") + " --masks " +
                               (tmp / "data/masks") +
                               " --variant baseline --epochs 2 --size 32 --depth 2 --base 4"
                               " --seed 7 --out " +
                               (tmp / run) + ".ckpt --metrics " + (tmp / run) + ".csv");
        ASSERT_EQ(r.exit_code, 0) << r.output;
    }
    EXPECT_EQ(read_file(tmp / "r1.csv"), read_file(tmp / "r2.csv"));
    EXPECT_EQ(read_file(tmp / "r1.ckpt"), read_file(tmp / "r2.ckpt"));
}

TEST(CliTrain, InvalidGroupsRejectedBeforeAnyWrite) {
    TmpDir tmp;
    make_dataset(tmp);
    const auto r = run_cli("train --images " + (tmp / "data/images") + " --masks " +
                           (tmp / "data/masks") + " --variant improved --groups 3 --size 32"
                           " --depth 2 --base 16 --out " +
                           (tmp / "m.ckpt") + " --metrics " + (tmp / "m.csv"));
    EXPECT_EQ(r.exit_code, 1) << r.output;
    EXPECT_NE(r.output.find("divisible"), std::string::npos) << r.output;
    EXPECT_FALSE(fs::exists(tmp / "m.ckpt"));
    EXPECT_FALSE(fs::exists(tmp / "m.csv"));
}

TEST(CliEval, PrintsLabeledMetricsDeterministically) {
    TmpDir tmp;
    make_dataset(tmp);
    make_checkpoint(tmp);
    const std::string cmd = "eval --ckpt " + (tmp / "m.ckpt") + " --images " +
                            (tmp / "data/images") + " --masks " + (tmp / "data/masks");
    const auto a = run_cli(cmd);
    ASSERT_EQ(a.exit_code, 0) << a.output;
    EXPECT_NE(a.output.find("mean_loss "), std::string::npos) << a.output;
    EXPECT_NE(a.output.find("miou "), std::string::npos) << a.output;
    EXPECT_EQ(run_cli(cmd).output, a.output);
}

TEST(CliEval, TrainingImagesScoreNearTheRecordedValidationMiou) {
    TmpDir tmp;
    make_dataset(tmp);
    make_checkpoint(tmp);
    // last CSV row holds the final recorded validation miou
    const std::string csv = read_file(tmp / "m.csv");
    const auto last_line = csv.rfind('\n', csv.size() - 2);
    double final_val_miou = -1.0;
    int epoch = 0;
    double tl = 0.0, vl = 0.0;
    ASSERT_EQ(std::sscanf(csv.c_str() + last_line + 1, "%d,%lf,%lf,%lf", &epoch, &tl, &vl,
                          &final_val_miou),
              4);
    const auto r = run_cli("eval --ckpt " + (tmp / "m.ckpt") + " --images " +
                           (tmp / "data/images") + " --masks " + (tmp / "data/masks"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const auto at = r.output.find("miou ");
    ASSERT_NE(at, std::string::npos) << r.output;
    double miou = -1.0;
    ASSERT_EQ(std::sscanf(r.output.c_str() + at, "miou %lf", &miou), 1) << r.output;
    // scoring the model on its own training images should land at worst a
    // little under the validation number, never far below it
    EXPECT_GE(miou, final_val_miou - 0.2);
}

TEST(CliEval, MissingCheckpointIsExitTwo) {
    TmpDir tmp;
    make_dataset(tmp, 5);
    const auto r = run_cli("eval --ckpt " + (tmp / "none.ckpt") + " --images " +
                           (tmp / "data/images") + " --masks " + (tmp / "data/masks"));
    EXPECT_EQ(r.exit_code, 2) << r.output;
}

TEST(CliEval, WrongImageSizeNamesTheExpectation) {
    TmpDir tmp;
    make_dataset(tmp);
    make_checkpoint(tmp);  // expects 32x32
    ASSERT_EQ(run_cli("synth --n 5 --size 16 --seed 2 --out " + (tmp / "small")).exit_code, 0);
    const auto r = run_cli("eval --ckpt " + (tmp / "m.ckpt") + " --images " +
                           (tmp / "small/images") + " --masks " + (tmp / "small/masks"));
    EXPECT_EQ(r.exit_code, 2) << r.output;
    EXPECT_NE(r.output.find("32x32"), std::string::npos) << r.output;
}

TEST(CliPredict, WritesBinaryMasksForEachInput) {
    TmpDir tmp;
    make_dataset(tmp, 8);
    make_checkpoint(tmp);
    std::string cmd = "predict --ckpt " + (tmp / "m.ckpt") + " --in";
    for (int i = 0; i < 8; ++i) {
        cmd += " " + (tmp / ("data/images/000" + std::to_string(i) + ".png"));
    }
    const auto r = run_cli(cmd + " --out " + (tmp / "preds"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    for (int i = 0; i < 8; ++i) {
        const std::string path = tmp / ("preds/000" + std::to_string(i) + "_pred.png");
        ASSERT_TRUE(fs::exists(path)) << path;
        const GrayImage mask = load_image(path);
        EXPECT_EQ(mask.width, 32);
        EXPECT_EQ(mask.height, 32);
        for (const auto px : mask.pixels) ASSERT_TRUE(px == 0 || px == 255) << int(px);
    }
}

TEST(CliPredict, KeepsGoingPastBadInputs) {
    TmpDir tmp;
    make_dataset(tmp);
    make_checkpoint(tmp);
    const auto r = run_cli("predict --ckpt " + (tmp / "m.ckpt") + " --in " + (tmp / "missing.png") +
                           " " + (tmp / "data/images/0000.png") + " --out " + (tmp / "preds"));
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("error:"), std::string::npos) << r.output;
    EXPECT_TRUE(fs::exists(tmp / "preds/0000_pred.png"));
    EXPECT_NE(r.output.find("wrote 1"), std::string::npos) << r.output;
}

TEST(CliPredict, SameInputsSameBytes) {
    TmpDir tmp;
    make_dataset(tmp);
    make_checkpoint(tmp);
    for (const char* out : {"p1", "p2"}) {
        const auto r = run_cli("predict --ckpt " + (tmp / "m.ckpt") + " --in " +
                               (tmp / "data/images/0000.png") + " --out " + (tmp / out));
        ASSERT_EQ(r.exit_code, 0) << r.output;
    }
    EXPECT_EQ(read_file(tmp / "p1/0000_pred.png"), read_file(tmp / "p2/0000_pred.png"));
}

TEST(CliGradcheck, PassesOnACorrectBuild) {
    const auto r = run_cli("gradcheck --trials 2");
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("conv2d "), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("model_improved "), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("all gradients within tolerance"), std::string::npos) << r.output;
}

TEST(CliGradcheck, CatchesACorruptedBackwardRule) {
    const auto r = run_cli("gradcheck --trials 1 --corrupt-conv");
    EXPECT_EQ(r.exit_code, 3) << r.output;
    EXPECT_NE(r.output.find("failed for: conv2d"), std::string::npos) << r.output;
}

TEST(CliGradcheck, ToleranceFlagIsRespected) {
    const auto r = run_cli("gradcheck --trials 1 --tol 10 --corrupt-conv");
    EXPECT_EQ(r.exit_code, 0) << r.output;
}

TEST(CliExitCodes, UsageProblemsAreExitOne) {
    EXPECT_EQ(run_cli("--bogus").exit_code, 1);
    EXPECT_EQ(run_cli("").exit_code, 1);
    EXPECT_EQ(run_cli("train --variant improved").exit_code, 1);  // missing required flags
    TmpDir tmp;
    make_dataset(tmp, 5);
    const auto r = run_cli("train --images " + (tmp / "data/images") + " --masks " +
                           (tmp / "data/masks") + " --variant neither --out " + (tmp / "m.ckpt") +
                           " --metrics " + (tmp / "m.csv"));
    EXPECT_EQ(r.exit_code, 1) << r.output;
}

TEST(CliExitCodes, ExplodingLossIsExitThree) {
    TmpDir tmp;
    make_dataset(tmp);
    const auto r = run_cli("train --images " + (tmp / "data/images") + " --masks " +
                           (tmp / "data/masks") +
                           " --variant baseline --epochs 2 --size 32 --depth 2 --base 4"
                           " --lr 1e10 --seed 7 --out " +
                           (tmp / "m.ckpt") + " --metrics " + (tmp / "m.csv"));
    EXPECT_EQ(r.exit_code, 3) << r.output;
    EXPECT_NE(r.output.find("non-finite"), std::string::npos) << r.output;
}
