#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "docbin/image.hpp"

// Exit-code and surface checks for the docbin binary.

namespace {

namespace fs = std::filesystem;

std::string cli() {
#ifdef DOCBIN_CLI_PATH
    return DOCBIN_CLI_PATH;
#else
    return "";
#endif
}

int run(const std::string& args) {
    const int status = std::system((cli() + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

} // namespace

TEST(Cli, UnknownSubcommandIsUsageError) {
    ASSERT_FALSE(cli().empty());
    EXPECT_EQ(run("frobnicate"), 1);
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, MissingFileIsDataError) {
    TempDir dir("docbin_cli_codes");
    EXPECT_EQ(run("eval /nonexistent_pred.pbm /nonexistent_gt.pbm"), 2);
    EXPECT_EQ(run("binarize --model /nonexistent.fcnb --out " + dir.str() + " /nonexistent.pgm"), 2);
}

TEST(Cli, AllBackgroundGtIsDomainError) {
    TempDir dir("docbin_cli_domain");
    docbin::BinaryMask empty(16, 16);
    docbin::BinaryMask some(16, 16);
    some.at(3, 3) = 1;
    docbin::save_image(dir.str() + "/empty.pbm", empty);
    docbin::save_image(dir.str() + "/some.pbm", some);
    EXPECT_EQ(run("eval " + dir.str() + "/some.pbm " + dir.str() + "/empty.pbm"), 3);
}

TEST(Cli, OddEvalPairsIsUsageError) {
    TempDir dir("docbin_cli_pairs");
    docbin::BinaryMask some(8, 8);
    some.at(1, 1) = 1;
    docbin::save_image(dir.str() + "/a.pbm", some);
    EXPECT_EQ(run("eval " + dir.str() + "/a.pbm"), 1);
}

TEST(Cli, SynthTrainBinarizeEvalPipeline) {
    TempDir dir("docbin_cli_pipeline");
    const std::string d = dir.str();
    ASSERT_EQ(run("synth --out " + d + "/c --count 5 --height 64 --width 64 --seed 9"), 0);
    ASSERT_EQ(run("train --data " + d + "/c --model " + d + "/m.fcnb --val-count 1 --crop 64 --stride 64"
                  " --batch 4 --depth 4 --width 4 --scales 2 --kernel 3 --max-epochs 1 --seed 2 --jobs 2"),
              0);
    ASSERT_EQ(run("binarize --model " + d + "/m.fcnb --out " + d + "/o " + d + "/c/page_0000.pgm"), 0);
    // mask has the input's shape
    docbin::BinaryMask mask = docbin::load_mask(d + "/o/page_0000.pbm");
    EXPECT_EQ(mask.height, 64);
    EXPECT_EQ(mask.width, 64);
    ASSERT_EQ(run("eval --out " + d + "/r.csv " + d + "/o/page_0000.pbm " + d + "/c/page_0000_gt.pbm"), 0);
    std::ifstream in(d + "/r.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "path,pfm,fm,psnr,drd,weight_scheme");
}

TEST(Cli, SweepWritesGridModelsAndReport) {
    TempDir dir("docbin_cli_sweep");
    const std::string d = dir.str();
    ASSERT_EQ(run("synth --out " + d + "/c --count 4 --height 64 --width 64 --seed 4"), 0);
    ASSERT_EQ(run("sweep --data " + d + "/c --out " + d + "/s --val-count 1 --crop 64 --stride 64"
                  " --batch 4 --depth 4,5 --width 4 --scales 2 --kernel 3 --max-epochs 1 --seed 5 --jobs 2"),
              0);
    EXPECT_TRUE(fs::exists(dir.path / "s/model_L4_D4_S2_K3.fcnb"));
    EXPECT_TRUE(fs::exists(dir.path / "s/model_L5_D4_S2_K3.fcnb"));
    std::ifstream in(dir.path / "s/sweep.csv");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3); // header + two grid points
}
