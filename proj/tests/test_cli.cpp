// Exercises the installed command surface through real subprocesses.
// PFA_CLI_PATH is injected by the build.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "pfa/data.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("pfa_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
    const std::string cmd = std::string(PFA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool same_tree_bytes(const fs::path& a, const fs::path& b) {
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        if (slurp(entry.path().string()) != slurp((b / rel).string())) return false;
    }
    return true;
}

void write_config(const std::string& path, const std::string& train_dir,
                  const std::string& extra = "") {
    std::ofstream out(path);
    out << "stage_channels = 2,2,2,2,2\n"
        << "convs_per_stage = 1,1,1,1,1\n"
        << "cpfe_branch_channels = 4\n"
        << "image_size = 32\n"
        << "batch_size = 4\n"
        << "phase1_epochs = 1\n"
        << "phase2_epochs = 1\n"
        << "seed = 9\n"
        << "train_dir = " << train_dir << "\n"
        << extra;
}

}  // namespace

TEST_CASE("synth: determinism, manifest, bad count") {
    TempDir dir;
    CHECK(run("synth --seed 4 --count 6 --size 32 --out-dir " + (dir / "a")) == 0);
    CHECK(run("synth --seed 4 --count 6 --size 32 --out-dir " + (dir / "b")) == 0);
    CHECK(same_tree_bytes(dir.path / "a", dir.path / "b"));

    std::ifstream manifest(dir / "a/manifest.txt");
    int ids = 0;
    std::string line;
    while (std::getline(manifest, line)) {
        if (!line.empty()) ++ids;
    }
    CHECK(ids == 6);

    CHECK(run("synth --seed 4 --count 0 --out-dir " + (dir / "zero")) == 1);
}

TEST_CASE("train/eval/predict/gradcheck workflow") {
    TempDir dir;
    REQUIRE(run("synth --seed 5 --count 8 --size 32 --out-dir " + (dir / "ds")) == 0);
    write_config(dir / "run.cfg", dir / "ds");

    SUBCASE("training emits a checkpoint and a log; reruns are byte-identical") {
        REQUIRE(run("train --config " + (dir / "run.cfg") + " --out-checkpoint " + (dir / "m.pfac") +
                    " --out-log " + (dir / "log1.csv")) == 0);
        REQUIRE(run("train --config " + (dir / "run.cfg") + " --out-checkpoint " + (dir / "m2.pfac") +
                    " --out-log " + (dir / "log2.csv")) == 0);
        CHECK(slurp(dir / "m.pfac") == slurp(dir / "m2.pfac"));
        CHECK(slurp(dir / "log1.csv") == slurp(dir / "log2.csv"));
        CHECK(slurp(dir / "log1.csv").substr(0, 21) == "step,epoch,phase,loss");

        SUBCASE("eval writes a 256-row curve and the summary") {
            REQUIRE(run("eval --checkpoint " + (dir / "m.pfac") + " --config " + (dir / "run.cfg") +
                        " --data-dir " + (dir / "ds") + " --out-csv " + (dir / "curve.csv")) == 0);
            const std::string curve = slurp(dir / "curve.csv");
            int rows = -1;  // header
            for (char c : curve) rows += c == '\n';
            CHECK(rows == 256);
            const std::string summary = slurp(dir / "curve_summary.csv");
            CHECK(summary.substr(0, 12) == "metric,value");
            CHECK(summary.find("max_f,") != std::string::npos);
            CHECK(summary.find("mae,") != std::string::npos);
        }
        SUBCASE("predict writes saliency and boundary maps at input size") {
            const std::string img = dir / "ds/images/sample_0.ppm";
            REQUIRE(run("predict --checkpoint " + (dir / "m.pfac") + " --config " + (dir / "run.cfg") +
                        " --image " + img + " --out-map " + (dir / "map.pgm") + " --out-edge " +
                        (dir / "edge.pgm")) == 0);
            pfa::Tensor<float> map = pfa::read_pgm(dir / "map.pgm");
            CHECK(map.shape == pfa::Shape{1, 32, 32});
            pfa::Tensor<float> edge = pfa::read_pgm(dir / "edge.pgm");
            CHECK(edge.shape == pfa::Shape{1, 32, 32});
        }
        SUBCASE("checkpoint/config mismatch fails with a runtime error code") {
            write_config(dir / "other.cfg", dir / "ds", "cpfe_branch_channels = 8\n");
            CHECK(run("eval --checkpoint " + (dir / "m.pfac") + " --config " + (dir / "other.cfg") +
                      " --data-dir " + (dir / "ds") + " --out-csv " + (dir / "x.csv")) == 2);
        }
    }

    SUBCASE("missing dataset: clean config error, no partial checkpoint") {
        write_config(dir / "missing.cfg", dir / "nothere");
        CHECK(run("train --config " + (dir / "missing.cfg") + " --out-checkpoint " +
                  (dir / "never.pfac")) == 2);
        CHECK_FALSE(fs::exists(dir / "never.pfac"));
    }
    SUBCASE("config typo exits with usage/config code and names the line") {
        std::ofstream(dir / "typo.cfg") << "sede = 1\n";
        CHECK(run("train --config " + (dir / "typo.cfg") + " --out-checkpoint " +
                  (dir / "x.pfac")) == 1);
    }
    SUBCASE("gradcheck subcommand") {
        CHECK(run("gradcheck --op sigmoid --seeds 2") == 0);
        CHECK(run("gradcheck --op not_an_op") == 1);
        CHECK(run("gradcheck --list") == 0);
    }
    SUBCASE("usage errors return 1") {
        CHECK(run("") == 1);
        CHECK(run("synth --count 3") == 1);        // missing --out-dir
        CHECK(run("bogus-subcommand") == 1);
    }
}
