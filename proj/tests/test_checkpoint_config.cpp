#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pfa/checkpoint.hpp"
#include "pfa/config.hpp"
#include "pfa/pfa_net.hpp"

using namespace pfa;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

PfaConfig tiny_model() {
    PfaConfig cfg;
    cfg.backbone.stage_channels = {2, 2, 2, 2, 2};
    cfg.backbone.convs_per_stage = {1, 1, 1, 1, 1};
    cfg.cpfe.branch_channels = 4;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    PfaNet<float> net = PfaNet<float>::build(tiny_model(), 19);
    const std::string path = temp_file("pfa_ckpt_rt.pfac");
    save_checkpoint(path, net.params());

    PfaNet<float> other = PfaNet<float>::build(tiny_model(), 77);
    load_checkpoint(path, other.params());
    auto it = other.params().begin();
    for (const auto& [name, p] : net.params()) {
        CHECK(name == it->first);
        CHECK(p->value.data == it->second->value.data);  // bitwise at single precision
        ++it;
    }
    // save -> load -> save reproduces the bytes
    const std::string path2 = temp_file("pfa_ckpt_rt2.pfac");
    save_checkpoint(path2, other.params());
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("checkpoint rejects damage without touching the model") {
    PfaNet<float> net = PfaNet<float>::build(tiny_model(), 19);
    const std::string path = temp_file("pfa_ckpt_dmg.pfac");
    save_checkpoint(path, net.params());

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    auto write_variant = [&](std::string b) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(b.data(), static_cast<std::streamsize>(b.size()));
    };

    SUBCASE("bad magic") {
        std::string b = bytes;
        b[0] = 'X';
        write_variant(b);
        CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("magic"), IoError);
    }
    SUBCASE("unsupported version") {
        std::string b = bytes;
        b[4] = 9;
        write_variant(b);
        CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("version"), IoError);
    }
    SUBCASE("truncation") {
        write_variant(bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("truncated"), IoError);
    }
    SUBCASE("trailing garbage") {
        write_variant(bytes + "zzz");
        CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("trailing"), IoError);
    }
    SUBCASE("mismatched model names the tensor and leaves values intact") {
        PfaConfig bigger = tiny_model();
        bigger.cpfe.branch_channels = 8;
        PfaNet<float> other = PfaNet<float>::build(bigger, 5);
        Tensor<float> before = other.params().begin()->second->value;
        CHECK_THROWS_WITH_AS(load_checkpoint(path, other.params()),
                             doctest::Contains("cpfe.level3"), Error);
        CHECK(other.params().begin()->second->value.data == before.data);
    }
    fs::remove(path);
}

TEST_CASE("checkpoint integer encoding is little-endian") {
    ModelParams<float> params;
    params.add("t", Tensor<float>({2}, std::vector<float>{1.0f, -2.0f}));
    const std::string path = temp_file("pfa_ckpt_le.pfac");
    save_checkpoint(path, params);
    std::ifstream in(path, std::ios::binary);
    std::string b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(b.size() == 4 + 4 + 4 + (4 + 1 + 4 + 4 + 8));
    CHECK(b.substr(0, 4) == "PFAC");
    CHECK(static_cast<unsigned char>(b[4]) == 1);   // version LSB first
    CHECK(static_cast<unsigned char>(b[5]) == 0);
    CHECK(static_cast<unsigned char>(b[8]) == 1);   // tensor count
    CHECK(static_cast<unsigned char>(b[12]) == 1);  // name length
    CHECK(b[16] == 't');
    CHECK(static_cast<unsigned char>(b[17]) == 1);  // rank
    CHECK(static_cast<unsigned char>(b[21]) == 2);  // dim 0
    // 1.0f = 0x3f800000 little-endian
    CHECK(static_cast<unsigned char>(b[25]) == 0x00);
    CHECK(static_cast<unsigned char>(b[28]) == 0x3f);
    fs::remove(path);
}

TEST_CASE("run config parsing") {
    SUBCASE("defaults survive an empty config") {
        RunConfig cfg = parse_run_config_text("");
        CHECK(cfg.model.backbone.stage_channels == std::array<int, 5>{8, 16, 32, 32, 32});
        CHECK(cfg.train.phase1.lr == doctest::Approx(1e-2));
        CHECK(cfg.train.phase2.alpha == doctest::Approx(0.7));
        CHECK(cfg.alpha_s == doctest::Approx(0.528));
        CHECK(cfg.train.loss_mode == LossMode::kMean);
    }
    SUBCASE("values, comments and whitespace") {
        RunConfig cfg = parse_run_config_text(
            "# full-scale shape\n"
            "stage_channels = 64,128,256,512,512\n"
            "image_size = 256   # paper resolution\n"
            "\n"
            "phase2_epochs = 9\n"
            "loss_mode = sum\n"
            "seed = 123\n"
            "train_dir = /tmp/ds\n");
        CHECK(cfg.model.backbone.stage_channels == std::array<int, 5>{64, 128, 256, 512, 512});
        CHECK(cfg.model.backbone.input_size == std::array<int, 2>{256, 256});
        CHECK(cfg.train.image_size == 256);
        CHECK(cfg.train.phase2.epochs == 9);
        CHECK(cfg.train.loss_mode == LossMode::kSum);
        CHECK(cfg.train.seed == 123);
        CHECK(cfg.train_dir == "/tmp/ds");
    }
    SUBCASE("unknown keys are hard errors naming the line") {
        CHECK_THROWS_WITH_AS(parse_run_config_text("seed = 1\nlearning_rate = 2\n", "cfg.txt"),
                             doctest::Contains("cfg.txt:2"), ConfigError);
        CHECK_THROWS_WITH_AS(parse_run_config_text("lr = 0.1\n"), doctest::Contains("unknown key"),
                             ConfigError);
    }
    SUBCASE("malformed values name the line") {
        CHECK_THROWS_WITH_AS(parse_run_config_text("\nbatch_size = eight\n"),
                             doctest::Contains(":2"), ConfigError);
        CHECK_THROWS_AS(parse_run_config_text("stage_channels = 1,2,3\n"), ConfigError);
        CHECK_THROWS_AS(parse_run_config_text("augment = maybe\n"), ConfigError);
        CHECK_THROWS_AS(parse_run_config_text("batch_size 8\n"), ConfigError);
    }
    SUBCASE("loading a missing file is an IoError") {
        CHECK_THROWS_AS(load_run_config("/nonexistent/pfa.cfg"), IoError);
    }
}
