#include "pfa/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pfa {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

struct Parser {
    std::string origin;
    int line = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
    }

    double num(const std::string& v) const {
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) fail("trailing characters in number '" + v + "'");
            return d;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            fail("cannot parse number '" + v + "'");
        }
    }

    int integer(const std::string& v) const {
        const double d = num(v);
        const int i = static_cast<int>(d);
        if (static_cast<double>(i) != d) fail("expected an integer, got '" + v + "'");
        return i;
    }

    std::uint64_t u64(const std::string& v) const {
        const double d = num(v);
        if (d < 0) fail("expected a non-negative integer, got '" + v + "'");
        return static_cast<std::uint64_t>(d);
    }

    bool boolean(const std::string& v) const {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail("expected true/false, got '" + v + "'");
    }

    template <std::size_t N>
    std::array<int, N> int_list(const std::string& v) const {
        std::array<int, N> out{};
        std::stringstream ss(v);
        std::string item;
        std::size_t i = 0;
        while (std::getline(ss, item, ',')) {
            if (i >= N) fail("expected " + std::to_string(N) + " comma-separated values");
            out[i++] = integer(trim(item));
        }
        if (i != N) fail("expected " + std::to_string(N) + " comma-separated values");
        return out;
    }
};

}  // namespace

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    Parser p;
    p.origin = origin;

    using Handler = std::function<void(const std::string&)>;
    const std::map<std::string, Handler> handlers = {
        {"stage_channels", [&](const std::string& v) { cfg.model.backbone.stage_channels = p.int_list<5>(v); }},
        {"convs_per_stage", [&](const std::string& v) { cfg.model.backbone.convs_per_stage = p.int_list<5>(v); }},
        {"image_size",
         [&](const std::string& v) {
             const int s = p.integer(v);
             cfg.model.backbone.input_size = {s, s};
             cfg.train.image_size = s;
         }},
        {"cpfe_dilations", [&](const std::string& v) { cfg.model.cpfe.dilations = p.int_list<3>(v); }},
        {"cpfe_branch_channels",
         [&](const std::string& v) { cfg.model.cpfe.branch_channels = p.integer(v); }},
        {"ca_reduction", [&](const std::string& v) { cfg.model.ca_reduction = p.integer(v); }},
        {"sa_kernel", [&](const std::string& v) { cfg.model.sa_kernel = p.integer(v); }},
        {"alpha_s",
         [&](const std::string& v) {
             cfg.alpha_s = p.num(v);
             cfg.train.alpha_s = cfg.alpha_s;
         }},
        {"clamp_eps",
         [&](const std::string& v) {
             cfg.clamp_eps = p.num(v);
             cfg.train.clamp_eps = cfg.clamp_eps;
         }},
        {"loss_mode",
         [&](const std::string& v) {
             if (v == "mean") {
                 cfg.train.loss_mode = LossMode::kMean;
             } else if (v == "sum") {
                 cfg.train.loss_mode = LossMode::kSum;
             } else {
                 p.fail("loss_mode must be 'mean' or 'sum', got '" + v + "'");
             }
         }},
        {"phase1_alpha", [&](const std::string& v) { cfg.train.phase1.alpha = p.num(v); }},
        {"phase1_lr", [&](const std::string& v) { cfg.train.phase1.lr = p.num(v); }},
        {"phase1_epochs", [&](const std::string& v) { cfg.train.phase1.epochs = p.integer(v); }},
        {"phase2_alpha", [&](const std::string& v) { cfg.train.phase2.alpha = p.num(v); }},
        {"phase2_lr", [&](const std::string& v) { cfg.train.phase2.lr = p.num(v); }},
        {"phase2_epochs", [&](const std::string& v) { cfg.train.phase2.epochs = p.integer(v); }},
        {"batch_size", [&](const std::string& v) { cfg.train.batch_size = p.integer(v); }},
        {"momentum", [&](const std::string& v) { cfg.train.momentum = p.num(v); }},
        {"seed", [&](const std::string& v) { cfg.train.seed = p.u64(v); }},
        {"augment", [&](const std::string& v) { cfg.train.augment_enabled = p.boolean(v); }},
        {"rotate_max_deg", [&](const std::string& v) { cfg.train.augment.rotate_max_deg = p.num(v); }},
        {"crop_fraction", [&](const std::string& v) { cfg.train.augment.crop_fraction = p.num(v); }},
        {"brightness_jitter", [&](const std::string& v) { cfg.train.augment.brightness = p.num(v); }},
        {"saturation_jitter", [&](const std::string& v) { cfg.train.augment.saturation = p.num(v); }},
        {"contrast_jitter", [&](const std::string& v) { cfg.train.augment.contrast = p.num(v); }},
        {"hflip_prob", [&](const std::string& v) { cfg.train.augment.hflip_prob = p.num(v); }},
        {"augment_seed", [&](const std::string& v) { cfg.train.augment.seed = p.u64(v); }},
        {"train_dir", [&](const std::string& v) { cfg.train_dir = v; }},
        {"val_dir", [&](const std::string& v) { cfg.val_dir = v; }},
    };

    std::stringstream ss(text);
    std::string raw;
    while (std::getline(ss, raw)) {
        ++p.line;
        const std::size_t hash = raw.find('#');
        std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            p.fail("expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = handlers.find(key);
        if (it == handlers.end()) {
            p.fail("unknown key '" + key + "'");
        }
        it->second(value);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open config " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str(), path);
}

}  // namespace pfa
