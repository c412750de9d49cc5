// pfa: train, evaluate and probe the saliency model from the command line.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime or verification
// failure. PFA_THREADS caps per-image workers in `eval` (default 1).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pfa/checkpoint.hpp"
#include "pfa/config.hpp"
#include "pfa/data.hpp"
#include "pfa/gradcheck.hpp"
#include "pfa/losses.hpp"
#include "pfa/metrics.hpp"
#include "pfa/pfa_net.hpp"
#include "pfa/train.hpp"

namespace {

namespace fs = std::filesystem;

int env_threads() {
    const char* v = std::getenv("PFA_THREADS");
    if (!v) return 1;
    const int n = std::atoi(v);
    return n < 1 ? 1 : n;
}

std::string sibling_path(const std::string& anchor, const std::string& name) {
    fs::path p(anchor);
    return (p.has_parent_path() ? p.parent_path() / name : fs::path(name)).string();
}

std::string summary_path_for(const std::string& curve_csv) {
    fs::path p(curve_csv);
    fs::path stem = p.stem();
    stem += "_summary.csv";
    return (p.has_parent_path() ? p.parent_path() / stem : stem).string();
}

int cmd_synth(std::uint64_t seed, int count, int size, const std::string& out_dir) {
    std::vector<pfa::Sample> samples = pfa::synth_dataset(seed, count, size, size);
    pfa::save_dataset(out_dir, samples);
    std::printf("wrote %zu samples (%dx%d) to %s\n", samples.size(), size, size, out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_checkpoint,
              std::string out_log) {
    const pfa::RunConfig cfg = pfa::load_run_config(config_path);
    if (cfg.train_dir.empty()) {
        throw pfa::ConfigError("config: train_dir is required for training");
    }
    std::vector<pfa::Sample> train_data = pfa::load_dataset(cfg.train_dir);
    std::vector<pfa::Sample> val_data;
    if (!cfg.val_dir.empty()) {
        val_data = pfa::load_dataset(cfg.val_dir);
    }
    auto [net, log] = pfa::train(cfg.model, cfg.train, train_data, val_data);

    if (out_log.empty()) {
        out_log = sibling_path(out_checkpoint, "train_log.csv");
    }
    pfa::save_checkpoint(out_checkpoint, net.params());
    pfa::write_train_log_csv(log, out_log);
    for (const pfa::EpochRecord& e : log.epochs) {
        if (e.has_val) {
            std::printf("epoch %d phase %d loss %.6f val_mae %.4f val_max_f %.4f\n", e.epoch,
                        e.phase, e.mean_loss, e.val_mae, e.val_max_f);
        } else {
            std::printf("epoch %d phase %d loss %.6f\n", e.epoch, e.phase, e.mean_loss);
        }
    }
    std::printf("checkpoint: %s\nlog: %s\n", out_checkpoint.c_str(), out_log.c_str());
    return 0;
}

pfa::PfaNet<float> load_net(const std::string& config_path, const std::string& checkpoint) {
    pfa::RunConfig cfg;
    if (!config_path.empty()) {
        cfg = pfa::load_run_config(config_path);
    }
    pfa::PfaNet<float> net = pfa::PfaNet<float>::build(cfg.model, cfg.train.seed);
    pfa::load_checkpoint(checkpoint, net.params());
    return net;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path,
             const std::string& data_dir, const std::string& out_csv, std::string out_summary) {
    pfa::PfaNet<float> net = load_net(config_path, checkpoint);
    std::vector<pfa::Sample> data = pfa::load_dataset(data_dir);
    const int threads = env_threads();
    std::vector<pfa::Tensor<float>> maps = pfa::predict_maps(net, data, threads);
    std::vector<std::pair<pfa::Tensor<float>, pfa::Tensor<float>>> pairs;
    pairs.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        pairs.emplace_back(maps[i], data[i].mask);
    }
    const pfa::MetricsReport report = pfa::evaluate_dataset(pairs, threads);
    if (out_summary.empty()) {
        out_summary = summary_path_for(out_csv);
    }
    pfa::write_curve_csv(report, out_csv);
    pfa::write_summary_csv(report, out_summary);
    std::printf("images %d  max_f %.6f  adaptive_f %.6f  mae %.6f\n", report.n_images,
                report.max_f, report.adaptive_f, report.mae);
    std::printf("curves: %s\nsummary: %s\n", out_csv.c_str(), out_summary.c_str());
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& config_path,
                const std::string& image_path, const std::string& out_map,
                const std::string& out_edge) {
    pfa::PfaNet<float> net = load_net(config_path, checkpoint);
    pfa::Tensor<float> image = pfa::read_ppm(image_path);
    const int h = image.dim(1), w = image.dim(2);
    if (h % 16 != 0 || w % 16 != 0) {
        throw pfa::Error("image " + std::to_string(w) + "x" + std::to_string(h) +
                         " is not divisible by 16; pad it to the next multiple of 16 first");
    }
    pfa::Var<float> input = pfa::constant(pfa::Tensor<float>({1, 3, h, w}, image.data));
    pfa::PfaOutput<float> out = net.forward(input);
    pfa::Tensor<float> map({1, h, w}, out.map->value.data);
    pfa::Tensor<float> edge({1, h, w}, pfa::laplace_edge(out.map)->value.data);
    pfa::write_pgm(out_map, map);
    pfa::write_pgm(out_edge, edge);
    std::printf("saliency: %s\nboundary: %s\n", out_map.c_str(), out_edge.c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& op, bool end_to_end, bool list,
                  int seeds_per_op) {
    if (list) {
        for (const std::string& name : pfa::gradcheck_ops()) {
            std::printf("%s\n", name.c_str());
        }
        std::printf("end_to_end\n");
        return 0;
    }
    std::vector<pfa::GradCheckResult> results;
    if (end_to_end) {
        results.push_back(pfa::run_end_to_end_gradcheck(seed));
    } else if (!op.empty()) {
        if (op == "end_to_end") {
            results.push_back(pfa::run_end_to_end_gradcheck(seed));
        } else {
            results.push_back(pfa::run_op_gradcheck(op, seed, seeds_per_op));
        }
    } else {
        results = pfa::run_all_gradchecks(seed, seeds_per_op);
    }
    bool all_pass = true;
    std::printf("%-20s %6s %14s %11s  %s\n", "op", "seeds", "max_rel_err", "tolerance", "status");
    for (const pfa::GradCheckResult& r : results) {
        std::printf("%-20s %6d %14.3e %11.0e  %s\n", r.op.c_str(), r.seeds, r.max_rel_err,
                    r.tolerance, r.pass ? "PASS" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
        std::fprintf(stderr, "gradcheck: FAILURES above tolerance\n");
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"saliency detection workbench: pyramid features, attention gates, edge loss"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic shape dataset");
    std::uint64_t synth_seed = 1;
    int synth_count = 0;
    int synth_size = 64;
    std::string synth_out;
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--count", synth_count, "number of samples")->required();
    synth->add_option("--size", synth_size, "square image size, divisible by 16");
    synth->add_option("--out-dir", synth_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train from a config file");
    std::string train_config, train_ckpt, train_log;
    train->add_option("--config", train_config, "run configuration file")->required();
    train->add_option("--out-checkpoint", train_ckpt, "checkpoint output path")->required();
    train->add_option("--out-log", train_log,
                      "training log CSV (default: train_log.csv next to the checkpoint)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_config, eval_data, eval_csv, eval_summary;
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--config", eval_config,
                     "config the checkpoint was trained with (defaults apply if omitted)");
    eval->add_option("--data-dir", eval_data)->required();
    eval->add_option("--out-csv", eval_csv, "256-row PR/F curve CSV")->required();
    eval->add_option("--out-summary", eval_summary, "summary CSV (default: <out-csv>_summary.csv)");

    auto* predict = app.add_subcommand("predict", "saliency + boundary maps for one image");
    std::string pred_ckpt, pred_config, pred_image, pred_map, pred_edge;
    predict->add_option("--checkpoint", pred_ckpt)->required();
    predict->add_option("--config", pred_config);
    predict->add_option("--image", pred_image, "input PPM (P6), size divisible by 16")->required();
    predict->add_option("--out-map", pred_map, "saliency PGM")->required();
    predict->add_option("--out-edge", pred_edge, "boundary PGM")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::uint64_t gc_seed = 0;
    std::string gc_op;
    bool gc_e2e = false, gc_list = false;
    int gc_seeds = 10;
    gradcheck->add_option("--seed", gc_seed, "base seed");
    gradcheck->add_option("--op", gc_op, "check one operator (see --list)");
    gradcheck->add_option("--seeds", gc_seeds, "seeds per operator");
    gradcheck->add_flag("--end-to-end", gc_e2e, "full network + loss check only");
    gradcheck->add_flag("--list", gc_list, "list operator names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return cmd_synth(synth_seed, synth_count, synth_size, synth_out);
        if (*train) return cmd_train(train_config, train_ckpt, train_log);
        if (*eval) return cmd_eval(eval_ckpt, eval_config, eval_data, eval_csv, eval_summary);
        if (*predict) return cmd_predict(pred_ckpt, pred_config, pred_image, pred_map, pred_edge);
        if (*gradcheck) return cmd_gradcheck(gc_seed, gc_op, gc_e2e, gc_list, gc_seeds);
    } catch (const pfa::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
