#include "pfa/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

#include "pfa/metrics.hpp"

namespace pfa {

SgdOptimizer::SgdOptimizer(ModelParams<float>& params, double momentum)
    : params_(&params), momentum_(momentum) {
    velocity_.reserve(params.size());
    for (const auto& [name, var] : params) {
        velocity_.emplace_back(var->value.shape);
    }
}

void SgdOptimizer::step(double lr) {
    const float m = static_cast<float>(momentum_);
    const float rate = static_cast<float>(lr);
    std::size_t i = 0;
    for (auto& [name, var] : *params_) {
        if (var->grad.numel() == 0) {
            throw Error("sgd_step: missing gradient for trainable parameter '" + name + "'");
        }
        Tensor<float>& v = velocity_[i++];
        for (std::size_t j = 0; j < v.data.size(); ++j) {
            v.data[j] = m * v.data[j] + var->grad.data[j];
            var->value.data[j] -= rate * v.data[j];
        }
    }
}

void SgdOptimizer::reset() {
    for (auto& v : velocity_) {
        std::fill(v.data.begin(), v.data.end(), 0.0f);
    }
}

namespace {

void validate_dataset(const std::vector<Sample>& data, const char* what) {
    if (data.empty()) {
        throw Error(std::string(what) + ": empty dataset");
    }
    const int h = data[0].image.dim(1), w = data[0].image.dim(2);
    if (h % 16 != 0 || w % 16 != 0) {
        throw Error(std::string(what) + ": sample size " + std::to_string(h) + "x" +
                    std::to_string(w) + " must be divisible by 16");
    }
    for (const Sample& s : data) {
        if (s.image.dim(1) != h || s.image.dim(2) != w) {
            throw Error(std::string(what) + ": samples disagree on size ('" + s.id + "')");
        }
    }
}

// [B,3,H,W] / [B,1,H,W] stack of the chosen samples
std::pair<Tensor<float>, Tensor<float>> make_batch(const std::vector<Sample>& data,
                                                   const std::vector<int>& order, std::size_t lo,
                                                   std::size_t hi) {
    const int b = static_cast<int>(hi - lo);
    const int h = data[0].image.dim(1), w = data[0].image.dim(2);
    Tensor<float> images({b, 3, h, w});
    Tensor<float> masks({b, 1, h, w});
    const std::size_t img_len = data[0].image.numel();
    const std::size_t mask_len = data[0].mask.numel();
    for (std::size_t k = lo; k < hi; ++k) {
        const Sample& s = data[static_cast<std::size_t>(order[k])];
        std::copy(s.image.data.begin(), s.image.data.end(),
                  images.data.begin() + static_cast<std::ptrdiff_t>((k - lo) * img_len));
        std::copy(s.mask.data.begin(), s.mask.data.end(),
                  masks.data.begin() + static_cast<std::ptrdiff_t>((k - lo) * mask_len));
    }
    return {std::move(images), std::move(masks)};
}

}  // namespace

std::vector<Tensor<float>> predict_maps(const PfaNet<float>& net,
                                        const std::vector<Sample>& samples, int threads) {
    std::vector<Tensor<float>> maps(samples.size());
    auto run_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const Sample& s = samples[i];
            Tensor<float> image({1, 3, s.image.dim(1), s.image.dim(2)}, s.image.data);
            PfaOutput<float> out = net.forward(constant(std::move(image)));
            maps[i] = Tensor<float>({1, s.image.dim(1), s.image.dim(2)}, out.map->value.data);
        }
    };
    const int workers = std::max(1, threads);
    if (workers == 1 || samples.size() <= 1) {
        run_range(0, samples.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (samples.size() + workers - 1) / static_cast<std::size_t>(workers);
        for (int t = 0; t < workers; ++t) {
            const std::size_t lo = static_cast<std::size_t>(t) * chunk;
            const std::size_t hi = std::min(samples.size(), lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    return maps;
}

TrainLog train_phases(PfaNet<float>& net, const TrainConfig& cfg,
                      const std::vector<PhaseConfig>& phases,
                      const std::vector<Sample>& train_data, const std::vector<Sample>& val_data,
                      int first_phase_number, int epoch_offset, int step_offset) {
    validate_dataset(train_data, "train");
    if (!val_data.empty()) {
        validate_dataset(val_data, "validation");
    }
    if (cfg.batch_size < 1) {
        throw ConfigError("train: batch size must be >= 1");
    }
    const auto t0 = std::chrono::steady_clock::now();

    TrainLog log;
    SgdOptimizer opt(net.params(), cfg.momentum);
    const std::size_t n = train_data.size();
    int step = step_offset;
    int epoch = epoch_offset;

    for (std::size_t phase_idx = 0; phase_idx < phases.size(); ++phase_idx) {
        const PhaseConfig& phase = phases[phase_idx];
        const int phase_no = first_phase_number + static_cast<int>(phase_idx);
        LossConfig loss_cfg;
        loss_cfg.alpha = phase.alpha;
        loss_cfg.alpha_s = cfg.alpha_s;
        loss_cfg.clamp_eps = cfg.clamp_eps;
        opt.reset();  // fresh momentum at each phase boundary

        for (int e = 0; e < phase.epochs; ++e, ++epoch) {
            // seeded permutation; substream keyed by the global epoch index
            std::vector<int> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
            Rng shuffle_rng(Rng::mix(cfg.seed, 0x5u ^ (static_cast<std::uint64_t>(epoch) << 8)));
            for (std::size_t i = n; i > 1; --i) {
                std::swap(order[i - 1],
                          order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
            }

            std::vector<Sample> augmented;
            const std::vector<Sample>* source = &train_data;
            if (cfg.augment_enabled) {
                augmented.reserve(n);
                for (std::size_t i = 0; i < n; ++i) {
                    augmented.push_back(augment(
                        train_data[i], cfg.augment,
                        static_cast<std::uint64_t>(epoch) * n + i));
                }
                source = &augmented;
            }

            double epoch_loss = 0.0;
            int epoch_steps = 0;
            for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
                auto [images, masks] = make_batch(*source, order, lo, hi);
                net.params().zero_grad();
                PfaOutput<float> out = net.forward(constant(std::move(images)));
                Var<float> loss =
                    total_loss(out.map, constant(std::move(masks)), loss_cfg, cfg.loss_mode);
                const double loss_value = static_cast<double>(loss->value.data[0]);
                if (!std::isfinite(loss_value)) {
                    throw Error("training diverged: non-finite loss at step " +
                                std::to_string(step));
                }
                backward(loss);
                opt.step(phase.lr);
                log.steps.push_back({step, epoch, phase_no, loss_value});
                epoch_loss += loss_value;
                ++epoch_steps;
                ++step;
            }

            EpochRecord rec;
            rec.epoch = epoch;
            rec.phase = phase_no;
            rec.mean_loss = epoch_loss / std::max(1, epoch_steps);
            if (!val_data.empty()) {
                std::vector<Tensor<float>> maps = predict_maps(net, val_data);
                std::vector<std::pair<Tensor<float>, Tensor<float>>> pairs;
                pairs.reserve(val_data.size());
                for (std::size_t i = 0; i < val_data.size(); ++i) {
                    pairs.emplace_back(maps[i], val_data[i].mask);
                }
                const MetricsReport report = evaluate_dataset(pairs);
                rec.has_val = true;
                rec.val_mae = report.mae;
                rec.val_max_f = report.max_f;
            }
            log.epochs.push_back(rec);
        }
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return log;
}

std::pair<PfaNet<float>, TrainLog> train(const PfaConfig& model_cfg, const TrainConfig& cfg,
                                         const std::vector<Sample>& train_data,
                                         const std::vector<Sample>& val_data) {
    PfaNet<float> net = PfaNet<float>::build(model_cfg, cfg.seed);
    TrainLog log = train_phases(net, cfg, {cfg.phase1, cfg.phase2}, train_data, val_data);
    return {std::move(net), std::move(log)};
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) {
        throw IoError("cannot open " + path + " for writing");
    }
    std::fprintf(f, "step,epoch,phase,loss\n");
    for (const StepRecord& r : log.steps) {
        std::fprintf(f, "%d,%d,%d,%.9g\n", r.step, r.epoch, r.phase, r.loss);
    }
    std::fclose(f);
}

}  // namespace pfa
