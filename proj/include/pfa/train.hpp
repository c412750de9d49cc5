#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pfa/data.hpp"
#include "pfa/losses.hpp"
#include "pfa/params.hpp"
#include "pfa/pfa_net.hpp"

namespace pfa {

struct PhaseConfig {
    double alpha = 1.0;
    double lr = 1e-2;
    int epochs = 0;
};

/// Two-phase schedule: a rough-map phase at full saliency loss, then a
/// boundary-refinement phase with the mixed loss at a reduced rate. Epoch
/// counts are free parameters; the mean loss mode keeps rates independent of
/// image area.
struct TrainConfig {
    PhaseConfig phase1{1.0, 1e-2, 8};
    PhaseConfig phase2{0.7, 1e-3, 4};
    int batch_size = 8;
    double momentum = 0.9;
    int image_size = 64;
    std::uint64_t seed = 1;
    LossMode loss_mode = LossMode::kMean;
    double alpha_s = 0.528;
    double clamp_eps = 1e-7;
    bool augment_enabled = false;
    AugmentConfig augment;
};

struct StepRecord {
    int step = 0;  // global, monotone
    int epoch = 0;
    int phase = 0;
    double loss = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    int phase = 0;
    double mean_loss = 0.0;
    bool has_val = false;
    double val_mae = 0.0;
    double val_max_f = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;  // not serialized: everything else is seed-deterministic
};

/// Momentum SGD over a parameter registry: v <- momentum*v + g,
/// p <- p - lr*v, updating parameter values in place (the one sanctioned
/// mutation of node values, applied between recorded graphs).
class SgdOptimizer {
  public:
    SgdOptimizer(ModelParams<float>& params, double momentum);

    /// Consumes the gradients accumulated by the last backward(). A trainable
    /// parameter with no gradient is an error (the graph missed it).
    void step(double lr);

    /// Drops velocity state (used at phase boundaries).
    void reset();

  private:
    ModelParams<float>* params_;
    double momentum_;
    std::vector<Tensor<float>> velocity_;
};

/// Runs `phases` over an existing net, continuing global epoch/step counters
/// from the given offsets. Exposed so schedules can be composed and resumed;
/// aborts with the failing step named if the loss goes non-finite.
TrainLog train_phases(PfaNet<float>& net, const TrainConfig& cfg,
                      const std::vector<PhaseConfig>& phases,
                      const std::vector<Sample>& train_data, const std::vector<Sample>& val_data,
                      int first_phase_number = 1, int epoch_offset = 0, int step_offset = 0);

/// Builds a fresh net from (model_cfg, cfg.seed) and runs phase 1 then
/// phase 2. Single-threaded and bitwise reproducible for a fixed seed.
std::pair<PfaNet<float>, TrainLog> train(const PfaConfig& model_cfg, const TrainConfig& cfg,
                                         const std::vector<Sample>& train_data,
                                         const std::vector<Sample>& val_data = {});

/// Saliency maps for a list of samples, [1,H,W] each, forwarded independently
/// (optionally on several threads; output order always matches input order).
std::vector<Tensor<float>> predict_maps(const PfaNet<float>& net,
                                        const std::vector<Sample>& samples, int threads = 1);

/// step,epoch,phase,loss rows; LF endings, deterministic formatting.
void write_train_log_csv(const TrainLog& log, const std::string& path);

}  // namespace pfa
