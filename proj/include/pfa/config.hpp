#pragma once

#include <string>

#include "pfa/data.hpp"
#include "pfa/losses.hpp"
#include "pfa/pfa_net.hpp"
#include "pfa/train.hpp"

namespace pfa {

/// Flat key = value run configuration ('#' starts a comment, blank lines
/// ignored). Every key has a default; unknown keys are hard errors naming
/// the line, so typos cannot silently fall back to defaults.
///
/// Keys:
///   stage_channels      = 8,16,32,32,32   backbone widths (5 ints)
///   convs_per_stage     = 2,2,3,3,3       convs per backbone stage (5 ints)
///   image_size          = 64              training resolution (divisible by 16)
///   cpfe_dilations      = 3,5,7           pyramid branch dilation rates
///   cpfe_branch_channels= 32              width of each pyramid branch
///   ca_reduction        = 4               channel-attention bottleneck divisor
///   sa_kernel           = 9               spatial-attention kernel length (odd)
///   alpha_s             = 0.528           positive/negative balance in the saliency loss
///   clamp_eps           = 1e-7            log clamp for both losses
///   loss_mode           = mean            mean | sum
///   phase1_alpha        = 1.0             loss mix, first phase
///   phase1_lr           = 0.01
///   phase1_epochs       = 8
///   phase2_alpha        = 0.7             loss mix, second phase
///   phase2_lr           = 0.001
///   phase2_epochs       = 4
///   batch_size          = 8
///   momentum            = 0.9
///   seed                = 1
///   augment             = false           enable training-time augmentation
///   rotate_max_deg      = 15
///   crop_fraction       = 0.9
///   brightness_jitter   = 0.2
///   saturation_jitter   = 0.2
///   contrast_jitter     = 0.2
///   hflip_prob          = 0.5
///   augment_seed        = 0
///   train_dir           =                 dataset directory (images/, masks/, manifest.txt)
///   val_dir             =                 optional held-out dataset directory
struct RunConfig {
    PfaConfig model;
    TrainConfig train;
    double alpha_s = 0.528;
    double clamp_eps = 1e-7;
    std::string train_dir;
    std::string val_dir;

    LossConfig loss_config(double alpha) const {
        LossConfig cfg;
        cfg.alpha_s = alpha_s;
        cfg.alpha = alpha;
        cfg.clamp_eps = clamp_eps;
        return cfg;
    }
};

RunConfig parse_run_config_text(const std::string& text, const std::string& origin = "<string>");
RunConfig load_run_config(const std::string& path);

}  // namespace pfa
