#pragma once

// Flat key-value run configuration. Files hold one "key value" pair per
// line, '#' starts a comment, unknown keys are rejected.

#include <cstdint>
#include <iosfwd>
#include <string>

namespace hrf {

struct RunConfig {
    // paths
    std::string dataset_dir = "data";
    std::string out_dir = "out";
    std::string checkpoint;
    std::uint64_t seed = 1;

    // dataset generation
    int gen_train_subjects = 4;
    int gen_test_subjects = 2;
    int gen_poses = 4;
    int gen_views = 8;
    int resolution = 64;
    double cam_radius = 2.0;
    double focal_factor = 1.4;

    // rendering
    int n_samples = 48;
    bool jitter = false;
    double aabb_margin = 0.1;
    double background = 0.0;

    // model
    int latent_dim = 64;
    int encoder_width = 8;
    int map_channels = 16;
    int posenc_rgb = 4;
    int plane_channels = 32;
    int plane_res = 64;
    int plane_base = 4;
    int style_dim = 64;
    int synth_channels = 16;
    int mapping_hidden = 64;
    int voxel_grid = 32;
    int point_feat_dim = 32;
    int token_channels = 32;
    int heads = 4;
    std::string fusion_reduction = "concat";  // or "mean"
    int decoder_hidden = 128;
    int decoder_layers = 4;
    int posenc_xyz = 10;
    double gate_threshold = 0.05;
    double gate_sigma = -80.0;

    // losses
    double lambda_mask = 0.1;
    double lambda_ssim = 0.01;
    double lambda_perc = 0.01;
    std::uint64_t perc_seed = 7;
    int ssim_patch = 12;

    // training
    double lr = 2e-3;
    double lr_decay = 0.5;
    int epochs = 5;
    int rays_per_step = 512;
    double mask_bias = 0.8;

    void validate() const;  // throws std::invalid_argument
};

// Throws std::invalid_argument naming any unknown or malformed key.
void apply_config_stream(RunConfig& cfg, std::istream& is);
void apply_config_file(RunConfig& cfg, const std::string& path);

// FNV-1a over the canonical text of the architecture-relevant keys;
// embedded in logs and checkpoints.
std::uint64_t model_hash(const RunConfig& cfg);
std::string model_hash_hex(const RunConfig& cfg);

}  // namespace hrf
