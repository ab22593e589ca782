#pragma once

// Library implementations behind the CLI subcommands; the binary in
// tools/ is a thin flag parser over these.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hrf/config.hpp"
#include "hrf/image.hpp"

namespace hrf::cli {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Writes <out>/train and <out>/test splits plus per-split manifests.
void cmd_gen(const RunConfig& cfg);

// Trains on <dataset>/train; writes checkpoints and train_log.tsv under
// the output directory. Resumes from cfg.checkpoint when set.
void cmd_train(const RunConfig& cfg);

struct FrameSel {
    int subject = 0, pose = 0, view = 0;
};

struct RenderOutput {
    img::Image image;
    img::Image mask;  // accumulated opacity
    std::string image_path, mask_path;
};

// Renders the target frame's camera/pose from the input frame's
// observation; the novel-pose path runs whenever the poses differ.
RenderOutput cmd_render(const RunConfig& cfg, const FrameSel& input,
                        const FrameSel& target);

struct EvalRow {
    std::string id;       // "<input>-><target>"
    double psnr = 0.0;
    double ssim = 0.0;
    double coverage = 0.0;  // body fraction of the metric box
    bool novel_pose = false;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    double mean_psnr_view = 0.0, mean_ssim_view = 0.0;
    double mean_psnr_pose = 0.0, mean_ssim_pose = 0.0;
};

// Bounding-box-masked PSNR/SSIM tables over the dataset split at
// cfg.dataset_dir, written to <out>/metrics.txt.
EvalResult cmd_eval(const RunConfig& cfg);

struct SweepResult {
    std::vector<double> input_yaw_deg;        // 12 entries
    std::vector<double> mean_psnr_per_input;  // over the 11 other views
    std::map<int, double> bucket_mean_psnr;   // yaw difference -> mean
};

// Requires the 12-view ring protocol; pose 0 of every subject.
SweepResult cmd_sweep_views(const RunConfig& cfg);

}  // namespace hrf::cli
