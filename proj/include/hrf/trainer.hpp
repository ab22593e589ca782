#pragma once

// End-to-end optimization: pair sampling, ray batching, Adam with the
// exponential epoch schedule, checkpointing.

#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

#include "hrf/dataset.hpp"
#include "hrf/losses.hpp"
#include "hrf/model.hpp"

namespace hrf::train {

struct Schedule {
    double initial_lr = 2e-3;
    double decay = 0.5;
    int max_epochs = 5;

    double lr(int epoch) const { return initial_lr * std::pow(decay, epoch); }
};

class Adam {
  public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    explicit Adam(model::Model& model);

    void step(double lr);  // applies grads, then advances the step count
    void zero_grads();
    long step_count() const { return t_; }

    struct Entry {
        std::string name;
        diff::Tensor param;
        std::vector<double> m, v;
    };
    std::vector<Entry>& entries() { return entries_; }
    void set_step_count(long t) { t_ = t; }

  private:
    std::vector<Entry> entries_;
    long t_ = 0;
};

// Standalone single-parameter update; the unit the optimizer is built on.
void adam_step(std::span<double> param, std::span<const double> grad,
               std::span<double> m, std::span<double> v, long t, double lr,
               double beta1 = Adam::kBeta1, double beta2 = Adam::kBeta2,
               double eps = Adam::kEps);

struct FramePair {
    data::Frame input;
    data::Frame target;
    int subject = 0;
};

// Uniform subject, then uniform (input, target) frames from that subject;
// the two frames may coincide.
FramePair sample_pair(const data::Dataset& ds, Rng& rng);

struct StepOutcome {
    diff::Tensor total;  // scalar, graph attached unless NoGrad
    loss::LossReport report;
    std::size_t decoded_points = 0;
};

// One full forward pass of the training objective for a sampled pair.
// Deterministic given step_seed; shared by train() and its tests.
StepOutcome evaluate_pair(model::Model& m, const data::Dataset& ds,
                          const FramePair& pair, const RunConfig& cfg,
                          const loss::PerceptualNet& perc,
                          std::uint64_t step_seed);

// Checkpoint: "HRCK" header (version, model hash, epoch, step), named
// parameter blocks in the tensor serialization, optional Adam moments.
void save_checkpoint(const std::string& path, model::Model& m,
                     std::uint64_t hash, int epoch, long step,
                     Adam* opt = nullptr);

struct CheckpointInfo {
    std::uint64_t model_hash = 0;
    int epoch = 0;
    long step = 0;
    bool has_optimizer = false;
};
CheckpointInfo load_checkpoint(const std::string& path, model::Model& m,
                               std::uint64_t expected_hash, Adam* opt = nullptr);

struct TrainResult {
    std::string final_checkpoint;
    std::string init_checkpoint;
    std::vector<double> epoch_mean_loss;
    long steps = 0;
};

// Per-step log columns: step, L_color, L_mask, L_ssim, L_perc, total, lr
// (tab-separated). Aborts with the offending term on a non-finite loss.
TrainResult train(model::Model& m, const data::Dataset& ds, const RunConfig& cfg,
                  std::ostream& log, const std::string& out_dir,
                  const std::string& resume_from = "");

}  // namespace hrf::train
