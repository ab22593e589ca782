#pragma once

// Aggregate of the five trainable components with named-parameter
// traversal for the optimizer and checkpoints.

#include <functional>
#include <string>

#include "hrf/config.hpp"
#include "hrf/featbank.hpp"
#include "hrf/fusion.hpp"
#include "hrf/nerf.hpp"

namespace hrf::model {

struct Model {
    feat::EncoderConfig enc_cfg;
    feat::TriplaneConfig tri_cfg;
    feat::PointVolumeConfig vol_cfg;
    fusion::FusionConfig fus_cfg;
    nerf::DecoderConfig dec_cfg;
    double gate_threshold = 0.05;

    feat::EncoderParams enc;
    feat::TriplaneParams tri;
    feat::PointVolumeParams vol;
    fusion::FusionParams fus;
    nerf::DecoderParams dec;

    static Model build(const RunConfig& cfg);

    void visit_params(
        const std::function<void(const std::string&, diff::Tensor&)>& fn);

    feat::BankParams bank_params() const {
        return {enc_cfg, tri_cfg, vol_cfg, gate_threshold};
    }

    feat::FeatureBank make_bank(const img::Image& image, const img::Image& mask,
                                const geom::CameraView& cam,
                                const body::BodyState& obs_state,
                                const body::BodyTemplate& tmpl) const {
        return feat::build_feature_bank(image, mask, cam, obs_state, tmpl, enc,
                                        tri, vol, bank_params());
    }
};

}  // namespace hrf::model
