#pragma once

// A small end-to-end scene shared by the pipeline-level tests: the
// capsule body under a desk-scale model shrunk for speed.

#include "hrf/model.hpp"
#include "hrf/synthcap.hpp"

namespace testutil {

inline hrf::RunConfig small_run_config() {
    hrf::RunConfig rc;
    rc.resolution = 32;
    rc.encoder_width = 4;
    rc.map_channels = 6;
    rc.latent_dim = 8;
    rc.plane_channels = 6;
    rc.plane_res = 16;
    rc.style_dim = 8;
    rc.mapping_hidden = 8;
    rc.synth_channels = 4;
    rc.voxel_grid = 16;
    rc.point_feat_dim = 6;
    rc.token_channels = 8;
    rc.heads = 2;
    rc.decoder_hidden = 16;
    rc.decoder_layers = 2;
    rc.posenc_xyz = 4;
    rc.n_samples = 16;
    rc.rays_per_step = 160;
    rc.ssim_patch = 12;
    return rc;
}

struct SmallScene {
    hrf::body::BodyTemplate tmpl;
    hrf::body::BodyState state;
    hrf::geom::CameraView cam;
    hrf::img::Image image, mask;
    hrf::RunConfig rc;
    hrf::model::Model model;
    hrf::feat::FeatureBank bank;

    explicit SmallScene(std::uint64_t seed = 1, double yaw = 0.4)
        : tmpl(hrf::body::make_capsule_body()),
          rc(small_run_config()),
          model(hrf::model::Model::build([&] {
              hrf::RunConfig c = small_run_config();
              c.seed = seed;
              return c;
          }())) {
        rc.seed = seed;
        state = hrf::body::pose_body(
            tmpl,
            std::vector<hrf::body::Vector3d>(tmpl.n_joints(),
                                             hrf::body::Vector3d::Zero()),
            {});
        cam = hrf::geom::make_ring_camera(
            yaw, rc.cam_radius, 0.0, hrf::body::Vector3d(0, 0.15, 0),
            rc.focal_factor * rc.resolution, rc.resolution, rc.resolution);
        auto subj = hrf::synth::draw_subject(tmpl, seed + 5, "test");
        subj.beta = {0.0, 0.0};
        const auto r = hrf::synth::render_analytic(tmpl, subj, state.theta, cam);
        image = r.image;
        mask = r.mask;
        bank = model.make_bank(image, mask, cam, state, tmpl);
    }
};

}  // namespace testutil
