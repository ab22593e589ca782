#pragma once

// NeRF decoder (encoded canonical position + fused feature -> density,
// color) and quadrature volume rendering with mask accumulation.

#include <cstdint>
#include <span>
#include <vector>

#include "hrf/body.hpp"
#include "hrf/featbank.hpp"
#include "hrf/fusion.hpp"
#include "hrf/geometry.hpp"
#include "hrf/rng.hpp"
#include "hrf/tensor.hpp"

namespace hrf::nerf {

using body::Vector3d;

struct DecoderConfig {
    int posenc_xyz = 10;  // L for canonical positions
    int hidden = 128;
    int layers = 4;
    double gate_sigma = -80.0;  // raw density forced on gated samples
};

struct DecoderParams {
    std::vector<diff::Tensor> w, b;  // hidden stack
    diff::Tensor sigma_w, sigma_b;   // [hidden,1]
    diff::Tensor rgb_w, rgb_b;       // [hidden,3]

    void init(std::size_t fused_dim, const DecoderConfig& cfg, Rng& rng);
};

struct Decoded {
    diff::Tensor raw_sigma;  // [P, 1], pre-activation
    diff::Tensor rgb;        // [P, 3], sigmoid output in (0,1)
};

// x_norm are canonical coords in [-1,1]^3; f_trans is [P, fused].
Decoded decode(std::span<const Vector3d> x_norm, const diff::Tensor& f_trans,
               const DecoderParams& p, const DecoderConfig& cfg);

// The gate short-circuit: raw sigma -80, color zero, no MLP involved.
Decoded decode_gated(std::size_t n, const DecoderConfig& cfg);

struct Composited {
    diff::Tensor c_hat;    // [R, 3]
    diff::Tensor m_hat;    // [R]
    diff::Tensor trans;    // [R, N], transmittance at each sample
    diff::Tensor t_final;  // [R], transmittance after the last sample
};

// raw_sigma [R,N] (softplus applied inside), color [R,N,3], delta [R,N].
Composited composite(const diff::Tensor& raw_sigma, const diff::Tensor& color,
                     const diff::Tensor& delta);

// delta_i = t_{i+1} - t_i, last delta = t_far - t_N.
std::vector<double> sample_deltas(const std::vector<double>& ts, double t_far);

struct RenderOptions {
    int n_samples = 48;
    bool jitter = false;
    std::uint64_t seed = 0;
    double gate_threshold = 0.05;
    double aabb_margin = 0.1;
    double background = 0.0;
};

struct RenderResult {
    diff::Tensor c_hat;  // [R, 3]
    diff::Tensor m_hat;  // [R]
    std::size_t decoded_points = 0;  // samples that reached the decoder
};

// Full pipeline for a batch of rays cast in the target space: stratified
// sampling inside the posed body's inflated box, inverse LBS, bank
// queries with the hard gate, fusion, decoding and compositing. Rays
// that miss the box composite to the background with zero opacity.
RenderResult render_rays(std::span<const geom::Ray> rays,
                         const body::BodyState& target_state,
                         const body::BodyTemplate& tmpl,
                         const feat::FeatureBank& bank,
                         const fusion::FusionParams& fus,
                         const fusion::FusionConfig& fus_cfg,
                         const DecoderParams& dec, const DecoderConfig& dec_cfg,
                         const RenderOptions& opt);

// Single-ray convenience wrapper.
RenderResult render_ray(const geom::Ray& ray, const body::BodyState& target_state,
                        const body::BodyTemplate& tmpl,
                        const feat::FeatureBank& bank,
                        const fusion::FusionParams& fus,
                        const fusion::FusionConfig& fus_cfg,
                        const DecoderParams& dec, const DecoderConfig& dec_cfg,
                        const RenderOptions& opt);

}  // namespace hrf::nerf
