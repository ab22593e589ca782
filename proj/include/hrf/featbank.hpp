#pragma once

// 3D-aware hierarchical feature bank: a global tri-plane path decoded
// from a compact latent code, a point-level sparse canonical volume
// diffused by submanifold convolutions, and a pixel-aligned path with a
// hard distance gate.

#include <array>
#include <span>
#include <vector>

#include "hrf/body.hpp"
#include "hrf/geometry.hpp"
#include "hrf/image.hpp"
#include "hrf/rng.hpp"
#include "hrf/tensor.hpp"

namespace hrf::feat {

using body::Vector3d;

// ---------------------------------------------------------------- encoder

struct EncoderConfig {
    int base_width = 8;     // stem channels; down blocks are 2w,4w,8w,8w
    int map_channels = 16;  // learned channels of the pixel feature map
    int latent_dim = 64;
    int posenc_rgb = 4;  // L for the RGB channels appended to the map
};

// Appended constant block: 2*L*3 posenc + 3 raw rgb + mask bits padding
// to a fixed 32 channels (L=4 gives 24+3+5).
int appended_channels(const EncoderConfig& cfg);

struct EncoderParams {
    diff::Tensor stem_w, stem_b;
    std::array<diff::Tensor, 4> down_w, down_b;
    diff::Tensor latent_w, latent_b;  // [8w, latent_dim], [latent_dim]
    diff::Tensor col_w, col_b;        // 1x1 hypercolumn head

    void init(const EncoderConfig& cfg, Rng& rng);
};

struct ImageFeatures {
    diff::Tensor latent;  // [latent_dim]
    diff::Tensor map2d;   // [map_channels + appended, H, W]
    int width = 0;
    int height = 0;
};

// Background pixels are zeroed on the encoder input (masked image); the
// appended block carries posenc(rgb), raw rgb and the mask itself.
ImageFeatures encode_image(const img::Image& image, const img::Image& mask,
                           const EncoderParams& params, const EncoderConfig& cfg);

// --------------------------------------------------------------- triplane

struct TriplaneConfig {
    int channels = 32;       // F
    int resolution = 64;     // R; must be base<<n for some n
    int base = 4;            // learned constant grid size
    int style_dim = 64;      // 512 at full scale
    int mapping_hidden = 64;
    int synth_channels = 16;
};

struct TriplaneParams {
    diff::Tensor map_w1, map_b1, map_w2, map_b2;  // latent -> style
    diff::Tensor const0;                          // [synth, base, base]
    std::vector<diff::Tensor> up_w, up_b;         // conv per level
    std::vector<diff::Tensor> style_w, style_b;   // style -> channel scales
    diff::Tensor out_w, out_b;                    // final conv to 3F

    void init(int latent_dim, const TriplaneConfig& cfg, Rng& rng);
};

struct TriPlane {
    diff::Tensor planes;  // [3, F, R, R]; order xy, xz, yz
    int resolution = 0;
    int channels = 0;
};

diff::Tensor style_vector(const diff::Tensor& latent, const TriplaneParams& p);
TriPlane build_triplane(const diff::Tensor& latent, const TriplaneParams& p,
                        const TriplaneConfig& cfg);

// Canonical meters -> [-0.9, 0.9]^3 (per-axis affine over the body box).
struct Normalizer {
    Vector3d center = Vector3d::Zero();
    Vector3d half = Vector3d::Ones();  // box half-extents / 0.9

    Vector3d to_norm(const Vector3d& x) const {
        return {(x.x() - center.x()) / half.x(), (x.y() - center.y()) / half.y(),
                (x.z() - center.z()) / half.z()};
    }
};
Normalizer make_normalizer(const std::vector<Vector3d>& canonical_verts);

// Bilinear per plane at the point's two coordinates, summed over the
// three planes. Points are normalized coords, clamped to [-1,1]^3.
diff::Tensor query_triplane(const TriPlane& tp, std::span<const Vector3d> x_norm);

// ------------------------------------------------------------ point level

struct PointVolumeConfig {
    int grid = 32;      // G voxels per axis over [-1,1]
    int feat_dim = 32;  // D; 96 at full scale
};

struct PointVolumeParams {
    // Four submanifold 3^3 conv layers [27, Cin, Cout] with bias [Cout];
    // pointwise nonlinearity between layers.
    std::vector<diff::Tensor> w, b;

    void init(int in_channels, const PointVolumeConfig& cfg, Rng& rng);
};

struct SparseVolume {
    int grid = 0;
    std::vector<int> active;  // sorted linear ids ((ix*G)+iy)*G+iz
    diff::Tensor feats;       // [A, D]
};

SparseVolume build_point_volume(const ImageFeatures& imgf,
                                const body::BodyState& obs_state,
                                const body::BodyTemplate& tmpl,
                                const geom::CameraView& obs_cam,
                                const std::vector<char>& visible,
                                const Normalizer& norm,
                                const PointVolumeParams& params,
                                const PointVolumeConfig& cfg);

// Trilinear over the 8 surrounding voxel centers; inactive voxels are zero.
diff::Tensor query_point_volume(const SparseVolume& vol,
                                std::span<const Vector3d> x_norm);

// ----------------------------------------------------------- pixel aligned

// Observation-space sampling positions for canonical points: LBS with the
// nearest canonical vertex's weights, projected into the input view.
// Points behind the camera get u=v=-1e9 (sampled as zero outside).
std::vector<std::array<double, 2>> pixel_uv_for_points(
    std::span<const Vector3d> x_c, std::span<const int> nearest_vertex,
    const body::BodyState& obs_state, const body::BodyTemplate& tmpl,
    const geom::CameraView& obs_cam);

struct PixelQuery {
    diff::Tensor feats;                 // [P, C]; zero rows when ungated miss
    std::vector<double> gate_distance;  // meters; +inf for behind-camera
    std::vector<char> gated;
};

PixelQuery query_pixel_aligned(const ImageFeatures& imgf,
                               std::span<const Vector3d> x_c,
                               const body::BodyState& obs_state,
                               const body::BodyTemplate& tmpl,
                               const geom::CameraView& obs_cam,
                               double gate_threshold);

// ------------------------------------------------------------------- bank

struct PointFeatures {
    std::vector<double> f_global, f_point, f_pixel;
    double gate_distance = 0.0;
    bool gated = false;
};

struct FeatureBank {
    ImageFeatures img;
    TriPlane tri;
    SparseVolume vol;
    body::BodyState obs_state;
    geom::CameraView obs_cam;
    Normalizer norm;
};

struct BankParams {
    EncoderConfig enc_cfg;
    TriplaneConfig tri_cfg;
    PointVolumeConfig vol_cfg;
    double gate_threshold = 0.05;
};

FeatureBank build_feature_bank(const img::Image& image, const img::Image& mask,
                               const geom::CameraView& cam,
                               const body::BodyState& obs_state,
                               const body::BodyTemplate& tmpl,
                               const EncoderParams& enc,
                               const TriplaneParams& tri,
                               const PointVolumeParams& vol,
                               const BankParams& cfg);

// Convenience single-point query (evaluation only, no grad).
PointFeatures query_point(const FeatureBank& bank, const body::BodyTemplate& tmpl,
                          const Vector3d& x_c, double gate_threshold);

}  // namespace hrf::feat
