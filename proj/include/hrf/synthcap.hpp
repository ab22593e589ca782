#pragma once

// Synthetic dataset generator: analytic Lambertian renderer of the
// procedural capsule body, producing image/mask/camera/pose tuples.

#include <string>
#include <vector>

#include "hrf/body.hpp"
#include "hrf/geometry.hpp"
#include "hrf/image.hpp"

namespace hrf::synth {

using body::Vector3d;

struct Subject {
    std::vector<std::array<double, 3>> albedo;  // per capsule, in [0,1]^3
    std::vector<double> beta;
    std::string id;
};

struct RenderOut {
    img::Image image;
    img::Image mask;
};

struct LightRig {
    Vector3d dir = Vector3d(-0.3, -0.8, -0.5).normalized();  // travel direction
    double ambient = 0.25;
    double diffuse = 0.75;
};

// Per pixel: analytic ray-capsule intersection against the posed
// capsules; nearest hit shaded by the Lambert term; mask = hit indicator.
RenderOut render_analytic(const body::BodyTemplate& tmpl, const Subject& subject,
                          const std::vector<Vector3d>& theta,
                          const geom::CameraView& cam,
                          const LightRig& light = LightRig{});

// Closest positive hit over a capsule set; used by tests as an oracle too.
struct CapsuleHit {
    double t;
    int capsule;
    Vector3d normal;
};
bool intersect_capsules(const std::vector<body::CapsuleSpec>& caps,
                        const geom::Ray& ray, CapsuleHit& hit);

struct DatasetSpec {
    std::string out_dir;
    int n_subjects = 4;
    int n_poses = 4;
    int n_views = 8;
    int resolution = 64;
    std::uint64_t seed = 1;
    std::uint64_t subject_seed_offset = 0;  // distinct train/test identities
    double cam_radius = 2.0;
    double focal_factor = 1.4;  // focal = factor * resolution
    Vector3d ring_target = Vector3d(0.0, 0.15, 0.0);
};

Subject draw_subject(const body::BodyTemplate& tmpl, std::uint64_t seed,
                     const std::string& id);
std::vector<Vector3d> draw_pose(std::size_t n_joints, std::uint64_t seed,
                                bool rest);

// Deterministic per seed. Layout: meta.txt, body.txt, manifest.txt and
// one directory per subject holding frame_p###_v###{.png,_mask.png,.txt}.
void generate_dataset(const body::BodyTemplate& tmpl, const DatasetSpec& spec);

}  // namespace hrf::synth
