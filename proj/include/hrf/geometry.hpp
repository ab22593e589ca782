#pragma once

// Pinhole cameras, rays, AABBs, stratified sampling and positional
// encoding. Pixel convention: (u,v) from the top-left corner, pixel
// centers at half-integer coordinates.

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <vector>

#include "hrf/rng.hpp"

namespace hrf::geom {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

struct CameraView {
    Matrix3d K = Matrix3d::Identity();  // intrinsics, pixels
    Matrix3d R = Matrix3d::Identity();  // world-to-camera rotation
    Vector3d t = Vector3d::Zero();      // world-to-camera translation, meters
    int width = 0;
    int height = 0;

    Vector3d center() const { return -R.transpose() * t; }
    Vector3d forward() const { return R.row(2).transpose(); }
    void validate() const;  // throws std::invalid_argument
};

// Camera on a ring of yaw angles around `target`, looking at it.
// yaw 0 places the camera on +z; positive yaw rotates towards +x.
CameraView make_ring_camera(double yaw_rad, double radius, double height,
                            const Vector3d& target, double focal_px, int width,
                            int height_px);

struct Ray {
    Vector3d origin = Vector3d::Zero();
    Vector3d dir = Vector3d::UnitZ();  // unit length
    double t_near = 0.0;
    double t_far = 0.0;
    Vector2d pixel = Vector2d::Zero();  // continuous pixel coords
};

struct Aabb {
    Vector3d min = Vector3d::Zero();
    Vector3d max = Vector3d::Zero();

    static Aabb of_points(const std::vector<Vector3d>& pts);
    Aabb inflated(double margin) const;
};

// (u,v) are continuous pixel coordinates; a pixel (i,j) is addressed by
// its center (i+0.5, j+0.5). Throws when the pixel is outside the image.
Ray cast_ray(const CameraView& cam, const Vector2d& pixel);

struct Projection {
    double u, v, depth;
};

// Perspective projection; throws for points at or behind the camera.
Projection project(const CameraView& cam, const Vector3d& x);

// Slab test clipped to t >= 0; nullopt on miss.
std::optional<std::pair<double, double>> intersect_aabb(const Ray& ray,
                                                        const Aabb& box);

// n samples, one per equal sub-interval of [t_near, t_far]; bin midpoints
// when jitter is off, uniform within each bin otherwise.
std::vector<double> stratified_samples(double t_near, double t_far, int n,
                                       bool jitter, Rng& rng);
std::vector<double> stratified_samples(const Ray& ray, int n, bool jitter,
                                       std::uint64_t rng_seed);

// Per input coordinate emits (sin 2^0 pi x, cos 2^0 pi x, ...,
// sin 2^{L-1} pi x, cos 2^{L-1} pi x); output length 2*L*len(x).
std::vector<double> posenc(const std::vector<double>& x, int L);
void posenc_append(double x, int L, std::vector<double>& out);

// Text record: 9 intrinsics, 12 extrinsics (R row-major then t),
// width, height — whitespace-separated.
void write_camera(std::ostream& os, const CameraView& cam);
CameraView read_camera(std::istream& is);

}  // namespace hrf::geom
