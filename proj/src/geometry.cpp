#include "hrf/geometry.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace hrf::geom {

void CameraView::validate() const {
    if ((R.transpose() * R - Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("CameraView: R is not orthonormal");
    if (R.determinant() < 0.0)
        throw std::invalid_argument("CameraView: R is not a rotation");
    if (K(0, 0) <= 0.0 || K(1, 1) <= 0.0)
        throw std::invalid_argument("CameraView: focal lengths must be positive");
    if (K(0, 2) < 0.0 || K(0, 2) > width || K(1, 2) < 0.0 || K(1, 2) > height)
        throw std::invalid_argument("CameraView: principal point outside image");
}

CameraView make_ring_camera(double yaw_rad, double radius, double height,
                            const Vector3d& target, double focal_px, int width,
                            int height_px) {
    CameraView cam;
    cam.width = width;
    cam.height = height_px;
    cam.K << focal_px, 0, width / 2.0, 0, focal_px, height_px / 2.0, 0, 0, 1;

    const Vector3d pos = target + Vector3d(radius * std::sin(yaw_rad), height,
                                           radius * std::cos(yaw_rad));
    // Look-at basis: +z towards the target, +y down (image convention).
    Vector3d fwd = (target - pos).normalized();
    Vector3d right = fwd.cross(Vector3d(0, 1, 0)).normalized();
    Vector3d down = fwd.cross(right);
    cam.R.row(0) = right.transpose();
    cam.R.row(1) = down.transpose();
    cam.R.row(2) = fwd.transpose();
    cam.t = -cam.R * pos;
    return cam;
}

Aabb Aabb::of_points(const std::vector<Vector3d>& pts) {
    Aabb box;
    box.min = Vector3d::Constant(std::numeric_limits<double>::max());
    box.max = Vector3d::Constant(std::numeric_limits<double>::lowest());
    for (const auto& p : pts) {
        box.min = box.min.cwiseMin(p);
        box.max = box.max.cwiseMax(p);
    }
    return box;
}

Aabb Aabb::inflated(double margin) const {
    Aabb box;
    box.min = min - Vector3d::Constant(margin);
    box.max = max + Vector3d::Constant(margin);
    return box;
}

Ray cast_ray(const CameraView& cam, const Vector2d& pixel) {
    if (pixel.x() < 0.0 || pixel.x() > cam.width || pixel.y() < 0.0 ||
        pixel.y() > cam.height)
        throw std::invalid_argument("cast_ray: pixel outside image bounds");
    const Vector3d dir_cam((pixel.x() - cam.K(0, 2)) / cam.K(0, 0),
                           (pixel.y() - cam.K(1, 2)) / cam.K(1, 1), 1.0);
    Ray ray;
    ray.origin = cam.center();
    ray.dir = (cam.R.transpose() * dir_cam).normalized();
    ray.pixel = pixel;
    return ray;
}

Projection project(const CameraView& cam, const Vector3d& x) {
    const Vector3d xc = cam.R * x + cam.t;
    if (xc.z() <= 0.0)
        throw std::invalid_argument("project: point at or behind the camera");
    return {cam.K(0, 0) * xc.x() / xc.z() + cam.K(0, 2),
            cam.K(1, 1) * xc.y() / xc.z() + cam.K(1, 2), xc.z()};
}

std::optional<std::pair<double, double>> intersect_aabb(const Ray& ray,
                                                        const Aabb& box) {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::max();
    for (int a = 0; a < 3; ++a) {
        const double o = ray.origin[a], d = ray.dir[a];
        if (std::abs(d) < 1e-15) {
            if (o < box.min[a] || o > box.max[a]) return std::nullopt;
            continue;
        }
        double ta = (box.min[a] - o) / d;
        double tb = (box.max[a] - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    return std::make_pair(t0, t1);
}

std::vector<double> stratified_samples(double t_near, double t_far, int n,
                                       bool jitter, Rng& rng) {
    if (n < 1) throw std::invalid_argument("stratified_samples: n must be >= 1");
    if (!(t_near < t_far))
        throw std::invalid_argument("stratified_samples: need t_near < t_far");
    std::vector<double> ts(n);
    const double step = (t_far - t_near) / n;
    for (int i = 0; i < n; ++i) {
        const double u = jitter ? rng.uniform() : 0.5;
        ts[i] = t_near + (i + u) * step;
    }
    return ts;
}

std::vector<double> stratified_samples(const Ray& ray, int n, bool jitter,
                                       std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    return stratified_samples(ray.t_near, ray.t_far, n, jitter, rng);
}

void posenc_append(double x, int L, std::vector<double>& out) {
    double freq = M_PI;
    for (int l = 0; l < L; ++l) {
        out.push_back(std::sin(freq * x));
        out.push_back(std::cos(freq * x));
        freq *= 2.0;
    }
}

std::vector<double> posenc(const std::vector<double>& x, int L) {
    if (L < 1) throw std::invalid_argument("posenc: L must be >= 1");
    std::vector<double> out;
    out.reserve(2 * static_cast<std::size_t>(L) * x.size());
    for (double xi : x) posenc_append(xi, L, out);
    return out;
}

void write_camera(std::ostream& os, const CameraView& cam) {
    const auto saved = os.precision(17);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) os << cam.K(r, c) << ' ';
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) os << cam.R(r, c) << ' ';
    for (int r = 0; r < 3; ++r) os << cam.t(r) << ' ';
    os << cam.width << ' ' << cam.height << '\n';
    os.precision(saved);
}

CameraView read_camera(std::istream& is) {
    CameraView cam;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) is >> cam.K(r, c);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) is >> cam.R(r, c);
    for (int r = 0; r < 3; ++r) is >> cam.t(r);
    is >> cam.width >> cam.height;
    if (!is) throw std::runtime_error("read_camera: malformed camera record");
    return cam;
}

}  // namespace hrf::geom
