#include "hrf/synthcap.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hrf::synth {

namespace fs = std::filesystem;

namespace {

// Positive roots of a quadratic, smallest first; false when none.
bool solve_quadratic(double a, double b, double c, double& r0, double& r1) {
    const double disc = b * b - 4 * a * c;
    if (disc < 0.0 || std::abs(a) < 1e-15) return false;
    const double s = std::sqrt(disc);
    r0 = (-b - s) / (2 * a);
    r1 = (-b + s) / (2 * a);
    return true;
}

bool intersect_one(const body::CapsuleSpec& cap, const geom::Ray& ray, double& t,
                   Vector3d& normal) {
    constexpr double kMin = 1e-6;
    double best = std::numeric_limits<double>::max();
    bool found = false;
    const Vector3d axis = cap.b - cap.a;
    const double len = axis.norm();
    const Vector3d ah = len > 0 ? Vector3d(axis / len) : Vector3d(0, 1, 0);

    // Cylinder body.
    const Vector3d oc = ray.origin - cap.a;
    const Vector3d dp = ray.dir - ray.dir.dot(ah) * ah;
    const Vector3d op = oc - oc.dot(ah) * ah;
    double r0, r1;
    if (len > 0 &&
        solve_quadratic(dp.squaredNorm(), 2.0 * op.dot(dp),
                        op.squaredNorm() - cap.radius * cap.radius, r0, r1)) {
        for (double tc : {r0, r1}) {
            if (tc < kMin || tc >= best) continue;
            const Vector3d p = ray.origin + tc * ray.dir;
            const double s = (p - cap.a).dot(ah);
            if (s < 0.0 || s > len) continue;
            best = tc;
            normal = (p - (cap.a + s * ah)) / cap.radius;
            found = true;
        }
    }
    // End spheres.
    for (const Vector3d& center : {cap.a, cap.b}) {
        const Vector3d os = ray.origin - center;
        if (!solve_quadratic(1.0, 2.0 * os.dot(ray.dir),
                             os.squaredNorm() - cap.radius * cap.radius, r0, r1))
            continue;
        for (double ts : {r0, r1}) {
            if (ts < kMin || ts >= best) continue;
            const Vector3d p = ray.origin + ts * ray.dir;
            const double s = (p - cap.a).dot(ah);
            if (&center == &cap.a ? s > 0.0 : s < len) continue;
            best = ts;
            normal = (p - center) / cap.radius;
            found = true;
        }
    }
    if (found) t = best;
    return found;
}

}  // namespace

bool intersect_capsules(const std::vector<body::CapsuleSpec>& caps,
                        const geom::Ray& ray, CapsuleHit& hit) {
    hit.t = std::numeric_limits<double>::max();
    hit.capsule = -1;
    for (std::size_t i = 0; i < caps.size(); ++i) {
        double t;
        Vector3d n;
        if (intersect_one(caps[i], ray, t, n) && t < hit.t) {
            hit.t = t;
            hit.normal = n;
            hit.capsule = static_cast<int>(i);
        }
    }
    return hit.capsule >= 0;
}

RenderOut render_analytic(const body::BodyTemplate& tmpl, const Subject& subject,
                          const std::vector<Vector3d>& theta,
                          const geom::CameraView& cam, const LightRig& light) {
    if (subject.albedo.size() != tmpl.capsules.size())
        throw std::invalid_argument("render_analytic: albedo per capsule required");
    const body::BodyState state = body::pose_body(tmpl, theta, subject.beta);
    const std::vector<body::CapsuleSpec> caps = body::posed_capsules(tmpl, state);

    RenderOut out;
    out.image = img::make_image(cam.width, cam.height, 3);
    out.mask = img::make_image(cam.width, cam.height, 1);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const geom::Ray ray = geom::cast_ray(cam, {x + 0.5, y + 0.5});
            CapsuleHit hit;
            if (!intersect_capsules(caps, ray, hit)) continue;
            const double lambert =
                std::max(0.0, hit.normal.dot(-light.dir));
            const double shade = light.ambient + light.diffuse * lambert;
            for (int c = 0; c < 3; ++c)
                out.image.at(x, y, c) =
                    std::clamp(subject.albedo[hit.capsule][c] * shade, 0.0, 1.0);
            out.mask.at(x, y, 0) = 1.0;
        }
    }
    return out;
}

Subject draw_subject(const body::BodyTemplate& tmpl, std::uint64_t seed,
                     const std::string& id) {
    Rng rng(seed);
    Subject s;
    s.id = id;
    for (std::size_t c = 0; c < tmpl.capsules.size(); ++c)
        s.albedo.push_back({rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95),
                            rng.uniform(0.15, 0.95)});
    s.beta = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    return s;
}

std::vector<Vector3d> draw_pose(std::size_t n_joints, std::uint64_t seed,
                                bool rest) {
    std::vector<Vector3d> theta(n_joints, Vector3d::Zero());
    if (rest || n_joints < 5) return theta;
    Rng rng(seed);
    theta[1] = Vector3d(rng.uniform(-0.15, 0.15), 0, rng.uniform(-0.25, 0.25));
    theta[2] = Vector3d(0, 0, rng.uniform(-0.3, 0.3));
    theta[3] = Vector3d(0, 0, rng.uniform(-0.6, 0.6));
    theta[4] = Vector3d(0, 0, rng.uniform(-0.6, 0.6));
    return theta;
}

namespace {

void write_sidecar(const std::string& path, const geom::CameraView& cam,
                   double yaw_deg, const std::vector<Vector3d>& theta,
                   const std::vector<double>& beta) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("generate_dataset: cannot write " + path);
    geom::write_camera(os, cam);
    os << std::setprecision(17);
    os << "yaw " << yaw_deg << '\n';
    os << "theta " << theta.size() << '\n';
    for (const auto& t : theta) os << t.x() << ' ' << t.y() << ' ' << t.z() << '\n';
    os << "beta " << beta.size() << '\n';
    for (double b : beta) os << b << ' ';
    os << '\n';
}

}  // namespace

void generate_dataset(const body::BodyTemplate& tmpl, const DatasetSpec& spec) {
    if (spec.n_subjects < 1 || spec.n_poses < 1 || spec.n_views < 1)
        throw std::invalid_argument("generate_dataset: counts must be >= 1");
    fs::create_directories(spec.out_dir);

    std::vector<std::string> files;  // relative paths for the manifest
    auto emit = [&](const std::string& rel) { files.push_back(rel); };

    {
        std::ofstream os(spec.out_dir + "/meta.txt");
        os << "hrfdata 1\n";
        os << "subjects " << spec.n_subjects << '\n';
        os << "poses " << spec.n_poses << '\n';
        os << "views " << spec.n_views << '\n';
        os << "resolution " << spec.resolution << '\n';
        os << "seed " << spec.seed << '\n';
        emit("meta.txt");
    }
    {
        std::ofstream os(spec.out_dir + "/body.txt");
        body::save_template(os, tmpl);
        emit("body.txt");
    }

    const double focal = spec.focal_factor * spec.resolution;
    for (int s = 0; s < spec.n_subjects; ++s) {
        std::ostringstream sub;
        sub << "subject_" << std::setw(3) << std::setfill('0') << s;
        fs::create_directories(spec.out_dir + "/" + sub.str());

        const std::uint64_t sid =
            mix_seed(spec.seed, 1000 + spec.subject_seed_offset + s);
        const Subject subject = draw_subject(tmpl, sid, sub.str());
        {
            std::ofstream os(spec.out_dir + "/" + sub.str() + "/subject.txt");
            os << std::setprecision(17) << "id " << subject.id << '\n';
            os << "albedo " << subject.albedo.size() << '\n';
            for (const auto& a : subject.albedo)
                os << a[0] << ' ' << a[1] << ' ' << a[2] << '\n';
            os << "beta " << subject.beta.size() << '\n';
            for (double b : subject.beta) os << b << ' ';
            os << '\n';
            emit(sub.str() + "/subject.txt");
        }

        for (int p = 0; p < spec.n_poses; ++p) {
            const auto theta =
                draw_pose(tmpl.n_joints(), mix_seed(sid, 77 + p), p == 0);
            for (int v = 0; v < spec.n_views; ++v) {
                const double yaw_deg = 360.0 * v / spec.n_views;
                const geom::CameraView cam = geom::make_ring_camera(
                    yaw_deg * M_PI / 180.0, spec.cam_radius, 0.0, spec.ring_target,
                    focal, spec.resolution, spec.resolution);
                const RenderOut r = render_analytic(tmpl, subject, theta, cam);

                std::ostringstream frame;
                frame << "frame_p" << std::setw(3) << std::setfill('0') << p
                      << "_v" << std::setw(3) << std::setfill('0') << v;
                const std::string base = sub.str() + "/" + frame.str();
                img::write_png(spec.out_dir + "/" + base + ".png", r.image);
                img::write_png(spec.out_dir + "/" + base + "_mask.png", r.mask);
                write_sidecar(spec.out_dir + "/" + base + ".txt", cam, yaw_deg,
                              theta, subject.beta);
                emit(base + ".png");
                emit(base + "_mask.png");
                emit(base + ".txt");
            }
        }
    }

    std::ofstream manifest(spec.out_dir + "/manifest.txt");
    for (const auto& rel : files) {
        const std::string full = spec.out_dir + "/" + rel;
        manifest << rel << ' ' << fs::file_size(full) << ' ' << std::hex
                 << img::file_crc32(full) << std::dec << '\n';
    }
}

}  // namespace hrf::synth
