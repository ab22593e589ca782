#include "hrf/body.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hrf::body {

namespace {

Matrix4d rigid(const Matrix3d& r, const Vector3d& t) {
    Matrix4d m = Matrix4d::Identity();
    m.block<3, 3>(0, 0) = r;
    m.block<3, 1>(0, 3) = t;
    return m;
}

double point_segment_distance(const Vector3d& p, const Vector3d& a,
                              const Vector3d& b) {
    const Vector3d ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 == 0.0) return (p - a).norm();
    const double s = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return (p - (a + s * ab)).norm();
}

}  // namespace

void BodyTemplate::validate() const {
    const std::size_t n = n_verts(), k = n_joints();
    if (k == 0 || parents.size() != k)
        throw std::invalid_argument("BodyTemplate: joint/parent count mismatch");
    if (parents[0] != -1)
        throw std::invalid_argument("BodyTemplate: joint 0 must be the root");
    for (std::size_t j = 1; j < k; ++j)
        if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= j)
            throw std::invalid_argument(
                "BodyTemplate: parents must form a tree ordered before children");
    if (weights.size() != n * k)
        throw std::invalid_argument("BodyTemplate: weight block size mismatch");
    for (std::size_t v = 0; v < n; ++v) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double w = weights[v * k + j];
            if (w < 0.0)
                throw std::invalid_argument("BodyTemplate: negative blend weight");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("BodyTemplate: weight row does not sum to 1");
    }
    for (const auto& tri : tris)
        for (int idx : tri)
            if (idx < 0 || static_cast<std::size_t>(idx) >= n)
                throw std::invalid_argument("BodyTemplate: triangle index out of range");
    if (shape_dirs_v.size() != shape_dirs_j.size())
        throw std::invalid_argument("BodyTemplate: shape basis mismatch");
}

Matrix3d axis_angle_to_matrix(const Vector3d& aa) {
    const double angle = aa.norm();
    if (angle < 1e-12) return Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

Vector3d matrix_to_axis_angle(const Matrix3d& r) {
    Eigen::AngleAxisd aa(r);
    return aa.angle() * aa.axis();
}

BodyState pose_body(const BodyTemplate& tmpl, const std::vector<Vector3d>& theta,
                    const std::vector<double>& beta) {
    const std::size_t k = tmpl.n_joints();
    const std::size_t n = tmpl.n_verts();
    if (theta.size() != k)
        throw std::invalid_argument("pose_body: theta must have one axis-angle per joint");
    if (beta.size() > tmpl.n_shape())
        throw std::invalid_argument("pose_body: beta exceeds the template shape basis");

    BodyState st;
    st.theta = theta;
    st.beta = beta;

    st.verts_c = tmpl.verts;
    st.joints_c = tmpl.joints;
    for (std::size_t b = 0; b < beta.size(); ++b) {
        for (std::size_t v = 0; v < n; ++v)
            st.verts_c[v] += beta[b] * tmpl.shape_dirs_v[b][v];
        for (std::size_t j = 0; j < k; ++j)
            st.joints_c[j] += beta[b] * tmpl.shape_dirs_j[b][j];
    }

    // G_k(x) = C_k (x - J_k) + J_k + D_k, where C_k chains the rotations
    // and D_k is the posed displacement of joint k. Exactly the identity
    // at theta = 0 (D stays zero, C stays I).
    std::vector<Matrix3d> c(k);
    std::vector<Vector3d> disp(k);
    st.G.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        const Matrix3d r = axis_angle_to_matrix(theta[j]);
        if (j == 0) {
            c[0] = r;
            disp[0] = Vector3d::Zero();
        } else {
            const int p = tmpl.parents[j];
            c[j] = c[p] * r;
            disp[j] = disp[p] + (c[p] - Matrix3d::Identity()) *
                                    (st.joints_c[j] - st.joints_c[p]);
        }
        st.G[j] = rigid(c[j], st.joints_c[j] + disp[j] - c[j] * st.joints_c[j]);
    }

    st.verts_o.resize(n);
    for (std::size_t v = 0; v < n; ++v)
        st.verts_o[v] = lbs_point(st.verts_c[v], tmpl.weight_row(v), st.G);
    return st;
}

Matrix4d blended_transform(const double* weights, const std::vector<Matrix4d>& g) {
    Matrix4d m = Matrix4d::Zero();
    double total = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
        m += weights[j] * g[j];
        total += weights[j];
    }
    if (total <= 0.0)
        throw std::invalid_argument("lbs: degenerate all-zero blend weights");
    return m;
}

Vector3d lbs_point(const Vector3d& x_c, const double* weights,
                   const std::vector<Matrix4d>& g) {
    const Matrix4d m = blended_transform(weights, g);
    return m.block<3, 3>(0, 0) * x_c + m.block<3, 1>(0, 3);
}

InverseLbsResult inverse_lbs(const Vector3d& x_t, const BodyState& state,
                             const BodyTemplate& tmpl) {
    const auto [v, dist] = nearest_vertex(x_t, state.verts_o);
    (void)dist;
    const Matrix4d m = blended_transform(tmpl.weight_row(v), state.G);
    const Matrix4d inv = m.inverse();
    return {inv.block<3, 3>(0, 0) * x_t + inv.block<3, 1>(0, 3), v};
}

std::pair<int, double> nearest_vertex(const Vector3d& x,
                                      const std::vector<Vector3d>& verts) {
    if (verts.empty()) throw std::invalid_argument("nearest_vertex: no vertices");
    int best = 0;
    double best_d2 = (verts[0] - x).squaredNorm();
    for (std::size_t i = 1; i < verts.size(); ++i) {
        const double d2 = (verts[i] - x).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(i);
        }
    }
    return {best, std::sqrt(best_d2)};
}

std::vector<double> rasterize_depth(const BodyState& state,
                                    const geom::CameraView& cam,
                                    const BodyTemplate& tmpl) {
    const int w = cam.width, h = cam.height;
    std::vector<double> zbuf(static_cast<std::size_t>(w) * h,
                             std::numeric_limits<double>::infinity());

    const std::size_t n = state.verts_o.size();
    std::vector<Eigen::Vector3d> screen(n);  // (u, v, z); z <= 0 marks invalid
    for (std::size_t i = 0; i < n; ++i) {
        const Vector3d xc = cam.R * state.verts_o[i] + cam.t;
        if (xc.z() <= 1e-9) {
            screen[i] = Vector3d(0, 0, -1);
            continue;
        }
        screen[i] = Vector3d(cam.K(0, 0) * xc.x() / xc.z() + cam.K(0, 2),
                             cam.K(1, 1) * xc.y() / xc.z() + cam.K(1, 2), xc.z());
    }

    for (const auto& tri : tmpl.tris) {
        const Vector3d& p0 = screen[tri[0]];
        const Vector3d& p1 = screen[tri[1]];
        const Vector3d& p2 = screen[tri[2]];
        if (p0.z() <= 0 || p1.z() <= 0 || p2.z() <= 0) continue;
        const double area = (p1.x() - p0.x()) * (p2.y() - p0.y()) -
                            (p2.x() - p0.x()) * (p1.y() - p0.y());
        if (std::abs(area) < 1e-12) continue;
        const int x0 = std::max(0, static_cast<int>(std::floor(
                                       std::min({p0.x(), p1.x(), p2.x()}) - 0.5)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(
                                           std::max({p0.x(), p1.x(), p2.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(
                                       std::min({p0.y(), p1.y(), p2.y()}) - 0.5)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(
                                           std::max({p0.y(), p1.y(), p2.y()}))));
        const double inv_area = 1.0 / area;
        for (int y = y0; y <= y1; ++y) {
            const double py = y + 0.5;
            for (int x = x0; x <= x1; ++x) {
                const double px = x + 0.5;
                const double w0 = ((p1.x() - px) * (p2.y() - py) -
                                   (p2.x() - px) * (p1.y() - py)) *
                                  inv_area;
                const double w1 = ((p2.x() - px) * (p0.y() - py) -
                                   (p0.x() - px) * (p2.y() - py)) *
                                  inv_area;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                // Perspective-correct depth via screen-linear 1/z.
                const double inv_z = w0 / p0.z() + w1 / p1.z() + w2 / p2.z();
                const double z = 1.0 / inv_z;
                double& slot = zbuf[static_cast<std::size_t>(y) * w + x];
                slot = std::min(slot, z);
            }
        }
    }
    return zbuf;
}

std::vector<char> visible_vertices(const BodyState& state,
                                   const geom::CameraView& cam,
                                   const BodyTemplate& tmpl) {
    constexpr double kDepthEps = 0.01;  // 1 cm
    const std::vector<double> zbuf = rasterize_depth(state, cam, tmpl);
    const int w = cam.width, h = cam.height;
    std::vector<char> vis(state.verts_o.size(), 0);
    for (std::size_t i = 0; i < state.verts_o.size(); ++i) {
        const Vector3d xc = cam.R * state.verts_o[i] + cam.t;
        if (xc.z() <= 1e-9) continue;
        const double u = cam.K(0, 0) * xc.x() / xc.z() + cam.K(0, 2);
        const double v = cam.K(1, 1) * xc.y() / xc.z() + cam.K(1, 2);
        const int px = static_cast<int>(std::floor(u));
        const int py = static_cast<int>(std::floor(v));
        if (px < 0 || px >= w || py < 0 || py >= h) continue;
        vis[i] = xc.z() <= zbuf[static_cast<std::size_t>(py) * w + px] + kDepthEps;
    }
    return vis;
}

std::vector<CapsuleSpec> posed_capsules(const BodyTemplate& tmpl,
                                        const BodyState& state) {
    std::vector<CapsuleSpec> out = tmpl.capsules;
    double girth = 1.0;
    for (auto& c : out) {
        Vector3d a = c.a, b = c.b;
        for (std::size_t s = 0; s < state.beta.size(); ++s) {
            // Endpoints morph like vertices; the basis is evaluated
            // analytically for the two procedural coefficients.
            if (s == 0) {
                a.y() *= 1.0 + 0.1 * state.beta[0];
                b.y() *= 1.0 + 0.1 * state.beta[0];
            } else if (s == 1) {
                girth = 1.0 + 0.2 * state.beta[1];
            }
        }
        const Matrix4d& g = state.G[c.joint];
        c.a = g.block<3, 3>(0, 0) * a + g.block<3, 1>(0, 3);
        c.b = g.block<3, 3>(0, 0) * b + g.block<3, 1>(0, 3);
        c.radius *= girth;
    }
    return out;
}

namespace {

void emit_capsule_mesh(const CapsuleSpec& cap, int n_seg, int n_len,
                       int n_cap_rings, BodyTemplate& tmpl) {
    const int base = static_cast<int>(tmpl.verts.size());
    const Vector3d axis = (cap.b - cap.a).normalized();
    Vector3d u = axis.cross(Vector3d(0, 0, 1));
    if (u.norm() < 1e-6) u = axis.cross(Vector3d(1, 0, 0));
    u.normalize();
    const Vector3d v = axis.cross(u);

    // Equal-area compensation keeps the polygonal silhouette aligned with
    // the analytic capsule: azimuthal for the ring polygons, latitudinal
    // for the cap profile polylines.
    const double t = 2.0 * M_PI / n_seg;
    const double lam_seg = std::sqrt(t / std::sin(t));
    const double t_lat = 2.0 * M_PI / (4.0 * (n_cap_rings + 1));
    const double lam_lat = std::sqrt(t_lat / std::sin(t_lat));
    const double r = cap.radius * lam_seg;

    std::vector<std::vector<int>> rings;
    auto add_ring = [&](const Vector3d& center, double ring_r, double axial) {
        std::vector<int> ring;
        for (int s = 0; s < n_seg; ++s) {
            const double ang = t * s;
            tmpl.verts.push_back(center + axial * axis +
                                 ring_r * (std::cos(ang) * u + std::sin(ang) * v));
            ring.push_back(static_cast<int>(tmpl.verts.size()) - 1);
        }
        rings.push_back(std::move(ring));
    };

    // Bottom pole, bottom cap, cylinder, top cap, top pole.
    tmpl.verts.push_back(cap.a - lam_lat * cap.radius * axis);
    const int pole_a = static_cast<int>(tmpl.verts.size()) - 1;
    for (int i = n_cap_rings; i >= 1; --i) {
        const double lat = 0.5 * M_PI * i / (n_cap_rings + 1);
        add_ring(cap.a, lam_lat * r * std::cos(lat),
                 -lam_lat * cap.radius * std::sin(lat));
    }
    const double len = (cap.b - cap.a).norm();
    for (int i = 0; i < n_len; ++i)
        add_ring(cap.a, r, len * i / (n_len - 1.0));
    for (int i = 1; i <= n_cap_rings; ++i) {
        const double lat = 0.5 * M_PI * i / (n_cap_rings + 1);
        add_ring(cap.b, lam_lat * r * std::cos(lat),
                 lam_lat * cap.radius * std::sin(lat));
    }
    tmpl.verts.push_back(cap.b + lam_lat * cap.radius * axis);
    const int pole_b = static_cast<int>(tmpl.verts.size()) - 1;

    auto tri = [&](int a, int b, int c) { tmpl.tris.push_back({a, b, c}); };
    for (int s = 0; s < n_seg; ++s)
        tri(pole_a, rings.front()[s], rings.front()[(s + 1) % n_seg]);
    for (std::size_t ri = 0; ri + 1 < rings.size(); ++ri) {
        for (int s = 0; s < n_seg; ++s) {
            const int s2 = (s + 1) % n_seg;
            tri(rings[ri][s], rings[ri + 1][s], rings[ri + 1][s2]);
            tri(rings[ri][s], rings[ri + 1][s2], rings[ri][s2]);
        }
    }
    for (int s = 0; s < n_seg; ++s)
        tri(pole_b, rings.back()[(s + 1) % n_seg], rings.back()[s]);
    (void)base;
}

}  // namespace

BodyTemplate make_capsule_body() {
    BodyTemplate tmpl;
    tmpl.joints = {
        {0.0, 0.0, 0.0},     // root / pelvis
        {0.0, 0.30, 0.0},    // chest
        {0.0, 0.44, 0.0},    // head (neck pivot)
        {-0.16, 0.36, 0.0},  // left arm (shoulder pivot)
        {0.16, 0.36, 0.0},   // right arm
    };
    tmpl.parents = {-1, 0, 1, 1, 1};
    tmpl.capsules = {
        {0, {0.0, -0.30, 0.0}, {0.0, 0.10, 0.0}, 0.15},
        {1, {0.0, 0.10, 0.0}, {0.0, 0.40, 0.0}, 0.13},
        {2, {0.0, 0.46, 0.0}, {0.0, 0.62, 0.0}, 0.10},
        {3, {-0.17, 0.36, 0.0}, {-0.55, 0.36, 0.0}, 0.055},
        {4, {0.17, 0.36, 0.0}, {0.55, 0.36, 0.0}, 0.055},
    };

    for (const auto& cap : tmpl.capsules) emit_capsule_mesh(cap, 16, 4, 3, tmpl);

    const std::size_t n = tmpl.verts.size();
    const std::size_t k = tmpl.joints.size();
    tmpl.weights.assign(n * k, 0.0);
    std::vector<double> seg_dist(tmpl.capsules.size());
    for (std::size_t vi = 0; vi < n; ++vi) {
        for (std::size_t c = 0; c < tmpl.capsules.size(); ++c)
            seg_dist[c] = point_segment_distance(tmpl.verts[vi], tmpl.capsules[c].a,
                                                 tmpl.capsules[c].b);
        std::size_t i1 = 0, i2 = 1;
        if (seg_dist[1] < seg_dist[0]) std::swap(i1, i2);
        for (std::size_t c = 2; c < seg_dist.size(); ++c) {
            if (seg_dist[c] < seg_dist[i1]) {
                i2 = i1;
                i1 = c;
            } else if (seg_dist[c] < seg_dist[i2]) {
                i2 = c;
            }
        }
        constexpr double kEps = 1e-3;
        const double w1 = 1.0 / (seg_dist[i1] + kEps);
        const double w2 = 1.0 / (seg_dist[i2] + kEps);
        // The pair sums to exactly 1 so the rest pose is exact.
        const double a = w1 / (w1 + w2);
        tmpl.weights[vi * k + tmpl.capsules[i1].joint] = a;
        tmpl.weights[vi * k + tmpl.capsules[i2].joint] = 1.0 - a;
    }

    // Shape basis: coeff 0 scales height, coeff 1 scales girth.
    tmpl.shape_dirs_v.assign(2, std::vector<Vector3d>(n, Vector3d::Zero()));
    tmpl.shape_dirs_j.assign(2, std::vector<Vector3d>(k, Vector3d::Zero()));
    for (std::size_t vi = 0; vi < n; ++vi) {
        tmpl.shape_dirs_v[0][vi] = Vector3d(0, 0.1 * tmpl.verts[vi].y(), 0);
        double best = std::numeric_limits<double>::max();
        Vector3d radial = Vector3d::Zero();
        for (const auto& cap : tmpl.capsules) {
            const Vector3d ab = cap.b - cap.a;
            const double s = std::clamp(
                (tmpl.verts[vi] - cap.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
            const Vector3d off = tmpl.verts[vi] - (cap.a + s * ab);
            if (off.norm() < best) {
                best = off.norm();
                radial = off;
            }
        }
        tmpl.shape_dirs_v[1][vi] = 0.2 * radial;
    }
    for (std::size_t j = 0; j < k; ++j)
        tmpl.shape_dirs_j[0][j] = Vector3d(0, 0.1 * tmpl.joints[j].y(), 0);

    tmpl.validate();
    return tmpl;
}

void save_template(std::ostream& os, const BodyTemplate& tmpl) {
    const auto saved = os.precision(17);
    os << "hrfbody 1\n";
    os << "joints " << tmpl.n_joints() << '\n';
    for (int p : tmpl.parents) os << p << ' ';
    os << '\n';
    for (const auto& j : tmpl.joints) os << j.x() << ' ' << j.y() << ' ' << j.z() << '\n';
    os << "verts " << tmpl.n_verts() << '\n';
    for (const auto& v : tmpl.verts) os << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    os << "weights\n";
    for (std::size_t v = 0; v < tmpl.n_verts(); ++v) {
        for (std::size_t j = 0; j < tmpl.n_joints(); ++j)
            os << tmpl.weights[v * tmpl.n_joints() + j] << ' ';
        os << '\n';
    }
    os << "tris " << tmpl.tris.size() << '\n';
    for (const auto& t : tmpl.tris) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    os << "shape " << tmpl.n_shape() << '\n';
    for (std::size_t b = 0; b < tmpl.n_shape(); ++b) {
        for (const auto& d : tmpl.shape_dirs_v[b])
            os << d.x() << ' ' << d.y() << ' ' << d.z() << '\n';
        for (const auto& d : tmpl.shape_dirs_j[b])
            os << d.x() << ' ' << d.y() << ' ' << d.z() << '\n';
    }
    os << "capsules " << tmpl.capsules.size() << '\n';
    for (const auto& c : tmpl.capsules)
        os << c.joint << ' ' << c.a.x() << ' ' << c.a.y() << ' ' << c.a.z() << ' '
           << c.b.x() << ' ' << c.b.y() << ' ' << c.b.z() << ' ' << c.radius << '\n';
    os << "end\n";
    os.precision(saved);
}

BodyTemplate load_template(std::istream& is) {
    auto expect = [&](const char* token) {
        std::string s;
        is >> s;
        if (s != token)
            throw std::runtime_error(std::string("load_template: expected '") +
                                     token + "', got '" + s + "'");
    };
    BodyTemplate tmpl;
    expect("hrfbody");
    int version;
    is >> version;
    if (version != 1) throw std::runtime_error("load_template: unknown version");
    expect("joints");
    std::size_t k;
    is >> k;
    tmpl.parents.resize(k);
    for (auto& p : tmpl.parents) is >> p;
    tmpl.joints.resize(k);
    for (auto& j : tmpl.joints) is >> j.x() >> j.y() >> j.z();
    expect("verts");
    std::size_t n;
    is >> n;
    tmpl.verts.resize(n);
    for (auto& v : tmpl.verts) is >> v.x() >> v.y() >> v.z();
    expect("weights");
    tmpl.weights.resize(n * k);
    for (auto& w : tmpl.weights) is >> w;
    expect("tris");
    std::size_t nt;
    is >> nt;
    tmpl.tris.resize(nt);
    for (auto& t : tmpl.tris) is >> t[0] >> t[1] >> t[2];
    expect("shape");
    std::size_t nb;
    is >> nb;
    tmpl.shape_dirs_v.assign(nb, std::vector<Vector3d>(n));
    tmpl.shape_dirs_j.assign(nb, std::vector<Vector3d>(k));
    for (std::size_t b = 0; b < nb; ++b) {
        for (auto& d : tmpl.shape_dirs_v[b]) is >> d.x() >> d.y() >> d.z();
        for (auto& d : tmpl.shape_dirs_j[b]) is >> d.x() >> d.y() >> d.z();
    }
    expect("capsules");
    std::size_t nc;
    is >> nc;
    tmpl.capsules.resize(nc);
    for (auto& c : tmpl.capsules)
        is >> c.joint >> c.a.x() >> c.a.y() >> c.a.z() >> c.b.x() >> c.b.y() >>
            c.b.z() >> c.radius;
    expect("end");
    if (!is) throw std::runtime_error("load_template: truncated file");
    tmpl.validate();
    return tmpl;
}

}  // namespace hrf::body
