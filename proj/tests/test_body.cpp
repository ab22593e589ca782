#include <doctest.h>

#include <cmath>
#include <sstream>

#include "hrf/body.hpp"
#include "hrf/synthcap.hpp"

using namespace hrf;
using body::BodyState;
using body::BodyTemplate;
using body::Matrix3d;
using body::Matrix4d;
using body::Vector3d;

namespace {

std::vector<Vector3d> rest_pose(const BodyTemplate& tmpl) {
    return std::vector<Vector3d>(tmpl.n_joints(), Vector3d::Zero());
}

// Independent formulation: rotate about each canonical joint from the
// vertex's joint up to the root, blended by the vertex weights.
Vector3d chain_oracle(const BodyTemplate& tmpl,
                      const std::vector<Vector3d>& joints,
                      const std::vector<Vector3d>& theta, std::size_t vertex) {
    Vector3d out = Vector3d::Zero();
    for (std::size_t k = 0; k < tmpl.n_joints(); ++k) {
        const double w = tmpl.weight_row(vertex)[k];
        if (w == 0.0) continue;
        Vector3d x = tmpl.verts[vertex];
        for (int j = static_cast<int>(k); j >= 0; j = tmpl.parents[j]) {
            const Matrix3d r = body::axis_angle_to_matrix(theta[j]);
            x = r * (x - joints[j]) + joints[j];
        }
        out += w * x;
    }
    return out;
}

BodyTemplate quad_template() {
    // two parallel quads; the near one is larger and occludes the far one
    BodyTemplate t;
    t.joints = {Vector3d::Zero()};
    t.parents = {-1};
    t.verts = {{-0.35, -0.35, 1}, {0.35, -0.35, 1}, {0.35, 0.35, 1},
               {-0.35, 0.35, 1},  {-0.3, -0.3, 2},  {0.3, -0.3, 2},
               {0.3, 0.3, 2},     {-0.3, 0.3, 2}};
    t.weights.assign(8, 1.0);
    t.tris = {{0, 1, 2}, {0, 2, 3}, {4, 5, 6}, {4, 6, 7}};
    return t;
}

geom::CameraView frontal_camera(int res = 128) {
    return geom::make_ring_camera(0.0, 2.4, 0.0, Vector3d(0, 0.15, 0),
                                  1.4 * res, res, res);
}

}  // namespace

TEST_CASE("pose_body rest pose is exact") {
    const BodyTemplate tmpl = body::make_capsule_body();
    const BodyState st = body::pose_body(tmpl, rest_pose(tmpl), {});
    for (std::size_t k = 0; k < tmpl.n_joints(); ++k)
        CHECK((st.G[k] - Matrix4d::Identity()).cwiseAbs().maxCoeff() <= 1e-15);
    for (std::size_t v = 0; v < tmpl.n_verts(); ++v)
        CHECK((st.verts_o[v] - tmpl.verts[v]).norm() == 0.0);
}

TEST_CASE("root rotation moves the whole body rigidly") {
    const BodyTemplate tmpl = body::make_capsule_body();
    auto theta = rest_pose(tmpl);
    theta[0] = Vector3d(0, 0, M_PI / 2);  // Rz(90 deg), root joint at origin
    const BodyState st = body::pose_body(tmpl, theta, {});
    const Matrix3d r = body::axis_angle_to_matrix(theta[0]);
    for (std::size_t v = 0; v < tmpl.n_verts(); ++v) {
        const Vector3d expect =
            r * (tmpl.verts[v] - tmpl.joints[0]) + tmpl.joints[0];
        CHECK((st.verts_o[v] - expect).norm() <= 1e-12);
    }
}

TEST_CASE("posed vertices match the kinematic-chain oracle") {
    const BodyTemplate tmpl = body::make_capsule_body();
    auto theta = rest_pose(tmpl);
    theta[3] = Vector3d(0, 0, 0.7);  // bend the left arm
    theta[1] = Vector3d(0.1, 0, -0.2);
    const BodyState st = body::pose_body(tmpl, theta, {});
    for (std::size_t v = 0; v < tmpl.n_verts(); ++v) {
        const Vector3d expect = chain_oracle(tmpl, tmpl.joints, theta, v);
        CHECK((st.verts_o[v] - expect).norm() <= 1e-10);
    }
}

TEST_CASE("pose_body equivariance under root composition") {
    const BodyTemplate tmpl = body::make_capsule_body();
    auto theta = rest_pose(tmpl);
    theta[0] = Vector3d(0.3, -0.1, 0.4);
    theta[3] = Vector3d(0, 0, 0.5);
    const BodyState posed = body::pose_body(tmpl, theta, {});

    const Matrix3d g =
        body::axis_angle_to_matrix(Vector3d(-0.2, 0.6, 0.1));
    auto theta2 = theta;
    theta2[0] = body::matrix_to_axis_angle(
        g * body::axis_angle_to_matrix(theta[0]));
    const BodyState moved = body::pose_body(tmpl, theta2, {});
    // root joint sits at the origin, so composing the root rotation equals
    // rigidly rotating the posed result
    for (std::size_t v = 0; v < tmpl.n_verts(); ++v)
        CHECK((moved.verts_o[v] - g * posed.verts_o[v]).norm() <= 1e-9);
}

TEST_CASE("pose_body rejects wrong arity") {
    const BodyTemplate tmpl = body::make_capsule_body();
    CHECK_THROWS_AS(body::pose_body(tmpl, {Vector3d::Zero()}, {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(body::pose_body(tmpl, rest_pose(tmpl), {0, 0, 0}),
                    std::invalid_argument);
}

TEST_CASE("lbs blending") {
    std::vector<Matrix4d> g(2, Matrix4d::Identity());
    const double one_hot[2] = {1.0, 0.0};
    const Vector3d x(0.2, -0.3, 0.4);
    CHECK((body::lbs_point(x, one_hot, g) - x).norm() == 0.0);

    g[0](0, 3) = 2.0;  // translation (2,0,0)
    g[1](1, 3) = 2.0;  // translation (0,2,0)
    const double hot1[2] = {0.0, 1.0};
    CHECK((body::lbs_point(x, hot1, g) - (x + Vector3d(0, 2, 0))).norm() == 0.0);

    const double half[2] = {0.5, 0.5};
    CHECK((body::lbs_point(x, half, g) - (x + Vector3d(1, 1, 0))).norm() <=
          1e-15);

    const double zeros[2] = {0.0, 0.0};
    CHECK_THROWS_AS(body::lbs_point(x, zeros, g), std::invalid_argument);
}

TEST_CASE("lbs of template vertices reproduces pose_body") {
    const BodyTemplate tmpl = body::make_capsule_body();
    auto theta = rest_pose(tmpl);
    theta[1] = Vector3d(0, 0.2, 0.3);
    theta[4] = Vector3d(0, 0, -0.6);
    const BodyState st = body::pose_body(tmpl, theta, {});
    for (std::size_t v = 0; v < tmpl.n_verts(); ++v) {
        const Vector3d via_lbs =
            body::lbs_point(st.verts_c[v], tmpl.weight_row(v), st.G);
        CHECK((via_lbs - st.verts_o[v]).norm() == 0.0);
    }
}

TEST_CASE("inverse_lbs") {
    const BodyTemplate tmpl = body::make_capsule_body();
    auto theta = rest_pose(tmpl);

    // rest pose: identity map
    const BodyState rest = body::pose_body(tmpl, theta, {});
    const Vector3d probe(0.1, 0.2, 0.05);
    CHECK((body::inverse_lbs(probe, rest, tmpl).x_c - probe).norm() <= 1e-12);

    theta[1] = Vector3d(0.1, 0, 0.2);
    theta[3] = Vector3d(0, 0, 0.55);
    theta[4] = Vector3d(0, 0, -0.35);
    const BodyState st = body::pose_body(tmpl, theta, {});

    // a posed vertex returns its canonical position
    for (std::size_t v = 0; v < tmpl.n_verts(); v += 97) {
        const auto inv = body::inverse_lbs(st.verts_o[v], st, tmpl);
        CHECK(inv.vertex == static_cast<int>(v));
        CHECK((inv.x_c - st.verts_c[v]).norm() <= 1e-9);
    }

    // round trip over 1e4 points within 1 cm of the surface
    Rng rng(21);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t v = rng.uniform_int(tmpl.n_verts());
        const Vector3d jitter(rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01),
                              rng.uniform(-0.01, 0.01));
        const Vector3d x_t = st.verts_o[v] + jitter;
        const auto inv = body::inverse_lbs(x_t, st, tmpl);
        const Vector3d back =
            body::lbs_point(inv.x_c, tmpl.weight_row(inv.vertex), st.G);
        worst = std::max(worst, (back - x_t).norm());
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("nearest_vertex") {
    std::vector<Vector3d> verts;
    for (int i = 0; i < 10; ++i) verts.push_back(Vector3d(i, 0, 0));
    const auto [at, d0] = body::nearest_vertex(Vector3d(4, 0, 0), verts);
    CHECK(at == 4);
    CHECK(d0 == 0.0);

    // equidistant between 3 and 7: the tie goes to the lowest index
    std::vector<Vector3d> tie_verts(8, Vector3d(50, 50, 50));
    tie_verts[3] = Vector3d(1, 0, 0);
    tie_verts[7] = Vector3d(-1, 0, 0);
    const auto [tie, dt] = body::nearest_vertex(Vector3d::Zero(), tie_verts);
    CHECK(tie == 3);
    CHECK(dt == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(31);
    const BodyTemplate tmpl = body::make_capsule_body();
    for (int i = 0; i < 1000; ++i) {
        const Vector3d q(rng.uniform(-1, 1), rng.uniform(-1, 1),
                         rng.uniform(-1, 1));
        int best = 0;
        double bd = (tmpl.verts[0] - q).norm();
        for (std::size_t v = 1; v < tmpl.n_verts(); ++v) {
            const double d = (tmpl.verts[v] - q).norm();
            if (d < bd) {
                bd = d;
                best = static_cast<int>(v);
            }
        }
        const auto [got, gd] = body::nearest_vertex(q, tmpl.verts);
        CHECK(got == best);
        CHECK(gd == doctest::Approx(bd).epsilon(1e-12));
    }
}

TEST_CASE("visibility of simple geometry") {
    // single front-facing triangle
    BodyTemplate tri;
    tri.joints = {Vector3d::Zero()};
    tri.parents = {-1};
    tri.verts = {{-0.5, -0.5, 2}, {0.5, -0.5, 2}, {0, 0.5, 2}};
    tri.weights.assign(3, 1.0);
    tri.tris = {{0, 1, 2}};
    geom::CameraView cam;
    cam.width = cam.height = 64;
    cam.K << 64, 0, 32, 0, 64, 32, 0, 0, 1;
    const BodyState st = body::pose_body(tri, {Vector3d::Zero()}, {});
    const auto vis = body::visible_vertices(st, cam, tri);
    CHECK(vis == std::vector<char>{1, 1, 1});

    // camera looking away: everything behind, all invisible
    geom::CameraView away = cam;
    away.R = Eigen::AngleAxisd(M_PI, Vector3d(0, 1, 0)).toRotationMatrix();
    const auto none = body::visible_vertices(st, away, tri);
    CHECK(none == std::vector<char>{0, 0, 0});

    // near quad occludes the far quad
    const BodyTemplate quads = quad_template();
    const BodyState qs = body::pose_body(quads, {Vector3d::Zero()}, {});
    const auto qvis = body::visible_vertices(qs, cam, quads);
    for (int v = 0; v < 4; ++v) CHECK(qvis[v] == 1);
    for (int v = 4; v < 8; ++v) CHECK(qvis[v] == 0);
}

TEST_CASE("capsule body visibility fraction and the analytic oracle") {
    const BodyTemplate tmpl = body::make_capsule_body();
    const BodyState st = body::pose_body(tmpl, rest_pose(tmpl), {});
    const geom::CameraView cam = frontal_camera();
    const auto vis = body::visible_vertices(st, cam, tmpl);

    double frac = 0;
    for (char v : vis) frac += v;
    frac /= static_cast<double>(vis.size());
    CHECK(frac >= 0.40);
    CHECK(frac <= 0.60);

    // analytic ray-capsule oracle per vertex
    const auto caps = body::posed_capsules(tmpl, st);
    const Vector3d origin = cam.center();
    int agree = 0;
    int oracle_visible = 0;
    for (std::size_t v = 0; v < tmpl.n_verts(); ++v) {
        geom::Ray ray;
        ray.origin = origin;
        ray.dir = (st.verts_o[v] - origin).normalized();
        const double dist = (st.verts_o[v] - origin).norm();
        synth::CapsuleHit hit;
        const bool blocked =
            synth::intersect_capsules(caps, ray, hit) && hit.t < dist - 0.02;
        oracle_visible += !blocked;
        agree += (!blocked) == (vis[v] != 0);
    }
    const double of = oracle_visible / static_cast<double>(tmpl.n_verts());
    CHECK(of >= 0.40);
    CHECK(of <= 0.60);
    // rasterizer and oracle may disagree in the grazing silhouette band
    CHECK(agree >= static_cast<int>(0.85 * tmpl.n_verts()));
}

TEST_CASE("opposite cameras see disjoint vertex sets") {
    const BodyTemplate tmpl = body::make_capsule_body();
    const BodyState st = body::pose_body(tmpl, rest_pose(tmpl), {});
    const auto front = body::visible_vertices(st, frontal_camera(), tmpl);
    const geom::CameraView back_cam = geom::make_ring_camera(
        M_PI, 2.4, 0.0, Vector3d(0, 0.15, 0), 1.4 * 128, 128, 128);
    const auto back = body::visible_vertices(st, back_cam, tmpl);
    int overlap = 0;
    for (std::size_t v = 0; v < front.size(); ++v)
        overlap += front[v] && back[v];
    CHECK(overlap <= static_cast<int>(0.10 * tmpl.n_verts()));
}

TEST_CASE("shape coefficients morph canonical geometry") {
    const BodyTemplate tmpl = body::make_capsule_body();
    const BodyState tall = body::pose_body(tmpl, rest_pose(tmpl), {0.5, 0.0});
    const geom::Aabb base = geom::Aabb::of_points(tmpl.verts);
    const geom::Aabb morphed = geom::Aabb::of_points(tall.verts_c);
    CHECK(morphed.max.y() > base.max.y());
    CHECK(morphed.max.x() == doctest::Approx(base.max.x()).epsilon(1e-12));
}

TEST_CASE("template save/load round trip") {
    const BodyTemplate tmpl = body::make_capsule_body();
    std::stringstream ss;
    body::save_template(ss, tmpl);
    const BodyTemplate back = body::load_template(ss);
    REQUIRE(back.n_verts() == tmpl.n_verts());
    REQUIRE(back.n_joints() == tmpl.n_joints());
    REQUIRE(back.tris.size() == tmpl.tris.size());
    for (std::size_t v = 0; v < tmpl.n_verts(); ++v)
        CHECK((back.verts[v] - tmpl.verts[v]).norm() == 0.0);
    CHECK(back.weights == tmpl.weights);
    CHECK(back.parents == tmpl.parents);

    BodyTemplate bad = tmpl;
    bad.weights[0] += 0.5;  // row no longer sums to 1
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    BodyTemplate bad2 = tmpl;
    bad2.parents[2] = 4;  // child before parent
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}
