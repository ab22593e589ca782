#pragma once

// Parametric skinned body: shape/pose parameters to joints, forward and
// inverse linear blend skinning, nearest-vertex queries and per-vertex
// visibility from a camera.

#include <Eigen/Dense>
#include <array>
#include <iosfwd>
#include <utility>
#include <vector>

#include "hrf/geometry.hpp"

namespace hrf::body {

using Eigen::Matrix3d;
using Eigen::Matrix4d;
using Eigen::Vector3d;

// Rigid primitive used by the procedural body and the analytic renderer.
struct CapsuleSpec {
    int joint = 0;  // governing joint
    Vector3d a = Vector3d::Zero();
    Vector3d b = Vector3d::Zero();
    double radius = 0.0;
};

struct BodyTemplate {
    std::vector<Vector3d> verts;    // canonical rest vertices (N)
    std::vector<double> weights;    // N x K, row-major; rows sum to 1
    std::vector<int> parents;       // K; parents[0] == -1
    std::vector<Vector3d> joints;   // K canonical joints
    std::vector<std::array<int, 3>> tris;
    // Optional linear shape basis: per coefficient, vertex and joint offsets.
    std::vector<std::vector<Vector3d>> shape_dirs_v;  // B x N
    std::vector<std::vector<Vector3d>> shape_dirs_j;  // B x K
    std::vector<CapsuleSpec> capsules;  // empty for externally loaded bodies

    std::size_t n_verts() const { return verts.size(); }
    std::size_t n_joints() const { return joints.size(); }
    std::size_t n_shape() const { return shape_dirs_v.size(); }
    const double* weight_row(std::size_t v) const {
        return weights.data() + v * n_joints();
    }
    void validate() const;  // throws std::invalid_argument
};

struct BodyState {
    std::vector<Matrix4d> G;        // K relative-to-canonical rigid transforms
    std::vector<Vector3d> verts_c;  // shape-morphed canonical vertices
    std::vector<Vector3d> joints_c; // shape-morphed canonical joints
    std::vector<Vector3d> verts_o;  // posed vertices
    std::vector<Vector3d> theta;    // K axis-angle rotations
    std::vector<double> beta;
};

Matrix3d axis_angle_to_matrix(const Vector3d& aa);
Vector3d matrix_to_axis_angle(const Matrix3d& r);

// Forward kinematics along the joint tree plus LBS of every vertex.
BodyState pose_body(const BodyTemplate& tmpl, const std::vector<Vector3d>& theta,
                    const std::vector<double>& beta);

// Sum_k w_k G_k as one affine matrix.
Matrix4d blended_transform(const double* weights, const std::vector<Matrix4d>& g);
Vector3d lbs_point(const Vector3d& x_c, const double* weights,
                   const std::vector<Matrix4d>& g);

struct InverseLbsResult {
    Vector3d x_c;
    int vertex;  // posed vertex whose inverse blend was applied
};

// Nearest posed vertex's inverse blended transform.
InverseLbsResult inverse_lbs(const Vector3d& x_t, const BodyState& state,
                             const BodyTemplate& tmpl);

// Linear scan; ties resolve to the lowest index.
std::pair<int, double> nearest_vertex(const Vector3d& x,
                                      const std::vector<Vector3d>& verts);

// Software z-buffer at the camera resolution. A vertex is visible iff its
// camera depth is within eps (1 cm) of the rasterized depth at its pixel.
std::vector<char> visible_vertices(const BodyState& state,
                                   const geom::CameraView& cam,
                                   const BodyTemplate& tmpl);

// Depth buffer of the posed mesh (width*height, +inf where empty).
std::vector<double> rasterize_depth(const BodyState& state,
                                    const geom::CameraView& cam,
                                    const BodyTemplate& tmpl);

// Capsules carried to the posed space by their governing joints.
std::vector<CapsuleSpec> posed_capsules(const BodyTemplate& tmpl,
                                        const BodyState& state);

// Bundled procedural body: 5-joint tree, ~800 vertices on capsule
// surfaces, blend weights by inverse distance to the two nearest bones.
BodyTemplate make_capsule_body();

// Text layout: vertex block, weight block, joint tree, triangle block,
// optional shape and capsule blocks.
void save_template(std::ostream& os, const BodyTemplate& tmpl);
BodyTemplate load_template(std::istream& is);

}  // namespace hrf::body
