/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/geom/mesh_ops.hpp
 *
 * Copyright 2026 The nlmm authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "nlmm/core/ops.hpp"
#include "nlmm/geom/topology.hpp"

namespace nlmm::geom {

/**
 * Weak-perspective camera: uniform scale, axis-angle rotation, translation.
 * The projection matrix is M = s * [R_{1:2} | t_{1:2}] (2x4). The third
 * translation component tz only shifts camera-space depth and never moves a
 * projected point; it exists so the camera round-trips the encoder's
 * 7-parameter head (log s, rx, ry, rz, tx, ty, tz).
 */
struct Pose
{
    double scale = 1.0;
    std::array<double, 3> axis_angle{0, 0, 0};
    std::array<double, 3> translation{0, 0, 0}; // tx, ty in pixels; tz depth offset

    static Pose identity() { return Pose{}; }

    std::array<double, 7> to_vec7() const
    {
        ensure(scale > 0.0, "Pose: scale must be positive");
        return {std::log(scale), axis_angle[0], axis_angle[1], axis_angle[2],
                translation[0], translation[1], translation[2]};
    }

    static Pose from_vec7(const std::array<double, 7>& v)
    {
        Pose p;
        p.scale = std::exp(v[0]);
        p.axis_angle = {v[1], v[2], v[3]};
        p.translation = {v[4], v[5], v[6]};
        return p;
    }

    Eigen::Matrix3d rotation() const
    {
        const Eigen::Vector3d r(axis_angle[0], axis_angle[1], axis_angle[2]);
        const double theta = r.norm();
        Eigen::Matrix3d K;
        K << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
        if (theta < 1e-12)
            return Eigen::Matrix3d::Identity() + K;
        return Eigen::Matrix3d::Identity() + std::sin(theta) / theta * K +
               (1.0 - std::cos(theta)) / (theta * theta) * (K * K);
    }

    /// M in R^{2x4}: image point = s * R_{1:2} * X + t_{1:2}.
    Eigen::Matrix<double, 2, 4> matrix() const
    {
        ensure(scale > 0.0, "Pose: scale must be positive");
        Eigen::Matrix<double, 2, 4> M;
        M.leftCols<3>() = scale * rotation().topRows<2>();
        M(0, 3) = translation[0];
        M(1, 3) = translation[1];
        return M;
    }
};

/// Differentiable pose: scalar scale, axis-angle 3-vector, translation 3-vector.
struct PoseTensors
{
    Tensor scale;       // {1}
    Tensor axis_angle;  // {3}
    Tensor translation; // {3}

    static PoseTensors constant(const Pose& p)
    {
        PoseTensors t;
        Array s(1);
        s[0] = p.scale;
        t.scale = Tensor::from_array({1}, s);
        Array r(3), tr(3);
        for (int i = 0; i < 3; ++i)
        {
            r[i] = p.axis_angle[i];
            tr[i] = p.translation[i];
        }
        t.axis_angle = Tensor::from_array({3}, r);
        t.translation = Tensor::from_array({3}, tr);
        return t;
    }

    Pose to_pose() const
    {
        Pose p;
        p.scale = scale.scalar();
        for (int i = 0; i < 3; ++i)
        {
            p.axis_angle[i] = axis_angle.at(i);
            p.translation[i] = translation.at(i);
        }
        return p;
    }
};

/// Per-vertex sampling of a UV grid (bilinear, differentiable in the grid).
inline Tensor uv_to_vertices(const Tensor& grid, const MeshTopology& topo)
{
    try
    {
        return bilinear_gather(grid, topo.uv_coords);
    }
    catch (const std::invalid_argument& e)
    {
        throw std::invalid_argument(std::string("uv_to_vertices: vertex uv outside grid: ") +
                                    e.what());
    }
}

inline Array uv_to_vertices_plain(const Array& grid, int channels, const MeshTopology& topo)
{
    Tensor g = Tensor::from_array({topo.uv_height, topo.uv_width, channels}, grid);
    return uv_to_vertices(g, topo).value();
}

/**
 * Area-weighted vertex normals, unit length, differentiable in positions.
 * Triangles with area below `degenerate_area` are skipped. Vertices whose
 * accumulated normal cancels below eps pass through unnormalized (their
 * gradient stays finite); isolated vertices are rejected by the topology.
 */
inline Tensor vertex_normals(const Tensor& verts, const MeshTopology& topo,
                             double degenerate_area = 1e-12)
{
    ensure(verts.shape().size() == 2 && verts.shape()[1] == 3,
           "vertex_normals: Q x 3 positions required");
    ensure(verts.shape()[0] == topo.num_vertices, "vertex_normals: vertex count mismatch");
    const int f = static_cast<int>(topo.triangles.size());
    std::vector<int> i0(f), i1(f), i2(f);
    for (int t = 0; t < f; ++t)
    {
        i0[t] = topo.triangles[t][0];
        i1[t] = topo.triangles[t][1];
        i2[t] = topo.triangles[t][2];
    }
    Tensor v0 = gather_rows(verts, i0);
    Tensor v1 = gather_rows(verts, i1);
    Tensor v2 = gather_rows(verts, i2);
    Tensor face_n = cross_rows(sub(v1, v0), sub(v2, v0)); // |.| = 2 * area

    // mask out degenerate faces (value-dependent, fixed per evaluation)
    Array mask(f * 3);
    bool any_degenerate = false;
    for (int t = 0; t < f; ++t)
    {
        const double nx = face_n.at(t * 3), ny = face_n.at(t * 3 + 1), nz = face_n.at(t * 3 + 2);
        const double area = 0.5 * std::sqrt(nx * nx + ny * ny + nz * nz);
        const double m = area < degenerate_area ? 0.0 : 1.0;
        any_degenerate = any_degenerate || m == 0.0;
        mask[t * 3] = mask[t * 3 + 1] = mask[t * 3 + 2] = m;
    }
    if (any_degenerate)
        face_n = mul(face_n, Tensor::from_array({f, 3}, mask));

    Tensor acc = add(add(scatter_add_rows(face_n, i0, topo.num_vertices),
                         scatter_add_rows(face_n, i1, topo.num_vertices)),
                     scatter_add_rows(face_n, i2, topo.num_vertices));
    return normalize_rows(acc);
}

inline Array vertex_normals_plain(const Array& verts, const MeshTopology& topo)
{
    return vertex_normals(Tensor::from_array({topo.num_vertices, 3}, verts), topo).value();
}

struct ProjectedTensors
{
    Tensor points2d;   // Q x 2 image coordinates (pixels)
    Tensor depth;      // Q x 1 camera-space z (+tz); larger = closer to camera
    Tensor rotation;   // 3 x 3
    Tensor camera_xyz; // Q x 3 rotated positions
};

/// Weak-perspective projection, differentiable in vertices and pose.
inline ProjectedTensors project(const PoseTensors& pose, const Tensor& verts)
{
    ensure(verts.shape().size() == 2 && verts.shape()[1] == 3, "project: Q x 3 required");
    ProjectedTensors out;
    out.rotation = rodrigues(pose.axis_angle);
    out.camera_xyz = matmul(verts, transpose2d(out.rotation)); // rows = R * v
    Tensor xy = slice_cols(out.camera_xyz, 0, 2);
    out.points2d = add_rowvec(mul_tscalar(xy, pose.scale), slice_vec(pose.translation, 0, 2));
    out.depth = add_tscalar(slice_cols(out.camera_xyz, 2, 1), slice_vec(pose.translation, 2, 1));
    return out;
}

struct Projected
{
    Array points2d; // Q x 2
    Array depth;    // Q
};

inline Projected project_plain(const Pose& pose, const Array& verts, int q)
{
    PoseTensors pt = PoseTensors::constant(pose);
    ProjectedTensors r = project(pt, Tensor::from_array({q, 3}, verts));
    return Projected{r.points2d.value(), r.depth.value()};
}

/// Landmark image positions: projection gathered at the landmark vertices.
/// Returned as |d| x 2 rows (transpose for the paper's 2 x |d| layout).
inline Tensor landmark_positions(const Tensor& verts, const PoseTensors& pose,
                                 const MeshTopology& topo)
{
    ProjectedTensors proj = project(pose, verts);
    return gather_rows(proj.points2d, topo.landmarks);
}

inline Array landmark_positions_plain(const Pose& pose, const Array& verts,
                                      const MeshTopology& topo)
{
    return landmark_positions(Tensor::from_array({topo.num_vertices, 3}, verts),
                              PoseTensors::constant(pose), topo)
        .value();
}

/**
 * Soft per-UV-pixel visibility T = sigmoid(k * n_z) from camera-space normal
 * z; 0 outside the face mask. Differentiable in the position grid.
 */
inline Tensor visibility_mask_uv(const Tensor& s_uv, const PoseTensors& pose,
                                 const MeshTopology& topo, double sharpness = 10.0)
{
    Tensor verts = uv_to_vertices(s_uv, topo);
    Tensor normals = vertex_normals(verts, topo);
    Tensor r = rodrigues(pose.axis_angle);
    Tensor normals_cam = matmul(normals, transpose2d(r));
    Tensor nz = slice_cols(normals_cam, 2, 1);
    Tensor t_vertex = sigmoid(mul_scalar(nz, sharpness));
    return rows_to_grid(t_vertex, topo.vertex_pixels(), topo.uv_height, topo.uv_width);
}

inline Array visibility_mask_uv_plain(const Array& s_uv, const Pose& pose,
                                      const MeshTopology& topo, double sharpness = 10.0)
{
    return visibility_mask_uv(Tensor::from_array({topo.uv_height, topo.uv_width, 3}, s_uv),
                              PoseTensors::constant(pose), topo, sharpness)
        .value();
}

/// 3-D distance between the designated outer-eye-corner vertices.
inline double interocular_distance(const Array& verts, const MeshTopology& topo)
{
    const int a = topo.left_eye_outer, b = topo.right_eye_outer;
    double d2 = 0;
    for (int c = 0; c < 3; ++c)
    {
        const double d = verts[a * 3 + c] - verts[b * 3 + c];
        d2 += d * d;
    }
    return std::sqrt(d2);
}

} // namespace nlmm::geom
