/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/geom/topology.hpp
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

#include "nlmm/core/common.hpp"
#include "nlmm/core/conv.hpp" // PatchBox

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace nlmm::geom {

/**
 * Fixed triangle mesh with a UV parameterization.
 *
 * Conventions used throughout the library:
 *  - UV grids are (V rows, U cols, C) row-major; a vertex sits at continuous
 *    (u, v) = (col, row).
 *  - Model space: x right, y up, z toward the camera. The camera looks along
 *    -z, so larger camera-space z means closer to the camera, and front-facing
 *    surfaces have positive camera-space normal z.
 *  - Triangle winding is counter-clockwise seen from the camera for a frontal
 *    face, giving outward (+z) normals.
 */
struct MeshTopology
{
    int uv_width = 0;  // U
    int uv_height = 0; // V
    int num_vertices = 0;

    std::vector<std::array<int, 3>> triangles;
    std::vector<std::array<double, 2>> uv_coords; // per vertex (u, v)
    std::vector<int> landmarks;                   // sorted unique vertex ids
    int left_eye_outer = -1;                      // vertex id, member of landmarks
    int right_eye_outer = -1;
    std::map<std::string, PatchBox> part_boxes; // left_eye, right_eye, nose, mouth
    Array face_mask;                            // V*U, 1 inside the face region

    // Analytic placement parameters (kept so downstream generators agree).
    double center_u = 0, center_v = 0, radius_u = 0, radius_v = 0;

    std::vector<int> pixel_to_vertex; // V*U, -1 where no vertex

    bool in_mask(int row, int col) const { return face_mask[row * uv_width + col] > 0.5; }

    int vertex_at(int row, int col) const { return pixel_to_vertex[row * uv_width + col]; }

    /// Linear pixel index (row-major) of each vertex.
    std::vector<int> vertex_pixels() const
    {
        std::vector<int> px(num_vertices);
        for (int p = 0; p < uv_height * uv_width; ++p)
            if (pixel_to_vertex[p] >= 0)
                px[pixel_to_vertex[p]] = p;
        return px;
    }

    void validate() const
    {
        ensure(uv_width > 0 && uv_height > 0, "topology: empty UV grid");
        ensure(num_vertices > 0, "topology: no vertices");
        ensure(static_cast<int>(uv_coords.size()) == num_vertices, "topology: uv table size");
        std::vector<char> used(num_vertices, 0);
        for (const auto& t : triangles)
        {
            for (int i : t)
                ensure(i >= 0 && i < num_vertices, "topology: triangle index out of range");
            ensure(t[0] != t[1] && t[1] != t[2] && t[0] != t[2],
                   "topology: degenerate triangle (repeated index)");
            used[t[0]] = used[t[1]] = used[t[2]] = 1;
        }
        for (int i = 0; i < num_vertices; ++i)
            ensure(used[i] == 1, "topology: isolated vertex " + std::to_string(i));
        ensure(!landmarks.empty(), "topology: no landmarks");
        for (std::size_t i = 0; i < landmarks.size(); ++i)
        {
            ensure(landmarks[i] >= 0 && landmarks[i] < num_vertices,
                   "topology: landmark index out of range");
            if (i > 0)
                ensure(landmarks[i] > landmarks[i - 1], "topology: landmarks not sorted-unique");
        }
        ensure(std::binary_search(landmarks.begin(), landmarks.end(), left_eye_outer) &&
                   std::binary_search(landmarks.begin(), landmarks.end(), right_eye_outer),
               "topology: eye-outer vertices must be landmarks");

        // part boxes inside the mask bounding box; eye boxes mirror each other
        int r0 = uv_height, r1 = -1, c0 = uv_width, c1 = -1;
        for (int r = 0; r < uv_height; ++r)
            for (int c = 0; c < uv_width; ++c)
                if (in_mask(r, c))
                {
                    r0 = std::min(r0, r);
                    r1 = std::max(r1, r);
                    c0 = std::min(c0, c);
                    c1 = std::max(c1, c);
                }
        for (const char* name : {"left_eye", "right_eye", "nose", "mouth"})
        {
            auto it = part_boxes.find(name);
            ensure(it != part_boxes.end(), std::string("topology: missing part box ") + name);
            const PatchBox& b = it->second;
            ensure(b.row0 >= r0 && b.col0 >= c0 && b.row0 + b.height - 1 <= r1 &&
                       b.col0 + b.width - 1 <= c1,
                   std::string("topology: part box outside face bounding box: ") + name);
        }
        const PatchBox& le = part_boxes.at("left_eye");
        const PatchBox& re = part_boxes.at("right_eye");
        ensure(le.row0 == re.row0 && le.height == re.height && le.width == re.width &&
                   re.col0 == uv_width - le.col0 - le.width,
               "topology: eye boxes are not mirror images");
    }
};

namespace detail {
inline int round_to(double x, int m)
{
    return std::max(m, static_cast<int>(std::lround(x / m)) * m);
}
} // namespace detail

/**
 * Deterministic face-like topology on a UxV grid: one vertex per UV pixel
 * inside an elliptical mask, two CCW triangles per fully-interior unit quad.
 * U = V = 64 is the shipped desk-scale asset (Q ~= 2100).
 */
inline MeshTopology make_face_topology(int U = 64, int V = 64)
{
    ensure(U >= 8 && V >= 8, "make_face_topology: grid too small");
    MeshTopology topo;
    topo.uv_width = U;
    topo.uv_height = V;
    topo.center_u = (U - 1) / 2.0;
    topo.center_v = (V - 1) / 2.0;
    topo.radius_u = 25.0 * U / 64.0;
    topo.radius_v = 27.0 * V / 64.0;

    topo.face_mask = Array::Zero(U * V);
    topo.pixel_to_vertex.assign(U * V, -1);
    for (int r = 0; r < V; ++r)
        for (int c = 0; c < U; ++c)
        {
            const double du = (c - topo.center_u) / topo.radius_u;
            const double dv = (r - topo.center_v) / topo.radius_v;
            if (du * du + dv * dv <= 1.0)
            {
                topo.face_mask[r * U + c] = 1.0;
                topo.pixel_to_vertex[r * U + c] = topo.num_vertices++;
                topo.uv_coords.push_back({static_cast<double>(c), static_cast<double>(r)});
            }
        }

    // Two CCW triangles per quad whose four corners are all vertices. The
    // diagonal is mirrored across the vertical midline so the triangulation
    // (hence vertex normals) is left-right symmetric, except at the
    // self-mirrored center column when U is even.
    for (int r = 0; r + 1 < V; ++r)
        for (int c = 0; c + 1 < U; ++c)
        {
            const int a = topo.vertex_at(r, c);
            const int b = topo.vertex_at(r, c + 1);
            const int d = topo.vertex_at(r + 1, c);
            const int e = topo.vertex_at(r + 1, c + 1);
            if (a >= 0 && b >= 0 && d >= 0 && e >= 0)
            {
                if (c + 0.5 < (U - 1) / 2.0)
                {
                    topo.triangles.push_back({a, d, b});
                    topo.triangles.push_back({b, d, e});
                }
                else
                {
                    topo.triangles.push_back({a, d, e});
                    topo.triangles.push_back({a, e, b});
                }
            }
        }

    // Drop vertices that ended up in no triangle (lone boundary pixels).
    {
        std::vector<char> used(topo.num_vertices, 0);
        for (const auto& t : topo.triangles)
            used[t[0]] = used[t[1]] = used[t[2]] = 1;
        std::vector<int> remap(topo.num_vertices, -1);
        int q = 0;
        std::vector<std::array<double, 2>> coords;
        for (int i = 0; i < topo.num_vertices; ++i)
            if (used[i])
            {
                remap[i] = q++;
                coords.push_back(topo.uv_coords[i]);
            }
        for (auto& t : topo.triangles)
            t = {remap[t[0]], remap[t[1]], remap[t[2]]};
        for (int p = 0; p < U * V; ++p)
        {
            int& pv = topo.pixel_to_vertex[p];
            if (pv >= 0)
            {
                if (remap[pv] < 0)
                    topo.face_mask[p] = 0.0;
                pv = remap[pv];
            }
        }
        topo.uv_coords = std::move(coords);
        topo.num_vertices = q;
    }

    // landmarks: fractional anchors (du, dv) relative to the ellipse radii
    const std::array<std::array<double, 2>, 12> anchors = {{
        {-0.58, -0.30}, // left eye outer corner
        {-0.22, -0.30}, // left eye inner corner
        {0.22, -0.30},  // right eye inner corner
        {0.58, -0.30},  // right eye outer corner
        {0.0, -0.05},   // nose bridge
        {0.0, 0.22},    // nose tip
        {-0.36, 0.55},  // mouth left corner
        {0.36, 0.55},   // mouth right corner
        {0.0, 0.44},    // upper lip
        {0.0, 0.66},    // lower lip
        {0.0, 0.90},    // chin
        {0.0, -0.62},   // forehead
    }};
    auto anchor_vertex = [&](double du, double dv) {
        const double cu = topo.center_u + du * topo.radius_u;
        const double cv = topo.center_v + dv * topo.radius_v;
        int best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int i = 0; i < topo.num_vertices; ++i)
        {
            const double dx = topo.uv_coords[i][0] - cu;
            const double dy = topo.uv_coords[i][1] - cv;
            const double d2 = dx * dx + dy * dy;
            if (d2 < best_d2)
            {
                best_d2 = d2;
                best = i;
            }
        }
        require_state(best >= 0, "make_face_topology: no vertex for landmark anchor");
        return best;
    };
    std::vector<int> lm;
    for (const auto& a : anchors)
        lm.push_back(anchor_vertex(a[0], a[1]));
    topo.left_eye_outer = lm[0];
    topo.right_eye_outer = lm[3];
    std::sort(lm.begin(), lm.end());
    lm.erase(std::unique(lm.begin(), lm.end()), lm.end());
    topo.landmarks = lm;

    // part boxes, mirrored eyes; dimensions are multiples of 8 at desk scale
    const double s = U / 64.0, sv = V / 64.0;
    const int grain = (U >= 32 && V >= 32) ? 8 : 2;
    const int eye_w = detail::round_to(16 * s, grain);
    const int eye_h = detail::round_to(16 * sv, grain);
    const int eye_c0 = static_cast<int>(std::lround(12 * s));
    const int eye_r0 = static_cast<int>(std::lround(16 * sv));
    topo.part_boxes["left_eye"] = PatchBox{eye_r0, eye_c0, eye_h, eye_w};
    topo.part_boxes["right_eye"] = PatchBox{eye_r0, U - eye_c0 - eye_w, eye_h, eye_w};
    const int nose_w = detail::round_to(16 * s, grain), nose_h = detail::round_to(16 * sv, grain);
    topo.part_boxes["nose"] =
        PatchBox{static_cast<int>(std::lround(24 * sv)), (U - nose_w) / 2, nose_h, nose_w};
    const int mouth_w = detail::round_to(24 * s, grain), mouth_h = detail::round_to(16 * sv, grain);
    topo.part_boxes["mouth"] =
        PatchBox{static_cast<int>(std::lround(40 * sv)), (U - mouth_w) / 2, mouth_h, mouth_w};

    topo.validate();
    return topo;
}

/// Model-space position of UV pixel (u=col, v=row) on the mean face surface.
/// Defined on the whole grid (smooth continuation outside the mask).
inline std::array<double, 3> mean_surface_point(const MeshTopology& topo, double u, double v)
{
    const double x = (u - topo.center_u) / topo.radius_u;
    const double y = (topo.center_v - v) / topo.radius_v;
    auto g = [](double dx, double dy) { return std::exp(-dx * dx - dy * dy); };
    double z = 0.50 * std::sqrt(std::max(0.0, 1.05 - 0.78 * x * x - 0.62 * y * y));
    z += 0.16 * g(x / 0.11, (y + 0.10) / 0.30);  // nose ridge
    z += 0.06 * g(x / 0.16, (y + 0.34) / 0.10);  // nose tip
    z += 0.04 * g(x / 0.55, (y - 0.30) / 0.10);  // brow
    z -= 0.05 * (g((x - 0.42) / 0.18, (y - 0.28) / 0.12) +
                 g((x + 0.42) / 0.18, (y - 0.28) / 0.12)); // eye sockets
    z += 0.05 * g(x / 0.32, (y + 0.56) / 0.09);  // lips
    return {x, y, z};
}

/// Mean face shape as a (V x U x 3) position grid.
inline Array mean_shape_grid(const MeshTopology& topo)
{
    const int U = topo.uv_width, V = topo.uv_height;
    Array g(U * V * 3);
    for (int r = 0; r < V; ++r)
        for (int c = 0; c < U; ++c)
        {
            const auto p = mean_surface_point(topo, c, r);
            for (int ch = 0; ch < 3; ++ch)
                g[(r * U + c) * 3 + ch] = p[ch];
        }
    return g;
}

// ---------------------------------------------------------------------------
// Text asset. Self-describing, documented here:
//   NLMM_TOPOLOGY 1
//   uv <U> <V>
//   ellipse <cu> <cv> <ru> <rv>
//   vertices <Q>           followed by Q lines "u v"
//   triangles <F>          followed by F lines "i j k"
//   landmarks <n>          followed by one line of n ids
//   eye_outer <left> <right>
//   part_box <name> <row0> <col0> <height> <width>   (4 lines)
//   face_mask              followed by V lines of U '0'/'1' chars
// ---------------------------------------------------------------------------

inline void save_topology(const MeshTopology& topo, const std::string& path)
{
    std::ofstream out(path);
    require_state(out.good(), "save_topology: cannot open " + path);
    out << "NLMM_TOPOLOGY 1\n";
    out << "uv " << topo.uv_width << " " << topo.uv_height << "\n";
    out.precision(17);
    out << "ellipse " << topo.center_u << " " << topo.center_v << " " << topo.radius_u << " "
        << topo.radius_v << "\n";
    out << "vertices " << topo.num_vertices << "\n";
    for (const auto& uv : topo.uv_coords)
        out << uv[0] << " " << uv[1] << "\n";
    out << "triangles " << topo.triangles.size() << "\n";
    for (const auto& t : topo.triangles)
        out << t[0] << " " << t[1] << " " << t[2] << "\n";
    out << "landmarks " << topo.landmarks.size() << "\n";
    for (std::size_t i = 0; i < topo.landmarks.size(); ++i)
        out << topo.landmarks[i] << (i + 1 == topo.landmarks.size() ? "\n" : " ");
    out << "eye_outer " << topo.left_eye_outer << " " << topo.right_eye_outer << "\n";
    for (const auto& [name, b] : topo.part_boxes)
        out << "part_box " << name << " " << b.row0 << " " << b.col0 << " " << b.height << " "
            << b.width << "\n";
    out << "face_mask\n";
    for (int r = 0; r < topo.uv_height; ++r)
    {
        for (int c = 0; c < topo.uv_width; ++c)
            out << (topo.in_mask(r, c) ? '1' : '0');
        out << "\n";
    }
    require_state(out.good(), "save_topology: write failed " + path);
}

inline MeshTopology load_topology(const std::string& path)
{
    std::ifstream in(path);
    require_state(in.good(), "load_topology: cannot open " + path);
    std::string word;
    int version = 0;
    in >> word >> version;
    require_state(word == "NLMM_TOPOLOGY" && version == 1, "load_topology: bad header");
    MeshTopology topo;
    while (in >> word)
    {
        if (word == "uv")
            in >> topo.uv_width >> topo.uv_height;
        else if (word == "ellipse")
            in >> topo.center_u >> topo.center_v >> topo.radius_u >> topo.radius_v;
        else if (word == "vertices")
        {
            in >> topo.num_vertices;
            topo.uv_coords.resize(topo.num_vertices);
            for (auto& uv : topo.uv_coords)
                in >> uv[0] >> uv[1];
        }
        else if (word == "triangles")
        {
            std::size_t f = 0;
            in >> f;
            topo.triangles.resize(f);
            for (auto& t : topo.triangles)
                in >> t[0] >> t[1] >> t[2];
        }
        else if (word == "landmarks")
        {
            std::size_t n = 0;
            in >> n;
            topo.landmarks.resize(n);
            for (auto& l : topo.landmarks)
                in >> l;
        }
        else if (word == "eye_outer")
            in >> topo.left_eye_outer >> topo.right_eye_outer;
        else if (word == "part_box")
        {
            std::string name;
            PatchBox b;
            in >> name >> b.row0 >> b.col0 >> b.height >> b.width;
            topo.part_boxes[name] = b;
        }
        else if (word == "face_mask")
        {
            topo.face_mask = Array::Zero(topo.uv_width * topo.uv_height);
            topo.pixel_to_vertex.assign(topo.uv_width * topo.uv_height, -1);
            std::string row;
            for (int r = 0; r < topo.uv_height; ++r)
            {
                in >> row;
                require_state(static_cast<int>(row.size()) == topo.uv_width,
                              "load_topology: bad mask row");
                for (int c = 0; c < topo.uv_width; ++c)
                    topo.face_mask[r * topo.uv_width + c] = row[c] == '1' ? 1.0 : 0.0;
            }
        }
        else
            require_state(false, "load_topology: unknown section " + word);
    }
    // rebuild pixel->vertex from uv coords
    for (int i = 0; i < topo.num_vertices; ++i)
    {
        const int c = static_cast<int>(std::lround(topo.uv_coords[i][0]));
        const int r = static_cast<int>(std::lround(topo.uv_coords[i][1]));
        if (c >= 0 && c < topo.uv_width && r >= 0 && r < topo.uv_height)
            topo.pixel_to_vertex[r * topo.uv_width + c] = i;
    }
    topo.validate();
    return topo;
}

} // namespace nlmm::geom
